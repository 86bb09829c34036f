"""Brute-force verification of support uniqueness for row-sparse MMV systems.

For a generic m x n matrix A and an observation Y = A X with X having at
most r nonzero rows, the minimal consistent support is unique whenever

    r <= ceil((m + l + r_known) / 2) - 1,

where l = rank(Y) and r_known of the support indices are known a priori.
``verify_uniqueness_bound`` tests this empirically: it plants random
supports of exactly the bound size and exhaustively enumerates every
candidate support up to that size, declaring success when the planted
support is the only consistent one.
"""

import itertools
import json
import math
import time
from dataclasses import dataclass, asdict

import numpy as np

RESIDUAL_RTOL = 1e-9       # relative residual for "consistent" supports
ROW_TRIM_TOL = 1e-10       # rows below this norm are trimmed from a support
RANK_TOL = 1e-8            # smallest singular value accepted as full rank
ENUMERATION_GUARD = 1_000_000


def admissible_sparsity(m_dim: int, l_dim: int, r_known: int = 0) -> int:
    """Largest row sparsity with a guaranteed unique support."""
    return (m_dim + l_dim + r_known + 1) // 2 - 1


def support_count(n_dim: int, max_sparsity: int, n_known: int = 0) -> int:
    """Number of candidate supports the brute-force search must visit."""
    free = n_dim - n_known
    return sum(math.comb(free, s) for s in range(0, max_sparsity - n_known + 1))


@dataclass(frozen=True)
class UniquenessTrialConfig:
    m_dim: int = 6
    n_dim: int = 12
    l_dim: int = 2
    r_known: int = 0
    trials: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.l_dim <= self.m_dim:
            raise ValueError(f"need 1 <= l_dim <= m_dim, got l={self.l_dim} m={self.m_dim}")
        if not self.m_dim < self.n_dim:
            raise ValueError(f"need m_dim < n_dim, got m={self.m_dim} n={self.n_dim}")
        r = admissible_sparsity(self.m_dim, self.l_dim, self.r_known)
        if not 0 <= self.r_known <= r:
            raise ValueError(f"r_known must lie in [0, {r}], got {self.r_known}")
        if r < self.l_dim:
            raise ValueError(
                f"bound sparsity {r} is below l_dim={self.l_dim}; rank-l observations "
                "cannot be planted"
            )
        if r > self.n_dim:
            raise ValueError(f"bound sparsity {r} exceeds n_dim={self.n_dim}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        count = support_count(self.n_dim, r, self.r_known)
        if count > ENUMERATION_GUARD:
            raise ValueError(
                f"enumeration would visit {count} supports, above the "
                f"{ENUMERATION_GUARD} guard"
            )

    @property
    def bound(self) -> int:
        return admissible_sparsity(self.m_dim, self.l_dim, self.r_known)


@dataclass
class UniquenessReport:
    m_dim: int
    n_dim: int
    l_dim: int
    r_known: int
    bound: int
    trials: int
    unique_trials: int
    unique_fraction: float
    redraws: int
    supports_enumerated: int
    wall_time_s: float
    seed: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def brute_force_mmv(y: np.ndarray, a, max_sparsity: int, known_support=()) -> list:
    """All consistent canonical supports of size <= max_sparsity.

    A support S is consistent when the least-squares fit of y on the
    columns of S leaves a relative residual of at most 1e-9. Each hit is
    canonicalized by dropping rows of the fitted coefficients with norm
    below 1e-10, supersets of a solution therefore collapse onto it. The
    returned list is sorted and duplicate-free; indices listed in
    ``known_support`` are forced into every candidate. A zero observation
    yields the single empty support.
    """
    a = a.columns if hasattr(a, "columns") else np.asarray(a)
    y = np.atleast_2d(np.asarray(y, dtype=complex))
    m, n = a.shape
    if y.shape[0] != m:
        raise ValueError(f"y must have {m} rows, got {y.shape[0]}")
    known = tuple(sorted(int(k) for k in known_support))
    if any(not 0 <= k < n for k in known) or len(set(known)) != len(known):
        raise ValueError("known_support must be distinct column indices")
    if len(known) > max_sparsity:
        raise ValueError("known_support is larger than max_sparsity")
    count = support_count(n, max_sparsity, len(known))
    if count > ENUMERATION_GUARD:
        raise ValueError(
            f"enumeration would visit {count} supports, above the "
            f"{ENUMERATION_GUARD} guard"
        )

    ynorm = float(np.linalg.norm(y))
    if ynorm == 0.0:
        return [()]

    free = [j for j in range(n) if j not in known]
    found = set()
    for extra in range(0, max_sparsity - len(known) + 1):
        for comb in itertools.combinations(free, extra):
            support = tuple(sorted(known + comb))
            cols = a[:, support]
            w, *_ = np.linalg.lstsq(cols, y, rcond=None)
            resid = float(np.linalg.norm(cols @ w - y))
            if resid <= RESIDUAL_RTOL * ynorm:
                keep = np.linalg.norm(w, axis=1) > ROW_TRIM_TOL
                found.add(tuple(np.asarray(support)[keep].tolist()))
    return sorted(found)


def verify_uniqueness_bound(cfg: UniquenessTrialConfig) -> UniquenessReport:
    """Plant supports of exactly the bound size and count unique recoveries.

    Per trial: draw a complex Gaussian dictionary, a uniform support of
    size r = bound, coefficients with full row rank, and redraw whenever
    the planted observation is numerically rank deficient (smallest
    singular value below 1e-8). The first r_known planted indices are
    handed to the enumeration as side information.
    """
    t0 = time.perf_counter()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    r = cfg.bound
    unique = 0
    redraws = 0
    for _ in range(cfg.trials):
        for attempt in range(100):
            a = (
                rng.standard_normal((cfg.m_dim, cfg.n_dim))
                + 1j * rng.standard_normal((cfg.m_dim, cfg.n_dim))
            ) / math.sqrt(2.0)
            support = np.sort(rng.choice(cfg.n_dim, size=r, replace=False))
            w = (
                rng.standard_normal((r, cfg.l_dim))
                + 1j * rng.standard_normal((r, cfg.l_dim))
            ) / math.sqrt(2.0)
            y = a[:, support] @ w
            s = np.linalg.svd(y, compute_uv=False)
            if s.size >= cfg.l_dim and s[cfg.l_dim - 1] > RANK_TOL:
                break
            redraws += 1
        else:
            raise RuntimeError("could not draw a full-rank observation in 100 attempts")
        known = tuple(int(j) for j in support[: cfg.r_known])
        sols = brute_force_mmv(y, a, r, known)
        if len(sols) == 1 and sols[0] == tuple(int(j) for j in support):
            unique += 1
    return UniquenessReport(
        m_dim=cfg.m_dim,
        n_dim=cfg.n_dim,
        l_dim=cfg.l_dim,
        r_known=cfg.r_known,
        bound=r,
        trials=cfg.trials,
        unique_trials=unique,
        unique_fraction=unique / cfg.trials,
        redraws=redraws,
        supports_enumerated=support_count(cfg.n_dim, r, cfg.r_known),
        wall_time_s=time.perf_counter() - t0,
        seed=cfg.seed,
    )
