"""Row-sparse recovery of the expanded coefficient matrix.

Two iterative solvers operate on Y = A X + N with row-sparse X:

* ``amp_mmv`` runs approximate message passing jointly over all columns,
  with an Onsager correction and a row soft threshold whose level tracks
  the residual norm.
* ``amp_bp`` exploits frame-length diversity: users occupy a prefix of
  the data slots, so later column blocks are sparser. It sweeps column
  windows from the tail block towards the full matrix, extracting the
  support of each solved window and feeding it to the next wider window
  as a prior (least-squares re-initialisation plus rows exempted from
  thresholding).

Stage iteration counts, residual traces, extracted supports and the
thresholds used are all returned for diagnostics.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .system_model import ExpandedDictionary


@dataclass
class AmpConfig:
    """Solver knobs shared by the plain and backward-sweep variants.

    alpha scales the adaptive threshold level; it may be a scalar, a
    per-iteration sequence of length n_iters, or an array of shape
    (n_stages, n_iters) with rows in stage execution order (tail block
    first). delta is the support-extraction threshold between stages;
    None selects a noise-adaptive rule from the residual-corrected
    estimate of the finished stage. stop_tol is the relative change of
    ||X||_F below which a stage stops early (0 disables early stopping).
    l0_mode picks the Onsager ratio numerator: nonzero entries of the
    running estimate, or nonzero rows.
    """

    n_iters: int = 50
    alpha: object = 1.1
    delta: float | None = None
    stop_tol: float = 1e-8
    l0_mode: str = "entries"
    first_stage_onsager: bool = True

    def __post_init__(self):
        if self.n_iters < 1:
            raise ValueError(f"n_iters must be >= 1, got {self.n_iters}")
        if self.delta is not None and not self.delta >= 0:
            raise ValueError(f"delta must be >= 0 or None, got {self.delta}")
        if not self.stop_tol >= 0:
            raise ValueError(f"stop_tol must be >= 0, got {self.stop_tol}")
        if self.l0_mode not in ("entries", "rows"):
            raise ValueError(f"l0_mode must be 'entries' or 'rows', got {self.l0_mode!r}")
        a = np.asarray(self.alpha, dtype=float)
        if not np.all(np.isfinite(a)) or not np.all(a > 0):
            raise ValueError("alpha values must be finite and > 0")


@dataclass
class RecoveryResult:
    x_hat: np.ndarray
    residuals: tuple = ()        # per stage: 1-D array of residual norms per iteration
    stage_iters: tuple = ()      # iterations actually run per stage
    support_history: tuple = ()  # supports extracted between stages, execution order
    deltas: tuple = ()           # thresholds used for those extractions
    diagnostics: dict = field(default_factory=dict)


def alpha_schedule(alpha, n_stages: int, n_iters: int) -> np.ndarray:
    """Broadcast an alpha spec to shape (n_stages, n_iters)."""
    a = np.asarray(alpha, dtype=float)
    if a.ndim == 0:
        out = np.full((n_stages, n_iters), float(a))
    elif a.ndim == 1:
        if a.shape[0] != n_iters:
            raise ValueError(
                f"per-iteration alpha must have length n_iters={n_iters}, got {a.shape[0]}"
            )
        out = np.tile(a, (n_stages, 1))
    elif a.ndim == 2:
        if a.shape != (n_stages, n_iters):
            raise ValueError(
                f"alpha array must have shape ({n_stages}, {n_iters}), got {a.shape}"
            )
        out = a.copy()
    else:
        raise ValueError("alpha must be scalar, 1-D, or 2-D")
    if not np.all(np.isfinite(out)) or not np.all(out > 0):
        raise ValueError("alpha values must be finite and > 0")
    return out


def row_soft_threshold(x: np.ndarray, lam: float) -> np.ndarray:
    """Shrink each row towards zero: row * max(1 - lam/||row||, 0).

    Rows with norm <= lam (including all-zero rows) come back exactly zero.
    """
    if lam < 0:
        raise ValueError(f"threshold must be >= 0, got {lam}")
    norms = np.linalg.norm(x, axis=1)
    keep = norms > lam
    scale = np.zeros_like(norms)
    scale[keep] = 1.0 - lam / norms[keep]
    return x * scale[:, None]


def prior_aided_threshold(x: np.ndarray, lam: float, keep_rows: np.ndarray) -> np.ndarray:
    """Row soft threshold that passes rows flagged in ``keep_rows`` through unchanged."""
    keep_rows = np.asarray(keep_rows, dtype=bool)
    if keep_rows.shape != (x.shape[0],):
        raise ValueError("keep_rows must be a boolean mask over rows")
    out = row_soft_threshold(x, lam)
    out[keep_rows] = x[keep_rows]
    return out


def extract_support(block: np.ndarray, delta: float) -> np.ndarray:
    """Indices of rows whose 2-norm over the block strictly exceeds delta."""
    if not delta >= 0:
        raise ValueError(f"delta must be >= 0, got {delta}")
    return np.flatnonzero(np.linalg.norm(block, axis=1) > delta)


def ls_reinitialize(a: np.ndarray, support: np.ndarray, y_block: np.ndarray) -> np.ndarray:
    """Least-squares fit of ``y_block`` onto the columns in ``support``.

    Returns a full-height estimate that is zero outside the support. The
    support must not exceed the measurement dimension, otherwise the fit
    is underdetermined and the caller's support estimate is unusable.
    """
    support = np.asarray(support, dtype=int)
    m = a.shape[0]
    if support.size > m:
        raise ValueError(
            f"support size {support.size} exceeds measurement dimension {m}"
        )
    x0 = np.zeros((a.shape[1], y_block.shape[1]), dtype=complex)
    if support.size:
        w, *_ = np.linalg.lstsq(a[:, support], y_block, rcond=None)
        x0[support] = w
    return x0


def _iterate_block(y, a, alphas, n_iters, stop_tol, l0_mode, use_onsager, x0=None, keep_rows=None, tag=""):
    """Shared AMP loop over one column block.

    y: (m, w) block of observations; a: (m, n) dictionary; alphas: length
    n_iters threshold multipliers. Returns (x, v, residual_norms, iters).
    """
    m, w = y.shape
    n = a.shape[1]
    denom = m * w
    x = np.zeros((n, w), dtype=complex) if x0 is None else np.array(x0, dtype=complex)
    v = np.zeros_like(y)
    ah = a.conj().T
    res = []
    iters = 0
    for t in range(n_iters):
        if use_onsager:
            if l0_mode == "rows":
                b = np.count_nonzero(np.any(x != 0, axis=1)) / m
            else:
                b = np.count_nonzero(x) / denom
        else:
            b = 0.0
        v = y - a @ x + b * v
        rnorm = float(np.linalg.norm(v))
        res.append(rnorm)
        if not math.isfinite(rnorm):
            raise FloatingPointError(
                f"recovery diverged{tag} at iteration {t}: non-finite residual"
            )
        lam = alphas[t] * rnorm / math.sqrt(denom)
        r = x + ah @ v
        if keep_rows is None:
            x_new = row_soft_threshold(r, lam)
        else:
            x_new = prior_aided_threshold(r, lam, keep_rows)
        if not np.all(np.isfinite(x_new)):
            raise FloatingPointError(
                f"recovery diverged{tag} at iteration {t}: non-finite estimate "
                f"(residual norm {rnorm:.3e})"
            )
        prev_norm = float(np.linalg.norm(x))
        new_norm = float(np.linalg.norm(x_new))
        x = x_new
        iters = t + 1
        if abs(new_norm - prev_norm) < stop_tol * max(new_norm, prev_norm, 1e-300):
            break
    return x, v, np.asarray(res), iters


def _dict_columns(dic) -> np.ndarray:
    return dic.columns if isinstance(dic, ExpandedDictionary) else np.asarray(dic)


def amp_mmv(y: np.ndarray, dic, cfg: AmpConfig) -> RecoveryResult:
    """Joint AMP over all columns of y. Always applies the Onsager term."""
    a = _dict_columns(dic)
    if y.ndim != 2 or y.shape[0] != a.shape[0]:
        raise ValueError(f"y must be 2-D with {a.shape[0]} rows, got {y.shape}")
    alphas = alpha_schedule(cfg.alpha, 1, cfg.n_iters)[0]
    x, _, res, iters = _iterate_block(
        y, a, alphas, cfg.n_iters, cfg.stop_tol, cfg.l0_mode, use_onsager=True
    )
    return RecoveryResult(x_hat=x, residuals=(res,), stage_iters=(iters,))


def auto_delta(x_block: np.ndarray, v_block: np.ndarray, a: np.ndarray) -> float:
    """Noise-adaptive support threshold from a finished stage.

    Uses the residual-corrected estimate X + A^H V of the stage: its row
    norms concentrate at the effective noise level for inactive rows, so
    delta = 3 * median(row norms) / sqrt(block width) sits well above the
    noise floor while staying below active-row energy.
    """
    rc = x_block + a.conj().T @ v_block
    med = float(np.median(np.linalg.norm(rc, axis=1)))
    return 3.0 * med / math.sqrt(x_block.shape[1])


def amp_bp(y: np.ndarray, dic, cfg: AmpConfig, n_antennas: int = 1) -> RecoveryResult:
    """Backward sweep over nested column windows, tail block first.

    With R antennas and L slots, y has R*L columns grouped slot-major.
    Window i (i = L..1) covers the last R*(L - i + 1) columns. The tail
    window runs plain AMP from zero; each earlier window takes the rows
    that survived the previous window as a support prior: those rows are
    least-squares re-initialised and exempted from thresholding. The
    window of stage 1 spans everything, so its output is the estimate.

    With a single slot this reduces exactly to ``amp_mmv``.
    """
    a = _dict_columns(dic)
    if y.ndim != 2 or y.shape[0] != a.shape[0]:
        raise ValueError(f"y must be 2-D with {a.shape[0]} rows, got {y.shape}")
    r, total = n_antennas, y.shape[1]
    if r < 1 or total % r:
        raise ValueError(f"column count {total} is not a multiple of n_antennas {r}")
    n_slots = total // r
    alphas = alpha_schedule(cfg.alpha, n_slots, cfg.n_iters)

    residuals, iters, supports, deltas = [], [], [], []
    x_blk = v_blk = None
    for k, i in enumerate(range(n_slots, 0, -1)):
        lo = r * (i - 1)
        y_blk = y[:, lo:]
        if i == n_slots:
            x_blk, v_blk, res, it = _iterate_block(
                y_blk, a, alphas[k], cfg.n_iters, cfg.stop_tol, cfg.l0_mode,
                use_onsager=cfg.first_stage_onsager, tag=f" in window {i}",
            )
        else:
            delta = cfg.delta if cfg.delta is not None else auto_delta(x_blk, v_blk, a)
            support = extract_support(x_blk, delta)
            supports.append(support)
            deltas.append(float(delta))
            x0 = ls_reinitialize(a, support, y_blk)
            keep = np.zeros(a.shape[1], dtype=bool)
            keep[support] = True
            x_blk, v_blk, res, it = _iterate_block(
                y_blk, a, alphas[k], cfg.n_iters, cfg.stop_tol, cfg.l0_mode,
                use_onsager=True, x0=x0, keep_rows=keep, tag=f" in window {i}",
            )
        residuals.append(res)
        iters.append(it)
    # the window of stage 1 spans every column, so its output is the estimate
    return RecoveryResult(
        x_hat=x_blk,
        residuals=tuple(residuals),
        stage_iters=tuple(iters),
        support_history=tuple(supports),
        deltas=tuple(deltas),
    )
