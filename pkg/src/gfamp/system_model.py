"""Signal model for contention-based asynchronous grant-free access.

A pool of M unit-norm spreading sequences of length L_s is shared by N
potential users. In a frame, N_a users wake up, each picks one sequence
uniformly at random (collisions allowed), transmits it in every slot with
an integer symbol delay t in 0..T_max, and modulates L_p pilot slots plus
a random-length prefix of the L_d data slots. Delay uncertainty is folded
into an expanded dictionary whose columns are all shifted copies of the
pool sequences, so the receiver sees a row-sparse linear model

    Y = A X + N,   A: (L_s+T_g) x M(T_g+1),   X: M(T_g+1) x R*L.

Columns of X and Y are laid out slot-major with the R antennas contiguous
per slot: column l*R + r is slot l, antenna r; slots 0..L_p-1 carry pilots.
Row m*(T_g+1) + t of X belongs to sequence m at delay t (all 0-based).
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .modulation import qam_constellation


@dataclass(frozen=True)
class SystemConfig:
    """Static scenario parameters; validated on construction."""

    n_users: int = 1000
    n_sequences: int = 100
    seq_len: int = 70
    guard: int = 3
    max_delay: int = 3
    n_pilot: int = 1
    max_data: int = 3
    n_antennas: int = 1
    n_active: int = 24
    snr_db: float = 30.0
    path_loss_default: float = 1.0
    modulation_order: int = 16

    def __post_init__(self):
        if self.n_users < 1:
            raise ValueError(f"n_users must be >= 1, got {self.n_users}")
        if self.n_sequences < 1:
            raise ValueError(f"n_sequences must be >= 1, got {self.n_sequences}")
        if self.seq_len < 1:
            raise ValueError(f"seq_len must be >= 1, got {self.seq_len}")
        if self.guard < 0:
            raise ValueError(f"guard must be >= 0, got {self.guard}")
        if not 0 <= self.max_delay <= self.guard:
            raise ValueError(
                f"max_delay must lie in [0, guard={self.guard}], got {self.max_delay}"
            )
        if self.n_pilot < 1:
            raise ValueError(f"n_pilot must be >= 1, got {self.n_pilot}")
        if self.max_data < 1:
            raise ValueError(f"max_data must be >= 1, got {self.max_data}")
        if self.n_antennas < 1:
            raise ValueError(f"n_antennas must be >= 1, got {self.n_antennas}")
        if not 0 <= self.n_active <= self.n_users:
            raise ValueError(
                f"n_active must lie in [0, n_users={self.n_users}], got {self.n_active}"
            )
        if math.isnan(self.snr_db):
            raise ValueError("snr_db must not be NaN")
        if not self.path_loss_default > 0:
            raise ValueError(f"path_loss_default must be > 0, got {self.path_loss_default}")
        side = math.isqrt(self.modulation_order)
        if side * side != self.modulation_order or self.modulation_order < 4:
            raise ValueError(
                f"modulation_order must be a perfect square >= 4, got {self.modulation_order}"
            )

    @property
    def n_rows(self) -> int:
        """Measurement dimension of the expanded model, L_s + T_g."""
        return self.seq_len + self.guard

    @property
    def n_expanded(self) -> int:
        """Number of expanded-dictionary columns, M * (T_g + 1)."""
        return self.n_sequences * (self.guard + 1)

    @property
    def n_slots(self) -> int:
        return self.n_pilot + self.max_data

    @property
    def n_cols(self) -> int:
        """Total column count of X and Y, R * (L_p + L_d)."""
        return self.n_antennas * self.n_slots


def row_index(seq: int, delay: int, guard: int) -> int:
    """Expanded row index of (sequence, delay), 0-based."""
    return seq * (guard + 1) + delay


def row_to_pair(row: int, guard: int) -> tuple[int, int]:
    """Inverse of row_index."""
    return divmod(row, guard + 1)


@dataclass(frozen=True)
class SpreadingPool:
    """M unit-norm complex spreading sequences, one per column."""

    columns: np.ndarray  # (seq_len, n_sequences)
    seed: int


@dataclass(frozen=True)
class ExpandedDictionary:
    """All delay-shifted copies of the pool columns, zero-padded to L_s + T_g."""

    columns: np.ndarray  # (seq_len + guard, n_sequences * (guard + 1))
    guard: int


@dataclass(frozen=True)
class TransmissionRealization:
    """One frame of user activity; arrays are aligned with ``users``.

    ``data_indices[k, j]`` is the constellation index sent by active user k
    in data slot j, or -1 past that user's frame length. The first data
    symbol embeds the user identity as ``users[k] % modulation_order``.
    """

    users: np.ndarray          # (n_active,) sorted user ids
    seq: np.ndarray            # (n_active,) chosen sequence per user
    delay: np.ndarray          # (n_active,) symbol delay per user
    channel: np.ndarray        # (n_active, n_antennas) complex gains
    data_len: np.ndarray       # (n_active,) frame data length in 1..max_data
    data_indices: np.ndarray   # (n_active, max_data) int, -1 beyond data_len
    data_symbols: np.ndarray   # (n_active, max_data) complex, 0 beyond data_len
    pilot_symbols: np.ndarray  # (n_pilot,)
    x_true: np.ndarray         # (n_expanded, n_cols)
    seed: int
    config: SystemConfig = field(repr=False)


@dataclass(frozen=True)
class Observation:
    y: np.ndarray
    noise_var: float
    seed_record: dict
    zero_signal: bool = False


def build_spreading_pool(cfg: SystemConfig, seed: int) -> SpreadingPool:
    """Draw the sequence pool: i.i.d. CN(0,1) entries, columns scaled to unit norm."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    g = rng.standard_normal((cfg.seq_len, cfg.n_sequences))
    h = rng.standard_normal((cfg.seq_len, cfg.n_sequences))
    cols = (g + 1j * h) / math.sqrt(2.0)
    cols /= np.linalg.norm(cols, axis=0, keepdims=True)
    return SpreadingPool(columns=cols, seed=seed)


def expand_dictionary(pool: SpreadingPool, guard: int) -> ExpandedDictionary:
    """Stack every delay shift t = 0..guard of every pool column.

    Column ``row_index(m, t, guard)`` is pool column m prefixed by t zeros
    and suffixed by guard - t zeros, so all expanded columns keep unit norm.
    """
    if guard < 0:
        raise ValueError(f"guard must be >= 0, got {guard}")
    ls, m = pool.columns.shape
    cols = np.zeros((ls + guard, m * (guard + 1)), dtype=complex)
    for t in range(guard + 1):
        cols[t : t + ls, t :: guard + 1] = pool.columns
    return ExpandedDictionary(columns=cols, guard=guard)


def draw_realization(
    cfg: SystemConfig,
    pool: SpreadingPool,
    seed: int,
    path_loss: np.ndarray | None = None,
) -> TransmissionRealization:
    """Draw one frame of activity and assemble the ground-truth matrix X.

    Draw order is fixed (users, sequences, delays, channels, lengths, data)
    so identical (cfg, seed) inputs reproduce bit-identical realizations.
    ``path_loss`` is an optional per-user amplitude coefficient, length
    n_users; the default is ``cfg.path_loss_default`` for everyone.
    """
    if pool.columns.shape != (cfg.seq_len, cfg.n_sequences):
        raise ValueError("pool shape does not match config")
    if path_loss is None:
        gamma = np.full(cfg.n_users, cfg.path_loss_default)
    else:
        gamma = np.asarray(path_loss, dtype=float)
        if gamma.shape != (cfg.n_users,) or not np.all(gamma > 0):
            raise ValueError("path_loss must be n_users positive amplitudes")

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    na, q = cfg.n_active, cfg.modulation_order
    users = np.sort(rng.choice(cfg.n_users, size=na, replace=False))
    seq = rng.integers(0, cfg.n_sequences, size=na)
    delay = rng.integers(0, cfg.max_delay + 1, size=na)
    g = (
        rng.standard_normal((na, cfg.n_antennas))
        + 1j * rng.standard_normal((na, cfg.n_antennas))
    ) / math.sqrt(2.0)
    channel = gamma[users, None] * g
    data_len = rng.integers(1, cfg.max_data + 1, size=na)
    data_indices = rng.integers(0, q, size=(na, cfg.max_data))
    if na:
        data_indices[:, 0] = users % q  # identity rides in the first data symbol
    mask = np.arange(cfg.max_data)[None, :] < data_len[:, None]
    data_indices = np.where(mask, data_indices, -1)

    points = qam_constellation(q)
    data_symbols = np.where(mask, points[np.where(mask, data_indices, 0)], 0.0)
    pilot_symbols = np.ones(cfg.n_pilot, dtype=complex)

    x = np.zeros((cfg.n_expanded, cfg.n_cols), dtype=complex)
    r = cfg.n_antennas
    for k in range(na):
        j = row_index(int(seq[k]), int(delay[k]), cfg.guard)
        slot_syms = np.concatenate([pilot_symbols, data_symbols[k]])
        # colliding users superimpose on the shared row
        x[j] += np.kron(slot_syms, channel[k]) if r > 1 else slot_syms * channel[k, 0]

    return TransmissionRealization(
        users=users,
        seq=seq,
        delay=delay,
        channel=channel,
        data_len=data_len,
        data_indices=data_indices,
        data_symbols=data_symbols,
        pilot_symbols=pilot_symbols,
        x_true=x,
        seed=seed,
        config=cfg,
    )


def synthesize_observation(
    real: TransmissionRealization,
    dic: ExpandedDictionary,
    snr_db: float,
    seed: int,
) -> Observation:
    """Form Y = A X + N with noise calibrated to the empirical signal power.

    The per-sample noise variance is mean(|A X|^2) / 10^(snr_db/10), so the
    realized SNR matches the request for every frame. snr_db = +inf gives a
    noiseless observation. A frame with zero signal energy (possible when
    n_active = 0) gets zero noise and a warning, flagged on the result.
    """
    noiseless = dic.columns @ real.x_true
    p_signal = float(np.mean(np.abs(noiseless) ** 2)) if noiseless.size else 0.0
    zero_signal = p_signal == 0.0
    if math.isinf(snr_db) and snr_db > 0:
        noise_var = 0.0
    elif zero_signal:
        warnings.warn("zero-energy frame: noise variance forced to 0", RuntimeWarning)
        noise_var = 0.0
    else:
        noise_var = p_signal / (10.0 ** (snr_db / 10.0))

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if noise_var > 0:
        n = (
            rng.standard_normal(noiseless.shape)
            + 1j * rng.standard_normal(noiseless.shape)
        ) * math.sqrt(noise_var / 2.0)
        y = noiseless + n
    else:
        y = noiseless
    return Observation(
        y=y,
        noise_var=noise_var,
        seed_record={"realization": real.seed, "noise": seed},
        zero_signal=zero_signal,
    )


def ground_truth_support(real: TransmissionRealization) -> tuple[set, set]:
    """Active expanded rows and their (sequence, delay) pairs.

    Returns (rows, pairs): rows is a set of expanded row indices, pairs the
    same support as (m, t) tuples. Collisions collapse to a single entry.
    """
    guard = real.config.guard
    rows = {row_index(int(m), int(t), guard) for m, t in zip(real.seq, real.delay)}
    pairs = {row_to_pair(j, guard) for j in rows}
    return rows, pairs
