"""Solver tests.

The thresholding operator gets exhaustive property tests; the AMP
solvers are checked against independent oracles: an exhaustive
least-squares search for 1-sparse problems, and exact recovery on
noiseless instances whose uniqueness the brute-force checker confirms.
"""

import numpy as np
import pytest

from gfamp.sparse_recovery import (
    AmpConfig,
    alpha_schedule,
    amp_bp,
    amp_mmv,
    auto_delta,
    extract_support,
    ls_reinitialize,
    prior_aided_threshold,
    row_soft_threshold,
)
from gfamp.system_model import (
    SystemConfig,
    build_spreading_pool,
    draw_realization,
    expand_dictionary,
    ground_truth_support,
    synthesize_observation,
)


def random_rows(seed, n=1200, w=3):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, w)) + 1j * rng.standard_normal((n, w))
    # sprinkle exact zeros and near-threshold rows
    x[rng.random(n) < 0.05] = 0.0
    return x


class TestRowSoftThreshold:
    def test_norm_formula(self):
        x = random_rows(0)
        lam = 1.3
        out = row_soft_threshold(x, lam)
        norms = np.linalg.norm(x, axis=1)
        expect = np.maximum(norms - lam, 0.0)
        np.testing.assert_allclose(np.linalg.norm(out, axis=1), expect, atol=1e-12)

    def test_direction_preserved(self):
        x = random_rows(1)
        out = row_soft_threshold(x, 0.7)
        norms = np.linalg.norm(x, axis=1)
        kept = np.linalg.norm(out, axis=1) > 0
        unit_in = x[kept] / norms[kept, None]
        unit_out = out[kept] / np.linalg.norm(out[kept], axis=1)[:, None]
        np.testing.assert_allclose(unit_out, unit_in, atol=1e-12)

    def test_nonexpansive(self):
        x, z = random_rows(2), random_rows(3)
        for lam in (0.0, 0.5, 2.0):
            d_out = np.linalg.norm(row_soft_threshold(x, lam) - row_soft_threshold(z, lam))
            assert d_out <= np.linalg.norm(x - z) + 1e-12

    def test_zero_threshold_is_identity(self):
        x = random_rows(4)
        np.testing.assert_allclose(row_soft_threshold(x, 0.0), x, atol=1e-12)

    def test_large_threshold_kills_everything(self):
        x = random_rows(5)
        lam = float(np.linalg.norm(x, axis=1).max()) + 1.0
        assert np.all(row_soft_threshold(x, lam) == 0)

    def test_negative_threshold_rejected(self):
        with pytest.raises(ValueError):
            row_soft_threshold(random_rows(6), -0.1)

    def test_prior_mask_pass_through(self):
        x = random_rows(7)
        keep = np.zeros(x.shape[0], dtype=bool)
        keep[::5] = True
        out = prior_aided_threshold(x, 0.9, keep)
        np.testing.assert_array_equal(out[keep], x[keep])
        np.testing.assert_allclose(
            out[~keep], row_soft_threshold(x, 0.9)[~keep], atol=1e-12)

    def test_prior_mask_shape_checked(self):
        with pytest.raises(ValueError):
            prior_aided_threshold(random_rows(8), 0.5, np.ones(3, dtype=bool))


def test_extract_support_is_strict():
    block = np.zeros((4, 2))
    block[1] = [3.0, 4.0]      # norm 5
    block[3] = [0.6, 0.8]      # norm 1
    np.testing.assert_array_equal(extract_support(block, 1.0), [1])
    np.testing.assert_array_equal(extract_support(block, 0.99), [1, 3])
    with pytest.raises(ValueError):
        extract_support(block, -1.0)


class TestLsReinitialize:
    def test_exact_on_true_support(self):
        rng = np.random.default_rng(0)
        a = rng.standard_normal((6, 10)) + 1j * rng.standard_normal((6, 10))
        x = np.zeros((10, 2), dtype=complex)
        x[[2, 7]] = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        y = a @ x
        np.testing.assert_allclose(ls_reinitialize(a, [2, 7], y), x, atol=1e-10)

    def test_exact_on_superset_support(self):
        # extra columns get zero coefficients in the minimum-norm LS fit
        rng = np.random.default_rng(1)
        a = rng.standard_normal((6, 10)) + 1j * rng.standard_normal((6, 10))
        x = np.zeros((10, 2), dtype=complex)
        x[[2, 7]] = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
        y = a @ x
        np.testing.assert_allclose(ls_reinitialize(a, [1, 2, 7, 9], y), x, atol=1e-10)

    def test_oversized_support_rejected(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((4, 10))
        with pytest.raises(ValueError):
            ls_reinitialize(a, list(range(5)), np.zeros((4, 1)))


def test_alpha_schedule_broadcasting():
    np.testing.assert_array_equal(alpha_schedule(2.0, 3, 4), np.full((3, 4), 2.0))
    np.testing.assert_array_equal(
        alpha_schedule([1, 2, 3, 4], 2, 4), [[1, 2, 3, 4]] * 2)
    full = np.arange(1, 13, dtype=float).reshape(3, 4)
    np.testing.assert_array_equal(alpha_schedule(full, 3, 4), full)
    with pytest.raises(ValueError):
        alpha_schedule([1, 2, 3], 2, 4)
    with pytest.raises(ValueError):
        alpha_schedule(np.ones((2, 4)), 3, 4)
    with pytest.raises(ValueError):
        alpha_schedule(0.0, 1, 1)


def exhaustive_1sparse(y, a):
    """Independent oracle: best single-column LS fit by full enumeration."""
    best, best_res = None, np.inf
    for j in range(a.shape[1]):
        col = a[:, [j]]
        coef = (col.conj().T @ y) / (np.linalg.norm(col) ** 2)
        res = np.linalg.norm(y - col @ coef)
        if res < best_res:
            best, best_res = j, res
    return best


def test_amp_matches_exhaustive_1sparse_oracle():
    rng = np.random.default_rng(10)
    for trial in range(10):
        a = rng.standard_normal((12, 30)) + 1j * rng.standard_normal((12, 30))
        a /= np.linalg.norm(a, axis=0, keepdims=True)
        j = int(rng.integers(30))
        coef = rng.standard_normal((1, 2)) + 1j * rng.standard_normal((1, 2))
        y = a[:, [j]] @ coef
        res = amp_mmv(y, a, AmpConfig(n_iters=60, alpha=2.0))
        top = int(np.argmax(np.linalg.norm(res.x_hat, axis=1)))
        assert top == exhaustive_1sparse(y, a) == j
        np.testing.assert_allclose(res.x_hat[j], coef[0], atol=1e-6)


def _noiseless_instance(seed, n_active=3):
    cfg = SystemConfig(n_users=50, n_sequences=8, seq_len=16, guard=2,
                       max_delay=2, n_pilot=1, max_data=3, n_antennas=1,
                       n_active=n_active, snr_db=float("inf"))
    pool = build_spreading_pool(cfg, 7)
    dic = expand_dictionary(pool, cfg.guard)
    real = draw_realization(cfg, pool, seed)
    obs = synthesize_observation(real, dic, cfg.snr_db, seed)
    return cfg, dic, real, obs


def test_amp_mmv_exact_on_noiseless_instance():
    cfg, dic, real, obs = _noiseless_instance(3)
    res = amp_mmv(obs.y, dic, AmpConfig(n_iters=60, alpha=2.5))
    assert np.linalg.norm(res.x_hat - real.x_true) / np.linalg.norm(real.x_true) < 1e-5


def test_amp_bp_exact_and_support_history():
    cfg, dic, real, obs = _noiseless_instance(4)
    res = amp_bp(obs.y, dic, AmpConfig(n_iters=60, alpha=2.5), cfg.n_antennas)
    assert np.linalg.norm(res.x_hat - real.x_true) / np.linalg.norm(real.x_true) < 1e-5
    rows, _ = ground_truth_support(real)
    assert len(res.support_history) == cfg.n_slots - 1
    assert len(res.deltas) == cfg.n_slots - 1
    # the support carried into the final stage only sees truncated columns,
    # so it must be a subset of the true rows (users whose data reaches
    # that window), never a superset
    for sup in res.support_history:
        assert set(sup.tolist()) <= rows


def test_amp_bp_single_slot_reduces_to_amp_mmv():
    # one slot of 2 antenna columns: the backward sweep has nothing to
    # propagate and must match plain joint recovery bit for bit
    rng = np.random.default_rng(5)
    a_mat = rng.standard_normal((20, 60)) + 1j * rng.standard_normal((20, 60))
    a_mat /= np.linalg.norm(a_mat, axis=0, keepdims=True)
    x = np.zeros((60, 2), dtype=complex)
    x[rng.choice(60, 4, replace=False)] = (
        rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2)))
    y = a_mat @ x + 0.01 * (rng.standard_normal((20, 2))
                            + 1j * rng.standard_normal((20, 2)))
    c = AmpConfig(n_iters=40, alpha=2.0)
    res_mmv = amp_mmv(y, a_mat, c)
    res_bp = amp_bp(y, a_mat, c, n_antennas=2)
    np.testing.assert_array_equal(res_mmv.x_hat, res_bp.x_hat)


def test_early_stop_reduces_iterations():
    cfg, dic, real, obs = _noiseless_instance(6)
    full = amp_mmv(obs.y, dic, AmpConfig(n_iters=400, alpha=2.5, stop_tol=0.0))
    early = amp_mmv(obs.y, dic, AmpConfig(n_iters=400, alpha=2.5, stop_tol=1e-8))
    assert full.stage_iters[0] == 400
    assert early.stage_iters[0] < 400
    np.testing.assert_allclose(early.x_hat, real.x_true, atol=1e-6)


def test_residual_history_shape():
    cfg, dic, real, obs = _noiseless_instance(8)
    res = amp_bp(obs.y, dic, AmpConfig(n_iters=30, alpha=2.5, stop_tol=0.0),
                 cfg.n_antennas)
    assert len(res.residuals) == cfg.n_slots
    for stage_res, iters in zip(res.residuals, res.stage_iters):
        assert len(stage_res) == iters == 30


def test_per_stage_alpha_schedule_accepted():
    cfg, dic, real, obs = _noiseless_instance(9)
    alphas = np.full((cfg.n_slots, 30), 2.5)
    res = amp_bp(obs.y, dic, AmpConfig(n_iters=30, alpha=alphas), cfg.n_antennas)
    assert np.linalg.norm(res.x_hat - real.x_true) / np.linalg.norm(real.x_true) < 1e-4


def test_divergence_raises_floating_point_error():
    # an under-thresholded run on a crowded instance grows geometrically
    # (Onsager ratio > 1); the solver must fail loudly, not return garbage
    cfg = SystemConfig(n_users=1000, n_sequences=40, seq_len=32, guard=3,
                       max_delay=3, n_pilot=1, max_data=3, n_antennas=1,
                       n_active=16, snr_db=30.0)
    pool = build_spreading_pool(cfg, 7)
    dic = expand_dictionary(pool, cfg.guard)
    real = draw_realization(cfg, pool, 0)
    obs = synthesize_observation(real, dic, cfg.snr_db, 0)
    with pytest.raises(FloatingPointError):
        amp_mmv(obs.y, dic, AmpConfig(n_iters=20000, alpha=1.1, stop_tol=0.0))


def test_auto_delta_separates_planted_support():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((30, 90)) + 1j * rng.standard_normal((30, 90))
    a /= np.linalg.norm(a, axis=0, keepdims=True)
    x = np.zeros((90, 3), dtype=complex)
    sup = rng.choice(90, 5, replace=False)
    x[sup] = rng.standard_normal((5, 3)) + 1j * rng.standard_normal((5, 3))
    v = 1e-3 * (rng.standard_normal((30, 3)) + 1j * rng.standard_normal((30, 3)))
    d = auto_delta(x, v, a)
    got = extract_support(x + a.conj().T @ v, d)
    assert set(got.tolist()) == set(sup.tolist())
