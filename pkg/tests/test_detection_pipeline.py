"""Receiver chain tests: row detection, channel estimation, data
decisions, and the scoring rules."""

import math

import numpy as np
import pytest

from gfamp.detection_pipeline import (
    DetectionConfig,
    ReceiverOutput,
    detect_rows,
    estimate_channels,
    evaluate,
    recover_data,
    run_receiver,
)
from gfamp.modulation import min_distance, qam_constellation
from gfamp.sparse_recovery import AmpConfig, amp_mmv
from gfamp.system_model import (
    SystemConfig,
    TransmissionRealization,
    build_spreading_pool,
    draw_realization,
    expand_dictionary,
    ground_truth_support,
    row_index,
    synthesize_observation,
)

DET = DetectionConfig()

CFG = SystemConfig(n_users=60, n_sequences=10, seq_len=16, guard=2, max_delay=2,
                   n_pilot=1, max_data=3, n_antennas=2, n_active=4,
                   snr_db=float("inf"))


def _noiseless(seed):
    pool = build_spreading_pool(CFG, 7)
    dic = expand_dictionary(pool, CFG.guard)
    real = draw_realization(CFG, pool, seed)
    obs = synthesize_observation(real, dic, CFG.snr_db, seed)
    return dic, real, obs


def _collision_free_seed():
    pool = build_spreading_pool(CFG, 7)
    for seed in range(100):
        real = draw_realization(CFG, pool, seed)
        keys = list(zip(real.seq.tolist(), real.delay.tolist()))
        if len(set(keys)) == len(keys):
            return seed
    raise RuntimeError("no collision-free seed found")


def test_zero_estimate_detects_nothing():
    pairs, pilots = detect_rows(np.zeros((40, 8)), DET, 1e-3,
                                CFG.n_antennas, CFG.n_pilot, CFG.guard)
    assert pairs == set() and pilots == set()


def test_exact_estimate_detects_ground_truth():
    dic, real, obs = _noiseless(_collision_free_seed())
    pairs, pilots = detect_rows(real.x_true, DET, obs.noise_var,
                                CFG.n_antennas, CFG.n_pilot, CFG.guard)
    _, pairs_true = ground_truth_support(real)
    assert pairs == pairs_true
    assert pilots == {m for m, _ in pairs_true}


def test_absolute_threshold_mode():
    x = np.zeros((12, 4))
    x[5, :2] = [3.0, 4.0]    # pilot-block norm 5 with R=2, L_p=1
    det = DetectionConfig(row_threshold_mode="absolute", tau=4.9)
    pairs, _ = detect_rows(x, det, 0.0, 2, 1, 2)
    assert pairs == {(1, 2)}
    det = DetectionConfig(row_threshold_mode="absolute", tau=5.1)
    pairs, _ = detect_rows(x, det, 0.0, 2, 1, 2)
    assert pairs == set()


def test_threshold_sweep_trades_misdetection_for_false_alarm():
    """With junk energy below the true rows, tau picks the operating point:
    tiny tau admits everything, moderate tau isolates the truth, huge tau
    kills it all. Detected sets are nested along the way."""
    rng = np.random.default_rng(11)
    guard, r_ant = 2, 2
    true_pairs = {(1, 0), (3, 2), (5, 1), (7, 0)}
    x = 0.05 * (rng.standard_normal((30, 8)) + 1j * rng.standard_normal((30, 8)))
    for m, t in true_pairs:
        x[row_index(m, t, guard), :] = 2.0 + 0j
    detected = {}
    for tau in (0.01, 1.0, 50.0):
        det = DetectionConfig(row_threshold_mode="absolute", tau=tau)
        detected[tau], _ = detect_rows(x, det, 0.0, r_ant, 1, guard)
    assert detected[50.0] <= detected[1.0] <= detected[0.01]
    assert detected[1.0] == true_pairs
    assert detected[50.0] == set()
    assert len(detected[0.01]) == 30
    prec = {t: len(d & true_pairs) / len(d) for t, d in detected.items() if d}
    assert prec[0.01] < prec[1.0] == 1.0


def test_detection_shrinks_with_tau_on_noisy_batch():
    cfg = SystemConfig(**{**CFG.__dict__, "snr_db": 12.0, "n_active": 5})
    pool = build_spreading_pool(cfg, 7)
    dic = expand_dictionary(pool, cfg.guard)
    taus = (0.5, 4.0, 12.0)
    mu_p = {t: [] for t in taus}
    for seed in range(40):
        real = draw_realization(cfg, pool, seed)
        obs = synthesize_observation(real, dic, cfg.snr_db, seed)
        rec = amp_mmv(obs.y, dic, AmpConfig(n_iters=60, alpha=2.5))
        prev = None
        for t in taus:
            pairs, _ = detect_rows(rec.x_hat, DetectionConfig(tau=t),
                                   obs.noise_var, cfg.n_antennas,
                                   cfg.n_pilot, cfg.guard)
            if prev is not None:
                assert pairs <= prev
            prev = pairs
            rep = evaluate(real, run_receiver(
                rec.x_hat, cfg, DetectionConfig(tau=t), obs.noise_var))
            mu_p[t].append(rep.mu_p)
    p = [np.mean(mu_p[t]) for t in taus]
    assert p[0] >= p[1] >= p[2]
    assert p[0] > p[2]


def test_channel_estimate_exact_single_pilot():
    dic, real, obs = _noiseless(_collision_free_seed())
    _, pairs_true = ground_truth_support(real)
    est = estimate_channels(real.x_true, pairs_true, real.pilot_symbols,
                            CFG.n_antennas, CFG.guard)
    for k in range(CFG.n_active):
        pair = (int(real.seq[k]), int(real.delay[k]))
        np.testing.assert_allclose(est[pair], real.channel[k], atol=1e-12)


def test_channel_estimate_repeated_pilot_averages():
    # two unit pilot slots: the LS fit averages two exact reads of h
    h = np.array([0.3 - 0.4j, 1.1 + 0.2j])
    p = np.ones(2, dtype=complex)
    x = np.zeros((6, 8), dtype=complex)
    x[row_index(1, 1, 2), :4] = np.kron(p, h)
    est = estimate_channels(x, {(1, 1)}, p, 2, 2)
    np.testing.assert_allclose(est[(1, 1)], h, atol=1e-12)


def test_channel_estimate_collision_returns_sum():
    h1 = np.array([1.0 + 0j, -0.5j])
    h2 = np.array([0.2 - 0.7j, 0.9 + 0j])
    x = np.zeros((6, 8), dtype=complex)
    x[row_index(0, 0, 2), :2] = h1 + h2
    est = estimate_channels(x, {(0, 0)}, np.ones(1, dtype=complex), 2, 2)
    np.testing.assert_allclose(est[(0, 0)], h1 + h2, atol=1e-12)


def test_recover_data_exact_with_length_markers():
    dic, real, obs = _noiseless(_collision_free_seed())
    out = run_receiver(real.x_true, CFG, DET, obs.noise_var)
    for k in range(CFG.n_active):
        pair = (int(real.seq[k]), int(real.delay[k]))
        dec = out.data_decisions[pair]
        assert not dec.undecodable
        np.testing.assert_array_equal(dec.indices, real.data_indices[k])
        assert dec.length == real.data_len[k]


def test_recover_data_ser_at_operating_snr():
    """R=1, known channel, 30 dB slot SNR: essentially error-free 16-QAM."""
    rng = np.random.default_rng(2)
    n = 20000
    order = 16
    points = qam_constellation(order)
    labels = rng.integers(0, order, n)
    h = 1.3 - 0.7j
    sigma = math.sqrt(abs(h) ** 2 * 10 ** (-30 / 10) / 2)
    errors = 0
    det = DetectionConfig()
    guard = 0
    for start in range(0, n, 1000):
        batch = labels[start : start + 1000]
        x = np.zeros((1, 1 + len(batch)), dtype=complex)
        x[0, 0] = h
        x[0, 1:] = h * points[batch] + sigma * (
            rng.standard_normal(len(batch)) + 1j * rng.standard_normal(len(batch)))
        dec = recover_data(x, {(0, 0): np.array([h])}, det,
                           sigma ** 2 * 2, 1, 1, len(batch), guard, order)
        errors += int(np.sum(dec[(0, 0)].indices != batch))
    assert errors / n <= 1e-3


def test_empty_slot_suppressed_under_noise():
    h = np.array([1.0 + 0j])
    x = np.zeros((4, 4), dtype=complex)
    j = row_index(0, 0, 0)
    noise_var = 1e-4
    x[j, 0] = h[0]
    x[j, 1] = h[0] * qam_constellation(16)[5]
    x[j, 2] = 1e-3 + 1e-3j        # residual noise, no symbol sent
    dec = recover_data(x, {(0, 0): h}, DetectionConfig(), noise_var,
                       1, 1, 3, 0, 16)[(0, 0)]
    assert dec.indices[0] == 5
    assert dec.indices[1] == -1 and dec.indices[2] == -1
    assert dec.length == 1


def test_zero_channel_marks_undecodable():
    x = np.zeros((4, 4), dtype=complex)
    dec = recover_data(x, {(0, 0): np.array([0.0j])}, DET, 1e-3, 1, 1, 3, 0, 16)
    assert dec[(0, 0)].undecodable
    assert np.all(dec[(0, 0)].indices == -1)


def _fake_realization(seq, delay, n_active=None, guard=2, n_sequences=10):
    n_active = len(seq) if n_active is None else n_active
    cfg = SystemConfig(n_users=60, n_sequences=n_sequences, seq_len=16,
                       guard=guard, max_delay=guard, n_pilot=1, max_data=2,
                       n_antennas=1, n_active=n_active, snr_db=20.0)
    k = len(seq)
    return TransmissionRealization(
        users=np.arange(k), seq=np.asarray(seq), delay=np.asarray(delay),
        channel=np.ones((k, 1), dtype=complex),
        data_len=np.ones(k, dtype=int),
        data_indices=np.full((k, 2), -1, dtype=np.int64),
        data_symbols=np.zeros((k, 2), dtype=complex),
        pilot_symbols=np.ones(1, dtype=complex),
        x_true=np.zeros((cfg.n_expanded, cfg.n_cols), dtype=complex),
        seed=0, config=cfg,
    )


def _fake_output(pairs, pilot_block):
    return ReceiverOutput(
        detected_pairs=set(pairs),
        detected_pilots={m for m, _ in pairs},
        channel_estimates={},
        data_decisions={},
        pilot_block=pilot_block,
        row_threshold=0.0,
    )


def test_metric_set_arithmetic():
    real = _fake_realization([1, 2, 3, 4], [0, 0, 0, 0])
    out = _fake_output({(3, 0), (4, 0), (5, 0), (6, 0)},
                       np.zeros((real.config.n_expanded, 1), dtype=complex))
    rep = evaluate(real, out)
    assert rep.mu_p == pytest.approx(0.5)
    assert rep.mu_r == pytest.approx(0.5)
    assert rep.f1 == pytest.approx(0.5)
    assert rep.misdetections == 2 and rep.false_alarms == 2


def test_f1_symmetric_under_swap():
    ra = _fake_realization([1, 2, 3], [0, 0, 0])
    rb = _fake_realization([3, 4], [0, 0])
    a = evaluate(ra, _fake_output({(3, 0), (4, 0)},
                                  np.zeros((ra.config.n_expanded, 1),
                                           dtype=complex)))
    b = evaluate(rb, _fake_output({(1, 0), (2, 0), (3, 0)},
                                  np.zeros((rb.config.n_expanded, 1),
                                           dtype=complex)))
    assert a.f1 == pytest.approx(b.f1)


def test_empty_detection_scores_zero():
    real = _fake_realization([1, 2], [0, 1])
    out = _fake_output(set(), np.zeros((real.config.n_expanded, 1), dtype=complex))
    rep = evaluate(real, out)
    assert rep.mu_p == 0.0 and rep.mu_r == 0.0 and rep.f1 == 0.0
    assert rep.degenerate


def test_nmse_scale_invariance():
    dic, real, obs = _noiseless(3)
    out = run_receiver(real.x_true + 1e-3, CFG, DET, obs.noise_var)
    base = evaluate(real, out).nmse_db
    c = 2.0 - 1.5j
    scaled = TransmissionRealization(
        **{**real.__dict__, "x_true": c * real.x_true})
    out2 = ReceiverOutput(
        detected_pairs=out.detected_pairs, detected_pilots=out.detected_pilots,
        channel_estimates=out.channel_estimates, data_decisions=out.data_decisions,
        pilot_block=c * out.pilot_block, row_threshold=out.row_threshold)
    assert evaluate(scaled, out2).nmse_db == pytest.approx(base, abs=1e-9)


def test_perfect_receiver_scores_perfectly():
    dic, real, obs = _noiseless(_collision_free_seed())
    out = run_receiver(real.x_true, CFG, DET, obs.noise_var)
    rep = evaluate(real, out)
    assert rep.f1 == 1.0 and rep.mu_data == 1.0
    assert rep.nmse_db == -120.0
    assert not rep.degenerate


def test_collided_users_never_count_as_recovered():
    pool = build_spreading_pool(CFG, 7)
    dic = expand_dictionary(pool, CFG.guard)
    for seed in range(300):
        real = draw_realization(CFG, pool, seed)
        keys = list(zip(real.seq.tolist(), real.delay.tolist()))
        n_collided = sum(1 for k in keys if keys.count(k) > 1)
        if n_collided:
            obs = synthesize_observation(real, dic, CFG.snr_db, seed)
            out = run_receiver(real.x_true, CFG, DET, obs.noise_var)
            rep = evaluate(real, out)
            assert rep.collided_users == n_collided
            assert rep.mu_data <= (CFG.n_active - n_collided) / CFG.n_active
            return
    pytest.fail("no colliding seed found")


def test_metrics_bounded_on_noisy_batch():
    cfg = SystemConfig(**{**CFG.__dict__, "snr_db": 8.0})
    pool = build_spreading_pool(cfg, 7)
    dic = expand_dictionary(pool, cfg.guard)
    for seed in range(20):
        real = draw_realization(cfg, pool, seed)
        obs = synthesize_observation(real, dic, cfg.snr_db, seed)
        rec = amp_mmv(obs.y, dic, AmpConfig(n_iters=40, alpha=2.5))
        rep = evaluate(real, run_receiver(rec.x_hat, cfg, DET, obs.noise_var))
        for v in (rep.mu_p, rep.mu_r, rep.f1, rep.mu_data):
            assert 0.0 <= v <= 1.0


def test_zero_active_users_convention():
    cfg = SystemConfig(**{**CFG.__dict__, "n_active": 0})
    pool = build_spreading_pool(cfg, 7)
    real = draw_realization(cfg, pool, 1)
    out = run_receiver(np.zeros((cfg.n_expanded, cfg.n_cols)), cfg, DET, 0.0)
    rep = evaluate(real, out)
    assert rep.mu_data == 1.0 and rep.degenerate
