import numpy as np
import pytest

from conftest import cn, random_instance
from oracles import waterfilling_sorted

from cfris.channel import ChannelSet, assemble_channels
from cfris.impairments import build_distortion, ideal_distortion, sample_iqi
from cfris.scenario import ScenarioConfig, default_allocation, subcarrier_indices
from cfris.system import (build_operators, herm, mse_matrices, optimal_mse_matrices,
                          spectral_efficiencies, wmmse_objective)
from cfris.wmmse import (SolverOptions, initial_precoders, outer_solve, precoder_system,
                         random_theta, solve_power_constrained, update_combiners, update_precoder,
                         update_precoders, update_weights)

SIGMA2 = 0.3


def _ops(rng, **kw):
    cfg, ch, dist, U, V, W, mask = random_instance(rng, **kw)
    theta = cn(rng, ch.G.shape[-1]) * 0.5
    return cfg, build_operators(ch, theta, dist), U, V, W, mask


def _scalar_link():
    """One UE, one antenna on both ends, unit direct channel and ideal hardware."""
    cfg = ScenarioConfig(num_aps=1, num_ues=1, num_ris=1, elements_per_ris=1, num_subcarriers=2,
                         tx_antennas=1, rx_antennas=1, streams=1)
    ch = ChannelSet(np.zeros((2, 1, 1, 1), complex), np.zeros((2, 1, 1), complex),
                    np.ones((2, 1, 1, 1), complex), subcarrier_indices(2))
    return cfg, build_operators(ch, np.zeros(1), ideal_distortion(cfg))


def test_scalar_combiner_and_weight():
    _, ops = _scalar_link()
    mask = np.ones((2, 1), bool)
    V = np.ones((2, 1, 1, 1), complex)
    U = update_combiners(V, ops, 1.0, mask)
    assert np.allclose(U, 0.5)
    W = update_weights(U, V, ops, 1.0, mask)
    assert np.allclose(W, 2.0)
    assert np.allclose(update_combiners(0 * V, ops, 1.0, mask), 0)
    assert np.allclose(update_weights(0 * U, 0 * V, ops, 1.0, mask), 1.0)


def test_weights_dominate_identity(rng):
    _, ops, U, V, W, mask = _ops(rng)
    U = update_combiners(V, ops, SIGMA2, mask)
    W = update_weights(U, V, ops, SIGMA2, mask)
    assert np.allclose(W, herm(W))
    assert np.linalg.eigvalsh(W - np.eye(2)).min() >= -1e-10
    assert np.allclose(np.linalg.inv(W), optimal_mse_matrices(V, ops, SIGMA2), atol=1e-10)


def test_unserved_pairs_get_identity_and_zero(rng):
    _, ops, U, V, W, mask = _ops(rng)
    mask[1, 2] = False
    assert not np.any(update_combiners(V, ops, SIGMA2, mask)[1, 2])
    assert np.array_equal(update_weights(U, V, ops, SIGMA2, mask)[1, 2], np.eye(2))
    assert not np.any(update_precoders(U, W, ops, 1.0, mask)[0][1, 2])


@pytest.mark.parametrize("seed", range(20))
def test_mmse_combiner_is_optimal(seed):
    # [DERIVED] Tr(W E) grows under any perturbation of the MMSE combiner
    rng = np.random.default_rng(seed)
    _, ops, _, V, W, mask = _ops(rng)
    U = update_combiners(V, ops, SIGMA2, mask)
    f0 = wmmse_objective(U, V, W, ops, SIGMA2, mask)
    for eps in (1e-3, 1e-1):
        Up = U + eps * cn(rng, *U.shape)
        assert wmmse_objective(Up, V, W, ops, SIGMA2, mask) > f0


def test_scalar_kkt_example():
    v, th = solve_power_constrained(np.array([[2.0 + 0j]]), np.array([[1.0 + 0j]]), 0.01)
    assert np.isclose(v[0, 0], 0.1) and np.isclose(th, 8.0)
    v, th = solve_power_constrained(np.array([[2.0 + 0j]]), np.array([[1.0 + 0j]]), 1e6)
    assert np.isclose(v[0, 0], 0.5) and th == 0.0


def test_power_constraint_active_or_slack(rng):
    _, ops, U, V, W, mask = _ops(rng)
    A, B = precoder_system(U, W, ops, mask)
    for p in (1e-4, 1e4):
        Vn, th = solve_power_constrained(A, B, p)
        pw = np.sum(np.abs(Vn) ** 2, axis=(-2, -1))
        assert np.all(pw <= p * (1 + 1e-12))
        # complementary slackness: an active multiplier means a tight budget
        assert np.all(np.where(th > 0, np.abs(pw - p) / p, 0.0) <= 1e-9)
        # stationarity of the Lagrangian
        res = A @ Vn + th[..., None, None] * Vn - B
        assert np.abs(res).max() <= 1e-8 * max(1.0, np.abs(B).max())
    assert np.all(th == 0)


@pytest.mark.parametrize("seed", range(5))
def test_precoder_update_is_constrained_minimum(seed):
    # [DERIVED] feasible random perturbations never beat the exact update
    rng = np.random.default_rng(seed)
    _, ops, U, V, W, mask = _ops(rng)
    Vn, _ = update_precoders(U, W, ops, 0.5, mask)
    f0 = wmmse_objective(U, Vn, W, ops, SIGMA2, mask)
    for _ in range(10):
        Vp = Vn + 0.05 * cn(rng, *Vn.shape)
        nrm = np.sqrt(np.sum(np.abs(Vp) ** 2, axis=(-2, -1), keepdims=True))
        Vp = Vp * np.minimum(1.0, np.sqrt(0.5) / nrm)
        assert wmmse_objective(U, Vp, W, ops, SIGMA2, mask) >= f0 - 1e-10 * abs(f0)


def test_single_precoder_accessor(rng):
    _, ops, U, V, W, mask = _ops(rng)
    Vall, th = update_precoders(U, W, ops, 0.5, mask)
    v, t = update_precoder(U, W, ops, 0.5, mask, k=1, s=-1)
    assert np.allclose(v, Vall[1, 1]) and t == th[1, 1]


def test_initial_precoders_meet_budget(desk_cfg):
    mask = default_allocation(desk_cfg).mask()
    V = initial_precoders(desk_cfg, mask)
    assert np.allclose(np.sum(np.abs(V) ** 2, axis=(-2, -1)), desk_cfg.power_mw)


def test_random_theta_unit_modulus_and_seeded(desk_cfg):
    t = random_theta(desk_cfg, 3)
    assert np.allclose(np.abs(t), 1) and np.array_equal(t, random_theta(desk_cfg, 3))
    assert not np.array_equal(t, random_theta(desk_cfg, 4))


@pytest.fixture(scope="module")
def small_run():
    cfg = ScenarioConfig(num_ues=2, elements_per_ris=4, streams=2, power_dbm=-10.0, rng_seed=5)
    ch = assemble_channels(cfg)
    dist = build_distortion(sample_iqi("level3", cfg))
    opts = SolverOptions(max_outer_iters=20, record_blocks=True)
    return cfg, ch, dist, outer_solve(ch, dist, cfg, default_allocation(cfg), opts)


def test_blocks_are_monotone(small_run):
    *_, st = small_run
    f = np.array([b[2] for b in st.block_trace])
    assert np.all(np.diff(f) <= 1e-9 * np.abs(f[:-1]))
    assert [b[1] for b in st.block_trace[:4]] == ["U", "W", "V", "theta"]


def test_kkt_and_feasibility(small_run):
    cfg, *_, st = small_run
    assert all(k["max_slackness"] <= 1e-9 for k in st.kkt)
    assert all(k["max_power_ratio"] <= 1 + 1e-9 for k in st.kkt)
    assert np.all(np.abs(st.theta) <= 1 + 1e-12)
    assert max(r.max_violation for r in st.trace) <= 1e-9


def test_rate_identity(small_run):
    cfg, ch, dist, st = small_run
    mask = default_allocation(cfg).mask()
    ops = build_operators(ch, st.theta, dist)
    U = update_combiners(st.V, ops, cfg.noise_variance, mask)
    W = update_weights(U, st.V, ops, cfg.noise_variance, mask)
    lw = np.sum(np.linalg.slogdet(W[mask])[1]) / np.log(2)
    se = np.sum(spectral_efficiencies(st.V, ops, cfg.noise_variance, mask))
    assert abs(lw - se) <= 1e-8 * max(1.0, se)
    assert np.isclose(st.sum_rate * cfg.num_subcarriers, se, rtol=1e-9)


def test_deterministic(small_run):
    cfg, ch, dist, st = small_run
    st2 = outer_solve(ch, dist, cfg, default_allocation(cfg),
                      SolverOptions(max_outer_iters=20, record_blocks=True))
    assert np.array_equal(st.V, st2.V) and np.array_equal(st.theta, st2.theta)


def test_zero_channels_give_zero_rate():
    cfg = ScenarioConfig(num_ues=2, elements_per_ris=2)
    ch = assemble_channels(cfg)
    zero = ChannelSet(0 * ch.H, 0 * ch.G, 0 * ch.R, ch.subcarriers)
    st = outer_solve(zero, ideal_distortion(cfg), cfg, default_allocation(cfg),
                     SolverOptions(max_outer_iters=3))
    assert st.sum_rate == 0.0


def test_frozen_weights_keep_identity(small_run):
    cfg, ch, dist, _ = small_run
    st = outer_solve(ch, dist, cfg, default_allocation(cfg),
                     SolverOptions(max_outer_iters=3, update_weights=False))
    assert np.array_equal(st.W, np.broadcast_to(np.eye(2), st.W.shape))


@pytest.mark.parametrize("seed", range(3))
def test_single_ue_matches_waterfilling(seed):
    # [DERIVED] ideal hardware and one UE reduce each subcarrier to a point-to-point MIMO link
    cfg = ScenarioConfig(num_aps=1, num_ues=1, num_ris=1, elements_per_ris=4, num_subcarriers=2,
                         tx_antennas=2, rx_antennas=2, streams=2, power_dbm=-5.0,
                         iqi_level="ideal", rng_seed=seed)
    ch = assemble_channels(cfg)
    alloc = default_allocation(cfg)
    st = outer_solve(ch, ideal_distortion(cfg), cfg, alloc,
                     SolverOptions(max_outer_iters=500, tol=1e-12, optimize_ris=False))
    hb = build_operators(ch, st.theta, ideal_distortion(cfg)).hbar
    cap = sum(waterfilling_sorted(hb[p, 0], cfg.power_mw, cfg.noise_variance) for p in range(2))
    assert abs(st.sum_rate * 2 - cap) <= 1e-3


def test_options_validation():
    with pytest.raises(ValueError):
        SolverOptions(tol=0)
    with pytest.raises(ValueError):
        SolverOptions(bisection_tol=-1)


def test_objective_rejects_indefinite_weights(rng):
    _, ops, U, V, W, mask = _ops(rng)
    with pytest.raises(ValueError):
        wmmse_objective(U, V, -W, ops, SIGMA2, mask)


def test_objective_at_optimum_equals_rate_form(rng):
    # with W = E^{-1}: Tr(W E) - ln|W| = b - ln|W|
    _, ops, U, V, W, mask = _ops(rng)
    U = update_combiners(V, ops, SIGMA2, mask)
    W = update_weights(U, V, ops, SIGMA2, mask)
    f = wmmse_objective(U, V, W, ops, SIGMA2, mask)
    ref = mask.sum() * 2 - np.sum(np.linalg.slogdet(W)[1])
    assert np.isclose(f, ref, rtol=1e-10)
    E = mse_matrices(U, V, ops, SIGMA2)
    assert np.allclose(E, optimal_mse_matrices(V, ops, SIGMA2), atol=1e-10)
