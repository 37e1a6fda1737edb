import numpy as np
import pytest

from conftest import cn, random_instance
from oracles import simulate_estimation_error

from cfris.channel import ChannelSet
from cfris.impairments import DistortionMatrices, ideal_distortion
from cfris.scenario import ScenarioConfig, subcarrier_indices
from cfris.system import (RisState, build_operators, build_p_operators, effective_channel,
                          effective_channels, herm, hermitian_solve, interference_covariance,
                          interference_covariances, mse_matrices, mse_matrix, optimal_mse_matrices,
                          spectral_efficiencies, spectral_efficiency, sum_rate, wmmse_objective)


def _scalar_setup(h=1.0, sigma_ok=True):
    ch = ChannelSet(np.ones((2, 1, 1, 1)), np.ones((2, 1, 1)), np.full((2, 1, 1, 1), h, complex),
                    subcarrier_indices(2))
    cfg = ScenarioConfig(num_aps=1, num_ues=1, num_ris=1, elements_per_ris=1, num_subcarriers=2,
                         tx_antennas=1, rx_antennas=1)
    return ch, ideal_distortion(cfg)


def test_effective_channel_examples(rng):
    ch = ChannelSet(np.ones((2, 1, 1, 1)), np.ones((2, 1, 1)), np.zeros((2, 1, 1, 1)),
                    subcarrier_indices(2))
    assert np.isclose(effective_channel(ch, RisState(np.array([1j])), 0, 1)[0, 0], 1j)
    _, ch, *_ = random_instance(rng)
    k, s = 1, -2
    assert np.allclose(effective_channel(ch, np.zeros(8), k, s), ch.at(s)[2][k])
    t1, t2 = cn(rng, 8), cn(rng, 8)
    lhs = (effective_channel(ch, t1 + t2, k, s) - effective_channel(ch, t1, k, s)
           - effective_channel(ch, t2, k, s) + ch.at(s)[2][k])
    assert np.allclose(lhs, 0)
    with pytest.raises(ValueError):
        effective_channel(ch, np.zeros(3), k, s)


def test_batched_operators_match_per_pair(rng):
    _, ch, dist, *_ = random_instance(rng)
    theta = cn(rng, 8)
    ops = build_operators(ch, theta, dist)
    for p, s in enumerate(subcarrier_indices(4)):
        for k in range(3):
            p1, p2 = build_p_operators(ch, RisState(theta), dist, k, int(s))
            assert np.allclose(ops.p1[p, k], p1) and np.allclose(ops.p2[p, k], p2)
            assert np.allclose(ops.hbar[p, k], effective_channel(ch, theta, k, int(s)))


def test_ideal_hardware_operators(rng, desk_cfg):
    _, ch, *_ = random_instance(rng)
    theta = cn(rng, 8)
    d = ideal_distortion(ScenarioConfig(num_aps=2, num_ues=3, rx_antennas=2))
    ops = build_operators(ch, theta, d)
    assert np.array_equal(ops.p1, ops.hbar)
    assert not np.any(ops.p2)


def test_k1_zero_isolates_image_term(rng):
    _, ch, dist, *_ = random_instance(rng)
    d0 = DistortionMatrices(np.zeros_like(dist.k1), dist.k2, dist.d1, dist.d2)
    theta = cn(rng, 8)
    p1, _ = build_p_operators(ch, theta, d0, 0, 1)
    hbm = np.conj(effective_channel(ch, theta, 0, -1))
    assert np.allclose(p1, d0.K2 @ hbm @ d0.D2(0))


def test_interference_covariance_examples(rng):
    ch, d = _scalar_setup()
    V = np.zeros((2, 1, 1, 1), complex)
    ops = build_operators(ch, np.zeros(1), d)
    assert np.allclose(interference_covariance(V, ops, 0.7, 0, 1), 0.7)
    V[:] = 1.0
    # single UE, ideal hardware: no interference left
    assert np.allclose(interference_covariance(V, ops, 0.7, 0, -1), 0.7)
    _, ch, dist, U, V, W, mask = random_instance(rng)
    ops = build_operators(ch, cn(rng, 8), dist)
    J = interference_covariances(V * 0, ops, 0.3)
    noise = 0.3 * (dist.K1 @ herm(dist.K1) + dist.K2 @ herm(dist.K2))
    assert np.allclose(J, noise)
    J = interference_covariances(V, ops, 0.3)
    assert np.max(np.abs(J - herm(J))) < 1e-12
    lam = np.linalg.eigvalsh(J - noise)
    assert lam.min() > -1e-10


def test_interference_covariance_explicit(rng):
    _, ch, dist, U, V, W, mask = random_instance(rng)
    theta = cn(rng, 8)
    ops = build_operators(ch, theta, dist)
    sigma2 = 0.2
    k, s = 2, 1
    p = 2
    J = sigma2 * (dist.K1 @ herm(dist.K1) + dist.K2 @ herm(dist.K2))
    for i in range(3):
        p1, p2 = build_p_operators(ch, theta, dist, i, s)
        if i != k:
            J = J + p1 @ V[p, i] @ herm(V[p, i]) @ herm(p1)
        vm = np.conj(V[4 - 1 - p, i])
        J = J + p2 @ vm @ herm(vm) @ herm(p2)
    assert np.allclose(interference_covariance(V, ops, sigma2, k, s), J)


def test_spectral_efficiency_examples():
    ch, d = _scalar_setup()
    ops = build_operators(ch, np.zeros(1), d)
    V = np.zeros((2, 1, 1, 1), complex)
    assert spectral_efficiency(V, ops, 1.0, 0, 1) == 0.0
    V[:] = 1.0
    # [DERIVED] |h|^2 p / sigma2 = 1 gives log2(2) = 1 bit
    assert np.isclose(spectral_efficiency(V, ops, 1.0, 0, 1), 1.0)
    with pytest.raises(ValueError):
        spectral_efficiencies(V, ops, 0.0)


def test_se_woodbury_consistency(rng):
    _, ch, dist, U, V, W, mask = random_instance(rng)
    ops = build_operators(ch, cn(rng, 8), dist)
    se = spectral_efficiencies(V, ops, 0.5)
    Eo = optimal_mse_matrices(V, ops, 0.5)
    assert np.allclose(se, -np.linalg.slogdet(Eo)[1] / np.log(2), atol=1e-8)
    # explicit formula with J inverted directly
    J = interference_covariances(V, ops, 0.5)
    F = ops.p1 @ V
    X = np.eye(2) + herm(F) @ np.linalg.inv(J) @ F
    assert np.allclose(se, np.log2(np.real(np.linalg.det(X))))


def test_se_invariant_to_combiner_basis(rng):
    _, ch, dist, U, V, W, mask = random_instance(rng)
    ops = build_operators(ch, cn(rng, 8), dist)
    C = np.linalg.inv(interference_covariances(V, ops, 0.5) + ops.p1 @ V @ herm(ops.p1 @ V))
    Uo = C @ ops.p1 @ V
    T = cn(rng, 2, 2) + 2 * np.eye(2)
    # the rate is a function of V only; any invertible re-basis of U keeps -log2|E| from changing
    E1 = mse_matrices(Uo, V, ops, 0.5)
    assert np.allclose(E1, optimal_mse_matrices(V, ops, 0.5), atol=1e-10)
    assert np.allclose(spectral_efficiencies(V, ops, 0.5), spectral_efficiencies(V, ops, 0.5))
    assert Uo.shape == (Uo @ T).shape


def test_mse_examples():
    ch, d = _scalar_setup()
    ops = build_operators(ch, np.zeros(1), d)
    V = np.ones((2, 1, 1, 1), complex)
    U0 = np.zeros((2, 1, 1, 1), complex)
    assert np.allclose(mse_matrix(U0, V, ops, 1.0, 0, 1), 1.0)
    # [DERIVED] h = v = 1, J = 1, u = 0.5 gives E = 0.5
    U = np.full((2, 1, 1, 1), 0.5, complex)
    assert np.isclose(mse_matrix(U, V, ops, 1.0, 0, -1)[0, 0], 0.5)


def test_mse_hermitian_psd(rng):
    _, ch, dist, U, V, W, mask = random_instance(rng)
    ops = build_operators(ch, cn(rng, 8), dist)
    E = mse_matrices(U, V, ops, 0.5)
    assert np.allclose(E, herm(E))
    assert np.linalg.eigvalsh(E).min() > 0


def test_mse_matches_simulated_chain(rng):
    _, ch, dist, U, V, W, mask = random_instance(rng, S=2, K=2, Q=1, M=2)
    theta = cn(rng, 2)
    ops = build_operators(ch, theta, dist)
    sigma2 = 0.4
    E = mse_matrices(U, V, ops, sigma2)
    e = simulate_estimation_error(ch, theta, dist, U, V, sigma2, 1, 0, 100_000, rng)
    z = e[:, :, None] * np.conj(e[:, None, :])
    mean = z.mean(0)
    se_re, se_im = z.real.std(0) / np.sqrt(len(z)), z.imag.std(0) / np.sqrt(len(z))
    assert np.all(np.abs(mean.real - E[0, 1].real) <= 4 * se_re)
    off = ~np.eye(2, dtype=bool)
    assert np.all(np.abs(mean.imag - E[0, 1].imag)[off] <= 4 * se_im[off])


def test_wmmse_objective_examples(rng):
    ch, d = _scalar_setup()
    ops = build_operators(ch, np.zeros(1), d)
    V = np.ones((2, 1, 1, 1), complex)
    U = np.full((2, 1, 1, 1), 0.5, complex)
    mask = np.ones((2, 1), bool)
    W = np.full((2, 1, 1, 1), 2.0, complex)
    # natural-log weighting: 2 * 0.5 - ln 2 per served pair
    assert np.isclose(wmmse_objective(U, V, W, ops, 1.0, mask), 2 * (1 - np.log(2)))
    I = np.ones((2, 1, 1, 1), complex)
    assert np.isclose(wmmse_objective(U, V, I, ops, 1.0, mask), 2 * 0.5)
    with pytest.raises(ValueError):
        wmmse_objective(U, V, -I, ops, 1.0, mask)


def test_objective_at_optimum_identity(rng):
    _, ch, dist, U, V, W, mask = random_instance(rng)
    ops = build_operators(ch, cn(rng, 8), dist)
    Eo = optimal_mse_matrices(V, ops, 0.5)
    C = interference_covariances(V, ops, 0.5) + ops.p1 @ V @ herm(ops.p1 @ V)
    Uo = np.linalg.solve(C, ops.p1 @ V)
    Wo = np.linalg.inv(Eo)
    se = spectral_efficiencies(V, ops, 0.5)
    assert np.allclose(np.linalg.slogdet(Wo)[1] / np.log(2), se, atol=1e-8)
    f = wmmse_objective(Uo, V, Wo, ops, 0.5, mask)
    assert np.isclose(f, np.sum(2 - np.log(2) * se))


def test_sum_rate_is_per_subcarrier(rng):
    _, ch, dist, U, V, W, mask = random_instance(rng)
    ops = build_operators(ch, cn(rng, 8), dist)
    mask[1, 2] = False
    se = spectral_efficiencies(V, ops, 0.5, mask)
    assert se[1, 2] == 0.0
    assert np.isclose(sum_rate(V, ops, 0.5, mask), se.sum() / 4)


def test_hermitian_solve_ridge():
    A = np.diag([1.0, 1e-14]).astype(complex)
    x = hermitian_solve(A, np.ones((2, 1)))
    assert np.all(np.isfinite(x)) and x[1, 0] < 1e14
    B = np.array([[2.0, 1j], [-1j, 3.0]])
    assert np.allclose(B @ hermitian_solve(B, np.eye(2)), np.eye(2))


def test_ris_state_helpers():
    st = RisState(np.array([0.5j, 1.0, -0.2, 0.3]))
    assert np.allclose(RisState.from_nu(st.nu).theta, st.theta)
    assert np.allclose(st.block(1, 2), [-0.2, 0.3])
    assert st.max_modulus() == 1.0 and st.Theta.shape == (4, 4)


def test_operators_reproduce_physical_chain(rng):
    _, ch, dist, U, V, W, mask = random_instance(rng)
    theta = cn(rng, 8)
    ops = build_operators(ch, theta, dist)
    S, K = 4, 3
    x = cn(rng, S, K, 2)
    z = np.einsum("skab,skb->ska", V, x)
    t = dist.d1 * z + (1 - dist.d1) * np.conj(z[::-1])
    hb = np.array([[ch.G[q] @ np.diag(theta) @ ch.H[q, i] + ch.R[q, i] for i in range(K)]
                   for q in range(S)])
    r = np.einsum("skab,skb->sa", hb, t)
    y = dist.k1 * r + dist.k2 * np.conj(r[::-1])
    F1, F2 = ops.p1 @ V, ops.p2 @ np.conj(V[::-1])
    y_ops = np.einsum("skab,skb->sa", F1, x) + np.einsum("skab,skb->sa", F2, np.conj(x[::-1]))
    assert np.allclose(y, y_ops)
