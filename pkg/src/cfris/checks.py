"""Self-check suite run by ``cfris validate``.

Each check builds a small random instance, compares a solver component with
an independent oracle and returns a :class:`CheckResult`. The whole suite
runs in well under a minute.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet, assemble_channels
from .impairments import build_distortion, ideal_distortion, sample_iqi
from .ris import (build_gamma_upsilon, build_real_qcqp, oracle_projected_gradient, solve_ris,
                  trace_form_objective, trust_region_2d)
from .scenario import ScenarioConfig, default_allocation, subcarrier_indices
from .system import build_operators, herm, mse_matrices, spectral_efficiencies
from .wmmse import SolverOptions, outer_solve, update_combiners, update_weights

__all__ = ["CheckResult", "waterfilling_capacity", "run_checks", "CHECKS"]


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def waterfilling_capacity(H, p, sigma2) -> float:
    """``max log2|I + H Q H^H / sigma2|`` over ``Tr Q <= p`` via SVD and water-level bisection."""
    g = np.linalg.svd(np.asarray(H), compute_uv=False) ** 2 / sigma2
    g = g[g > 1e-300]
    if g.size == 0:
        return 0.0
    lo, hi = 0.0, p + 1.0 / g.min()
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        if np.sum(np.maximum(mu - 1.0 / g, 0.0)) > p:
            hi = mu
        else:
            lo = mu
    q = np.maximum(lo - 1.0 / g, 0.0)
    return float(np.sum(np.log2(1.0 + g * q)))


def _cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _random_instance(rng, S=4, K=3, Q=2, M=4, Nt=2, C=2, Nr=2, b=2):
    cfg = ScenarioConfig(num_aps=C, num_ues=K, num_ris=Q, elements_per_ris=M, num_subcarriers=S,
                         tx_antennas=Nt, rx_antennas=Nr, streams=b)
    QM, CNr = Q * M, C * Nr
    ch = ChannelSet(_cn(rng, S, K, QM, Nt), _cn(rng, S, CNr, QM), _cn(rng, S, K, CNr, Nt),
                    subcarrier_indices(S))
    dist = build_distortion(sample_iqi("level3", cfg, rng))
    U, V = _cn(rng, S, K, CNr, b), _cn(rng, S, K, Nt, b)
    Wr = _cn(rng, S, K, b, b)
    W = Wr @ herm(Wr) + np.eye(b)
    return cfg, ch, dist, U, V, W, np.ones((S, K), bool)


def check_ris_assembly(rng) -> CheckResult:
    _, ch, dist, U, V, W, mask = _random_instance(rng)
    qf = build_real_qcqp(build_gamma_upsilon(U, W, V, ch, dist, mask))

    def direct(theta):
        # the noise term does not depend on theta, so any positive variance works
        E = mse_matrices(U, V, build_operators(ch, theta, dist), 0.3)
        return float(np.real(np.einsum("skab,skba->", W, E)))

    n = qf.size
    f0 = direct(np.zeros(n))
    gus = build_gamma_upsilon(U, W, V, ch, dist, mask)
    worst = 0.0
    for _ in range(20):
        th = rng.uniform(0, 1, n) * np.exp(2j * np.pi * rng.uniform(size=n))
        ref = direct(th) - f0
        got = qf.value(np.concatenate([th.real, th.imag]))
        worst = max(worst, abs(got - ref) / max(abs(ref), 1.0),
                    abs(trace_form_objective(gus, th) - ref)
                    / max(abs(ref), 1.0))
    return CheckResult("ris-assembly", worst < 1e-9, f"max relative mismatch {worst:.2e}")


def check_convexity(rng) -> CheckResult:
    worst = np.inf
    for _ in range(5):
        _, ch, dist, U, V, W, mask = _random_instance(rng)
        qf = build_real_qcqp(build_gamma_upsilon(U, W, V, ch, dist, mask))
        worst = min(worst, qf.min_eigenvalue() / np.linalg.norm(qf.delta))
    return CheckResult("convexity", worst >= -1e-8, f"min eig / ||Delta||_F = {worst:.2e}")


def check_block_solver(rng) -> CheckResult:
    r = np.sqrt(np.linspace(0, 1, 401))
    t = np.linspace(0, 2 * np.pi, 721)
    R, T = np.meshgrid(r, t)
    X = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()])
    worst = -np.inf
    for _ in range(20):
        B = rng.standard_normal((2, 2))
        A = B @ B.T
        g = rng.standard_normal(2) * 3
        x = trust_region_2d(A, g)
        fx = x @ A @ x + 2 * g @ x
        fg = np.min(np.einsum("in,ij,jn->n", X, A, X) + 2 * g @ X)
        worst = max(worst, fx - fg)
    return CheckResult("block-solver", worst <= 1e-9, f"worst gap to grid search {worst:.2e}")


def check_ris_oracle(rng) -> CheckResult:
    worst = 0.0
    for _ in range(3):
        _, ch, dist, U, V, W, mask = _random_instance(rng)
        qf = build_real_qcqp(build_gamma_upsilon(U, W, V, ch, dist, mask))
        nu0 = np.zeros(2 * qf.size)
        f = solve_ris(qf, nu0, tol=1e-12).objective
        fo = qf.value(oracle_projected_gradient(qf, nu0, 20_000))
        worst = max(worst, (f - fo) / max(abs(fo), 1.0))
    return CheckResult("ris-oracle", worst <= 1e-6, f"worst relative excess over oracle {worst:.2e}")


def check_monotone_and_identity(rng) -> CheckResult:
    cfg = ScenarioConfig(num_ues=2, elements_per_ris=4, rng_seed=int(rng.integers(1 << 31)))
    ch = assemble_channels(cfg)
    dist = build_distortion(sample_iqi("level3", cfg))
    st = outer_solve(ch, dist, cfg, default_allocation(cfg),
                     SolverOptions(max_outer_iters=15, record_blocks=True))
    f = np.array([b[2] for b in st.block_trace])
    rise = float(np.max(np.diff(f) / np.maximum(np.abs(f[:-1]), 1.0)))
    mask = default_allocation(cfg).mask()
    ops = build_operators(ch, st.theta, dist)
    U = update_combiners(st.V, ops, cfg.noise_variance, mask)
    W = update_weights(U, st.V, ops, cfg.noise_variance, mask)
    ln_w = np.sum(np.linalg.slogdet(W[mask])[1]) / np.log(2)
    se = np.sum(spectral_efficiencies(st.V, ops, cfg.noise_variance, mask))
    ok = rise <= 1e-9 and abs(ln_w - se) <= 1e-6 * max(1.0, se)
    return CheckResult("solver-monotone", ok, f"max block rise {rise:.1e}, rate identity gap {abs(ln_w - se):.1e}")


def check_waterfilling(rng) -> CheckResult:
    cfg = ScenarioConfig(num_aps=1, num_ues=1, num_ris=1, elements_per_ris=4, num_subcarriers=2,
                         tx_antennas=2, rx_antennas=2, streams=2, power_dbm=-5.0,
                         iqi_level="ideal", rng_seed=int(rng.integers(1 << 31)))
    ch = assemble_channels(cfg)
    alloc = default_allocation(cfg)
    st = outer_solve(ch, ideal_distortion(cfg), cfg, alloc,
                     SolverOptions(max_outer_iters=500, tol=1e-12, optimize_ris=False))
    hb = build_operators(ch, st.theta, ideal_distortion(cfg)).hbar
    mask = alloc.mask()
    cap = sum(waterfilling_capacity(hb[p, 0], cfg.power_mw, cfg.noise_variance)
              for p in range(cfg.num_subcarriers) if mask[p, 0])
    se = st.sum_rate * cfg.num_subcarriers
    return CheckResult("waterfilling", abs(cap - se) <= 1e-3, f"capacity {cap:.6f}, solver {se:.6f}")


CHECKS = (check_ris_assembly, check_convexity, check_block_solver, check_ris_oracle,
          check_monotone_and_identity, check_waterfilling)


def run_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for check in CHECKS:
        try:
            out.append(check(rng))
        except Exception as exc:  # a crash is a failed check, not an aborted suite
            out.append(CheckResult(check.__name__.removeprefix("check_"), False,
                                   f"{type(exc).__name__}: {exc}"))
    return out
