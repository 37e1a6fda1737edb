"""Round-robin block coordinate descent over combiners, weights, precoders and RIS.

Each block update is an exact minimizer of the weighted-MSE objective
``sum Tr(W E) - ln|W|`` with the other blocks fixed, so the objective is
nonincreasing after every block. With ``W = E^{-1}`` at the optimal combiner,
``log2|W_k^s|`` equals the achievable rate ``SE_k^s``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelSet
from .impairments import DistortionMatrices
from .ris import build_gamma_upsilon, build_real_qcqp, solve_ris
from .scenario import TAG_RIS_INIT, AllocationMap, ScenarioConfig, derive_rng, position
from .system import (build_operators, herm, hermitian_solve, mse_matrices, spectral_efficiencies,
                     total_covariance, wmmse_objective)

__all__ = [
    "SolverOptions",
    "SolverState",
    "TraceRecord",
    "random_theta",
    "initial_precoders",
    "update_combiners",
    "update_weights",
    "precoder_system",
    "solve_power_constrained",
    "update_precoders",
    "update_precoder",
    "update_ris",
    "outer_solve",
]

log = logging.getLogger(__name__)

BLOCKS = ("U", "W", "V", "theta")


@dataclass
class SolverOptions:
    max_outer_iters: int = 100
    tol: float = 1e-4
    bisection_tol: float = 1e-12
    bisection_max_steps: int = 200
    ris_tol: float = 1e-8
    ris_max_sweeps: int = 500
    update_weights: bool = True
    optimize_ris: bool = True
    record_blocks: bool = False

    def __post_init__(self):
        for name in ("tol", "bisection_tol", "ris_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    sum_rate: float
    max_violation: float


@dataclass
class SolverState:
    U: np.ndarray
    W: np.ndarray
    V: np.ndarray
    theta: np.ndarray
    multipliers: np.ndarray
    iteration: int = 0
    converged: bool = False
    trace: list = field(default_factory=list)
    block_trace: list = field(default_factory=list)
    kkt: list = field(default_factory=list)
    ris_sweeps: list = field(default_factory=list)
    theta_trace: list = field(default_factory=list)
    sum_rate: float = float("nan")
    diagnostics: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return self.trace[-1].objective if self.trace else float("nan")

    def relative_changes(self) -> np.ndarray:
        obj = np.array([r.objective for r in self.trace])
        return np.abs(np.diff(obj)) / np.maximum(np.abs(obj[:-1]), 1.0)


def random_theta(cfg: ScenarioConfig, realization: int = 0) -> np.ndarray:
    """Unit-modulus RIS coefficients with i.i.d. uniform phases."""
    rng = derive_rng(cfg.rng_seed, realization, TAG_RIS_INIT)
    return np.exp(1j * rng.uniform(-np.pi, np.pi, cfg.num_ris_elements))


def initial_precoders(cfg: ScenarioConfig, mask) -> np.ndarray:
    """Scaled truncated identities meeting the power budget with equality."""
    Nt, b = cfg.tx_antennas, cfg.streams
    V0 = np.sqrt(cfg.power_mw / min(Nt, b)) * np.eye(Nt, b)
    V = np.broadcast_to(V0, mask.shape + (Nt, b)).astype(complex)
    return np.where(mask[..., None, None], V, 0.0)


def update_combiners(V, ops, sigma2, mask) -> np.ndarray:
    """U = (P1 V V^H P1^H + J)^{-1} P1 V, the MMSE combiner."""
    C, F1 = total_covariance(V, ops, sigma2)
    U = hermitian_solve(C[:, None], F1)
    return np.where(mask[..., None, None], U, 0.0)


def update_weights(U, V, ops, sigma2, mask) -> np.ndarray:
    """W = E^{-1}; at the MMSE combiner this is (I - U^H P1 V)^{-1}."""
    E = mse_matrices(U, V, ops, sigma2)
    W = np.linalg.inv(E)
    W = 0.5 * (W + herm(W))
    b = W.shape[-1]
    return np.where(mask[..., None, None], W, np.eye(b))


def precoder_system(U, W, ops, mask):
    """Quadratic and linear terms ``(A, B)`` of every precoder subproblem.

    ``A = P1^H (sum_i U_i W_i U_i^H) P1`` plus the conjugated image term from
    subcarrier ``-s``; ``B = P1^H U_k W_k``. Given U and W the subproblems are
    decoupled across (k, s).
    """
    Um = np.where(mask[..., None, None], U, 0.0)
    M = np.einsum("skab,skbc->sac", Um @ W, herm(Um))
    p1, p2 = ops.p1, ops.p2
    p2m = p2[::-1]
    A = herm(p1) @ M[:, None] @ p1 + np.conj(herm(p2m) @ M[::-1, None] @ p2m)
    A = 0.5 * (A + herm(A))
    B = herm(p1) @ Um @ W
    return A, B


def solve_power_constrained(A, B, p, tol=1e-12, max_steps=200):
    """Minimize ``Tr(V^H A V) - 2 Re Tr(V^H B)`` s.t. ``||V||_F^2 <= p``.

    Batched over leading axes. Returns ``(V, vartheta)`` with
    ``V = (A + vartheta I)^{-1} B``; vartheta is 0 when the unconstrained
    solution is feasible and otherwise found by bisection, keeping the
    feasible end of the bracket.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    batch = A.shape[:-2]
    p = np.broadcast_to(np.asarray(p, dtype=float), batch)
    lam, Q = np.linalg.eigh(A)
    CQ = herm(Q) @ B
    wts = np.sum(np.abs(CQ) ** 2, axis=-1)
    lam_floor = 1e-14 * np.maximum(np.abs(lam).max(axis=-1, keepdims=True), 1e-300)

    def power(theta):
        den = lam + theta[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(wts > 0, wts / den ** 2, 0.0)
        bad = (den <= lam_floor) & (wts > 0)
        return np.where(bad.any(axis=-1), np.inf, terms.sum(axis=-1))

    theta = np.zeros(batch)
    active = power(theta) > p
    if np.any(active):
        hi = np.where(active, 1.0, 0.0)
        for _ in range(2000):
            grow = active & (power(hi) > p)
            if not grow.any():
                break
            hi = np.where(grow, 2.0 * hi, hi)
        else:
            raise RuntimeError("bisection failed to bracket the multiplier")
        lo = np.zeros(batch)
        for _ in range(int(max_steps)):
            ph = power(hi)
            done = ~active | (np.abs(ph - p) <= tol * p) | (hi - lo <= 1e-16 * hi)
            if done.all():
                break
            mid = 0.5 * (lo + hi)
            over = power(mid) > p
            lo = np.where(active & ~done & over, mid, lo)
            hi = np.where(active & ~done & ~over, mid, hi)
        theta = np.where(active, hi, 0.0)
    den = lam + theta[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(wts > 0, 1.0 / den, 0.0)
    V = Q @ (scale[..., None] * CQ)
    return V, theta


def update_precoders(U, W, ops, power_mw, mask, opts: SolverOptions | None = None):
    """Exact precoder update for all served (k, s); returns ``(V, multipliers)``."""
    opts = opts or SolverOptions()
    A, B = precoder_system(U, W, ops, mask)
    V, theta = solve_power_constrained(A, B, power_mw, opts.bisection_tol, opts.bisection_max_steps)
    V = np.where(mask[..., None, None], V, 0.0)
    return V, np.where(mask, theta, 0.0)


def update_precoder(U, W, ops, power_mw, mask, k: int, s: int, opts: SolverOptions | None = None):
    """``(V_k^s, vartheta_k^s)`` for one UE and signed subcarrier."""
    p = position(s, mask.shape[0])
    V, theta = update_precoders(U, W, ops, power_mw, mask, opts)
    return V[p, k], float(theta[p, k])


def update_ris(U, W, V, theta, channels, dist, mask, opts: SolverOptions | None = None):
    """Globally minimize ``sum Tr(W E)`` over theta, warm-started at ``theta``.

    Returns ``(theta, sweeps)``.
    """
    opts = opts or SolverOptions()
    gus = build_gamma_upsilon(U, W, V, channels, dist, mask)
    qf = build_real_qcqp(gus)
    r = np.abs(theta)
    theta0 = np.where(r > 1.0, theta / np.maximum(r, 1e-300), theta)
    nu0 = np.concatenate([theta0.real, theta0.imag])
    sol = solve_ris(qf, nu0, opts.ris_tol, opts.ris_max_sweeps)
    return sol.theta, sol.sweeps


def _violation(V, theta, power_mw, mask) -> float:
    pw = np.sum(np.abs(V) ** 2, axis=(-2, -1))[mask]
    v_pow = float(np.max(np.maximum(pw - power_mw, 0.0)) / power_mw) if pw.size else 0.0
    v_ris = float(np.max(np.maximum(np.abs(theta) - 1.0, 0.0))) if theta.size else 0.0
    return max(v_pow, v_ris)


def outer_solve(channels: ChannelSet, dist: DistortionMatrices, cfg: ScenarioConfig,
                alloc: AllocationMap, opts: SolverOptions | None = None, theta0=None,
                eval_dist: DistortionMatrices | None = None, realization: int = 0) -> SolverState:
    """Run U -> W -> V -> theta rounds until the relative objective change drops below ``opts.tol``.

    ``dist`` is the impairment model the solver optimizes for; rates in the
    trace and ``state.sum_rate`` are evaluated with ``eval_dist`` (defaults
    to ``dist``).
    """
    opts = opts or SolverOptions()
    eval_dist = dist if eval_dist is None else eval_dist
    mask = alloc.mask()
    sigma2, pmw = cfg.noise_variance, cfg.power_mw
    S = cfg.num_subcarriers
    theta = random_theta(cfg, realization) if theta0 is None else np.asarray(theta0, dtype=complex)
    V = initial_precoders(cfg, mask)
    ops = build_operators(channels, theta, dist)
    U = update_combiners(V, ops, sigma2, mask)
    b = cfg.streams
    W = update_weights(U, V, ops, sigma2, mask) if opts.update_weights else \
        np.broadcast_to(np.eye(b), mask.shape + (b, b)).astype(complex)
    state = SolverState(U=U, W=W, V=V, theta=theta.copy(), multipliers=np.zeros(mask.shape))

    def rate():
        ops_eval = ops if eval_dist is dist else build_operators(channels, state.theta, eval_dist)
        return float(np.sum(spectral_efficiencies(state.V, ops_eval, sigma2, mask)) / S)

    def objective():
        return wmmse_objective(state.U, state.V, state.W, ops, sigma2, mask)

    f_prev = objective()
    state.trace.append(TraceRecord(0, f_prev, rate(), _violation(V, theta, pmw, mask)))
    state.theta_trace.append(state.theta.copy())
    for q in range(1, opts.max_outer_iters + 1):
        state.U = update_combiners(state.V, ops, sigma2, mask)
        if opts.record_blocks:
            state.block_trace.append((q, "U", objective()))
        if opts.update_weights:
            state.W = update_weights(state.U, state.V, ops, sigma2, mask)
        if opts.record_blocks:
            state.block_trace.append((q, "W", objective()))
        state.V, state.multipliers = update_precoders(state.U, state.W, ops, pmw, mask, opts)
        pw = np.sum(np.abs(state.V) ** 2, axis=(-2, -1))
        state.kkt.append({
            "iteration": q,
            "max_power_ratio": float(np.max(pw[mask] / pmw)) if mask.any() else 0.0,
            "max_slackness": float(np.max(state.multipliers * np.abs(pmw - pw)) / pmw),
        })
        if opts.record_blocks:
            state.block_trace.append((q, "V", objective()))
        if opts.optimize_ris:
            state.theta, sweeps = update_ris(state.U, state.W, state.V, state.theta,
                                             channels, dist, mask, opts)
            state.ris_sweeps.append(sweeps)
            ops = build_operators(channels, state.theta, dist)
        if opts.record_blocks:
            state.block_trace.append((q, "theta", objective()))
        f = objective()
        state.iteration = q
        state.trace.append(TraceRecord(q, f, rate(), _violation(state.V, state.theta, pmw, mask)))
        state.theta_trace.append(state.theta.copy())
        change = abs(f_prev - f) / max(abs(f_prev), 1.0)
        f_prev = f
        if change < opts.tol:
            state.converged = True
            break
    else:
        log.info("no convergence after %d outer iterations", opts.max_outer_iters)
    state.sum_rate = state.trace[-1].sum_rate
    return state
