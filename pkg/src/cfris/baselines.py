"""Comparison schemes sharing the solver and the rate evaluation of the proposed method.

Every scheme is scored with the combiner-optimal rate under the *true*
impairments, whatever model it used internally.
"""
from __future__ import annotations

import enum

import numpy as np

from .channel import ChannelSet
from .impairments import DistortionMatrices, ideal_distortion
from .scenario import AllocationMap, ScenarioConfig
from .system import build_operators, mse_matrices
from .wmmse import SolverOptions, SolverState, outer_solve, random_theta

__all__ = ["Scheme", "run_proposed", "run_mmse", "run_random_ris", "run_blind", "run_scheme",
           "combiner_rate"]


class Scheme(str, enum.Enum):
    PROPOSED = "proposed"
    MMSE = "mmse"
    RANDOM = "random"
    BLIND = "blind"


def _with(opts: SolverOptions | None, **changes) -> SolverOptions:
    opts = opts or SolverOptions()
    return SolverOptions(**{**opts.__dict__, **changes})


def combiner_rate(state: SolverState, channels: ChannelSet, dist: DistortionMatrices,
                  cfg: ScenarioConfig, alloc: AllocationMap) -> float:
    """Per-subcarrier ``sum -log2|E|`` with the state's own combiners under ``dist``.

    Coincides with the reported rate when the combiners are MMSE-optimal for
    ``dist``; for mismatched combiners it is a pessimistic diagnostic.
    """
    mask = alloc.mask()
    ops = build_operators(channels, state.theta, dist)
    E = mse_matrices(state.U, state.V, ops, cfg.noise_variance)[mask]
    logdet = np.linalg.slogdet(E)[1] / np.log(2.0)
    return float(-np.sum(logdet) / cfg.num_subcarriers)


def run_proposed(channels, dist, cfg, alloc, opts=None, realization=0) -> SolverState:
    return outer_solve(channels, dist, cfg, alloc, opts, realization=realization)


def run_mmse(channels, dist, cfg, alloc, opts=None, realization=0) -> SolverState:
    """Same loop with the weights frozen at identity."""
    return outer_solve(channels, dist, cfg, alloc, _with(opts, update_weights=False),
                       realization=realization)


def run_random_ris(channels, dist, cfg, alloc, opts=None, realization=0) -> SolverState:
    """IQI-aware U, W, V with the RIS frozen at its random initial phases."""
    theta = random_theta(cfg, realization)
    return outer_solve(channels, dist, cfg, alloc, _with(opts, optimize_ris=False), theta0=theta,
                       realization=realization)


def run_blind(channels, dist, cfg, alloc, opts=None, realization=0) -> SolverState:
    """Optimize for ideal hardware with a frozen random RIS, then score under ``dist``."""
    theta = random_theta(cfg, realization)
    state = outer_solve(channels, ideal_distortion(cfg), cfg, alloc, _with(opts, optimize_ris=False),
                        theta0=theta, eval_dist=dist, realization=realization)
    state.diagnostics["combiner_rate"] = combiner_rate(state, channels, dist, cfg, alloc)
    return state


_RUNNERS = {
    Scheme.PROPOSED: run_proposed,
    Scheme.MMSE: run_mmse,
    Scheme.RANDOM: run_random_ris,
    Scheme.BLIND: run_blind,
}


def run_scheme(scheme, channels, dist, cfg, alloc, opts=None, realization=0) -> SolverState:
    state = _RUNNERS[Scheme(scheme)](channels, dist, cfg, alloc, opts, realization)
    state.diagnostics.setdefault("combiner_rate", combiner_rate(state, channels, dist, cfg, alloc))
    return state
