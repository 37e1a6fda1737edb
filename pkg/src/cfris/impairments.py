"""IQ imbalance at UE transmitters and AP receivers.

All distortion matrices are diagonal, so they are stored as vectors; the
dense forms are available as properties.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import IQI_LEVELS, TAG_IQI, ScenarioConfig, derive_rng

__all__ = ["IQI_RANGES", "IqiParams", "DistortionMatrices", "sample_iqi",
           "build_distortion", "ideal_distortion"]

# level -> (amplitude half-width, phase half-width in degrees)
IQI_RANGES = {
    "ideal": (0.0, 0.0),
    "level1": (0.1, 10.0),
    "level2": (0.2, 20.0),
    "level3": (0.3, 30.0),
}


@dataclass(frozen=True)
class IqiParams:
    """Amplitude (``amp_*``) and phase (``phase_*``, radians) mismatches.

    Shapes: ``amp_tx``/``phase_tx`` (K, N_t), ``amp_rx``/``phase_rx`` (C, N_r).
    """

    amp_tx: np.ndarray
    phase_tx: np.ndarray
    amp_rx: np.ndarray
    phase_rx: np.ndarray

    def __post_init__(self):
        if np.any(self.amp_tx <= 0) or np.any(self.amp_rx <= 0):
            raise ValueError("amplitude mismatches must be strictly positive")

    @property
    def is_ideal(self) -> bool:
        return (np.all(self.amp_tx == 1) and np.all(self.amp_rx == 1)
                and np.all(self.phase_tx == 0) and np.all(self.phase_rx == 0))


def sample_iqi(level: str, cfg: ScenarioConfig, rng=None, realization: int = 0) -> IqiParams:
    """Independent per-antenna draws from the uniform ranges of ``level``.

    The underlying uniforms do not depend on ``level``: the same stream at a
    milder level yields proportionally milder mismatches.
    """
    if level not in IQI_LEVELS:
        raise ValueError(f"unknown IQI level {level!r}")
    if rng is None:
        rng = derive_rng(cfg.rng_seed, realization, TAG_IQI)
    K, Nt, C, Nr = cfg.num_ues, cfg.tx_antennas, cfg.num_aps, cfg.rx_antennas
    unit = [rng.uniform(-1.0, 1.0, size=shape) for shape in ((K, Nt), (K, Nt), (C, Nr), (C, Nr))]
    amp_w, phase_w = IQI_RANGES[level]
    phase_w = np.deg2rad(phase_w)
    if level == "ideal":
        return IqiParams(np.ones((K, Nt)), np.zeros((K, Nt)), np.ones((C, Nr)), np.zeros((C, Nr)))
    return IqiParams(1.0 + amp_w * unit[0], phase_w * unit[1],
                     1.0 + amp_w * unit[2], phase_w * unit[3])


@dataclass(frozen=True)
class DistortionMatrices:
    """Diagonals of K1, K2 (length C*N_r) and D1k, D2k (shape (K, N_t))."""

    k1: np.ndarray
    k2: np.ndarray
    d1: np.ndarray
    d2: np.ndarray

    @property
    def K1(self) -> np.ndarray:
        return np.diag(self.k1)

    @property
    def K2(self) -> np.ndarray:
        return np.diag(self.k2)

    def D1(self, k: int) -> np.ndarray:
        return np.diag(self.d1[k])

    def D2(self, k: int) -> np.ndarray:
        return np.diag(self.d2[k])

    @property
    def is_ideal(self) -> bool:
        return not np.any(self.k2) and not np.any(self.d2)


def build_distortion(params: IqiParams) -> DistortionMatrices:
    """K1 = blockdiag((I + L_r e^{-jψ_r})/2), K2 = I - K1*, D1k = (I + L_t e^{jψ_t})/2, D2k = I - D1k*."""
    k1 = ((1.0 + params.amp_rx * np.exp(-1j * params.phase_rx)) / 2.0).reshape(-1)
    d1 = (1.0 + params.amp_tx * np.exp(1j * params.phase_tx)) / 2.0
    return DistortionMatrices(k1=k1, k2=1.0 - k1.conj(), d1=d1, d2=1.0 - d1.conj())


def ideal_distortion(cfg: ScenarioConfig) -> DistortionMatrices:
    return build_distortion(sample_iqi("ideal", cfg))
