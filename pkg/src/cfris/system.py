"""Signal-model algebra: effective channels, P1/P2 operators, covariances, rates and MSEs.

Arrays are batched over subcarrier positions and UEs:

====== ===================== ==========================
name   shape                 meaning
====== ===================== ==========================
V      (S, K, N_t, b)        precoders
U      (S, K, C*N_r, b)      combiners
W      (S, K, b, b)          MSE weights
P1, P2 (S, K, C*N_r, N_t)    direct / image operators
mask   (S, K)                allocation (True = served)
====== ===================== ==========================

Position ``p`` and ``S-1-p`` are mirrored subcarriers, so ``X[::-1]`` is the
image-subcarrier view of any per-subcarrier array ``X``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSet
from .impairments import DistortionMatrices
from .scenario import position

__all__ = [
    "RisState",
    "BlockVariables",
    "EffectiveOperators",
    "effective_channels",
    "effective_channel",
    "build_operators",
    "build_p_operators",
    "signal_terms",
    "total_covariance",
    "interference_covariances",
    "interference_covariance",
    "spectral_efficiencies",
    "spectral_efficiency",
    "mse_matrices",
    "mse_matrix",
    "optimal_mse_matrices",
    "wmmse_objective",
    "sum_rate",
    "hermitian_solve",
]

RIDGE_COND = 1e12


def herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


def hermitian_solve(A, B):
    """Solve ``A X = B`` for batched Hermitian positive definite ``A``.

    A ridge of ``1e-12 * tr(A)/n`` is added to any matrix whose condition
    number exceeds 1e12.
    """
    A = np.asarray(A)
    lam = np.linalg.eigvalsh(A)
    n = A.shape[-1]
    bad = lam[..., 0] * RIDGE_COND < lam[..., -1]
    if np.any(bad):
        ridge = 1e-12 * np.real(np.trace(A, axis1=-2, axis2=-1)) / n
        A = A + (bad * ridge)[..., None, None] * np.eye(n)
    return np.linalg.solve(A, B)


@dataclass
class RisState:
    """RIS coefficients ``theta`` (length QM); ``Theta = diag(theta)``."""

    theta: np.ndarray

    @property
    def Theta(self) -> np.ndarray:
        return np.diag(self.theta)

    @property
    def nu(self) -> np.ndarray:
        """Real stacking ``[Re(theta); Im(theta)]``."""
        return np.concatenate([self.theta.real, self.theta.imag])

    @classmethod
    def from_nu(cls, nu) -> "RisState":
        n = len(nu) // 2
        return cls(np.asarray(nu[:n]) + 1j * np.asarray(nu[n:]))

    def block(self, j: int, M: int) -> np.ndarray:
        """Coefficients of RIS ``j`` (0-based)."""
        return self.theta[j * M:(j + 1) * M]

    def max_modulus(self) -> float:
        return float(np.max(np.abs(self.theta))) if self.theta.size else 0.0

    def copy(self) -> "RisState":
        return RisState(self.theta.copy())


@dataclass
class BlockVariables:
    V: np.ndarray
    U: np.ndarray
    W: np.ndarray

    def copy(self) -> "BlockVariables":
        return BlockVariables(self.V.copy(), self.U.copy(), self.W.copy())


@dataclass(frozen=True)
class EffectiveOperators:
    hbar: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    dist: DistortionMatrices


def effective_channels(channels: ChannelSet, theta) -> np.ndarray:
    """``G^s diag(theta) H_k^s + R_k^s`` for every (s, k)."""
    theta = np.asarray(theta)
    if theta.shape != (channels.G.shape[-1],):
        raise ValueError(f"theta must have length {channels.G.shape[-1]}")
    return channels.G[:, None] @ (theta[:, None] * channels.H) + channels.R


def effective_channel(channels: ChannelSet, ris, k: int, s: int) -> np.ndarray:
    theta = ris.theta if isinstance(ris, RisState) else np.asarray(ris)
    H, G, R = channels.at(s)
    if theta.shape != (G.shape[1],):
        raise ValueError(f"theta must have length {G.shape[1]}")
    return G @ (theta[:, None] * H[k]) + R[k]


def build_operators(channels: ChannelSet, theta, dist: DistortionMatrices) -> EffectiveOperators:
    """P1 = K1 Hb^s D1 + K2 Hb^{-s*} D2 and P2 = K2 Hb^{-s*} D1* + K1 Hb^s D2*."""
    hb = effective_channels(channels, theta)
    hbm = np.conj(hb[::-1])
    k1 = dist.k1[None, None, :, None]
    k2 = dist.k2[None, None, :, None]
    d1 = dist.d1[None, :, None, :]
    d2 = dist.d2[None, :, None, :]
    p1 = k1 * hb * d1 + k2 * hbm * d2
    p2 = k2 * hbm * np.conj(d1) + k1 * hb * np.conj(d2)
    return EffectiveOperators(hb, p1, p2, dist)


def build_p_operators(channels: ChannelSet, ris, dist: DistortionMatrices, k: int, s: int):
    """(P1_k^s, P2_k^s) for one UE and signed subcarrier."""
    hb = effective_channel(channels, ris, k, s)
    hbm = np.conj(effective_channel(channels, ris, k, -s))
    K1, K2, D1, D2 = dist.K1, dist.K2, dist.D1(k), dist.D2(k)
    p1 = K1 @ hb @ D1 + K2 @ hbm @ D2
    p2 = K2 @ hbm @ D1.conj() + K1 @ hb @ D2.conj()
    return p1, p2


# ----------------------------------------------------------------------------
# Covariances, rates, MSEs
# ----------------------------------------------------------------------------

def signal_terms(V, ops: EffectiveOperators):
    """``F1 = P1 V`` (direct) and ``F2 = P2 V^{-s*}`` (image) for every (s, k)."""
    return ops.p1 @ V, ops.p2 @ np.conj(V[::-1])


def _noise_diag(dist: DistortionMatrices, sigma2: float):
    return sigma2 * (np.abs(dist.k1) ** 2 + np.abs(dist.k2) ** 2)


def total_covariance(V, ops: EffectiveOperators, sigma2: float):
    """Received covariance per subcarrier, ``P1_k V_k V_k^H P1_k^H + J_k^s`` (any k).

    Returns ``(C, F1)`` with C of shape (S, CN_r, CN_r).
    """
    F1, F2 = signal_terms(V, ops)
    C = np.einsum("skab,skcb->sac", F1, F1.conj()) + np.einsum("skab,skcb->sac", F2, F2.conj())
    idx = np.arange(C.shape[-1])
    C[:, idx, idx] += _noise_diag(ops.dist, sigma2)
    return C, F1


def interference_covariances(V, ops: EffectiveOperators, sigma2: float) -> np.ndarray:
    """J_k^s for every (s, k): everything received on s except UE k's own direct signal."""
    C, F1 = total_covariance(V, ops, sigma2)
    return C[:, None] - F1 @ herm(F1)


def interference_covariance(V, ops, sigma2, k: int, s: int) -> np.ndarray:
    p = position(s, V.shape[0])
    return interference_covariances(V, ops, sigma2)[p, k]


def spectral_efficiencies(V, ops: EffectiveOperators, sigma2: float, mask=None) -> np.ndarray:
    """``log2|I + V^H P1^H J^{-1} P1 V|`` per (s, k); zero where ``mask`` is False."""
    if sigma2 <= 0:
        raise ValueError("σ² must be positive: J is singular otherwise")
    C, F1 = total_covariance(V, ops, sigma2)
    J = C[:, None] - F1 @ herm(F1)
    b = F1.shape[-1]
    X = np.eye(b) + herm(F1) @ hermitian_solve(J, F1)
    X = 0.5 * (X + herm(X))
    se = np.linalg.slogdet(X)[1] / np.log(2.0)
    if mask is not None:
        se = np.where(mask, se, 0.0)
    return se


def spectral_efficiency(V, ops, sigma2, k: int, s: int) -> float:
    p = position(s, V.shape[0])
    return float(spectral_efficiencies(V, ops, sigma2)[p, k])


def sum_rate(V, ops, sigma2, mask) -> float:
    """Per-subcarrier sum-rate: total SE over (k, s) divided by S."""
    return float(np.sum(spectral_efficiencies(V, ops, sigma2, mask)) / V.shape[0])


def mse_matrices(U, V, ops: EffectiveOperators, sigma2: float) -> np.ndarray:
    """E = I - U^H P1 V - V^H P1^H U + U^H (P1 V V^H P1^H + J) U."""
    C, F1 = total_covariance(V, ops, sigma2)
    UhF = herm(U) @ F1
    b = U.shape[-1]
    E = np.eye(b) - UhF - herm(UhF) + herm(U) @ C[:, None] @ U
    return 0.5 * (E + herm(E))


def mse_matrix(U, V, ops, sigma2, k: int, s: int) -> np.ndarray:
    p = position(s, V.shape[0])
    return mse_matrices(U, V, ops, sigma2)[p, k]


def optimal_mse_matrices(V, ops, sigma2) -> np.ndarray:
    """E^o = I - V^H P1^H (P1 V V^H P1^H + J)^{-1} P1 V."""
    C, F1 = total_covariance(V, ops, sigma2)
    b = F1.shape[-1]
    E = np.eye(b) - herm(F1) @ hermitian_solve(C[:, None], F1)
    return 0.5 * (E + herm(E))


def wmmse_objective(U, V, W, ops: EffectiveOperators, sigma2: float, mask) -> float:
    """sum over served (k, s) of ``Tr(W E) - ln|W|``.

    The log is natural so that ``W = E^{-1}`` is the exact minimizer over W;
    see :mod:`cfris.wmmse`.
    """
    Wm = W[mask]
    lam = np.linalg.eigvalsh(0.5 * (Wm + herm(Wm)))
    if lam.size and lam.min() < -1e-9 * max(1.0, np.abs(lam).max()):
        raise ValueError("weight matrices must be positive semidefinite")
    E = mse_matrices(U, V, ops, sigma2)[mask]
    tr = np.real(np.einsum("nab,nba->n", Wm, E))
    logdet = np.sum(np.log(np.clip(lam, 1e-300, None)), axis=-1)
    return float(np.sum(tr - logdet))
