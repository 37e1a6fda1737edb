"""RIS coefficient subproblem.

With combiners, weights and precoders fixed, the part of ``sum Tr(W E)`` that
depends on ``theta`` is a convex real quadratic in ``nu = [Re theta; Im theta]``

    Pi(theta) = nu^T Delta nu + 2 omega^T nu,

subject to one unit-disk constraint per RIS element. It is minimized by cyclic
exact minimization over the 2D blocks ``(nu[l], nu[l + QM])``.

Signals entering ``Pi`` are written as ``a Theta B + c Theta^* d + e`` with
``a = K1 G^s``, ``c = K2 G^{-s*}`` and ``e`` independent of ``theta``;
``B``/``d`` collect UE-side channels, IQI and precoders for the direct
(``V^s``) and image (``V^{-s*}``) streams.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .channel import ChannelSet
from .impairments import DistortionMatrices
from .system import herm

__all__ = [
    "GammaUpsilonSet",
    "QuadraticForm",
    "build_gamma_upsilon",
    "build_real_qcqp",
    "t_operator",
    "trust_region_2d",
    "solve_block",
    "solve_ris",
    "oracle_projected_gradient",
    "project_blocks",
]

FAMILIES = ("hs", "hc", "ts", "tc")
# (e1, e2, e3, e4) signature of each family in Delta.
T_SIGNS = {"hs": (1, -1, 1, 1), "tc": (1, 1, -1, 1), "hc": (1, 1, 1, -1), "ts": (1, -1, -1, -1)}


@dataclass
class GammaUpsilonSet:
    """Building blocks of the RIS objective.

    ``Upsilon`` matrices are the same for both stream indices (i = 1, 2) and
    are produced on demand from ``weights[s, k] = U W U^H``; ``gamma[mu]``
    has shape (S, 2, QM, QM) with the stream index on axis 1; ``phi[s, k]``
    is the diagonal of Phi_{k,s}, i.e. the linear coefficient vector
    contributed by UE k on subcarrier s.
    """

    a: np.ndarray          # (S, CNr, QM)   K1 G^s
    c: np.ndarray          # (S, CNr, QM)   K2 G^{-s*}
    weights: np.ndarray    # (S, K, CNr, CNr)
    gamma: dict
    phi: np.ndarray        # (S, K, QM)

    def upsilon(self, mu: str, k: int | None = None, p: int | None = None) -> np.ndarray:
        """Upsilon_{mu,k}^{s} at position ``p``; summed over k when ``k`` is None."""
        A = self.weights.sum(axis=1) if k is None else self.weights[:, k]
        left = self.c if mu in ("ts", "tc") else self.a
        right = self.c if mu in ("hc", "tc") else self.a
        out = herm(left) @ A @ right
        return out if p is None else out[p]


@dataclass
class QuadraticForm:
    """``nu^T Delta nu + 2 omega^T nu`` with its complex-form ingredients."""

    sigma: dict
    phi_lin: np.ndarray
    delta: np.ndarray
    omega: np.ndarray
    delta_sym: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.delta_sym = 0.5 * (self.delta + self.delta.T)

    @property
    def size(self) -> int:
        return self.phi_lin.size

    def value(self, nu) -> float:
        nu = np.asarray(nu, dtype=float)
        return float(nu @ self.delta @ nu + 2.0 * self.omega @ nu)

    def value_complex(self, theta) -> float:
        """Complex form: the hs/ts/hc/tc quadratics plus ``2 Re(phi^T theta)``."""
        t = np.asarray(theta)
        sg = self.sigma
        val = (t.conj() @ sg["hs"] @ t + t @ sg["ts"] @ t
               + t.conj() @ sg["hc"] @ t.conj() + t @ sg["tc"] @ t.conj())
        return float(np.real(val) + 2.0 * np.real(self.phi_lin @ t))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.delta_sym)[0])


def t_operator(sigma, e1, e2, e3, e4) -> np.ndarray:
    re, im = sigma.real, sigma.imag
    return np.block([[e1 * re, e2 * im], [e3 * im, e4 * re]])


def _stream_factors(U, W, V, channels: ChannelSet, dist: DistortionMatrices, mask):
    H, G, R = channels.H, channels.G, channels.R
    Vm = np.where(mask[..., None, None], V, 0.0)
    Vimg = np.conj(Vm[::-1])
    d1 = dist.d1[None, :, None, :]
    d2 = dist.d2[None, :, None, :]
    k1 = dist.k1[None, None, :, None]
    k2 = dist.k2[None, None, :, None]
    Hm = np.conj(H[::-1])
    Rm = np.conj(R[::-1])
    B1 = (H * d1) @ Vm
    B2 = (H * np.conj(d2)) @ Vimg
    D1 = (Hm * d2) @ Vm
    D2 = (Hm * np.conj(d1)) @ Vimg
    e1 = (k1 * R * d1 + k2 * Rm * d2) @ Vm
    e2 = (k2 * Rm * np.conj(d1) + k1 * R * np.conj(d2)) @ Vimg
    a = dist.k1[None, :, None] * G
    c = dist.k2[None, :, None] * np.conj(G[::-1])
    Um = np.where(mask[..., None, None], U, 0.0)
    return a, c, Um, B1, B2, D1, D2, e1, e2


def build_gamma_upsilon(U, W, V, channels: ChannelSet, dist: DistortionMatrices, mask) -> GammaUpsilonSet:
    """Assemble the Gamma, Upsilon and Phi blocks for fixed U, W, V."""
    a, c, Um, B1, B2, D1, D2, e1, e2 = _stream_factors(U, W, V, channels, dist, mask)
    weights = Um @ W @ herm(Um)
    outer = lambda x, y: np.einsum("skqb,skrb->sqr", x, y.conj())  # noqa: E731
    gamma = {
        "hs": np.stack([outer(B1, B1), outer(B2, B2)], axis=1),
        "tc": np.stack([outer(D1, D1), outer(D2, D2)], axis=1),
        "ts": np.stack([outer(B1, D1), outer(B2, D2)], axis=1),
        "hc": np.stack([outer(D1, B1), outer(D2, B2)], axis=1),
    }
    # Cross terms with the theta-free part e, summed over all transmitting UEs.
    X = outer(B1, e1) + outer(B2, e2)          # (S, QM, CNr)
    Y = outer(e1, D1) + outer(e2, D2)          # (S, CNr, QM)
    Ma = weights @ a[:, None]                  # (S, K, CNr, QM)
    cHM = herm(c)[:, None] @ weights           # (S, K, QM, CNr)
    phi = (np.einsum("sqr,skrq->skq", X, Ma)
           + np.einsum("skqr,srq->skq", cHM, Y))
    # Desired-signal terms -2 Re Tr(W U^H P1 V).
    BWUh = B1 @ W @ herm(Um)                   # (S, K, QM, CNr)
    cHUW = herm(c)[:, None] @ Um @ W           # (S, K, QM, b)
    phi -= np.einsum("skqr,srq->skq", BWUh, a)
    phi -= np.einsum("skqb,skqb->skq", cHUW, D1.conj())
    return GammaUpsilonSet(a=a, c=c, weights=weights, gamma=gamma, phi=phi)


def build_real_qcqp(gus: GammaUpsilonSet, probe: bool = True) -> QuadraticForm:
    """Sigma_mu = sum_s Upsilon_mu^s ⊙ (Gamma_mu^{1,s} + Gamma_mu^{2,s})^T, then Delta and omega."""
    sigma = {}
    for mu in FAMILIES:
        ups = gus.upsilon(mu)
        gam = gus.gamma[mu].sum(axis=1)
        sigma[mu] = np.sum(ups * np.swapaxes(gam, -1, -2), axis=0)
    phi_lin = gus.phi.sum(axis=(0, 1))
    delta = sum(t_operator(sigma[mu], *T_SIGNS[mu]) for mu in FAMILIES)
    omega = np.concatenate([phi_lin.real, -phi_lin.imag])
    qf = QuadraticForm(sigma=sigma, phi_lin=phi_lin, delta=delta, omega=omega)
    if probe:
        rng = np.random.default_rng(12345)
        n = phi_lin.size
        theta = rng.uniform(0, 1, n) * np.exp(2j * np.pi * rng.uniform(size=n))
        nu = np.concatenate([theta.real, theta.imag])
        lhs, rhs = qf.value_complex(theta), qf.value(nu)
        if abs(lhs - rhs) > 1e-8 * (1.0 + abs(lhs)):
            raise RuntimeError(f"real/complex QCQP mismatch: {lhs} vs {rhs}")
    return qf


def trace_form_objective(gus: GammaUpsilonSet, theta) -> float:
    """Pi(Theta) through the trace expressions, per (k, s), without Hadamard folding."""
    Th = np.diag(theta)
    total = 0.0
    S, K = gus.phi.shape[:2]
    for p in range(S):
        for k in range(K):
            val = 2.0 * np.real(np.trace(Th * gus.phi[p, k][None, :]))
            for i in range(2):
                val += np.trace(Th.conj().T @ gus.upsilon("hs", k, p) @ Th @ gus.gamma["hs"][p, i])
                val += np.trace(Th.T @ gus.upsilon("ts", k, p) @ Th @ gus.gamma["ts"][p, i])
                val += np.trace(Th.conj().T @ gus.upsilon("hc", k, p) @ Th.conj() @ gus.gamma["hc"][p, i])
                val += np.trace(Th.T @ gus.upsilon("tc", k, p) @ Th.conj() @ gus.gamma["tc"][p, i])
            total += float(np.real(val))
    return total


# ----------------------------------------------------------------------------
# 2D block solver and BCD
# ----------------------------------------------------------------------------

@njit(cache=True)
def _trs2(a11, a12, a22, g1, g2):
    """Exact minimizer of x^T A x + 2 g^T x over the unit disk, A 2x2 symmetric PSD."""
    gn = np.hypot(g1, g2)
    if gn == 0.0:
        return 0.0, 0.0
    m = 0.5 * (a11 + a22)
    r = np.hypot(0.5 * (a11 - a22), a12)
    l1, l2 = m - r, m + r
    if r == 0.0:
        q1x, q1y, q2x, q2y = 1.0, 0.0, 0.0, 1.0
    else:
        vx, vy = a12, l2 - a11
        wx, wy = l2 - a22, a12
        if np.hypot(vx, vy) >= np.hypot(wx, wy):
            nrm = np.hypot(vx, vy)
            q2x, q2y = vx / nrm, vy / nrm
        else:
            nrm = np.hypot(wx, wy)
            q2x, q2y = wx / nrm, wy / nrm
        q1x, q1y = -q2y, q2x
    t1 = q1x * g1 + q1y * g2
    t2 = q2x * g1 + q2y * g2
    if l1 > 0.0:
        c1, c2 = -t1 / l1, -t2 / l2
        if c1 * c1 + c2 * c2 <= 1.0:
            return c1 * q1x + c2 * q2x, c1 * q1y + c2 * q2y
    lo = max(0.0, -l1)
    if abs(t1) <= 1e-15 * gn:
        # Hard case candidate: the secular equation only sees the second mode.
        d2 = l2 + lo
        c2 = -t2 / d2 if d2 > 0.0 else 0.0
        if l1 <= 0.0 and c2 * c2 <= 1.0:
            c1 = np.sqrt(1.0 - c2 * c2)
            return c1 * q1x + c2 * q2x, c1 * q1y + c2 * q2y
        mu = max(abs(t2) - l2, lo)
        c2 = -t2 / (l2 + mu)
        c2 = 1.0 if c2 > 1.0 else (-1.0 if c2 < -1.0 else c2)
        c1 = np.sqrt(max(0.0, 1.0 - c2 * c2))
        return c1 * q1x + c2 * q2x, c1 * q1y + c2 * q2y
    # Newton on 1/||x(mu)|| - 1, increasing and concave; start left of the root.
    mu = 0.0 if l1 > 0.0 else -l1 + 0.5 * abs(t1)
    for _ in range(100):
        d1, d2 = l1 + mu, l2 + mu
        s2 = t1 * t1 / (d1 * d1) + t2 * t2 / (d2 * d2)
        nrm = np.sqrt(s2)
        phi = 1.0 / nrm - 1.0
        if abs(phi) <= 1e-15:
            break
        dphi = (t1 * t1 / (d1 * d1 * d1) + t2 * t2 / (d2 * d2 * d2)) / (nrm * nrm * nrm)
        step = phi / dphi
        if not (-step > 0.0):
            break
        mu -= step
    d1, d2 = l1 + mu, l2 + mu
    c1, c2 = -t1 / d1, -t2 / d2
    nrm = np.hypot(c1, c2)
    c1, c2 = c1 / nrm, c2 / nrm
    return c1 * q1x + c2 * q2x, c1 * q1y + c2 * q2y


def trust_region_2d(A, g):
    """Minimize ``x^T A x + 2 g^T x`` subject to ``||x|| <= 1`` (A symmetric PSD 2x2)."""
    A = np.asarray(A, dtype=float)
    As = 0.5 * (A + A.T)
    return np.array(_trs2(As[0, 0], As[0, 1], As[1, 1], float(g[0]), float(g[1])))


def block_terms(l: int, qf: QuadraticForm, nu):
    """2x2 matrix and effective linear term of block ``l`` with the rest of ``nu`` fixed."""
    n = qf.size
    D = qf.delta_sym
    idx = [l, l + n]
    A = D[np.ix_(idx, idx)]
    g = D[idx] @ nu - A @ np.asarray(nu)[idx] + qf.omega[idx]
    return A, g


def solve_block(l: int, qf: QuadraticForm, nu) -> np.ndarray:
    """Optimal ``(nu[l], nu[l + QM])`` with all other coordinates fixed.

    Solves the 2D unit-disk subproblem exactly; when the unconstrained minimizer
    lies outside the disk this is the constrained boundary minimizer rather
    than a radial projection, which only coincides with it for isotropic blocks.
    """
    if not 0 <= l < qf.size:
        raise IndexError(f"block index {l} out of range")
    A, g = block_terms(l, qf, nu)
    x = trust_region_2d(A, g)
    cur = np.asarray(nu)[[l, l + qf.size]]
    f = lambda y: y @ A @ y + 2 * g @ y  # noqa: E731
    return x if f(x) <= f(cur) else cur.copy()


@njit(cache=True)
def _bcd(D, w, nu, tol, max_sweeps):
    n = nu.size // 2
    grad = D @ nu + w
    f = nu @ grad + w @ nu
    sweeps = 0
    for sweep in range(max_sweeps):
        sweeps = sweep + 1
        for l in range(n):
            i, j = l, l + n
            a11, a12, a22 = D[i, i], D[i, j], D[j, j]
            x1, x2 = nu[i], nu[j]
            g1 = grad[i] - a11 * x1 - a12 * x2
            g2 = grad[j] - a12 * x1 - a22 * x2
            y1, y2 = _trs2(a11, a12, a22, g1, g2)
            old = a11 * x1 * x1 + 2 * a12 * x1 * x2 + a22 * x2 * x2 + 2 * (g1 * x1 + g2 * x2)
            new = a11 * y1 * y1 + 2 * a12 * y1 * y2 + a22 * y2 * y2 + 2 * (g1 * y1 + g2 * y2)
            if new < old:
                d1, d2 = y1 - x1, y2 - x2
                for r in range(2 * n):
                    grad[r] += D[i, r] * d1 + D[j, r] * d2
                nu[i], nu[j] = y1, y2
        f_new = nu @ grad + w @ nu
        change = f - f_new
        f = f_new
        if change <= tol * max(abs(f), 1e-300):
            break
    return nu, sweeps, f


@dataclass
class RisSolution:
    nu: np.ndarray
    sweeps: int
    objective: float

    @property
    def theta(self) -> np.ndarray:
        n = self.nu.size // 2
        return self.nu[:n] + 1j * self.nu[n:]


def project_blocks(nu) -> np.ndarray:
    nu = np.array(nu, dtype=float)
    n = nu.size // 2
    r = np.hypot(nu[:n], nu[n:])
    scale = np.where(r > 1.0, 1.0 / np.maximum(r, 1e-300), 1.0)
    nu[:n] *= scale
    nu[n:] *= scale
    return nu


def solve_ris(qf: QuadraticForm, nu0, tol: float = 1e-8, max_sweeps: int = 500) -> RisSolution:
    """Cyclic block minimization from the feasible point ``nu0``.

    Stops when a sweep lowers the objective by less than ``tol`` relative.
    """
    nu0 = np.asarray(nu0, dtype=float)
    n = qf.size
    if np.any(np.hypot(nu0[:n], nu0[n:]) > 1.0 + 1e-12):
        raise ValueError("starting point is infeasible")
    nu, sweeps, f = _bcd(np.ascontiguousarray(qf.delta_sym), qf.omega.copy(), nu0.copy(),
                         float(tol), int(max_sweeps))
    return RisSolution(nu=nu, sweeps=int(sweeps), objective=float(f))


def oracle_projected_gradient(qf: QuadraticForm, nu0, iters: int = 100_000,
                              return_history: bool = False):
    """Projected gradient with step ``1/(2L)``, ``L = lambda_max(Delta + Delta^T)``.

    Verification oracle for :func:`solve_ris`.
    """
    D2 = qf.delta + qf.delta.T
    L = max(float(np.linalg.eigvalsh(D2)[-1]), 1e-300)
    step = 1.0 / (2.0 * L)
    nu = project_blocks(nu0)
    hist = [] if return_history else None
    for _ in range(int(iters)):
        nu = project_blocks(nu - step * (D2 @ nu + 2.0 * qf.omega))
        if hist is not None:
            hist.append(qf.value(nu))
    return (nu, np.array(hist)) if return_history else nu
