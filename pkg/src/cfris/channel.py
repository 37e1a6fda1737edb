"""Rician multipath channels with ULA/UPA steering and per-subcarrier responses.

Every link draws from its own random stream (``derive_rng(seed, realization,
tag, a, b)``), so a single block of a stacked channel can be regenerated on
its own. The LOS component sits at delay 0 and is therefore identical on all
subcarriers; NLOS paths at delay ``l`` pick up ``exp(-2j*pi*l*s/S)``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import (TAG_RIS_AP, TAG_UE_AP, TAG_UE_RIS, ScenarioConfig, derive_rng,
                       position, sample_ue_positions, subcarrier_indices)

__all__ = [
    "ula_response",
    "upa_response",
    "path_loss_db",
    "TapSet",
    "ChannelSet",
    "gen_link_taps",
    "freq_response",
    "assemble_channels",
    "dump_channels",
    "load_channels",
]

LOS_SHADOW_DB = 5.8
NLOS_SHADOW_DB = 8.0


def ula_response(fc, angle, n):
    """Half-wavelength ULA steering vector ``exp(1j*pi*i*sin(angle))``.

    ``fc`` only fixes the wavelength, which cancels for half-wavelength spacing.
    """
    return np.exp(1j * np.pi * np.arange(n) * np.sin(angle))


def upa_response(fc, azimuth, elevation, m_x, m_y):
    """Half-wavelength UPA steering vector of length ``m_x * m_y``.

    The array lies in the x-z plane with its normal along y. Azimuth is
    measured from the normal in the horizontal plane, elevation from the
    horizontal plane. Element ``(i, j)`` sits at index ``i * m_y + j``.
    """
    horiz = np.exp(1j * np.pi * np.arange(m_x) * np.sin(azimuth) * np.cos(elevation))
    vert = np.exp(1j * np.pi * np.arange(m_y) * np.sin(elevation))
    return np.kron(horiz, vert)


def path_loss_db(d, fc, shadow=0.0):
    """3GPP path loss ``22 log10(d) + 28 + 20 log10(fc) + shadow`` in dB.

    LOS and NLOS share the formula and differ in the shadowing spread only.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    if fc <= 0:
        raise ValueError("carrier frequency must be positive")
    return 22.0 * np.log10(d) + 28.0 + 20.0 * np.log10(fc) + shadow


# ----------------------------------------------------------------------------
# Array geometry helpers
# ----------------------------------------------------------------------------

def _ula_angle(direction):
    # ULAs lie along x; the steering angle is measured from broadside.
    return np.arcsin(np.clip(direction[0], -1.0, 1.0))


def _upa_angles(direction):
    elevation = np.arcsin(np.clip(direction[2], -1.0, 1.0))
    azimuth = np.arctan2(direction[0], direction[1])
    return azimuth, elevation


class _Array:
    """A ULA (``shape=(n,)``) or UPA (``shape=(m_x, m_y)``)."""

    def __init__(self, shape):
        self.shape = tuple(shape)
        self.size = int(np.prod(self.shape))

    def angles(self, direction):
        if len(self.shape) == 1:
            return np.array([_ula_angle(direction)])
        return np.array(_upa_angles(direction))

    def response(self, fc, angles):
        if len(self.shape) == 1:
            return ula_response(fc, angles[0], self.shape[0])
        return upa_response(fc, angles[0], angles[1], *self.shape)


@dataclass(frozen=True)
class TapSet:
    """Time-domain description of one Rician link.

    Attributes
    ----------
    los_gain : float
        Linear LOS gain ``g = 10**(-PL/10)``.
    nlos_gains : ndarray (T, P)
        Linear NLOS gains per tap and path.
    h : ndarray (T, P)
        Small-scale CN(0, 1) path coefficients.
    aod, aoa : ndarray (T, P, n_angles)
        NLOS departure/arrival angles (1 angle for a ULA, 2 for a UPA).
    los_aod, los_aoa : ndarray (n_angles,)
        Geometric LOS angles.
    los_rx, los_tx : ndarray
        LOS steering vectors at the receive/transmit arrays.
    nlos_rx, nlos_tx : ndarray (T, P, n)
        NLOS steering vectors.
    kappa : float
        Rician factor.
    """

    los_gain: float
    nlos_gains: np.ndarray
    h: np.ndarray
    los_aod: np.ndarray
    los_aoa: np.ndarray
    aod: np.ndarray
    aoa: np.ndarray
    los_rx: np.ndarray
    los_tx: np.ndarray
    nlos_rx: np.ndarray
    nlos_tx: np.ndarray
    kappa: float

    @property
    def num_taps(self) -> int:
        return self.h.shape[0]

    def los_matrix(self) -> np.ndarray:
        amp = np.sqrt(self.kappa / (self.kappa + 1.0)) * np.sqrt(self.los_gain)
        return amp * np.outer(self.los_rx, self.los_tx.conj())

    def tap_matrices(self) -> np.ndarray:
        """Per-delay matrices (T, n_rx, n_tx); the LOS term is added to delay 0."""
        amp = np.sqrt(self.nlos_gains / (self.kappa + 1.0)) * self.h
        taps = np.einsum("tp,tpr,tpc->trc", amp, self.nlos_rx, self.nlos_tx.conj())
        taps[0] += self.los_matrix()
        return taps


def gen_link_taps(tx_pos, rx_pos, tx_shape, rx_shape, kappa, cfg: ScenarioConfig, rng):
    """Draw the taps of one link between arrays of shapes ``tx_shape``/``rx_shape``.

    LOS angles follow the geometry; each NLOS path perturbs them uniformly by
    up to ``cfg.nlos_spread_deg``. Draw order is fixed so a link is
    reproducible from its own generator.
    """
    tx_pos = np.asarray(tx_pos, dtype=float)
    rx_pos = np.asarray(rx_pos, dtype=float)
    diff = rx_pos - tx_pos
    d = float(np.linalg.norm(diff))
    if d <= 0:
        raise ValueError("transmitter and receiver positions coincide")
    u = diff / d
    tx, rx = _Array(tx_shape), _Array(rx_shape)
    fc = cfg.carrier_freq_ghz
    T, P = cfg.num_taps, cfg.paths_per_tap
    spread = np.deg2rad(cfg.nlos_spread_deg)

    los_aod = tx.angles(u)
    los_aoa = rx.angles(-u)
    los_gain = 10.0 ** (-path_loss_db(d, fc, rng.normal(0.0, LOS_SHADOW_DB)) / 10.0)
    nlos_pl = path_loss_db(d, fc, rng.normal(0.0, NLOS_SHADOW_DB, size=(T, P)))
    nlos_gains = 10.0 ** (-nlos_pl / 10.0)
    h = (rng.standard_normal((T, P)) + 1j * rng.standard_normal((T, P))) / np.sqrt(2.0)
    aod = los_aod + rng.uniform(-spread, spread, size=(T, P, los_aod.size))
    aoa = los_aoa + rng.uniform(-spread, spread, size=(T, P, los_aoa.size))

    nlos_tx = np.array([[tx.response(fc, aod[t, p]) for p in range(P)] for t in range(T)])
    nlos_rx = np.array([[rx.response(fc, aoa[t, p]) for p in range(P)] for t in range(T)])
    return TapSet(
        los_gain=float(los_gain), nlos_gains=nlos_gains, h=h,
        los_aod=los_aod, los_aoa=los_aoa, aod=aod, aoa=aoa,
        los_rx=rx.response(fc, los_aoa), los_tx=tx.response(fc, los_aod),
        nlos_rx=nlos_rx, nlos_tx=nlos_tx, kappa=float(kappa),
    )


def dft_response(taps: np.ndarray, n, S: int) -> np.ndarray:
    """``sum_l taps[l] * exp(-2j*pi*l*n/S)`` for any integer frequency ``n``."""
    ell = np.arange(taps.shape[0])
    return np.tensordot(np.exp(-2j * np.pi * ell * n / S), taps, axes=1)


def freq_response(taps: TapSet, s: int, cfg_or_S) -> np.ndarray:
    """Frequency response of ``taps`` on signed subcarrier ``s``."""
    S = cfg_or_S if isinstance(cfg_or_S, (int, np.integer)) else cfg_or_S.num_subcarriers
    if s == 0:
        raise ValueError("subcarrier index 0 is not used")
    return dft_response(taps.tap_matrices(), s, S)


def _responses(taps: TapSet, S: int) -> np.ndarray:
    mats = taps.tap_matrices()
    return np.stack([dft_response(mats, s, S) for s in subcarrier_indices(S)])


# ----------------------------------------------------------------------------
# Stacked channels
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelSet:
    """Stacked per-subcarrier channels in subcarrier position order.

    Attributes
    ----------
    H : ndarray (S, K, QM, N_t)
        UE -> all RIS elements.
    G : ndarray (S, C*N_r, QM)
        All RIS elements -> all AP antennas.
    R : ndarray (S, K, C*N_r, N_t)
        Direct UE -> all AP antennas.
    subcarriers : ndarray (S,)
        Signed subcarrier index of each position.
    """

    H: np.ndarray
    G: np.ndarray
    R: np.ndarray
    subcarriers: np.ndarray

    @property
    def num_subcarriers(self) -> int:
        return self.G.shape[0]

    @property
    def mirror_positions(self) -> np.ndarray:
        return np.arange(self.num_subcarriers)[::-1]

    def at(self, s: int):
        """``(H, G, R)`` at signed subcarrier ``s``."""
        p = position(s, self.num_subcarriers)
        return self.H[p], self.G[p], self.R[p]

    def with_ris_links(self, scale: float) -> "ChannelSet":
        return ChannelSet(self.H, self.G * scale, self.R, self.subcarriers)


def link_taps(cfg: ScenarioConfig, realization: int, kind: str, a: int, b: int,
              ue_positions=None) -> TapSet:
    """Regenerate one link from its own stream.

    ``kind`` is ``"ue_ris"`` (a=UE k, b=RIS j), ``"ris_ap"`` (a=AP c, b=RIS j)
    or ``"ue_ap"`` (a=AP c, b=UE k).
    """
    if ue_positions is None and kind != "ris_ap":
        ue_positions = sample_ue_positions(cfg, realization)
    ue_shape, ap_shape, ris_shape = (cfg.tx_antennas,), (cfg.rx_antennas,), cfg.ris_shape
    if kind == "ue_ris":
        rng = derive_rng(cfg.rng_seed, realization, TAG_UE_RIS, a, b)
        return gen_link_taps(ue_positions[a], cfg.ris_positions[b], ue_shape, ris_shape,
                             cfg.rician_factor, cfg, rng)
    if kind == "ris_ap":
        rng = derive_rng(cfg.rng_seed, realization, TAG_RIS_AP, a, b)
        return gen_link_taps(cfg.ris_positions[b], cfg.ap_positions[a], ris_shape, ap_shape,
                             cfg.rician_factor, cfg, rng)
    if kind == "ue_ap":
        rng = derive_rng(cfg.rng_seed, realization, TAG_UE_AP, a, b)
        return gen_link_taps(ue_positions[b], cfg.ap_positions[a], ue_shape, ap_shape,
                             cfg.direct_rician_factor, cfg, rng)
    raise ValueError(f"unknown link kind {kind!r}")


def assemble_channels(cfg: ScenarioConfig, realization: int = 0) -> ChannelSet:
    """Generate and stack every link of realization ``realization``."""
    S, K, Q, M = cfg.num_subcarriers, cfg.num_ues, cfg.num_ris, cfg.elements_per_ris
    C, Nr, Nt = cfg.num_aps, cfg.rx_antennas, cfg.tx_antennas
    ue_pos = sample_ue_positions(cfg, realization)
    H = np.empty((S, K, Q * M, Nt), dtype=complex)
    G = np.empty((S, C * Nr, Q * M), dtype=complex)
    R = np.empty((S, K, C * Nr, Nt), dtype=complex)
    for k in range(K):
        for j in range(Q):
            H[:, k, j * M:(j + 1) * M] = _responses(
                link_taps(cfg, realization, "ue_ris", k, j, ue_pos), S)
    for c in range(C):
        for j in range(Q):
            G[:, c * Nr:(c + 1) * Nr, j * M:(j + 1) * M] = _responses(
                link_taps(cfg, realization, "ris_ap", c, j), S)
        for k in range(K):
            R[:, k, c * Nr:(c + 1) * Nr] = _responses(
                link_taps(cfg, realization, "ue_ap", c, k, ue_pos), S)
    return ChannelSet(H, G, R, subcarrier_indices(S))


# ----------------------------------------------------------------------------
# Binary fixtures
# ----------------------------------------------------------------------------

_MAGIC = b"CFRS"
_VERSION = 1
_HEADER = struct.Struct("<4sI7I")


def dump_channels(channels: ChannelSet, path, num_aps: int, num_ris: int) -> Path:
    """Write ``channels`` in the little-endian fixture layout (see docs/formats.md)."""
    S, K, QM, Nt = channels.H.shape
    CNr = channels.G.shape[1]
    if QM % num_ris or CNr % num_aps:
        raise ValueError("num_ris/num_aps do not divide the stacked dimensions")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, S, K, num_ris, QM // num_ris,
                              num_aps, CNr // num_aps, Nt))
        fh.write(np.asarray(channels.subcarriers, dtype="<i4").tobytes())
        for arr in (channels.H, channels.G, channels.R):
            fh.write(np.ascontiguousarray(arr, dtype="<c8").tobytes())
    return path


def load_channels(path) -> ChannelSet:
    data = Path(path).read_bytes()
    magic, version, S, K, Q, M, C, Nr, Nt = _HEADER.unpack_from(data)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a channel fixture (version {_VERSION})")
    off = _HEADER.size
    subs = np.frombuffer(data, dtype="<i4", count=S, offset=off).astype(int)
    off += 4 * S
    out = []
    for shape in ((S, K, Q * M, Nt), (S, C * Nr, Q * M), (S, K, C * Nr, Nt)):
        n = int(np.prod(shape))
        out.append(np.frombuffer(data, dtype="<c8", count=n, offset=off)
                   .reshape(shape).astype(complex))
        off += 8 * n
    return ChannelSet(*out, subcarriers=subs)
