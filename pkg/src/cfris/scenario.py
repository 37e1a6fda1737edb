"""Scenario configuration, seeding, geometry and subcarrier bookkeeping."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "ScenarioConfig",
    "AllocationMap",
    "IQI_LEVELS",
    "load_config",
    "read_toml",
    "config_from_dict",
    "default_allocation",
    "subcarrier_indices",
    "mirror",
    "dft_bin",
    "derive_rng",
    "sample_ue_positions",
    "thermal_noise_mw",
    "dbm_to_mw",
]

IQI_LEVELS = ("ideal", "level1", "level2", "level3")

# Reference geometry; the first C (resp. Q) entries are used for smaller setups.
REFERENCE_AP_POSITIONS = ((-30.0, -30.0, 3.0), (-30.0, 30.0, 3.0),
                      (30.0, -30.0, 3.0), (30.0, 30.0, 3.0))
REFERENCE_RIS_POSITIONS = ((-20.0, 50.0, 10.0), (20.0, 50.0, 10.0))

# Stream tags used with derive_rng. Never renumber: seeds depend on them.
TAG_GEOMETRY = 0
TAG_UE_RIS = 1
TAG_RIS_AP = 2
TAG_UE_AP = 3
TAG_IQI = 4
TAG_RIS_INIT = 5


class ConfigError(ValueError):
    """Raised when a configuration cannot be parsed or violates a constraint."""


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=float) / 10.0)


def thermal_noise_mw(subcarrier_spacing_hz: float, noise_figure_db: float) -> float:
    """Noise power in mW over one subcarrier: -174 dBm/Hz + 10 log10(df) + NF."""
    return float(10.0 ** ((-174.0 + 10.0 * np.log10(subcarrier_spacing_hz)
                           + noise_figure_db) / 10.0))


def _squarest_factorization(m: int) -> tuple[int, int]:
    a = int(np.floor(np.sqrt(m)))
    while m % a:
        a -= 1
    return m // a, a


def _default_positions(reference, count, y, z):
    if count <= len(reference):
        return tuple(reference[:count])
    xs = np.linspace(-30.0, 30.0, count)
    return tuple((float(x), y, z) for x in xs)


@dataclass(frozen=True)
class ScenarioConfig:
    """All dimensional and physical parameters of one experiment.

    Powers are in mW, distances in meters, the carrier frequency in GHz.
    ``streams`` defaults to ``min(tx_antennas, 2)`` and ``noise_variance``
    to the thermal noise over one subcarrier (see :func:`thermal_noise_mw`).
    """

    num_aps: int = 2
    num_ues: int = 4
    num_ris: int = 2
    elements_per_ris: int = 16
    num_subcarriers: int = 4
    tx_antennas: int = 2
    rx_antennas: int = 4
    streams: int | None = None
    power_dbm: float = 0.0
    noise_figure_db: float = 7.0
    noise_variance: float | None = None
    carrier_freq_ghz: float = 28.0
    subcarrier_spacing_hz: float = 15e3
    bandwidth_hz: float = 180e3
    iqi_level: str = "level3"
    rician_factor: float = 10.0
    direct_rician_factor: float = 10.0
    num_taps: int = 4
    paths_per_tap: int = 4
    nlos_spread_deg: float = 10.0
    ris_shape: tuple[int, int] | None = None
    ap_positions: tuple | None = None
    ris_positions: tuple | None = None
    ue_center: tuple[float, float, float] = (0.0, 350.0, 1.5)
    ue_radius: float = 30.0
    allocation: tuple | None = None
    rng_seed: int = 0

    def __post_init__(self):
        set_ = lambda k, v: object.__setattr__(self, k, v)  # noqa: E731
        if self.streams is None:
            set_("streams", min(self.tx_antennas, 2))
        if self.noise_variance is None:
            set_("noise_variance", thermal_noise_mw(self.subcarrier_spacing_hz,
                                                    self.noise_figure_db))
        if self.ris_shape is None:
            set_("ris_shape", _squarest_factorization(max(int(self.elements_per_ris), 1)))
        else:
            set_("ris_shape", tuple(int(v) for v in self.ris_shape))
        if self.ap_positions is None:
            set_("ap_positions", _default_positions(REFERENCE_AP_POSITIONS, self.num_aps, -30.0, 3.0))
        if self.ris_positions is None:
            set_("ris_positions", _default_positions(REFERENCE_RIS_POSITIONS, self.num_ris, 50.0, 10.0))
        set_("ap_positions", tuple(tuple(float(c) for c in p) for p in self.ap_positions))
        set_("ris_positions", tuple(tuple(float(c) for c in p) for p in self.ris_positions))
        set_("ue_center", tuple(float(c) for c in self.ue_center))
        if self.allocation is not None:
            set_("allocation", tuple(tuple(int(s) for s in a) for a in self.allocation))
        self.validate()

    def validate(self):
        def need(cond, fld, msg):
            if not cond:
                raise ConfigError(f"{fld}: {msg}")

        for name in ("num_aps", "num_ues", "num_ris", "elements_per_ris",
                     "tx_antennas", "rx_antennas", "num_taps", "paths_per_tap"):
            need(int(getattr(self, name)) >= 1, name, "must be >= 1")
        S = self.num_subcarriers
        need(S >= 2 and S % 2 == 0, "num_subcarriers", "S must be even and ≥ 2")
        need(1 <= self.streams <= min(self.tx_antennas, self.num_aps * self.rx_antennas),
             "streams", "b_k must satisfy 1 <= b_k <= min(N_t, C*N_r)")
        need(self.noise_variance > 0, "noise_variance", "σ² must be > 0")
        need(self.subcarrier_spacing_hz > 0, "subcarrier_spacing_hz", "Δf must be > 0")
        need(self.carrier_freq_ghz > 0, "carrier_freq_ghz", "f^c must be > 0")
        need(np.isfinite(self.power_dbm), "power_dbm", "must be finite (p_k^s > 0)")
        need(self.iqi_level in IQI_LEVELS, "iqi_level", f"must be one of {IQI_LEVELS}")
        need(self.rician_factor >= 0 and self.direct_rician_factor >= 0,
             "rician_factor", "κ must be >= 0")
        need(self.ris_shape[0] * self.ris_shape[1] == self.elements_per_ris,
             "ris_shape", "m_x * m_y must equal elements_per_ris")
        need(len(self.ap_positions) == self.num_aps, "ap_positions",
             "one position per AP required")
        need(len(self.ris_positions) == self.num_ris, "ris_positions",
             "one position per RIS required")
        need(all(len(p) == 3 for p in self.ap_positions + self.ris_positions),
             "positions", "positions must be 3D")
        need(self.ue_radius >= 0, "ue_radius", "must be >= 0")
        if self.allocation is not None:
            valid = set(subcarrier_indices(S).tolist())
            need(len(self.allocation) == self.num_ues, "allocation",
                 "one subcarrier list per UE required")
            for k, subs in enumerate(self.allocation):
                need(set(subs) <= valid, "allocation", f"UE {k} lists an invalid subcarrier")

    # convenience -------------------------------------------------------
    @property
    def power_mw(self) -> float:
        return float(dbm_to_mw(self.power_dbm))

    @property
    def num_ris_elements(self) -> int:
        return self.num_ris * self.elements_per_ris

    @property
    def num_rx_total(self) -> int:
        return self.num_aps * self.rx_antennas

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with overrides; derived defaults are recomputed when their inputs change."""
        base = dataclasses.asdict(self)
        if "elements_per_ris" in changes and "ris_shape" not in changes:
            base["ris_shape"] = None
        if "num_aps" in changes and "ap_positions" not in changes:
            base["ap_positions"] = None
        if "num_ris" in changes and "ris_positions" not in changes:
            base["ris_positions"] = None
        if ("tx_antennas" in changes or "rx_antennas" in changes) and "streams" not in changes:
            base["streams"] = None
        if ({"subcarrier_spacing_hz", "noise_figure_db"} & changes.keys()
                and "noise_variance" not in changes):
            base["noise_variance"] = None
        if "num_ues" in changes or "num_subcarriers" in changes:
            base["allocation"] = changes.get("allocation")
        base.update(changes)
        return ScenarioConfig(**base)


# Flat key -> (section, key) layout of the TOML file.
_SECTIONS = {
    "system": ("num_aps", "num_ues", "num_ris", "elements_per_ris", "num_subcarriers",
               "tx_antennas", "rx_antennas", "streams", "power_dbm", "noise_figure_db",
               "noise_variance"),
    "channel": ("carrier_freq_ghz", "subcarrier_spacing_hz", "bandwidth_hz", "rician_factor",
                "direct_rician_factor", "num_taps", "paths_per_tap", "nlos_spread_deg",
                "ris_shape"),
    "geometry": ("ap_positions", "ris_positions", "ue_center", "ue_radius"),
    "impairments": ("iqi_level",),
    "allocation": ("subcarriers",),
}


def config_from_dict(data: Mapping) -> ScenarioConfig:
    """Build a config from the nested mapping layout of the TOML file."""
    kwargs = {}
    known = set(_SECTIONS) | {"rng_seed", "sweep"}  # [sweep] is read by cfris.sweep
    for key in data:
        if key not in known:
            raise ConfigError(f"{key}: unknown section or key")
    for section, keys in _SECTIONS.items():
        body = data.get(section, {})
        if not isinstance(body, Mapping):
            raise ConfigError(f"{section}: expected a table")
        for key in body:
            if key not in keys:
                raise ConfigError(f"{section}.{key}: unknown key")
        for key in keys:
            if key in body:
                name = "allocation" if section == "allocation" else key
                kwargs[name] = body[key]
    if "rng_seed" in data:
        kwargs["rng_seed"] = int(data["rng_seed"])
    try:
        return ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def read_toml(path) -> dict:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"{path}: file not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    return data


def load_config(path) -> ScenarioConfig:
    """Parse and validate a TOML scenario file. A missing ``rng_seed`` means 0."""
    return config_from_dict(read_toml(path))


# ----------------------------------------------------------------------------
# Subcarriers
# ----------------------------------------------------------------------------

def subcarrier_indices(S: int) -> np.ndarray:
    """Signed indices ``-S/2..-1, 1..S/2`` in array (position) order.

    Position ``p`` and ``S-1-p`` hold mirrored indices ``s`` and ``-s``.
    """
    half = S // 2
    return np.concatenate([np.arange(-half, 0), np.arange(1, half + 1)])


def _check_index(s: int, S: int | None = None):
    if s == 0:
        raise ValueError("subcarrier index 0 is not used")
    if S is not None and abs(s) > S // 2:
        raise ValueError(f"subcarrier index {s} outside ±{S // 2}")


def mirror(s: int) -> int:
    _check_index(s)
    return -s


def position(s: int, S: int) -> int:
    """Array position of signed index ``s``."""
    _check_index(s, S)
    return s + S // 2 if s < 0 else s + S // 2 - 1


def dft_bin(s: int, S: int) -> int:
    """FFT bin of signed index ``s`` (``s`` for s > 0, ``S + s`` for s < 0).

    Diagnostic only; the channel frequency response uses the signed index.
    """
    _check_index(s, S)
    return s if s > 0 else S + s


@dataclass(frozen=True)
class AllocationMap:
    """UE/subcarrier assignment with per-UE and per-subcarrier views."""

    per_ue: tuple[frozenset, ...]
    per_subcarrier: Mapping[int, frozenset] = field(repr=False)
    num_subcarriers: int

    @classmethod
    def from_per_ue(cls, per_ue: Sequence[Sequence[int]], S: int) -> "AllocationMap":
        per_ue = tuple(frozenset(int(s) for s in subs) for subs in per_ue)
        per_sc = {int(s): frozenset(k for k, subs in enumerate(per_ue) if s in subs)
                  for s in subcarrier_indices(S)}
        return cls(per_ue, per_sc, S)

    @property
    def num_ues(self) -> int:
        return len(self.per_ue)

    def mask(self) -> np.ndarray:
        """Boolean array (S, K) in position order; True where UE k uses subcarrier s."""
        S = self.num_subcarriers
        out = np.zeros((S, self.num_ues), dtype=bool)
        for p, s in enumerate(subcarrier_indices(S)):
            for k in self.per_subcarrier[int(s)]:
                out[p, k] = True
        return out

    def is_dual(self) -> bool:
        return all((s in self.per_ue[k]) == (k in self.per_subcarrier[int(s)])
                   for k in range(self.num_ues)
                   for s in subcarrier_indices(self.num_subcarriers))


def default_allocation(cfg: ScenarioConfig) -> AllocationMap:
    """Full allocation unless the config lists per-UE subcarriers."""
    S = cfg.num_subcarriers
    if cfg.allocation is not None:
        return AllocationMap.from_per_ue(cfg.allocation, S)
    full = subcarrier_indices(S).tolist()
    return AllocationMap.from_per_ue([full] * cfg.num_ues, S)


# ----------------------------------------------------------------------------
# Randomness and geometry
# ----------------------------------------------------------------------------

def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream addressed by ``(seed, *keys)``.

    Streams are split with ``SeedSequence`` spawn keys, so any stream can be
    regenerated on its own and realizations can run in any order.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.default_rng(ss)


def sample_ue_positions(cfg: ScenarioConfig, realization: int = 0) -> np.ndarray:
    """UE positions (K, 3) uniform over the disk ``ue_center``/``ue_radius``.

    UE ``k`` gets its own stream, so adding UEs leaves earlier ones in place.
    """
    out = np.empty((cfg.num_ues, 3))
    cx, cy, cz = cfg.ue_center
    for k in range(cfg.num_ues):
        rng = derive_rng(cfg.rng_seed, realization, TAG_GEOMETRY, k)
        r = cfg.ue_radius * np.sqrt(rng.uniform())
        phi = rng.uniform(0.0, 2.0 * np.pi)
        out[k] = (cx + r * np.cos(phi), cy + r * np.sin(phi), cz)
    return out
