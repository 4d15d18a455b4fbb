"""Configuration dataclasses and the INI-style config file loader.

Config files are plain ``configparser`` INI with one section per concern
([run], [network], [policy], [mappo], [magrpo]).  Physical values accept
unit suffixes: W / mW / dBm for powers, m for lengths, GHz / MHz / Hz for
frequencies, deg / rad for angles.  Every key has a default, unknown keys
are rejected, and every parse error names the offending section.key.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, InfeasibleConfigError

SPEED_OF_LIGHT = 299_792_458.0

# Carrier/wavelength mismatch above this relative error is rejected.
WAVELENGTH_TOLERANCE = 0.005


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _strip_unit(text: str, units: dict[str, float]) -> float:
    parts = text.strip().split()
    if len(parts) == 1:
        return float(parts[0])
    if len(parts) == 2 and parts[1] in units:
        return float(parts[0]) * units[parts[1]]
    raise ValueError(f"unrecognized quantity {text!r}")


def parse_power(text: str) -> float:
    """Parse a power value into watts.  Accepts W, mW, and dBm suffixes."""
    parts = text.strip().split()
    if len(parts) == 2 and parts[1] == "dBm":
        return dbm_to_watts(float(parts[0]))
    return _strip_unit(text, {"W": 1.0, "mW": 1e-3})


def parse_length(text: str) -> float:
    return _strip_unit(text, {"m": 1.0, "mm": 1e-3, "cm": 1e-2})


def parse_frequency(text: str) -> float:
    return _strip_unit(text, {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9})


def parse_angle_deg(text: str) -> float:
    parts = text.strip().split()
    if len(parts) == 2 and parts[1] == "rad":
        return math.degrees(float(parts[0]))
    return _strip_unit(text, {"deg": 1.0})


@dataclass
class NetworkConfig:
    """Scene and channel parameters for the multi-cell fluid-antenna network.

    ``num_users`` is per base station.  Fluid-antenna coordinates live in each
    BS's local array plane: x in [0, region[0]], y in [0, region[1]], z fixed
    at ``plane_height``.  User and BS positions are global 3-D coordinates.
    """

    num_bs: int = 2
    num_users: int = 2
    num_antennas: int = 4
    num_paths: int = 8
    max_power: float = 1.0
    noise_power: float = dbm_to_watts(-91.0)
    frequency: float = 5.5e9
    wavelength: float = 0.0545
    min_spacing: float = 0.0273
    region: tuple[float, float] = (0.5, 0.5)
    plane_height: float = 0.0
    bs_spacing: float = 35.0
    bs_height: float = 10.0
    user_height: float = 1.5
    # (range_min, range_max, azimuth_min_deg, azimuth_max_deg) per user index.
    user_sectors: tuple[tuple[float, float, float, float], ...] | None = None
    gain_mode: str = "statistical"
    path_loss_exponent: float = 2.8
    reference_gain: float | None = None
    penalty: float = 10.0
    bs_positions: np.ndarray | None = None

    def __post_init__(self) -> None:
        for name in ("num_bs", "num_users", "num_antennas", "num_paths"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"network.{name} must be a positive integer, got {value!r}")
        for name in ("max_power", "noise_power", "frequency", "wavelength"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"network.{name} must be positive")
        if self.min_spacing < 0:
            raise ConfigError("network.min_spacing must be non-negative")
        if self.region[0] < 0 or self.region[1] < 0:
            raise ConfigError("network.region sides must be non-negative")
        if self.penalty < 0:
            raise ConfigError("network.penalty must be non-negative")
        if self.gain_mode not in ("bounded", "statistical"):
            raise ConfigError(
                f"network.gain_mode must be 'bounded' or 'statistical', got {self.gain_mode!r}"
            )
        if self.reference_gain is not None and self.reference_gain <= 0:
            raise ConfigError("network.reference_gain must be positive")
        mismatch = abs(self.wavelength * self.frequency - SPEED_OF_LIGHT) / SPEED_OF_LIGHT
        if mismatch > WAVELENGTH_TOLERANCE:
            raise ConfigError(
                f"network.wavelength {self.wavelength} and network.frequency {self.frequency} "
                f"disagree with the speed of light by {mismatch:.1%} (limit {WAVELENGTH_TOLERANCE:.1%})"
            )
        if self.num_antennas >= 2 and self.min_spacing > self.region_diagonal:
            raise InfeasibleConfigError(
                f"network.min_spacing {self.min_spacing} exceeds the region diagonal "
                f"{self.region_diagonal:.4g}; cannot place {self.num_antennas} antennas"
            )
        if self.user_sectors is None:
            self.user_sectors = tuple(
                (5.0, 8.0, 80.0 + 10.0 * k, 90.0 + 10.0 * k) for k in range(self.num_users)
            )
        self.user_sectors = tuple(tuple(float(x) for x in s) for s in self.user_sectors)
        if len(self.user_sectors) != self.num_users:
            raise ConfigError(
                f"network.user_sectors has {len(self.user_sectors)} entries, "
                f"expected one per user ({self.num_users})"
            )
        for k, (rmin, rmax, amin, amax) in enumerate(self.user_sectors):
            if not (0 <= rmin <= rmax) or not (amin < amax):
                raise ConfigError(f"network.sector{k + 1} = {self.user_sectors[k]} is not a valid sector")
        if self.bs_positions is None:
            self.bs_positions = np.stack(
                [np.array([self.bs_spacing * i, 0.0, self.bs_height]) for i in range(self.num_bs)]
            )
        self.bs_positions = np.asarray(self.bs_positions, dtype=float)
        if self.bs_positions.shape != (self.num_bs, 3):
            raise ConfigError(
                f"network.bs_positions has shape {self.bs_positions.shape}, "
                f"expected ({self.num_bs}, 3)"
            )

    @property
    def region_diagonal(self) -> float:
        return math.hypot(self.region[0], self.region[1])

    @property
    def large_scale_reference(self) -> float:
        """Reference gain g0; defaults to the free-space value (lambda/4pi)^2."""
        if self.reference_gain is not None:
            return self.reference_gain
        return (self.wavelength / (4.0 * math.pi)) ** 2

    @property
    def obs_dim(self) -> int:
        m, k = self.num_antennas, self.num_users
        return 3 * m + 4 * k * m + 5 * k

    @property
    def action_dim(self) -> int:
        m, k = self.num_antennas, self.num_users
        return 3 * m + 2 * k * m

    @property
    def state_dim(self) -> int:
        n, m, k = self.num_bs, self.num_antennas, self.num_users
        return n * (3 * m + 2 * k * m * (n + 1) + 4 * k)


@dataclass
class PolicyConfig:
    hidden_width: int = 256
    hidden_layers: int = 2
    log_std_init: float = -1.5

    def __post_init__(self) -> None:
        if self.hidden_width < 1 or self.hidden_layers < 1:
            raise ConfigError("policy.hidden_width and policy.hidden_layers must be >= 1")


@dataclass
class MappoHyperparams:
    clip_ratio: float = 0.2
    batch_size: int = 16
    horizon: int = 5
    epochs: int = 5
    minibatch_size: int = 0  # 0 means the full batch
    discount: float = 0.99
    gae_lambda: float = 0.95
    lr_initial: float = 3e-5
    lr_floor: float = 5e-6
    lr_hold_updates: int = 800
    lr_patience: int = 50
    lr_smoothing: float = 0.9
    entropy_start: float = 0.003
    entropy_end: float = 0.0008
    entropy_horizon: int = 8_000_000
    grad_clip: float = 10.0  # <= 0 disables clipping

    def __post_init__(self) -> None:
        if not 0 < self.clip_ratio < 1:
            raise ConfigError("mappo.clip_ratio must lie in (0, 1)")
        if self.batch_size < 1 or self.horizon < 1 or self.epochs < 1:
            raise ConfigError("mappo.batch_size, mappo.horizon, mappo.epochs must be >= 1")
        if not 0 < self.discount <= 1 or not 0 <= self.gae_lambda <= 1:
            raise ConfigError("mappo.discount must be in (0, 1] and mappo.gae_lambda in [0, 1]")
        if not 0 < self.lr_floor <= self.lr_initial:
            raise ConfigError("mappo requires 0 < lr_floor <= lr_initial")
        if self.entropy_horizon < 1:
            raise ConfigError("mappo.entropy_horizon must be >= 1")


@dataclass
class MagrpoHyperparams:
    group_size: int = 16
    warmup_steps: int | None = None  # None means total_steps // 8
    clip_ratio: float = 0.2
    kl_penalty: float = 1e-4

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ConfigError("magrpo.group_size must be >= 2")
        if not 0 < self.clip_ratio < 1:
            raise ConfigError("magrpo.clip_ratio must lie in (0, 1)")
        if self.kl_penalty < 0:
            raise ConfigError("magrpo.kl_penalty must be non-negative")
        if self.warmup_steps is not None and self.warmup_steps < 0:
            raise ConfigError("magrpo.warmup_steps must be non-negative")


@dataclass
class ExperimentConfig:
    network: NetworkConfig = field(default_factory=NetworkConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    mappo: MappoHyperparams = field(default_factory=MappoHyperparams)
    magrpo: MagrpoHyperparams = field(default_factory=MagrpoHyperparams)
    algorithm: str = "mappo"
    seed: int = 0
    total_steps: int = 1_000_000
    eval_interval: int = 10_000
    eval_episodes: int = 32
    ema_factor: float = 0.99
    checkpoint_interval: int = 0  # 0 means final checkpoint only
    freeze_fa: bool = False

    def __post_init__(self) -> None:
        if self.algorithm not in ("mappo", "magrpo"):
            raise ConfigError(f"run.algorithm must be 'mappo' or 'magrpo', got {self.algorithm!r}")
        if self.total_steps < 1:
            raise ConfigError("run.total_steps must be >= 1")
        if self.eval_interval < 1 or self.eval_episodes < 1:
            raise ConfigError("run.eval_interval and run.eval_episodes must be >= 1")
        if not 0 <= self.ema_factor < 1:
            raise ConfigError("run.ema_factor must lie in [0, 1)")
        if self.checkpoint_interval < 0:
            raise ConfigError("run.checkpoint_interval must be non-negative")

    def resolved_warmup_steps(self) -> int:
        if self.magrpo.warmup_steps is not None:
            return self.magrpo.warmup_steps
        return self.total_steps // 8


def desk_network_config(**overrides) -> NetworkConfig:
    """Small normalized-gain scene used by the fast experiment suite.

    Normalized large-scale gains (g0 = 1, exponent 2) keep channel entries
    near 0.1 and 0 dBm noise puts SINR in the single digits, so short runs
    with narrow networks have readable features and a responsive landscape.
    """
    base = dict(
        num_bs=2,
        num_users=2,
        num_antennas=2,
        num_paths=8,
        reference_gain=1.0,
        path_loss_exponent=2.0,
        noise_power=dbm_to_watts(0.0),
    )
    base.update(overrides)
    return NetworkConfig(**base)


_BOOL_VALUES = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _parse_bool(text: str) -> bool:
    try:
        return _BOOL_VALUES[text.strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {text!r}") from None


def _get(parser: configparser.ConfigParser, section: str, key: str, convert, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return convert(raw)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from exc


def _parse_region(text: str) -> tuple[float, float]:
    cleaned = text.replace("x", " ").replace(",", " ")
    parts = cleaned.split()
    values = [p for p in parts if p != "m"]
    if len(values) != 2:
        raise ValueError(f"expected 'WIDTH x HEIGHT m', got {text!r}")
    return float(values[0]), float(values[1])


def _parse_sector(text: str) -> tuple[float, float, float, float]:
    parts = text.split()
    if len(parts) != 4:
        raise ValueError(f"expected 'RMIN RMAX AZMIN AZMAX', got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


_SECTION_KEYS = {
    "run": {
        "algorithm", "seed", "total_steps", "eval_interval", "eval_episodes",
        "ema_factor", "checkpoint_interval", "freeze_fa",
    },
    "network": {
        "num_bs", "num_users", "num_antennas", "num_paths", "max_power",
        "noise_power", "frequency", "wavelength", "min_spacing", "region",
        "plane_height", "bs_spacing", "bs_height", "user_height", "gain_mode",
        "path_loss_exponent", "reference_gain", "penalty",
    },
    "policy": {"hidden_width", "hidden_layers", "log_std_init"},
    "mappo": {
        "clip_ratio", "batch_size", "horizon", "epochs", "minibatch_size",
        "discount", "gae_lambda", "lr_initial", "lr_floor", "lr_hold_updates",
        "lr_patience", "lr_smoothing", "entropy_start", "entropy_end",
        "entropy_horizon", "grad_clip",
    },
    "magrpo": {"group_size", "warmup_steps", "clip_ratio", "kl_penalty"},
}


def load_experiment_config(path: str) -> ExperimentConfig:
    """Load an experiment config from an INI file.

    Raises ConfigError with the offending section.key for unknown sections,
    unknown keys, malformed values, and inconsistent combinations.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")

    for section in parser.sections():
        base = section.split(":")[0] if section.startswith("network") else section
        if base not in _SECTION_KEYS and base != "network":
            raise ConfigError(f"unknown config section [{section}]")
        allowed = _SECTION_KEYS.get(base, set())
        for key in parser.options(section):
            if base == "network" and key.startswith("sector"):
                continue
            if key not in allowed:
                raise ConfigError(f"unknown config key {section}.{key}")

    net_kwargs: dict = {}
    if parser.has_section("network"):
        g = lambda key, convert, default=None: _get(parser, "network", key, convert, default)
        for key, convert in (
            ("num_bs", int), ("num_users", int), ("num_antennas", int), ("num_paths", int),
            ("max_power", parse_power), ("noise_power", parse_power),
            ("frequency", parse_frequency), ("wavelength", parse_length),
            ("min_spacing", parse_length), ("region", _parse_region),
            ("plane_height", parse_length), ("bs_spacing", parse_length),
            ("bs_height", parse_length), ("user_height", parse_length),
            ("gain_mode", str.strip), ("path_loss_exponent", float),
            ("penalty", float),
        ):
            value = g(key, convert)
            if value is not None:
                net_kwargs[key] = value
        raw_gain = g("reference_gain", str.strip)
        if raw_gain is not None and raw_gain.lower() != "auto":
            try:
                net_kwargs["reference_gain"] = float(raw_gain)
            except ValueError as exc:
                raise ConfigError(f"network.reference_gain: {exc}") from exc
        sectors = []
        for key in sorted(parser.options("network")):
            if key.startswith("sector"):
                sectors.append(_get(parser, "network", key, _parse_sector, None))
        if sectors:
            net_kwargs["user_sectors"] = tuple(sectors)

    def section_kwargs(section: str, fields: tuple[tuple[str, object], ...]) -> dict:
        out: dict = {}
        if parser.has_section(section):
            for key, convert in fields:
                value = _get(parser, section, key, convert, None)
                if value is not None:
                    out[key] = value
        return out

    policy_kwargs = section_kwargs("policy", (
        ("hidden_width", int), ("hidden_layers", int), ("log_std_init", float),
    ))
    mappo_kwargs = section_kwargs("mappo", (
        ("clip_ratio", float), ("batch_size", int), ("horizon", int), ("epochs", int),
        ("minibatch_size", int), ("discount", float), ("gae_lambda", float),
        ("lr_initial", float), ("lr_floor", float), ("lr_hold_updates", int),
        ("lr_patience", int), ("lr_smoothing", float), ("entropy_start", float),
        ("entropy_end", float), ("entropy_horizon", int), ("grad_clip", float),
    ))
    magrpo_kwargs = section_kwargs("magrpo", (
        ("group_size", int), ("warmup_steps", int), ("clip_ratio", float),
        ("kl_penalty", float),
    ))
    run_kwargs = section_kwargs("run", (
        ("algorithm", str.strip), ("seed", int), ("total_steps", int),
        ("eval_interval", int), ("eval_episodes", int), ("ema_factor", float),
        ("checkpoint_interval", int), ("freeze_fa", _parse_bool),
    ))

    try:
        return ExperimentConfig(
            network=NetworkConfig(**net_kwargs),
            policy=PolicyConfig(**policy_kwargs),
            mappo=MappoHyperparams(**mappo_kwargs),
            magrpo=MagrpoHyperparams(**magrpo_kwargs),
            **run_kwargs,
        )
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def with_overrides(
    config: ExperimentConfig,
    seed: int | None = None,
    total_steps: int | None = None,
) -> ExperimentConfig:
    """Apply CLI-level overrides without mutating the loaded config."""
    updates: dict = {}
    if seed is not None:
        updates["seed"] = seed
    if total_steps is not None:
        updates["total_steps"] = total_steps
    return replace(config, **updates) if updates else config


def file_sha256(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
