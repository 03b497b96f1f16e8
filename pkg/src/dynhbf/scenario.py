"""Physical scenario: arrays, radar geometry, user channels and constants.

Angles are radians and powers/variances are linear everywhere in this
module's dataclasses. The config-file loader is the only place where
degrees and dB are accepted.
"""

from __future__ import annotations

import configparser
import dataclasses
import functools
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "PowerModel",
    "ScenarioConfig",
    "CommChannels",
    "RadarChannel",
    "ConfigError",
    "steering_vector",
    "radar_channel",
    "generate_comm_channels",
    "validate_config",
    "default_config",
    "load_config",
    "dump_config",
    "bits_to_nats",
    "CHANNEL_MODELS",
]

CHANNEL_MODELS = ("iid-rayleigh", "geometric")
GEOMETRIC_PATHS = 8


class ConfigError(ValueError):
    """Raised when a scenario config is malformed or violates an invariant."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.errors))


@dataclass(frozen=True)
class PowerModel:
    """Hardware power draw per component, watts."""

    p_rf: float = 0.3
    p_bb: float = 0.2
    p_ps: float = 0.05
    p_sw: float = 0.005


@dataclass(frozen=True)
class ScenarioConfig:
    n_tx: int
    n_rx: int
    n_users: int
    n_rf: int
    n_slots: int
    power_budget: float
    qos_thresholds: tuple
    comm_noise_vars: tuple
    radar_noise_var: float
    target_angle: float
    target_rcs_var: float
    clutter_angles: tuple
    clutter_rcs_vars: tuple
    power_model: PowerModel = field(default_factory=PowerModel)
    spacing_factor: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        # Normalise sequences to tuples of floats so instances stay hashable.
        for name in ("qos_thresholds", "comm_noise_vars", "clutter_angles",
                     "clutter_rcs_vars"):
            value = getattr(self, name)
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(value)))

    @property
    def n_clutter(self) -> int:
        return len(self.clutter_angles)

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with some fields changed; scalar per-user values broadcast.

        When only ``n_users`` changes, per-user fields that hold one common
        value are resized to the new user count.
        """
        n_users = changes.get("n_users", self.n_users)
        for name in ("qos_thresholds", "comm_noise_vars"):
            if name in changes and np.ndim(changes[name]) == 0:
                changes[name] = (float(changes[name]),) * n_users
            elif name not in changes and n_users != self.n_users:
                current = getattr(self, name)
                if len(set(current)) == 1:
                    changes[name] = (current[0],) * n_users
        return dataclasses.replace(self, **changes)

    def validate(self) -> "ScenarioConfig":
        errors = validate_config(self)
        if errors:
            raise ConfigError(errors)
        return self


@dataclass(frozen=True)
class CommChannels:
    """Downlink channels; column ``u`` of ``h`` is user ``u``'s channel."""

    h: np.ndarray

    @property
    def n_users(self) -> int:
        return self.h.shape[1]


@dataclass(frozen=True)
class RadarChannel:
    """Rank-one round-trip channel ``a_rx a_tx^T`` for one direction."""

    a_rx: np.ndarray
    a_tx: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return np.outer(self.a_rx, self.a_tx)


def steering_vector(angle: float, n: int, spacing_factor: float = 1.0) -> np.ndarray:
    """Unit-norm ULA response with entry ``m`` = exp(-j 2 pi k m sin(angle)) / sqrt(n)."""
    m = np.arange(n)
    return np.exp(-2j * np.pi * spacing_factor * m * np.sin(angle)) / np.sqrt(n)


def radar_channel(angle: float, n_rx: int, n_tx: int,
                  spacing_factor: float = 1.0) -> RadarChannel:
    return RadarChannel(a_rx=steering_vector(angle, n_rx, spacing_factor),
                        a_tx=steering_vector(angle, n_tx, spacing_factor))


def generate_comm_channels(cfg: ScenarioConfig, model: str = "iid-rayleigh",
                           rng=None) -> CommChannels:
    """Draw user channels.

    Parameters
    ----------
    cfg : ScenarioConfig
    model : {"iid-rayleigh", "geometric"}
        ``iid-rayleigh`` draws unit-variance circular Gaussian entries;
        ``geometric`` sums ``GEOMETRIC_PATHS`` rays with standard complex
        Gaussian gains and uniform departure angles in (-pi/2, pi/2).
    rng : numpy Generator, int or None
        Defaults to ``cfg.rng_seed``.
    """
    if rng is None:
        rng = cfg.rng_seed
    rng = np.random.default_rng(rng)
    n_t, n_u = cfg.n_tx, cfg.n_users
    if model == "iid-rayleigh":
        h = (rng.standard_normal((n_t, n_u))
             + 1j * rng.standard_normal((n_t, n_u))) / np.sqrt(2)
    elif model == "geometric":
        h = np.empty((n_t, n_u), dtype=complex)
        for u in range(n_u):
            gains = (rng.standard_normal(GEOMETRIC_PATHS)
                     + 1j * rng.standard_normal(GEOMETRIC_PATHS)) / np.sqrt(2)
            angles = rng.uniform(-np.pi / 2, np.pi / 2, GEOMETRIC_PATHS)
            h[:, u] = geometric_channel(gains, angles, n_t, cfg.spacing_factor)
    else:
        raise ValueError(f"unknown channel model {model!r}; expected one of {CHANNEL_MODELS}")
    return CommChannels(h=h)


def geometric_channel(gains, angles, n_tx, spacing_factor=1.0):
    gains = np.atleast_1d(gains)
    angles = np.atleast_1d(angles)
    arr = np.stack([steering_vector(a, n_tx, spacing_factor) for a in angles], axis=1)
    return np.sqrt(n_tx / len(gains)) * arr @ gains


def validate_config(cfg: ScenarioConfig) -> list:
    """Return a list of ``(field, message)`` pairs; empty means valid."""
    errors = []
    for name in ("n_tx", "n_rx", "n_users", "n_rf", "n_slots"):
        value = getattr(cfg, name)
        if int(value) != value or value < 1:
            errors.append((name, f"must be a positive integer, got {value!r}"))
    if cfg.n_rf > cfg.n_tx:
        errors.append(("n_rf", f"n_rf ({cfg.n_rf}) must not exceed n_tx ({cfg.n_tx})"))
    if cfg.n_users > cfg.n_rf:
        errors.append(("n_users", f"n_users ({cfg.n_users}) must not exceed n_rf ({cfg.n_rf})"))
    for name in ("qos_thresholds", "comm_noise_vars"):
        if len(getattr(cfg, name)) != cfg.n_users:
            errors.append((name, f"needs {cfg.n_users} entries, got {len(getattr(cfg, name))}"))
    if len(cfg.clutter_angles) != len(cfg.clutter_rcs_vars):
        errors.append(("clutter_rcs_vars", "must have one entry per clutter angle"))
    if not cfg.power_budget > 0:
        errors.append(("power_budget", "must be strictly positive"))
    if any(not g >= 0 for g in cfg.qos_thresholds):
        errors.append(("qos_thresholds", "thresholds must be nonnegative"))
    if any(not s > 0 for s in cfg.comm_noise_vars):
        errors.append(("comm_noise_vars", "variances must be strictly positive"))
    if not cfg.radar_noise_var > 0:
        errors.append(("radar_noise_var", "must be strictly positive"))
    if not cfg.target_rcs_var > 0:
        errors.append(("target_rcs_var", "must be strictly positive"))
    if any(not s > 0 for s in cfg.clutter_rcs_vars):
        errors.append(("clutter_rcs_vars", "variances must be strictly positive"))
    for name in ("p_rf", "p_bb", "p_ps", "p_sw"):
        if not getattr(cfg.power_model, name) >= 0:
            errors.append((name, "must be nonnegative"))
    if not cfg.spacing_factor > 0:
        errors.append(("spacing_factor", "must be strictly positive"))
    if cfg.rng_seed < 0:
        errors.append(("rng_seed", "must be an unsigned integer"))
    return errors


def db2lin(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def bits_to_nats(x):
    """Rates in bits per channel use converted to nats."""
    return np.asarray(x, dtype=float) * math.log(2) if np.ndim(x) else float(x) * math.log(2)


def default_config(**changes) -> ScenarioConfig:
    """The simulation setting used throughout the experiments.

    32 transmit / 4 receive antennas, 4 users and 4 RF chains, L = 8,
    P = 1 W, 15 dB user SNR, a 5 bit/s/Hz rate target for every user
    (stored in nats), target at 0 deg with 20 dB RCS, clutter at -50, -10
    and 40 deg with 30 dB RCS, 0 dB radar noise.
    """
    power = 1.0
    cfg = ScenarioConfig(
        n_tx=32, n_rx=4, n_users=4, n_rf=4, n_slots=8,
        power_budget=power,
        qos_thresholds=(bits_to_nats(5.0),) * 4,
        comm_noise_vars=(power / float(db2lin(15.0)),) * 4,
        radar_noise_var=float(db2lin(0.0)),
        target_angle=0.0,
        target_rcs_var=float(db2lin(20.0)),
        clutter_angles=tuple(np.deg2rad([-50.0, -10.0, 40.0])),
        clutter_rcs_vars=(float(db2lin(30.0)),) * 3,
        power_model=PowerModel(),
        spacing_factor=1.0,
        rng_seed=0,
    )
    return cfg.replace(**changes) if changes else cfg


# -- config files --------------------------------------------------------

_SECTIONS = {
    "array": ("n_tx", "n_rx", "n_users", "n_rf", "n_slots", "spacing_factor"),
    "comm": ("power_budget", "qos_thresholds", "comm_noise_vars"),
    "radar": ("radar_noise_var", "target_angle", "target_rcs_var",
              "clutter_angles", "clutter_rcs_vars"),
    "power_model": ("p_rf", "p_bb", "p_ps", "p_sw"),
    "run": ("rng_seed",),
}
_INT_FIELDS = {"n_tx", "n_rx", "n_users", "n_rf", "n_slots", "rng_seed"}
_LIST_FIELDS = {"qos_thresholds", "comm_noise_vars", "clutter_angles", "clutter_rcs_vars"}
_ANGLE_FIELDS = {"target_angle", "clutter_angles"}
_NUMBER = re.compile(r"^\s*([-+]?[0-9.eE+-]+)\s*([a-zA-Z]*)\s*$")


def _parse_number(text, key):
    match = _NUMBER.match(text)
    if not match:
        raise ConfigError([(key, f"cannot parse {text!r}")])
    value, unit = float(match.group(1)), match.group(2).lower()
    if key == "qos_thresholds":
        if unit not in ("", "nats", "bits"):
            raise ConfigError([(key, f"rates are given in nats or bits, got unit {unit!r}")])
        return bits_to_nats(value) if unit == "bits" else value
    if key in _ANGLE_FIELDS:
        if unit not in ("", "deg"):
            raise ConfigError([(key, f"angles are given in degrees, got unit {unit!r}")])
        return math.radians(value)
    if unit == "db":
        return float(db2lin(value))
    if unit in ("", "w"):
        return value
    if unit == "mw":
        return value * 1e-3
    raise ConfigError([(key, f"unknown unit {unit!r}")])


def load_config(path) -> ScenarioConfig:
    """Read a sectioned ``key = value`` file; unknown keys are rejected.

    Angles are in degrees; any variance or power may carry a ``dB``
    (relative to 1 W) or ``mW`` suffix, and rate thresholds a ``bits`` or
    ``nats`` suffix (nats when bare). A single value for a per-user list
    is broadcast to every user.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    text = Path(path).read_text()
    parser.read_string(text)
    errors = []
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            errors.append((section, "unknown section"))
            continue
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                errors.append((f"{section}.{key}", "unknown key"))
                continue
            try:
                if key in _LIST_FIELDS:
                    items = [s for s in raw.split(",") if s.strip()]
                    values[key] = [_parse_number(s, key) for s in items]
                elif key in _INT_FIELDS:
                    values[key] = int(raw)
                else:
                    values[key] = _parse_number(raw, key)
            except ConfigError as exc:
                errors.extend(exc.errors)
            except ValueError:
                errors.append((key, f"cannot parse {raw!r}"))
    if errors:
        raise ConfigError(errors)

    base = default_config()
    pm_fields = {k: values.pop(k) for k in _SECTIONS["power_model"] if k in values}
    n_users = values.get("n_users", base.n_users)
    for key in ("qos_thresholds", "comm_noise_vars"):
        if key in values and len(values[key]) == 1:
            values[key] = values[key] * n_users
    if "power_budget" in values and "comm_noise_vars" not in values:
        # keep the default 15 dB SNR relative to the configured budget
        values["comm_noise_vars"] = [values["power_budget"] / float(db2lin(15.0))] * n_users
    for key in ("qos_thresholds", "comm_noise_vars"):
        if key not in values and n_users != base.n_users:
            values[key] = [getattr(base, key)[0]] * n_users
    cfg = dataclasses.replace(base, power_model=dataclasses.replace(base.power_model, **pm_fields),
                              **values)
    return cfg.validate()


def dump_config(cfg: ScenarioConfig) -> str:
    """Serialise to the file format read by :func:`load_config` (linear units, degrees)."""
    flat = dataclasses.asdict(cfg)
    flat.update(flat.pop("power_model"))
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            value = flat[key]
            if key in _ANGLE_FIELDS:
                value = np.rad2deg(value)
            if key in _LIST_FIELDS:
                text = ", ".join(repr(float(v)) for v in np.atleast_1d(value))
            elif key in _INT_FIELDS:
                text = str(int(value))
            else:
                text = repr(float(value))
            lines.append(f"{key} = {text}")
        lines.append("")
    return "\n".join(lines)


@functools.lru_cache(maxsize=64)
def radar_channels(cfg: ScenarioConfig) -> tuple:
    """Target channel followed by one channel per clutter patch.

    Cached per scenario; treat the returned arrays as read-only.
    """
    target = radar_channel(cfg.target_angle, cfg.n_rx, cfg.n_tx, cfg.spacing_factor)
    clutter = [radar_channel(a, cfg.n_rx, cfg.n_tx, cfg.spacing_factor)
               for a in cfg.clutter_angles]
    return target, clutter

