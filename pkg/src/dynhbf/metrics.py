"""Communication and radar figures of merit for a hybrid design.

All logarithms are natural: rates are in nats per channel use.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .scenario import ScenarioConfig, radar_channels, steering_vector

__all__ = [
    "ARCHITECTURES",
    "HybridBeamformer",
    "MetricsReport",
    "fixed_mapping",
    "check_architecture",
    "sinr",
    "sinr_all",
    "rate",
    "clutter_noise_covariance",
    "rmi",
    "mse",
    "beampattern",
    "peak_to_sidelobe",
    "power_consumption",
    "energy_efficiencies",
    "evaluate",
]

ARCHITECTURES = ("FC", "FixSPS", "FixDPS", "DymSPS", "DymDPS")
_MAX_MODULUS = {"FC": 1.0, "FixSPS": 1.0, "DymSPS": 1.0, "FixDPS": 2.0, "DymDPS": 2.0}


def fixed_mapping(n_tx: int, n_rf: int) -> np.ndarray:
    """RF chain serving each antenna in the fixed sub-connected layouts.

    Antenna ``i`` (0-based) goes to chain ``ceil((i + 1) n_rf / n_tx) - 1``,
    i.e. contiguous blocks.
    """
    i = np.arange(1, n_tx + 1)
    return -(-(i * n_rf) // n_tx) - 1


@dataclass
class HybridBeamformer:
    f_a: np.ndarray
    f_d: np.ndarray
    architecture: str

    @property
    def precoder(self) -> np.ndarray:
        return self.f_a @ self.f_d

    def copy(self) -> "HybridBeamformer":
        return HybridBeamformer(self.f_a.copy(), self.f_d.copy(), self.architecture)


def check_architecture(f_a: np.ndarray, architecture: str, atol: float = 1e-9) -> list:
    """List the ways ``f_a`` violates its architecture's constraint set."""
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}")
    problems = []
    mod = np.abs(f_a)
    support = mod > atol
    n_tx, n_rf = f_a.shape
    if architecture == "FC":
        if not np.allclose(mod, 1.0, atol=atol):
            problems.append("FC entries must have unit modulus")
        return problems
    if architecture.startswith("Fix"):
        mapping = fixed_mapping(n_tx, n_rf)
        allowed = np.zeros_like(support)
        allowed[np.arange(n_tx), mapping] = True
        if np.any(support & ~allowed):
            problems.append("nonzero entry outside the fixed block support")
        on = mod[np.arange(n_tx), mapping]
    else:
        # a DPS entry may have zero amplitude (two opposed phasors)
        count = support.sum(axis=1)
        bad = count > 1 if architecture.endswith("DPS") else count != 1
        if np.any(bad):
            problems.append("each antenna must connect to exactly one RF chain")
        on = mod[support]
    if architecture.endswith("SPS"):
        if not np.allclose(on, 1.0, atol=atol):
            problems.append("SPS entries must have unit modulus")
    elif np.any(on > 2.0 + atol):
        problems.append("DPS entries must have modulus at most 2")
    return problems


@dataclass
class MetricsReport:
    sinr_per_user: list
    rate_per_user: list
    rmi: float
    p_tol: float
    cee: float
    ree: float

    def to_dict(self) -> dict:
        return asdict(self)


def _gains(h: np.ndarray, precoder: np.ndarray) -> np.ndarray:
    """``|h_u^H t_v|^2`` as an (n_users, n_streams) array."""
    return np.abs(h.conj().T @ precoder) ** 2


def sinr(h_u: np.ndarray, bf: HybridBeamformer, u: int, noise_var: float) -> float:
    g = np.abs(h_u.conj() @ bf.precoder) ** 2
    return float(g[u] / (g.sum() - g[u] + noise_var))


def sinr_all(h: np.ndarray, precoder: np.ndarray, noise_vars) -> np.ndarray:
    """SINR of every user for the effective precoder ``F_A F_D`` (or ``T``)."""
    g = _gains(h, precoder)
    own = np.diag(g)
    return own / (g.sum(axis=1) - own + np.asarray(noise_vars))


def rate(sinr_value, base=np.e):
    """``log(1 + sinr)``; natural log unless ``base`` is given."""
    out = np.log1p(sinr_value)
    if base != np.e:
        out = out / np.log(base)
    return out


def clutter_noise_covariance(t_eff: np.ndarray, cfg: ScenarioConfig) -> np.ndarray:
    _, clutter = radar_channels(cfg)
    r = cfg.radar_noise_var * np.eye(cfg.n_rx, dtype=complex)
    for ch, var in zip(clutter, cfg.clutter_rcs_vars):
        x = ch.matrix @ t_eff
        r += var * (x @ x.conj().T)
    return r


def rmi(t_eff: np.ndarray, cfg: ScenarioConfig) -> float:
    """Radar mutual information ``log det(I + s_T A T T^H A^H R_CN^-1)``."""
    target, _ = radar_channels(cfg)
    x = target.matrix @ t_eff
    r_cn = clutter_noise_covariance(t_eff, cfg)
    # det(I + s X X^H R^-1) = det(I + s X^H R^-1 X); solve, never invert
    inner = np.eye(x.shape[1]) + cfg.target_rcs_var * (x.conj().T @ np.linalg.solve(r_cn, x))
    sign, logdet = np.linalg.slogdet(inner)
    return float(logdet)


def mse(t_eff: np.ndarray, h_u: np.ndarray, delta_u: complex, u: int, noise_var: float) -> float:
    """``E|s_u - delta_u y_u|^2`` for unit-power independent symbols."""
    g = h_u.conj() @ t_eff
    interference = np.sum(np.abs(g) ** 2) - np.abs(g[u]) ** 2
    return float(np.abs(1 - delta_u * g[u]) ** 2
                 + np.abs(delta_u) ** 2 * (interference + noise_var))


def transmit_gain(precoder: np.ndarray, angles, n_tx: int, spacing_factor: float) -> np.ndarray:
    """Unnormalised ``||a_tx(theta)^T F||^2`` on a grid of angles."""
    steer = np.stack([steering_vector(a, n_tx, spacing_factor) for a in np.atleast_1d(angles)])
    return np.sum(np.abs(steer @ precoder) ** 2, axis=1)


def beampattern(bf, angle_grid, cfg: ScenarioConfig) -> np.ndarray:
    """Transmit beampattern in dB, normalised to a 0 dB grid maximum.

    ``bf`` may be a :class:`HybridBeamformer` or an effective precoder.
    Returns an array of shape (n_angles, 2) holding (angle, dB).
    """
    precoder = bf.precoder if isinstance(bf, HybridBeamformer) else np.asarray(bf)
    angles = np.atleast_1d(np.asarray(angle_grid, dtype=float))
    if angles.size == 0:
        raise ValueError("angle grid must be nonempty")
    gain = transmit_gain(precoder, angles, cfg.n_tx, cfg.spacing_factor)
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(gain / gain.max())
    return np.column_stack([angles, db])


def peak_to_sidelobe(angles, gain_db, target_angle: float, n_tx: int,
                     spacing_factor: float = 1.0) -> float:
    """Mainlobe peak over the strongest sidelobe, in dB.

    ``angles`` are radians. The mainlobe is the region within one
    null-to-peak width of the target in spatial frequency
    ``u = k (sin theta - sin theta_T)``, i.e. ``|u - round(u)| < 1/n_tx``;
    integer shifts of ``u`` are grating copies of the same lobe and are
    excluded from the sidelobes too.
    """
    angles = np.asarray(angles, dtype=float)
    gain_db = np.asarray(gain_db, dtype=float)
    u = spacing_factor * (np.sin(angles) - np.sin(target_angle))
    main = np.abs(u - np.round(u)) < 1.0 / n_tx
    if not np.any(main) or np.all(main):
        raise ValueError("angle grid does not resolve the mainlobe and its sidelobes")
    return float(np.max(gain_db[main]) - np.max(gain_db[~main]))


def power_consumption(architecture: str, cfg: ScenarioConfig) -> float:
    """Total power draw ``P_TOL`` of an architecture, watts."""
    pm = cfg.power_model
    base = cfg.power_budget + cfg.n_rf * pm.p_rf + pm.p_bb
    n_t = cfg.n_tx
    if architecture == "FC":
        return base + n_t * cfg.n_rf * pm.p_ps
    if architecture == "FixSPS":
        return base + n_t * pm.p_ps
    if architecture == "FixDPS":
        return base + 2 * n_t * pm.p_ps
    if architecture == "DymSPS":
        return base + n_t * pm.p_ps + n_t * pm.p_sw
    if architecture == "DymDPS":
        return base + 2 * n_t * pm.p_ps + n_t * pm.p_sw
    raise ValueError(f"unknown architecture {architecture!r}")


def energy_efficiencies(rates, rmi_value: float, p_tol: float) -> tuple:
    """(CEE, REE): sum-rate and RMI per watt of consumed power."""
    if not p_tol > 0:
        raise ValueError("p_tol must be positive")
    return float(np.sum(rates)) / p_tol, float(rmi_value) / p_tol


def evaluate(bf: HybridBeamformer, h: np.ndarray, cfg: ScenarioConfig) -> MetricsReport:
    """Full report for a designed beamformer on the given user channels."""
    precoder = bf.precoder
    s = sinr_all(h, precoder, cfg.comm_noise_vars)
    r = rate(s)
    radar = rmi(precoder, cfg)
    p_tol = power_consumption(bf.architecture, cfg)
    cee, ree = energy_efficiencies(r, radar, p_tol)
    return MetricsReport(sinr_per_user=[float(v) for v in s],
                         rate_per_user=[float(v) for v in r],
                         rmi=radar, p_tol=p_tol, cee=cee, ree=ree)
