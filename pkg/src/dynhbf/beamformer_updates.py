"""Analog/digital beamformer updates and the WMMSE auxiliary variables.

Every analog update minimises ``||T_tilde - F_A F_D||_F^2`` over the
architecture's constraint set with ``F_D`` held fixed, where
``T_tilde = T + Lambda / rho``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import ARCHITECTURES, fixed_mapping

__all__ = [
    "AmplitudeOutOfRange",
    "EmptySubarray",
    "DpsRealization",
    "tilde_target",
    "update_abf",
    "update_abf_dym_dps",
    "dps_decompose",
    "dps_realize",
    "update_dbf",
    "update_receivers",
    "update_weights",
    "coupling_cost",
]

DEGENERATE_NORM = 1e-12
FC_SWEEPS = 20
FC_TOL = 1e-10


class AmplitudeOutOfRange(ValueError):
    pass


class EmptySubarray(np.linalg.LinAlgError):
    """Some RF chain drives no antenna, so ``F_A^H F_A`` is singular."""

    def __init__(self, chains):
        self.chains = list(chains)
        super().__init__(f"RF chains {self.chains} have no connected antenna")


@dataclass
class DpsRealization:
    phi1: np.ndarray
    phi2: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray

    def entries(self) -> np.ndarray:
        out = np.exp(1j * self.phi1) + np.exp(1j * self.phi2)
        return np.where(self.amplitude > 0, out, 0)


def tilde_target(t_eff: np.ndarray, lam: np.ndarray, rho: float) -> np.ndarray:
    if not rho > 0:
        raise ValueError("rho must be positive")
    return t_eff + lam / rho


def coupling_cost(t_tilde, f_a, f_d) -> float:
    return float(np.linalg.norm(t_tilde - f_a @ f_d) ** 2)


def _correlations(t_tilde, f_d):
    """``c[i, j] = F_D[j, :] T_tilde[i, :]^H`` and the row energies of ``F_D``."""
    c = t_tilde.conj() @ f_d.T
    energy = np.sum(np.abs(f_d) ** 2, axis=1)
    return c, energy


def _closed_form_entries(c, energy, max_modulus, unit_modulus):
    """Per-entry minimisers of ``e |x|^2 - 2 Re(x c)`` and their costs."""
    phase = np.angle(np.conj(c))
    phase = np.where(np.abs(c) == 0, 0.0, phase)
    degenerate = energy < DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, energy)
    if unit_modulus:
        amp = np.ones_like(np.abs(c))
    else:
        amp = np.minimum(np.abs(c) / safe, max_modulus)
    entry = amp * np.exp(1j * phase)
    cost = safe * np.abs(entry) ** 2 - 2 * np.real(entry * c)
    # a chain with no digital weight contributes nothing whatever the entry;
    # a unit phasor keeps the entry valid for every architecture
    entry = np.where(degenerate, 1.0 + 0j, entry)
    cost = np.where(degenerate, 0.0, cost)
    return entry, cost


def _dynamic(t_tilde, f_d, unit_modulus):
    c, energy = _correlations(t_tilde, f_d)
    entry, cost = _closed_form_entries(c, energy[None, :], 2.0, unit_modulus)
    # argmin returns the lowest index on ties
    best = np.argmin(cost, axis=1)
    f_a = np.zeros_like(entry)
    rows = np.arange(entry.shape[0])
    f_a[rows, best] = entry[rows, best]
    return f_a


def update_abf_dym_dps(t_tilde: np.ndarray, f_d: np.ndarray) -> np.ndarray:
    """Row-by-row dynamic update with double phase shifters (modulus <= 2)."""
    return _dynamic(t_tilde, f_d, unit_modulus=False)


def _fixed(t_tilde, f_d, unit_modulus):
    n_tx = t_tilde.shape[0]
    n_rf = f_d.shape[0]
    mapping = fixed_mapping(n_tx, n_rf)
    c, energy = _correlations(t_tilde, f_d)
    rows = np.arange(n_tx)
    entry, _ = _closed_form_entries(c[rows, mapping], energy[mapping], 2.0, unit_modulus)
    if unit_modulus:
        # SPS entries are unit modulus even when the chain is idle
        entry = np.exp(1j * np.angle(np.conj(c[rows, mapping])))
    f_a = np.zeros((n_tx, n_rf), dtype=complex)
    f_a[rows, mapping] = entry
    return f_a


def _fully_connected(t_tilde, f_d, f_a0):
    """Exact cyclic coordinate minimisation over unit-modulus entries."""
    f_a = np.array(f_a0, dtype=complex)
    cost = coupling_cost(t_tilde, f_a, f_d)
    for _ in range(FC_SWEEPS):
        for j in range(f_d.shape[0]):
            resid = t_tilde - f_a @ f_d + np.outer(f_a[:, j], f_d[j])
            r = resid @ f_d[j].conj()
            phase = np.where(np.abs(r) == 0, np.angle(f_a[:, j]), np.angle(r))
            f_a[:, j] = np.exp(1j * phase)
        new = coupling_cost(t_tilde, f_a, f_d)
        done = cost - new < FC_TOL
        cost = new
        if done:
            break
    return f_a


def update_abf(architecture: str, t_tilde: np.ndarray, f_d: np.ndarray,
               f_a: np.ndarray | None = None) -> np.ndarray:
    """Analog update for any supported architecture.

    ``f_a`` is the current analog matrix; only the fully connected update
    (a coordinate descent) uses it, as its starting point.
    """
    if architecture == "DymDPS":
        return _dynamic(t_tilde, f_d, unit_modulus=False)
    if architecture == "DymSPS":
        return _dynamic(t_tilde, f_d, unit_modulus=True)
    if architecture == "FixDPS":
        return _fixed(t_tilde, f_d, unit_modulus=False)
    if architecture == "FixSPS":
        return _fixed(t_tilde, f_d, unit_modulus=True)
    if architecture == "FC":
        if f_a is None:
            f_a = np.ones((t_tilde.shape[0], f_d.shape[0]), dtype=complex)
        return _fully_connected(t_tilde, f_d, f_a)
    raise ValueError(f"unknown architecture {architecture!r}; expected one of {ARCHITECTURES}")


def dps_decompose(amplitude, phase):
    """Split ``A e^{j phi}`` (``0 <= A <= 2``) into two unit phasors.

    Returns ``(phi1, phi2)`` with ``e^{j phi1} + e^{j phi2} = A e^{j phi}``.
    """
    amplitude = np.asarray(amplitude, dtype=float)
    tol = 1e-12
    if np.any(amplitude < 0) or np.any(amplitude > 2 + tol):
        raise AmplitudeOutOfRange("DPS amplitude must lie in [0, 2]")
    offset = np.arccos(np.clip(amplitude / 2, 0.0, 1.0))
    return phase + offset, phase - offset


def dps_realize(f_a: np.ndarray) -> DpsRealization:
    amplitude = np.abs(f_a)
    phase = np.where(amplitude > 0, np.angle(f_a), 0.0)
    phi1, phi2 = dps_decompose(np.minimum(amplitude, 2.0), phase)
    return DpsRealization(phi1=phi1, phi2=phi2, amplitude=amplitude, phase=phase)


def update_dbf(f_a: np.ndarray, t_tilde: np.ndarray) -> np.ndarray:
    """Least-squares digital beamformer ``(F_A^H F_A)^-1 F_A^H T_tilde``."""
    idle = np.flatnonzero(~np.any(np.abs(f_a) > 0, axis=0))
    if idle.size:
        raise EmptySubarray(idle)
    gram = f_a.conj().T @ f_a
    return np.linalg.solve(gram, f_a.conj().T @ t_tilde)


def _user_gains(t_eff, h):
    """``g[u, v] = h_u^H t_v``."""
    return h.conj().T @ t_eff


def update_receivers(t_eff: np.ndarray, h: np.ndarray, noise_vars) -> np.ndarray:
    """MMSE receive coefficients ``delta_u``."""
    g = _user_gains(t_eff, h)
    total = np.sum(np.abs(g) ** 2, axis=1) + np.asarray(noise_vars)
    return np.conj(np.diag(g)) / total


def update_weights(t_eff: np.ndarray, h: np.ndarray, noise_vars) -> np.ndarray:
    """MSE weights ``w_u = 1 + SINR_u``."""
    p = np.abs(_user_gains(t_eff, h)) ** 2
    own = np.diag(p)
    return 1 + own / (p.sum(axis=1) - own + np.asarray(noise_vars))
