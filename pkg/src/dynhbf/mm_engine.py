"""Majorization-minimization pieces for the waveform (T) subproblem.

The radar term is lifted into a block matrix ``Xi(T)`` whose Schur
complement reproduces the RMI, linearised through the gradient of the
convex map ``C -> log det(E^H C^-1 E)``, and the result is folded into a
quadratic in ``T`` alongside the augmented-Lagrangian coupling terms.

Quadratics here act on an ``(n_tx, n_users)`` matrix ``T`` and have the
Kronecker form ``vec(T)^H (I kron B) vec(T) - Re(l^H vec(T)) + c`` with
``vec`` stacking columns. Only the ``n_tx x n_tx`` core ``B`` and the
matrix-shaped linear term ``l`` are stored.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .metrics import mse as _mse
from .scenario import ScenarioConfig, radar_channels

__all__ = [
    "SingularLift",
    "StructuredQuadratic",
    "LiftedForm",
    "MMQuadratic",
    "QoSQuadratic",
    "power_quadratic",
    "lift_xi",
    "lifted_rmi",
    "log_det_schur",
    "minorizer_gain",
    "assemble_quadratic",
    "qos_quadratics",
    "al_objective",
    "vec",
    "unvec",
]

SINGULAR_COND = 1e12


class SingularLift(np.linalg.LinAlgError):
    """The lifted matrix is numerically singular (degenerate scenario)."""


def vec(mat: np.ndarray) -> np.ndarray:
    return np.asarray(mat).reshape(-1, order="F")


def unvec(v: np.ndarray, n_rows: int) -> np.ndarray:
    return np.asarray(v).reshape(n_rows, -1, order="F")


@dataclass
class StructuredQuadratic:
    """``sum_u t_u^H B t_u - Re<L, T> + c`` with Hermitian PSD core ``B``."""

    core: np.ndarray
    lin: np.ndarray
    const: float = 0.0

    def value(self, t: np.ndarray) -> float:
        quad = np.real(np.vdot(t, self.core @ t))
        return float(quad - np.real(np.vdot(self.lin, t)) + self.const)

    def grad(self, t: np.ndarray) -> np.ndarray:
        """Gradient for the real inner product ``Re<A, B>``."""
        return 2 * self.core @ t - self.lin

    def dense_matrix(self) -> np.ndarray:
        return np.kron(np.eye(self.lin.shape[1]), self.core)

    def dense_vector(self) -> np.ndarray:
        return vec(self.lin)

    def dense_value(self, t: np.ndarray) -> float:
        x = vec(t)
        return float(np.real(x.conj() @ self.dense_matrix() @ x)
                     - np.real(self.dense_vector().conj() @ x) + self.const)


@dataclass
class MMQuadratic(StructuredQuadratic):
    """Surrogate of the AL objective around ``T_k``.

    ``core`` holds ``sum_q s_q A_q^H G22 A_q`` only; the coupling penalty
    enters as the scalar ``shift`` so the full Hessian block is
    ``core + shift I``.
    """

    shift: float = 0.0
    g_k: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.radar_core = self.core
        self.core = self.radar_core + self.shift * np.eye(self.radar_core.shape[0])

    @property
    def q_hat(self) -> np.ndarray:
        return self.dense_vector()


@dataclass
class QoSQuadratic(StructuredQuadratic):
    """Per-user WMMSE constraint ``w mse(T, delta) - log w - 1 + Gamma``."""

    user: int = 0
    h: np.ndarray = field(default=None, repr=False)
    weight: float = 1.0
    receiver: complex = 0.0

    @property
    def scale(self) -> float:
        return float(self.weight * abs(self.receiver) ** 2)


def power_quadratic(n_tx: int, n_users: int, power: float) -> StructuredQuadratic:
    return StructuredQuadratic(core=np.eye(n_tx, dtype=complex),
                               lin=np.zeros((n_tx, n_users), dtype=complex),
                               const=-float(power))


@dataclass
class LiftedForm:
    xi: np.ndarray
    e_mat: np.ndarray
    r_tc_hat: np.ndarray

    @property
    def n_users(self) -> int:
        return self.e_mat.shape[1]


def _radar_mats(cfg):
    target, clutter = radar_channels(cfg)
    mats = [target.matrix] + [c.matrix for c in clutter]
    variances = [cfg.target_rcs_var] + list(cfg.clutter_rcs_vars)
    return mats, variances


def lift_xi(t_eff: np.ndarray, cfg: ScenarioConfig) -> LiftedForm:
    """Block matrix ``[[I, sqrt(s_T) T^H A_T^H], [sqrt(s_T) A_T T, R_tc + s_r I]]``.

    ``R_tc`` sums the target and every clutter return, so the lower-right
    block is ``X X^H + R_CN`` with ``X = sqrt(s_T) A_T T``.
    """
    mats, variances = _radar_mats(cfg)
    n_u = t_eff.shape[1]
    n_r = cfg.n_rx
    r_tc = np.zeros((n_r, n_r), dtype=complex)
    for a, var in zip(mats, variances):
        x = a @ t_eff
        r_tc += var * (x @ x.conj().T)
    x_t = np.sqrt(cfg.target_rcs_var) * (mats[0] @ t_eff)
    xi = np.block([[np.eye(n_u), x_t.conj().T],
                   [x_t, r_tc + cfg.radar_noise_var * np.eye(n_r)]])
    xi = 0.5 * (xi + xi.conj().T)
    e_mat = np.vstack([np.eye(n_u), np.zeros((n_r, n_u))])
    return LiftedForm(xi=xi, e_mat=e_mat, r_tc_hat=r_tc)


def log_det_schur(c: np.ndarray, e_mat: np.ndarray) -> float:
    """``log det(E^H C^-1 E)`` for Hermitian PD ``C``."""
    inner = e_mat.conj().T @ np.linalg.solve(c, e_mat)
    inner = 0.5 * (inner + inner.conj().T)
    sign, logdet = np.linalg.slogdet(inner)
    return float(logdet)


def lifted_rmi(t_eff: np.ndarray, cfg: ScenarioConfig) -> float:
    """RMI evaluated through the lifted form; equals :func:`metrics.rmi`."""
    lifted = lift_xi(t_eff, cfg)
    return log_det_schur(lifted.xi, lifted.e_mat)


def minorizer_gain(lifted, e_mat: np.ndarray | None = None) -> np.ndarray:
    """``G = C^-1 E (E^H C^-1 E)^-1 E^H C^-1``, minus the gradient of ``log det(E^H C^-1 E)``.

    Accepts a :class:`LiftedForm` or a bare matrix together with ``e_mat``.
    """
    if isinstance(lifted, LiftedForm):
        c, e_mat = lifted.xi, lifted.e_mat
    else:
        c = np.asarray(lifted)
    if np.linalg.cond(c) > SINGULAR_COND:
        raise SingularLift("lifted matrix is numerically singular")
    c_inv_e = np.linalg.solve(c, e_mat)
    inner = e_mat.conj().T @ c_inv_e
    g = c_inv_e @ np.linalg.solve(inner, c_inv_e.conj().T)
    return 0.5 * (g + g.conj().T)


def assemble_quadratic(g_k: np.ndarray, cfg: ScenarioConfig, rho: float,
                       lam: np.ndarray, precoder: np.ndarray,
                       t_k: np.ndarray | None = None) -> MMQuadratic:
    """Quadratic surrogate of the augmented Lagrangian in ``T``.

    The returned quadratic equals, up to its constant,
    ``Tr[G_k Xi(T)] + rho/2 ||T - F_A F_D||^2 + Re Tr[Lambda^H (T - F_A F_D)]``.
    When ``t_k`` is given the constant is chosen so the value at ``T_k``
    equals the exact augmented Lagrangian there (tangency), making the
    quadratic an upper bound of the AL objective everywhere.
    """
    mats, variances = _radar_mats(cfg)
    n_u = g_k.shape[0] - cfg.n_rx
    g11 = g_k[:n_u, :n_u]
    g12 = g_k[:n_u, n_u:]
    g22 = g_k[n_u:, n_u:]
    core = sum(var * (a.conj().T @ g22 @ a) for a, var in zip(mats, variances))
    core = 0.5 * (core + core.conj().T)
    lin = (-2 * np.sqrt(cfg.target_rcs_var) * mats[0].conj().T @ g12.conj().T
           + rho * precoder - lam)
    const = (np.real(np.trace(g22)) * cfg.radar_noise_var + np.real(np.trace(g11))
             + 0.5 * rho * np.linalg.norm(precoder) ** 2
             - np.real(np.vdot(lam, precoder)))
    quad = MMQuadratic(core=core, lin=lin, const=float(const), shift=0.5 * rho, g_k=g_k)
    if t_k is not None:
        target = al_objective(t_k, cfg, rho, lam, precoder)
        quad.const += target - quad.value(t_k)
    return quad


def al_objective(t_eff: np.ndarray, cfg: ScenarioConfig, rho: float,
                 lam: np.ndarray, precoder: np.ndarray) -> float:
    """``-RMI(T) + rho/2 ||T - F_A F_D||^2 + Re Tr[Lambda^H (T - F_A F_D)]``."""
    from .metrics import rmi

    diff = t_eff - precoder
    return float(-rmi(t_eff, cfg) + 0.5 * rho * np.linalg.norm(diff) ** 2
                 + np.real(np.vdot(lam, diff)))


def qos_quadratics(receivers, weights, h: np.ndarray, cfg: ScenarioConfig,
                   guard: float = 0.0) -> list:
    """One convex quadratic constraint per user (value <= 0 means QoS met).

    ``guard`` raises every threshold by the same amount (nats).
    """
    n_t, n_u = h.shape
    out = []
    for u in range(n_u):
        d, w = complex(receivers[u]), float(weights[u])
        h_u = h[:, u]
        lin = np.zeros((n_t, n_u), dtype=complex)
        lin[:, u] = 2 * w * np.conj(d) * h_u
        const = (w * (1 + abs(d) ** 2 * cfg.comm_noise_vars[u]) - np.log(w) - 1
                 + cfg.qos_thresholds[u] + guard)
        core = w * abs(d) ** 2 * np.outer(h_u, h_u.conj())
        out.append(QoSQuadratic(core=core, lin=lin, const=float(const), user=u,
                                h=h_u, weight=w, receiver=d))
    return out


def qos_value(t_eff, h_u, delta_u, w_u, u, noise_var, threshold) -> float:
    """Direct evaluation of ``w mse - log w - 1 + Gamma``."""
    return float(w_u * _mse(t_eff, h_u, delta_u, u, noise_var) - np.log(w_u) - 1 + threshold)
