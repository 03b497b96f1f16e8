"""Convex QCQP over the waveform matrix ``T``.

Solves::

    minimize    sum_u t_u^H K t_u - Re<q, T>
    subject to  g_i(T) <= 0   (per-user QoS quadratics)
                ||T||_F^2 <= P

where every quadratic has the Kronecker form ``I kron B_i``. Because the
Lagrangian Hessian ``I kron (K + sum_i lambda_i B_i)`` stays
block-diagonal with identical ``n_tx x n_tx`` blocks, the primal variable
is eliminated in closed form for any multiplier vector and the method
runs a log-barrier Newton iteration on the ``m = n_users + 1`` dual
variables. Every Newton step costs one ``n_tx x n_tx`` Cholesky
factorisation. On the central path ``g_i(T) = -mu / lambda_i``, so the
recovered primal iterates are strictly feasible.

The complex-to-real convention used for certificates and the dense
Phase-I solver is ``x = [Re vec(T); Im vec(T)]`` with ``vec`` stacking
columns; a Hermitian form ``t^H M t`` becomes ``x^T [[Re M, -Im M],
[Im M, Re M]] x``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg as sla

from .mm_engine import StructuredQuadratic, power_quadratic, vec

__all__ = [
    "QcqpProblem",
    "QcqpSolution",
    "QcqpInfeasible",
    "QcqpMaxIterations",
    "solve",
    "feasible_point",
    "real_embedding",
]


class QcqpInfeasible(Exception):
    """The constraints admit no (strictly) feasible point.

    ``certificate`` holds simplex weights ``lambda`` for which
    ``min_T sum_i lambda_i g_i(T) >= bound > 0``; the last weight belongs to
    the power constraint.
    """

    def __init__(self, message, certificate=None, bound=None):
        super().__init__(message)
        self.certificate = certificate
        self.bound = bound


class QcqpMaxIterations(Exception):
    """Iteration budget exhausted; ``best`` carries the last iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class QcqpProblem:
    objective: StructuredQuadratic
    constraints: list
    power: float

    @property
    def shape(self) -> tuple:
        return self.objective.lin.shape

    @property
    def dim(self) -> int:
        n, u = self.shape
        return n * u

    def all_constraints(self) -> list:
        n, u = self.shape
        return list(self.constraints) + [power_quadratic(n, u, self.power)]


@dataclass
class QcqpSolution:
    t: np.ndarray
    multipliers: np.ndarray
    kkt_residual: float
    iterations: int
    objective: float = np.nan
    constraint_values: np.ndarray = field(default=None)
    stationarity: float = np.nan
    complementarity: float = np.nan

    @property
    def t_vec(self) -> np.ndarray:
        return vec(self.t)


def _is_constant(q: StructuredQuadratic) -> bool:
    return not np.any(q.core) and not np.any(q.lin)


def _split_constant(constraints, tol):
    """Drop constraints that do not depend on ``T``; fail if one is violated."""
    kept, index = [], []
    for i, c in enumerate(constraints):
        if _is_constant(c):
            if c.const > tol:
                raise QcqpInfeasible(f"constraint {i} is a violated constant ({c.const:.3g})")
            continue
        kept.append(c)
        index.append(i)
    return kept, index


class _DualModel:
    """Closed-form primal minimiser and dual derivatives for given multipliers."""

    def __init__(self, objective, constraints):
        self.k0 = objective.core
        self.l0 = objective.lin
        self.c0 = objective.const
        self.cores = np.stack([c.core for c in constraints])
        self.lins = np.stack([c.lin for c in constraints])
        self.consts = np.array([c.const for c in constraints])
        # rank-one cores (QoS constraints) keep gradients cheap
        self.m = len(constraints)

    def primal(self, lam):
        k = self.k0 + (lam @ self.cores.reshape(self.m, -1)).reshape(self.k0.shape)
        l = self.l0 + (lam @ self.lins.reshape(self.m, -1)).reshape(self.l0.shape)
        chol = sla.cho_factor(k, lower=True, check_finite=False)
        t = 0.5 * sla.cho_solve(chol, l, check_finite=False)
        return t, chol, k, l

    def values(self, t, ct=None):
        if ct is None:
            ct = self.cores @ t
        quad = np.real(np.sum(t.conj() * ct, axis=(1, 2)))
        lin = np.real(np.sum(self.lins.conj() * t, axis=(1, 2)))
        return quad - lin + self.consts

    def objective(self, t):
        return float(np.real(np.vdot(t, self.k0 @ t)) - np.real(np.vdot(self.l0, t)) + self.c0)

    def evaluate(self, lam, hessian=True):
        t, chol, k, l = self.primal(lam)
        ct = self.cores @ t
        g = self.values(t, ct)
        dual = self.objective(t) + lam @ g
        if not hessian:
            return t, g, dual, None
        grads = 2 * ct - self.lins
        n, u = t.shape
        stacked = np.concatenate(list(grads), axis=1)
        sol = 0.5 * sla.cho_solve(chol, stacked, check_finite=False)
        sol = sol.reshape(n, self.m, u).transpose(1, 0, 2)
        flat = grads.reshape(self.m, -1)
        h = -np.real(flat.conj() @ sol.reshape(self.m, -1).T)
        return t, g, dual, 0.5 * (h + h.T)


def solve(problem: QcqpProblem, tol: float = 1e-8, max_iter: int = 100,
          lam0=None, mu0: float = 1.0) -> QcqpSolution:
    """Solve the QCQP with a KKT certificate.

    Parameters
    ----------
    problem : QcqpProblem
    tol : float
        Target for primal infeasibility, complementary slackness and the
        relative stationarity residual.
    max_iter : int
        Budget of Newton steps.
    lam0 : array_like, optional
        Warm start for the multipliers (QoS constraints then power).
    mu0 : float
        Initial barrier weight; reduced tenfold per centring.

    Raises
    ------
    QcqpInfeasible
        The multipliers diverge, i.e. the dual is unbounded.
    QcqpMaxIterations
        Newton budget exhausted before the certificate reached ``tol``.
    """
    constraints = problem.all_constraints()
    kept, index = _split_constant(constraints, tol)
    model = _DualModel(problem.objective, kept)
    m = model.m

    lam = np.ones(m) if lam0 is None else np.maximum(np.asarray(lam0, float)[index], 1e-3)
    mu = mu0
    mu_final = 1e-2 * tol
    it = 0
    t, g, dual, hess = model.evaluate(lam)

    def phi(d, l_):
        return d + mu * np.sum(np.log(l_))

    while True:
        grad = g + mu / lam
        neg_h = -hess + np.diag(mu / lam ** 2)
        try:
            step = sla.solve(neg_h, grad, assume_a="pos", check_finite=False)
        except (sla.LinAlgError, ValueError):
            step = np.linalg.lstsq(neg_h, grad, rcond=None)[0]
        decrement = float(grad @ step)
        centred = decrement <= 1e-2 * mu
        if mu > mu_final:
            if centred:
                mu = max(mu / 10.0, mu_final)
                continue
        # a small decrement alone does not bound lambda_i g_i when the dual
        # Hessian is large, so the last centring also checks it directly
        elif (centred and np.max(np.abs(lam * grad)) <= 0.1 * tol) or decrement <= 1e-24:
            break
        if it >= max_iter:
            best = _certify(model, lam, t, g, index, len(constraints), it)
            raise QcqpMaxIterations(f"QCQP did not converge in {max_iter} Newton steps", best)
        it += 1

        # stay strictly inside lambda > 0
        neg = step < 0
        s = 1.0
        if np.any(neg):
            s = min(1.0, 0.99 * float(np.min(-lam[neg] / step[neg])))
        base = phi(dual, lam)
        # near the optimum the predicted gain drops below the rounding error
        # of phi itself; accept such steps rather than shrink them to nothing
        slack = 1e-11 * max(1.0, abs(base))
        while True:
            cand = lam + s * step
            t_c, g_c, d_c, _ = model.evaluate(cand, hessian=False)
            if phi(d_c, cand) >= base + 0.25 * s * decrement - slack or s < 1e-12:
                break
            s *= 0.5
        lam = cand
        t, g, dual, hess = model.evaluate(lam)
        if np.max(lam) > 1e12:
            cert = np.zeros(len(constraints))
            cert[index] = lam / lam.sum()
            raise QcqpInfeasible("multipliers diverge: constraints cannot hold together",
                                 certificate=cert)

    sol = _certify(model, lam, t, g, index, len(constraints), it)
    return sol


def _certify(model, lam, t, g, index, n_constraints, iterations):
    k = model.k0 + np.tensordot(lam, model.cores, axes=1)
    l = model.l0 + np.tensordot(lam, model.lins, axes=1)
    station = np.linalg.norm(2 * k @ t - l) / max(1.0, np.linalg.norm(l))
    compl = float(np.max(np.abs(lam * g))) if len(g) else 0.0
    infeas = float(max(0.0, np.max(g))) if len(g) else 0.0
    multipliers = np.zeros(n_constraints)
    multipliers[index] = lam
    values = np.full(n_constraints, np.nan)
    values[index] = g
    return QcqpSolution(t=t, multipliers=multipliers,
                        kkt_residual=float(max(station, compl, infeas)),
                        iterations=iterations, objective=model.objective(t),
                        constraint_values=values, stationarity=float(station),
                        complementarity=compl)


# -- Phase I ---------------------------------------------------------------

def real_embedding(q: StructuredQuadratic) -> tuple:
    """Dense real data ``(M, m, c)`` with ``g(x) = x^T M x - m^T x + c``."""
    big = q.dense_matrix()
    mvec = q.dense_vector()
    mat = np.block([[big.real, -big.imag], [big.imag, big.real]])
    return 0.5 * (mat + mat.T), np.concatenate([mvec.real, mvec.imag]), float(q.const)


def _phase1_center(data, x, s, tau, budget):
    """Newton centring of ``tau s - sum log(s - g_i(x))``; returns steps used."""
    dim = x.size
    steps = 0

    def gvals(x_):
        return np.array([x_ @ M @ x_ - mv @ x_ + c for M, mv, c in data])

    while True:
        slack = s - gvals(x)
        grads = np.array([2 * M @ x - mv for M, mv, _ in data])
        gradient = np.append(grads.T @ (1 / slack), tau - np.sum(1 / slack))
        hess = np.zeros((dim + 1, dim + 1))
        for i, (M, _, _) in enumerate(data):
            hess[:dim, :dim] += 2 * M / slack[i]
            v = np.append(grads[i], -1.0)
            hess += np.outer(v, v) / slack[i] ** 2
        step = -np.linalg.solve(hess + 1e-14 * np.eye(dim + 1), gradient)
        decrement = -gradient @ step
        if decrement / 2 <= 1e-10:
            return x, s, steps
        steps += 1
        if steps > budget:
            raise QcqpMaxIterations("Phase-I did not converge")
        f0 = tau * s - np.sum(np.log(slack))
        a = 1.0
        while a > 1e-14:
            xn, sn = x + a * step[:dim], s + a * step[dim]
            sl = sn - gvals(xn)
            if np.all(sl > 0):
                fn = tau * sn - np.sum(np.log(sl))
                if fn <= f0 - 0.25 * a * decrement:
                    break
            a *= 0.5
        else:
            return x, s, steps
        if fn >= f0:
            # accepted only through roundoff: the centre is as good as it gets
            return x, s, steps
        x, s = xn, sn


def feasible_point(constraints, power: float, shape=None, eps: float = 1e-9,
                   max_iter: int = 500) -> np.ndarray:
    """Phase-I: a point minimising the largest constraint value.

    Minimises ``s`` subject to ``g_i(T) <= s`` (power included) with a
    dense barrier method on the real embedding. Returns the minimiser when
    the optimum is below ``-eps``; otherwise raises :class:`QcqpInfeasible`
    with simplex multipliers as certificate. Meant for one-off use: each
    Newton step factors a dense ``2 n_tx n_users + 1`` system.
    """
    if shape is None:
        if not constraints:
            raise ValueError("shape is required when there are no constraints")
        shape = constraints[0].lin.shape
    n, u = shape
    all_c = list(constraints) + [power_quadratic(n, u, power)]
    kept, index = _split_constant(all_c, eps)
    data = [real_embedding(c) for c in kept]
    m = len(kept)

    x = np.zeros(2 * n * u)
    s = max(float(x @ M @ x - mv @ x + c) for M, mv, c in data) + 1.0
    tau = 1.0
    budget = max_iter
    while True:
        x, s, used = _phase1_center(data, x, s, tau, budget)
        budget -= used
        lower = s - m / tau
        if lower > 0 or m / tau < 1e-8 * max(1.0, abs(s)):
            break
        tau *= 10.0
    g = np.array([x @ M @ x - mv @ x + c for M, mv, c in data])
    if np.max(g) >= -eps:
        weights = 1 / (tau * (s - g))
        cert = np.zeros(len(all_c))
        cert[index] = weights / weights.sum()
        raise QcqpInfeasible("no strictly feasible point exists", certificate=cert,
                             bound=float(lower))
    t = x[: n * u] + 1j * x[n * u:]
    return t.reshape(n, u, order="F")
