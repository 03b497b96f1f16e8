"""Alternating optimisation of the hybrid beamformer.

Each outer iteration runs, in order: a few MM steps on the waveform ``T``
(each a convex QCQP), the analog update, the digital update, the WMMSE
receiver/weight refresh and a dual ascent step on the coupling
``T = F_A F_D``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import qcqp
from .beamformer_updates import (DpsRealization, EmptySubarray, coupling_cost, dps_realize,
                                 tilde_target, update_abf, update_dbf, update_receivers,
                                 update_weights)
from .metrics import (ARCHITECTURES, HybridBeamformer, MetricsReport, evaluate, fixed_mapping,
                      rate, rmi, sinr_all)
from .mm_engine import al_objective, assemble_quadratic, lift_xi, minorizer_gain, qos_quadratics
from .scenario import CommChannels, ScenarioConfig

__all__ = [
    "InfeasibleQoS",
    "SolverFailure",
    "SolverOptions",
    "SolverState",
    "TraceRow",
    "DesignResult",
    "qos_feasible_waveform",
    "initialize",
    "iterate",
    "solve",
    "CONVERGED",
    "MAX_ITERATIONS",
    "INFEASIBLE_QOS",
]

log = logging.getLogger(__name__)

CONVERGED = "Converged"
MAX_ITERATIONS = "MaxIterations"
INFEASIBLE_QOS = "InfeasibleQoS"


class InfeasibleQoS(RuntimeError):
    """The QoS thresholds exceed what the power budget supports on this channel."""


class SolverFailure(RuntimeError):
    """The waveform QCQP failed to converge twice in a row."""


@dataclass
class SolverOptions:
    rho: float = 10.0
    max_outer: int = 300
    obj_tol: float = 1e-4
    resid_tol: float = 1e-3
    stall_window: int = 3
    mm_steps: int = 5
    mm_tol: float = 1e-6
    qcqp_tol: float = 1e-8
    qcqp_max_iter: int = 100
    qos_tol: float = 1e-3
    repair_iterations: int = 5
    # extra rate (nats) demanded of T so the physical F_A F_D keeps its margin
    qos_guard: float = 5e-3
    # barrier weight for QCQP solves warm-started from the previous multipliers
    warm_mu: float = 1e-4
    # penalty growth when the coupling residual stops improving
    rho_growth: float = 1.5
    rho_patience: int = 20
    rho_max: float = 1e4


@dataclass
class SolverState:
    t_eff: np.ndarray
    lam: np.ndarray
    rho: float
    receivers: np.ndarray
    weights: np.ndarray
    bf: HybridBeamformer
    k: int = 0
    qcqp_multipliers: np.ndarray = field(default=None, repr=False)
    qcqp_failures: int = 0


@dataclass
class TraceRow:
    iteration: int
    al_objective: float
    al_before: float
    rmi: float
    min_rate_margin: float
    residual: float


@dataclass
class DesignResult:
    bf: HybridBeamformer
    dps: DpsRealization | None
    traces: list
    metrics: MetricsReport
    status: str
    t_eff: np.ndarray
    iterations: int

    def trace_array(self, name: str) -> np.ndarray:
        return np.array([getattr(row, name) for row in self.traces])


# -- initialisation -------------------------------------------------------

def qos_feasible_waveform(h: np.ndarray, cfg: ScenarioConfig, max_iter: int = 2000,
                          tol: float = 1e-12, margin: float = 0.0) -> np.ndarray:
    """Minimum-power digital precoder meeting every SINR target, scaled to ``P``.

    The rate targets are ``Gamma_u + margin`` nats.

    Uses the uplink-downlink duality fixed point for the virtual uplink
    powers, then solves the downlink power-allocation linear system.
    Raises :class:`InfeasibleQoS` when the minimum power exceeds the budget.
    """
    noise = np.asarray(cfg.comm_noise_vars)
    gamma = np.expm1(np.asarray(cfg.qos_thresholds) + margin)
    hn = h / np.sqrt(noise)
    n_t, n_u = h.shape
    q = np.zeros(n_u)
    for _ in range(max_iter):
        cov = np.eye(n_t) + (hn * q) @ hn.conj().T
        a = np.real(np.einsum("iu,iu->u", hn.conj(), np.linalg.solve(cov, hn)))
        q_new = gamma / ((1 + gamma) * a)
        if np.max(np.abs(q_new - q)) <= tol * max(1.0, np.max(q_new)):
            q = q_new
            break
        q = q_new
        if np.sum(q) > 1e6 * cfg.power_budget:
            raise InfeasibleQoS("SINR targets are not jointly achievable on this channel")
    cov = np.eye(n_t) + (hn * q) @ hn.conj().T
    v = np.linalg.solve(cov, hn)
    v /= np.linalg.norm(v, axis=0)
    gains = np.abs(hn.conj().T @ v) ** 2
    active = gamma > 0
    p = np.zeros(n_u)
    if np.any(active):
        idx = np.flatnonzero(active)
        sub = -gains[np.ix_(idx, idx)]
        sub[np.diag_indices(idx.size)] = gains[idx, idx] / gamma[idx]
        p[idx] = np.linalg.solve(sub, np.ones(idx.size))
    if np.any(p < 0) or p.sum() > cfg.power_budget:
        raise InfeasibleQoS(
            f"QoS needs {p.sum():.4g} W but the budget is {cfg.power_budget:.4g} W")
    if p.sum() == 0:
        # no user needs anything: send the matched-filter waveform
        t = h / np.linalg.norm(h)
    else:
        t = v * np.sqrt(p)
        # users with zero target still get a small share so T has full rank
        idle = ~active
        if np.any(idle):
            t[:, idle] = 1e-3 * v[:, idle]
    return t * np.sqrt(cfg.power_budget) / np.linalg.norm(t)


def _initial_analog(architecture, n_tx, n_rf, rng):
    phases = np.exp(2j * np.pi * rng.random((n_tx, n_rf)))
    if architecture == "FC":
        return phases
    if architecture.startswith("Fix"):
        mapping = fixed_mapping(n_tx, n_rf)
    else:
        mapping = np.arange(n_tx) % n_rf
    f_a = np.zeros((n_tx, n_rf), dtype=complex)
    f_a[np.arange(n_tx), mapping] = phases[np.arange(n_tx), mapping]
    return f_a


def initialize(cfg: ScenarioConfig, channels: CommChannels, architecture: str,
               rng=None, rho: float = 10.0, guard: float = 0.0) -> SolverState:
    if architecture not in ARCHITECTURES:
        raise ValueError(f"unknown architecture {architecture!r}")
    rng = np.random.default_rng(cfg.rng_seed if rng is None else rng)
    h = channels.h
    t0 = qos_feasible_waveform(h, cfg, margin=guard)
    f_a = _initial_analog(architecture, cfg.n_tx, cfg.n_rf, rng)
    f_d = update_dbf(f_a, t0)
    return SolverState(
        t_eff=t0, lam=np.zeros_like(t0), rho=float(rho),
        receivers=update_receivers(t0, h, cfg.comm_noise_vars),
        weights=update_weights(t0, h, cfg.comm_noise_vars),
        bf=HybridBeamformer(f_a, f_d, architecture))


# -- one outer iteration ----------------------------------------------------

def _waveform_step(state, cfg, h, opts):
    """MM inner loop on ``T``; returns the new waveform."""
    t = state.t_eff
    precoder = state.bf.precoder
    for _ in range(opts.mm_steps):
        gain = minorizer_gain(lift_xi(t, cfg))
        quad = assemble_quadratic(gain, cfg, state.rho, state.lam, precoder, t_k=t)
        problem = qcqp.QcqpProblem(quad, qos_quadratics(state.receivers, state.weights, h, cfg,
                                                            guard=opts.qos_guard),
                                   cfg.power_budget)
        try:
            sol = qcqp.solve(problem, tol=opts.qcqp_tol, max_iter=opts.qcqp_max_iter,
                             lam0=state.qcqp_multipliers,
                             mu0=1.0 if state.qcqp_multipliers is None else opts.warm_mu)
            state.qcqp_failures = 0
        except qcqp.QcqpMaxIterations as exc:
            state.qcqp_failures += 1
            if state.qcqp_failures >= 2:
                raise SolverFailure("waveform QCQP hit its iteration limit twice") from exc
            sol = exc.best
        state.qcqp_multipliers = sol.multipliers
        current = quad.value(t)
        new = quad.value(sol.t)
        if not new < current:
            break
        t = sol.t
        if current - new < opts.mm_tol:
            break
    return t


def _repair_empty(f_a, t_tilde, chains, architecture):
    """Hand each idle RF chain the antenna row that is worst fitted now."""
    f_a = f_a.copy()
    taken = set()
    for j in chains:
        # worst-fitted row among chains that keep at least one other antenna
        counts = np.count_nonzero(np.abs(f_a) > 0, axis=0)
        owner = np.argmax(np.abs(f_a) > 0, axis=1)
        candidates = [i for i in range(f_a.shape[0])
                      if i not in taken and counts[owner[i]] > 1]
        if not candidates:
            raise EmptySubarray([j])
        energy = np.linalg.norm(t_tilde[candidates], axis=1)
        i = candidates[int(np.argmax(energy))]
        f_a[i, :] = 0
        f_a[i, j] = 1.0
        taken.add(i)
    return f_a


def _analog_digital_step(state, t_tilde):
    arch = state.bf.architecture
    f_a = update_abf(arch, t_tilde, state.bf.f_d, state.bf.f_a)
    try:
        f_d = update_dbf(f_a, t_tilde)
    except EmptySubarray as exc:
        f_a = _repair_empty(f_a, t_tilde, exc.chains, arch)
        f_d = update_dbf(f_a, t_tilde)
    return f_a, f_d


def _rate_margin(precoder, h, cfg):
    return float(np.min(rate(sinr_all(h, precoder, cfg.comm_noise_vars))
                        - np.asarray(cfg.qos_thresholds)))


def iterate(state: SolverState, cfg: ScenarioConfig, channels: CommChannels,
            opts: SolverOptions | None = None) -> TraceRow:
    """Advance ``state`` by one outer iteration (in place) and return its trace row."""
    opts = opts or SolverOptions()
    h = channels.h
    al_before = al_objective(state.t_eff, cfg, state.rho, state.lam, state.bf.precoder)

    state.t_eff = _waveform_step(state, cfg, h, opts)
    t_tilde = tilde_target(state.t_eff, state.lam, state.rho)
    f_a, f_d = _analog_digital_step(state, t_tilde)
    # a coupling update that is not an improvement is discarded (repair can
    # only trigger for degenerate digital rows)
    if coupling_cost(t_tilde, f_a, f_d) <= coupling_cost(t_tilde, state.bf.f_a, state.bf.f_d) + 1e-12:
        state.bf = HybridBeamformer(f_a, f_d, state.bf.architecture)
    precoder = state.bf.precoder
    al_after = al_objective(state.t_eff, cfg, state.rho, state.lam, precoder)

    state.receivers = update_receivers(state.t_eff, h, cfg.comm_noise_vars)
    state.weights = update_weights(state.t_eff, h, cfg.comm_noise_vars)
    diff = state.t_eff - precoder
    state.lam = state.lam + state.rho * diff
    state.k += 1
    residual = np.linalg.norm(diff) / max(1.0, np.linalg.norm(state.t_eff))
    return TraceRow(iteration=state.k, al_objective=al_after, al_before=al_before,
                    rmi=rmi(state.t_eff, cfg),
                    min_rate_margin=_rate_margin(precoder, h, cfg),
                    residual=float(residual))


# -- full solve -------------------------------------------------------------

def _normalised(bf: HybridBeamformer, power: float) -> HybridBeamformer:
    norm2 = np.linalg.norm(bf.precoder) ** 2
    scale = min(1.0, np.sqrt(power / norm2)) if norm2 > 0 else 1.0
    return HybridBeamformer(bf.f_a.copy(), bf.f_d * scale, bf.architecture)


def _stalled(rows, window, tol):
    if len(rows) <= window:
        return False
    values = [r.al_objective for r in rows[-window - 1:]]
    return all(abs(b - a) <= tol * max(1.0, abs(b)) for a, b in zip(values, values[1:]))


def solve(cfg: ScenarioConfig, channels: CommChannels, architecture: str,
          opts: SolverOptions | None = None, rng=None, callback=None) -> DesignResult:
    """Design a hybrid beamformer for one channel draw.

    Parameters
    ----------
    cfg, channels : scenario and user channels
    architecture : one of ``ARCHITECTURES``
    opts : SolverOptions
    rng : seed or Generator for the random analog start (defaults to ``cfg.rng_seed``)
    callback : callable, optional
        Receives each :class:`TraceRow` as it is produced.

    Raises
    ------
    InfeasibleQoS
        No digital waveform meets the thresholds within the power budget.
    """
    opts = opts or SolverOptions()
    state = initialize(cfg, channels, architecture, rng=rng, rho=opts.rho,
                       guard=opts.qos_guard)
    rows = []

    def step():
        row = iterate(state, cfg, channels, opts)
        rows.append(row)
        if callback is not None:
            callback(row)
        return row

    converged = False
    best_resid, since_best = np.inf, 0
    while state.k < opts.max_outer:
        row = step()
        if row.residual <= opts.resid_tol and _stalled(rows, opts.stall_window, opts.obj_tol):
            converged = True
            break
        # the binary antenna mapping can make the iterates cycle at a fixed
        # penalty; a stuck residual is broken by raising rho
        if row.residual < 0.99 * best_resid:
            best_resid, since_best = row.residual, 0
        else:
            since_best += 1
        if since_best >= opts.rho_patience and state.rho < opts.rho_max:
            state.rho = min(state.rho * opts.rho_growth, opts.rho_max)
            best_resid, since_best = row.residual, 0
            log.debug("residual stalled at %.3g; rho raised to %.4g", row.residual, state.rho)

    bf = _normalised(state.bf, cfg.power_budget)
    margin = _rate_margin(bf.precoder, channels.h, cfg)
    if margin < -opts.qos_tol:
        log.info("QoS missed by %.3g on F_A F_D; tightening the coupling", -margin)
        for _ in range(opts.repair_iterations):
            state.rho *= 2
            step()
            bf = _normalised(state.bf, cfg.power_budget)
            margin = _rate_margin(bf.precoder, channels.h, cfg)
            if margin >= -opts.qos_tol:
                break
    status = CONVERGED if converged and margin >= -opts.qos_tol else MAX_ITERATIONS
    dps = dps_realize(bf.f_a) if architecture.endswith("DPS") else None
    return DesignResult(bf=bf, dps=dps, traces=rows, metrics=evaluate(bf, channels.h, cfg),
                        status=status, t_eff=state.t_eff, iterations=state.k)
