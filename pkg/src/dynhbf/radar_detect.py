"""Monte Carlo target detection for a designed transmit beamformer.

A frame of ``L`` slots is received as ``Y = alpha_T A_T F S + sum_q alpha_q
A_q F S + N`` (``N_R x L``) and vectorised slot by slot, so that
``mu_x = vec(A_x F S) = (I_L kron A_x F) vec(S)``. The reflectivities are
constant over a frame. Given the transmitted symbols ``S`` the echo is
Gaussian, with clutter-plus-noise covariance
``R = sum_q s_q mu_q mu_q^H + s_r I``, and the target adds the rank-one
term ``s_T mu_T mu_T^H``. The detector is the matched filter
``|mu_T^H R^-1 y|^2``.

Dividing by ``m = mu_T^H R^-1 mu_T`` gives a statistic that is exactly
unit exponential under H0 and ``(1 + s_T m)`` times a unit exponential
under H1, whatever ``S`` is. Thresholds on the normalised statistic are
therefore constant false-alarm rate, and the ROC has the closed form
``p_d = E_S[p_fa ** (1 / (1 + s_T m))]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .metrics import HybridBeamformer
from .scenario import ScenarioConfig, radar_channels

__all__ = [
    "EchoFrame",
    "RocCurve",
    "simulate_echo",
    "detector_statistic",
    "normalized_statistic",
    "simulate_statistics",
    "roc_curve",
    "analytic_roc",
    "write_roc_csv",
    "DEFAULT_PFA_GRID",
]

H0, H1 = "H0", "H1"
CHUNK = 1000
DEFAULT_PFA_GRID = np.array([1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0])


@dataclass
class EchoFrame:
    y: np.ndarray
    hypothesis: str
    s: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        """The frame as an ``N_R x L`` array."""
        return self.y.reshape(-1, self.s.shape[1], order="F")


@dataclass
class RocCurve:
    p_fa: np.ndarray
    p_d: np.ndarray
    trials: int
    threshold_rule: str = "empirical H0 quantile of |mu^H R^-1 y|^2 / (mu^H R^-1 mu)"
    analytic: np.ndarray = field(default=None)

    @property
    def points(self) -> list:
        return list(zip(self.p_fa.tolist(), self.p_d.tolist()))

    def area(self) -> float:
        return float(np.trapezoid(self.p_d, self.p_fa))


def _precoder(bf) -> np.ndarray:
    return bf.precoder if isinstance(bf, HybridBeamformer) else np.asarray(bf)


def _cn(rng, shape, var=1.0):
    """Circular complex Gaussian samples with variance ``var``."""
    return np.sqrt(var / 2) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def _signatures(precoder, cfg, s):
    """Echo signatures for a batch of symbol blocks.

    ``s`` has shape ``(n, N_U, L)``; returns ``mu_t`` of shape ``(n, N_R L)``
    and ``mu_c`` of shape ``(n, N_R L, Q)``.
    """
    target, clutter = radar_channels(cfg)
    x = precoder @ s

    def flat(a):
        # vec of each (N_R, L) block, slot by slot
        return (a @ x).transpose(0, 2, 1).reshape(x.shape[0], -1)

    mu_t = flat(target.matrix)
    if clutter:
        mu_c = np.stack([flat(c.matrix) for c in clutter], axis=-1)
    else:
        mu_c = np.zeros(mu_t.shape + (0,), dtype=complex)
    return mu_t, mu_c


def _whiten(mu_c, clutter_vars, noise_var, v):
    """``R^-1 v`` for ``R = mu_c diag(vars) mu_c^H + noise_var I`` (Woodbury).

    Works on batches: ``mu_c`` is ``(n, d, Q)`` and ``v`` is ``(n, d)``.
    """
    clutter_vars = np.asarray(clutter_vars, dtype=float)
    # patches with zero reflectivity do not enter R
    live = clutter_vars > 0
    mu_c, clutter_vars = mu_c[..., live], clutter_vars[live]
    if mu_c.shape[-1] == 0:
        return v / noise_var
    ch = np.swapaxes(mu_c.conj(), -1, -2)
    small = ch @ mu_c + np.diag(noise_var / clutter_vars)
    coef = np.linalg.solve(small, (ch @ v[..., None]))[..., 0]
    return (v - np.einsum("ndq,nq->nd", mu_c, coef)) / noise_var


def simulate_echo(bf, cfg: ScenarioConfig, hypothesis: str = H1, rng=None) -> EchoFrame:
    """Draw one received frame under ``H0`` (clutter and noise) or ``H1``."""
    if hypothesis not in (H0, H1):
        raise ValueError("hypothesis must be 'H0' or 'H1'")
    rng = np.random.default_rng(rng)
    precoder = _precoder(bf)
    n_u = precoder.shape[1]
    s = _cn(rng, (1, n_u, cfg.n_slots))
    mu_t, mu_c = _signatures(precoder, cfg, s)
    y = _cn(rng, mu_t.shape, cfg.radar_noise_var)[0]
    alpha_c = _cn(rng, (mu_c.shape[-1],)) * np.sqrt(np.asarray(cfg.clutter_rcs_vars, dtype=float))
    y = y + mu_c[0] @ alpha_c
    if hypothesis == H1:
        y = y + _cn(rng, (), cfg.target_rcs_var) * mu_t[0]
    return EchoFrame(y=y, hypothesis=hypothesis, s=s[0])


def _frame_terms(s, bf, cfg):
    precoder = _precoder(bf)
    s = np.asarray(s)
    mu_t, mu_c = _signatures(precoder, cfg, s[None])
    return mu_t, mu_c


def detector_statistic(y, s, bf, cfg: ScenarioConfig) -> float:
    """Matched-filter statistic ``|mu_T^H R^-1 y|^2`` for known symbols ``s``."""
    mu_t, mu_c = _frame_terms(s, bf, cfg)
    w = _whiten(mu_c, cfg.clutter_rcs_vars, cfg.radar_noise_var, mu_t)[0]
    return float(np.abs(np.vdot(w, np.asarray(y))) ** 2)


def normalized_statistic(y, s, bf, cfg: ScenarioConfig) -> float:
    """``|mu_T^H R^-1 y|^2 / (mu_T^H R^-1 mu_T)``: unit exponential under H0."""
    mu_t, mu_c = _frame_terms(s, bf, cfg)
    w = _whiten(mu_c, cfg.clutter_rcs_vars, cfg.radar_noise_var, mu_t)[0]
    m = float(np.real(np.vdot(mu_t[0], w)))
    return float(np.abs(np.vdot(w, np.asarray(y))) ** 2) / m


def _batch(precoder, cfg, hypothesis, n, rng):
    """Normalised statistics and loadings ``m`` for ``n`` independent frames."""
    n_u = precoder.shape[1]
    s = _cn(rng, (n, n_u, cfg.n_slots))
    mu_t, mu_c = _signatures(precoder, cfg, s)
    q = mu_c.shape[-1]
    y = _cn(rng, mu_t.shape, cfg.radar_noise_var)
    if q:
        alpha_c = _cn(rng, (n, q)) * np.sqrt(np.asarray(cfg.clutter_rcs_vars, dtype=float))
        y = y + np.einsum("ndq,nq->nd", mu_c, alpha_c)
    if hypothesis == H1:
        y = y + _cn(rng, (n, 1), cfg.target_rcs_var) * mu_t
    w = _whiten(mu_c, cfg.clutter_rcs_vars, cfg.radar_noise_var, mu_t)
    m = np.real(np.sum(mu_t.conj() * w, axis=1))
    stat = np.abs(np.sum(w.conj() * y, axis=1)) ** 2 / m
    return stat, m


def simulate_statistics(bf, cfg: ScenarioConfig, hypothesis: str, trials: int, rng=None):
    """Normalised detector outputs for ``trials`` frames with fresh symbols.

    Trials are generated in fixed chunks, each from its own substream of
    ``rng``, so the sample does not depend on how the work is split.
    Returns ``(statistic, m)`` arrays.
    """
    rng = np.random.default_rng(rng)
    precoder = _precoder(bf)
    n_chunks = -(-trials // CHUNK)
    stats, loads = [], []
    for k, sub in enumerate(rng.spawn(n_chunks)):
        n = min(CHUNK, trials - k * CHUNK)
        st, m = _batch(precoder, cfg, hypothesis, n, sub)
        stats.append(st)
        loads.append(m)
    return np.concatenate(stats), np.concatenate(loads)


def analytic_roc(m_values, target_var: float, p_fa_grid) -> np.ndarray:
    """``mean_s p_fa ** (1 / (1 + s_T m_s))`` for the normalised detector."""
    p = np.asarray(p_fa_grid, dtype=float)[:, None]
    expo = 1.0 / (1.0 + target_var * np.asarray(m_values, dtype=float)[None, :])
    return np.mean(p ** expo, axis=1)


def roc_curve(bf, cfg: ScenarioConfig, trials: int = 10_000, p_fa_grid=None,
              rng=None) -> RocCurve:
    """Monte Carlo ROC with thresholds from the empirical H0 quantiles.

    Returns points on ``p_fa_grid`` plus the endpoints ``(0, 0)`` and
    ``(1, 1)``; the analytic curve is evaluated on the same points.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    grid = DEFAULT_PFA_GRID if p_fa_grid is None else np.asarray(p_fa_grid, dtype=float)
    if np.any((grid < 0) | (grid > 1)):
        raise ValueError("p_fa grid must lie in [0, 1]")
    rng = np.random.default_rng(rng)
    r0, r1 = rng.spawn(2)
    stat0, _ = simulate_statistics(bf, cfg, H0, trials, r0)
    stat1, m1 = simulate_statistics(bf, cfg, H1, trials, r1)
    p_fa = np.unique(np.concatenate([[0.0], grid, [1.0]]))
    inner = p_fa[(p_fa > 0) & (p_fa < 1)]
    thresholds = np.quantile(stat0, 1 - inner)
    p_d = np.concatenate([[0.0], np.mean(stat1[None, :] > thresholds[:, None], axis=1), [1.0]])
    # quantile thresholds already fall as p_fa grows; the running maximum only
    # guards against ties in the Monte Carlo sample
    p_d = np.maximum.accumulate(p_d)
    return RocCurve(p_fa=p_fa, p_d=p_d, trials=int(trials),
                    analytic=analytic_roc(m1, cfg.target_rcs_var, p_fa))


def write_roc_csv(path, curves: dict, seed, footer: str = "") -> None:
    """Write ``{architecture: RocCurve}`` as CSV (p_fa, p_d, trials, architecture, seed)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["p_fa", "p_d", "trials", "architecture", "seed"])
        for arch, curve in curves.items():
            for pf, pd in zip(curve.p_fa, curve.p_d):
                writer.writerow([repr(float(pf)), repr(float(pd)), curve.trials, arch, seed])
        if footer:
            fh.write(footer)
