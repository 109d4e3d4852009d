"""Multiscale Newton iteration for the P-equation with Q-equation frequency updates."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import DidNotConverge, IllConditioned, NoProgress
from .io import SCHEMA_VERSION, write_csv
from .lattice import ModeList, Region
from .nonlinear import (Coeffs, ResonantSet, linearized_operator, nonlinear_term, residual)
from .spectrum import EigenSystem

log = logging.getLogger(__name__)



@dataclass
class NewtonState:
    r: int
    u: Coeffs
    omega: np.ndarray
    residual_norm: float
    last_correction_norm: float = 0.0
    scale: int = 0
    history: list = field(default_factory=list)


def q_update(u: Coeffs, eigsys: EigenSystem, delta, p, resonant: ResonantSet):
    """omega_k = mu_{beta_k} + delta W_u(-e_k, beta_k) / a_k (real part).

    Returns the frequency vector and the largest discarded imaginary part.
    """
    omega = np.empty(resonant.b)
    if delta == 0:
        for k, _, beta, _ in resonant.anchor_modes():
            omega[k] = eigsys.mu_at(beta)
        return omega, 0.0
    W = nonlinear_term(u, eigsys, p)
    imag = 0.0
    for k, n, beta, a in resonant.anchor_modes():
        w = W.get(n, eigsys.index(beta))
        omega[k] = eigsys.mu_at(beta) + delta * w.real / a
        imag = max(imag, abs(delta * w.imag / a))
    return omega, imag


def block_modes(b, time_radius, eigsys: EigenSystem, site_radius, resonant: ResonantSet):
    """Two-sector modes of [-T, T]^b x {|j| <= site_radius} with S removed."""
    pts = Region.box((0,) * b, time_radius).points()
    sites = eigsys.sites[np.abs(eigsys.sites).max(axis=1) <= site_radius]
    grid = np.concatenate([np.repeat(pts, len(sites), axis=0), np.tile(sites, (len(pts), 1))], axis=1)
    full = ModeList(grid, b)
    keep = [i for i, m in enumerate(full) if (m.sign, m.n, m.j) not in resonant.excluded()]
    return full, np.asarray(keep, dtype=np.int64)


def _condition(T, lu_piv):
    lu, piv = lu_piv
    anorm = np.abs(T).sum(axis=0).max()
    gecon = sla.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    return np.inf if rcond == 0 else 1.0 / rcond


def newton_step(state: NewtonState, eigsys: EigenSystem, delta, p, resonant: ResonantSet, M=3,
                max_time_radius=4, cond_max=1e12, progress_factor=1.0):
    """One correction on the block of scale N = M^(r+1).

    The block is [-min(N, max_time_radius), ...]^b in time times the sites
    with |j| <= N.  The correction solves the restricted linear system by
    LU with one pass of iterative refinement; u is updated through the
    sector-symmetrized correction and the anchors are re-imposed.
    """
    N = M ** (state.r + 1)
    Tr = min(N, max_time_radius)
    u = state.u.resized(max(state.u.radius, Tr))
    modes, keep = block_modes(u.b, Tr, eigsys, N, resonant)
    F = residual(u, eigsys, state.omega, delta, p, resonant)
    jidx = np.array([eigsys.index(j) for j in modes.j], dtype=np.int64)
    pos = modes.n + F.plus.radius
    tpos = tuple(pos[:, a] for a in range(u.b))
    rhs = -np.concatenate([F.plus.values[tpos + (jidx,)], F.minus.values[tpos + (jidx,)]])[keep]
    if delta == 0 or not np.any(rhs):
        corr = np.zeros(len(keep), dtype=complex)
        cond = 1.0
    else:
        T = linearized_operator(u, eigsys, state.omega, 0.0, modes, p, delta)[np.ix_(keep, keep)]
        lu_piv = sla.lu_factor(T, check_finite=False)
        cond = _condition(T, lu_piv)
        if cond > cond_max:
            raise IllConditioned(cond)
        corr = sla.lu_solve(lu_piv, rhs, check_finite=False)
        corr += sla.lu_solve(lu_piv, rhs - T @ corr, check_finite=False)
    full = np.zeros(len(modes), dtype=complex)
    full[keep] = corr
    K = len(modes.points)
    du = np.zeros_like(u.values)
    dv = np.zeros_like(u.values)
    upos = tuple((modes.n + u.radius)[:, a] for a in range(u.b))
    du[upos + (jidx,)] = full[:K]
    dv[upos + (jidx,)] = full[K:]
    flip = tuple(slice(None, None, -1) for _ in range(u.b))
    new = u.copy()
    new.values = u.values + 0.5 * (du + np.conj(dv[flip]))
    resonant.impose(new, eigsys)
    after = residual(new, eigsys, state.omega, delta, p, resonant)
    if after.norm > progress_factor * F.norm and F.norm > 1e-13:
        raise NoProgress(F.norm, after.norm)
    hist = list(state.history)
    hist.append({"r": state.r + 1, "scale": N, "time_radius": Tr, "unknowns": int(len(keep)),
                 "cond": float(cond), "correction": float(np.linalg.norm(corr)),
                 "residual_fixed_omega": after.norm})
    return NewtonState(state.r + 1, new, state.omega.copy(), after.norm,
                       float(np.linalg.norm(corr)), N, hist)


@dataclass
class SolutionReport:
    u: Coeffs
    omega: np.ndarray
    omega0: np.ndarray
    history: list
    converged: bool
    iterations: int
    checks: dict
    decay: dict = field(default_factory=dict)
    time_residual: float = float("nan")
    config: dict = field(default_factory=dict)

    def amplitudes(self, eigsys: EigenSystem, floor=0.0):
        """(n, j, re, im) for every stored amplitude with |u| > floor."""
        out = []
        modes = self.u.time_modes()
        vals = self.u.flat()
        for a, k in zip(*np.nonzero(np.abs(vals) > floor)):
            z = vals[a, k]
            out.append([[int(x) for x in modes[a]], [int(x) for x in eigsys.sites[k]],
                        float(z.real), float(z.imag)])
        return out

    def to_dict(self, eigsys: EigenSystem):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "solution",
            "converged": self.converged,
            "iterations": self.iterations,
            "omega": self.omega.tolist(),
            "omega0": self.omega0.tolist(),
            "time_radius": self.u.radius,
            "amplitudes": self.amplitudes(eigsys),
            "history": self.history,
            "checks": self.checks,
            "decay": {k: v for k, v in self.decay.items() if k != "weighted_sums"},
            "time_residual": self.time_residual,
            "config": self.config,
        }

    def write_decay_csv(self, eigsys: EigenSystem, path):
        modes = self.u.time_modes()
        vals = self.u.flat()
        dist = np.abs(modes).sum(axis=1)[:, None] + np.abs(eigsys.sites).sum(axis=1)[None, :]
        nz = np.abs(vals) > 0
        rows = sorted(zip(dist[nz].tolist(), np.log(np.abs(vals[nz])).tolist()))
        return write_csv(path, ["distance", "log_abs_u"], rows)


def cwb_solve(eigsys: EigenSystem, resonant: ResonantSet, delta, p=1, M=3, tol=1e-10, max_r=8,
              max_time_radius=4, cond_max=1e12, progress_factor=1.0):
    """Alternate Newton corrections and Q-equation updates until the residual is below tol.

    Raises
    ------
    DidNotConverge
        With the full history when ``max_r`` steps do not reach ``tol``.
    """
    u = resonant.initial(eigsys)
    omega0 = np.array([eigsys.mu_at(bk) for bk in resonant.betas])
    if delta == 0:
        res = residual(u, eigsys, omega0, delta, p, resonant)
        return SolutionReport(u, omega0, omega0.copy(), [{"r": 0, "residual": res.norm}], True, 0,
                              {"anchors": True, "block_growth": True, "monotone": True})
    omega, _ = q_update(u, eigsys, delta, p, resonant)
    res = residual(u, eigsys, omega, delta, p, resonant)
    state = NewtonState(0, u, omega, res.norm)
    history = [{"r": 0, "scale": 1, "residual": res.norm, "omega": omega.tolist()}]
    while state.residual_norm > tol and state.r < max_r:
        state = newton_step(state, eigsys, delta, p, resonant, M, max_time_radius, cond_max,
                            progress_factor)
        omega, imag = q_update(state.u, eigsys, delta, p, resonant)
        block = (min(state.scale, max_time_radius), state.scale)
        res = residual(state.u, eigsys, omega, delta, p, resonant, block=block)
        step = state.history[-1]
        step.update({"residual": res.norm, "in_block": res.in_block, "tail": res.tail,
                     "omega": omega.tolist(), "omega_imag_dropped": imag})
        history.append(step)
        log.info("r=%d N=%d residual=%.3e", state.r, state.scale, res.norm)
        state = NewtonState(state.r, state.u, omega, res.norm, state.last_correction_norm,
                            state.scale, state.history)
    anchors_ok = all(state.u.get(n, eigsys.index(beta)) == a
                     for _, n, beta, a in resonant.anchor_modes())
    res_hist = [h["residual"] for h in history]
    checks = {
        "anchors": bool(anchors_ok),
        "block_growth": all(h["scale"] == M ** h["r"] for h in history[1:]),
        "monotone": bool(all(b < a for a, b in zip(res_hist, res_hist[1:]))),
    }
    converged = state.residual_norm <= tol
    report = SolutionReport(state.u, state.omega, omega0, history, converged, state.r, checks)
    if not converged:
        raise DidNotConverge(f"residual {state.residual_norm:.3e} > tol {tol:.1e} after "
                             f"{state.r} steps", history)
    return report


def quadratic_rate(residuals, floor=1e-14):
    """Slope of log r_{k+1} against log r_k over consecutive pairs above ``floor``."""
    r = np.asarray(residuals, dtype=float)
    pairs = [(a, b) for a, b in zip(r, r[1:]) if a > floor and b > floor]
    if not pairs:
        return float("nan")
    x = np.log([a for a, _ in pairs])
    y = np.log([b for _, b in pairs])
    if len(pairs) == 1:
        return float(y[0] / x[0])
    return float(np.polyfit(x, y, 1)[0])


def decay_fit(u: Coeffs, eigsys: EigenSystem, resonant: ResonantSet, eps, delta, n_grid=100,
              rel_floor=1e-13):
    """Largest rho with sum_{off S0} |u(n, j)| e^{rho(|n|+|j|)} <= sqrt(eps + delta).

    The rho grid spans [0, |log(eps + delta)|].  The slope is a least-squares
    fit of log|u| against |n|_1 + |j|_1 over off-anchor entries above
    ``rel_floor`` times the largest of them.
    """
    modes = u.time_modes()
    vals = np.abs(u.flat())
    dist = (np.abs(modes).sum(axis=1)[:, None] + np.abs(eigsys.sites).sum(axis=1)[None, :])
    off = np.ones(vals.shape, dtype=bool)
    for _, n, beta, _ in resonant.anchor_modes():
        a = int(np.flatnonzero(np.all(modes == np.asarray(n), axis=1))[0])
        off[a, eigsys.index(beta)] = False
    target = np.sqrt(eps + delta)
    grid = np.linspace(0.0, abs(np.log(eps + delta)), n_grid)
    sums = np.array([(vals[off] * np.exp(rho * dist[off])).sum() for rho in grid])
    ok = np.flatnonzero(sums <= target)
    rho_star = float(grid[ok].max()) if len(ok) else float("nan")
    v = vals[off]
    keep = v > rel_floor * v.max() if v.size and v.max() > 0 else np.zeros(v.shape, dtype=bool)
    if np.unique(dist[off][keep]).size >= 2:
        slope = float(np.polyfit(dist[off][keep], np.log(v[keep]), 1)[0])
    else:
        slope = float("nan")
    return {"rho_star": rho_star, "threshold": float(target), "rho_grid_max": float(grid[-1]),
            "sum_at_rho_star": float(sums[ok].max()) if len(ok) else float("nan"),
            "slope": slope, "weighted_sums": sums}


def evaluate_time_domain(u: Coeffs, omega, eigsys: EigenSystem, t):
    """u(t, x) = sum u(n, j) e^{i n.omega t} phi_j(x); shape (len(t), sites)."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    phase = np.exp(1j * np.outer(t, u.time_modes() @ np.atleast_1d(omega)))
    return phase @ (u.flat() @ eigsys.phi.T)


def time_residual(u: Coeffs, omega, eigsys: EigenSystem, delta, p, t):
    """max |i du/dt - H u - delta |u|^{2p} u| over the sample times and box sites."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nw = u.time_modes() @ np.atleast_1d(omega)
    spatial = u.flat() @ eigsys.phi.T
    phase = np.exp(1j * np.outer(t, nw))
    field_ = phase @ spatial
    dt = phase @ (1j * nw[:, None] * spatial)
    H = eigsys.hamiltonian()
    r = 1j * dt - field_ @ H.T - delta * np.abs(field_) ** (2 * p) * field_
    return float(np.abs(r).max())


class CWBSolver(BaseEstimator):
    """Estimator wrapper around :func:`cwb_solve`.

    ``fit`` takes an :class:`EigenSystem` (or a fitted
    :class:`~maryland_nls.spectrum.MarylandDiagonalizer`); ``predict``
    evaluates the time-domain field on the box sites.
    """

    def __init__(self, betas=((0,),), amplitudes=(1.3,), delta=1e-3, p=1, M=3, tol=1e-10, max_r=8,
                 max_time_radius=4, cond_max=1e12):
        self.betas = betas
        self.amplitudes = amplitudes
        self.delta = delta
        self.p = p
        self.M = M
        self.tol = tol
        self.max_r = max_r
        self.max_time_radius = max_time_radius
        self.cond_max = cond_max

    def fit(self, X, y=None):
        eigsys = getattr(X, "eigensystem_", X)
        if not isinstance(eigsys, EigenSystem):
            raise TypeError("fit expects an EigenSystem or a fitted MarylandDiagonalizer")
        if self.delta < 0 or self.p < 1 or self.M < 2:
            raise ValueError("need delta >= 0, p >= 1 and M >= 2")
        self.resonant_ = ResonantSet(self.betas, self.amplitudes)
        report = cwb_solve(eigsys, self.resonant_, self.delta, self.p, self.M, self.tol,
                           self.max_r, self.max_time_radius, self.cond_max)
        self.eigensystem_ = eigsys
        self.report_ = report
        self.coef_ = report.u
        self.omega_ = report.omega
        self.history_ = report.history
        self.n_iter_ = report.iterations
        return self

    def predict(self, t):
        check_is_fitted(self, "coef_")
        return evaluate_time_domain(self.coef_, self.omega_, self.eigensystem_, t)

    def score(self, t, y=None):
        """Negative max time-domain residual at the sample times."""
        check_is_fitted(self, "coef_")
        return -time_residual(self.coef_, self.omega_, self.eigensystem_, self.delta, self.p, t)
