"""Separation and non-resonance predicates for labelled Maryland spectra.

Every check returns a plain dict entry with ``id``, ``holds``, a concrete
``witness`` and its ``margin`` (value minus threshold, negative on failure)
and the scanned range.  Failing entries can be reproduced from the witness
alone; see :func:`reevaluate`.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .exceptions import PoleOnGrid, SingularPhase
from .io import write_csv
from .lattice import linf_norm, torus_norm
from .spectrum import (EigenSystem, MarylandParams, diagonalize_and_relabel, potential,
                       spatial_box)


def melnikov_threshold(delta):
    return 2.0 * delta ** 0.125


def _labels_within(eigsys: EigenSystem, N):
    mask = np.abs(eigsys.sites).max(axis=1) <= N
    return np.flatnonzero(mask)


def _entry(pid, holds, witness, margin, scanned, **extra):
    out = {"id": pid, "holds": bool(holds), "witness": witness, "margin": float(margin),
           "range": scanned}
    out.update(extra)
    return out


def _site(eigsys, k):
    return [int(x) for x in eigsys.sites[k]]


def check_pair_separation(eigsys: EigenSystem, N, gamma=None, tau=None):
    """|mu_j - mu_j'| >= pi gamma / ((2d)^tau N^tau) over distinct |j|, |j'| <= N."""
    gamma = eigsys.params.gamma if gamma is None else gamma
    tau = eigsys.params.tau if tau is None else tau
    d = eigsys.d
    idx = _labels_within(eigsys, N)
    thr = math.pi * gamma / ((2 * d) ** tau * N ** tau)
    if len(idx) < 2:
        return _entry("2.3", True, None, math.inf, {"N": int(N)}, threshold=thr, min_gap=math.inf)
    mu = eigsys.mu[idx]
    order = np.argsort(mu, kind="stable")
    gaps = np.diff(mu[order])
    k = int(np.argmin(gaps))
    a, b = sorted((int(idx[order[k]]), int(idx[order[k + 1]])),
                  key=lambda s: tuple(eigsys.sites[s]))
    gap = float(gaps[k])
    return _entry("2.3", gap >= thr, {"j": _site(eigsys, a), "j_prime": _site(eigsys, b)},
                  gap - thr, {"N": int(N)}, threshold=thr, min_gap=gap)


def check_magnitude_bounds(eigsys: EigenSystem, N):
    """1 / (2 N^(d+2)) <= |mu_j| <= 2 N^(d+2) over |j| <= N."""
    d = eigsys.d
    idx = _labels_within(eigsys, N)
    lo_thr = 1.0 / (2.0 * N ** (d + 2))
    hi_thr = 2.0 * N ** (d + 2)
    mags = np.abs(eigsys.mu[idx])
    kmin = int(idx[np.argmin(mags)])
    kmax = int(idx[np.argmax(mags)])
    lo_margin = float(mags.min() - lo_thr)
    hi_margin = float(hi_thr - mags.max())
    worst = kmin if lo_margin <= hi_margin else kmax
    return _entry("2.4", lo_margin >= 0 and hi_margin >= 0,
                  {"j": _site(eigsys, worst)}, min(lo_margin, hi_margin), {"N": int(N)},
                  lower_holds=bool(lo_margin >= 0), upper_holds=bool(hi_margin >= 0),
                  min_abs=float(mags.min()), max_abs=float(mags.max()),
                  lower_threshold=lo_thr, upper_threshold=hi_thr,
                  min_site=_site(eigsys, kmin), max_site=_site(eigsys, kmax))


def _time_grid(b, R):
    return np.array(list(itertools.product(range(-R, R + 1), repeat=b)), dtype=np.int64)


def check_first_melnikov(eigsys: EigenSystem, omega0, R, delta, betas, sign=1, threshold=None):
    """min |sign * n.omega0 + mu_j| over (n, j) in [-R, R]^(b+d) off the exempt set.

    ``sign=+1`` excludes {(-e_k, beta_k)}; ``sign=-1`` excludes {(e_k, beta_k)}.
    """
    omega0 = np.atleast_1d(np.asarray(omega0, dtype=float))
    b = len(omega0)
    thr = melnikov_threshold(delta) if threshold is None else threshold
    ns = _time_grid(b, R)
    idx = _labels_within(eigsys, R)
    vals = np.abs(sign * (ns @ omega0)[:, None] + eigsys.mu[idx][None, :])
    exempt = np.zeros_like(vals, dtype=bool)
    for k, beta in enumerate(betas):
        n_ex = np.zeros(b, dtype=np.int64)
        n_ex[k] = -sign
        ni = np.flatnonzero(np.all(ns == n_ex, axis=1))
        ji = np.flatnonzero(np.all(eigsys.sites[idx] == np.asarray(beta), axis=1))
        if len(ni) and len(ji):
            exempt[ni[0], ji[0]] = True
    vals = np.where(exempt, np.inf, vals)
    a, c = np.unravel_index(int(np.argmin(vals)), vals.shape)
    vmin = float(vals[a, c])
    pid = "2.5" if sign > 0 else "2.6"
    return _entry(pid, vmin >= thr, {"n": [int(x) for x in ns[a]], "j": _site(eigsys, idx[c])},
                  vmin - thr, {"R": int(R)}, threshold=thr, minimum=vmin)


def check_second_melnikov(eigsys: EigenSystem, omega0, R, delta, betas, threshold=None):
    """min |n.omega0 + mu_j - mu_j'| over [-R, R]^(b+2d) off the exempt set.

    Indices with n = 0 and j = j' outside the exempt set evaluate to exactly
    zero; they are counted separately as ``trivial_degenerate`` and ``holds``
    is decided on the remaining indices.  ``holds_strict`` includes them.
    """
    omega0 = np.atleast_1d(np.asarray(omega0, dtype=float))
    b = len(omega0)
    thr = melnikov_threshold(delta) if threshold is None else threshold
    ns = _time_grid(b, R)
    idx = _labels_within(eigsys, R)
    mu = eigsys.mu[idx]
    sites = eigsys.sites[idx]
    vals = np.abs((ns @ omega0)[:, None, None] + mu[None, :, None] - mu[None, None, :])
    skip = np.zeros(vals.shape, dtype=bool)
    beta_pos = []
    for beta in betas:
        hit = np.flatnonzero(np.all(sites == np.asarray(beta), axis=1))
        beta_pos.append(int(hit[0]) if len(hit) else None)
    zero_n = np.flatnonzero(np.all(ns == 0, axis=1))[0]
    origin = np.flatnonzero(np.all(sites == 0, axis=1))
    if len(origin):
        skip[zero_n, origin[0], origin[0]] = True
    for k, k2 in itertools.product(range(b), repeat=2):
        if beta_pos[k] is None or beta_pos[k2] is None:
            continue
        n_ex = np.zeros(b, dtype=np.int64)
        n_ex[k] -= 1
        n_ex[k2] += 1
        ni = np.flatnonzero(np.all(ns == n_ex, axis=1))
        if len(ni):
            skip[ni[0], beta_pos[k], beta_pos[k2]] = True
    degenerate = np.zeros(vals.shape, dtype=bool)
    degenerate[zero_n, np.arange(len(idx)), np.arange(len(idx))] = True
    degenerate &= ~skip
    strict = np.where(skip, np.inf, vals)
    rest = np.where(skip | degenerate, np.inf, vals)
    a, c, e = np.unravel_index(int(np.argmin(rest)), rest.shape)
    vmin = float(rest[a, c, e])
    return _entry("2.7", vmin > thr,
                  {"n": [int(x) for x in ns[a]], "j": _site(eigsys, idx[c]),
                   "j_prime": _site(eigsys, idx[e])},
                  vmin - thr, {"R": int(R)}, threshold=thr, minimum=vmin,
                  trivial_degenerate=int(degenerate.sum()),
                  holds_strict=bool(strict.min() > thr))


def dyadic_ladder(lo, hi):
    if lo < 1 or hi < lo:
        raise ValueError("need 1 <= scale_floor <= N")
    out = []
    s = int(lo)
    while s < hi:
        out.append(s)
        s *= 2
    out.append(int(hi))
    return out


def check_omega_hypotheses(omega, eigsys: EigenSystem, N, scale_floor, K2):
    """Frequency Diophantine and weak second Melnikov conditions on a dyadic ladder.

    For every scale M in the ladder the threshold is exp(-M^(1/K2)); the
    Diophantine scan covers 0 < |n| <= 2M and the Melnikov scan covers
    |n| <= 2M, |j|, |j'| <= 3M (clipped to the labelled box) with
    (n, j - j') != 0.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    b = len(omega)
    levels = []
    for M in dyadic_ladder(scale_floor, N):
        thr = math.exp(-M ** (1.0 / K2))
        ns = _time_grid(b, 2 * M)
        nz = np.any(ns != 0, axis=1)
        dio = np.abs(ns[nz] @ omega)
        kd = int(np.argmin(dio))
        idx = _labels_within(eigsys, 3 * M)
        mu = eigsys.mu[idx]
        vals = np.abs((ns @ omega)[:, None, None] - mu[None, :, None] + mu[None, None, :])
        zero_n = np.flatnonzero(~nz)[0]
        vals[zero_n, np.arange(len(idx)), np.arange(len(idx))] = np.inf
        a, c, e = np.unravel_index(int(np.argmin(vals)), vals.shape)
        levels.append({
            "scale": int(M),
            "threshold": thr,
            "diophantine_min": float(dio[kd]),
            "diophantine_witness": [int(x) for x in ns[nz][kd]],
            "diophantine_holds": bool(dio[kd] >= thr),
            "melnikov_min": float(vals[a, c, e]),
            "melnikov_witness": {"n": [int(x) for x in ns[a]], "j": _site(eigsys, idx[c]),
                                 "j_prime": _site(eigsys, idx[e])},
            "melnikov_holds": bool(vals[a, c, e] >= thr),
            "clipped": bool(3 * M > eigsys.radius),
        })
    holds = all(l["diophantine_holds"] and l["melnikov_holds"] for l in levels)
    worst = min(levels, key=lambda l: min(l["diophantine_min"], l["melnikov_min"]) - l["threshold"])
    margin = min(worst["diophantine_min"], worst["melnikov_min"]) - worst["threshold"]
    return _entry("omega", holds, {"scale": worst["scale"]}, margin,
                  {"N": int(N), "scale_floor": int(scale_floor), "K2": float(K2)}, levels=levels)


def reevaluate(entry, eigsys: EigenSystem, omega0=None):
    """Recompute the quantity behind an entry's witness (minus its threshold)."""
    w = entry["witness"]
    pid = entry["id"]
    if pid == "2.3":
        return abs(eigsys.mu_at(w["j"]) - eigsys.mu_at(w["j_prime"])) - entry["threshold"]
    if pid == "2.4":
        m = abs(eigsys.mu_at(w["j"]))
        return min(m - entry["lower_threshold"], entry["upper_threshold"] - m)
    n = np.asarray(w["n"], dtype=float)
    nw = float(n @ np.atleast_1d(omega0))
    if pid == "2.5":
        return abs(nw + eigsys.mu_at(w["j"])) - entry["threshold"]
    if pid == "2.6":
        return abs(-nw + eigsys.mu_at(w["j"])) - entry["threshold"]
    if pid == "2.7":
        return abs(nw + eigsys.mu_at(w["j"]) - eigsys.mu_at(w["j_prime"])) - entry["threshold"]
    raise ValueError(f"no re-evaluation rule for {pid}")


def separation_report(eigsys: EigenSystem, betas, delta, N, R, R2=None):
    """All eigenvalue predicates for one labelled system, keyed by id."""
    omega0 = np.array([eigsys.mu_at(bk) for bk in betas])
    R2 = R if R2 is None else R2
    entries = [
        check_pair_separation(eigsys, N),
        check_magnitude_bounds(eigsys, N),
        check_first_melnikov(eigsys, omega0, R, delta, betas, sign=1),
        check_first_melnikov(eigsys, omega0, R, delta, betas, sign=-1),
        check_second_melnikov(eigsys, omega0, R2, delta, betas),
    ]
    return {e["id"]: e for e in entries}


# cot derivatives ---------------------------------------------------------------------

def tan_derivative_polys(s):
    """Coefficient arrays (low order first) of Poly_p, p = 1..s.

    d^p/dy^p tan y = sec^2 y * Poly_p(tan y), Poly_1 = 1 and
    Poly_{p+1}(t) = 2 t Poly_p(t) + (1 + t^2) Poly_p'(t).
    """
    P = np.polynomial.polynomial
    polys = [np.array([1.0])]
    for _ in range(1, s):
        c = polys[-1]
        nxt = P.polyadd(P.polymulx(2.0 * c), P.polymul([1.0, 0.0, 1.0], P.polyder(c)))
        polys.append(np.trim_zeros(np.asarray(nxt, dtype=float), "b"))
    return polys


def transversality_matrix(alpha, theta, sites):
    """W(p, q) = g^(p)(theta + 1/2 + j_q.alpha) with g(x) = tan(pi x), p = 1..s."""
    s = len(sites)
    shifts = np.asarray(sites, dtype=float).reshape(s, -1) @ np.atleast_1d(alpha)
    x = theta + 0.5 + shifts
    t = np.tan(np.pi * x)
    sec2 = 1.0 + t ** 2
    polys = tan_derivative_polys(s)
    W = np.empty((s, s))
    for p in range(1, s + 1):
        W[p - 1] = np.pi ** p * sec2 * np.polynomial.polynomial.polyval(t, polys[p - 1])
    return W


def vandermonde_det(alpha, theta, sites):
    """Closed form of det W: prod(pi^p p!) prod sec^2 prod_{p<q} (t_q - t_p)."""
    s = len(sites)
    shifts = np.asarray(sites, dtype=float).reshape(s, -1) @ np.atleast_1d(alpha)
    t = -potential(theta + shifts)  # tan(pi (x + 1/2)) = -cot(pi x)
    const = np.prod([np.pi ** p * math.factorial(p) for p in range(1, s + 1)])
    vdm = np.prod([t[q] - t[p] for p in range(s) for q in range(p + 1, s)]) if s > 1 else 1.0
    return float(const * np.prod(1.0 + t ** 2) * vdm)


def transversality_scan(alpha, theta_grid, k, sites, pole_tol=1e-6):
    """F(theta) = sum k_l cot(pi(theta + j_l.alpha)), its derivative stack and det W.

    Returns
    -------
    dict with ``min_abs_F``, ``min_max_derivative`` (min over the grid of
    max_p |D(p)|), ``det_direct`` / ``det_formula`` samples and their max
    relative disagreement.

    Raises
    ------
    PoleOnGrid
        When a grid point lies within ``pole_tol`` of a pole of a shifted cot.
    """
    k = np.asarray(k, dtype=float)
    s = len(sites)
    if not 2 <= s <= 6:
        raise ValueError("need 2 <= s <= 6 shifts")
    if len(k) != s:
        raise ValueError("one coefficient per shift")
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    shifts = np.asarray(sites, dtype=float).reshape(s, -1) @ alpha
    theta_grid = np.asarray(theta_grid, dtype=float)
    F = np.empty(len(theta_grid))
    dmax = np.empty(len(theta_grid))
    det_lu = np.empty(len(theta_grid))
    det_cf = np.empty(len(theta_grid))
    hadamard = np.empty(len(theta_grid))
    for i, th in enumerate(theta_grid):
        dist = torus_norm(th + shifts)
        if dist.min() < pole_tol:
            q = int(np.argmin(dist))
            raise PoleOnGrid(float(th), [int(x) for x in np.atleast_1d(sites[q])])
        F[i] = float(k @ potential(th + shifts))
        W = transversality_matrix(alpha, th, sites)
        D = -W @ k
        dmax[i] = np.abs(D).max()
        det_lu[i] = np.linalg.det(W)
        hadamard[i] = np.prod(np.linalg.norm(W, axis=1))
        det_cf[i] = vandermonde_det(alpha, th, sites)
    # LU determinants carry an absolute error of order s * eps * (Hadamard bound)
    floor = s * np.finfo(float).eps * hadamard
    scale = np.maximum(np.maximum(np.abs(det_cf), np.abs(det_lu)), floor)
    agree = np.abs(det_lu - det_cf) / scale
    return {
        "F": F,
        "min_abs_F": float(np.abs(F).min()),
        "max_derivative": dmax,
        "min_max_derivative": float(dmax.min()),
        "det_direct": det_lu,
        "det_formula": det_cf,
        "hadamard_bound": hadamard,
        "max_det_rel_disagreement": float(agree.max()),
    }


# theta Monte Carlo ---------------------------------------------------------------------

def theta_failure_fraction(params: MarylandParams, radius, betas, delta, N, R, n_samples, seed,
                           R2=None):
    """Fraction of uniformly sampled theta at which some eigenvalue predicate fails.

    A theta hitting the singularity guard counts as failed.
    """
    rng = np.random.default_rng(seed)
    thetas = rng.random(n_samples)
    box = spatial_box(params.d, radius)
    failed = 0
    for th in thetas:
        try:
            es = diagonalize_and_relabel(params.with_theta(th), box)
        except SingularPhase:
            failed += 1
            continue
        rep = separation_report(es, betas, delta, N, R, R2)
        failed += not all(e["holds"] for e in rep.values())
    return {"delta": float(delta), "epsilon": float(params.eps),
            "fraction_failed": failed / n_samples, "n_samples": int(n_samples), "seed": int(seed)}


def write_monte_carlo_csv(rows, path):
    cols = ["delta", "epsilon", "fraction_failed", "n_samples", "seed"]
    return write_csv(path, cols, [[r[c] for c in cols] for r in rows])
