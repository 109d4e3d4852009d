"""Finite-box Maryland operators, their eigensystems and spectral checks.

H(theta) = eps * Delta + cot(pi (theta + j.alpha)) on a Dirichlet box of
Z^d.  Eigenpairs are labelled by lattice site through their localization
centres; see :func:`diagonalize_and_relabel`.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import AsymmetricBox, SingularPhase
from .io import SCHEMA_VERSION
from .lattice import Region, l1_norm, linf_norm, torus_norm
from .matching import relabel



@dataclass(frozen=True)
class MarylandParams:
    """Model parameters of the linear Maryland operator."""

    eps: float
    alpha: tuple
    theta: float
    gamma: float = 0.2
    tau: float = 2.0
    singularity_tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in np.atleast_1d(self.alpha)))
        if self.eps < 0:
            raise ValueError("eps must be >= 0")
        if self.gamma <= 0:
            raise ValueError("gamma must be > 0")
        if self.tau <= self.d:
            raise ValueError("tau must exceed d")
        if not 0.0 <= self.theta < 1.0:
            raise ValueError("theta must lie in [0, 1)")
        if self.singularity_tol <= 0:
            raise ValueError("singularity_tol must be > 0")

    @property
    def d(self) -> int:
        return len(self.alpha)

    def with_theta(self, theta) -> "MarylandParams":
        return replace(self, theta=float(theta) % 1.0)

    def to_dict(self):
        out = asdict(self)
        out["alpha"] = list(self.alpha)
        out["d"] = self.d
        return out


def potential(phase):
    """cot(pi * phase), evaluated as cos/sin."""
    x = np.pi * np.asarray(phase, dtype=float)
    return np.cos(x) / np.sin(x)


def spatial_box(d, radius, center=None) -> Region:
    return Region.box(center if center is not None else (0,) * d, radius)


def phases(params: MarylandParams, sites) -> np.ndarray:
    """theta + j.alpha reduced to [-1/2, 1/2), correctly rounded.

    The floats theta and alpha_i are dyadic rationals, so the phase is
    formed and reduced mod 1 in exact integer arithmetic before a single
    rounding.  Near a pole cot amplifies a phase error by about pi V^2, and
    exact reduction keeps reflected sites exact negatives of each other.
    """
    ratios = [float(params.theta).as_integer_ratio()] + [float(a).as_integer_ratio() for a in params.alpha]
    den = max(q for _, q in ratios)
    nums = [p * (den // q) for p, q in ratios]
    out = np.empty(len(sites))
    for k, j in enumerate(np.asarray(sites, dtype=np.int64).reshape(len(sites), -1)):
        r = (nums[0] + sum(int(ji) * a for ji, a in zip(j, nums[1:]))) % den
        out[k] = (r - den if 2 * r >= den else r) / den
    return out


def build_hamiltonian(params: MarylandParams, box: Region) -> np.ndarray:
    """Dense Dirichlet restriction of H(theta) to ``box``.

    Raises
    ------
    SingularPhase
        If some site's phase is within ``singularity_tol`` of an integer.
    """
    sites = box.points()
    ph = phases(params, sites)
    dist = torus_norm(ph)
    bad = np.flatnonzero(dist < params.singularity_tol)
    if len(bad):
        k = bad[np.argmin(dist[bad])]
        raise SingularPhase(sites[k], float(dist[k]))
    H = np.diag(potential(ph))
    if params.eps != 0.0 and len(sites) > 1:
        hop = np.abs(sites[:, None, :] - sites[None, :, :]).sum(axis=2) == 1
        H[hop] = params.eps
    return H


def localization_centers(vectors, sites) -> np.ndarray:
    """Index of the localization centre of each column of ``vectors``.

    Ties in |phi| are broken by the smaller l-infinity norm of the site,
    then lexicographically.
    """
    mag = np.abs(vectors)
    peak = mag.max(axis=0)
    out = np.empty(vectors.shape[1], dtype=np.int64)
    norms = np.abs(sites).max(axis=1)
    for k in range(vectors.shape[1]):
        cand = np.flatnonzero(mag[:, k] >= peak[k] * (1 - 1e-12))
        if len(cand) == 1:
            out[k] = cand[0]
        else:
            out[k] = min(cand, key=lambda s: (norms[s], tuple(sites[s])))
    return out


@dataclass
class EigenSystem:
    """Relabelled eigenpairs of a finite Maryland box.

    ``phi[:, k]`` is the eigenvector labelled by ``sites[k]``, expressed in
    the site basis (rows ordered like ``sites``), so ``phi`` is orthogonal.
    """

    params: MarylandParams
    radius: int
    center: tuple
    sites: np.ndarray
    mu: np.ndarray
    phi: np.ndarray
    centers: np.ndarray
    method: str
    max_residual: float
    boundary_margin: int = 4
    site_index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.site_index = {tuple(int(x) for x in s): k for k, s in enumerate(self.sites)}

    @property
    def d(self) -> int:
        return self.sites.shape[1]

    @property
    def size(self) -> int:
        return len(self.sites)

    def index(self, site) -> int:
        return self.site_index[tuple(int(x) for x in np.atleast_1d(site))]

    def mu_at(self, site) -> float:
        return float(self.mu[self.index(site)])

    @property
    def peak(self) -> np.ndarray:
        """|phi_j(j)| for each label j."""
        return np.abs(self.phi[np.arange(self.size), np.arange(self.size)])

    def distance_to_boundary(self) -> np.ndarray:
        rel = np.abs(self.sites - np.asarray(self.center)).max(axis=1)
        return self.radius - rel

    def interior_mask(self, margin=None) -> np.ndarray:
        margin = self.boundary_margin if margin is None else margin
        return self.distance_to_boundary() >= margin

    def hamiltonian(self) -> np.ndarray:
        return build_hamiltonian(self.params, spatial_box(self.d, self.radius, self.center))

    def gram_defect(self) -> float:
        return float(np.abs(self.phi.T @ self.phi - np.eye(self.size)).max())

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "eigensystem",
            "params": self.params.to_dict(),
            "radius": int(self.radius),
            "center": list(self.center),
            "sites": self.sites.ravel().tolist(),
            "eigenvalues": self.mu.tolist(),
            "vectors": self.phi.ravel(order="F").tolist(),
            "matching": {
                "method": self.method,
                "centers": self.centers.tolist(),
                "peak": self.peak.tolist(),
                "max_residual": self.max_residual,
            },
        }

    @classmethod
    def from_dict(cls, doc):
        p = dict(doc["params"])
        p.pop("d", None)
        params = MarylandParams(**p)
        d = params.d
        sites = np.asarray(doc["sites"], dtype=np.int64).reshape(-1, d)
        S = len(sites)
        return cls(
            params=params,
            radius=int(doc["radius"]),
            center=tuple(doc["center"]),
            sites=sites,
            mu=np.asarray(doc["eigenvalues"], dtype=float),
            phi=np.asarray(doc["vectors"], dtype=float).reshape(S, S, order="F"),
            centers=np.asarray(doc["matching"]["centers"], dtype=np.int64),
            method=doc["matching"]["method"],
            max_residual=float(doc["matching"]["max_residual"]),
        )


def diagonalize_and_relabel(params: MarylandParams, box: Region, match_radius=2,
                            boundary_margin=4) -> EigenSystem:
    """Full eigensolve of the box operator with site relabelling."""
    H = build_hamiltonian(params, box)
    sites = box.points()
    evals, evecs = np.linalg.eigh(H)
    centers = localization_centers(evecs, sites)
    assign, method = relabel(sites, evecs, centers, radius=match_radius)
    phi = evecs[:, assign]
    mu = evals[assign]
    diag = phi[np.arange(len(sites)), np.arange(len(sites))]
    phi = phi * np.where(diag < 0, -1.0, 1.0)
    res = np.linalg.norm(H @ phi - phi * mu, axis=0) / (1 + np.abs(mu))
    return EigenSystem(
        params=params,
        radius=box.size,
        center=box.center,
        sites=sites,
        mu=mu,
        phi=phi,
        centers=centers[assign],
        method=method,
        max_residual=float(res.max()) if len(res) else 0.0,
        boundary_margin=boundary_margin,
    )


class MarylandDiagonalizer(TransformerMixin, BaseEstimator):
    """Diagonalize a Maryland box and map site fields to eigen-coefficients.

    ``fit`` builds the relabelled eigensystem; ``transform`` takes fields
    sampled on the box sites, shape (n_samples, n_sites), to coefficients
    on the labelled eigenbasis.
    """

    def __init__(self, eps=0.05, alpha=((math.sqrt(5) - 1) / 2,), theta=0.3, radius=10,
                 gamma=0.2, tau=2.0, singularity_tol=1e-6, match_radius=2, boundary_margin=4):
        self.eps = eps
        self.alpha = alpha
        self.theta = theta
        self.radius = radius
        self.gamma = gamma
        self.tau = tau
        self.singularity_tol = singularity_tol
        self.match_radius = match_radius
        self.boundary_margin = boundary_margin

    def fit(self, X=None, y=None):
        self.params_ = MarylandParams(self.eps, self.alpha, self.theta, self.gamma, self.tau,
                                      self.singularity_tol)
        box = spatial_box(self.params_.d, self.radius)
        self.eigensystem_ = diagonalize_and_relabel(self.params_, box, self.match_radius,
                                                    self.boundary_margin)
        self.sites_ = self.eigensystem_.sites
        self.eigenvalues_ = self.eigensystem_.mu
        self.components_ = self.eigensystem_.phi.T
        self.n_features_in_ = len(self.sites_)
        return self

    def transform(self, X):
        check_is_fitted(self, "eigensystem_")
        X = check_array(X, dtype=(np.float64, np.complex128))
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} site values, got {X.shape[1]}")
        return X @ self.components_.T

    def inverse_transform(self, C):
        check_is_fitted(self, "eigensystem_")
        C = check_array(C, dtype=(np.float64, np.complex128))
        return C @ self.components_


def diophantine_check(alpha, gamma, tau, j_max):
    """Scan ||j.alpha||_T >= gamma / |j|_1^tau over 0 < |j|_1 <= j_max."""
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
    d = len(alpha)
    if j_max < 1:
        raise ValueError("j_max must be >= 1")
    worst = None
    for j in itertools.product(range(-j_max, j_max + 1), repeat=d):
        n1 = l1_norm(j)
        if n1 == 0 or n1 > j_max:
            continue
        # canonical representative of +-j
        if tuple(-x for x in j) < j:
            continue
        margin = torus_norm(np.dot(j, alpha)) * n1 ** tau - gamma
        if worst is None or margin < worst[1]:
            worst = (j, margin)
    return {
        "holds": bool(worst[1] >= 0),
        "witness": list(worst[0]),
        "margin": float(worst[1]),
        "j_max": int(j_max),
        "gamma": float(gamma),
        "tau": float(tau),
    }


def eigenvalue_profile(params: MarylandParams, radius, theta_grid, match_radius=2):
    """E(theta) := mu_0(theta) on the symmetric box of the given radius.

    E decreases on (0, 1) like cot; the Lipschitz bound is reported as the
    largest secant slope, which should be <= -pi.
    """
    theta_grid = np.asarray(theta_grid, dtype=float)
    box = spatial_box(params.d, radius)
    E = np.empty(len(theta_grid))
    for i, th in enumerate(theta_grid):
        es = diagonalize_and_relabel(params.with_theta(th), box, match_radius)
        E[i] = es.mu_at((0,) * params.d)
    V = potential(theta_grid)
    order = np.argsort(theta_grid)
    slopes = np.diff(E[order]) / np.diff(theta_grid[order])
    return {
        "theta": theta_grid,
        "E": E,
        "V": V,
        "max_deviation": float(np.abs(E - V).max()),
        "bound": 2 * params.d * params.eps,
        "max_secant_slope": float(slopes.max()) if len(slopes) else float("nan"),
        "monotone": bool(np.all(slopes < 0)),
    }


def pole_free_grid(n, params: MarylandParams, radius, margin=1e-4):
    """``n`` evenly spaced thetas in (0, 1) nudged away from every pole of the box."""
    box = spatial_box(params.d, radius)
    shifts = box.points() @ np.asarray(params.alpha)
    grid = (np.arange(n) + 0.5) / n
    for i, th in enumerate(grid):
        for _ in range(100):
            if torus_norm(th + shifts).min() >= margin:
                break
            th += margin
        grid[i] = th % 1.0
    return grid


def _spectral_distance(a, b):
    a = np.sort(a)
    b = np.sort(b)
    hd = max(np.abs(a[:, None] - b[None, :]).min(axis=1).max(),
             np.abs(b[:, None] - a[None, :]).min(axis=1).max())
    return float(max(hd, np.abs(a - b).max()))


def check_symmetry(params: MarylandParams, box: Region):
    """Distance between spec H(1 - theta) and -spec H(theta) on a symmetric box.

    The pair is formed from its member in [1/2, 1), where 1 - theta is exact
    in floating point; for theta < 1/2 the float 1 - theta is rounded and
    would perturb near-pole eigenvalues by about pi V^2 * 1e-16.
    """
    if box.kind != "box" or any(c != 0 for c in box.center):
        raise AsymmetricBox("box must be a cube centred at the origin")
    base = params if params.theta >= 0.5 else params.with_theta(1.0 - params.theta)
    H1 = build_hamiltonian(base, box)
    H2 = build_hamiltonian(base.with_theta(1.0 - base.theta), box)
    defect = _spectral_distance(np.linalg.eigvalsh(H2), -np.linalg.eigvalsh(H1))
    return {"max_spectral_defect": defect, "theta": params.theta, "radius": box.size}


def check_translation_covariance(params: MarylandParams, radius, shift):
    """spec H_{Q_L(m)}(theta) against spec H_{Q_L(0)}(theta + m.alpha)."""
    shift = tuple(int(s) for s in np.atleast_1d(shift))
    a = np.linalg.eigvalsh(build_hamiltonian(params, spatial_box(params.d, radius, shift)))
    moved = params.with_theta(params.theta + float(np.dot(shift, params.alpha)))
    b = np.linalg.eigvalsh(build_hamiltonian(moved, spatial_box(params.d, radius)))
    return float(np.abs(np.sort(a) - np.sort(b)).max())


@dataclass
class RellichTrace:
    theta: np.ndarray
    levels: list  # dicts: n, radius, E, sup_change, disk_radius, non_unique, max_secant_slope
    non_unique: list


def rellich_iterate(params: MarylandParams, theta_grid, schedule, disk_factor=10.0):
    """Track E_n(theta) through the blocks B_0 = {0}, B_n = Q_{l_n} (n >= 1).

    E_n(theta) is the eigenvalue of H_{B_n}(theta) nearest E_{n-1}(theta).
    A sample is flagged non-unique when a second eigenvalue sits in the disk
    of radius ``disk_factor * (previous defect + 1e-12)``; the defect before
    level 1 is taken to be eps.
    """
    schedule = [int(s) for s in schedule]
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be strictly increasing")
    theta = np.asarray(theta_grid, dtype=float)
    prev = potential(theta)
    order = np.argsort(theta)
    levels = [{"n": 0, "radius": 0, "E": prev, "sup_change": 0.0, "disk_radius": None,
               "max_secant_slope": float((np.diff(prev[order]) / np.diff(theta[order])).max())}]
    flags = []
    defect = params.eps
    for n, l in enumerate(schedule[1:], start=1):
        box = spatial_box(params.d, l)
        disk = disk_factor * (defect + 1e-12)
        E = np.empty_like(prev)
        for i, th in enumerate(theta):
            ev = np.linalg.eigvalsh(build_hamiltonian(params.with_theta(th), box))
            dist = np.abs(ev - prev[i])
            k = int(np.argmin(dist))
            E[i] = ev[k]
            if np.count_nonzero(dist <= disk) > 1:
                flags.append({"theta": float(th), "n": n})
        defect = float(np.abs(E - prev).max())
        slopes = np.diff(E[order]) / np.diff(theta[order])
        levels.append({"n": n, "radius": l, "E": E, "sup_change": defect, "disk_radius": disk,
                       "max_secant_slope": float(slopes.max())})
        prev = E
    return RellichTrace(theta=theta, levels=levels, non_unique=flags)


def center_equidistribution(eigsys: EigenSystem, window, core_radius=None):
    """Count localization centres in the windows (k, k + L]^d tiling a core box."""
    d = eigsys.d
    core = eigsys.radius - eigsys.boundary_margin if core_radius is None else core_radius
    starts = np.arange(-core - 1, core - window + 1, window)
    centre_sites = eigsys.sites[eigsys.centers]
    counts = {}
    for k in itertools.product(starts, repeat=d):
        k = np.asarray(k)
        inside = np.all((centre_sites > k) & (centre_sites <= k + window), axis=1)
        counts[tuple(int(x) for x in k)] = int(inside.sum())
    vals = np.array(list(counts.values()), dtype=float) / window ** d
    return {
        "counts": counts,
        "min_ratio": float(vals.min()),
        "max_ratio": float(vals.max()),
        "window": int(window),
    }


def decay_slope(eigsys: EigenSystem, label, floor=1e-12):
    """Least-squares slope of log|phi_j(x)| against |x - j|_1."""
    k = eigsys.index(label)
    v = np.abs(eigsys.phi[:, k])
    dist = np.abs(eigsys.sites - eigsys.sites[k]).sum(axis=1)
    keep = v > floor
    if np.unique(dist[keep]).size < 2:
        return float("nan")
    return float(np.polyfit(dist[keep], np.log(v[keep]), 1)[0])


def poisson_defect(eigsys: EigenSystem, label, inner):
    """Check the Poisson formula on the annulus Q_inner(j) minus {j}.

    phi(x) = eps * sum G_L(x, w) phi(w') over w in the inner boundary of L,
    w' its outer neighbour, with L the annulus.  Returns the max defect and
    the condition number of (H_L - mu).
    """
    k = eigsys.index(label)
    j = eigsys.sites[k]
    mu = eigsys.mu[k]
    sites = eigsys.sites
    rel = np.abs(sites - j).max(axis=1)
    in_L = (rel <= inner) & (rel > 0)
    H = eigsys.hamiltonian()
    idx = np.flatnonzero(in_L)
    A = H[np.ix_(idx, idx)] - mu * np.eye(len(idx))
    G = np.linalg.inv(A)
    phi = eigsys.phi[:, k]
    hop = np.abs(sites[:, None, :] - sites[None, :, :]).sum(axis=2) == 1
    coupling = hop[np.ix_(idx, np.flatnonzero(~in_L))]
    outside = phi[~in_L]
    pred = eigsys.params.eps * G @ (coupling @ outside)
    return float(np.abs(pred - phi[idx]).max()), float(np.linalg.cond(A))
