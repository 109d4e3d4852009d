"""Green's function probes for restrictions of T(sigma) = D(sigma) + delta W_u.

Distances between modes are |n - n'|_1 + |j - j'|_1; the sign sector does
not enter.  Box containment and covering distances use the l-infinity
metric.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.stats import beta as beta_dist

from .exceptions import CoverageGap, HypothesisViolated, SingularRestriction
from .io import SCHEMA_VERSION
from .lattice import ModeList, Region, elementary_region_family
from .nonlinear import Coeffs, diagonal_part, weight_operator
from .spectrum import EigenSystem



def norm_threshold(N):
    return math.exp(N ** 0.9)


def mode_distances(coords_a, coords_b=None):
    coords_b = coords_a if coords_b is None else coords_b
    return np.abs(coords_a[:, None, :] - coords_b[None, :, :]).sum(axis=2)


def two_sector_coords(modes: ModeList):
    """Lattice coordinates (n, j) of every row of a two-sector operator."""
    return np.tile(modes.points, (len(modes.signs), 1))


def invert(T):
    try:
        G = sla.inv(T, check_finite=False)
    except (sla.LinAlgError, ValueError) as exc:
        raise SingularRestriction(str(exc)) from None
    if not np.all(np.isfinite(G)):
        raise SingularRestriction("inverse has non-finite entries")
    return G


def green_norm_and_decay(T, coords, N=None, min_bins=8):
    """Norm of the inverse and its off-diagonal profile.

    Returns ``inv_norm`` (largest singular value of T^-1), ``profile``
    (distance -> max |G| at that distance) and a log-linear decay ``rate``
    fitted over distances >= sqrt(N).  With fewer than ``min_bins``
    distinct distances the rate is reported as ``"insufficient-range"``.
    """
    G = invert(T)
    inv_norm = float(np.linalg.norm(G, 2))
    dist = mode_distances(np.asarray(coords))
    dmax = int(dist.max()) if dist.size else 0
    profile = np.zeros(dmax + 1)
    np.maximum.at(profile, dist.ravel(), np.abs(G).ravel())
    start = math.sqrt(N) if N is not None else 1.0
    ds = np.arange(dmax + 1)
    use = (ds >= start) & (profile > 0)
    if use.sum() >= min_bins:
        rate = float(-np.polyfit(ds[use], np.log(profile[use]), 1)[0])
    else:
        rate = "insufficient-range"
    return {"inv_norm": inv_norm, "profile": profile, "rate": rate, "G": G}


def _batched_inverse(T):
    """Inverses of a stack of matrices; singular members come back as inf."""
    try:
        return np.linalg.inv(T)
    except np.linalg.LinAlgError:
        out = np.empty_like(T)
        for k in range(len(T)):
            try:
                out[k] = np.linalg.inv(T[k])
            except np.linalg.LinAlgError:
                out[k] = np.inf
        return out


def ldt_predicates(G, coords, N, c_tilde):
    """(norm holds, decay holds, worst decay ratio) for a restricted inverse."""
    norm_ok = np.linalg.norm(G, 2) <= norm_threshold(N)
    dist = mode_distances(np.asarray(coords))
    far = dist >= math.sqrt(N)
    if not far.any():
        return bool(norm_ok), True, 0.0
    ratio = float((np.abs(G[far]) * np.exp(c_tilde * dist[far])).max())
    return bool(norm_ok), bool(ratio <= 1.0), ratio


# probe ---------------------------------------------------------------------------------

@dataclass
class LdtProbeReport:
    scale: int
    region: dict
    n_sigma: int
    seed: int
    sigma_interval: tuple
    c_tilde: float
    fraction_norm_failed: float
    fraction_decay_failed: float
    fraction_failed: float
    confidence_95: tuple
    norm_threshold: float
    measure_bound: float
    n_regions: int
    n_components: int
    exact_evaluations: int
    fitted_rates: list = field(default_factory=list)
    insufficient_range: int = 0
    witnesses: list = field(default_factory=list)

    def to_dict(self):
        out = asdict(self)
        out["schema_version"] = SCHEMA_VERSION
        out["kind"] = "ldt_probe"
        out["sigma_interval"] = list(self.sigma_interval)
        out["confidence_95"] = list(self.confidence_95)
        return out


def clopper_pearson(k, n, level=0.95):
    a = 1 - level
    lo = 0.0 if k == 0 else float(beta_dist.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta_dist.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def stratified_sigmas(n, interval, seed):
    lo, hi = interval
    rng = np.random.default_rng(seed)
    return lo + (np.arange(n) + rng.random(n)) * (hi - lo) / n


def probe_regions(N, b, d, eigsys: EigenSystem, j0_list=None):
    """Elementary regions Lambda_N(j0) as masks over the union block, deduplicated.

    The union block is [-N, N]^b x (labelled sites); regions are clipped to
    it because no eigenpairs exist outside the box.
    """
    tpts = Region.box((0,) * b, N).points()
    sites = eigsys.sites
    pts = np.concatenate([np.repeat(tpts, len(sites), axis=0), np.tile(sites, (len(tpts), 1))], axis=1)
    if j0_list is None:
        j0_list = list(itertools.product(range(-2 * N, 2 * N + 1), repeat=d))
    seen = {}
    for shape in elementary_region_family(N, b + d):
        for j0 in j0_list:
            reg = shape.translate((0,) * b + tuple(j0))
            mask = reg.contains(pts)
            if mask.any():
                seen.setdefault(mask.tobytes(), mask)
    return ModeList(pts, b), list(seen.values())


def _components(E_off, masks, K):
    """Connected components of the coupling graph inside every region, deduplicated."""
    comps = {}
    nz = E_off != 0
    for mask in masks:
        idx = np.flatnonzero(np.concatenate([mask, mask]))
        sub = csr_matrix(nz[np.ix_(idx, idx)])
        ncomp, lab = connected_components(sub, directed=False)
        for c in range(ncomp):
            members = idx[lab == c]
            comps.setdefault(members.tobytes(), members)
    return list(comps.values())


def ldt_probe(u: Coeffs, eigsys: EigenSystem, omega, delta, p, N, n_sigma, seed,
              sigma_interval=(-1.0, 1.0), c_tilde=1.0, j0_list=None, drop_tol=1e-14,
              max_witnesses=50, min_bins=8):
    """Fraction of sampled sigma for which some Lambda_N(j0) violates an LDT predicate.

    Each restriction is block diagonal over the connected components of its
    coupling graph (after dropping entries below ``drop_tol`` times the
    largest coupling), so a region is good iff all of its components are.
    A component is first screened by a Neumann certificate with
    m = min |diagonal|:

    * norm: ||G|| <= 1 / (m - ||E||_2),
    * decay: |G(a, b)| e^{c~ d(a, b)} <= (q / (1 - q)) / m for a != b,
      with q = max row sum of |E| e^{c~ d} divided by m.

    Components failing the certificate are inverted exactly, except for
    purely diagonal ones where the certificate is already sharp.  Decay
    rates are fitted for witness components only.
    """
    b = u.b
    d = eigsys.d
    union, masks = probe_regions(N, b, d, eigsys, j0_list)
    K = len(union.points)
    coords = two_sector_coords(union)
    base = diagonal_part(union, eigsys, omega, 0.0).astype(complex)
    sgn = np.repeat(np.array(union.signs, dtype=float), K)
    if delta != 0:
        E = delta * weight_operator(u, eigsys, p, union)
        scale = np.abs(E).max()
        E[np.abs(E) <= drop_tol * scale] = 0.0
    else:
        E = np.zeros((2 * K, 2 * K), dtype=complex)
    base = base + np.diag(E)
    E_off = E - np.diag(np.diag(E))
    comps = _components(E_off, masks, K)
    thr = norm_threshold(N)
    root = math.sqrt(N)

    sizes = np.array([len(c) for c in comps])
    width = sizes.max()
    pad = np.zeros((len(comps), width), dtype=np.int64)
    valid = np.zeros((len(comps), width), dtype=bool)
    e2 = np.zeros(len(comps))
    etil = np.zeros(len(comps))
    needs_decay = np.zeros(len(comps), dtype=bool)
    weights = []
    for i, c in enumerate(comps):
        pad[i, : len(c)] = c
        valid[i, : len(c)] = True
        sub = E_off[np.ix_(c, c)]
        dist = mode_distances(coords[c])
        far = dist >= root
        needs_decay[i] = bool(far.any())
        weights.append(np.where(far, np.exp(c_tilde * dist), 0.0))
        if np.any(sub):
            e2[i] = np.linalg.norm(sub, 2)
            etil[i] = (np.abs(sub) * np.exp(c_tilde * dist)).sum(axis=1).max()
    diagonal = (e2 == 0) & (etil == 0)
    # non-diagonal components grouped by size for batched exact inversion
    groups = {}
    for i in np.flatnonzero(~diagonal):
        groups.setdefault(int(sizes[i]), []).append(i)
    batches = {}
    for size, ids in groups.items():
        ids = np.asarray(ids)
        idx = np.stack([comps[i] for i in ids])
        blocks = E[idx[:, :, None], idx[:, None, :]]
        wts = np.stack([weights[i] for i in ids])
        batches[size] = (ids, idx, blocks, wts)
    slot = np.full(len(comps), -1)
    for size, (ids, *_rest) in batches.items():
        slot[ids] = np.arange(len(ids))

    sigmas = stratified_sigmas(n_sigma, sigma_interval, seed)
    norm_fail = decay_fail = any_fail = 0
    exact = 0
    rates, insufficient = [], 0
    witnesses = []
    diag_rows = np.arange(width)
    for s in sigmas:
        diag = base + s * sgn
        mags = np.where(valid, np.abs(diag)[pad], np.inf)
        m = mags.min(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ok_norm = (m > e2) & (1.0 / (m - e2) <= thr)
            q = etil / m
            ok_decay = ~needs_decay | ((q < 1) & ((q / (1 - q)) / m <= 1.0))
        failing = ~(ok_norm & ok_decay)
        n_ok = np.ones(len(comps), dtype=bool)
        d_ok = np.ones(len(comps), dtype=bool)
        ratio = np.zeros(len(comps))
        # the certificate is exact for a diagonal block
        n_ok[failing & diagonal] = False
        for size, (ids, idx, blocks, wts) in batches.items():
            sel = np.flatnonzero(failing[ids])
            if not len(sel):
                continue
            exact += len(sel)
            T = blocks[sel].copy()
            T[:, diag_rows[:size], diag_rows[:size]] = diag[idx[sel]]
            G = _batched_inverse(T)
            ok = np.all(np.isfinite(G), axis=(1, 2))
            norms = np.full(len(sel), np.inf)
            rat = np.full(len(sel), np.inf)
            if ok.any():
                Gabs = np.abs(G[ok])
                upper = np.sqrt(Gabs.sum(axis=1).max(axis=1) * Gabs.sum(axis=2).max(axis=1))
                lower = Gabs.max(axis=(1, 2))
                est = np.where(upper <= thr, upper, lower)
                unsure = (upper > thr) & (lower <= thr)
                if unsure.any():
                    est[unsure] = np.linalg.norm(G[ok][unsure], 2, axis=(1, 2))
                norms[ok] = est
                rat[ok] = (Gabs * wts[sel][ok]).max(axis=(1, 2))
            n_ok[ids[sel]] = norms <= thr
            d_ok[ids[sel]] = rat <= 1.0
            ratio[ids[sel]] = rat
        bad = np.flatnonzero(~(n_ok & d_ok))
        for i in bad[: max(0, max_witnesses - len(witnesses))]:
            c = comps[i]
            if not diagonal[i] and math.isfinite(ratio[i]):
                T = E[np.ix_(c, c)].copy()
                T[np.diag_indices_from(T)] = diag[c]
                rate = green_norm_and_decay(T, coords[c], N, min_bins)["rate"]
                if isinstance(rate, str):
                    insufficient += 1
                else:
                    rates.append(rate)
            witnesses.append({"sigma": float(s), "norm_ok": bool(n_ok[i]), "decay_ok": bool(d_ok[i]),
                              "decay_ratio": float(ratio[i]), "component_size": int(len(c)),
                              "min_diagonal": float(m[i])})
        bad_norm = not n_ok.all()
        bad_decay = not d_ok.all()
        norm_fail += bad_norm
        decay_fail += bad_decay
        any_fail += bad_norm or bad_decay
    return LdtProbeReport(
        scale=int(N),
        region={"time_radius": int(N), "site_box_radius": int(eigsys.radius),
                "j0_range": 2 * int(N), "shapes": len(elementary_region_family(N, b + d))},
        n_sigma=int(n_sigma),
        seed=int(seed),
        sigma_interval=tuple(float(x) for x in sigma_interval),
        c_tilde=float(c_tilde),
        fraction_norm_failed=norm_fail / n_sigma,
        fraction_decay_failed=decay_fail / n_sigma,
        fraction_failed=any_fail / n_sigma,
        confidence_95=clopper_pearson(any_fail, n_sigma),
        norm_threshold=thr,
        measure_bound=math.exp(-N ** (1 / 30)),
        n_regions=len(masks),
        n_components=len(comps),
        exact_evaluations=exact,
        fitted_rates=[float(r) for r in rates],
        insufficient_range=insufficient,
        witnesses=witnesses,
    )


def compare_scales(small: LdtProbeReport, large: LdtProbeReport):
    """Failure fraction non-increasing in N within the two 95% binomial intervals."""
    return {
        "scales": [small.scale, large.scale],
        "fractions": [small.fraction_failed, large.fraction_failed],
        "non_increasing": bool(large.confidence_95[0] <= small.confidence_95[1]),
        "strictly_non_increasing": bool(large.fraction_failed <= small.fraction_failed),
    }


# Neumann perturbation ------------------------------------------------------------------

def neumann_verify(A, B, coords, eps1, eps2, c, C):
    """Check the hypotheses and conclusions of the Neumann perturbation bound.

    Hypotheses: |B(m, m')| <= eps2 (|m - m'| + 1)^C e^{-c|m - m'|},
    |A^-1(m, m')| <= e^{-c|m - m'|} / eps1, ||A^-1|| <= 1 / eps1 and
    4 |S|^2 (diam S + 1)^C eps2 / eps1 <= 1/2, where |S| counts distinct
    lattice points.  Conclusions: ||(A + B)^-1|| <= 2 / eps1 and
    |(A + B)^-1 - A^-1| <= e^{-c|m - m'|} / eps1 entrywise.

    Raises
    ------
    HypothesisViolated
        Listing every failed premise; conclusions are not evaluated.
    """
    coords = np.asarray(coords)
    dist = mode_distances(coords)
    Ainv = invert(A)
    n_points = len({tuple(x) for x in coords})
    diam = int(dist.max()) if dist.size else 0
    failed = []
    if np.any(np.abs(B) > eps2 * (dist + 1.0) ** C * np.exp(-c * dist)):
        failed.append("B-decay")
    if np.any(np.abs(Ainv) > np.exp(-c * dist) / eps1):
        failed.append("A-inverse-decay")
    if np.linalg.norm(Ainv, 2) > 1.0 / eps1:
        failed.append("A-inverse-norm")
    smallness = 4.0 * n_points ** 2 * (diam + 1.0) ** C * eps2 / eps1
    if smallness > 0.5:
        failed.append("smallness")
    if failed:
        raise HypothesisViolated(failed)
    G = invert(A + B)
    slack = 1 + 1e-12
    norm = float(np.linalg.norm(G, 2))
    diff_ratio = float((np.abs(G - Ainv) * eps1 * np.exp(c * dist)).max())
    return {"norm": norm, "norm_bound": 2.0 / eps1, "norm_holds": bool(norm <= slack * 2.0 / eps1),
            "entry_ratio": diff_ratio, "entry_holds": bool(diff_ratio <= slack),
            "smallness": smallness, "points": n_points, "diameter": diam}


# good / bad boxes ----------------------------------------------------------------------

def _point_index(points):
    return {tuple(int(x) for x in q): i for i, q in enumerate(points)}


def classify_boxes(T, modes: ModeList, N0, decay_rate, norm_bound=None, zeta=3 / 8, xi=1 / 4,
                   big_N=None):
    """Good/bad labels for every size-N0 box translate inside the region.

    A box is good when its restricted inverse has norm <= ``norm_bound``
    (default e^{N0^0.9}) and |G| <= e^{-decay_rate d} at distances
    >= sqrt(N0).  A maximal pairwise-disjoint family of bad boxes is packed
    greedily in lexicographic order of centres.
    """
    norm_bound = norm_threshold(N0) if norm_bound is None else norm_bound
    pts = modes.points
    lookup = _point_index(pts)
    K = len(pts)
    D = pts.shape[1]
    offsets = Region.box((0,) * D, N0).points()
    labels = {}
    for center in pts:
        members = [lookup.get(tuple(int(x) for x in center + o)) for o in offsets]
        if any(m is None for m in members):
            continue
        rows = np.concatenate([np.asarray(members), np.asarray(members) + K])
        sub = T[np.ix_(rows, rows)]
        try:
            G = invert(sub)
        except SingularRestriction:
            labels[tuple(int(x) for x in center)] = "bad"
            continue
        cc = np.tile(pts[members], (2, 1))
        dist = mode_distances(cc)
        far = dist >= math.sqrt(N0)
        good = np.linalg.norm(G, 2) <= norm_bound and \
            (not far.any() or np.all(np.abs(G[far]) <= np.exp(-decay_rate * dist[far])))
        labels[tuple(int(x) for x in center)] = "good" if good else "bad"
    bad = sorted(c for c, v in labels.items() if v == "bad")
    family = []
    for c in bad:
        if all(max(abs(a - b) for a, b in zip(c, f)) > 2 * N0 for f in family):
            family.append(c)
    big_N = big_N if big_N is not None else int(np.abs(pts).max())
    limit = big_N ** zeta / big_N ** xi if big_N > 0 else 0.0
    return {"labels": labels, "n_good": len(labels) - len(bad), "n_bad": len(bad),
            "disjoint_bad": len(family), "disjoint_family": family,
            "sublinear_limit": limit, "sublinear_holds": bool(len(family) <= limit)}


# resolvent identity --------------------------------------------------------------------

def resolvent_reconstruct_check(T, modes: ModeList, cover, M, c2=1.0):
    """Verify G_L = G_W 1_W - G_W T_{W, L\\W} G_L row by row over a cover.

    Parameters
    ----------
    T : (2K, 2K) array on the two-sector modes of ``modes``.
    cover : list of Region
        Candidate sub-boxes W.  Only boxes lying inside the region and good
        at scale M (norm <= e^{M^0.9}, |G| <= e^{-c2 d} for d >= sqrt(M))
        are admissible.  Every point n needs an admissible W containing it
        with dist_inf(n, L \\ W) >= M / 2.
    M : int
        Box scale, also M_1 in the norm bound 4 (2 M_1 + 1)^D e^{M_1^0.9}.
    c2 : float
        Decay rate of the good-box test.

    Raises
    ------
    CoverageGap
        For the first point lacking an admissible W.
    """
    pts = modes.points
    K = len(pts)
    D = pts.shape[1]
    G_L = invert(T)
    admissible = []
    n_good = 0
    for w in cover:
        mw = w.contains(pts)
        if int(mw.sum()) != len(w.points()):
            continue
        rows = np.flatnonzero(np.concatenate([mw, mw]))
        try:
            G_W = invert(T[np.ix_(rows, rows)])
        except SingularRestriction:
            continue
        n_ok, d_ok, _ = ldt_predicates(G_W, np.tile(pts[mw], (2, 1)), M, c2)
        if n_ok and d_ok:
            n_good += 1
            admissible.append((mw, rows, G_W))
    defect = 0.0
    used = set()
    for a, point in enumerate(pts):
        choice = None
        for wi, (mw, _, _) in enumerate(admissible):
            if not mw[a]:
                continue
            rest = pts[~mw]
            dist = np.abs(rest - point).max(axis=1).min() if len(rest) else np.inf
            if dist >= M / 2:
                choice = wi
                break
        if choice is None:
            raise CoverageGap(tuple(int(x) for x in point))
        used.add(choice)
        mw, w_rows, G_W = admissible[choice]
        o_rows = np.flatnonzero(~np.concatenate([mw, mw]))
        for sector in range(2):
            row = a + sector * K
            loc = int(np.searchsorted(w_rows, row))
            recon = np.zeros(2 * K, dtype=complex)
            recon[w_rows] = G_W[loc]
            if len(o_rows):
                recon -= G_W[loc] @ T[np.ix_(w_rows, o_rows)] @ G_L[o_rows]
            defect = max(defect, float(np.abs(recon - G_L[row]).max()))
    norm = float(np.linalg.norm(G_L, 2))
    bound = 4.0 * (2 * M + 1) ** D * math.exp(M ** 0.9)
    return {"defect": defect, "norm": norm, "bound": bound, "bound_holds": bool(norm <= bound),
            "cover_size": len(cover), "cover_good": n_good, "cover_used": len(used)}
