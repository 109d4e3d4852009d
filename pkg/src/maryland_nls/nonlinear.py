"""Lattice form of the nonlinearity |u|^{2p} u in the Maryland eigenbasis.

Amplitudes u(n, j) live on a time box [-R, R]^b times the labelled sites of
an :class:`EigenSystem`.  The conjugate sector v(n, j) = conj(u(-n, j)) is
never stored.

W_u is evaluated pseudo-spectrally: U(tau, x) = sum u(n, j) e^{i n.tau}
phi_j(x) is sampled on a time grid fine enough that U^{p+1} V^p has no
aliasing, multiplied pointwise and projected back.  This is the same
(2p+1)-fold convolution with overlap weights, computed in O(P^b S^2).
"""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import BlockTooSmall, MarylandError
from .lattice import ModeList
from .spectrum import EigenSystem


@dataclass
class Coeffs:
    """Amplitudes on [-R, R]^b x (labelled sites); ``values`` has shape (2R+1,)*b + (S,)."""

    b: int
    radius: int
    values: np.ndarray
    tail_norm: float = 0.0

    @classmethod
    def zeros(cls, b, radius, n_sites):
        return cls(b, int(radius), np.zeros((2 * radius + 1,) * b + (n_sites,), dtype=complex))

    @property
    def n_sites(self) -> int:
        return self.values.shape[-1]

    def copy(self) -> "Coeffs":
        return Coeffs(self.b, self.radius, self.values.copy(), self.tail_norm)

    def _pos(self, n):
        n = tuple(int(x) + self.radius for x in np.atleast_1d(n))
        if len(n) != self.b or min(n) < 0 or max(n) > 2 * self.radius:
            raise IndexError(f"time index {n} outside radius {self.radius}")
        return n

    def get(self, n, k) -> complex:
        """Amplitude at time mode ``n`` and site index ``k``; zero outside the block."""
        try:
            return complex(self.values[self._pos(n) + (k,)])
        except IndexError:
            return 0.0j

    def set(self, n, k, value):
        self.values[self._pos(n) + (k,)] = value

    def conj_sector(self) -> np.ndarray:
        """v(n, j) = conj(u(-n, j)) on the same block."""
        flip = tuple(slice(None, None, -1) for _ in range(self.b))
        return np.conj(self.values[flip])

    def resized(self, radius) -> "Coeffs":
        """Zero-pad or truncate to a new time radius; truncated mass goes to ``tail_norm``."""
        out = Coeffs.zeros(self.b, radius, self.n_sites)
        m = min(radius, self.radius)
        src = tuple(slice(self.radius - m, self.radius + m + 1) for _ in range(self.b))
        dst = tuple(slice(radius - m, radius + m + 1) for _ in range(self.b))
        out.values[dst] = self.values[src]
        lost = np.linalg.norm(self.values) ** 2 - np.linalg.norm(self.values[src]) ** 2
        out.tail_norm = float(np.sqrt(max(lost, 0.0) + self.tail_norm ** 2))
        return out

    def time_modes(self) -> np.ndarray:
        r = range(-self.radius, self.radius + 1)
        return np.array(list(itertools.product(r, repeat=self.b)), dtype=np.int64).reshape(-1, self.b)

    def flat(self) -> np.ndarray:
        """Values as (number of time modes, S), rows in lexicographic time order."""
        return self.values.reshape(-1, self.n_sites)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass
class ResonantSet:
    """Anchored modes u(-e_k, beta_k) = a_k, k = 1..b."""

    betas: tuple
    amplitudes: tuple
    window: Optional[tuple] = (1.0, 2.0)

    def __post_init__(self):
        self.betas = tuple(tuple(int(x) for x in np.atleast_1d(bk)) for bk in self.betas)
        amps = []
        for a in self.amplitudes:
            if isinstance(a, complex) or np.iscomplexobj(a):
                if np.imag(a) != 0:
                    raise ValueError("anchor amplitudes must be real")
                a = np.real(a)
            amps.append(float(a))
        self.amplitudes = tuple(amps)
        if len(self.betas) != len(self.amplitudes) or not self.betas:
            raise ValueError("need one amplitude per anchor site")
        if len(set(self.betas)) != len(self.betas):
            raise ValueError("anchor sites must be pairwise distinct")
        if any(a == 0 for a in self.amplitudes):
            raise ValueError("anchor amplitudes must be nonzero")
        if self.window is not None:
            lo, hi = self.window
            if any(not lo <= a <= hi for a in self.amplitudes):
                raise ValueError(f"anchor amplitudes must lie in [{lo}, {hi}]")

    @property
    def b(self) -> int:
        return len(self.betas)

    def anchor_modes(self):
        """(k, n, beta_k, a_k) with n = -e_k."""
        for k, (beta, a) in enumerate(zip(self.betas, self.amplitudes)):
            n = np.zeros(self.b, dtype=np.int64)
            n[k] = -1
            yield k, tuple(int(x) for x in n), beta, a

    def excluded(self):
        """The resonant set S as (sign, n, j) triples."""
        out = set()
        for _, n, beta, _ in self.anchor_modes():
            out.add((1, n, beta))
            out.add((-1, tuple(-x for x in n), beta))
        return out

    def impose(self, u: Coeffs, eigsys: EigenSystem):
        for _, n, beta, a in self.anchor_modes():
            u.set(n, eigsys.index(beta), a)
        return u

    def initial(self, eigsys: EigenSystem, radius=1) -> Coeffs:
        """u^(0): the anchors alone."""
        return self.impose(Coeffs.zeros(self.b, max(1, radius), eigsys.size), eigsys)


class OverlapTensor:
    """Lazy, memoized overlaps sum_x prod_i phi_{j_i}(x) over 2p+2 labels.

    The value is symmetric in all indices, so entries are keyed by the sorted
    index tuple.  Values below ``drop_tol`` are not stored.  Reads and
    inserts are guarded by a lock.
    """

    def __init__(self, eigsys: EigenSystem, p, drop_tol=1e-14):
        self.phi = eigsys.phi
        self.p = int(p)
        self.drop_tol = drop_tol
        self._store = {}
        self._dropped = set()
        self._lock = threading.Lock()

    def __len__(self):
        return len(self._store)

    def value(self, j, jp, js, jps) -> float:
        """Overlap for site indices j, j' and the tuples (j_1..j_p), (j'_1..j'_p)."""
        if len(js) != self.p or len(jps) != self.p:
            raise ValueError(f"expected {self.p} indices per product")
        key = tuple(sorted((int(j), int(jp)) + tuple(int(x) for x in js) + tuple(int(x) for x in jps)))
        with self._lock:
            if key in self._store:
                return self._store[key]
            if key in self._dropped:
                return 0.0
        val = float(np.prod(self.phi[:, list(key)], axis=1).sum())
        with self._lock:
            if abs(val) >= self.drop_tol:
                self._store[key] = val
            else:
                self._dropped.add(key)
                val = 0.0
        return val

    def main_coefficient(self, k) -> float:
        """A = sum_x |phi_k(x)|^{2p+2}."""
        return float((np.abs(self.phi[:, k]) ** (2 * self.p + 2)).sum())


# pseudo-spectral helpers -------------------------------------------------------------

def grid_size(radius_out):
    """Smallest even FFT length resolving frequencies in [-radius_out, radius_out]."""
    P = 2 * radius_out + 1
    return P + (P % 2)


def _embed(values, radius, P, b):
    """Place time modes [-radius, radius]^b at FFT positions n mod P."""
    grid = np.zeros((P,) * b + values.shape[b:], dtype=complex)
    idx = np.arange(-radius, radius + 1) % P
    grid[np.ix_(*([idx] * b))] = values
    return grid


def _extract(grid, radius, b):
    P = grid.shape[0]
    idx = np.arange(-radius, radius + 1) % P
    return grid[np.ix_(*([idx] * b))]


def field_samples(u: Coeffs, phi, P):
    """U(tau, x) on the P^b grid tau = 2 pi k / P (time axes first)."""
    spatial = u.values @ phi.T
    grid = _embed(spatial, u.radius, P, u.b)
    axes = tuple(range(u.b))
    return np.fft.ifftn(grid, axes=axes) * P ** u.b


def fourier_coeffs(samples, radius, b):
    P = samples.shape[0]
    axes = tuple(range(b))
    return _extract(np.fft.fftn(samples, axes=axes) / P ** b, radius, b)


def nonlinear_term(u: Coeffs, eigsys: EigenSystem, p, target_radius=None, on_small="raise",
                   conjugate=False) -> Coeffs:
    """W_u (or its conjugate-sector partner) as coefficients on a time block.

    Parameters
    ----------
    u : Coeffs
    eigsys : EigenSystem
    p : int
        Nonlinearity power, |u|^{2p} u.
    target_radius : int, optional
        Time radius of the result; defaults to the full support (2p+1) R.
    on_small : {"raise", "truncate"}
        What to do when the target cannot hold the full support.
        Truncation records the dropped l2 mass in ``tail_norm``.
    conjugate : bool
        Return W~_u(n, j) = conj(W_u(-n, j)) = [V^{p+1} U^p]^(n, j) instead.
    """
    full = (2 * p + 1) * u.radius
    target = full if target_radius is None else int(target_radius)
    if target < full and on_small == "raise":
        raise BlockTooSmall(full, target)
    P = grid_size(full)
    U = field_samples(u, eigsys.phi, P)
    V = np.conj(U)
    G = V ** (p + 1) * U ** p if conjugate else U ** (p + 1) * V ** p
    ghat = fourier_coeffs(G, full, u.b)
    W = Coeffs(u.b, full, ghat @ eigsys.phi)
    return W.resized(target) if target != full else W


def direct_nonlinear_term(u: Coeffs, tensor: OverlapTensor, target_radius=None) -> Coeffs:
    """W_u by explicit convolution over the support of u, weighted by ``tensor``.

    Cost grows like (support size)^(2p+1); intended for small checks.
    """
    p = tensor.p
    b = u.b
    full = (2 * p + 1) * u.radius
    target = full if target_radius is None else int(target_radius)
    S = u.n_sites
    modes = u.time_modes()
    uf = u.flat()
    vf = u.conj_sector().reshape(-1, S)
    supp_u = [(modes[a], k, uf[a, k]) for a, k in zip(*np.nonzero(uf))]
    supp_v = [(modes[a], k, vf[a, k]) for a, k in zip(*np.nonzero(vf))]
    out = Coeffs.zeros(b, target, S)
    for first in supp_u:
        for us in itertools.product(supp_u, repeat=p):
            for vs in itertools.product(supp_v, repeat=p):
                n = first[0] + sum(x[0] for x in us) + sum(x[0] for x in vs)
                if np.abs(n).max() > target:
                    continue
                amp = first[2] * np.prod([x[2] for x in us]) * np.prod([x[2] for x in vs])
                js = [x[1] for x in us]
                jps = [x[1] for x in vs]
                pos = tuple(int(x) + target for x in n)
                for j in range(S):
                    w = tensor.value(j, first[1], js, jps)
                    if w:
                        out.values[pos + (j,)] += amp * w
    return out


# linearization -----------------------------------------------------------------------

@dataclass
class _ProductCoeffs:
    radius: int
    c1: np.ndarray  # [U^p V^p]^
    c2: np.ndarray  # [U^{p+1} V^{p-1}]^
    c3: np.ndarray  # [V^{p+1} U^{p-1}]^


def product_coeffs(u: Coeffs, eigsys: EigenSystem, p) -> _ProductCoeffs:
    """Fourier coefficients (time lag, site x) of the three order-2p products."""
    rad = 2 * p * u.radius
    P = grid_size(rad)
    U = field_samples(u, eigsys.phi, P)
    V = np.conj(U)
    up, vp = U ** p, V ** p
    upm = U ** (p - 1) if p > 1 else np.ones_like(U)
    vpm = V ** (p - 1) if p > 1 else np.ones_like(V)
    return _ProductCoeffs(
        radius=rad,
        c1=fourier_coeffs(up * vp, rad, u.b),
        c2=fourier_coeffs(U * up * vpm, rad, u.b),
        c3=fourier_coeffs(V * vp * upm, rad, u.b),
    )


def conjugate_block_defect(pc: _ProductCoeffs, b) -> float:
    """Max relative violation of c1(-l) = conj c1(l) and c3(l) = conj c2(-l)."""
    flip = tuple(slice(None, None, -1) for _ in range(b))
    scale = max(np.abs(pc.c1).max(), np.abs(pc.c2).max(), 1e-300)
    d1 = np.abs(pc.c1[flip] - np.conj(pc.c1)).max()
    d2 = np.abs(pc.c3 - np.conj(pc.c2[flip])).max()
    return float(max(d1, d2) / scale)


def _lag_matrices(c, phi):
    """M_l = Phi^T diag(c_l) Phi for every lag l (flattened lag axis first)."""
    S = phi.shape[1]
    flat = c.reshape(-1, c.shape[-1])
    out = np.empty((flat.shape[0] + 1, S, S), dtype=complex)
    for i, row in enumerate(flat):
        out[i] = phi.T @ (row[:, None] * phi)
    out[-1] = 0.0  # lags outside the product support
    return out


def _lag_index(n_rows, n_cols, radius):
    """Flat lag index of n_row - n_col, or -1 outside [-radius, radius]^b."""
    lag = n_rows[:, None, :] - n_cols[None, :, :]
    inside = np.all(np.abs(lag) <= radius, axis=2)
    width = 2 * radius + 1
    flat = np.zeros(lag.shape[:2], dtype=np.int64)
    for axis in range(lag.shape[2]):
        flat = flat * width + (lag[:, :, axis] + radius)
    return np.where(inside, flat, -1)


def mode_site_indices(modes: ModeList, eigsys: EigenSystem):
    try:
        return np.array([eigsys.index(j) for j in modes.j], dtype=np.int64)
    except KeyError as exc:
        raise MarylandError(f"mode site {exc.args[0]} is outside the labelled box") from None


def weight_operator(u: Coeffs, eigsys: EigenSystem, p, modes: ModeList, check_tol=1e-10):
    """The two-sector matrix W_u = d(W, W~)/d(u, v) on ``modes``.

    ``modes`` must carry both signs (+1 first).  The conjugate-block identity
    is verified on the product coefficients before assembly.
    """
    if modes.signs != (1, -1):
        raise ValueError("weight_operator needs a two-sector mode list ordered (+, -)")
    pc = product_coeffs(u, eigsys, p)
    defect = conjugate_block_defect(pc, u.b)
    if defect > check_tol:
        raise MarylandError(f"conjugate block symmetry violated at assembly: {defect:.2e}")
    jidx = mode_site_indices(modes, eigsys)
    lag = _lag_index(modes.n, modes.n, pc.radius)
    rows, cols = jidx[:, None], jidx[None, :]
    blocks = {}
    for name, c in (("c1", pc.c1), ("c2", pc.c2), ("c3", pc.c3)):
        blocks[name] = _lag_matrices(c, eigsys.phi)[lag, rows, cols]
    K = len(jidx)
    W = np.empty((2 * K, 2 * K), dtype=complex)
    W[:K, :K] = (p + 1) * blocks["c1"]
    W[:K, K:] = p * blocks["c2"]
    W[K:, :K] = p * blocks["c3"]
    W[K:, K:] = (p + 1) * blocks["c1"]
    return W


def diagonal_part(modes: ModeList, eigsys: EigenSystem, omega, sigma=0.0):
    """Entries of D(sigma): sign (n.omega + sigma) + mu_j per mode."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    jidx = mode_site_indices(modes, eigsys)
    nw = modes.n @ omega + sigma
    mu = eigsys.mu[jidx]
    return np.concatenate([s * nw + mu for s in modes.signs])


def linearized_operator(u: Coeffs, eigsys: EigenSystem, omega, sigma, modes: ModeList, p,
                        delta):
    """T(sigma) = D(sigma) + delta W_u restricted to ``modes``."""
    T = delta * weight_operator(u, eigsys, p, modes) if delta != 0 else \
        np.zeros((len(modes), len(modes)), dtype=complex)
    T[np.diag_indices_from(T)] += diagonal_part(modes, eigsys, omega, sigma)
    return T


# residual ------------------------------------------------------------------------------

@dataclass
class Residual:
    plus: Coeffs
    minus: Coeffs
    norm: float
    in_block: float
    tail: float
    max_abs: float = field(default=0.0)


def _excluded_mask(C: Coeffs, resonant: ResonantSet, eigsys, sign):
    mask = np.zeros(C.values.shape, dtype=bool)
    for s, n, beta in resonant.excluded():
        if s != sign:
            continue
        pos = tuple(int(x) + C.radius for x in n)
        if all(0 <= q <= 2 * C.radius for q in pos):
            mask[pos + (eigsys.index(beta),)] = True
    return mask


def _block_mask(C: Coeffs, eigsys: EigenSystem, time_radius, site_radius):
    tm = np.abs(C.time_modes()).max(axis=1) <= time_radius
    sm = np.abs(eigsys.sites).max(axis=1) <= site_radius
    return (tm[:, None] & sm[None, :]).reshape(C.values.shape)


def residual(u: Coeffs, eigsys: EigenSystem, omega, delta, p, resonant: ResonantSet,
             block=None) -> Residual:
    """Both sectors of F(u) off the resonant set, over the full support of W_u.

    F+(n, j) = (n.omega + mu_j) u(n, j) + delta W_u(n, j)
    F-(n, j) = (-n.omega + mu_j) v(n, j) + delta W~_u(n, j)

    ``block`` = (time_radius, site_radius) splits the norm into an in-block
    part and the tail outside it; ``norm`` always covers everything.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    full = (2 * p + 1) * u.radius
    uu = u.resized(full)
    vv = uu.conj_sector()
    nw = uu.time_modes() @ omega
    shape = uu.values.shape
    lin_p = (nw[:, None] + eigsys.mu[None, :]).reshape(shape) * uu.values
    lin_m = (-nw[:, None] + eigsys.mu[None, :]).reshape(shape) * vv
    if delta != 0:
        W = nonlinear_term(u, eigsys, p).values
        Wt = nonlinear_term(u, eigsys, p, conjugate=True).values
    else:
        W = Wt = 0.0
    Fp = Coeffs(u.b, full, lin_p + delta * W)
    Fm = Coeffs(u.b, full, lin_m + delta * Wt)
    Fp.values[_excluded_mask(Fp, resonant, eigsys, 1)] = 0.0
    Fm.values[_excluded_mask(Fm, resonant, eigsys, -1)] = 0.0
    total = np.sqrt(np.linalg.norm(Fp.values) ** 2 + np.linalg.norm(Fm.values) ** 2)
    if block is None:
        inside, tail = total, 0.0
    else:
        m = _block_mask(Fp, eigsys, *block)
        inside = np.sqrt(np.linalg.norm(Fp.values[m]) ** 2 + np.linalg.norm(Fm.values[m]) ** 2)
        tail = np.sqrt(max(total ** 2 - inside ** 2, 0.0))
    mx = max(np.abs(Fp.values).max(), np.abs(Fm.values).max())
    return Residual(Fp, Fm, float(total), float(inside), float(tail), float(mx))
