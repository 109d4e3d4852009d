"""Lattice points, norms, regions and flat mode indexing.

Regions live in Z^D with D = b + d for mode regions (time index n first,
spatial index j last) or D = d for spatial boxes.  Every enumeration is
sign-major and then lexicographic in the coordinates, so the two sectors of
a two-sector operator are contiguous slices.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .exceptions import RegionTooLarge

DEFAULT_MODE_CAP = 2_000_000
CUT_SYMBOLS = ("<", ">", None)


def l1_norm(v) -> int:
    return int(np.abs(np.asarray(v, dtype=np.int64)).sum())


def linf_norm(v) -> int:
    v = np.asarray(v, dtype=np.int64)
    return int(np.abs(v).max()) if v.size else 0


def torus_norm(x):
    """Distance from ``x`` to the nearest integer (works on arrays)."""
    x = np.asarray(x, dtype=float)
    r = np.abs(x - np.round(x))
    return float(r) if r.ndim == 0 else r


class ModeIndex(NamedTuple):
    sign: int
    n: tuple
    j: tuple


@dataclass(frozen=True)
class Region:
    """A finite subset of Z^D described by its defining geometry.

    kind is one of ``box`` (cube of half-size N), ``cut`` (cube minus the
    orthant selected by ``cut``), ``rect`` (rectangle with per-axis half
    widths) or ``generalized`` (rectangle minus its translate by ``shift``).
    """

    kind: str
    center: tuple
    half_widths: tuple
    cut: Optional[tuple] = None
    shift: Optional[tuple] = None

    @classmethod
    def box(cls, center, N):
        center = tuple(int(c) for c in center)
        return cls("box", center, (int(N),) * len(center))

    @classmethod
    def cut_box(cls, center, N, signs):
        center = tuple(int(c) for c in center)
        signs = tuple(signs)
        if len(signs) != len(center):
            raise ValueError("one cut symbol per axis is required")
        if any(s not in CUT_SYMBOLS for s in signs):
            raise ValueError(f"cut symbols must be in {CUT_SYMBOLS}")
        if sum(s is not None for s in signs) < 2:
            raise ValueError("an elementary cut needs at least two constrained axes")
        return cls("cut", center, (int(N),) * len(center), cut=signs)

    @classmethod
    def rect(cls, center, half_widths):
        center = tuple(int(c) for c in center)
        half_widths = tuple(int(h) for h in half_widths)
        if len(half_widths) != len(center) or min(half_widths) < 0:
            raise ValueError("half widths must be nonnegative, one per axis")
        return cls("rect", center, half_widths)

    @classmethod
    def generalized(cls, center, half_widths, shift):
        base = cls.rect(center, half_widths)
        shift = tuple(int(z) for z in shift)
        if len(shift) != len(base.center):
            raise ValueError("shift dimension mismatch")
        return cls("generalized", base.center, base.half_widths, shift=shift)

    @property
    def dim(self) -> int:
        return len(self.center)

    @property
    def size(self) -> int:
        return max(self.half_widths)

    def translate(self, offset) -> "Region":
        c = tuple(int(a) + int(o) for a, o in zip(self.center, offset))
        return Region(self.kind, c, self.half_widths, self.cut, self.shift)

    def bounding_count(self) -> int:
        return int(np.prod([2 * h + 1 for h in self.half_widths], dtype=object))

    def contains(self, points) -> np.ndarray:
        """Membership mask for an (m, D) array of integer points."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        rel = pts - np.asarray(self.center, dtype=np.int64)
        hw = np.asarray(self.half_widths, dtype=np.int64)
        inside = np.all(np.abs(rel) <= hw, axis=1)
        if self.kind == "cut":
            removed = np.ones(len(pts), dtype=bool)
            for k, s in enumerate(self.cut):
                if s == "<":
                    removed &= rel[:, k] < 0
                elif s == ">":
                    removed &= rel[:, k] > 0
            inside &= ~removed
        elif self.kind == "generalized":
            moved = rel - np.asarray(self.shift, dtype=np.int64)
            inside &= ~np.all(np.abs(moved) <= hw, axis=1)
        return inside

    def points(self, cap: int = DEFAULT_MODE_CAP) -> np.ndarray:
        """Lexicographically ordered member points, shape (m, D)."""
        count = self.bounding_count()
        if count > cap:
            raise RegionTooLarge(count, cap)
        axes = [np.arange(c - h, c + h + 1) for c, h in zip(self.center, self.half_widths)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)
        return grid[self.contains(grid)]

    def diameter(self) -> int:
        pts = self.points()
        if len(pts) == 0:
            return 0
        return int((pts.max(axis=0) - pts.min(axis=0)).max())

    def width(self, max_points: int = 4000) -> int:
        """Width in the l-infinity metric, by exhaustive search.

        Exponential in D; intended for the small regions used in tests and
        diagnostics.
        """
        pts = self.points()
        if len(pts) > max_points:
            raise RegionTooLarge(len(pts), max_points)
        member = {tuple(p) for p in pts}
        best = 0
        for M in range(1, self.diameter() + 1):
            if all(_has_good_subregion(p, M, member, pts) for p in pts):
                best = M
            else:
                break
        return best


def _has_good_subregion(p, M, member, pts):
    D = len(p)
    for shape in elementary_region_family(M, D):
        for off in itertools.product(range(-M, M + 1), repeat=D):
            c = tuple(int(a) + o for a, o in zip(p, off))
            cand = shape.translate(c)
            if not cand.contains([p])[0]:
                continue
            sub = cand.points()
            if not all(tuple(q) in member for q in sub):
                continue
            rest = pts[~cand.contains(pts)]
            if len(rest) == 0 or np.abs(rest - np.asarray(p)).max(axis=1).min() >= M / 2:
                return True
    return False


def elementary_region_family(N: int, dim: int) -> list:
    """All size-N elementary regions centred at the origin of Z^dim.

    The full cube comes first, followed by every cut pattern with at least
    two constrained axes in ``itertools.product`` order.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    origin = (0,) * dim
    family = [Region.box(origin, N)]
    for signs in itertools.product(CUT_SYMBOLS, repeat=dim):
        if sum(s is not None for s in signs) >= 2:
            family.append(Region.cut_box(origin, N, signs))
    return family


class ModeList:
    """Flat, duplicate-free enumeration of two-sector modes over a region."""

    def __init__(self, points: np.ndarray, b: int, signs: Sequence[int] = (1, -1)):
        self.points = np.asarray(points, dtype=np.int64).reshape(len(points), -1)
        self.b = int(b)
        self.signs = tuple(int(s) for s in signs)
        self._lookup = {}
        m = len(self.points)
        for si, s in enumerate(self.signs):
            for k, p in enumerate(map(tuple, self.points)):
                self._lookup[(s, p)] = si * m + k

    def __len__(self):
        return len(self.signs) * len(self.points)

    @property
    def n(self) -> np.ndarray:
        return self.points[:, : self.b]

    @property
    def j(self) -> np.ndarray:
        return self.points[:, self.b:]

    def __getitem__(self, idx) -> ModeIndex:
        m = len(self.points)
        s, k = divmod(idx, m)
        p = self.points[k]
        return ModeIndex(self.signs[s], tuple(int(x) for x in p[: self.b]), tuple(int(x) for x in p[self.b:]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def index(self, mode) -> int:
        sign, n, j = mode
        return self._lookup[(int(sign), tuple(n) + tuple(j))]

    def __contains__(self, mode) -> bool:
        sign, n, j = mode
        return (int(sign), tuple(n) + tuple(j)) in self._lookup


def enumerate_region(region: Region, b: int, signs=(1, -1), cap: int = DEFAULT_MODE_CAP) -> ModeList:
    """Enumerate the modes (sign, n, j) of a region of Z^(b+d)."""
    total = region.bounding_count() * len(signs)
    if total > cap:
        raise RegionTooLarge(total, cap)
    return ModeList(region.points(cap=cap), b, signs)
