"""Rule fields of external components and the fan-grid potential table.

Each external component (EC) contributes a piecewise field of the distance
``d`` between a pipe-axis point and the component:

* ``k_r`` (<= 0) inside the repulsive band ``d < clearance``;
* ``k_a * (d_max_band - d) / (d_max_band - d_min)`` inside the attractive band;
* 0 elsewhere.

Fields of all ECs are summed.  Points outside the layout space get the
sentinel value (the most negative configured ``k_r``, default -1).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from scipy.spatial import cKDTree

from .environment import LayoutSpace, ObstacleOctree
from .geometry import TWO_PI, cart_to_cyl, cyl_to_cart, sector_distances

ECKind = Literal["obstacle", "casing", "nacelle", "polyline"]

DEFAULT_SENTINEL = -1.0
TABLE_MAGIC = b"PETB"
TABLE_VERSION = 1


@dataclass(frozen=True)
class Repulsive:
    k_r: float = -1.0
    clearance: float = 0.0

    def __post_init__(self):
        if self.k_r > 0:
            raise ValueError("repulsive gain k_r must be <= 0")
        if self.clearance < 0:
            raise ValueError("clearance must be >= 0")


@dataclass(frozen=True)
class Attractive:
    k_a: float = 0.2
    d_min: float = 0.0
    d_max_band: float = 100.0

    def __post_init__(self):
        if self.k_a < 0:
            raise ValueError("attractive gain k_a must be >= 0")
        if not 0 <= self.d_min < self.d_max_band:
            raise ValueError("need 0 <= d_min < d_max_band")


@dataclass(frozen=True)
class ExternalComponent:
    """A rule-carrying object: obstacle octree, casing, nacelle or laid pipe."""

    kind: ECKind
    geometry: object
    repulsive: Optional[Repulsive] = None
    attractive: Optional[Attractive] = None
    name: str = ""

    def influence(self) -> float:
        """Largest distance at which the field can be non-zero."""
        r = self.repulsive.clearance if self.repulsive else 0.0
        a = self.attractive.d_max_band if self.attractive else 0.0
        return max(r, a)


def default_clearance(pipe_diameter: float) -> float:
    """Axis clearance that keeps the pipe wall 2 mm off a surface."""
    return pipe_diameter / 2.0 + 2.0


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def _leaf_geometry(octree: ObstacleOctree):
    bounds = octree.leaf_bounds()
    mids = np.stack(
        [0.5 * (bounds[:, 0] + bounds[:, 1]), 0.5 * (bounds[:, 2] + bounds[:, 3]), 0.5 * (bounds[:, 4] + bounds[:, 5])],
        axis=1,
    )
    centers = cyl_to_cart(mids)
    # radius of a ball around the centre enclosing each leaf: check the 8 corners
    corners = []
    for iz in (0, 1):
        for ir in (2, 3):
            for it in (4, 5):
                corners.append(cyl_to_cart(np.stack([bounds[:, iz], bounds[:, ir], bounds[:, it]], axis=1)))
    radius = np.max([np.linalg.norm(c - centers, axis=1) for c in corners], axis=0)
    # the outer arc bulges past its chord
    sag = bounds[:, 3] * (1.0 - np.cos(0.5 * (bounds[:, 5] - bounds[:, 4])))
    return bounds, centers, radius + sag


def _obstacle_distance_exact(c: np.ndarray, octree: ObstacleOctree, chunk: int = 2048) -> np.ndarray:
    bounds = octree.leaf_bounds()
    out = np.empty(len(c))
    for i in range(0, len(c), chunk):
        out[i : i + chunk] = sector_distances(c[i : i + chunk], bounds).min(axis=1)
    return out


def _obstacle_distance_within(c: np.ndarray, octree: ObstacleOctree, reach: float) -> np.ndarray:
    """Exact distances where they are <= ``reach``; ``inf`` beyond."""
    out = np.full(len(c), np.inf)
    if len(c) == 0:
        return out
    out[octree.contains(c)] = 0.0
    todo = np.flatnonzero(np.isinf(out))
    if len(todo) == 0:
        return out
    bounds, centers, radius = _leaf_geometry(octree)
    tree = cKDTree(centers)
    pts = cyl_to_cart(c[todo])
    cand = tree.query_ball_point(pts, r=reach + radius.max())
    lens = np.fromiter((len(x) for x in cand), dtype=np.int64, count=len(cand))
    if lens.sum() == 0:
        return out
    rows = np.repeat(np.arange(len(todo)), lens)
    cols = np.concatenate([np.asarray(x, dtype=np.int64) for x in cand if len(x)])
    d = np.empty(len(rows))
    step = 1 << 16
    for i in range(0, len(rows), step):
        r, k = rows[i : i + step], cols[i : i + step]
        z, rho, th = c[todo[r]].T
        b = bounds[k]
        d[i : i + step] = _pair_sector_distance(z, rho, th, b)
    best = np.full(len(todo), np.inf)
    np.minimum.at(best, rows, d)
    best[best > reach] = np.inf
    out[todo] = best
    return out


def _pair_sector_distance(z, rho, th, b) -> np.ndarray:
    width = b[:, 5] - b[:, 4]
    a = np.mod(th - b[:, 4], TWO_PI)
    gap = np.where(a <= width, 0.0, np.minimum(TWO_PI - a, a - width))
    r_in = rho * np.cos(gap)
    h = rho * np.sin(gap)
    dr = np.clip(r_in, b[:, 2], b[:, 3]) - r_in
    dz = np.clip(z, b[:, 0], b[:, 1]) - z
    return np.sqrt(h * h + dr * dr + dz * dz)


def _polyline_distance(p_cart: np.ndarray, poly: np.ndarray) -> np.ndarray:
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 1:
        return np.linalg.norm(p_cart - poly[0], axis=1)
    a = poly[:-1][None, :, :]
    ab = (poly[1:] - poly[:-1])[None, :, :]
    ap = p_cart[:, None, :] - a
    denom = np.maximum(np.sum(ab * ab, axis=2), 1e-300)
    t = np.clip(np.sum(ap * ab, axis=2) / denom, 0.0, 1.0)
    d = np.linalg.norm(ap - t[..., None] * ab, axis=2)
    return d.min(axis=1)


def ec_distance(p, ec: ExternalComponent) -> np.ndarray | float:
    """Distance (mm) from cylindrical point(s) to an EC.

    Surfaces return signed radial gaps (negative on the wrong side).
    """
    p = np.asarray(p, dtype=float)
    c = np.atleast_2d(p)
    if ec.kind == "obstacle":
        d = _obstacle_distance_exact(c, ec.geometry)
        d[ec.geometry.contains(c)] = 0.0
    elif ec.kind == "casing":
        d = c[:, 1] - ec.geometry.f_c(c[:, 0])
    elif ec.kind == "nacelle":
        d = ec.geometry.f_n(c[:, 0]) - c[:, 1]
    elif ec.kind == "polyline":
        d = _polyline_distance(cyl_to_cart(c), ec.geometry)
    else:
        raise ValueError(f"unknown EC kind {ec.kind!r}")
    return float(d[0]) if p.ndim == 1 else d


def _field_from_distance(ec: ExternalComponent, d: np.ndarray) -> np.ndarray:
    val = np.zeros_like(d)
    rep = np.zeros(d.shape, dtype=bool)
    if ec.repulsive is not None:
        # interiors (d <= 0) stay repulsive even with zero clearance
        rep = (d < ec.repulsive.clearance) | (d <= 0.0)
        val[rep] = ec.repulsive.k_r
    if ec.attractive is not None:
        at = ec.attractive
        band = (~rep) & (d >= at.d_min) & (d <= at.d_max_band)
        val[band] = at.k_a * (at.d_max_band - d[band]) / (at.d_max_band - at.d_min)
    return val


def _distance_for_field(c: np.ndarray, ec: ExternalComponent) -> np.ndarray:
    if ec.kind == "obstacle":
        return _obstacle_distance_within(c, ec.geometry, ec.influence())
    return np.atleast_1d(ec_distance(c, ec))


def field_value(ec: ExternalComponent, p) -> np.ndarray | float:
    """Field of one EC at cylindrical point(s)."""
    p = np.asarray(p, dtype=float)
    c = np.atleast_2d(p)
    val = _field_from_distance(ec, _distance_for_field(c, ec))
    return float(val[0]) if p.ndim == 1 else val


def sentinel_for(ecs) -> float:
    gains = [ec.repulsive.k_r for ec in ecs if ec.repulsive is not None]
    return min(gains) if gains else DEFAULT_SENTINEL


def total_potential(p, ecs, space: LayoutSpace, sentinel: float | None = None) -> np.ndarray | float:
    """Sum of all EC fields; the sentinel outside the layout space."""
    p = np.asarray(p, dtype=float)
    c = np.atleast_2d(p)
    if sentinel is None:
        sentinel = sentinel_for(ecs)
    total = np.zeros(len(c))
    for ec in ecs:
        total += field_value(ec, c)
    total = np.where(space.contains(c), total, sentinel)
    return float(total[0]) if p.ndim == 1 else total


# ---------------------------------------------------------------------------
# Table
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialTable:
    """Potential of every fan-shaped cell, indexed ``(i_z, i_rho, i_theta)``.

    The angular index uses arc length at ``rho_min``, so cells widen radially.
    """

    s: float
    z_min: float
    rho_min: float
    values: np.ndarray
    sentinel: float = DEFAULT_SENTINEL
    max_value: float = field(init=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float32)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.s <= 0:
            raise ValueError("cell size must be positive")
        object.__setattr__(self, "max_value", float(v.max()) if v.size else 0.0)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.values.shape)

    def cell_centers(self, iz, ir, it) -> np.ndarray:
        """Cylindrical centres of the given cells."""
        iz, ir, it = (np.asarray(i, dtype=float) for i in (iz, ir, it))
        return np.stack(
            [
                self.z_min + (iz + 0.5) * self.s,
                self.rho_min + (ir + 0.5) * self.s,
                (it + 0.5) * self.s / self.rho_min,
            ],
            axis=-1,
        )

    def indices(self, p_cart) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        c = cart_to_cyl(np.atleast_2d(np.asarray(p_cart, dtype=float)))
        return self.indices_cyl(c)

    def indices_cyl(self, c):
        n_z, n_r, n_t = self.values.shape
        iz = np.floor((c[:, 0] - self.z_min) / self.s)
        ir = np.floor((c[:, 1] - self.rho_min) / self.s)
        it = np.floor(c[:, 2] * self.rho_min / self.s)
        ok = (iz >= 0) & (iz < n_z) & (ir >= 0) & (ir < n_r) & np.isfinite(it)
        iz = np.where(ok, iz, 0).astype(np.int64)
        ir = np.where(ok, ir, 0).astype(np.int64)
        it = np.mod(np.where(ok, it, 0), n_t).astype(np.int64)
        return iz, ir, it, ok

    def query(self, p_cart) -> np.ndarray:
        """Potentials at Cartesian point(s); sentinel outside the grid."""
        iz, ir, it, ok = self.indices(p_cart)
        vals = self.values[iz, ir, it].astype(float)
        return np.where(ok, vals, self.sentinel)

    def to_bytes(self) -> bytes:
        n_z, n_r, n_t = self.dims
        head = TABLE_MAGIC + struct.pack("<B", TABLE_VERSION)
        head += struct.pack("<QQQ", n_z, n_r, n_t)
        head += struct.pack("<ddd", self.s, self.z_min, self.rho_min)
        return head + self.values.astype("<f4").tobytes(order="C")

    @classmethod
    def from_bytes(cls, data: bytes, sentinel: float = DEFAULT_SENTINEL) -> "PotentialTable":
        head = 4 + 1 + 24 + 24
        if len(data) < head or data[:4] != TABLE_MAGIC:
            raise ValueError("not a potential table (bad magic)")
        (version,) = struct.unpack_from("<B", data, 4)
        if version != TABLE_VERSION:
            raise ValueError(f"unsupported table version {version}")
        n_z, n_r, n_t = struct.unpack_from("<QQQ", data, 5)
        s, z_min, rho_min = struct.unpack_from("<ddd", data, 29)
        count = n_z * n_r * n_t
        if len(data) != head + 4 * count:
            raise ValueError("table payload size does not match header")
        vals = np.frombuffer(data, dtype="<f4", count=count, offset=head).reshape(n_z, n_r, n_t)
        return cls(s, z_min, rho_min, vals.astype(np.float32), sentinel)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path, sentinel: float = DEFAULT_SENTINEL) -> "PotentialTable":
        return cls.from_bytes(Path(path).read_bytes(), sentinel)


def table_dims(space: LayoutSpace, s: float) -> tuple[int, int, int]:
    rho_min, rho_max = space.rho_min, space.rho_max
    n_z = int(math.ceil((space.z_max - space.z_min) / s - 1e-9))
    n_r = int(math.ceil((rho_max - rho_min) / s - 1e-9))
    n_t = int(math.floor(TWO_PI * rho_min / s))
    if n_t < 1:
        raise ValueError("cell size too large for the casing radius")
    return n_z, n_r, n_t


def build_table(space: LayoutSpace, ecs, s: float, sentinel: float | None = None) -> PotentialTable:
    """Evaluate the summed potential at every cell centre of the fan grid.

    ECs are only evaluated on cells that can lie inside their influence zone.
    """
    if not s > 0:
        raise ValueError(f"cell size must be positive, got {s}")
    ecs = list(ecs)
    if sentinel is None:
        sentinel = sentinel_for(ecs)
    n_z, n_r, n_t = table_dims(space, s)
    iz, ir, it = np.meshgrid(np.arange(n_z), np.arange(n_r), np.arange(n_t), indexing="ij")
    tmp = PotentialTable(s, space.z_min, space.rho_min, np.zeros((1, 1, 1)), sentinel)
    centers = tmp.cell_centers(iz.ravel(), ir.ravel(), it.ravel())
    in_space = space.contains(centers)
    total = np.zeros(len(centers))
    for ec in ecs:
        reach = ec.influence()
        if ec.kind == "obstacle":
            root = ec.geometry.root.as_array()[None, :]
            near = np.flatnonzero(in_space & (sector_distances(centers, root)[:, 0] <= reach))
        else:
            near = np.flatnonzero(in_space)
        if len(near):
            total[near] += _field_from_distance(ec, _distance_for_field(centers[near], ec))
    values = np.where(in_space, total, sentinel).reshape(n_z, n_r, n_t)
    return PotentialTable(s, space.z_min, space.rho_min, values, sentinel)


def query_table(t: PotentialTable, p) -> np.ndarray | float:
    p = np.asarray(p, dtype=float)
    v = t.query(p)
    return float(v[0]) if p.ndim == 1 else v
