"""Annular layout space and cylindrical octree models of obstacle point clouds."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial import polynomial as npoly

from .geometry import TWO_PI, Sector, cart_to_cyl

DEFAULT_MAX_DEPTH = 5


class SceneError(ValueError):
    """Invalid layout space, point cloud or scene description."""


# ---------------------------------------------------------------------------
# Layout space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LayoutSpace:
    """Region between the casing and nacelle surfaces of revolution.

    The generatrices are polynomials in ``z`` with coefficients in increasing
    power order, e.g. ``(500.0,)`` is the constant radius 500 mm.
    """

    casing_coeffs: tuple[float, ...]
    nacelle_coeffs: tuple[float, ...]
    z_min: float
    z_max: float

    def __post_init__(self):
        object.__setattr__(self, "casing_coeffs", tuple(float(c) for c in self.casing_coeffs))
        object.__setattr__(self, "nacelle_coeffs", tuple(float(c) for c in self.nacelle_coeffs))
        if not self.z_min < self.z_max:
            raise SceneError(f"z_min ({self.z_min}) must be below z_max ({self.z_max})")
        zs = self._dense_z()
        gap = self.f_n(zs) - self.f_c(zs)
        if np.any(gap <= 0.0):
            bad = zs[np.argmax(gap <= 0.0)]
            raise SceneError(f"casing radius reaches the nacelle radius at z={bad:.3f} mm")
        if np.any(self.f_c(zs) < 0.0):
            raise SceneError("casing radius must be non-negative")

    def _dense_z(self) -> np.ndarray:
        n = max(2, int(math.ceil(self.z_max - self.z_min)) + 1)
        return np.linspace(self.z_min, self.z_max, n)

    def f_c(self, z):
        return npoly.polyval(np.asarray(z, dtype=float), self.casing_coeffs)

    def f_n(self, z):
        return npoly.polyval(np.asarray(z, dtype=float), self.nacelle_coeffs)

    @property
    def rho_min(self) -> float:
        return float(self.f_c(self._dense_z()).min())

    @property
    def rho_max(self) -> float:
        return float(self.f_n(self._dense_z()).max())

    def contains(self, c) -> np.ndarray:
        """Membership of cylindrical point(s); the z and outer bounds are open."""
        c = np.asarray(c, dtype=float)
        z, rho = c[..., 0], c[..., 1]
        return (self.f_c(z) <= rho) & (rho < self.f_n(z)) & (self.z_min <= z) & (z < self.z_max)

    def contains_cart(self, p) -> np.ndarray:
        return self.contains(cart_to_cyl(p))

    def to_dict(self) -> dict:
        return {
            "casing": list(self.casing_coeffs),
            "nacelle": list(self.nacelle_coeffs),
            "z_min": self.z_min,
            "z_max": self.z_max,
        }


def in_layout_space(p, space: LayoutSpace) -> np.ndarray:
    return space.contains(p)


# ---------------------------------------------------------------------------
# Point clouds
# ---------------------------------------------------------------------------


def load_point_cloud(path) -> np.ndarray:
    """Read an ``x y z`` text file or an ASCII PLY file into an (n, 3) array."""
    path = Path(path)
    if not path.is_file():
        raise SceneError(f"point cloud not found: {path}")
    text = path.read_text()
    if text.startswith("ply"):
        return _parse_ascii_ply(text, path)
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        if len(parts) < 3:
            raise SceneError(f"{path}:{lineno}: expected 'x y z'")
        try:
            rows.append([float(v) for v in parts[:3]])
        except ValueError as exc:
            raise SceneError(f"{path}:{lineno}: {exc}") from None
    pts = np.array(rows, dtype=float).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise SceneError(f"{path}: non-finite coordinates")
    return pts


def _parse_ascii_ply(text: str, path: Path) -> np.ndarray:
    lines = text.splitlines()
    n_vertex = None
    props: list[str] = []
    in_vertex = False
    body_start = None
    for i, line in enumerate(lines):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format" and tok[1] != "ascii":
            raise SceneError(f"{path}: only ASCII PLY is supported")
        if tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = i + 1
            break
    if n_vertex is None or body_start is None:
        raise SceneError(f"{path}: malformed PLY header")
    try:
        ix, iy, iz = props.index("x"), props.index("y"), props.index("z")
    except ValueError:
        raise SceneError(f"{path}: PLY vertex element lacks x/y/z") from None
    body = lines[body_start : body_start + n_vertex]
    if len(body) < n_vertex:
        raise SceneError(f"{path}: truncated PLY vertex list")
    data = np.array([[float(v) for v in row.split()] for row in body], dtype=float)
    return data[:, [ix, iy, iz]]


def write_point_cloud(path, points, header: str | None = None) -> None:
    with open(path, "w") as fh:
        if header:
            for line in header.splitlines():
                fh.write(f"# {line}\n")
        for x, y, z in np.asarray(points, dtype=float).tolist():
            fh.write(f"{x!r} {y!r} {z!r}\n")


def box_cloud(center, size, spacing: float = 5.0) -> np.ndarray:
    """Solid grid of points filling an axis-aligned Cartesian box."""
    center = np.asarray(center, dtype=float)
    size = np.asarray(size, dtype=float)
    axes = [
        np.linspace(c - s / 2, c + s / 2, max(2, int(math.ceil(s / spacing)) + 1))
        for c, s in zip(center, size)
    ]
    g = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in g], axis=1)


# ---------------------------------------------------------------------------
# Octree
# ---------------------------------------------------------------------------


def _covering_arc(theta: np.ndarray) -> tuple[float, float]:
    """Smallest arc holding all angles: cut the circle at its largest gap."""
    t = np.sort(np.mod(theta, TWO_PI))
    if len(t) == 1:
        return float(t[0]), float(t[0])
    gaps = np.diff(np.concatenate([t, [t[0] + TWO_PI]]))
    k = int(np.argmax(gaps))
    lo = t[(k + 1) % len(t)]
    width = max(0.0, TWO_PI - gaps[k])
    return float(lo), float(lo + width)


def cylindrical_bounds(cloud) -> Sector:
    """Tightest cylindrical box around a Cartesian point cloud."""
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise SceneError("empty point cloud")
    c = cart_to_cyl(pts)
    t_lo, t_hi = _covering_arc(c[:, 2])
    return Sector(
        float(c[:, 0].min()), float(c[:, 0].max()),
        float(c[:, 1].min()), float(c[:, 1].max()),
        t_lo, t_hi,
    )


@dataclass(frozen=True)
class ObstacleOctree:
    """Occupied cells of a recursive 8-way split of a cylindrical box.

    Only the finest level is stored for queries: ``occupancy`` is a dense
    boolean grid of side ``2**max_depth`` indexed ``(i_z, i_rho, i_theta)``.
    Cells are half-open on every axis.
    """

    root: Sector
    max_depth: int
    occupancy: np.ndarray
    leaf_index: np.ndarray
    nodes_per_depth: tuple[int, ...] = field(default=())

    @property
    def resolution(self) -> int:
        return 1 << self.max_depth

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_index)

    def cell_extent(self) -> np.ndarray:
        r = self.root
        return np.array([r.z_hi - r.z_lo, r.rho_hi - r.rho_lo, r.theta_width]) / self.resolution

    def leaf_bounds(self) -> np.ndarray:
        """Leaf sectors as an (n_leaves, 6) array of bounds."""
        ext = self.cell_extent()
        lo = np.array([self.root.z_lo, self.root.rho_lo, self.root.theta_lo]) + self.leaf_index * ext
        hi = lo + ext
        return np.stack([lo[:, 0], hi[:, 0], lo[:, 1], hi[:, 1], lo[:, 2], hi[:, 2]], axis=1)

    def leaves(self) -> list[Sector]:
        return [Sector(*row) for row in self.leaf_bounds()]

    def occupied_volume(self) -> float:
        b = self.leaf_bounds()
        return float(np.sum(0.5 * (b[:, 3] ** 2 - b[:, 2] ** 2) * (b[:, 5] - b[:, 4]) * (b[:, 1] - b[:, 0])))

    def cell_indices(self, c) -> tuple[np.ndarray, np.ndarray]:
        """Finest-level indices of cylindrical points and an in-root mask."""
        c = np.atleast_2d(np.asarray(c, dtype=float))
        r = self.root
        n = self.resolution
        rel = np.stack(
            [
                (c[:, 0] - r.z_lo) / (r.z_hi - r.z_lo),
                (c[:, 1] - r.rho_lo) / (r.rho_hi - r.rho_lo),
                np.mod(c[:, 2] - r.theta_lo, TWO_PI) / r.theta_width,
            ],
            axis=1,
        )
        inside = np.all((rel >= 0.0) & (rel < 1.0), axis=1)
        idx = np.floor(np.where(inside[:, None], rel, 0.0) * n).astype(np.int64)
        idx = np.minimum(idx, n - 1)
        return idx, inside

    def contains(self, c) -> np.ndarray:
        idx, inside = self.cell_indices(c)
        hit = self.occupancy[idx[:, 0], idx[:, 1], idx[:, 2]]
        return inside & hit


def _root_sector(cloud: np.ndarray, min_extent: float) -> Sector:
    b = cylindrical_bounds(cloud)
    z_lo, z_hi, r_lo, r_hi, t_lo, t_hi = b.as_array()

    def widen(lo, hi, min_ext):
        # degenerate extents are inflated around their centre
        if hi - lo < min_ext:
            mid = 0.5 * (lo + hi)
            lo, hi = mid - 0.5 * min_ext, mid + 0.5 * min_ext
        pad = 1e-9 * max(1.0, abs(hi), hi - lo)
        return lo, hi + pad

    z_lo, z_hi = widen(z_lo, z_hi, min_extent)
    r_lo, r_hi = widen(r_lo, r_hi, min_extent)
    if r_lo < 0.0:
        r_hi -= r_lo
        r_lo = 0.0
    t_min = min_extent / max(r_hi, min_extent)
    t_lo, t_hi = widen(t_lo, t_hi, t_min)
    if t_hi - t_lo > TWO_PI:
        t_lo, t_hi = 0.0, TWO_PI
    t_shift = math.floor(t_lo / TWO_PI) * TWO_PI
    return Sector(z_lo, z_hi, r_lo, r_hi, t_lo - t_shift, t_hi - t_shift)


def build_octree(cloud, max_depth: int = DEFAULT_MAX_DEPTH, min_extent: float = 1.0) -> ObstacleOctree:
    """Voxelize a Cartesian point cloud in cylindrical coordinates.

    The root is the cloud's cylindrical bounding box.  A node is occupied iff it
    holds at least one point; occupied nodes are split into 8 equal children
    down to ``max_depth`` while free nodes are never split.  ``min_extent``
    (mm) inflates axes along which the cloud has no thickness.
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise SceneError("cannot build an octree from an empty point cloud")
    if max_depth < 0:
        raise ValueError("max_depth must be >= 0")
    root = _root_sector(pts, min_extent)
    n = 1 << max_depth
    probe = ObstacleOctree(root, max_depth, np.zeros((1, 1, 1), dtype=bool), np.zeros((0, 3), dtype=np.int64))
    idx, inside = probe.cell_indices(cart_to_cyl(pts))
    if not np.all(inside):
        raise AssertionError("root sector does not enclose the cloud")

    # refine level by level: at each depth only the children of occupied nodes
    # that received points exist
    counts = []
    for depth in range(max_depth + 1):
        node = idx >> (max_depth - depth)
        counts.append(len(np.unique(node, axis=0)))
    leaf_index = np.unique(idx, axis=0)
    occ = np.zeros((n, n, n), dtype=bool)
    occ[leaf_index[:, 0], leaf_index[:, 1], leaf_index[:, 2]] = True
    occ.setflags(write=False)
    leaf_index.setflags(write=False)
    return ObstacleOctree(root, max_depth, occ, leaf_index, tuple(counts))


def octree_contains(o: ObstacleOctree, p) -> bool | np.ndarray:
    """Whether cylindrical point(s) fall in an occupied leaf."""
    p = np.asarray(p, dtype=float)
    res = o.contains(p)
    return bool(res[0]) if p.ndim == 1 else res
