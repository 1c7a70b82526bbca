"""Coordinate frames, cylindrical sectors and cubic rational B-splines.

Points are plain numpy arrays.  Cartesian points are ``(x, y, z)`` in mm and
cylindrical points are ``(z, rho, theta)`` with ``theta`` in ``[0, 2*pi)``.
Every function accepts a single point of shape ``(3,)`` or a batch ``(m, 3)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

TWO_PI = 2.0 * math.pi

EndMode = Literal["open_end", "clamped_both"]


class DomainError(ValueError):
    """Curve parameter outside the valid knot domain."""


# ---------------------------------------------------------------------------
# Coordinates
# ---------------------------------------------------------------------------


def cart_to_cyl(p) -> np.ndarray:
    """Cartesian ``(x, y, z)`` to cylindrical ``(z, rho, theta)``.

    On-axis points get ``theta = 0``.
    """
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    rho = np.hypot(x, y)
    theta = np.mod(np.arctan2(y, x), TWO_PI)
    # mod can round -tiny up to exactly 2*pi
    theta = np.where(theta >= TWO_PI, 0.0, theta)
    theta = np.where(rho == 0.0, 0.0, theta)
    return np.stack([z, rho, theta], axis=-1)


def cyl_to_cart(c) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    z, rho, theta = c[..., 0], c[..., 1], c[..., 2]
    return np.stack([rho * np.cos(theta), rho * np.sin(theta), z], axis=-1)


def local_frame(p) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Annulus-aligned unit vectors (radial, tangential, axial) at ``p``."""
    _, _, theta = cart_to_cyl(p)
    c, s = math.cos(theta), math.sin(theta)
    return np.array([c, s, 0.0]), np.array([-s, c, 0.0]), np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# Sectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sector:
    """Solid cylindrical box ``[z_lo,z_hi] x [rho_lo,rho_hi] x [theta_lo,theta_hi]``.

    ``theta_lo`` lies in ``[0, 2*pi)``; ``theta_hi`` may exceed ``2*pi`` when the
    sector straddles ``theta = 0``.
    """

    z_lo: float
    z_hi: float
    rho_lo: float
    rho_hi: float
    theta_lo: float
    theta_hi: float

    def __post_init__(self):
        if not (self.z_lo <= self.z_hi):
            raise ValueError(f"z_lo > z_hi in {self}")
        if not (0.0 <= self.rho_lo <= self.rho_hi):
            raise ValueError(f"invalid rho range in {self}")
        if not (0.0 <= self.theta_hi - self.theta_lo <= TWO_PI + 1e-12):
            raise ValueError(f"invalid theta range in {self}")

    @property
    def theta_width(self) -> float:
        return self.theta_hi - self.theta_lo

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.z_lo, self.z_hi, self.rho_lo, self.rho_hi, self.theta_lo, self.theta_hi]
        )

    def volume(self) -> float:
        return 0.5 * (self.rho_hi**2 - self.rho_lo**2) * self.theta_width * (self.z_hi - self.z_lo)

    def contains(self, c, half_open: bool = False) -> np.ndarray:
        c = np.asarray(c, dtype=float)
        z, rho, theta = c[..., 0], c[..., 1], c[..., 2]
        a = np.mod(theta - self.theta_lo, TWO_PI)
        if half_open:
            return (
                (self.z_lo <= z) & (z < self.z_hi)
                & (self.rho_lo <= rho) & (rho < self.rho_hi)
                & (a < self.theta_width)
            )
        return (
            (self.z_lo <= z) & (z <= self.z_hi)
            & (self.rho_lo <= rho) & (rho <= self.rho_hi)
            & (a <= self.theta_width)
        )


def sector_distances(c, bounds) -> np.ndarray:
    """Euclidean distance from cylindrical points to solid sectors.

    Parameters
    ----------
    c : array (m, 3)
        Cylindrical points.
    bounds : array (k, 6)
        Rows of ``z_lo, z_hi, rho_lo, rho_hi, theta_lo, theta_hi``.

    Returns
    -------
    array (m, k)
    """
    c = np.atleast_2d(np.asarray(c, dtype=float))
    b = np.atleast_2d(np.asarray(bounds, dtype=float))
    z = c[:, 0:1]
    rho = c[:, 1:2]
    theta = c[:, 2:3]
    z_lo, z_hi, r_lo, r_hi, t_lo, t_hi = (b[:, i][None, :] for i in range(6))
    width = t_hi - t_lo

    a = np.mod(theta - t_lo, TWO_PI)
    # angular gap to the nearer planar face; zero inside the angular range
    gap = np.where(a <= width, 0.0, np.minimum(TWO_PI - a, a - width))
    r_in = rho * np.cos(gap)
    h = rho * np.sin(gap)
    dr = np.clip(r_in, r_lo, r_hi) - r_in
    dz = np.clip(z, z_lo, z_hi) - z
    return np.sqrt(h * h + dr * dr + dz * dz)


def distance_point_to_sector(p, s: Sector) -> float:
    """Distance (mm) from cylindrical point ``p`` to the solid sector ``s``."""
    return float(sector_distances(np.asarray(p, dtype=float)[None, :], s.as_array()[None, :])[0, 0])


# ---------------------------------------------------------------------------
# B-spline basis
# ---------------------------------------------------------------------------


def knot_vector(n_ctrl: int, degree: int, end_mode: EndMode = "clamped_both") -> np.ndarray:
    """Integer-spaced knot vector.

    ``clamped_both`` repeats the first and last knot ``degree + 1`` times with
    unit interior spacing, so the domain is ``[0, n_ctrl - degree]``.
    ``open_end`` clamps only the start; it is a prefix of the clamped vector
    with three more control points, which lets an open curve be closed later
    without moving the part already laid.
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    if n_ctrl < degree + 1:
        raise ValueError(f"need at least {degree + 1} control points, got {n_ctrl}")
    n_spans = n_ctrl - degree
    if end_mode == "clamped_both":
        interior = np.arange(1, n_spans, dtype=float)
        return np.concatenate([np.zeros(degree + 1), interior, np.full(degree + 1, float(n_spans))])
    if end_mode == "open_end":
        return np.concatenate([np.zeros(degree + 1), np.arange(1, n_ctrl + 1, dtype=float)])
    raise ValueError(f"unknown end mode {end_mode!r}")


def _domain(knots: np.ndarray, degree: int) -> tuple[float, float]:
    n = len(knots) - degree - 1
    return float(knots[degree]), float(knots[n])


def _check_domain(knots, degree, u, tol=1e-12) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    lo, hi = _domain(knots, degree)
    span = max(hi - lo, 1.0)
    if np.any(u < lo - tol * span) or np.any(u > hi + tol * span) or np.any(~np.isfinite(u)):
        raise DomainError(f"parameter outside [{lo}, {hi}]")
    return np.clip(u, lo, hi)


def find_span(knots: np.ndarray, degree: int, u) -> np.ndarray:
    """Index ``k`` of the non-empty span ``[knots[k], knots[k+1])`` holding ``u``.

    The domain end maps to the last non-empty span.
    """
    knots = np.asarray(knots, dtype=float)
    n = len(knots) - degree - 1
    u = np.asarray(u, dtype=float)
    k = np.searchsorted(knots[:n], u, side="right") - 1
    k = np.clip(k, degree, n - 1)
    # walk back over zero-length spans (only reachable at the domain end)
    empty = knots[k] == knots[k + 1]
    while np.any(empty):
        k = np.where(empty, k - 1, k)
        empty = knots[k] == knots[k + 1]
    return k


def _nonzero_basis(knots: np.ndarray, degree: int, u: np.ndarray, span: np.ndarray) -> np.ndarray:
    """The ``degree + 1`` non-vanishing basis values per parameter, shape (m, p+1)."""
    m = u.shape[0]
    p = degree
    N = np.zeros((m, p + 1))
    N[:, 0] = 1.0
    left = np.zeros((m, p + 1))
    right = np.zeros((m, p + 1))
    for j in range(1, p + 1):
        left[:, j] = u - knots[span + 1 - j]
        right[:, j] = knots[span + j] - u
        saved = np.zeros(m)
        for r in range(j):
            denom = right[:, r + 1] + left[:, j - r]
            temp = np.divide(N[:, r], denom, out=np.zeros(m), where=denom != 0.0)
            N[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        N[:, j] = saved
    return N


def basis_matrix(knots, degree: int, u) -> np.ndarray:
    """All basis values ``N_{i,p}(u)``; shape ``(len(u), n_ctrl)``."""
    knots = np.asarray(knots, dtype=float)
    u = _check_domain(knots, degree, np.atleast_1d(u))
    n = len(knots) - degree - 1
    span = find_span(knots, degree, u)
    local = _nonzero_basis(knots, degree, u, span)
    out = np.zeros((u.shape[0], n))
    rows = np.arange(u.shape[0])[:, None]
    cols = span[:, None] - degree + np.arange(degree + 1)[None, :]
    out[rows, cols] = local
    return out


def basis_functions(knots, degree: int, u: float) -> np.ndarray:
    """``N_{i,p}(u)`` for every control point index ``i``."""
    return basis_matrix(knots, degree, np.array([float(u)]))[0]


# ---------------------------------------------------------------------------
# NURBS curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NurbsPath:
    """Rational B-spline curve.  Arrays are copied and frozen on construction."""

    control_points: np.ndarray
    weights: np.ndarray
    knots: np.ndarray
    degree: int = 3
    end_mode: EndMode = "clamped_both"
    _hom: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        P = np.array(self.control_points, dtype=float).reshape(-1, 3)
        w = np.array(self.weights, dtype=float).reshape(-1)
        U = np.array(self.knots, dtype=float).reshape(-1)
        if len(P) < self.degree + 1:
            raise ValueError(f"need at least {self.degree + 1} control points")
        if len(w) != len(P):
            raise ValueError("one weight per control point required")
        if len(U) != len(P) + self.degree + 1:
            raise ValueError("len(knots) must equal len(control_points) + degree + 1")
        if np.any(w <= 0.0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be positive and finite")
        if np.any(np.diff(U) < 0.0):
            raise ValueError("knots must be non-decreasing")
        if not np.all(np.isfinite(P)):
            raise ValueError("control points must be finite")
        lo, hi = _domain(U, self.degree)
        if not hi > lo:
            raise ValueError("empty parameter domain")
        for a in (P, w, U):
            a.setflags(write=False)
        object.__setattr__(self, "control_points", P)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "knots", U)
        hom = np.concatenate([P * w[:, None], w[:, None]], axis=1)
        hom.setflags(write=False)
        object.__setattr__(self, "_hom", hom)

    @classmethod
    def build(cls, control_points, weights=None, degree: int = 3, end_mode: EndMode = "clamped_both"):
        P = np.asarray(control_points, dtype=float).reshape(-1, 3)
        w = np.ones(len(P)) if weights is None else weights
        return cls(P, w, knot_vector(len(P), degree, end_mode), degree, end_mode)

    @property
    def n_ctrl(self) -> int:
        return len(self.control_points)

    @property
    def domain(self) -> tuple[float, float]:
        return _domain(self.knots, self.degree)

    def evaluate(self, u) -> np.ndarray:
        """Curve points for parameter(s) ``u``; shape (3,) or (m, 3)."""
        scalar = np.ndim(u) == 0
        u = _check_domain(self.knots, self.degree, np.atleast_1d(u))
        span = find_span(self.knots, self.degree, u)
        local = _nonzero_basis(self.knots, self.degree, u, span)
        idx = span[:, None] - self.degree + np.arange(self.degree + 1)[None, :]
        hom = np.einsum("mj,mjk->mk", local, self._hom[idx])
        pts = hom[:, :3] / hom[:, 3:4]
        return pts[0] if scalar else pts

    def _span_polys(self) -> tuple[np.ndarray, np.ndarray]:
        """Power-basis coefficients of the homogeneous curve on every span.

        Returns span start knots and coefficients of shape (n_spans, p+1, 4)
        in the local variable ``t = (u - u_k) / (u_{k+1} - u_k)``.
        """
        cache = self.__dict__.get("_poly_cache")
        if cache is not None:
            return cache
        p = self.degree
        lo, hi = self.domain
        n = self.n_ctrl
        ks = np.array([k for k in range(p, n) if self.knots[k] < self.knots[k + 1]])
        ts = np.linspace(0.0, 1.0, p + 1)
        vander_inv = np.linalg.inv(np.vander(ts, p + 1, increasing=True))
        a, b = self.knots[ks], self.knots[ks + 1]
        u = (a[:, None] + ts[None, :] * (b - a)[:, None]).ravel()
        span = np.repeat(ks, p + 1)
        local = _nonzero_basis(self.knots, p, u, span).reshape(len(ks), p + 1, p + 1)
        idx = ks[:, None] - p + np.arange(p + 1)[None, :]
        hom = np.einsum("sij,sjk->sik", local, self._hom[idx])
        coefs = np.einsum("ti,sik->stk", vander_inv, hom)
        starts, widths = a, b - a
        cache = (starts, widths, coefs)
        object.__setattr__(self, "_poly_cache", cache)
        return cache

    def evaluate_dense(self, u: np.ndarray) -> np.ndarray:
        """Fast evaluation of sorted in-domain parameters via span polynomials."""
        starts, widths, coefs = self._span_polys()
        k = np.clip(np.searchsorted(starts, u, side="right") - 1, 0, len(starts) - 1)
        t = (u - starts[k]) / widths[k]
        powers = t[:, None] ** np.arange(self.degree + 1)[None, :]
        if k[0] == k[-1]:
            # sorted parameters within one span: a single matrix product
            hom = powers @ coefs[k[0]]
        else:
            hom = np.einsum("mi,mik->mk", powers, coefs[k])
        return hom[:, :3] / hom[:, 3:4]

    def derivative(self, u: float, h: float = 1e-6) -> np.ndarray:
        """First derivative by one-sided-safe central differences."""
        lo, hi = self.domain
        a, b = max(lo, u - h), min(hi, u + h)
        return (self.evaluate(b) - self.evaluate(a)) / (b - a)


def eval_nurbs(path: NurbsPath, u) -> np.ndarray:
    return path.evaluate(u)


# ---------------------------------------------------------------------------
# Arc length
# ---------------------------------------------------------------------------

_ARC_RTOL = 1e-6
_MAX_SAMPLES = 1 << 18


def _span_grid(path: NurbsPath, u_a: float, u_b: float):
    """Span range ``(k0, k1)`` when both ends sit on span boundaries of equal width."""
    starts, widths, _ = path._span_polys()
    ends = starts + widths
    k0 = np.flatnonzero(starts == u_a)
    k1 = np.flatnonzero(ends == u_b)
    if len(k0) != 1 or len(k1) != 1 or k1[0] < k0[0]:
        return None
    w = widths[k0[0] : k1[0] + 1]
    if not np.all(w == w[0]):
        return None
    return int(k0[0]), int(k1[0]) + 1


def _grid_points(path: NurbsPath, spans: tuple[int, int], per_span: int) -> np.ndarray:
    """Curve at ``per_span`` equal steps inside each span plus the final end point."""
    _, _, coefs = path._span_polys()
    c = coefs[spans[0] : spans[1]]
    t = np.arange(per_span) / per_span
    powers = t[:, None] ** np.arange(path.degree + 1)[None, :]
    hom = np.matmul(powers[None, :, :], c).reshape(-1, 4)
    last = c[-1].sum(axis=0)[None, :]
    hom = np.concatenate([hom, last])
    return hom[:, :3] / hom[:, 3:4]


def _polygon_length(path: NurbsPath) -> float:
    P = path.control_points
    d = np.diff(P, axis=0)
    return float(np.sqrt(np.einsum("ij,ij->i", d, d)).sum())


def _chords(pts: np.ndarray) -> np.ndarray:
    d = np.diff(pts, axis=0)
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def _arc_table(path: NurbsPath, u_a: float, u_b: float, dl: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Parameters, points and cumulative arc lengths of a converged polyline.

    Chord sums ``L(h)`` carry an ``O(h^2)`` error, so successive halvings are
    combined as ``L(h/2) + (L(h/2) - L(h)) / 3``.  Refinement stops once two
    such estimates agree to ``_ARC_RTOL`` and no chord exceeds ``dl``; the
    cumulative chord table is rescaled to the final estimate.
    """
    spans = _span_grid(path, u_a, u_b)
    n_spans = 1 if spans is None else spans[1] - spans[0]
    frac = (u_b - u_a) / (path.domain[1] - path.domain[0])
    guess = 0.5 * frac * _polygon_length(path) / dl
    per_span = max(int(math.ceil(max(16.0, min(guess, _MAX_SAMPLES / 4)) / n_spans)), 1)

    def points(m: int) -> tuple[np.ndarray, np.ndarray]:
        us = np.linspace(u_a, u_b, m * n_spans + 1)
        if spans is not None:
            return us, _grid_points(path, spans, m)
        return us, path.evaluate_dense(us)

    us, pts = points(per_span)
    chords = _chords(pts)
    total = chords.sum()
    estimate = None
    while per_span * n_spans < _MAX_SAMPLES:
        per_span *= 2
        us, pts = points(per_span)
        chords = _chords(pts)
        new_total = chords.sum()
        new_estimate = new_total + (new_total - total) / 3.0
        done = (
            estimate is not None
            and abs(new_estimate - estimate) <= _ARC_RTOL * max(new_estimate, 1e-12)
            and chords.max() <= dl
        )
        total, estimate = new_total, new_estimate
        if done:
            break
    cum = np.concatenate([[0.0], np.cumsum(chords)])
    if total > 0.0 and estimate is not None and estimate > 0.0:
        cum *= estimate / total
    return us, pts, cum


def _check_interval(path: NurbsPath, u_a: float, u_b: float, dl: float) -> tuple[float, float]:
    if dl <= 0:
        raise ValueError("dl must be positive")
    if u_a > u_b:
        raise DomainError("u_a must not exceed u_b")
    u_a, u_b = _check_domain(path.knots, path.degree, np.array([u_a, u_b]))
    return float(u_a), float(u_b)


def arc_length(path: NurbsPath, u_a: float, u_b: float, dl: float = 5.0) -> float:
    """Length (mm) of the curve between two parameters by refined chord summation."""
    u_a, u_b = _check_interval(path, u_a, u_b, dl)
    if u_a == u_b:
        return 0.0
    return float(_arc_table(path, u_a, u_b, dl)[2][-1])


def sample_by_arclength(path: NurbsPath, u_a: float, u_b: float, dl: float = 5.0) -> np.ndarray:
    """Points every ``dl`` mm of arc from ``C(u_a)``, always ending at ``C(u_b)``."""
    pts, _, _ = sample_with_length(path, u_a, u_b, dl)
    return pts


def sample_with_length(path: NurbsPath, u_a: float, u_b: float, dl: float = 5.0):
    """``(points, parameters, arc_length)`` for equal-arc sampling."""
    u_a, u_b = _check_interval(path, u_a, u_b, dl)
    if u_a == u_b:
        return path.evaluate(np.array([u_a])), np.array([u_a]), 0.0
    us, _, cum = _arc_table(path, u_a, u_b, dl)
    total = float(cum[-1])
    k = int(math.floor(total / dl + 1e-9))
    targets = dl * np.arange(k + 1, dtype=float)
    if total - targets[-1] > 1e-9 * max(1.0, total):
        targets = np.append(targets, total)
    else:
        targets[-1] = total
    u_s = np.interp(targets, cum, us)
    u_s[0], u_s[-1] = u_a, u_b
    return path.evaluate_dense(u_s), u_s, total
