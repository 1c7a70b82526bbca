"""Slow, independent reference implementations used only by the tests."""

from __future__ import annotations

import math

import numpy as np

from piperoute.geometry import sector_distances as _sector_distances


def cox_de_boor(knots, degree: int, i: int, u: float) -> float:
    """Literal recursive basis definition with 0/0 := 0 and a closed last span."""
    knots = [float(k) for k in knots]
    last = knots[-1]

    def N(i, p):
        if p == 0:
            lo, hi = knots[i], knots[i + 1]
            if lo <= u < hi:
                return 1.0
            # the domain end belongs to the last non-empty span
            if u == last and hi == last and lo < hi:
                return 1.0
            return 0.0
        a = 0.0
        den = knots[i + p] - knots[i]
        if den != 0.0:
            a = (u - knots[i]) / den * N(i, p - 1)
        b = 0.0
        den = knots[i + p + 1] - knots[i + 1]
        if den != 0.0:
            b = (knots[i + p + 1] - u) / den * N(i + 1, p - 1)
        return a + b

    return N(i, degree)


def de_boor(knots, ctrl, degree: int, u: float) -> np.ndarray:
    """Non-rational B-spline point by de Boor's triangular scheme."""
    t = np.asarray(knots, dtype=float)
    c = np.asarray(ctrl, dtype=float)
    n = len(c)
    hi = t[n]
    if u >= hi:
        k = max(j for j in range(degree, n) if t[j] < t[j + 1])
    else:
        k = max(j for j in range(degree, n) if t[j] <= u)
    d = [c[j + k - degree].copy() for j in range(degree + 1)]
    for r in range(1, degree + 1):
        for j in range(degree, r - 1, -1):
            left = t[j + k - degree]
            right = t[j + 1 + k - r]
            alpha = 0.0 if right == left else (u - left) / (right - left)
            d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j]
    return d[degree]


def rational_point(knots, ctrl, weights, degree: int, u: float) -> np.ndarray:
    """Rational curve point from the recursive basis."""
    n = len(ctrl)
    N = np.array([cox_de_boor(knots, degree, i, u) for i in range(n)])
    w = np.asarray(weights, dtype=float)
    num = (N * w) @ np.asarray(ctrl, dtype=float)
    return num / np.dot(N, w)


# ---------------------------------------------------------------------------
# Sector distance by boundary sampling
# ---------------------------------------------------------------------------


def _cart(z, rho, th):
    return np.stack([rho * np.cos(th), rho * np.sin(th), z], axis=-1)


def _in_sector(p, s) -> bool:
    x, y, z = p
    rho = math.hypot(x, y)
    th = math.atan2(y, x) % (2 * math.pi)
    if not (s[0] <= z <= s[1] and s[2] <= rho <= s[3]):
        return False
    rel = (th - s[4]) % (2 * math.pi)
    return rel <= s[5] - s[4] + 1e-12 or s[5] - s[4] >= 2 * math.pi


def sector_distance_oracle(p, s, grid: int = 20, rounds: int = 13, keep: int = 4) -> float:
    """Distance from Cartesian ``p`` to the solid sector ``s = (z0,z1,r0,r1,t0,t1)``.

    The six boundary faces are sampled on a coarse grid; the best candidates
    on every face are then refined together by repeatedly zooming a sampling
    window around them.
    """
    p = np.asarray(p, dtype=float)
    if _in_sector(p, s):
        return 0.0
    lo = np.array([s[0], s[2], s[4]], dtype=float)
    hi = np.array([s[1], s[3], s[5]], dtype=float)

    def dist(c):
        return np.linalg.norm(_cart(c[..., 0], c[..., 1], c[..., 2]) - p, axis=-1)

    faces, widths = [], []
    for fixed in range(3):
        free = [i for i in range(3) if i != fixed]
        A, B = np.meshgrid(
            np.linspace(lo[free[0]], hi[free[0]], grid), np.linspace(lo[free[1]], hi[free[1]], grid), indexing="ij"
        )
        w = np.zeros(3)
        w[free] = (hi[free] - lo[free]) / (grid - 1)
        for val in (lo[fixed], hi[fixed]):
            g = np.empty((grid * grid, 3))
            g[:, fixed], g[:, free[0]], g[:, free[1]] = val, A.ravel(), B.ravel()
            faces.append(g)
            widths.append(w)
    faces = np.stack(faces)
    best = np.argsort(dist(faces), axis=1)[:, :keep]
    c = np.take_along_axis(faces, best[..., None], axis=1).reshape(-1, 3)
    w = np.repeat(np.stack(widths), keep, axis=0)
    step = np.linspace(-1.0, 1.0, 9)
    # 81 offsets in the two free coordinates of each candidate
    grid2 = np.stack(np.meshgrid(step, step, indexing="ij"), axis=-1).reshape(-1, 2)
    free_mask = w > 0
    order = np.argsort(~free_mask, axis=1, kind="stable")[:, :2]
    eye = np.eye(3)
    for _ in range(rounds):
        axis_a = eye[order[:, 0]] * w
        axis_b = eye[order[:, 1]] * w
        delta = grid2[None, :, 0, None] * axis_a[:, None, :] + grid2[None, :, 1, None] * axis_b[:, None, :]
        cand = np.clip(c[:, None, :] + delta, lo, hi)
        d = dist(cand)
        j = np.argmin(d, axis=1)
        c = cand[np.arange(len(c)), j]
        w = w / 3.0
    return float(dist(c).min())


# ---------------------------------------------------------------------------
# Octree cells by direct arithmetic
# ---------------------------------------------------------------------------


def cell_bounds(root, depth: int, idx) -> tuple[float, ...]:
    """Half-open bounds of cell ``idx = (iz, ir, it)`` at ``depth`` under ``root``."""
    n = 2**depth
    iz, ir, it = idx
    dz = (root.z_hi - root.z_lo) / n
    dr = (root.rho_hi - root.rho_lo) / n
    dt = (root.theta_hi - root.theta_lo) / n
    return (
        root.z_lo + iz * dz, root.z_lo + (iz + 1) * dz,
        root.rho_lo + ir * dr, root.rho_lo + (ir + 1) * dr,
        root.theta_lo + it * dt, root.theta_lo + (it + 1) * dt,
    )


def cyl_in_cell(c, b) -> np.ndarray:
    """Half-open membership of cylindrical points ``c`` (theta unwrapped against b)."""
    z, rho, th = c[:, 0], c[:, 1], c[:, 2]
    rel = np.mod(th - b[4], 2 * math.pi)
    return (b[0] <= z) & (z < b[1]) & (b[2] <= rho) & (rho < b[3]) & (rel < b[5] - b[4])


def descend_cells(c, root, depth: int) -> np.ndarray:
    """Finest-cell index of each cylindrical point, found by halving the root ``depth`` times."""
    lo = np.array([root.z_lo, root.rho_lo, 0.0])
    ext = np.array([root.z_hi - root.z_lo, root.rho_hi - root.rho_lo, root.theta_hi - root.theta_lo])
    rel = np.stack([c[:, 0], c[:, 1], np.mod(c[:, 2] - root.theta_lo, 2 * math.pi)], axis=1)
    idx = np.zeros((len(c), 3), dtype=np.int64)
    for d in range(depth):
        size = ext / 2**d
        mid = lo + idx * size + size / 2
        idx = 2 * idx + (rel >= mid)
    return idx


# ---------------------------------------------------------------------------
# Potential fields written out case by case
# ---------------------------------------------------------------------------


def reference_field(d, rep, att):
    """Piecewise field written out case by case."""
    if rep is not None and (d < rep.clearance or d <= 0):
        return rep.k_r
    if att is not None and att.d_min <= d <= att.d_max_band:
        return att.k_a * (att.d_max_band - d) / (att.d_max_band - att.d_min)
    return 0.0


def reference_distance(c, ec):
    if ec.kind == "obstacle":
        if ec.geometry.contains(c[None])[0]:
            return 0.0
        return float(_sector_distances(c[None], ec.geometry.leaf_bounds()).min())
    if ec.kind == "casing":
        return c[1] - ec.geometry.f_c(c[0])
    if ec.kind == "nacelle":
        return ec.geometry.f_n(c[0]) - c[1]
    raise AssertionError(ec.kind)


def reference_total(c, ecs, space, sentinel=-1.0):
    if not space.contains(c[None])[0]:
        return sentinel
    return sum(reference_field(reference_distance(c, ec), ec.repulsive, ec.attractive) for ec in ecs)


# ---------------------------------------------------------------------------
# Learning
# ---------------------------------------------------------------------------


def gae_double_sum(rewards, values, dones, gamma: float, lam: float) -> np.ndarray:
    """O(T^2) direct sum of discounted TD errors up to each episode end."""
    T = len(rewards)
    delta = np.zeros(T)
    for t in range(T):
        nxt = 0.0 if dones[t] or t + 1 >= T else values[t + 1]
        delta[t] = rewards[t] + gamma * nxt - values[t]
    adv = np.zeros(T)
    for i in range(T):
        total = 0.0
        for k in range(T - i):
            total += (gamma * lam) ** k * delta[i + k]
            if dones[i + k]:
                break
        adv[i] = total
    return adv


def central_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Gradient of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g
