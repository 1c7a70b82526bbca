import math
import struct

import numpy as np
import pytest

from piperoute.environment import LayoutSpace, box_cloud, build_octree
from piperoute.geometry import TWO_PI, Sector, cart_to_cyl, cyl_to_cart, distance_point_to_sector
from piperoute.potential import (
    Attractive,
    ExternalComponent,
    PotentialTable,
    Repulsive,
    build_table,
    default_clearance,
    ec_distance,
    field_value,
    query_table,
    table_dims,
    total_potential,
)
from piperoute.scene import build_components, load_bundled_scene

from oracles import reference_distance, reference_total

SPACE = LayoutSpace((500.0,), (800.0,), 0.0, 1000.0)


def obstacle(center, size, depth=4, clearance=11.5, spacing=10.0):
    oct_ = build_octree(box_cloud(center, size, spacing), depth)
    return ExternalComponent("obstacle", oct_, Repulsive(-1.0, clearance), name="box")


# ---------------------------------------------------------------------------
# Distances and fields
# ---------------------------------------------------------------------------


def test_casing_distance_is_radial_offset():
    ec = ExternalComponent("casing", SPACE)
    assert ec_distance(np.array([100.0, 510.0, 1.0]), ec) == pytest.approx(10.0)
    assert ec_distance(np.array([100.0, 490.0, 1.0]), ec) == pytest.approx(-10.0)
    assert ec_distance(np.array([100.0, 790.0, 1.0]), ExternalComponent("nacelle", SPACE)) == pytest.approx(10.0)


def test_obstacle_distance_zero_inside():
    ec = obstacle((0.0, 650.0, 500.0), (100.0, 100.0, 100.0))
    assert ec_distance(cart_to_cyl(np.array([0.0, 650.0, 500.0])), ec) == 0.0


def test_obstacle_distance_matches_leaf_scan():
    ec = obstacle((0.0, 650.0, 500.0), (150.0, 120.0, 150.0), depth=5)
    rng = np.random.default_rng(1)
    p = np.stack([rng.uniform(-300, 300, 60), rng.uniform(400, 800, 60), rng.uniform(300, 700, 60)], 1)
    c = cart_to_cyl(p)
    got = ec_distance(c, ec)
    leaves = ec.geometry.leaf_bounds()
    for ci, g in zip(c[:10], got):
        assert g == pytest.approx(min(distance_point_to_sector(ci, Sector(*b)) for b in leaves), abs=1e-9)
    for ci, g in zip(c, got):
        assert g == pytest.approx(reference_distance(ci, ec), abs=1e-9)


def test_polyline_distance():
    ec = ExternalComponent("polyline", np.array([[0.0, 600.0, 0.0], [0.0, 600.0, 100.0]]))
    assert ec_distance(cart_to_cyl(np.array([10.0, 600.0, 50.0])), ec) == pytest.approx(10.0)
    assert ec_distance(cart_to_cyl(np.array([0.0, 600.0, 130.0])), ec) == pytest.approx(30.0)


def test_repulsive_inside_obstacle():
    ec = obstacle((0.0, 650.0, 500.0), (100.0, 100.0, 100.0))
    assert field_value(ec, cart_to_cyl(np.array([0.0, 650.0, 500.0]))) == -1.0


def test_attractive_band_endpoints_and_midpoint():
    ec = ExternalComponent("casing", SPACE, attractive=Attractive(0.2, 10.0, 100.0))
    at = lambda d: field_value(ec, np.array([500.0, 500.0 + d, 0.3]))
    assert at(10.0) == pytest.approx(0.2)
    assert at(100.0) == pytest.approx(0.0)
    assert at(55.0) == pytest.approx(0.1)
    assert at(120.0) == 0.0


def test_repulsive_band_wins_over_attraction():
    ec = ExternalComponent("casing", SPACE, Repulsive(-1.0, 11.5), Attractive(0.2, 11.5, 100.0))
    assert field_value(ec, np.array([0.0, 511.0, 0.0])) == -1.0
    assert field_value(ec, np.array([0.0, 511.5, 0.0])) == pytest.approx(0.2)


def test_field_bounds_and_monotone_attraction():
    ec = ExternalComponent("casing", SPACE, Repulsive(-1.0, 11.5), Attractive(0.2, 11.5, 100.0))
    rho = np.linspace(480.0, 800.0, 2000)
    c = np.stack([np.full_like(rho, 200.0), rho, np.zeros_like(rho)], 1)
    v = field_value(ec, c)
    assert v.min() >= -1.0 and v.max() <= 0.2
    band = (rho >= 511.5) & (rho <= 600.0)
    assert np.all(np.diff(v[band]) <= 0)


def test_overlapping_repulsions_add():
    a = obstacle((0.0, 650.0, 500.0), (60.0, 60.0, 60.0))
    b = obstacle((0.0, 650.0, 520.0), (60.0, 60.0, 60.0))
    assert total_potential(cart_to_cyl(np.array([0.0, 650.0, 510.0])), [a, b], SPACE) == -2.0


def test_far_from_everything_is_zero():
    a = obstacle((0.0, 650.0, 500.0), (60.0, 60.0, 60.0))
    assert total_potential(cart_to_cyl(np.array([0.0, -650.0, 100.0])), [a], SPACE) == 0.0


def test_outside_space_is_sentinel():
    a = obstacle((0.0, 650.0, 500.0), (60.0, 60.0, 60.0))
    assert total_potential(np.array([100.0, 400.0, 0.0]), [a], SPACE) == -1.0
    assert total_potential(np.array([100.0, 850.0, 0.0]), [a], SPACE) == -1.0


def test_superposition_is_linear():
    a = obstacle((0.0, 650.0, 500.0), (100.0, 80.0, 60.0))
    b = ExternalComponent("casing", SPACE, Repulsive(-1.0, 11.5), Attractive(0.2, 11.5, 100.0))
    rng = np.random.default_rng(2)
    c = np.stack([rng.uniform(0, 1000, 500), rng.uniform(500, 800, 500), rng.uniform(0, TWO_PI, 500)], 1)
    np.testing.assert_allclose(
        total_potential(c, [a, b], SPACE), total_potential(c, [a], SPACE) + total_potential(c, [b], SPACE), atol=1e-12
    )


def test_default_clearance():
    assert default_clearance(19.0) == 11.5


def test_gain_signs_are_validated():
    with pytest.raises(ValueError):
        Repulsive(0.5)
    with pytest.raises(ValueError):
        Attractive(0.2, 50.0, 50.0)


# ---------------------------------------------------------------------------
# Table
# ---------------------------------------------------------------------------


def test_index_example():
    t = PotentialTable(20.0, 0.0, 400.0, np.zeros((5, 5, 125)))
    p = cyl_to_cart(np.array([45.0, 410.0, 0.1]))
    iz, ir, it, ok = t.indices(p)
    assert (iz[0], ir[0], it[0], ok[0]) == (2, 0, 2, True)


def test_below_grid_is_sentinel():
    t = PotentialTable(20.0, 0.0, 400.0, np.ones((5, 5, 125)))
    assert query_table(t, cyl_to_cart(np.array([45.0, 399.0, 0.1]))) == -1.0
    assert query_table(t, cyl_to_cart(np.array([-1.0, 410.0, 0.1]))) == -1.0
    assert query_table(t, cyl_to_cart(np.array([45.0, 410.0, 0.1]))) == 1.0


def test_dims_and_empty_table():
    assert table_dims(SPACE, 19.0) == (53, 16, math.floor(TWO_PI * 500 / 19))
    t = build_table(SPACE, [], 19.0)
    c = t.cell_centers(*np.indices(t.dims).reshape(3, -1))
    inside = SPACE.contains(c).reshape(t.dims)
    assert np.all(t.values[inside] == 0.0)
    assert np.all(t.values[~inside] == -1.0)


def test_non_positive_cell_size():
    with pytest.raises(ValueError):
        build_table(SPACE, [], 0.0)
    with pytest.raises(ValueError):
        build_table(SPACE, [], -19.0)


@pytest.fixture(scope="module")
def scene_table():
    scene = load_bundled_scene()
    ecs = build_components(scene)
    return scene, ecs, build_table(scene.space, ecs, scene.cell_size)


def test_table_matches_direct_superposition(scene_table):
    scene, ecs, table = scene_table
    rng = np.random.default_rng(0)
    # half of the sample near obstacles, where the field is non-trivial
    near = np.argwhere(table.values < 0)
    pick = np.concatenate([near[rng.choice(len(near), 50, replace=False)], np.stack([rng.integers(0, n, 50) for n in table.dims], 1)])
    for iz, ir, it in pick:
        c = table.cell_centers(iz, ir, it)
        assert float(table.values[iz, ir, it]) == pytest.approx(reference_total(c, ecs, scene.space), abs=1e-6)


def test_query_at_cell_centre_returns_that_cell(scene_table):
    _, _, table = scene_table
    idx = np.indices(table.dims).reshape(3, -1)
    p = cyl_to_cart(table.cell_centers(*idx))
    np.testing.assert_array_equal(table.query(p), table.values.reshape(-1).astype(float))


def test_query_matches_brute_force_cell_search(scene_table):
    scene, _, table = scene_table
    rng = np.random.default_rng(9)
    c = np.stack([rng.uniform(0, 1000, 300), rng.uniform(500, 800, 300), rng.uniform(0, TWO_PI, 300)], 1)
    n_z, n_r, n_t = table.dims
    z_edges = table.z_min + table.s * np.arange(n_z + 1)
    r_edges = table.rho_min + table.s * np.arange(n_r + 1)
    t_edges = table.s / table.rho_min * np.arange(n_t + 1)
    for ci, got in zip(c, table.query(cyl_to_cart(c))):
        iz = next(i for i in range(n_z) if z_edges[i] <= ci[0] < z_edges[i + 1])
        ir = next(i for i in range(n_r) if r_edges[i] <= ci[1] < r_edges[i + 1])
        # the last angular cell absorbs the sliver left over by the floor in n_theta
        it = next((i for i in range(n_t) if t_edges[i] <= ci[2] < t_edges[i + 1]), None)
        it = it if it is not None else int(ci[2] * table.rho_min // table.s) % n_t
        assert got == float(table.values[iz, ir, it])


def test_negative_potential_means_violation(scene_table):
    scene, ecs, table = scene_table
    idx = np.argwhere(table.values < 0)
    idx = idx[np.random.default_rng(0).choice(len(idx), 400, replace=False)]
    c = table.cell_centers(*idx.T)
    outside = ~scene.space.contains(c)
    in_rep = np.zeros(len(c), dtype=bool)
    for ec in ecs:
        if ec.repulsive is None:
            continue
        d = ec_distance(c[~outside], ec)
        in_rep[~outside] |= d < ec.repulsive.clearance
    assert np.all(outside | in_rep)


def test_binary_round_trip_is_bit_identical(scene_table, tmp_path):
    _, _, table = scene_table
    f = tmp_path / "t.petb"
    table.save(f)
    again = PotentialTable.load(f)
    assert again.to_bytes() == f.read_bytes()
    assert again.dims == table.dims and again.s == table.s
    np.testing.assert_array_equal(again.values, table.values)


def test_binary_layout():
    t = PotentialTable(19.0, -5.0, 500.0, np.arange(24, dtype=float).reshape(2, 3, 4))
    data = t.to_bytes()
    assert data[:5] == b"PETB\x01"
    assert struct.unpack_from("<QQQ", data, 5) == (2, 3, 4)
    assert struct.unpack_from("<ddd", data, 29) == (19.0, -5.0, 500.0)
    assert list(struct.unpack_from("<24f", data, 53)) == list(range(24))
    assert len(data) == 53 + 4 * 24


def test_corrupt_binaries_are_rejected():
    good = PotentialTable(19.0, 0.0, 500.0, np.zeros((2, 2, 2))).to_bytes()
    with pytest.raises(ValueError, match="magic"):
        PotentialTable.from_bytes(b"XXXX" + good[4:])
    with pytest.raises(ValueError, match="version"):
        PotentialTable.from_bytes(good[:4] + b"\x02" + good[5:])
    with pytest.raises(ValueError, match="size"):
        PotentialTable.from_bytes(good[:-4])
