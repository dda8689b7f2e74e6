"""Geometry, grid, index, and file-format tests for the road network."""

import numpy as np
import pytest

from trajrec import geodesy
from trajrec.errors import FormatError, RangeError
from trajrec.roadnet import (GridSpec, RoadNetwork, RoadSegment, derive_grid,
                             grid_sequence, load_network,
                             point_to_segment_distance, save_network,
                             static_features)
from trajrec.synth import SynthConfig, gen_network

LAT0, LON0 = 31.0, 121.0
M_NORTH, M_EAST = geodesy.meters_per_degree(LAT0)


def ll(x_m, y_m):
    """Local meters -> (lat, lon) around the test origin."""
    return LAT0 + y_m / M_NORTH, LON0 + x_m / M_EAST


def seg_from_xy(sid, level, xy_points):
    return RoadSegment(sid, level, np.array([ll(x, y) for x, y in xy_points]))


@pytest.fixture(scope="module")
def lattice():
    net, _ = gen_network(SynthConfig(nx=6, ny=6, seed=5))
    return net


class TestSegment:
    def test_polyline_length_consistency(self):
        seg = seg_from_xy(0, 3, [(0, 0), (300, 0), (300, 400)])
        assert seg.length == pytest.approx(700.0, rel=1e-3)

    def test_too_short_polyline_rejected(self):
        with pytest.raises(FormatError):
            RoadSegment(0, 3, np.array([[LAT0, LON0]]))

    def test_level_out_of_range_rejected(self):
        with pytest.raises(FormatError):
            seg_from_xy(0, 8, [(0, 0), (10, 0)])

    def test_position_at_interpolates_arclength(self):
        seg = seg_from_xy(0, 3, [(0, 0), (100, 0), (100, 100)])
        lat, lon = seg.position_at(0.75)
        x = (lon - LON0) * M_EAST
        y = (lat - LAT0) * M_NORTH
        assert x == pytest.approx(100, abs=0.01)
        assert y == pytest.approx(50, abs=0.01)


class TestPointToSegment:
    def test_point_on_midpoint(self):
        seg = seg_from_xy(0, 3, [(0, 0), (200, 0)])
        d, r = point_to_segment_distance(ll(100, 0), seg)
        assert d == pytest.approx(0.0, abs=1e-6)
        assert r == pytest.approx(0.5, abs=1e-9)

    def test_lateral_offset_symmetric(self):
        seg = seg_from_xy(0, 3, [(0, 0), (200, 0)])
        d, r = point_to_segment_distance(ll(100, 37.0), seg)
        assert d == pytest.approx(37.0, abs=0.01)
        assert r == pytest.approx(0.5, abs=1e-6)

    def test_against_dense_sampling_oracle(self):
        rng = np.random.default_rng(11)
        seg = seg_from_xy(0, 3, [(0, 0), (80, 40), (160, 20), (240, 90)])
        # oracle: walk the polyline in 0.1 m steps, take the closest sample
        steps = np.linspace(0.0, 1.0, int(seg.length / 0.1))
        samples = np.array([seg.position_at(min(t, 1 - 1e-12)) for t in steps])
        for _ in range(50):
            p = ll(rng.uniform(-50, 300), rng.uniform(-60, 150))
            d, _ = point_to_segment_distance(p, seg)
            oracle = geodesy.haversine_m(p[0], p[1], samples[:, 0], samples[:, 1]).min()
            assert abs(d - oracle) < 0.2

    def test_ratio_strictly_below_one(self):
        seg = seg_from_xy(0, 3, [(0, 0), (100, 0)])
        _, r = point_to_segment_distance(ll(250, 0), seg)
        assert 0.0 <= r < 1.0


class TestGridSequence:
    def test_single_cell(self):
        spec = GridSpec(LAT0, LON0, 50.0, 4, 4)
        seg = seg_from_xy(0, 3, [(10, 10), (30, 30)])
        assert grid_sequence(seg, spec) == [(0, 0)]

    def test_axis_aligned_120m_in_50m_cells(self):
        spec = GridSpec(LAT0, LON0, 50.0, 4, 2)
        seg = seg_from_xy(0, 3, [(0, 10), (120, 10)])
        assert grid_sequence(seg, spec) == [(0, 0), (1, 0), (2, 0)]

    def test_reversal_reverses_sequence(self):
        spec = GridSpec(LAT0, LON0, 50.0, 8, 8)
        pts = [(5, 5), (120, 60), (260, 140), (300, 310)]
        fwd = seg_from_xy(0, 3, pts)
        rev = seg_from_xy(1, 3, pts[::-1])
        assert grid_sequence(rev, spec) == grid_sequence(fwd, spec)[::-1]

    def test_consecutive_cells_distinct_and_cover(self):
        spec = GridSpec(LAT0, LON0, 50.0, 10, 10)
        seg = seg_from_xy(0, 3, [(3, 3), (401, 207), (150, 330)])
        cells = grid_sequence(seg, spec)
        assert all(a != b for a, b in zip(cells, cells[1:]))
        # every polyline sample lands in one of the listed cells
        for t in np.linspace(0, 1, 500):
            lat, lon = seg.position_at(min(t, 1 - 1e-12))
            assert spec.cell_of(lat, lon) in cells

    def test_outside_extent_raises(self):
        spec = GridSpec(LAT0, LON0, 50.0, 2, 2)
        seg = seg_from_xy(0, 3, [(10, 10), (150, 10)])
        with pytest.raises(RangeError):
            grid_sequence(seg, spec)


class TestRadiusQuery:
    def test_tiny_radius_empty(self, lattice):
        p = ll(125.0, 125.0)  # block center, all streets 125 m away
        assert lattice.radius_query(p, 10.0) == set()

    def test_huge_radius_returns_everything(self, lattice):
        assert lattice.radius_query(ll(600, 600), 1e7) == set(lattice.ids)

    def test_matches_brute_force_scan(self, lattice):
        rng = np.random.default_rng(2)
        for _ in range(200):
            p = ll(rng.uniform(-200, 1500), rng.uniform(-200, 1500))
            delta = rng.uniform(20, 400)
            fast = lattice.radius_query(p, delta)
            brute = {sid for sid, seg in lattice.segments.items()
                     if point_to_segment_distance(p, seg)[0] <= delta}
            assert fast == brute


class TestStaticFeatures:
    def test_isolated_segment_row(self):
        a = seg_from_xy(0, 3, [(0, 0), (100, 0)])
        b = seg_from_xy(1, 5, [(0, 50), (200, 50)])
        net = RoadNetwork(segments={0: a, 1: b}, edges=set(),
                          grid=derive_grid({0: a, 1: b}, 50.0, 100.0))
        feats = static_features(net)
        assert feats.shape == (2, 11)
        expected = np.zeros(11)
        expected[3] = 1.0          # one-hot level
        expected[8] = 0.5          # length / max length
        assert np.allclose(feats[0], expected)
        assert feats[1][5] == 1.0 and feats[1][8] == 1.0

    def test_degree_columns(self):
        segs = {i: seg_from_xy(i, 3, [(0, 100 * i), (100, 100 * i)]) for i in range(3)}
        net = RoadNetwork(segments=segs, edges={(0, 2), (1, 2), (2, 0)},
                          grid=derive_grid(segs, 50.0, 100.0))
        feats = static_features(net)
        assert feats[2][9] == 2.0 and feats[2][10] == 1.0

    def test_lattice_interior_degrees(self, lattice):
        feats = static_features(lattice)
        interior = [(len(lattice.in_adj[s]), len(lattice.out_adj[s]))
                    for s in lattice.ids]
        assert (3, 3) in interior
        rows = static_features(lattice)[:, 9:11]
        assert rows.max() <= 3  # no U-turn continuations on a plain lattice


class TestNetworkIO:
    def test_round_trip_is_isomorphic(self, lattice, tmp_path):
        sp, ep = tmp_path / "segs.txt", tmp_path / "edges.txt"
        save_network(lattice, sp, ep)
        again = load_network(sp, ep)
        assert set(again.ids) == set(lattice.ids)
        assert again.edges == lattice.edges
        for sid in lattice.ids:
            assert np.allclose(again.segments[sid].polyline,
                               lattice.segments[sid].polyline)
            assert again.segments[sid].level == lattice.segments[sid].level

    def test_two_segment_file(self, tmp_path):
        sp, ep = tmp_path / "s.txt", tmp_path / "e.txt"
        sp.write_text("# comment\n"
                      f"1,3,{LAT0!r} {LON0!r};{LAT0!r} {LON0 + 0.001!r}\n"
                      f"2,4,{LAT0!r} {LON0 + 0.001!r};{LAT0!r} {LON0 + 0.002!r}\n")
        ep.write_text("1 2\n")
        net = load_network(sp, ep)
        assert len(net) == 2 and len(net.edges) == 1

    def test_dangling_edge_names_id(self, tmp_path):
        sp, ep = tmp_path / "s.txt", tmp_path / "e.txt"
        sp.write_text(f"1,3,{LAT0!r} {LON0!r};{LAT0!r} {LON0 + 0.001!r}\n")
        ep.write_text("1 99\n")
        with pytest.raises(FormatError) as exc:
            load_network(sp, ep)
        assert "99" in str(exc.value)

    def test_empty_segment_set_rejected(self, tmp_path):
        sp, ep = tmp_path / "s.txt", tmp_path / "e.txt"
        sp.write_text("# nothing\n")
        ep.write_text("")
        with pytest.raises(FormatError):
            load_network(sp, ep)

    def test_lattice_size(self, lattice):
        assert len(lattice) == 120  # 2 * (2 * 6 * 5) directed segments
