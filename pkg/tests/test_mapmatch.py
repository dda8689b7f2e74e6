"""Map-matching tests: Viterbi against exhaustive enumeration, shortest
paths against an independently built junction-graph Dijkstra."""

import itertools
import math

import numpy as np
import pytest
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra as scipy_dijkstra

from trajrec.errors import ContractError, UnmatchedPointError
from trajrec.geodesy import haversine_m
from trajrec.mapmatch import (LOG_FLOOR, HmmConfig, hmm_match,
                              shortest_path_distance, start_costs_from)
from trajrec.roadnet import point_to_segment_distance
from trajrec.synth import SynthConfig, gen_network, gen_trajectories
from trajrec.trajectory import RawTrajectory, to_gps


@pytest.fixture(scope="module")
def net():
    return gen_network(SynthConfig(nx=5, ny=5, block_len_m=200.0, seed=21))[0]


def line_graph_dijkstra_oracle(net):
    """Independent oracle: scipy Dijkstra over the expanded segment graph.

    Nodes are segments; a connectivity edge (u, v) becomes an arc of
    weight length(v), the cost of fully traversing the segment just
    entered, so D[a, b] is the driving distance from the end of a to the
    end of b. Every route from a location on `sa` leaves through some
    successor v; enumerating successors also handles loops back onto the
    source segment.
    """
    row_of = net.row_of
    rows, cols, weights = [], [], []
    for a, b in sorted(net.edges):
        rows.append(row_of[a])
        cols.append(row_of[b])
        weights.append(net.segments[b].length)
    n = len(net)
    graph = csr_matrix((weights, (rows, cols)), shape=(n, n))
    dist = scipy_dijkstra(graph, directed=True)

    def oracle(frm, to):
        (sa, ra), (sb, rb) = frm, to
        la, lb = net.segments[sa].length, net.segments[sb].length
        best = math.inf
        if sa == sb and rb >= ra:
            best = (rb - ra) * la
        for v in net.out_adj[sa]:
            tail = net.segments[v].length + dist[row_of[v], row_of[sb]]
            cand = (1 - ra) * la + tail - (1 - rb) * lb
            best = min(best, cand)
        return best

    return oracle


class TestShortestPath:
    def test_same_location_zero(self, net):
        sid = net.ids[0]
        assert shortest_path_distance(net, (sid, 0.3), (sid, 0.3)) == 0.0

    def test_same_segment_forward(self, net):
        sid = net.ids[0]
        length = net.segments[sid].length
        d = shortest_path_distance(net, (sid, 0.2), (sid, 0.7))
        assert d == pytest.approx(0.5 * length, rel=1e-9)

    def test_matches_independent_junction_dijkstra(self, net):
        oracle = line_graph_dijkstra_oracle(net)
        rng = np.random.default_rng(17)
        ids = list(net.ids)
        for _ in range(500):
            sa, sb = rng.choice(ids, size=2)
            ra, rb = rng.uniform(0, 0.999, size=2)
            mine = shortest_path_distance(net, (int(sa), ra), (int(sb), rb))
            ref = oracle((int(sa), ra), (int(sb), rb))
            if math.isinf(ref):
                assert math.isinf(mine)
            else:
                assert mine == pytest.approx(ref, rel=1e-9, abs=1e-9)

    def test_triangle_inequality(self, net):
        rng = np.random.default_rng(5)
        ids = list(net.ids)
        for _ in range(150):
            pts = [(int(s), float(r)) for s, r in
                   zip(rng.choice(ids, size=3), rng.uniform(0, 0.999, size=3))]
            dab = shortest_path_distance(net, pts[0], pts[1])
            dbc = shortest_path_distance(net, pts[1], pts[2])
            dac = shortest_path_distance(net, pts[0], pts[2])
            assert dac <= dab + dbc + 1e-9


def brute_force_viterbi(traj, net, cfg):
    """Enumerate every candidate sequence and maximize joint log prob."""
    cands = [net.nearest_candidates((traj.lat[i], traj.lon[i]),
                                    cfg.candidate_radius, cfg.max_candidates)
             for i in range(len(traj))]
    assert all(cands)
    best_lp, best_seq = -math.inf, None
    for combo in itertools.product(*[range(len(c)) for c in cands]):
        lp = 0.0
        for i, k in enumerate(combo):
            sid, dist, ratio = cands[i][k]
            lp += -(dist ** 2) / (2 * cfg.sigma_z ** 2)
            if i > 0:
                sid0, _, r0 = cands[i - 1][combo[i - 1]]
                route = shortest_path_distance(net, (sid0, r0), (sid, ratio))
                gc = haversine_m(traj.lat[i - 1], traj.lon[i - 1],
                                 traj.lat[i], traj.lon[i])
                lp += LOG_FLOOR if math.isinf(route) else \
                    max(-abs(route - float(gc)) / cfg.beta_t, LOG_FLOOR)
        if lp > best_lp:
            best_lp, best_seq = lp, combo
    return [cands[i][k][0] for i, k in enumerate(best_seq)], best_lp


def joint_log_prob(traj, net, cfg, seg_ids, ratios):
    lp = 0.0
    for i, (sid, r) in enumerate(zip(seg_ids, ratios)):
        d, _ = point_to_segment_distance((traj.lat[i], traj.lon[i]),
                                         net.segments[int(sid)])
        lp += -(d ** 2) / (2 * cfg.sigma_z ** 2)
        if i > 0:
            route = shortest_path_distance(
                net, (int(seg_ids[i - 1]), float(ratios[i - 1])), (int(sid), float(r)))
            gc = haversine_m(traj.lat[i - 1], traj.lon[i - 1], traj.lat[i], traj.lon[i])
            lp += LOG_FLOOR if math.isinf(route) else \
                max(-abs(route - float(gc)) / cfg.beta_t, LOG_FLOOR)
    return lp


class TestHmmMatch:
    def test_single_point_single_candidate(self, net):
        sid = net.ids[4]
        lat, lon = net.segments[sid].position_at(0.4)
        cfg = HmmConfig(candidate_radius=15.0, max_candidates=1)
        # spoof a 2-point hovering trajectory (containers need >= 2 points)
        traj = RawTrajectory(np.array([[lat, lon, 0.0], [lat, lon + 1e-7, 10.0]]))
        out = hmm_match(traj, net, cfg)
        assert set(out.seg_ids) <= {sid, _reverse_twin(net, sid)}

    def test_noiseless_points_along_one_segment(self, net):
        sid = net.ids[10]
        seg = net.segments[sid]
        pts = [list(seg.position_at(r)) + [10.0 * i]
               for i, r in enumerate((0.15, 0.4, 0.65, 0.9))]
        out = hmm_match(RawTrajectory(np.array(pts)), net)
        assert np.all(out.seg_ids == sid)
        assert np.all(np.diff(out.ratios) > 0)

    def test_no_candidate_error_carries_index(self, net):
        pts = np.array([[31.0, 121.0, 0.0],   # on-network
                        [35.0, 125.0, 10.0]])  # hundreds of km away
        lat, lon = net.segments[net.ids[0]].position_at(0.5)
        pts[0] = [lat, lon, 0.0]
        with pytest.raises(UnmatchedPointError) as exc:
            hmm_match(RawTrajectory(pts), net)
        assert exc.value.point_index == 1

    def test_matches_brute_force_enumeration(self, net):
        cfg = HmmConfig(max_candidates=4)
        scfg = SynthConfig(nx=5, ny=5, block_len_m=200.0, n_points=5,
                           n_trajectories=12, gps_noise_sigma_m=20.0, seed=33,
                           speed_lo=4.0, speed_hi=8.0)
        for truth, raw in gen_trajectories(net, scfg):
            short = RawTrajectory(raw.points[:5])
            mine = hmm_match(short, net, cfg)
            ref_ids, ref_lp = brute_force_viterbi(short, net, cfg)
            my_lp = joint_log_prob(short, net, cfg, mine.seg_ids, mine.ratios)
            assert my_lp == pytest.approx(ref_lp, abs=1e-9)
            assert list(mine.seg_ids) == ref_ids

    def test_zero_noise_ratios_match_projection(self, net):
        scfg = SynthConfig(nx=5, ny=5, block_len_m=200.0, n_points=8,
                           n_trajectories=4, gps_noise_sigma_m=0.0, seed=8)
        for truth, raw in gen_trajectories(net, scfg):
            out = hmm_match(raw, net)
            assert np.array_equal(out.seg_ids, truth.seg_ids)
            assert np.max(np.abs(out.ratios - truth.ratios)) < 1e-6


def _reverse_twin(net, sid):
    seg = net.segments[sid]
    for other, o in net.segments.items():
        if other != sid and np.array_equal(o.polyline, seg.polyline[::-1]):
            return other
    return None
