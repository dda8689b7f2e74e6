"""Hidden-Markov map matching and on-network shortest-path distance.

Candidates within a radius of each GPS point form the hidden states.
Emission favors candidates close to the observation (Gaussian in the
projection distance); transitions favor candidate pairs whose driving
distance agrees with the great-circle distance between the observations.
Viterbi picks the jointly most likely candidate sequence. Everything runs
in log domain with a probability floor so that disconnected candidate
pairs degrade gracefully instead of failing.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UnmatchedPointError
from .geodesy import haversine_m
from .roadnet import RoadNetwork
from .trajectory import MatchedPath, RawTrajectory

LOG_FLOOR = -30.0  # per-transition floor, keeps broken chains matchable


@dataclass(frozen=True)
class HmmConfig:
    sigma_z: float = 15.0          # GPS noise std, meters
    beta_t: float = 30.0           # transition tolerance, meters
    candidate_radius: float = 100.0
    max_candidates: int = 8

    def __post_init__(self):
        for name in ("sigma_z", "beta_t", "candidate_radius", "max_candidates"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")


def start_costs_from(net: RoadNetwork, sid: int, ratio: float) -> dict[int, float]:
    """Driving distance from (sid, ratio) to the start of every segment.

    Dijkstra over the segment graph: entering a successor of `u` costs the
    full length of `u`. The source contributes only its residual length.
    """
    seg = net.segments[sid]
    residual = (1.0 - ratio) * seg.length
    dist: dict[int, float] = {}
    heap: list[tuple[float, int]] = []
    for nxt in net.out_adj[sid]:
        heapq.heappush(heap, (residual, nxt))
    while heap:
        d, u = heapq.heappop(heap)
        if u in dist:
            continue
        dist[u] = d
        step = net.segments[u].length
        for nxt in net.out_adj[u]:
            if nxt not in dist:
                heapq.heappush(heap, (d + step, nxt))
    return dist


def shortest_path_distance(net: RoadNetwork, frm: tuple[int, float],
                           to: tuple[int, float],
                           start_costs: dict[int, float] | None = None) -> float:
    """Minimal driving distance between two on-network locations.

    Respects edge direction. Same-segment forward movement is the ratio
    difference times the length; any other pair routes through the
    successor chain. Returns +inf when the target is unreachable.
    `start_costs` can carry a precomputed map from `start_costs_from`.
    """
    (sid_a, r_a), (sid_b, r_b) = frm, to
    if sid_a not in net.segments or sid_b not in net.segments:
        raise ContractError(f"unknown segment in pair ({sid_a}, {sid_b})")
    best = math.inf
    if sid_a == sid_b and r_b >= r_a:
        best = (r_b - r_a) * net.segments[sid_a].length
        if best == 0.0:
            return 0.0
    if start_costs is None:
        start_costs = start_costs_from(net, sid_a, r_a)
    via = start_costs.get(sid_b)
    if via is not None:
        best = min(best, via + r_b * net.segments[sid_b].length)
    return best


def _candidates(net: RoadNetwork, point, cfg: HmmConfig):
    return net.nearest_candidates((point[0], point[1]), cfg.candidate_radius,
                                  cfg.max_candidates)


def hmm_match(traj: RawTrajectory, net: RoadNetwork,
              cfg: HmmConfig | None = None) -> MatchedPath:
    """Viterbi-optimal (segment, ratio) for every trajectory point."""
    cfg = cfg or HmmConfig()
    cands = []
    for i in range(len(traj)):
        rows = _candidates(net, traj.points[i], cfg)
        if not rows:
            raise UnmatchedPointError(i)
        cands.append(rows)

    inv_2sig2 = 1.0 / (2.0 * cfg.sigma_z ** 2)
    # log-likelihood of each candidate given the observation
    emis = [np.array([-(d * d) * inv_2sig2 for _, d, _ in rows]) for rows in cands]

    score = emis[0].copy()
    back: list[np.ndarray] = []
    for i in range(1, len(traj)):
        gc = float(haversine_m(traj.lat[i - 1], traj.lon[i - 1],
                               traj.lat[i], traj.lon[i]))
        prev_rows, rows = cands[i - 1], cands[i]
        trans = np.empty((len(prev_rows), len(rows)))
        for a, (sid_a, _, r_a) in enumerate(prev_rows):
            reach = start_costs_from(net, sid_a, r_a)
            for b, (sid_b, _, r_b) in enumerate(rows):
                route = shortest_path_distance(net, (sid_a, r_a), (sid_b, r_b),
                                               start_costs=reach)
                if math.isinf(route):
                    trans[a, b] = LOG_FLOOR
                else:
                    trans[a, b] = max(-abs(route - gc) / cfg.beta_t, LOG_FLOOR)
        total = score[:, None] + trans
        back.append(np.argmax(total, axis=0))
        score = total[back[-1], np.arange(len(rows))] + emis[i]

    idx = int(np.argmax(score))
    picks = [idx]
    for ptr in reversed(back):
        picks.append(int(ptr[picks[-1]]))
    picks.reverse()

    seg_ids = np.array([cands[i][k][0] for i, k in enumerate(picks)])
    ratios = np.array([cands[i][k][2] for i, k in enumerate(picks)])
    return MatchedPath(seg_ids, ratios, traj.t.copy())
