"""Evaluation metrics over (ground truth, predicted) matched trajectories.

Distance errors use driving distance on the road network (minimum of the
two directions); path overlap uses set semantics over segment ids, with
0/0 defined as 0. SR%k summarizes robustness on labeled sub-paths: the
fraction of trajectories whose sub-path F1 exceeds k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .mapmatch import shortest_path_distance
from .roadnet import RoadNetwork
from .trajectory import MatchedPath


def mae_rmse(truth: MatchedPath, pred: MatchedPath,
             net: RoadNetwork) -> tuple[float, float, int]:
    """Mean absolute / root-mean-square network distance per point.

    Returns (mae, rmse, n_unreachable); unreachable pairs are left out of
    the means.
    """
    if len(truth) != len(pred):
        raise ContractError(
            f"length mismatch: truth {len(truth)} vs pred {len(pred)}")
    dists = []
    unreachable = 0
    for i in range(len(truth)):
        a = (int(truth.seg_ids[i]), float(truth.ratios[i]))
        b = (int(pred.seg_ids[i]), float(pred.ratios[i]))
        d = min(shortest_path_distance(net, a, b),
                shortest_path_distance(net, b, a))
        if math.isinf(d):
            unreachable += 1
        else:
            dists.append(d)
    if not dists:
        return math.inf, math.inf, unreachable
    arr = np.asarray(dists)
    return float(arr.mean()), float(np.sqrt((arr * arr).mean())), unreachable


def path_prf(truth: MatchedPath, pred: MatchedPath) -> tuple[float, float, float]:
    """Recall, precision, F1 over the traversed segment-id sets."""
    e_true = set(int(s) for s in truth.seg_ids)
    e_pred = set(int(s) for s in pred.seg_ids)
    if not e_true or not e_pred:
        raise ContractError("paths must be non-empty")
    inter = len(e_true & e_pred)
    recall = inter / len(e_true)
    precision = inter / len(e_pred)
    f1 = 0.0 if recall + precision == 0 else \
        2.0 * recall * precision / (recall + precision)
    return recall, precision, f1


def accuracy(truth: MatchedPath, pred: MatchedPath) -> float:
    """Positionwise segment match rate."""
    if len(truth) != len(pred):
        raise ContractError(
            f"length mismatch: truth {len(truth)} vs pred {len(pred)}")
    return float(np.mean(truth.seg_ids == pred.seg_ids))


def subpath_f1(truth: MatchedPath, pred: MatchedPath,
               span: tuple[int, int]) -> float:
    """F1 restricted to the labeled contiguous index range [lo, hi)."""
    lo, hi = span
    if hi <= lo:
        raise ContractError(f"empty sub-path span {span}")
    sub_true = MatchedPath(truth.seg_ids[lo:hi], truth.ratios[lo:hi], truth.t[lo:hi])
    sub_pred = MatchedPath(pred.seg_ids[lo:hi], pred.ratios[lo:hi], pred.t[lo:hi])
    return path_prf(sub_true, sub_pred)[2]


def sr_at_k(pairs: list[tuple[MatchedPath, MatchedPath, tuple[int, int] | None]],
            k: float) -> tuple[float, int]:
    """Fraction of labeled pairs whose sub-path F1 exceeds k.

    Pairs without a labeled span are excluded; returns (fraction,
    n_excluded). With no labeled pairs at all the fraction is 0.
    """
    scores = []
    excluded = 0
    for truth, pred, span in pairs:
        if span is None or span[1] <= span[0]:
            excluded += 1
            continue
        scores.append(subpath_f1(truth, pred, span))
    if not scores:
        return 0.0, excluded
    return float(np.mean([s > k for s in scores])), excluded


def label_subpath(truth: MatchedPath, labeled_ids: set[int]) -> tuple[int, int] | None:
    """Longest contiguous run of points on labeled segments, or None."""
    best: tuple[int, int] | None = None
    run_start = None
    for i, sid in enumerate(list(truth.seg_ids) + [None]):
        on = sid is not None and int(sid) in labeled_ids
        if on and run_start is None:
            run_start = i
        elif not on and run_start is not None:
            if best is None or i - run_start > best[1] - best[0]:
                best = (run_start, i)
            run_start = None
    return best


@dataclass
class EvalReport:
    recall: float
    precision: float
    f1: float
    accuracy: float
    mae: float
    rmse: float
    sr_at_k: dict[float, float]
    n_trajectories: int
    n_unreachable_pairs: int
    n_unlabeled: int = 0
    per_trajectory: list[dict] = field(default_factory=list)

    def to_kv_lines(self) -> list[str]:
        lines = [
            f"n_trajectories={self.n_trajectories}",
            f"recall={self.recall:.6f}",
            f"precision={self.precision:.6f}",
            f"f1={self.f1:.6f}",
            f"accuracy={self.accuracy:.6f}",
            f"mae_m={self.mae:.3f}",
            f"rmse_m={self.rmse:.3f}",
            f"n_unreachable_pairs={self.n_unreachable_pairs}",
            f"n_unlabeled={self.n_unlabeled}",
        ]
        for k in sorted(self.sr_at_k):
            lines.append(f"sr_at_{k:g}={self.sr_at_k[k]:.6f}")
        return lines


def evaluate(pairs: list[tuple[int, MatchedPath, MatchedPath]], net: RoadNetwork,
             labeled_ids: set[int] | None = None,
             ks: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)) -> EvalReport:
    """Aggregate every metric over (trajectory id, truth, pred) triples."""
    rows = []
    unreachable = 0
    labeled_pairs = []
    for tid, truth, pred in pairs:
        r, p, f1 = path_prf(truth, pred)
        acc = accuracy(truth, pred)
        mae, rmse, bad = mae_rmse(truth, pred, net)
        unreachable += bad
        span = label_subpath(truth, labeled_ids) if labeled_ids else None
        labeled_pairs.append((truth, pred, span))
        rows.append({"traj_id": tid, "recall": r, "precision": p, "f1": f1,
                     "accuracy": acc, "mae_m": mae, "rmse_m": rmse,
                     "subpath_f1": subpath_f1(truth, pred, span) if span else float("nan")})
    if not rows:
        raise ContractError("no trajectory pairs to evaluate")
    sr = {}
    n_unlabeled = 0
    if labeled_ids:
        for k in ks:
            sr[k], n_unlabeled = sr_at_k(labeled_pairs, k)
    mean = lambda key: float(np.mean([r[key] for r in rows]))
    finite_mae = [r["mae_m"] for r in rows if math.isfinite(r["mae_m"])]
    finite_rmse = [r["rmse_m"] for r in rows if math.isfinite(r["rmse_m"])]
    return EvalReport(
        recall=mean("recall"), precision=mean("precision"), f1=mean("f1"),
        accuracy=mean("accuracy"),
        mae=float(np.mean(finite_mae)) if finite_mae else math.inf,
        rmse=float(np.mean(finite_rmse)) if finite_rmse else math.inf,
        sr_at_k=sr, n_trajectories=len(rows),
        n_unreachable_pairs=unreachable, n_unlabeled=n_unlabeled,
        per_trajectory=rows)
