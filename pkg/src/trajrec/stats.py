"""Lightweight instrumentation counters.

`attention_scores` counts every attention-score evaluation (temporal
attention entries and graph-attention edge scores alike), which is how the
per-layer cost claims are verified empirically.
"""

from __future__ import annotations

_counters = {"attention_scores": 0}


def add_attention_scores(n: int) -> None:
    _counters["attention_scores"] += int(n)


def attention_scores() -> int:
    return _counters["attention_scores"]


def reset() -> None:
    for key in _counters:
        _counters[key] = 0
