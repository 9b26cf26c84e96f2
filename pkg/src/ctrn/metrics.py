"""Ranking metrics over per-query candidate groups, and TREC run output."""

from __future__ import annotations

from collections.abc import Iterable, Sequence
from dataclasses import dataclass

from .errors import LabelError, MetricError


@dataclass
class RankingGroup:
    query_id: str
    scores: Sequence[float]
    labels: Sequence[int]
    doc_ids: Sequence[str] | None = None

    def __post_init__(self):
        if len(self.scores) == 0:
            raise MetricError(f"group {self.query_id} has no candidates")
        if len(self.scores) != len(self.labels):
            raise MetricError(f"group {self.query_id}: {len(self.scores)} scores, {len(self.labels)} labels")
        if any(y not in (0, 1) for y in self.labels):
            raise LabelError(f"group {self.query_id} has non-binary labels")

    def ranked_labels(self) -> list[int]:
        """Labels by descending score; ties keep the original candidate order."""
        order = sorted(range(len(self.scores)), key=lambda i: -self.scores[i])
        return [self.labels[i] for i in order]

    def ranking(self) -> list[int]:
        return sorted(range(len(self.scores)), key=lambda i: -self.scores[i])


def _groups(groups: Iterable[RankingGroup]) -> list[RankingGroup]:
    groups = list(groups)
    if not groups:
        raise MetricError("no ranking groups")
    return groups


def precision_at_1(groups: Iterable[RankingGroup]) -> float:
    groups = _groups(groups)
    return sum(g.ranked_labels()[0] for g in groups) / len(groups)


def reciprocal_rank(ranked: Sequence[int]) -> float:
    for rank, y in enumerate(ranked, start=1):
        if y:
            return 1.0 / rank
    return 0.0


def average_precision(ranked: Sequence[int]) -> float:
    hits, total = 0, 0.0
    for rank, y in enumerate(ranked, start=1):
        if y:
            hits += 1
            total += hits / rank
    return total / hits if hits else 0.0


def mean_reciprocal_rank(groups: Iterable[RankingGroup]) -> float:
    groups = _groups(groups)
    return sum(reciprocal_rank(g.ranked_labels()) for g in groups) / len(groups)


def mean_average_precision(groups: Iterable[RankingGroup]) -> float:
    groups = _groups(groups)
    return sum(average_precision(g.ranked_labels()) for g in groups) / len(groups)


METRICS = {
    "p@1": precision_at_1,
    "mrr": mean_reciprocal_rank,
    "map": mean_average_precision,
}


def evaluate(groups: Iterable[RankingGroup]) -> dict[str, float]:
    groups = _groups(groups)
    return {name: fn(groups) for name, fn in METRICS.items()}


def build_groups(query_ids: Sequence[str], scores: Sequence[float], labels: Sequence[int],
                 doc_ids: Sequence[str] | None = None) -> list[RankingGroup]:
    """Group flat candidate lists by query id, keeping first-seen query order."""
    buckets: dict[str, tuple[list, list, list]] = {}
    for i, qid in enumerate(query_ids):
        s, y, d = buckets.setdefault(qid, ([], [], []))
        s.append(float(scores[i]))
        y.append(int(labels[i]))
        d.append(doc_ids[i] if doc_ids is not None else f"{qid}_{len(d)}")
    return [RankingGroup(q, s, y, d) for q, (s, y, d) in buckets.items()]


def format_trec_run(groups: Iterable[RankingGroup], run_tag: str = "ctrn") -> list[str]:
    lines = []
    for g in groups:
        doc_ids = g.doc_ids or [f"{g.query_id}_{i}" for i in range(len(g.scores))]
        for rank, i in enumerate(g.ranking(), start=1):
            lines.append(f"{g.query_id} Q0 {doc_ids[i]} {rank} {g.scores[i]:.6f} {run_tag}")
    return lines


def write_trec_run(path, groups: Iterable[RankingGroup], run_tag: str = "ctrn") -> int:
    lines = format_trec_run(groups, run_tag)
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(line + "\n" for line in lines)
    return len(lines)
