"""Full-ranking Recall@N and NDCG@N."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def recall_at_n(ranked, relevant, n: int) -> float:
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    hits = sum(1 for i in list(ranked)[:n] if int(i) in relevant)
    return hits / len(relevant)


def _idcg(n: int) -> float:
    return float(np.sum(1.0 / np.log2(np.arange(2, n + 2))))


def ndcg_at_n(ranked, relevant, n: int) -> float:
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    dcg = sum(1.0 / np.log2(r + 2) for r, i in enumerate(list(ranked)[:n]) if int(i) in relevant)
    return float(dcg / _idcg(min(n, len(relevant))))


def rank_topn(scores: np.ndarray, masks, n: int) -> list[np.ndarray]:
    """Top-n item indices per row; masked items never appear, ties go to the lower index."""
    scores = np.array(scores, dtype=float, copy=True)
    out = []
    for row, mask in zip(scores, masks):
        mask = np.asarray(mask, dtype=np.int64)
        row[mask] = -np.inf
        order = np.argsort(-row, kind="stable")
        available = len(row) - len(np.unique(mask))
        out.append(order[: min(n, available)])
    return out


@dataclass
class MetricReport:
    recall: dict[int, float]
    ndcg: dict[int, float]
    num_users: int
    per_user: dict[int, dict[str, float]] = field(default_factory=dict)

    def to_json_lines(self) -> str:
        lines = [json.dumps({"cutoff": n, "recall": self.recall[n], "ndcg": self.ndcg[n],
                             "users": self.num_users}) for n in sorted(self.recall)]
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        rows = [f"{'N':>4}  {'Recall@N':>10}  {'NDCG@N':>10}"]
        for n in sorted(self.recall):
            rows.append(f"{n:>4}  {self.recall[n]:>10.5f}  {self.ndcg[n]:>10.5f}")
        rows.append(f"evaluated users: {self.num_users}")
        return "\n".join(rows)

    def summary(self) -> dict:
        out = {"users": self.num_users}
        for n in sorted(self.recall):
            out[f"recall@{n}"] = self.recall[n]
            out[f"ndcg@{n}"] = self.ndcg[n]
        return out


def evaluate_rankings(ranked_lists, ground_truth, cutoffs=(10, 20), users=None) -> MetricReport:
    """Average metrics over users with non-empty ground truth."""
    users = range(len(ranked_lists)) if users is None else users
    recall = {n: [] for n in cutoffs}
    ndcg = {n: [] for n in cutoffs}
    per_user = {}
    for u, ranked, truth in zip(users, ranked_lists, ground_truth):
        if len(truth) == 0:
            continue
        row = {}
        for n in cutoffs:
            r, g = recall_at_n(ranked, truth, n), ndcg_at_n(ranked, truth, n)
            recall[n].append(r)
            ndcg[n].append(g)
            row[f"recall@{n}"], row[f"ndcg@{n}"] = r, g
        per_user[int(u)] = row
    count = len(per_user)
    return MetricReport(
        recall={n: float(np.mean(v)) if v else 0.0 for n, v in recall.items()},
        ndcg={n: float(np.mean(v)) if v else 0.0 for n, v in ndcg.items()},
        num_users=count,
        per_user=per_user,
    )


def evaluate(state, ds, profiles, cutoffs=(10, 20), split: str = "test") -> MetricReport:
    from .engine import infer_topn

    truth = ds.test if split == "test" else ds.val
    users = np.array([u for u in range(ds.num_users) if len(truth[u])], dtype=np.int64)
    ranked = infer_topn(state, ds, profiles, max(cutoffs), split=split, users=users)
    return evaluate_rankings(ranked, [truth[u] for u in users], cutoffs, users)
