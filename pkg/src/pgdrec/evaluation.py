"""Full-candidate top-K evaluation (HR@K, NDCG@K) for warm and cold-start tasks.

HR@K here is per-user recall: hits in the top K divided by the number of
relevant items, averaged over users. Ties in score are broken by ascending
item index.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import SplitBundle
from .model import (
    ForwardOutputs,
    ModelGraphs,
    PgdParams,
    TaskKind,
    compose_many,
    forward,
    item_embedding,
    user_embedding,
)

DEFAULT_KS = (10, 20, 50)

# Published full-candidate results on Yelp, new-item task, for orientation only.
REFERENCE_POINTS = {("yelp", "ni"): {"hr@20": 0.04712, "ndcg@20": 0.02306}}


def hr_at_k(ranked: Sequence[int], relevant: Iterable[int], k: int) -> float | None:
    """Fraction of ``relevant`` found in the first ``k`` of ``ranked``; None if nothing is relevant."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = set(relevant)
    if not rel:
        return None
    return len(rel.intersection(ranked[:k])) / len(rel)


def _discounts(n: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, n + 2))


def ndcg_at_k(ranked: Sequence[int], relevant: Iterable[int], k: int) -> float | None:
    if k < 1:
        raise ValueError("k must be >= 1")
    rel = set(relevant)
    if not rel:
        return None
    top = list(ranked[:k])
    disc = _discounts(k)
    dcg = sum(disc[p] for p, item in enumerate(top) if item in rel)
    idcg = disc[: min(len(rel), k)].sum()
    return float(dcg / idcg)


def rank_candidates(task: TaskKind, outputs: ForwardOutputs, user_ref, candidates) -> np.ndarray:
    """Candidates ordered by descending score, ties by ascending item index.

    For item-cold tasks each candidate is ``(item_index, attribute_set)``;
    otherwise candidates are warm item indices.
    """
    task = TaskKind(task)
    if len(candidates) == 0:
        raise ValueError("empty candidate set")
    u = user_embedding(task, outputs, user_ref)
    if task in (TaskKind.NEW_ITEM, TaskKind.NEW_BOTH):
        ids = np.array([c[0] for c in candidates], dtype=np.int64)
        items = np.stack([item_embedding(task, outputs, c[1]) for c in candidates])
    else:
        ids = np.asarray(candidates, dtype=np.int64)
        items = outputs.teacher_item[ids]
    s = items @ u
    return ids[np.lexsort((ids, -s))]


@dataclass(frozen=True)
class EvalSpec:
    task: TaskKind
    ks: tuple[int, ...] = DEFAULT_KS
    per_interaction: bool = False

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind(self.task))
        object.__setattr__(self, "ks", tuple(sorted(set(int(k) for k in self.ks))))
        if not self.ks or self.ks[0] < 1:
            raise ValueError("K values must be positive")


@dataclass
class EvalReport:
    task: TaskKind
    ks: tuple[int, ...]
    hr: dict[int, float]
    ndcg: dict[int, float]
    num_users: int
    skipped: int = 0
    checkpoint_id: str = ""
    wall_clock: float = field(default=0.0, compare=False)

    def lines(self) -> list[str]:
        return [
            f"task={self.task.value} K={k} hr={self.hr[k]:.8f} ndcg={self.ndcg[k]:.8f} users={self.num_users}"
            for k in self.ks
        ]

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "task": self.task.value,
            "ks": list(self.ks),
            "hr": {str(k): self.hr[k] for k in self.ks},
            "ndcg": {str(k): self.ndcg[k] for k in self.ks},
            "num_users": self.num_users,
            "skipped": self.skipped,
            "checkpoint_id": self.checkpoint_id,
        }
        if include_timing:
            d["wall_clock"] = self.wall_clock
        return d

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)


def _task_interactions(split: SplitBundle, task: TaskKind) -> np.ndarray:
    return {
        TaskKind.WARM: split.val_interactions,
        TaskKind.NEW_USER: split.test_new_user,
        TaskKind.NEW_ITEM: split.test_new_item,
        TaskKind.NEW_BOTH: split.test_both,
    }[task]


def _candidates(split: SplitBundle, task: TaskKind) -> np.ndarray:
    if task in (TaskKind.NEW_ITEM, TaskKind.NEW_BOTH):
        return np.asarray(split.new_item_ids, dtype=np.int64)
    return split.old_item_ids


def _eval_groups(ui: np.ndarray, per_interaction: bool) -> list[tuple[int, np.ndarray]]:
    if per_interaction:
        return [(int(u), np.array([i])) for u, i in ui]
    order = np.lexsort((ui[:, 1], ui[:, 0]))
    ui = ui[order]
    users, starts = np.unique(ui[:, 0], return_index=True)
    return [(int(u), items) for u, items in zip(users, np.split(ui[:, 1], starts[1:]))]


def evaluate(
    split: SplitBundle,
    params: PgdParams,
    spec: EvalSpec,
    graphs: ModelGraphs | None = None,
    outputs: ForwardOutputs | None = None,
    checkpoint_id: str = "",
    chunk_size: int = 1024,
) -> EvalReport:
    """Score every relevant user against all candidate items of the task."""
    t0 = time.perf_counter()
    task = spec.task
    if params.dims[:4] != (split.train.num_users, split.train.num_items,
                           split.train.num_user_attrs, split.train.num_item_attrs):
        raise ValueError("checkpoint dimensions do not match the split")
    if outputs is None:
        outputs = forward(params, graphs or ModelGraphs.build(split.train))

    cand = _candidates(split, task)
    if len(cand) == 0:
        raise ValueError(f"no candidate items for task {task.value}")
    groups = _eval_groups(_task_interactions(split, task), spec.per_interaction)

    skipped = 0
    if task in (TaskKind.NEW_USER, TaskKind.NEW_BOTH):
        keep = [g for g in groups if len(split.new_user_attrs.get(g[0], ())) > 0]
        skipped += len(groups) - len(keep)
        groups = keep
        user_vecs = compose_many(outputs.user_student_attr, [split.new_user_attrs[u] for u, _ in groups]) if groups else np.zeros((0, params.dims[4]))
    else:
        user_vecs = outputs.teacher_user[[u for u, _ in groups]]

    if task in (TaskKind.NEW_ITEM, TaskKind.NEW_BOTH):
        has = np.array([len(split.new_item_attrs.get(int(j), ())) > 0 for j in cand])
        skipped += int((~has).sum())
        cand = cand[has]
        item_vecs = compose_many(outputs.item_student_attr, [split.new_item_attrs[int(j)] for j in cand],
                                 offset=outputs.num_user_attrs)
    else:
        item_vecs = outputs.teacher_item[cand]

    pos_of = {int(j): p for p, j in enumerate(cand)}
    kmax = max(spec.ks)
    disc = _discounts(kmax)
    hr_sum = {k: 0.0 for k in spec.ks}
    ndcg_sum = {k: 0.0 for k in spec.ks}
    n_users = 0
    train_items = None
    if task is TaskKind.WARM:
        tr = split.train.interactions
        train_items = {}
        for u, i in tr:
            train_items.setdefault(int(u), []).append(int(i))

    for start in range(0, len(groups), chunk_size):
        chunk = groups[start:start + chunk_size]
        scores = user_vecs[start:start + len(chunk)] @ item_vecs.T
        if train_items is not None:
            for r, (u, _) in enumerate(chunk):
                seen = [pos_of[i] for i in train_items.get(u, ()) if i in pos_of]
                scores[r, seen] = -np.inf
        # stable sort on -score keeps ascending item order among ties
        order = np.argsort(-scores, axis=1, kind="stable")[:, :kmax]
        for r, (u, items) in enumerate(chunk):
            rel = np.zeros(len(cand), dtype=bool)
            rel[[pos_of[int(i)] for i in items if int(i) in pos_of]] = True
            n_rel = int(rel.sum())
            if n_rel == 0:
                continue
            hits = rel[order[r]]
            n_users += 1
            for k in spec.ks:
                h = hits[:k]
                hr_sum[k] += h.sum() / n_rel
                ndcg_sum[k] += (disc[: len(h)] * h).sum() / disc[: min(n_rel, k)].sum()

    denom = max(n_users, 1)
    return EvalReport(
        task=task,
        ks=spec.ks,
        hr={k: float(hr_sum[k] / denom) for k in spec.ks},
        ndcg={k: float(ndcg_sum[k] / denom) for k in spec.ks},
        num_users=n_users,
        skipped=skipped,
        checkpoint_id=checkpoint_id,
        wall_clock=time.perf_counter() - t0,
    )


def random_ranking_expectation(split: SplitBundle, task: TaskKind, k: int,
                               per_interaction: bool = False) -> tuple[float, float]:
    """Expected (HR@k, NDCG@k) when candidates are ranked uniformly at random.

    Under a uniform permutation each position holds a relevant item with
    probability ``R / C``, so ``E[DCG] = (R / C) * sum of discounts``.
    """
    task = TaskKind(task)
    cand = set(_candidates(split, task).tolist())
    groups = _eval_groups(_task_interactions(split, task), per_interaction)
    disc = _discounts(k)
    hr, ndcg, n = 0.0, 0.0, 0
    for u, items in groups:
        C = len(cand)
        if task is TaskKind.WARM:
            C -= int(np.isin(split.train.interactions[split.train.interactions[:, 0] == u, 1],
                             list(cand)).sum())
        R = sum(int(i) in cand for i in items)
        if R == 0:
            continue
        kk = min(k, C)
        hr += kk / C
        ndcg += (R / C) * disc[:kk].sum() / disc[: min(R, k)].sum()
        n += 1
    return hr / max(n, 1), ndcg / max(n, 1)
