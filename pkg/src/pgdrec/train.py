"""Joint optimization of the BPR ranking loss and the distillation loss.

Gradients are derived by hand: losses are differentiated at the propagated
(layer-L) embeddings, then pulled back to the free tables through the exact
adjoint of each propagation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Callable

import numpy as np

from .data import SplitBundle, Dataset
from .evaluation import EvalSpec, evaluate
from .graph import ITEM_STUDENT, USER_STUDENT
from .model import (
    TABLES,
    ForwardOutputs,
    ModelGraphs,
    PgdParams,
    TaskKind,
    forward,
    init_params_for,
)
from .propagate import backpropagate

log = logging.getLogger(__name__)

# Distillation weights (lambda, mu, eta) tuned per dataset.
PRESETS: dict[str, dict[str, float]] = {
    "yelp": {"lam": 100.0, "mu": 1.0, "eta": 0.01},
    "amazon": {"mu": 10.0},
    "xing": {"lam": 1.0, "mu": 100.0, "eta": 0.001},
}


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 2048
    epochs: int = 100
    gamma: float = 1e-4
    lam: float = 1.0
    mu: float = 1.0
    eta: float = 0.01
    layers: int = 2
    user_student_layers: int | None = None
    item_student_layers: int | None = None
    dim: int = 64
    seed: int = 0
    negatives_per_positive: int = 1
    eval_every: int = 1
    # (users, items, pairs) per step; 0 users/items means "those in the BPR batch"
    distill_sample_sizes: tuple[int, int, int] = (0, 0, 2048)
    detach_teacher: bool = True
    binarize_student_graph: bool = False

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.eval_every < 1 or self.negatives_per_positive < 1:
            raise ValueError("epochs >= 0, eval_every >= 1 and negatives_per_positive >= 1 required")
        if min(self.gamma, self.lam, self.mu, self.eta) < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        self.distill_sample_sizes = tuple(int(x) for x in self.distill_sample_sizes)

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "TrainConfig":
        if name not in PRESETS:
            raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


# ---------------------------------------------------------------------------
# sampling


def sample_triples(train: Dataset, rng: np.random.Generator, negatives_per_positive: int = 1) -> np.ndarray:
    """One shuffled pass over the positives as ``(user, pos, neg)`` rows.

    Negatives are drawn uniformly and rejected while ``(user, neg)`` is a
    training interaction. Users who interacted with every item are skipped.
    """
    ui = train.interactions
    N = train.num_items
    if len(ui) == 0:
        raise ValueError("no training interactions")
    positives = set((ui[:, 0] * N + ui[:, 1]).tolist())
    counts = np.bincount(ui[:, 0], minlength=train.num_users)
    full = counts >= N
    if full.any():
        log.warning("skipping %d user(s) who interacted with every item", int(full.sum()))
    order = rng.permutation(len(ui))
    rows = []
    for idx in order:
        u, i = int(ui[idx, 0]), int(ui[idx, 1])
        if full[u]:
            continue
        for _ in range(negatives_per_positive):
            j = int(rng.integers(N))
            while u * N + j in positives:
                j = int(rng.integers(N))
            rows.append((u, i, j))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


@dataclass
class DistillSample:
    users: np.ndarray
    items: np.ndarray
    pair_users: np.ndarray
    pair_items: np.ndarray


def sample_distillation(
    batch: np.ndarray,
    warm_users: np.ndarray,
    warm_items: np.ndarray,
    sizes: tuple[int, int, int],
    rng: np.random.Generator,
) -> DistillSample:
    n_users, n_items, n_pairs = sizes
    users = np.unique(batch[:, 0]) if n_users == 0 else rng.choice(warm_users, n_users)
    items = np.unique(batch[:, 1:]) if n_items == 0 else rng.choice(warm_items, n_items)
    return DistillSample(
        users=users,
        items=items,
        pair_users=rng.choice(warm_users, n_pairs),
        pair_items=rng.choice(warm_items, n_pairs),
    )


# ---------------------------------------------------------------------------
# losses


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass
class BprGrads:
    teacher_user: np.ndarray  # at U^L
    teacher_item: np.ndarray  # at V^L
    U: np.ndarray  # regularizer, at the free table
    V: np.ndarray


def bpr_loss_and_grads(batch: np.ndarray, outputs: ForwardOutputs, params: PgdParams, gamma: float):
    """``sum -ln sigmoid(r_ui - r_uj) + gamma (|U|^2 + |V|^2)`` and its gradients."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    u, i, j = batch[:, 0], batch[:, 1], batch[:, 2]
    Ue, Vi, Vj = outputs.teacher_user[u], outputs.teacher_item[i], outputs.teacher_item[j]
    x = np.einsum("bd,bd->b", Ue, Vi - Vj)
    reg = float((params.U ** 2).sum() + (params.V ** 2).sum())
    value = float(-_log_sigmoid(x).sum()) + gamma * reg

    c = -_sigmoid(-x)[:, None]  # d(-ln sigmoid(x))/dx
    gU = np.zeros_like(outputs.teacher_user)
    gV = np.zeros_like(outputs.teacher_item)
    np.add.at(gU, u, c * (Vi - Vj))
    np.add.at(gV, i, c * Ue)
    np.add.at(gV, j, -c * Ue)
    return value, BprGrads(gU, gV, 2.0 * gamma * params.U, 2.0 * gamma * params.V)


@dataclass
class DistillParts:
    Lu: float
    Lv: float
    Ls: float

    def weighted(self, lam: float, mu: float, eta: float) -> float:
        return lam * self.Lu + mu * self.Lv + eta * self.Ls


@dataclass
class DistillGrads:
    user_student_attr: np.ndarray  # at E^L
    item_student_attr: np.ndarray  # at F^L
    teacher_user: np.ndarray | None = None  # only when the teacher is not detached
    teacher_item: np.ndarray | None = None


def distill_loss_and_grads(
    sample: DistillSample,
    outputs: ForwardOutputs,
    graphs: ModelGraphs,
    lam: float,
    mu: float,
    eta: float,
    detach_teacher: bool = True,
):
    """Match student embeddings and predictions to the teacher's.

    ``Lu = sum |u^L - u^U|^2`` over sampled users, ``Lv`` likewise for
    items, and ``Ls`` sums the squared difference between teacher and student
    dot products over sampled pairs. Student user/item vectors are attribute
    sums over the propagated student attribute tables.
    """
    XU, XV = graphs.user_attr_matrix, graphs.item_attr_matrix
    E, F = outputs.user_student_attr, outputs.item_student_attr
    tU, tV = outputs.teacher_user, outputs.teacher_item

    gE = np.zeros_like(E)
    gF = np.zeros_like(F)
    gtU = np.zeros_like(tU)
    gtV = np.zeros_like(tV)

    us = sample.users
    XUs = XU[us]
    du = tU[us] - XUs @ E
    Lu = float((du ** 2).sum())
    if lam:
        gE -= XUs.T @ (2.0 * lam * du)
        np.add.at(gtU, us, 2.0 * lam * du)

    it = sample.items
    XVs = XV[it]
    dv = tV[it] - XVs @ F
    Lv = float((dv ** 2).sum())
    if mu:
        gF -= XVs.T @ (2.0 * mu * dv)
        np.add.at(gtV, it, 2.0 * mu * dv)

    pu, pi = sample.pair_users, sample.pair_items
    XUp, XVp = XU[pu], XV[pi]
    sU, sV = XUp @ E, XVp @ F
    r = np.einsum("bd,bd->b", tU[pu], tV[pi]) - np.einsum("bd,bd->b", sU, sV)
    Ls = float((r ** 2).sum())
    if eta:
        w = (2.0 * eta * r)[:, None]
        gE -= XUp.T @ (w * sV)
        gF -= XVp.T @ (w * sU)
        np.add.at(gtU, pu, w * tV[pi])
        np.add.at(gtV, pi, w * tU[pu])

    grads = DistillGrads(np.asarray(gE), np.asarray(gF))
    if not detach_teacher:
        grads.teacher_user, grads.teacher_item = gtU, gtV
    return DistillParts(Lu, Lv, Ls), grads


@dataclass
class LossParts:
    Lr: float
    Lu: float
    Lv: float
    Ls: float
    lam: float
    mu: float
    eta: float

    @property
    def Ld(self) -> float:
        return self.lam * self.Lu + self.mu * self.Lv + self.eta * self.Ls

    @property
    def total(self) -> float:
        return self.Lr + self.Ld


def loss_and_grads(
    params: PgdParams,
    graphs: ModelGraphs,
    batch: np.ndarray,
    sample: DistillSample,
    config: TrainConfig,
    outputs: ForwardOutputs | None = None,
) -> tuple[LossParts, dict[str, np.ndarray]]:
    """Total loss and its gradient with respect to every free table."""
    if outputs is None:
        outputs = forward(params, graphs)
    Lr, bg = bpr_loss_and_grads(batch, outputs, params, config.gamma)
    parts, dg = distill_loss_and_grads(
        sample, outputs, graphs, config.lam, config.mu, config.eta, config.detach_teacher
    )
    M, N = params.U.shape[0], params.V.shape[0]

    gtu, gtv = bg.teacher_user, bg.teacher_item
    if dg.teacher_user is not None:
        gtu = gtu + dg.teacher_user
        gtv = gtv + dg.teacher_item
    g_teacher = backpropagate(
        outputs.teacher_trace, np.vstack([gtu, gtv, np.zeros_like(outputs.teacher_attr)])
    )
    g_us = backpropagate(
        outputs.user_student_trace,
        np.vstack([np.zeros_like(outputs.user_student_item), dg.user_student_attr]),
    )
    g_is = backpropagate(
        outputs.item_student_trace,
        np.vstack([np.zeros_like(outputs.item_student_user), dg.item_student_attr]),
    )
    grads = {
        "U": g_teacher[:M] + g_is[:M] + bg.U,
        "V": g_teacher[M:M + N] + g_us[:N] + bg.V,
        "Y": g_teacher[M + N:],
        "E": g_us[N:],
        "F": g_is[M:],
    }
    return LossParts(Lr, parts.Lu, parts.Lv, parts.Ls, config.lam, config.mu, config.eta), grads


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: PgdParams) -> "AdamState":
        tables = params.tables()
        return cls({k: np.zeros_like(t) for k, t in tables.items()},
                   {k: np.zeros_like(t) for k, t in tables.items()})


def adam_step(params: PgdParams, state: AdamState, grads: dict[str, np.ndarray], learning_rate: float) -> PgdParams:
    """One bias-corrected Adam update, in place, applied per table."""
    for name, g in grads.items():
        if g.shape != getattr(params, name).shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}")
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in table {name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p = getattr(params, name)
        p -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# training loop


@dataclass
class EpochRecord:
    epoch: int
    Lr: float
    Lu: float
    Lv: float
    Ls: float
    val_ndcg20: float = math.nan

    def line(self) -> str:
        return (f"epoch={self.epoch} Lr={self.Lr:.10g} Lu={self.Lu:.10g} Lv={self.Lv:.10g} "
                f"Ls={self.Ls:.10g} val_ndcg20={self.val_ndcg20:.10g}")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, last_good: PgdParams, log: list[EpochRecord]):
        super().__init__(message)
        self.last_good = last_good
        self.log = log


@dataclass
class TrainResult:
    params: PgdParams  # best by validation NDCG@20 (or last when there is no validation)
    log: list[EpochRecord] = field(default_factory=list)
    final_params: PgdParams | None = None
    best_epoch: int = 0


def train(
    split: SplitBundle,
    config: TrainConfig,
    params: PgdParams | None = None,
    graphs: ModelGraphs | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    ds = split.train
    graphs = graphs or ModelGraphs.build(ds, binarize_student=config.binarize_student_graph)
    if params is None:
        params = init_params_for(
            ds, dim=config.dim, layers=config.layers,
            user_student_layers=config.user_student_layers,
            item_student_layers=config.item_student_layers,
            seed=config.seed,
        )
    else:
        params = params.copy()
    if config.epochs == 0:
        return TrainResult(params.copy(), [], params, 0)

    rng = np.random.default_rng([config.seed, 1])
    warm_users = np.unique(ds.interactions[:, 0])
    warm_items = np.unique(ds.interactions[:, 1])
    state = AdamState.zeros_like(params)
    val_spec = EvalSpec(TaskKind.WARM, ks=(20,))
    has_val = len(split.val_interactions) > 0

    records: list[EpochRecord] = []
    best, best_score, best_epoch = params.copy(), -math.inf, 0
    for epoch in range(1, config.epochs + 1):
        triples = sample_triples(ds, rng, config.negatives_per_positive)
        sums = np.zeros(4)
        for start in range(0, len(triples), config.batch_size):
            batch = triples[start:start + config.batch_size]
            sample = sample_distillation(batch, warm_users, warm_items, config.distill_sample_sizes, rng)
            parts, grads = loss_and_grads(params, graphs, batch, sample, config)
            if not math.isfinite(parts.total):
                raise TrainingDiverged(f"loss became {parts.total} at epoch {epoch}", best, records)
            sums += (parts.Lr, parts.Lu, parts.Lv, parts.Ls)
            try:
                adam_step(params, state, grads, config.learning_rate)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), best, records) from exc

        rec = EpochRecord(epoch, *sums.tolist())
        if has_val and (epoch % config.eval_every == 0 or epoch == config.epochs):
            rec.val_ndcg20 = evaluate(split, params, val_spec, graphs).ndcg[20]
            if rec.val_ndcg20 > best_score:
                best, best_score, best_epoch = params.copy(), rec.val_ndcg20, epoch
        records.append(rec)
        log.info(rec.line())
        if on_epoch is not None:
            on_epoch(rec)

    if not has_val:
        best, best_epoch = params.copy(), config.epochs
    return TrainResult(best, records, params, best_epoch)


def with_overrides(config: TrainConfig, **kwargs) -> TrainConfig:
    return replace(config, **kwargs)
