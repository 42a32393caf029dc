"""Teacher and student models over shared free embeddings.

The teacher propagates ``[U; V; Y]`` over the user-item-attribute graph.
The user student propagates ``[V; E]`` over the item/user-attribute graph
and the item student ``[U; F]`` over the user/item-attribute graph, so the
free tables ``U`` and ``V`` are shared between teacher and students.
"""
from __future__ import annotations

import enum
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .data import Dataset
from .graph import (
    ITEM_STUDENT,
    USER_STUDENT,
    StudentGraph,
    TeacherGraph,
    attribute_matrix,
    build_student_graph,
    build_teacher_graph,
    normalize_rows,
)
from .propagate import PropagationTrace, propagate

DEFAULT_DIM = 64
INIT_STD = 0.1  # variance 0.01
TABLES = ("U", "V", "Y", "E", "F")


class TaskKind(str, enum.Enum):
    WARM = "warm"
    NEW_USER = "nu"
    NEW_ITEM = "ni"
    NEW_BOTH = "nn"


@dataclass
class PgdParams:
    U: np.ndarray
    V: np.ndarray
    Y: np.ndarray
    E: np.ndarray
    F: np.ndarray
    layers: int = 2
    user_student_layers: int = 2
    item_student_layers: int = 2
    seed: int = 0

    def __post_init__(self):
        d = self.U.shape[1]
        for name in TABLES:
            t = getattr(self, name)
            if t.ndim != 2 or t.shape[1] != d:
                raise ValueError(f"table {name} has shape {t.shape}, expected (*, {d})")
        if self.Y.shape[0] != self.E.shape[0] + self.F.shape[0]:
            raise ValueError("Y must hold D_u + D_v rows")

    @property
    def dims(self) -> tuple[int, int, int, int, int]:
        return (self.U.shape[0], self.V.shape[0], self.E.shape[0], self.F.shape[0], self.U.shape[1])

    def tables(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in TABLES}

    def copy(self) -> "PgdParams":
        return replace(self, **{k: v.copy() for k, v in self.tables().items()})


def init_params(
    num_users: int,
    num_items: int,
    num_user_attrs: int,
    num_item_attrs: int,
    dim: int = DEFAULT_DIM,
    layers: int = 2,
    user_student_layers: int | None = None,
    item_student_layers: int | None = None,
    seed: int = 0,
) -> PgdParams:
    """Gaussian init (mean 0, variance 0.01) of every table from one seeded stream."""
    if min(num_users, num_items, num_user_attrs, num_item_attrs, dim) <= 0:
        raise ValueError("all dimensions must be positive")
    rng = np.random.default_rng(seed)
    rows = {
        "U": num_users,
        "V": num_items,
        "Y": num_user_attrs + num_item_attrs,
        "E": num_user_attrs,
        "F": num_item_attrs,
    }
    tables = {k: rng.normal(0.0, INIT_STD, size=(n, dim)) for k, n in rows.items()}
    return PgdParams(
        **tables,
        layers=layers,
        user_student_layers=layers if user_student_layers is None else user_student_layers,
        item_student_layers=layers if item_student_layers is None else item_student_layers,
        seed=seed,
    )


def init_params_for(ds: Dataset, **kwargs) -> PgdParams:
    return init_params(ds.num_users, ds.num_items, ds.num_user_attrs, ds.num_item_attrs, **kwargs)


# ---------------------------------------------------------------------------
# graphs and forward passes


@dataclass
class ModelGraphs:
    """Normalized operators and attribute incidence for one training set."""

    teacher: TeacherGraph
    user_student: StudentGraph
    item_student: StudentGraph
    teacher_op: sp.csr_matrix
    user_student_op: sp.csr_matrix
    item_student_op: sp.csr_matrix
    user_attr_matrix: sp.csr_matrix  # M x D_u
    item_attr_matrix: sp.csr_matrix  # N x D_v

    @classmethod
    def build(cls, ds: Dataset, binarize_student: bool = False) -> "ModelGraphs":
        tg = build_teacher_graph(ds)
        us = build_student_graph(ds, USER_STUDENT, binarize=binarize_student)
        it = build_student_graph(ds, ITEM_STUDENT, binarize=binarize_student)
        return cls(
            tg, us, it,
            normalize_rows(tg.adjacency),
            normalize_rows(us.adjacency),
            normalize_rows(it.adjacency),
            attribute_matrix(ds, USER_STUDENT),
            attribute_matrix(ds, ITEM_STUDENT),
        )


@dataclass
class ForwardOutputs:
    teacher_user: np.ndarray
    teacher_item: np.ndarray
    teacher_attr: np.ndarray
    user_student_attr: np.ndarray
    user_student_item: np.ndarray
    item_student_attr: np.ndarray
    item_student_user: np.ndarray
    num_user_attrs: int
    teacher_trace: PropagationTrace | None = field(default=None, repr=False)
    user_student_trace: PropagationTrace | None = field(default=None, repr=False)
    item_student_trace: PropagationTrace | None = field(default=None, repr=False)


def _split_rows(x: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    return np.split(x, np.cumsum(sizes)[:-1], axis=0)


def teacher_forward(params: PgdParams, graphs: ModelGraphs):
    """Return ``(U^L, V^L, Y^L, trace)``."""
    M, N = params.U.shape[0], params.V.shape[0]
    if graphs.teacher_op.shape[0] != M + N + params.Y.shape[0]:
        raise ValueError("teacher graph does not match parameter dimensions")
    x0 = np.vstack([params.U, params.V, params.Y])
    trace = propagate(graphs.teacher_op, x0, params.layers)
    U, V, Y = _split_rows(trace.output, [M, N, params.Y.shape[0]])
    return U, V, Y, trace


def student_forward(params: PgdParams, graphs: ModelGraphs, side: str):
    """Return ``(attr^L, entity^L, trace)`` for one student.

    The entity block starts from the shared free table (``V`` for the user
    student, ``U`` for the item student).
    """
    if side == USER_STUDENT:
        ent, att, op, L = params.V, params.E, graphs.user_student_op, params.user_student_layers
    elif side == ITEM_STUDENT:
        ent, att, op, L = params.U, params.F, graphs.item_student_op, params.item_student_layers
    else:
        raise ValueError(f"unknown side {side!r}")
    if op.shape[0] != ent.shape[0] + att.shape[0]:
        raise ValueError(f"{side} student graph does not match parameter dimensions")
    trace = propagate(op, np.vstack([ent, att]), L)
    ent_out, att_out = _split_rows(trace.output, [ent.shape[0], att.shape[0]])
    return att_out, ent_out, trace


def forward(params: PgdParams, graphs: ModelGraphs) -> ForwardOutputs:
    tu, tv, ty, tt = teacher_forward(params, graphs)
    ea, ev, ut = student_forward(params, graphs, USER_STUDENT)
    fa, fu, it = student_forward(params, graphs, ITEM_STUDENT)
    return ForwardOutputs(tu, tv, ty, ea, ev, fa, fu, params.E.shape[0], tt, ut, it)


# ---------------------------------------------------------------------------
# prediction

AttrSet = Iterable[int]
Ref = Union[int, np.integer, AttrSet]


def compose_entity_embedding(attr_table: np.ndarray, attr_set: AttrSet, offset: int = 0) -> np.ndarray:
    """Sum of the attribute rows ``attr_set - offset`` (not the mean)."""
    idx = np.asarray(list(attr_set), dtype=np.int64) - offset
    if idx.size == 0:
        raise ValueError("attribute set is empty")
    if idx.min() < 0 or idx.max() >= attr_table.shape[0]:
        raise IndexError("attribute index out of range")
    return attr_table[idx].sum(axis=0)


def compose_many(attr_table: np.ndarray, attr_sets: Sequence[AttrSet], offset: int = 0) -> np.ndarray:
    """Row-wise :func:`compose_entity_embedding` via a sparse incidence product."""
    lengths = [len(a) for a in attr_sets]
    if any(n == 0 for n in lengths):
        raise ValueError("attribute set is empty")
    cols = np.concatenate([np.asarray(list(a), dtype=np.int64) for a in attr_sets]) - offset if attr_sets else np.zeros(0, np.int64)
    rows = np.repeat(np.arange(len(attr_sets)), lengths)
    X = sp.csr_matrix((np.ones(len(cols)), (rows, cols)), shape=(len(attr_sets), attr_table.shape[0]))
    return np.asarray(X @ attr_table)


def _is_index(ref) -> bool:
    return isinstance(ref, (int, np.integer))


def user_embedding(task: TaskKind, outputs: ForwardOutputs, user_ref: Ref) -> np.ndarray:
    if task in (TaskKind.WARM, TaskKind.NEW_ITEM):
        if not _is_index(user_ref):
            raise TypeError(f"{task.value}: user reference must be a warm user index")
        return outputs.teacher_user[user_ref]
    if _is_index(user_ref):
        raise TypeError(f"{task.value}: user reference must be an attribute set")
    return compose_entity_embedding(outputs.user_student_attr, user_ref)


def item_embedding(task: TaskKind, outputs: ForwardOutputs, item_ref: Ref) -> np.ndarray:
    if task in (TaskKind.WARM, TaskKind.NEW_USER):
        if not _is_index(item_ref):
            raise TypeError(f"{task.value}: item reference must be a warm item index")
        return outputs.teacher_item[item_ref]
    if _is_index(item_ref):
        raise TypeError(f"{task.value}: item reference must be an attribute set")
    return compose_entity_embedding(outputs.item_student_attr, item_ref, offset=outputs.num_user_attrs)


def score(task: TaskKind, outputs: ForwardOutputs, user_ref: Ref, item_ref: Ref) -> float:
    """Dot-product prediction; cold sides are composed from attribute sets.

    Item attribute sets use global attribute indices ``[D_u, D)``.
    """
    task = TaskKind(task)
    return float(user_embedding(task, outputs, user_ref) @ item_embedding(task, outputs, item_ref))


# ---------------------------------------------------------------------------
# checkpoint I/O

MAGIC = b"PGDCKPT\x00"
VERSION = 1
_HEADER = struct.Struct("<8sI5Q3Iq")


class CheckpointError(ValueError):
    pass


def save_checkpoint(params: PgdParams, path: str | os.PathLike) -> None:
    """Header then the five tables, row-major little-endian float64."""
    M, N, Du, Dv, d = params.dims
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, M, N, Du, Dv, d, params.layers,
                              params.user_student_layers, params.item_student_layers, params.seed))
        for name in TABLES:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())


def load_checkpoint(path: str | os.PathLike, expect_dims: Sequence[int] | None = None) -> PgdParams:
    """Read a checkpoint; ``expect_dims`` is ``(M, N, D_u, D_v)`` to validate against."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    magic, version, M, N, Du, Dv, d, L, Lu, Li, seed = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if expect_dims is not None and tuple(expect_dims) != (M, N, Du, Dv):
        raise CheckpointError(
            f"{path}: checkpoint dims (M,N,D_u,D_v)={(M, N, Du, Dv)} do not match {tuple(expect_dims)}"
        )
    rows = {"U": M, "V": N, "Y": Du + Dv, "E": Du, "F": Dv}
    expected = _HEADER.size + 8 * d * sum(rows.values())
    if len(raw) != expected:
        raise CheckpointError(f"{path}: size {len(raw)} != expected {expected}")
    pos, tables = _HEADER.size, {}
    for name in TABLES:
        n = rows[name] * d
        tables[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).reshape(rows[name], d).astype(np.float64)
        pos += 8 * n
    return PgdParams(**tables, layers=L, user_student_layers=Lu, item_student_layers=Li, seed=seed)
