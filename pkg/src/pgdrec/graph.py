"""Sparse adjacency construction for the teacher and student graphs.

Teacher node order: ``[users | items | user attrs | item attrs]``, so the
attribute block lines up with the ``Y`` table. User-student node order is
``[items | user attrs]``; item-student is ``[users | item attrs]``.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .data import Dataset

USER_STUDENT = "user"
ITEM_STUDENT = "item"


@dataclass(frozen=True)
class SparseAdjacency:
    """Symmetric, nonnegative adjacency stored as CSR."""

    matrix: sp.csr_matrix

    def __post_init__(self):
        m = self.matrix.tocsr()
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        object.__setattr__(self, "matrix", m)

    @property
    def num_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def row_offsets(self) -> np.ndarray:
        return self.matrix.indptr

    @property
    def column_indices(self) -> np.ndarray:
        return self.matrix.indices

    @property
    def edge_weights(self) -> np.ndarray:
        return self.matrix.data

    @property
    def num_edges(self) -> int:
        return self.matrix.nnz

    @property
    def degree(self) -> np.ndarray:
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def dump_edges(self, path: str | os.PathLike) -> None:
        """Write ``row<TAB>col<TAB>weight`` lines sorted by (row, col)."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
            for r, c, w in zip(coo.row[order], coo.col[order], coo.data[order]):
                fh.write(f"{r}\t{c}\t{float(w)!r}\n")


def _symmetric(rows, cols, weights, n: int) -> SparseAdjacency:
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    m = sp.coo_matrix(
        (np.concatenate([weights, weights]),
         (np.concatenate([rows, cols]), np.concatenate([cols, rows]))),
        shape=(n, n),
    )
    return SparseAdjacency(m.tocsr())


def _attr_pairs(attrs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.fromiter((len(a) for a in attrs), dtype=np.int64, count=len(attrs))
    ent = np.repeat(np.arange(len(attrs), dtype=np.int64), lengths)
    att = np.concatenate(attrs) if attrs else np.zeros(0, dtype=np.int64)
    return ent, att


def attribute_matrix(ds: Dataset, side: str) -> sp.csr_matrix:
    """Binary entity-by-attribute matrix in the family's local attribute indices."""
    if side == USER_STUDENT:
        ent, att = _attr_pairs(ds.user_attrs)
        shape = (ds.num_users, ds.num_user_attrs)
    elif side == ITEM_STUDENT:
        ent, att = _attr_pairs(ds.item_attrs)
        att = att - ds.num_user_attrs
        shape = (ds.num_items, ds.num_item_attrs)
    else:
        raise ValueError(f"unknown side {side!r}")
    return sp.csr_matrix((np.ones(len(ent)), (ent, att)), shape=shape)


def rating_matrix(ds: Dataset) -> sp.csr_matrix:
    ui = ds.interactions
    return sp.csr_matrix(
        (np.ones(len(ui)), (ui[:, 0], ui[:, 1])), shape=(ds.num_users, ds.num_items)
    )


@dataclass(frozen=True)
class TeacherGraph:
    adjacency: SparseAdjacency
    num_users: int
    num_items: int
    num_user_attrs: int
    num_item_attrs: int

    @property
    def offsets(self) -> tuple[int, int, int, int, int]:
        """Boundaries of the user, item, user-attr and item-attr blocks."""
        M, N, Du, Dv = self.num_users, self.num_items, self.num_user_attrs, self.num_item_attrs
        return 0, M, M + N, M + N + Du, M + N + Du + Dv


@dataclass(frozen=True)
class StudentGraph:
    side: str
    adjacency: SparseAdjacency
    num_entities: int  # items for the user student, users for the item student
    num_attrs: int

    @property
    def co_occurrence(self) -> sp.csr_matrix:
        """The entity-by-attribute block (``S_u`` or ``S_v``)."""
        return self.adjacency.matrix[: self.num_entities, self.num_entities:].tocsr()


def build_teacher_graph(ds: Dataset) -> TeacherGraph:
    M, N = ds.num_users, ds.num_items
    n = M + N + ds.num_attrs
    ui = ds.interactions
    ue, ua = _attr_pairs(ds.user_attrs)
    ie, ia = _attr_pairs(ds.item_attrs)
    rows = np.concatenate([ui[:, 0], ue, M + ie])
    cols = np.concatenate([M + ui[:, 1], M + N + ua, M + N + ia])
    adj = _symmetric(rows, cols, np.ones(len(rows)), n)
    return TeacherGraph(adj, M, N, ds.num_user_attrs, ds.num_item_attrs)


def build_student_graph(ds: Dataset, side: str, binarize: bool = False) -> StudentGraph:
    """Second-order attribute graph; weights count the linking interactions.

    For the user student, the weight between item ``j`` and user attribute
    ``k`` is the number of users carrying ``k`` who interacted with ``j``.
    """
    R = rating_matrix(ds)
    if side == USER_STUDENT:
        S = (R.T @ attribute_matrix(ds, USER_STUDENT)).tocoo()
    elif side == ITEM_STUDENT:
        S = (R @ attribute_matrix(ds, ITEM_STUDENT)).tocoo()
    else:
        raise ValueError(f"unknown side {side!r}")
    n_ent, n_att = S.shape
    w = np.ones_like(S.data) if binarize else S.data
    adj = _symmetric(S.row, n_ent + S.col, w, n_ent + n_att)
    return StudentGraph(side, adj, n_ent, n_att)


def normalize_rows(adjacency: SparseAdjacency) -> sp.csr_matrix:
    """Return ``D^-1 A``; zero-degree rows stay zero."""
    deg = adjacency.degree
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    return (sp.diags(inv) @ adjacency.matrix).tocsr()
