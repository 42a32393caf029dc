import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgdrec.data import Dataset
from pgdrec.graph import (
    ITEM_STUDENT,
    USER_STUDENT,
    SparseAdjacency,
    build_student_graph,
    build_teacher_graph,
    normalize_rows,
)

from conftest import random_dataset


def dense_teacher(ds: Dataset) -> np.ndarray:
    """Adjacency built entry by entry from the edge definitions."""
    M, N, D = ds.num_users, ds.num_items, ds.num_attrs
    A = np.zeros((M + N + D,) * 2)
    for u, i in ds.interactions:
        A[u, M + i] = A[M + i, u] = 1
    for u, attrs in enumerate(ds.user_attrs):
        for k in attrs:
            A[u, M + N + k] = A[M + N + k, u] = 1
    for i, attrs in enumerate(ds.item_attrs):
        for l in attrs:
            A[M + i, M + N + l] = A[M + N + l, M + i] = 1
    return A


def brute_cooccurrence(ds: Dataset) -> np.ndarray:
    s = np.zeros((ds.num_items, ds.num_user_attrs), dtype=np.int64)
    clicked = {(int(u), int(i)) for u, i in ds.interactions}
    for j in range(ds.num_items):
        for k in range(ds.num_user_attrs):
            s[j, k] = sum((u, j) in clicked and k in ds.user_attrs[u] for u in range(ds.num_users))
    return s


class TestTeacherGraph:
    def test_f1_edge_count(self, f1):
        g = build_teacher_graph(f1)
        assert g.adjacency.num_edges == 2 * (3 + 2 + 2) == 14
        assert np.array_equal(g.adjacency.toarray(), dense_teacher(f1))

    def test_single_pair_degrees(self):
        ds = Dataset(1, 1, 1, 1, [(0, 0)], [[0]], [[1]])
        deg = build_teacher_graph(ds).adjacency.degree
        assert deg.tolist() == [2, 2, 1, 1]

    def test_no_interactions(self):
        ds = Dataset(2, 1, 1, 1, [], [[0], [0]], [[1]])
        A = build_teacher_graph(ds).adjacency.toarray()
        assert A[:2, 2].sum() == 0
        assert A[:, 3:].sum() == 3

    def test_block_structure(self):
        ds = random_dataset(np.random.default_rng(3))
        g = build_teacher_graph(ds)
        A = g.adjacency.toarray()
        o = g.offsets
        users, items = slice(o[0], o[1]), slice(o[1], o[2])
        uattr, iattr = slice(o[2], o[3]), slice(o[3], o[4])
        assert A[users, users].sum() == 0 and A[users, iattr].sum() == 0
        assert A[items, items].sum() == 0 and A[items, uattr].sum() == 0
        assert A[uattr][:, o[2]:].sum() == 0 and A[iattr][:, o[2]:].sum() == 0

    def test_dump_edges(self, f1, tmp_path):
        g = build_teacher_graph(f1)
        g.adjacency.dump_edges(tmp_path / "edges.tsv")
        lines = (tmp_path / "edges.tsv").read_text().splitlines()
        assert len(lines) == 14
        assert lines[0] == "0\t2\t1.0"
        keys = [tuple(map(int, l.split("\t")[:2])) for l in lines]
        assert keys == sorted(keys)


class TestStudentGraph:
    def test_f1_counts(self, f1):
        S = build_student_graph(f1, USER_STUDENT).co_occurrence.toarray()
        assert S.tolist() == [[2, 0], [1, 0]]

    def test_single_link(self):
        ds = Dataset(1, 1, 1, 1, [(0, 0)], [[0]], [[1]])
        assert build_student_graph(ds, USER_STUDENT).co_occurrence.toarray().tolist() == [[1]]

    def test_two_attributes(self):
        ds = Dataset(1, 1, 2, 1, [(0, 0)], [[0, 1]], [[2]])
        assert build_student_graph(ds, USER_STUDENT).co_occurrence.toarray().tolist() == [[1, 1]]

    def test_item_student_f1(self, f1):
        # S_v[i, l] = number of items carrying l that user i clicked
        S = build_student_graph(f1, ITEM_STUDENT).co_occurrence.toarray()
        assert S.tolist() == [[1], [2]]

    @pytest.mark.parametrize("seed", range(5))
    def test_brute_force(self, seed):
        ds = random_dataset(np.random.default_rng(seed))
        S = build_student_graph(ds, USER_STUDENT).co_occurrence.toarray()
        assert np.array_equal(S, brute_cooccurrence(ds))

    def test_binarize(self, f1):
        S = build_student_graph(f1, USER_STUDENT, binarize=True).co_occurrence.toarray()
        assert S.tolist() == [[1, 0], [1, 0]]

    def test_positive_integer_weights(self):
        ds = random_dataset(np.random.default_rng(8), density=0.7)
        w = build_student_graph(ds, ITEM_STUDENT).adjacency.edge_weights
        assert (w >= 1).all() and np.array_equal(w, np.round(w))


class TestNormalize:
    def test_weights(self):
        import scipy.sparse as sp
        A = SparseAdjacency(sp.csr_matrix(np.array([[0, 2, 1], [2, 0, 0], [1, 0, 0]], float)))
        P = normalize_rows(A).toarray()
        assert np.allclose(P[0], [0, 2 / 3, 1 / 3])

    def test_isolated_row_is_zero(self):
        ds = Dataset(2, 1, 1, 1, [(0, 0)], [[0], [0]], [[1]])
        P = normalize_rows(build_student_graph(ds, ITEM_STUDENT).adjacency).toarray()
        assert P[1].sum() == 0  # user 1 has no clicks

    def test_f1_user1_row(self, f1):
        P = normalize_rows(build_teacher_graph(f1).adjacency).toarray()
        A = dense_teacher(f1)
        deg = A.sum(axis=1, keepdims=True)
        oracle = np.divide(A, deg, out=np.zeros_like(A), where=deg > 0)
        assert np.allclose(P, oracle, atol=1e-15)
        # user 1 neighbours: items 0, 1 and attribute a0
        assert np.allclose(P[1, [2, 3, 4]], 1 / 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_graph_invariants(seed):
    ds = random_dataset(np.random.default_rng(seed))
    for adj in (build_teacher_graph(ds).adjacency,
                build_student_graph(ds, USER_STUDENT).adjacency,
                build_student_graph(ds, ITEM_STUDENT).adjacency):
        A = adj.matrix
        assert (A != A.T).nnz == 0
        assert np.all(A.diagonal() == 0)
        assert np.all(adj.edge_weights > 0)
        rows = np.repeat(np.arange(adj.num_nodes), np.diff(adj.row_offsets))
        assert np.array_equal(np.bincount(rows, weights=adj.edge_weights, minlength=adj.num_nodes), adj.degree)
        P = normalize_rows(adj)
        s = np.asarray(P.sum(axis=1)).ravel()
        nz = adj.degree > 0
        assert np.all(np.abs(s[nz] - 1) <= 1e-12) and np.all(s[~nz] == 0)
