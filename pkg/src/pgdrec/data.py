"""Interaction/attribute ingestion and cold-start splitting.

Internal index layout:

* users ``[0, M)``, items ``[0, N)``
* user attributes ``[0, D_u)``, item attributes ``[D_u, D_u + D_v)``

Index assignment is lexicographic over external ids within each family, so
the same input files always produce the same indices.
"""
from __future__ import annotations

import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)

_NUMERIC = re.compile(r"^[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?$")


class DataError(ValueError):
    """Raised for malformed input files or inconsistent datasets."""


class SplitError(ValueError):
    pass


# ---------------------------------------------------------------------------
# dataset


@dataclass(frozen=True)
class IdMap:
    """Bidirectional external id <-> internal index table."""

    ids: tuple[str, ...]
    index: dict[str, int] = field(repr=False)

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> "IdMap":
        ordered = tuple(sorted(set(ids)))
        return cls(ordered, {x: i for i, x in enumerate(ordered)})

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class Dataset:
    num_users: int
    num_items: int
    num_user_attrs: int
    num_item_attrs: int
    interactions: np.ndarray  # (n, 2) int64, (user, item)
    user_attrs: list[np.ndarray]  # sorted attribute indices in [0, D_u)
    item_attrs: list[np.ndarray]  # sorted attribute indices in [D_u, D)
    user_ids: IdMap | None = None
    item_ids: IdMap | None = None
    attr_ids: IdMap | None = None  # over D = D_u + D_v, user block first

    def __post_init__(self):
        self.interactions = np.asarray(self.interactions, dtype=np.int64).reshape(-1, 2)
        self.user_attrs = [np.unique(np.asarray(a, dtype=np.int64)) for a in self.user_attrs]
        self.item_attrs = [np.unique(np.asarray(a, dtype=np.int64)) for a in self.item_attrs]
        self.validate()

    @property
    def num_attrs(self) -> int:
        return self.num_user_attrs + self.num_item_attrs

    def validate(self) -> None:
        M, N, Du, D = self.num_users, self.num_items, self.num_user_attrs, self.num_attrs
        ui = self.interactions
        if len(ui):
            if ui[:, 0].min() < 0 or ui[:, 0].max() >= M or ui[:, 1].min() < 0 or ui[:, 1].max() >= N:
                raise DataError("interaction index out of range")
            if len(np.unique(ui[:, 0] * N + ui[:, 1])) != len(ui):
                raise DataError("duplicate interactions")
        if len(self.user_attrs) != M or len(self.item_attrs) != N:
            raise DataError("attribute rows do not match entity counts")
        for i, a in enumerate(self.user_attrs):
            if len(a) == 0:
                raise DataError(f"user {i} has no attributes")
            if a[0] < 0 or a[-1] >= Du:
                raise DataError(f"user {i} attribute outside [0, {Du})")
        for j, a in enumerate(self.item_attrs):
            if len(a) == 0:
                raise DataError(f"item {j} has no attributes")
            if a[0] < Du or a[-1] >= D:
                raise DataError(f"item {j} attribute outside [{Du}, {D})")

    def with_interactions(self, interactions: np.ndarray) -> "Dataset":
        return Dataset(
            self.num_users, self.num_items, self.num_user_attrs, self.num_item_attrs,
            interactions, self.user_attrs, self.item_attrs,
            self.user_ids, self.item_ids, self.attr_ids,
        )


# ---------------------------------------------------------------------------
# file ingestion


def load_interactions(path: str | os.PathLike) -> list[tuple[str, str]]:
    """Read ``user<TAB>item`` lines, keeping file order and dropping repeats."""
    pairs: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0] or not fields[1]:
                raise DataError(f"{path}:{lineno}: expected 'user_id<TAB>item_id'")
            pair = (fields[0], fields[1])
            if pair in seen:
                duplicates += 1
                continue
            seen.add(pair)
            pairs.append(pair)
    if not pairs:
        raise DataError(f"{path}: empty interaction file")
    if duplicates:
        log.warning("%s: dropped %d duplicate interaction(s)", path, duplicates)
    return pairs


def load_attributes(path: str | os.PathLike, kind: str = "user") -> dict[str, set[str]]:
    """Read ``entity<TAB>attr(<TAB>attr)*`` lines, merging repeated entities."""
    if kind not in ("user", "item"):
        raise ValueError(f"kind must be 'user' or 'item', got {kind!r}")
    attrs: dict[str, set[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            entity, *values = line.split("\t")
            values = [v for v in values if v]
            if not values:
                raise DataError(f"{path}:{lineno}: {kind} {entity!r} has zero attributes")
            for v in values:
                if _NUMERIC.match(v):
                    raise DataError(
                        f"{path}:{lineno}: numeric attribute value {v!r}; bucket continuous "
                        "attributes into categorical tokens first"
                    )
            attrs.setdefault(entity, set()).update(values)
    return attrs


def build_dataset(
    interactions: Sequence[tuple[str, str]],
    user_attr_map: Mapping[str, Iterable[str]],
    item_attr_map: Mapping[str, Iterable[str]],
    user_attr_vocab: Iterable[str] = (),
    item_attr_vocab: Iterable[str] = (),
) -> Dataset:
    """Assign contiguous indices and build a :class:`Dataset`.

    Entities are the keys of the attribute maps; the attribute vocabulary is
    the union of attribute values, optionally extended with explicit vocab.
    User and item attribute tokens live in separate namespaces.
    """
    missing_u = sorted({u for u, _ in interactions} - set(user_attr_map))
    missing_i = sorted({i for _, i in interactions} - set(item_attr_map))
    if missing_u or missing_i:
        raise DataError(
            f"entities without attribute rows: users={missing_u[:10]} items={missing_i[:10]}"
            + (" ..." if len(missing_u) > 10 or len(missing_i) > 10 else "")
        )
    for name, amap in (("user", user_attr_map), ("item", item_attr_map)):
        empty = sorted(e for e, a in amap.items() if not a)
        if empty:
            raise DataError(f"{name}s without attributes: {empty[:10]}")

    users = IdMap.from_ids(user_attr_map)
    items = IdMap.from_ids(item_attr_map)
    uvocab = sorted(set().union(*map(set, user_attr_map.values()), user_attr_vocab))
    ivocab = sorted(set().union(*map(set, item_attr_map.values()), item_attr_vocab))
    Du = len(uvocab)
    # Attribute ids are namespaced so that a token used by both families stays distinct.
    attr_ids = IdMap(
        tuple(uvocab) + tuple(ivocab),
        {**{f"u:{a}": k for k, a in enumerate(uvocab)},
         **{f"i:{a}": Du + l for l, a in enumerate(ivocab)}},
    )
    ua_index = {a: k for k, a in enumerate(uvocab)}
    ia_index = {a: Du + l for l, a in enumerate(ivocab)}

    ui = np.array(
        [(users.index[u], items.index[i]) for u, i in dict.fromkeys(interactions)],
        dtype=np.int64,
    ).reshape(-1, 2)
    return Dataset(
        num_users=len(users),
        num_items=len(items),
        num_user_attrs=Du,
        num_item_attrs=len(ivocab),
        interactions=ui,
        user_attrs=[np.array(sorted(ua_index[a] for a in user_attr_map[u])) for u in users.ids],
        item_attrs=[np.array(sorted(ia_index[a] for a in item_attr_map[i])) for i in items.ids],
        user_ids=users,
        item_ids=items,
        attr_ids=attr_ids,
    )


# ---------------------------------------------------------------------------
# cold-start split


@dataclass
class SplitBundle:
    """Train/validation/test partitions for warm and cold-start evaluation.

    ``train`` keeps the full entity index space; held-out users and items
    simply have no train interactions.
    """

    train: Dataset
    val_interactions: np.ndarray
    test_new_user: np.ndarray
    test_new_item: np.ndarray
    test_both: np.ndarray
    new_user_ids: np.ndarray
    new_item_ids: np.ndarray
    new_user_attrs: dict[int, np.ndarray]
    new_item_attrs: dict[int, np.ndarray]
    seed: int
    fractions: tuple[float, float, float] = (0.3, 0.3, 0.1)

    @property
    def old_item_ids(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.train.num_items), self.new_item_ids)

    @property
    def old_user_ids(self) -> np.ndarray:
        return np.setdiff1d(np.arange(self.train.num_users), self.new_user_ids)

    def partitions(self) -> dict[str, np.ndarray]:
        return {
            "train": self.train.interactions,
            "val": self.val_interactions,
            "test_nu": self.test_new_user,
            "test_ni": self.test_new_item,
            "test_nn": self.test_both,
        }


def generate_split(
    dataset: Dataset,
    new_user_frac: float = 0.3,
    new_item_frac: float = 0.3,
    val_frac: float = 0.1,
    seed: int = 0,
) -> SplitBundle:
    """Hold out random users and items and route interactions by endpoint class.

    Sampling order with ``np.random.default_rng(seed)``: new users, new
    items, then the validation subset of the remaining old x old
    interactions. Each draw is ``rng.choice(n, k, replace=False)``.
    """
    for name, f in (("new_user_frac", new_user_frac), ("new_item_frac", new_item_frac),
                    ("val_frac", val_frac)):
        if not 0.0 < f < 1.0:
            raise SplitError(f"{name} must lie in (0, 1), got {f}")
    if len(dataset.interactions) == 0:
        raise SplitError("cannot split an empty dataset")

    M, N = dataset.num_users, dataset.num_items
    rng = np.random.default_rng(seed)
    new_users = np.sort(rng.choice(M, int(np.floor(new_user_frac * M)), replace=False))
    new_items = np.sort(rng.choice(N, int(np.floor(new_item_frac * N)), replace=False))

    ui = dataset.interactions
    nu = np.isin(ui[:, 0], new_users)
    ni = np.isin(ui[:, 1], new_items)
    old = ui[~nu & ~ni]
    is_val = np.zeros(len(old), dtype=bool)
    is_val[rng.choice(len(old), int(np.floor(val_frac * len(old))), replace=False)] = True

    bundle = SplitBundle(
        train=dataset.with_interactions(old[~is_val]),
        val_interactions=old[is_val],
        test_new_user=ui[nu & ~ni],
        test_new_item=ui[~nu & ni],
        test_both=ui[nu & ni],
        new_user_ids=new_users,
        new_item_ids=new_items,
        new_user_attrs={int(u): dataset.user_attrs[u] for u in new_users},
        new_item_attrs={int(j): dataset.item_attrs[j] for j in new_items},
        seed=seed,
        fractions=(new_user_frac, new_item_frac, val_frac),
    )
    empty = [k for k, v in bundle.partitions().items() if len(v) == 0]
    if empty:
        raise SplitError(f"empty partition(s) {empty}; try another seed or larger fractions")
    return bundle


def split_statistics(bundle: SplitBundle) -> list[tuple[str, str, int]]:
    """Rows ``(partition, quantity, count)`` in the layout of a dataset-statistics table."""
    rows = []
    D = bundle.train
    for name, ui, ulabel, ilabel in (
        ("Train", D.interactions, "Old Users", "Old Items"),
        ("Val", bundle.val_interactions, "Old Users", "Old Items"),
        ("Test new user", bundle.test_new_user, "New Users", "Old Items"),
        ("Test new item", bundle.test_new_item, "Old Users", "New Items"),
        ("Test new user and new item", bundle.test_both, "New Users", "New Items"),
    ):
        rows.append((name, ulabel, len(np.unique(ui[:, 0]))))
        rows.append((name, ilabel, len(np.unique(ui[:, 1]))))
        rows.append((name, "Ratings", len(ui)))
    rows.append(("", "User Attributes", D.num_user_attrs))
    rows.append(("", "Item Attributes", D.num_item_attrs))
    return rows


def format_statistics(bundle: SplitBundle) -> str:
    rows = split_statistics(bundle)
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{p:<{width}}  {q:<16} {n:>10,}" for p, q, n in rows)


# ---------------------------------------------------------------------------
# split directory I/O

_SPLIT_FILES = {
    "train": "train.tsv",
    "val": "val.tsv",
    "test_nu": "test_nu.tsv",
    "test_ni": "test_ni.tsv",
    "test_nn": "test_nn.tsv",
}


def _attr_token(ds: Dataset, a: int) -> str:
    return ds.attr_ids.ids[a]


def _write_pairs(path: Path, ds: Dataset, ui: np.ndarray) -> None:
    uids, iids = ds.user_ids.ids, ds.item_ids.ids
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in ui:
            fh.write(f"{uids[u]}\t{iids[i]}\n")


def _write_attrs(path: Path, ds: Dataset, rows: Mapping[int, np.ndarray], ids: IdMap) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in sorted(rows):
            fh.write("\t".join([ids.ids[e], *(_attr_token(ds, a) for a in rows[e])]) + "\n")


def save_split(bundle: SplitBundle, directory: str | os.PathLike) -> Path:
    """Write the split as TSV files plus ``meta.kv``.

    Besides the partition files, ``user_attrs.tsv``/``item_attrs.tsv`` hold
    the attribute rows of every entity and ``*_attr_vocab.txt`` the full
    attribute vocabularies (including unused values), so the index space can
    be rebuilt exactly.
    """
    ds = bundle.train
    if ds.user_ids is None:
        raise DataError("dataset carries no id maps; build it with build_dataset")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    for key, ui in bundle.partitions().items():
        _write_pairs(out / _SPLIT_FILES[key], ds, ui)
    _write_attrs(out / "new_user_attrs.tsv", ds, bundle.new_user_attrs, ds.user_ids)
    _write_attrs(out / "new_item_attrs.tsv", ds, bundle.new_item_attrs, ds.item_ids)
    _write_attrs(out / "user_attrs.tsv", ds, dict(enumerate(ds.user_attrs)), ds.user_ids)
    _write_attrs(out / "item_attrs.tsv", ds, dict(enumerate(ds.item_attrs)), ds.item_ids)
    Du = ds.num_user_attrs
    for name, tokens in (("user_attr_vocab.txt", ds.attr_ids.ids[:Du]), ("item_attr_vocab.txt", ds.attr_ids.ids[Du:])):
        (out / name).write_text("".join(t + "\n" for t in tokens), encoding="utf-8")
    meta = {
        "seed": bundle.seed,
        "new_user_frac": repr(float(bundle.fractions[0])),
        "new_item_frac": repr(float(bundle.fractions[1])),
        "val_frac": repr(float(bundle.fractions[2])),
        "M": ds.num_users,
        "N": ds.num_items,
        "D_u": ds.num_user_attrs,
        "D_v": ds.num_item_attrs,
    }
    (out / "meta.kv").write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")
    return out


def read_kv(path: str | os.PathLike) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{lineno}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _read_pairs(path: Path, ds: Dataset) -> np.ndarray:
    rows = []
    text = path.read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line:
            continue
        u, i = line.split("\t")
        try:
            rows.append((ds.user_ids.index[u], ds.item_ids.index[i]))
        except KeyError as exc:
            raise DataError(f"{path}:{lineno}: unknown id {exc}") from None
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def load_split(directory: str | os.PathLike) -> SplitBundle:
    d = Path(directory)
    if not (d / "meta.kv").exists():
        raise DataError(f"{d}: not a split directory (meta.kv missing)")
    meta = read_kv(d / "meta.kv")
    uam = load_attributes(d / "user_attrs.tsv", "user")
    iam = load_attributes(d / "item_attrs.tsv", "item")
    vocabs = [(d / n).read_text(encoding="utf-8").splitlines() if (d / n).exists() else []
              for n in ("user_attr_vocab.txt", "item_attr_vocab.txt")]
    base = build_dataset([], uam, iam, *vocabs)
    dims = (base.num_users, base.num_items, base.num_user_attrs, base.num_item_attrs)
    if dims != tuple(int(meta[k]) for k in ("M", "N", "D_u", "D_v")):
        raise DataError(f"{d}: dimensions in meta.kv disagree with attribute files")
    parts = {k: _read_pairs(d / f, base) for k, f in _SPLIT_FILES.items()}
    new_users = np.array(sorted(base.user_ids.index[u] for u in load_attributes(d / "new_user_attrs.tsv", "user")), dtype=np.int64)
    new_items = np.array(sorted(base.item_ids.index[i] for i in load_attributes(d / "new_item_attrs.tsv", "item")), dtype=np.int64)
    return SplitBundle(
        train=base.with_interactions(parts["train"]),
        val_interactions=parts["val"],
        test_new_user=parts["test_nu"],
        test_new_item=parts["test_ni"],
        test_both=parts["test_nn"],
        new_user_ids=new_users,
        new_item_ids=new_items,
        new_user_attrs={int(u): base.user_attrs[u] for u in new_users},
        new_item_attrs={int(j): base.item_attrs[j] for j in new_items},
        seed=int(meta["seed"]),
        fractions=(float(meta["new_user_frac"]), float(meta["new_item_frac"]), float(meta["val_frac"])),
    )


def dataset_to_files(ds: Dataset, directory: str | os.PathLike) -> tuple[Path, Path, Path]:
    """Write a dataset back out as interaction and attribute files."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = d / "interactions.tsv", d / "user_attrs.tsv", d / "item_attrs.tsv"
    _write_pairs(paths[0], ds, ds.interactions)
    _write_attrs(paths[1], ds, dict(enumerate(ds.user_attrs)), ds.user_ids)
    _write_attrs(paths[2], ds, dict(enumerate(ds.item_attrs)), ds.item_ids)
    return paths
