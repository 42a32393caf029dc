"""Command-line front end: ``pgd split|train|eval|sweep|inspect``.

Every option can also come from a flat ``key=value`` file passed with
``--config``; keys are the long option names without dashes (``batch-size``
or ``batch_size``). Precedence: defaults < preset < config file < flags.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import contextlib
import itertools
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import data as data_mod
from .data import DataError, SplitError
from .evaluation import EvalSpec, evaluate
from .model import CheckpointError, ModelGraphs, TaskKind, forward, load_checkpoint, save_checkpoint
from .train import PRESETS, TrainConfig, TrainingDiverged, train

log = logging.getLogger("pgdrec")


class UsageError(Exception):
    pass


def _float_list(s: str) -> list[float]:
    return [float(x) for x in s.split(",") if x.strip()]


def _int_list(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _bool(s: str | bool) -> bool:
    if isinstance(s, bool):
        return s
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


# (name, type, default, help); flags of type bool are store_true switches
_TRAIN_OPTS: list[tuple[str, Callable, Any, str]] = [
    ("preset", str, None, f"distillation weights preset: {', '.join(sorted(PRESETS))}"),
    ("epochs", int, 100, "training epochs"),
    ("batch-size", int, 2048, "BPR triples per optimizer step"),
    ("lr", float, 0.001, "Adam learning rate"),
    ("gamma", float, 1e-4, "L2 weight on the free user/item tables"),
    ("lambda", float, 1.0, "user embedding distillation weight"),
    ("mu", float, 1.0, "item embedding distillation weight"),
    ("eta", float, 0.01, "prediction distillation weight"),
    ("layers", int, 2, "propagation depth of the teacher (and students by default)"),
    ("user-student-layers", int, None, "override the user-student depth"),
    ("item-student-layers", int, None, "override the item-student depth"),
    ("dim", int, 64, "embedding dimension"),
    ("seed", int, 0, "random seed"),
    ("negatives", int, 1, "negatives per positive"),
    ("eval-every", int, 1, "validate every N epochs"),
    ("distill-users", int, 0, "users per step for the embedding term (0: batch users)"),
    ("distill-items", int, 0, "items per step for the embedding term (0: batch items)"),
    ("distill-pairs", int, 2048, "sampled user-item pairs per step for the prediction term"),
    ("no-detach-teacher", bool, False, "let distillation gradients reach the teacher"),
    ("binarize-student-graph", bool, False, "use 0/1 student edge weights instead of counts"),
]

_OPTS: dict[str, list[tuple[str, Callable, Any, str]]] = {
    "split": [
        ("interactions", str, None, "user<TAB>item file"),
        ("user-attrs", str, None, "user attribute file"),
        ("item-attrs", str, None, "item attribute file"),
        ("out", str, None, "output split directory"),
        ("new-user-frac", float, 0.3, "fraction of users held out as new"),
        ("new-item-frac", float, 0.3, "fraction of items held out as new"),
        ("val-frac", float, 0.1, "validation fraction of old x old interactions"),
        ("seed", int, 0, "random seed"),
    ],
    "train": [
        ("split", str, None, "split directory"),
        ("out", str, None, "output directory for checkpoint.bin and train.log"),
        *_TRAIN_OPTS,
    ],
    "eval": [
        ("split", str, None, "split directory"),
        ("checkpoint", str, None, "checkpoint file"),
        ("tasks", str, "warm,nu,ni,nn", "comma list of warm,nu,ni,nn"),
        ("k", str, "10,20,50", "comma list of cutoffs"),
        ("per-interaction", bool, False, "evaluate each test interaction separately"),
        ("json", str, None, "also write a structured report here"),
    ],
    "sweep": [
        ("split", str, None, "split directory"),
        ("grid-lambda", str, None, "comma list of lambda values"),
        ("grid-mu", str, None, "comma list of mu values"),
        ("grid-eta", str, None, "comma list of eta values"),
        ("grid-layers", str, None, "comma list of depths"),
        ("tasks", str, "nu,ni,nn", "tasks to report"),
        ("out", str, None, "optional path for the result table"),
        *_TRAIN_OPTS,
    ],
    "inspect": [
        ("checkpoint", str, None, "checkpoint file"),
        ("split", str, None, "split directory"),
    ],
}

_REQUIRED = {
    "split": ("interactions", "user-attrs", "item-attrs", "out"),
    "train": ("split", "out"),
    "eval": ("split", "checkpoint"),
    "sweep": ("split",),
    "inspect": (),
}


def _dest(name: str) -> str:
    return name.replace("-", "_")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pgd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd, opts in _OPTS.items():
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="key=value file with option defaults")
        for name, typ, default, helptext in opts:
            if typ is bool:
                p.add_argument(f"--{name}", action="store_const", const=True, default=None,
                               help=helptext)
            else:
                shown = f" (default: {default})" if default is not None else ""
                p.add_argument(f"--{name}", type=typ, default=None, help=helptext + shown)
    return parser


def resolve_options(command: str, ns: argparse.Namespace) -> dict[str, Any]:
    """Merge defaults, preset, config file and explicit flags."""
    opts = _OPTS[command]
    types = {_dest(n): t for n, t, _, _ in opts}
    values = {_dest(n): d for n, _, d, _ in opts}

    from_file: dict[str, Any] = {}
    if ns.config:
        try:
            raw = data_mod.read_kv(ns.config)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {ns.config}") from None
        for key, text in raw.items():
            k = _dest(key)
            if k not in types:
                raise UsageError(f"unknown config key {key!r} for '{command}'")
            conv = _bool if types[k] is bool else types[k]
            try:
                from_file[k] = conv(text)
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {exc}") from None
    flags = {k: getattr(ns, k) for k in types if getattr(ns, k, None) is not None}

    preset = flags.get("preset", from_file.get("preset"))
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        for k, v in PRESETS[preset].items():
            values["lambda" if k == "lam" else k] = v
    values.update(from_file)
    values.update(flags)

    missing = [n for n in _REQUIRED[command] if values.get(_dest(n)) is None]
    if missing:
        raise UsageError(f"missing required option(s): {', '.join('--' + m for m in missing)}")
    return values


def train_config(v: dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=v["lr"], batch_size=v["batch_size"], epochs=v["epochs"],
            gamma=v["gamma"], lam=v["lambda"], mu=v["mu"], eta=v["eta"], layers=v["layers"],
            user_student_layers=v["user_student_layers"],
            item_student_layers=v["item_student_layers"], dim=v["dim"], seed=v["seed"],
            negatives_per_positive=v["negatives"], eval_every=v["eval_every"],
            distill_sample_sizes=(v["distill_users"], v["distill_items"], v["distill_pairs"]),
            detach_teacher=not v["no_detach_teacher"],
            binarize_student_graph=bool(v["binarize_student_graph"]),
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid training configuration: {exc}") from None


def parse_tasks(text: str) -> list[TaskKind]:
    out = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        try:
            out.append(TaskKind(tok))
        except ValueError:
            raise UsageError(f"unknown task {tok!r}; expected warm, nu, ni or nn") from None
    if not out:
        raise UsageError("no tasks given")
    return out


def parse_ks(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(_int_list(text))
    except ValueError:
        raise UsageError(f"bad K list {text!r}") from None
    if not ks or min(ks) < 1:
        raise UsageError("K values must be positive integers")
    return ks


# ---------------------------------------------------------------------------
# subcommands


def cmd_split(v: dict[str, Any], out=None) -> data_mod.SplitBundle:
    out = out or sys.stdout
    for key in ("interactions", "user_attrs", "item_attrs"):
        if not Path(v[key]).is_file():
            raise UsageError(f"input file not found: {v[key]}")
    pairs = data_mod.load_interactions(v["interactions"])
    ds = data_mod.build_dataset(
        pairs,
        data_mod.load_attributes(v["user_attrs"], "user"),
        data_mod.load_attributes(v["item_attrs"], "item"),
    )
    try:
        bundle = data_mod.generate_split(ds, v["new_user_frac"], v["new_item_frac"], v["val_frac"], v["seed"])
    except SplitError as exc:
        raise UsageError(str(exc)) from None
    data_mod.save_split(bundle, v["out"])
    print(data_mod.format_statistics(bundle), file=out)
    return bundle


def _write_manifest(path: Path, cfg: TrainConfig) -> None:
    d = asdict(cfg)
    d["distill_sample_sizes"] = ",".join(map(str, d["distill_sample_sizes"]))
    path.write_text("".join(f"{k}={v}\n" for k, v in d.items()), encoding="utf-8")


def cmd_train(v: dict[str, Any], out=None):
    out = out or sys.stdout
    cfg = train_config(v)
    split = data_mod.load_split(v["split"])
    outdir = Path(v["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    _write_manifest(outdir / "config.kv", cfg)
    with open(outdir / "train.log", "w", encoding="utf-8", newline="\n") as logfh:
        def on_epoch(rec):
            logfh.write(rec.line() + "\n")
            logfh.flush()
            print(rec.line(), file=out)
        try:
            result = train(split, cfg, on_epoch=on_epoch)
        except TrainingDiverged as exc:
            save_checkpoint(exc.last_good, outdir / "checkpoint.bin")
            raise
    save_checkpoint(result.params, outdir / "checkpoint.bin")
    return result


def run_eval(split, params, tasks, ks, per_interaction=False, checkpoint_id=""):
    graphs = ModelGraphs.build(split.train)
    reports = []
    outputs = forward(params, graphs)
    for task in tasks:
        reports.append(evaluate(split, params, EvalSpec(task, ks, per_interaction), outputs=outputs,
                                checkpoint_id=checkpoint_id))
    return reports


def cmd_eval(v: dict[str, Any], out=None):
    out = out or sys.stdout
    tasks = parse_tasks(v["tasks"])
    ks = parse_ks(v["k"])
    split = data_mod.load_split(v["split"])
    t = split.train
    params = load_checkpoint(v["checkpoint"], (t.num_users, t.num_items, t.num_user_attrs, t.num_item_attrs))
    reports = run_eval(split, params, tasks, ks, bool(v["per_interaction"]), Path(v["checkpoint"]).name)
    for r in reports:
        for line in r.lines():
            print(line, file=out)
    if v.get("json"):
        Path(v["json"]).write_text(
            json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return reports


def cmd_sweep(v: dict[str, Any], out=None) -> list[dict[str, Any]]:
    out = out or sys.stdout
    base = train_config(v)
    tasks = parse_tasks(v["tasks"])
    axes = {}
    for key, field_name, conv in (("grid_lambda", "lam", _float_list), ("grid_mu", "mu", _float_list),
                                  ("grid_eta", "eta", _float_list), ("grid_layers", "layers", _int_list)):
        if v.get(key):
            try:
                vals = conv(v[key])
            except ValueError:
                raise UsageError(f"cannot parse --{key.replace('_', '-')}={v[key]!r}") from None
            if vals:
                axes[field_name] = vals
    if not axes:
        raise UsageError("empty grid: give at least one of --grid-lambda/--grid-mu/--grid-eta/--grid-layers")

    split = data_mod.load_split(v["split"])
    names = list(axes)
    points = [dict(zip(names, combo)) for combo in itertools.product(*axes.values())]
    header = "lambda\tmu\teta\tlayers\ttask\tndcg20\thr20\tstatus"
    lines = [header]
    print(header, file=out)
    rows = []
    for point in points:
        settings = {**asdict(base), **point}
        try:
            cfg = TrainConfig(**settings)
            result = train(split, cfg)
            reports = run_eval(split, result.params, tasks, (20,))
            status = "ok"
        except Exception as exc:  # one failed point does not stop the sweep
            log.error("sweep point %s failed: %s", point, exc)
            reports, status = [None] * len(tasks), f"failed:{type(exc).__name__}"
        for task, rep in zip(tasks, reports):
            row = {"lambda": settings["lam"], "mu": settings["mu"], "eta": settings["eta"],
                   "layers": settings["layers"],
                   "task": task.value,
                   "ndcg20": rep.ndcg[20] if rep else float("nan"),
                   "hr20": rep.hr[20] if rep else float("nan"), "status": status}
            rows.append(row)
            line = (f"{row['lambda']:g}\t{row['mu']:g}\t{row['eta']:g}\t{row['layers']}\t{row['task']}\t"
                    f"{row['ndcg20']:.8f}\t{row['hr20']:.8f}\t{status}")
            lines.append(line)
            print(line, file=out)
    if v.get("out"):
        Path(v["out"]).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows


def cmd_inspect(v: dict[str, Any], out=None):
    out = out or sys.stdout
    if not v.get("checkpoint") and not v.get("split"):
        raise UsageError("give --checkpoint and/or --split")
    if v.get("checkpoint"):
        p = load_checkpoint(v["checkpoint"])
        M, N, Du, Dv, d = p.dims
        print(f"checkpoint={v['checkpoint']} M={M} N={N} D_u={Du} D_v={Dv} d={d} "
              f"L={p.layers} L_su={p.user_student_layers} L_sv={p.item_student_layers} seed={p.seed}", file=out)
        for name, t in p.tables().items():
            print(f"  {name}: shape={t.shape} norm={np.linalg.norm(t):.6g}", file=out)
    if v.get("split"):
        split = data_mod.load_split(v["split"])
        print(data_mod.format_statistics(split), file=out)
        g = ModelGraphs.build(split.train)
        for name, adj in (("teacher", g.teacher.adjacency), ("user_student", g.user_student.adjacency),
                          ("item_student", g.item_student.adjacency)):
            print(f"graph={name} nodes={adj.num_nodes} stored_edges={adj.num_edges} "
                  f"isolated={int((adj.degree == 0).sum())}", file=out)


COMMANDS = {"split": cmd_split, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep,
            "inspect": cmd_inspect}


@contextlib.contextmanager
def _thread_limit():
    n = os.environ.get("PGD_THREADS")
    if not n:
        yield
        return
    with threadpool_limits(limits=int(n)):
        yield


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = resolve_options(ns.command, ns)
        with _thread_limit():
            COMMANDS[ns.command](values)
    except (UsageError, DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"pgd {ns.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"pgd {ns.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
