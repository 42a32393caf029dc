"""Cold-start recommendation with a graph teacher distilled into attribute-graph students."""
from .data import Dataset, SplitBundle, build_dataset, generate_split, load_split, save_split
from .evaluation import EvalReport, EvalSpec, evaluate
from .graph import build_student_graph, build_teacher_graph, normalize_rows
from .model import ModelGraphs, PgdParams, TaskKind, forward, init_params, init_params_for, score
from .propagate import backpropagate, propagate
from .train import TrainConfig, train

__all__ = [
    "Dataset", "SplitBundle", "build_dataset", "generate_split", "load_split", "save_split",
    "EvalReport", "EvalSpec", "evaluate",
    "build_student_graph", "build_teacher_graph", "normalize_rows",
    "ModelGraphs", "PgdParams", "TaskKind", "forward", "init_params",
    "init_params_for", "score",
    "backpropagate", "propagate",
    "TrainConfig", "train",
]
__version__ = "0.1.0"
