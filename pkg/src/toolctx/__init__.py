"""Joint optimization of agent instructions and tool schemas from gold tool-call traces."""

from .dataset import Dataset, Example, ToolCall, load_dataset, load_dataset_dir
from .metrics import LossWeights, RolloutMetrics, aggregate, eval_example, match_calls, score
from .optimizer import RunConfig, run
from .schema import CandidateContext, GlobalRule, ParameterSpec, ToolSchema, render_context

__version__ = "0.1.0"

__all__ = [
    "CandidateContext",
    "Dataset",
    "Example",
    "GlobalRule",
    "LossWeights",
    "ParameterSpec",
    "RolloutMetrics",
    "RunConfig",
    "ToolCall",
    "ToolSchema",
    "aggregate",
    "eval_example",
    "load_dataset",
    "load_dataset_dir",
    "match_calls",
    "render_context",
    "run",
    "score",
]
