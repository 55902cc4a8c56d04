"""Python access to the lensctr core: data generation, training, ablations."""

import csv
import io
import json
from typing import Any, Dict, List, Optional, Sequence

from . import _core
from ._core import (  # noqa: F401
    ValidationError,
    bench_attention,
    evaluate_auc,
    grad_check_tiny,
    logloss,
    pairwise_auc,
    predict_eval,
)

__all__ = [
    "ValidationError",
    "ablate",
    "bench_attention",
    "config_hash",
    "evaluate_auc",
    "generate",
    "grad_check_tiny",
    "load_config",
    "logloss",
    "pairwise_auc",
    "param_count",
    "predict_eval",
    "resolve_config",
    "train",
]


def _dump(config: Dict[str, Any]) -> str:
    return json.dumps(config)


def load_config(path: str) -> Dict[str, Any]:
    with open(path) as f:
        return json.load(f)


def resolve_config(config: Dict[str, Any]) -> Dict[str, Any]:
    """Every field filled in, vocabulary taken from the dataset section."""
    return json.loads(_core.resolve_config(_dump(config)))


def config_hash(config: Dict[str, Any]) -> str:
    return _core.config_hash(_dump(config))


def param_count(config: Dict[str, Any]) -> Dict[str, int]:
    return json.loads(_core.param_count(_dump(config)))


def generate(spec: Dict[str, Any], out_dir: str = "") -> Dict[str, float]:
    """Generates a dataset from a dataset spec; writes it when out_dir is set. Returns stats."""
    return json.loads(_core.generate(_dump(spec), out_dir))


def train(config: Dict[str, Any], seed: Optional[int] = None, checkpoint: str = "") -> Dict[str, Any]:
    return json.loads(_core.train(_dump(config), seed, checkpoint))


def ablate(config: Dict[str, Any], seeds: Sequence[int] = ()) -> Dict[str, List[Dict[str, str]]]:
    """Runs the configured cells (or the staged grid); returns results and summary rows."""
    results, summary = _core.ablate(_dump(config), list(seeds))
    return {
        "results": list(csv.DictReader(io.StringIO(results))),
        "summary": list(csv.DictReader(io.StringIO(summary))),
    }
