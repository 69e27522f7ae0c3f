"""JSON experiment configuration.

Every key is optional except ``assignments``. Unknown keys are rejected so
that a typo never silently falls back to a default.

Example::

    {
      "dataset": {"kind": "synthetic", "length": 3000},
      "assignments": [{"raw": "EnbPI"},
                      {"trend": "EnbPI", "season": "BinaryPoint", "remainder": "CVPlus"}],
      "alphas": [0.1],
      "seeds": [0, 1, 2, 3, 4],
      "hyperparams": {"lag_order": 1},
      "output_dir": "results"
    }
"""

from __future__ import annotations

import json
import re
from dataclasses import fields
from pathlib import Path
from typing import Optional, Tuple

from .evaluation import DEFAULT_ALPHAS, DatasetSpec, RunSpec, SweepConfig
from .exceptions import ConfigError, IoFailure
from .stl import StlConfig
from .types import HyperParams

TOP_LEVEL_KEYS = {
    "dataset",
    "assignments",
    "alphas",
    "seeds",
    "hyperparams",
    "stl",
    "bonferroni",
    "train_fraction",
    "cal_fraction",
    "test_mode",
    "timing",
    "output_dir",
}


def _line_of(text: str, key: str) -> Optional[int]:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


class _Checker:
    def __init__(self, text: str, source: str):
        self.text = text
        self.source = source

    def fail(self, msg: str, key: Optional[str] = None):
        line = _line_of(self.text, key) if key else None
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: {msg}")

    def keys(self, obj, allowed, section: str):
        if not isinstance(obj, dict):
            self.fail(f"{section} must be an object")
        for key in obj:
            if key not in allowed:
                self.fail(f"unknown key {key!r} in {section}", key)

    def build(self, cls, obj, section: str):
        names = {f.name for f in fields(cls)}
        self.keys(obj, names, section)
        try:
            return cls(**obj)
        except (TypeError, ValueError) as exc:
            self.fail(f"invalid {section}: {exc}", next(iter(obj), None))


def parse_config(doc: dict, text: str = "", source: str = "<config>", base_dir=None) -> Tuple[SweepConfig, Optional[str]]:
    """Build a :class:`SweepConfig` from a decoded document.

    Returns the config and the ``output_dir`` entry (or ``None``).
    """
    chk = _Checker(text, source)
    chk.keys(doc, TOP_LEVEL_KEYS, "config")
    if "assignments" not in doc:
        chk.fail("missing required key 'assignments'")
    dataset = dict(doc.get("dataset", {}))
    chk.keys(dataset, {f.name for f in fields(DatasetSpec)}, "dataset")
    if dataset.get("path") and base_dir is not None and not Path(dataset["path"]).is_absolute():
        dataset["path"] = str(Path(base_dir) / dataset["path"])
    dataset = chk.build(DatasetSpec, dataset, "dataset")
    assignments = []
    for entry in doc["assignments"]:
        try:
            assignments.append(RunSpec.from_dict(entry))
        except ConfigError as exc:
            bad = next((k for k in entry if k not in ("trend", "season", "remainder", "raw")), None) if isinstance(entry, dict) else None
            chk.fail(f"assignment {entry!r}: {exc}", bad)
    hp = chk.build(HyperParams, doc.get("hyperparams", {}), "hyperparams")
    stl = chk.build(StlConfig, doc.get("stl", {}), "stl")
    extras = {k: doc[k] for k in ("bonferroni", "train_fraction", "cal_fraction", "test_mode", "timing") if k in doc}
    if extras.get("test_mode", "extend") not in ("extend", "refit"):
        chk.fail(f"test_mode must be 'extend' or 'refit', got {extras['test_mode']!r}", "test_mode")
    try:
        config = SweepConfig(
            dataset=dataset,
            assignments=tuple(assignments),
            alphas=tuple(doc.get("alphas", DEFAULT_ALPHAS)),
            seeds=tuple(doc.get("seeds", (0, 1, 2, 3, 4))),
            hyperparams=hp,
            stl=stl,
            **extras,
        )
    except (TypeError, ValueError) as exc:
        chk.fail(str(exc))
    return config, doc.get("output_dir")


def load_config(path) -> Tuple[SweepConfig, Optional[str]]:
    """Read and validate a JSON config file; relative data paths resolve against its folder."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(doc, text, str(path), path.parent)
