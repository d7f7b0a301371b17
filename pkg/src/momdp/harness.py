"""Experiment configs, result rows and the command implementations behind the CLI.

Every command is a pure function of its inputs and seeds. Floats are
written with ``.17g`` so repeated runs produce byte-identical files.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import specfile
from .dist_testing import CALIBRATION_FILE, calibrate
from .envs import EnvRecipe
from .komle import ModelClass, default_beta, run_komle
from .ost import OstConfig, run_ost
from .pomdp import validate
from .spectral import analysis_report

CONFIG_FORMAT = "momdp-config/1"
RESULT_FORMAT = "momdp-results/1"
ALGORITHMS = ("ost", "komle")
METRICS = ("regret", "value", "confset_size", "test_error", "alpha", "rank", "norm")
RESULT_COLUMNS = ("experiment", "seed", "iteration", "metric", "value", "samples")
SCHEMA_DIR = Path(__file__).with_name("schemas")


class ConfigError(ValueError):
    """An experiment config that names an unknown or invalid field value."""


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if x is None:
        return ""
    return format(float(x), ".17g")


def _plain(obj):
    """JSON-ready copy with numpy scalars and arrays converted."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=1)


def load_schema(name: str) -> dict:
    return json.loads((SCHEMA_DIR / f"{name}.schema.json").read_text())


# --------------------------------------------------------------------------
# Configs and rows
# --------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One experiment: an environment, an algorithm and a list of seeds.

    ``env`` is either ``{"recipe": {...}}`` or ``{"spec": path}``. For
    k-OMLE, ``model_class`` is ``{"suite": "revealing" | "vandermonde" |
    "lock"}`` or ``{"specs": [paths], "true_index": i}``.
    """

    experiment_id: str
    env: dict
    algorithm: str
    seeds: list
    hyperparameters: dict = field(default_factory=dict)
    model_class: Optional[dict] = None
    output_dir: str = "results"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"field 'algorithm': unknown algorithm {self.algorithm!r}; "
                              f"expected one of {ALGORITHMS}")
        if not self.seeds:
            raise ConfigError("field 'seeds': must be a nonempty list")
        if not isinstance(self.env, dict) or not ({"recipe", "spec"} & set(self.env)):
            raise ConfigError("field 'env': needs a 'recipe' or a 'spec' entry")
        if "T" not in self.hyperparameters or "k" not in self.hyperparameters:
            raise ConfigError("field 'hyperparameters': 'T' and 'k' are required")
        if self.algorithm == "komle" and not self.model_class:
            raise ConfigError("field 'model_class': required for komle")

    @classmethod
    def from_dict(cls, doc: dict, base: Optional[Path] = None) -> "ExperimentConfig":
        if doc.get("format") != CONFIG_FORMAT:
            raise ConfigError(f"field 'format': expected {CONFIG_FORMAT!r}")
        for name in ("experiment_id", "env", "algorithm", "seeds"):
            if name not in doc:
                raise ConfigError(f"field '{name}': missing")
        cfg = cls(doc["experiment_id"], doc["env"], doc["algorithm"], list(doc["seeds"]),
                  dict(doc.get("hyperparameters", {})), doc.get("model_class"),
                  doc.get("output_dir", "results"))
        cfg._base = base
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from exc
        return cls.from_dict(doc, path.parent)

    def _resolve(self, name) -> Path:
        p = Path(name)
        base = getattr(self, "_base", None)
        return p if p.is_absolute() or base is None else base / p

    def build_env(self):
        if "recipe" in self.env:
            return EnvRecipe.from_dict(self.env["recipe"]).build()
        return specfile.load(self._resolve(self.env["spec"]))

    def build_model_class(self, env):
        from . import suites
        mc = self.model_class or {}
        T = int(self.hyperparameters["T"])
        delta = float(self.hyperparameters.get("delta", 0.1))
        if "suite" in mc:
            name = mc["suite"]
            if name == "revealing":
                return suites.revealing_class(T, delta)[1]
            if name == "vandermonde":
                return suites.vandermonde_class(T, delta)[1]
            if name == "lock":
                H, A = env.horizon, env.num_actions
                good = np.argmax(env.transitions[: H - 1, 0, :, 0], axis=1)
                return suites.lock_class(H, A, good, T, delta)
            raise ConfigError(f"field 'model_class.suite': unknown suite {name!r}")
        if "specs" in mc:
            cands = [specfile.load(self._resolve(p)) for p in mc["specs"]]
            beta = mc.get("beta", default_beta(len(cands), T, delta))
            return ModelClass(cands, float(beta), mc.get("true_index"))
        raise ConfigError("field 'model_class': needs 'suite' or 'specs'")


@dataclass
class ResultRow:
    experiment: str
    seed: int
    iteration: int
    metric: str
    value: float
    samples: int

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric {self.metric!r} is not in the registry {METRICS}")

    def cells(self) -> list:
        return [self.experiment, fmt(self.seed), fmt(self.iteration), self.metric,
                fmt(self.value), fmt(self.samples)]


def rows_to_csv(rows, columns=RESULT_COLUMNS) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow(row.cells() if isinstance(row, ResultRow) else [fmt(c) if not
                                                                        isinstance(c, str) else c
                                                                        for c in row])
    return buf.getvalue()


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------

def cmd_validate(spec_path) -> list:
    """Parse and validate a spec file; returns the list of violations."""
    return validate(specfile.load(spec_path))


ANALYSIS_COLUMNS = ("step", "k", "alpha", "rank", "full_rank", "norm_pinv", "norm_lp")


def analysis_csv(report: dict) -> str:
    per_step = report["distinguishability"]["per_step"]
    rows = [[r["h"] + 1, r["k"], per_step[r["h"]], r["rank"], r["full_rank"], r["norm_pinv"],
             r["norm_lp"]] for r in report["table"]]
    return rows_to_csv(rows, ANALYSIS_COLUMNS)


def cmd_analyze(spec_path, k_max: int = 3, fmt_: str = "json") -> str:
    """Per-step distinguishability and the rank and norm table up to ``k_max``."""
    model = specfile.load(spec_path)
    report = analysis_report(model, k_max)
    report["format"] = "momdp-analysis/1"
    return dumps_json(report) + "\n" if fmt_ == "json" else analysis_csv(report)


def _ost_config(hp: dict) -> OstConfig:
    keys = {f for f in OstConfig.__dataclass_fields__}
    unknown = set(hp) - keys - {"T", "C1"}
    if unknown:
        raise ConfigError(f"field 'hyperparameters': unknown keys {sorted(unknown)}")
    return OstConfig(**{k: v for k, v in hp.items() if k in keys})


def run_experiment(cfg: ExperimentConfig, seed: int):
    """One seed of an experiment; returns ``(rows, trace_rows, log_lines)``."""
    env = cfg.build_env()
    hp = cfg.hyperparameters
    T, k = int(hp["T"]), int(hp["k"])
    H = env.horizon
    rows, trace, log = [], [], []
    if cfg.algorithm == "ost":
        res = run_ost(env, T, _ost_config(hp), seed=seed)
        cum = res.cumulative_regret
        for t in range(T):
            samples = (t + 1) * H * k
            rows.append(ResultRow(cfg.experiment_id, seed, t + 1, "regret", res.regret[t], samples))
            rows.append(ResultRow(cfg.experiment_id, seed, t + 1, "value", res.values[t], samples))
            trace.append([seed, t + 1, res.regret[t], cum[t], samples])
        log = [dict(entry, seed=seed) for entry in res.log]
    else:
        mc = cfg.build_model_class(env)
        res = run_komle(env, mc, T, k, seed=seed)
        for t in range(T):
            samples = (t + 1) * H * H * k
            rows.append(ResultRow(cfg.experiment_id, seed, t + 1, "value", res.values[t], samples))
            rows.append(ResultRow(cfg.experiment_id, seed, t + 1, "confset_size",
                                  res.confset_sizes[t], samples))
            trace.append([seed, t + 1, res.optimistic_values[t], res.values[t],
                          res.confset_sizes[t], samples])
        log = [dict(entry, seed=seed) for entry in res.log]
    return rows, trace, log


OST_TRACE_COLUMNS = ("seed", "iteration", "instantaneous_regret", "cumulative_regret", "samples")
KOMLE_TRACE_COLUMNS = ("seed", "iteration", "optimistic_value", "true_value", "confset_size",
                       "samples")


def cmd_run(config_path, out_dir=None, seeds=None, stderr=None) -> int:
    """Run every seed of a config and write CSV and JSON-lines results.

    Returns the exit code: 0 iff every seed completed.
    """
    cfg = ExperimentConfig.load(config_path)
    out = Path(out_dir or cfg._resolve(cfg.output_dir))
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg.seeds if seeds is None else list(seeds)
    rows, trace, log_lines, failures = [], [], [], []
    for seed in sorted(seeds):
        try:
            r, tr, lg = run_experiment(cfg, seed)
        except Exception as exc:  # reported per seed, the run continues
            failures.append(f"seed {seed}: {type(exc).__name__}: {exc}")
            continue
        rows += r
        trace += tr
        log_lines += lg
    trace_name = "regret_trace.csv" if cfg.algorithm == "ost" else "value_trace.csv"
    trace_cols = OST_TRACE_COLUMNS if cfg.algorithm == "ost" else KOMLE_TRACE_COLUMNS
    (out / "results.csv").write_text(rows_to_csv(rows))
    (out / trace_name).write_text(rows_to_csv(trace, trace_cols))
    (out / "run_log.jsonl").write_text(
        "".join(json.dumps(_plain(line), sort_keys=True) + "\n" for line in log_lines))
    if failures and stderr is not None:
        for line in failures:
            print(line, file=stderr)
    return 0 if not failures else 1


def calibration_dir() -> Optional[Path]:
    cache = os.environ.get("MOMDP_CACHE_DIR")
    return Path(cache) if cache else None


def cmd_calibrate(grid_path=None, out_dir=None, n_trials: Optional[int] = None, seed=None,
                  include_identity: bool = False) -> dict:
    """Monte Carlo calibration of the closeness budget; writes the pinned C1.

    The grid file holds ``{"cells": [{"O", "alpha", "delta"}, ...]}`` and
    optional ``n_trials``, ``seed``, ``margin`` and ``include_identity``.
    A cell may also carry ``k`` to report both error modes at that ``k``.
    The report goes to ``out_dir`` (default ``$MOMDP_CACHE_DIR``) as
    ``calibration.json``.
    """
    grid = {}
    if grid_path is not None:
        grid = json.loads(Path(grid_path).read_text())
    report = calibrate(grid.get("cells"), n_trials or grid.get("n_trials", 10_000),
                       grid.get("seed", 0) if seed is None else seed,
                       grid.get("margin", 1.1),
                       include_identity or bool(grid.get("include_identity", False)))
    report["format"] = "momdp-calibration/1"
    target = Path(out_dir) if out_dir else calibration_dir()
    if target is not None:
        target.mkdir(parents=True, exist_ok=True)
        (target / CALIBRATION_FILE).write_text(dumps_json(report) + "\n")
    return report
