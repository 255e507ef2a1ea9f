"""Grid orchestration: sample, grid-train, evaluate, rank, aggregate.

A *task* is one (dataset, replicate seed, scenario, strategy) and covers
every sampling percent; the full-data leaderboard is the task with
``strategy=None``.  Each (task, percent) *cell* trains the whole slate on
the sampled train split, selects configs on the original validation
split and scores them on the original test split.  Cells are cached on
disk under a hash of everything that determines them.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .algorithms import DEFAULT_SLATE, Algorithm, TrainConfig, fit_selected
from .data import SCENARIOS, CsvSchema, Dataset, filter_min_interactions, ingest_csv, make_split
from .evaluation import CELLS, PERCENTS, Leaderboard, attach_p_mle, compute_psi
from .graph import build_graph
from .metrics import evaluate
from .samplers import BASELINE_STRATEGIES, GRAPH_STRATEGIES, SampleSpec, sample
from .svp import SVP_STRATEGIES, SvpConfig, importance_table, parse_strategy, svp_sample, train_proxy
from .synthetic import SynthConfig, generate_synthetic
from .utils import derive_seed

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

ALL_STRATEGIES = BASELINE_STRATEGIES + SVP_STRATEGIES

# PopRec has no rating prediction, so it sits out the explicit leaderboard
PERTINENT = {"explicit": ("bias-only", "mf", "neumf"),
             "implicit": ("poprec", "bias-only", "mf", "neumf"),
             "sequential": ("poprec", "bias-only", "mf", "neumf")}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSource:
    name: str
    path: str | None = None
    synthetic: dict | None = None
    schema: dict = field(default_factory=dict)
    min_interactions: int = 3

    def load(self, replicate: int, root_seed: int) -> Dataset:
        if self.synthetic is not None:
            params = dict(self.synthetic)
            # without an explicit seed every replicate draws a fresh dataset
            params.setdefault("seed", derive_seed(root_seed, self.name, "data", replicate))
            d = generate_synthetic(SynthConfig(**params))
        else:
            d = ingest_csv(self.path, CsvSchema(**self.schema))
        return filter_min_interactions(d, self.min_interactions)


@dataclass(frozen=True)
class ExperimentConfig:
    datasets: tuple
    strategies: tuple = ALL_STRATEGIES
    percents: tuple = PERCENTS
    scenarios: tuple = SCENARIOS
    seeds: tuple = (0,)
    root_seed: int = 0
    algorithms: tuple = DEFAULT_SLATE
    train: TrainConfig = TrainConfig()
    svp: SvpConfig = SvpConfig()
    sampler_params: dict = field(default_factory=dict)
    # per-scenario TrainConfig overrides; sparse explicit ratings want a
    # smaller step and heavier l2 than the pairwise loss
    scenario_train: dict = field(default_factory=lambda: {
        "explicit": {"learning_rate": 0.01, "l2_reg": 0.1}})
    # validation checkpoints for epoch selection (None: last epoch only)
    checkpoint_every: int | None = 10
    allow_partial: bool = False

    def train_config(self, scenario: str, seed: int) -> TrainConfig:
        return replace(self.train, **self.scenario_train.get(scenario, {}), seed=seed)

    def to_dict(self) -> dict:
        return {
            "datasets": [asdict(d) for d in self.datasets],
            "strategies": list(self.strategies),
            "percents": [float(p) for p in self.percents],
            "scenarios": list(self.scenarios),
            "seeds": list(self.seeds),
            "root_seed": self.root_seed,
            "algorithms": [asdict(a) for a in self.algorithms],
            "train": asdict(self.train),
            "svp": asdict(self.svp),
            "sampler_params": dict(sorted(self.sampler_params.items())),
            "scenario_train": {k: dict(sorted(v.items()))
                               for k, v in sorted(self.scenario_train.items())},
            "checkpoint_every": self.checkpoint_every,
            "allow_partial": self.allow_partial,
        }

    def hash(self) -> str:
        return _digest(self.to_dict())


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if not raw.get("datasets"):
        raise ConfigError("config declares no datasets")
    datasets = []
    for d in raw.pop("datasets"):
        if ("path" in d) == ("synthetic" in d):
            raise ConfigError(f"dataset {d.get('name')!r} needs exactly one of path / synthetic")
        datasets.append(DatasetSource(**d))
    if len({d.name for d in datasets}) != len(datasets):
        raise ConfigError("dataset names must be unique")
    out = {"datasets": tuple(datasets)}
    strategies = raw.pop("strategies", "all")
    if strategies == "all":
        strategies = ALL_STRATEGIES
    bad = [s for s in strategies if s not in ALL_STRATEGIES]
    if bad:
        raise ConfigError(f"unknown strategies: {bad}")
    out["strategies"] = tuple(strategies)
    if "percents" in raw:
        percents = tuple(float(p) for p in raw.pop("percents"))
        if not all(0 < p <= 100 for p in percents):
            raise ConfigError("percents must lie in (0, 100]")
        out["percents"] = percents
    if "scenarios" in raw:
        scenarios = tuple(raw.pop("scenarios"))
        if not set(scenarios) <= set(SCENARIOS):
            raise ConfigError(f"scenarios must be among {SCENARIOS}")
        out["scenarios"] = scenarios
    if "seeds" in raw:
        out["seeds"] = tuple(int(s) for s in raw.pop("seeds"))
    if "algorithms" in raw:
        algs = tuple(Algorithm(**a) for a in raw.pop("algorithms"))
        if len({a.name for a in algs}) != len(algs):
            raise ConfigError("algorithm names must be unique")
        out["algorithms"] = algs
    if "train" in raw:
        out["train"] = TrainConfig(**raw.pop("train"))
    if "svp" in raw:
        s = dict(raw.pop("svp"))
        proxy = TrainConfig(**s.pop("proxy")) if "proxy" in s else SvpConfig().proxy
        out["svp"] = SvpConfig(proxy=proxy, **s)
    if "scenario_train" in raw:
        st = raw.pop("scenario_train")
        fields = set(TrainConfig.__dataclass_fields__) - {"seed"}
        for f, over in st.items():
            if f not in SCENARIOS or not set(over) <= fields:
                raise ConfigError(f"bad scenario_train entry {f!r}: {over}")
        out["scenario_train"] = {f: dict(v) for f, v in st.items()}
    out.update(raw)
    return ExperimentConfig(**out)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    try:
        return config_from_dict(raw)
    except TypeError as e:
        raise ConfigError(f"{path}: {e}") from None


# --------------------------------------------------------------------------
# Cells


@dataclass(frozen=True)
class Task:
    dataset: str
    replicate: int
    scenario: str
    strategy: str | None

    @property
    def replicate_name(self) -> str:
        return f"{self.dataset}/seed={self.replicate}"


_DATA: dict = {}


def _prepared(config: ExperimentConfig, task: Task):
    key = (task.dataset, task.replicate, task.scenario, config.root_seed)
    if key not in _DATA:
        source = next(d for d in config.datasets if d.name == task.dataset)
        data = source.load(task.replicate, config.root_seed)
        seed = derive_seed(config.root_seed, task.dataset, task.replicate, "split")
        _DATA.clear()  # one split resident per worker keeps memory flat
        _DATA[key] = (data.fingerprint(), make_split(data, task.scenario, seed))
    return _DATA[key]


def _cell_key(config: ExperimentConfig, fingerprint: str, task: Task, percent) -> str:
    c = config.to_dict()
    return _digest({
        "version": __version__, "dataset": fingerprint, "task": asdict(task),
        "percent": None if percent is None else float(percent), "root_seed": config.root_seed,
        "algorithms": c["algorithms"], "train": c["train"], "svp": c["svp"],
        "sampler_params": c["sampler_params"], "scenario_train": c["scenario_train"],
        "checkpoint_every": c["checkpoint_every"],
    })


def _slate(config: ExperimentConfig, scenario: str):
    return [a for a in config.algorithms if a.kind in PERTINENT[scenario]]


def _fit_and_score(config: ExperimentConfig, task: Task, split, train_set: Dataset):
    metrics, selected = {}, {}
    for alg in _slate(config, task.scenario):
        seed = derive_seed(config.root_seed, task.dataset, task.replicate, task.scenario, alg.name)
        model, chosen, val = fit_selected(split, alg, config.train_config(task.scenario, seed),
                                          train_set, config.checkpoint_every)
        metrics[alg.name] = {k: m.value for k, m in evaluate(model, split, "test").items()}
        selected[alg.name] = {"config": asdict(chosen), "validation": val}
    return metrics, selected


class _Sampler:
    """Per-task sampling closure; SVP importance is built once per task."""

    def __init__(self, config: ExperimentConfig, task: Task, train: Dataset):
        self.config, self.task, self.train = config, task, train
        self.graph = build_graph(train) if task.strategy in GRAPH_STRATEGIES else None
        self.table = None
        if task.strategy in SVP_STRATEGIES:
            proxy, gran, prop = parse_strategy(task.strategy)
            seed = derive_seed(config.root_seed, task.dataset, task.replicate, task.scenario,
                               "proxy", proxy)
            trace = train_proxy(train, proxy, task.scenario, config.svp, seed)
            self.table = importance_table(train, task.scenario, proxy, prop, config.svp,
                                          seed, trace).for_granularity(gran)

    def __call__(self, percent):
        t = self.task
        seed = derive_seed(self.config.root_seed, t.dataset, t.replicate, t.scenario,
                           t.strategy, float(percent))
        spec = SampleSpec(percent, t.strategy, seed, dict(self.config.sampler_params))
        if self.table is not None:
            return svp_sample(self.train, self.table, spec)
        return sample(self.train, spec, self.graph)


def _error(e: BaseException) -> str:
    return f"{type(e).__module__.replace('svpcf.', '')}.{type(e).__name__}: {e}"


def run_task(config: ExperimentConfig, task: Task, cache_dir=None) -> list[dict]:
    """Every cell of ``task``; failures are returned as records, never raised."""
    try:
        fingerprint, split = _prepared(config, task)
    except Exception as e:
        percents = [None] if task.strategy is None else config.percents
        return [_record(task, p, error=_error(e)) for p in percents]
    percents = [None] if task.strategy is None else list(config.percents)
    out, sampler = [], None
    for p in percents:
        key = _cell_key(config, fingerprint, task, p)
        path = Path(cache_dir) / f"{key}.json" if cache_dir else None
        if path is not None and path.exists():
            out.append(json.loads(path.read_text()))
            continue
        t0 = time.perf_counter()
        try:
            if p is None:
                train_set, info = split.train, {"budget": len(split.train)}
            else:
                if sampler is None:
                    sampler = _Sampler(config, task, split.train)
                res = sampler(p)
                train_set = res.retained
                info = {"budget": res.budget, "sampler_seed": res.seed,
                        "provenance": res.provenance}
            metrics, selected = _fit_and_score(config, task, split, train_set)
            rec = _record(task, p, key=key, metrics=metrics, selected=selected,
                          train_size=len(train_set), **info)
        except Exception as e:
            rec = _record(task, p, key=key, error=_error(e),
                          trace=traceback.format_exc(limit=3))
        rec["seconds"] = time.perf_counter() - t0
        if path is not None and rec["error"] is None:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(_jsonable(rec), sort_keys=True))
            tmp.replace(path)
        out.append(_jsonable(rec))
    return out


def _record(task: Task, percent, error=None, **kw) -> dict:
    return {"dataset": task.replicate_name, "source": task.dataset, "replicate": task.replicate,
            "scenario": task.scenario, "strategy": task.strategy,
            "percent": None if percent is None else float(percent), "error": error, **kw}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def tasks_for(config: ExperimentConfig) -> list[Task]:
    out = []
    for d in config.datasets:
        for s in config.seeds:
            for f in config.scenarios:
                out.append(Task(d.name, s, f, None))
                out.extend(Task(d.name, s, f, st) for st in config.strategies)
    return out


def _run_task_star(args):
    return run_task(*args)


# --------------------------------------------------------------------------
# Aggregation


def leaderboards(cells: Sequence[dict]) -> list[Leaderboard]:
    boards = []
    for c in cells:
        if c["error"] is not None:
            continue
        labels = next(iter(c["metrics"].values())).keys()
        for m in labels:
            if m not in CELLS[c["scenario"]]:
                continue
            values = {alg: v[m] for alg, v in c["metrics"].items()}
            boards.append(Leaderboard(c["dataset"], c["scenario"], m, values,
                                      c["strategy"], c["percent"]))
    return boards


@dataclass
class ExperimentResult:
    report: object
    payload: dict
    cells: list
    artifacts: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [c for c in self.cells if c["error"] is not None]


def run_experiment(config: ExperimentConfig, out_dir=None, jobs: int = 1, cache_dir=None,
                   progress=None) -> ExperimentResult:
    """Run every cell, then compute taus, Psi and P_MLE.

    The report JSON is a pure function of ``config``; wall-clock data
    lives only under its ``provenance`` key.
    """
    if jobs < 1:
        raise ConfigError("jobs must be >= 1")
    started = datetime.now(timezone.utc).isoformat()
    tasks = tasks_for(config)
    cells = []
    if jobs == 1:
        for k, t in enumerate(tasks):
            cells.extend(run_task(config, t, cache_dir))
            if progress:
                progress(k + 1, len(tasks), t)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            args = [(config, t, cache_dir) for t in tasks]
            for k, (t, res) in enumerate(zip(tasks, pool.map(_run_task_star, args))):
                cells.extend(res)
                if progress:
                    progress(k + 1, len(tasks), t)

    boards = leaderboards(cells)
    failed = [c for c in cells if c["error"] is not None]
    cells_map = {f: CELLS[f] for f in config.scenarios}
    report = compute_psi(boards, config.strategies, config.percents, cells_map,
                         allow_partial=config.allow_partial or bool(failed))
    # a dataset whose every cell failed leaves no full leaderboard to miss
    report.partial = report.partial or bool(failed)
    attach_p_mle(report, boards, config.strategies)

    timings = [{k: c.get(k) for k in ("dataset", "scenario", "strategy", "percent", "seconds")}
               for c in cells]
    deterministic = [{k: v for k, v in c.items() if k not in ("seconds", "trace")} for c in cells]
    payload = {
        "version": __version__,
        "config": config.to_dict(),
        "config_hash": config.hash(),
        "root_seed": config.root_seed,
        "seeds": list(config.seeds),
        "cells": deterministic,
        "failures": [{k: c[k] for k in ("dataset", "scenario", "strategy", "percent", "error")}
                     for c in failed],
        "leaderboards": [{"dataset": b.dataset, "scenario": b.scenario, "metric": b.metric,
                          "strategy": b.strategy, "percent": b.percent,
                          "values": dict(sorted(b.values.items())),
                          "ranks": dict(sorted(b.ranks.items()))} for b in boards],
        **report.to_dict(),
        "provenance": {"started": started,
                       "finished": datetime.now(timezone.utc).isoformat(),
                       "python": sys.version.split()[0], "numpy": np.__version__,
                       "jobs": jobs, "timings": timings},
    }
    payload = _jsonable(payload)
    result = ExperimentResult(report, payload, cells)
    if out_dir is not None:
        result.artifacts = write_artifacts(payload, out_dir)
    return result


def _write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def write_artifacts(payload: dict, out_dir) -> dict:
    """Report JSON plus plot-ready CSV tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    p = out / "report.json"
    p.write_text(json.dumps(payload, indent=1, sort_keys=True))
    paths["report"] = p

    taus = payload["taus"]
    by_sp, by_sfm = {}, {}
    for t in taus:
        by_sp.setdefault((t["strategy"], t["percent"]), []).append(t["tau"])
        by_sfm.setdefault((t["strategy"], t["scenario"], t["metric"]), []).append(t["tau"])
    paths["tau_vs_percent"] = _write_csv(
        out / "tau_vs_percent.csv", ["strategy", "percent", "mean_tau", "n_cells"],
        [(s, p, float(np.mean(v)), len(v)) for (s, p), v in sorted(by_sp.items())])
    paths["tau_by_metric"] = _write_csv(
        out / "tau_by_metric.csv", ["strategy", "scenario", "metric", "mean_tau", "n_cells"],
        [(s, f, m, float(np.mean(v)), len(v)) for (s, f, m), v in sorted(by_sfm.items())])
    paths["p_mle"] = _write_csv(
        out / "p_mle.csv", ["algorithm", "scenario", "percent", "p_mle"],
        [(r["algorithm"], r["scenario"], r["percent"], r["p_mle"]) for r in payload["p_mle"]])
    paths["psi"] = _write_csv(
        out / "psi.csv", ["dataset", "strategy", "psi"],
        [(r["dataset"], r["strategy"], r["psi"]) for r in payload["psi"]]
        + [("mean", s, v) for s, v in payload["psi_mean"].items()])
    paths["leaderboards"] = _write_csv(
        out / "leaderboards.csv",
        ["dataset", "scenario", "metric", "strategy", "percent", "algorithm", "value", "rank"],
        [(b["dataset"], b["scenario"], b["metric"], b["strategy"] or "full",
          b["percent"] if b["percent"] is not None else 100.0, a, b["values"][a], b["ranks"][a])
         for b in payload["leaderboards"] for a in b["values"]])
    return paths
