"""``svpcf`` command line: ingest, sample, svp, train, evaluate, psi, synth, report.

Every subcommand writes its artifacts plus ``provenance.json`` (argv,
parsed options, seeds, package version, sha256 of every input file, and
a wall-clock stamp, which is the only non-reproducible field).  Nothing
is written when argument parsing or the computation fails.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .algorithms import KINDS, ModelParams, PopularityModel, TrainConfig, train
from .data import (SCENARIOS, CsvSchema, export_csv, export_split, filter_min_interactions,
                   ingest_csv, load_interactions, load_split, make_split)
from .experiment import load_config, run_experiment, write_artifacts
from .metrics import evaluate
from .samplers import BASELINE_STRATEGIES, SampleSpec, sample
from .svp import GRANULARITIES, PROXIES, SvpConfig, importance_table, strategy_name, svp_sample
from .synthetic import SynthConfig, generate_synthetic


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _provenance(args, inputs, seeds, outputs) -> dict:
    opts = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
            if k not in ("func", "argv")}
    files = []
    for p in inputs:
        p = Path(p)
        for f in sorted(p.iterdir()) if p.is_dir() else [p]:
            if f.is_file():
                files.append({"path": str(f), "sha256": _sha256(f)})
    return {"command": args.command, "argv": args.argv, "options": opts, "seeds": seeds,
            "version": __version__, "inputs": files, "outputs": [str(o) for o in outputs],
            "created": datetime.now(timezone.utc).isoformat()}


def _finish(args, out_dir: Path, inputs, seeds, outputs) -> None:
    prov = _provenance(args, inputs, seeds, outputs)
    (out_dir / "provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True))


def _param(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _percent(text: str) -> float:
    p = float(text)
    if not 0 < p <= 100:
        raise argparse.ArgumentTypeError("percent must lie in (0, 100]")
    return p


def _schema(args) -> CsvSchema:
    if args.columns:
        names = args.columns.split(",")
        if len(names) not in (2, 3, 4):
            raise ValueError("--columns takes 2 to 4 comma-separated entries")
        names += [None] * (4 - len(names))
        if args.no_header:
            names = [int(n) if n is not None else None for n in names]
        return CsvSchema(*names, delimiter=args.delimiter, header=not args.no_header)
    if args.no_header:
        return CsvSchema.positional(args.delimiter)
    return CsvSchema(delimiter=args.delimiter)


def _add_csv_opts(p):
    p.add_argument("--delimiter", default=",")
    p.add_argument("--no-header", action="store_true", help="columns are positional")
    p.add_argument("--columns", help="user,item[,rating[,timestamp]] names (or positions)")


def _add_train_input(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--split", type=Path, help="split directory written by `ingest`")
    g.add_argument("--train", type=Path, help="a bare train-set CSV")
    _add_csv_opts(p)


def _load_train(args):
    if args.split is not None:
        return load_split(args.split).train, args.split
    return ingest_csv(args.train, _schema(args)), args.train


# --------------------------------------------------------------------------
# Subcommands


def cmd_ingest(args):
    d = filter_min_interactions(ingest_csv(args.input, _schema(args)), args.min_interactions)
    bundle = make_split(d, args.scenario, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    export_split(bundle, args.out)
    export_csv(d, args.out / "interactions.csv")
    outputs = ["train.csv", "validation.csv", "test.csv", "users.csv", "items.csv",
               "scenario.txt", "interactions.csv"]
    _finish(args, args.out, [args.input], {"split": args.seed}, outputs)
    print(f"{len(d)} interactions, {d.num_users} users, {d.num_items} items -> "
          f"train {len(bundle.train)} / validation {len(bundle.validation)} / test {len(bundle.test)}")


def cmd_sample(args):
    d, src = _load_train(args)
    spec = SampleSpec(args.percent, args.strategy, args.seed, dict(args.params))
    res = sample(d, spec)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    export_csv(res.retained, args.out)
    prov = _provenance(args, [src], {"sampler": args.seed}, [args.out])
    prov["result"] = {"budget": res.budget, "strategy": res.strategy,
                      "provenance": _plain(res.provenance)}
    args.out.with_suffix(".provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True))
    print(f"kept {len(res.retained)} of {len(d)} interactions -> {args.out}")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def cmd_svp(args):
    d, src = _load_train(args)
    scenario = args.scenario
    if scenario is None:
        scenario = load_split(args.split).scenario if args.split else "explicit"
    prop = args.prop == "on"
    config = SvpConfig(epochs=args.epochs, n_neg=args.n_neg, A=args.A, B=args.B)
    table = importance_table(d, scenario, args.proxy, prop, config, args.seed)
    table = table.for_granularity(args.granularity)
    name = strategy_name(args.proxy, args.granularity, prop)
    res = svp_sample(d, table, SampleSpec(args.percent, name, args.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "importance.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if args.granularity == "interaction":
            w.writerow(["user", "item", "importance", "propensity"])
            p = table.propensity if table.propensity is not None else np.full(len(d), np.nan)
            for u, i, v, q in zip(d.users, d.items, table.interaction, p):
                w.writerow([d.user_ids[u], d.item_ids[i], repr(float(v)), repr(float(q))])
        else:
            w.writerow(["user", "importance", "propensity"])
            pu = None
            if prop:
                from .svp import PropensityParams
                pu = PropensityParams.from_train(d, args.A, args.B).p_user(np.arange(d.num_users))
            for u in np.flatnonzero(d.user_counts() > 0):
                w.writerow([d.user_ids[u], repr(float(table.user[u])),
                            repr(float(pu[u])) if pu is not None else "nan"])
    export_csv(res.retained, args.out / "sample.csv")
    _finish(args, args.out, [src], {"proxy": args.seed, "sampler": args.seed},
            ["importance.csv", "sample.csv"])
    print(f"{name}: kept {len(res.retained)} of {len(d)} interactions -> {args.out}")


def _save_model(model, path: Path):
    if isinstance(model, PopularityModel):
        path.write_text(json.dumps({"kind": "poprec", "counts": model.counts.tolist(),
                                    "num_users": model.num_users}))
    else:
        model.to_json(path)


def _load_model(path: Path):
    payload = json.loads(Path(path).read_text())
    if payload["kind"] == "poprec":
        return PopularityModel(np.asarray(payload["counts"], dtype=float), payload["num_users"])
    return ModelParams.from_json(path)


def cmd_train(args):
    bundle = load_split(args.split)
    train_set = bundle.train if args.train_csv is None else load_interactions(args.train_csv, args.split)
    config = TrainConfig(args.latent_size, args.learning_rate, args.dropout, args.l2_reg,
                         args.epochs, args.n_neg, args.seed)
    model = train(train_set, args.model, bundle.scenario, config)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    _save_model(model, args.out)
    inputs = [args.split] + ([args.train_csv] if args.train_csv else [])
    prov = _provenance(args, inputs, {"train": args.seed}, [args.out])
    args.out.with_suffix(".provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True))
    print(f"trained {args.model} on {len(train_set)} interactions -> {args.out}")


def cmd_evaluate(args):
    bundle = load_split(args.split)
    model = _load_model(args.model)
    values = evaluate(model, bundle, args.target)
    out = {"scenario": bundle.scenario, "target": args.target,
           "metrics": [{"name": m.name, "k": m.k, "value": m.value, "users": m.n_users,
                        "skipped_users": m.skipped_users} for m in values.values()]}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(out, indent=1))
    prov = _provenance(args, [args.split, args.model], {}, [args.out])
    args.out.with_suffix(".provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True))
    for m in values.values():
        print(f"{m.label:12s} {m.value:.6f}")


def cmd_psi(args):
    config = load_config(args.config)

    def progress(k, n, task):
        if args.verbose:
            print(f"[{k}/{n}] {task.replicate_name} {task.scenario} {task.strategy or 'full'}",
                  file=sys.stderr)

    result = run_experiment(config, None, args.jobs, args.cache, progress)
    args.out.mkdir(parents=True, exist_ok=True)
    paths = write_artifacts(result.payload, args.out)
    _finish(args, args.out, [args.config], {"root": config.root_seed, "replicates": list(config.seeds)},
            [p.name for p in paths.values()])
    for s, v in sorted(result.report.psi_mean.items(), key=lambda kv: -kv[1]):
        print(f"{s:28s} {v:+.4f}")
    if result.failures:
        print(f"{len(result.failures)} cell(s) failed; psi is partial", file=sys.stderr)


def cmd_synth(args):
    config = SynthConfig(args.users, args.items, args.interactions, args.latent_dim,
                         args.popularity_exponent, args.preference_strength,
                         noise=args.noise, min_per_user=args.min_per_user, mnar=args.mnar,
                         seed=args.seed)
    d = generate_synthetic(config)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    export_csv(d, args.out)
    prov = _provenance(args, [], {"data": args.seed}, [args.out])
    args.out.with_suffix(".provenance.json").write_text(json.dumps(prov, indent=1, sort_keys=True))
    print(f"{len(d)} interactions, {d.num_users} users, {d.num_items} items -> {args.out}")


def cmd_report(args):
    payload = json.loads(args.report.read_text())
    args.out.mkdir(parents=True, exist_ok=True)
    paths = write_artifacts(payload, args.out)
    _finish(args, args.out, [args.report], {"root": payload.get("root_seed")},
            [p.name for p in paths.values()])
    print("strategy                      psi")
    for s, v in sorted(payload["psi_mean"].items(), key=lambda kv: -kv[1]):
        print(f"{s:28s} {v:+.4f}")
    print("percent  mean tau")
    for p, v in payload["mean_tau_by_percent"].items():
        print(f"{float(p):7g}  {v:+.4f}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="svpcf", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="read a CSV log, filter, split, export")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scenario", choices=SCENARIOS, default="explicit")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-interactions", type=int, default=3)
    _add_csv_opts(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample", help="subsample a train set with a baseline strategy")
    _add_train_input(p)
    p.add_argument("--strategy", required=True, choices=BASELINE_STRATEGIES)
    p.add_argument("--percent", type=_percent, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params", type=_param, nargs="*", default=[], metavar="KEY=VAL")
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("svp", help="proxy importance table and SVP subsample")
    _add_train_input(p)
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--proxy", choices=PROXIES, default="mf")
    p.add_argument("--granularity", choices=GRANULARITIES, default="interaction")
    p.add_argument("--prop", choices=("on", "off"), default="off")
    p.add_argument("--A", type=float, default=0.55)
    p.add_argument("--B", type=float, default=1.5)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--n-neg", type=int, default=4)
    p.add_argument("--percent", type=_percent, default=50.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_svp)

    t = TrainConfig()
    p = sub.add_parser("train", help="train one model on a split (or a sample of it)")
    p.add_argument("--split", type=Path, required=True)
    p.add_argument("--train-csv", type=Path, help="train on this subset instead of train.csv")
    p.add_argument("--model", choices=KINDS + ("poprec",), required=True)
    p.add_argument("--latent-size", type=int, default=t.latent_size)
    p.add_argument("--learning-rate", type=float, default=t.learning_rate)
    p.add_argument("--dropout", type=float, default=t.dropout)
    p.add_argument("--l2-reg", type=float, default=t.l2_reg)
    p.add_argument("--epochs", type=int, default=t.epochs)
    p.add_argument("--n-neg", type=int, default=t.n_neg)
    p.add_argument("--seed", type=int, default=t.seed)
    p.add_argument("--out", type=Path, required=True, help="model JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on a split")
    p.add_argument("--split", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--target", choices=("validation", "test"), default="test")
    p.add_argument("--out", type=Path, required=True, help="metrics JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("psi", help="run an experiment config end to end")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--cache", type=Path, help="cell cache directory (makes runs resumable)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_psi)

    s = SynthConfig()
    p = sub.add_parser("synth", help="generate a synthetic interaction log")
    p.add_argument("--users", type=int, default=s.users)
    p.add_argument("--items", type=int, default=s.items)
    p.add_argument("--interactions", type=int, default=s.interactions)
    p.add_argument("--latent-dim", type=int, default=s.latent_dim)
    p.add_argument("--popularity-exponent", type=float, default=s.popularity_exponent)
    p.add_argument("--preference-strength", type=float, default=s.preference_strength)
    p.add_argument("--noise", type=float, default=s.noise)
    p.add_argument("--min-per-user", type=int, default=s.min_per_user)
    p.add_argument("--mnar", action="store_true")
    p.add_argument("--seed", type=int, default=s.seed)
    p.add_argument("--out", type=Path, required=True, help="output CSV")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="rebuild CSV tables from a report JSON")
    p.add_argument("report", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    args = parser.parse_args(argv)
    args.argv = argv
    if getattr(args, "jobs", 1) < 1:
        parser.error("--jobs must be >= 1")
    try:
        args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError, FloatingPointError) as e:
        mod = type(e).__module__.replace("svpcf.", "")
        where = f"{mod}." if mod != "builtins" else ""
        print(f"svpcf {args.command}: {where}{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
