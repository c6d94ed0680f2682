"""Command-line driver: ``python -m rino <command> ...``.

Commands
--------
gen-data  write ``<out>/train`` and ``<out>/test`` datasets for a config
run       learn the dictionary, train the operator, score train/test
eval      score a trained run with test inputs at M uniform sensors
report    merge the ``results.csv`` of several runs and summarize them

Exit codes
----------
0  success
2  bad command line or configuration
3  missing or unreadable input files
4  data generation failed
5  dictionary learning failed
6  operator training failed
7  evaluation failed
8  run and dataset do not belong together (fingerprint mismatch)

``RINO_THREADS`` caps the BLAS thread pool (default 1), which also keeps
results bitwise reproducible across machines with different core counts.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import jsonio
from .datagen import read_dataset, write_dataset
from .dictionary import Dictionary
from .errors import ConfigError, FingerprintMismatch, RinoError
from .experiments import (
    PDE_EXPERIMENTS,
    RESULT_COLUMNS,
    StageFailure,
    config_hash,
    csv_text,
    data_hash,
    evaluate_sensors,
    generate_split,
    load_config,
    run_gpod_ablation,
    run_pde,
    run_random_basis_ablation,
)
from .operator import DeepOnetModel

log = logging.getLogger("rino")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DATA, EXIT_DICT, EXIT_OPERATOR, EXIT_EVAL, EXIT_MISMATCH = 0, 2, 3, 4, 5, 6, 7, 8
_STAGE_CODES = {"data": EXIT_DATA, "dictionary": EXIT_DICT, "operator": EXIT_OPERATOR, "eval": EXIT_EVAL}


def _write(path, text):
    with open(path, "w") as fh:
        fh.write(text)


def _write_json(path, obj):
    _write(path, jsonio.dumps(obj) + "\n")


def _read_json(path):
    with open(path) as fh:
        return json.load(fh)


def _data_dir(args, cfg):
    return args.data or os.path.join("data", cfg["experiment"])


def _seed(args, cfg):
    return cfg["seeds"][0] if args.seed is None else args.seed


def cmd_gen_data(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["data_seed"] = args.seed
    out = args.out or _data_dir(args, cfg)
    if args.dry_run:
        print(f"config ok: {cfg['experiment']}, data seed {cfg['data_seed']}, would write {out}")
        return EXIT_OK
    for split in ("train", "test"):
        try:
            manifest, records = generate_split(cfg, split)
        except (RinoError, ValueError) as exc:
            raise StageFailure("data", exc) from exc
        write_dataset(os.path.join(out, split), manifest, records)
        log.info("wrote %d %s records to %s", len(records), split, out)
    return EXIT_OK


def _load_split(directory, cfg):
    manifest, records = read_dataset(directory)
    if manifest.get("data_hash") != data_hash(cfg):
        raise FingerprintMismatch(f"{directory} was generated from a different data configuration")
    return manifest, records


def cmd_run(args):
    cfg = load_config(args.config)
    seed = _seed(args, cfg)
    if args.pod_center and cfg["experiment"] in PDE_EXPERIMENTS and cfg["operator"]["trunk"]["kind"] == "pod":
        cfg["operator"]["trunk"]["center"] = True
    data_dir = _data_dir(args, cfg)
    out = args.out or os.path.join("runs", cfg["experiment"], f"seed-{seed}")
    if args.dry_run:
        missing = [d for d in ("train", "test") if not os.path.isdir(os.path.join(data_dir, d))]
        note = f"; dataset missing: {', '.join(missing)} under {data_dir}" if missing else ""
        print(f"config ok: {cfg['experiment']}, seed {seed}, would write {out}{note}")
        return EXIT_OK
    train = _load_split(os.path.join(data_dir, "train"), cfg)
    test = _load_split(os.path.join(data_dir, "test"), cfg)
    os.makedirs(out, exist_ok=True)
    exp = cfg["experiment"]
    _write_json(os.path.join(out, "config.json"), cfg)

    if exp in PDE_EXPERIMENTS:
        res = run_pde(cfg, train, test, seed, pod_center=args.pod_center)
        res["dictionary"].save(os.path.join(out, "dictionary.json"))
        res["model"].save(os.path.join(out, "model.json"))
        rows = [("dictionary", e, err, mark) for e, err, mark in res["dict_trace"]]
        rows += [("operator", e, loss, 0) for e, loss in enumerate(res["op_trace"])]
        _write(os.path.join(out, "trace.csv"), csv_text(("stage", "epoch", "loss", "atom_added"), rows))
        m = res["metrics"]
        results = [
            (exp, seed, "rino", "", "random", "train", m["train_rel_mse"]),
            (exp, seed, "rino", "", "random", "test", m["test_rel_mse"]),
        ]
        print(f"{exp} seed {seed}: {m['dictionary_size']} atoms, train {m['train_rel_mse']:.3e}, test {m['test_rel_mse']:.3e}")
    else:
        runner = run_gpod_ablation if exp == "gpod_ablation" else run_random_basis_ablation
        try:
            res = runner(cfg, train, test, seed)
        except (RinoError, ValueError) as exc:
            raise StageFailure("dictionary", exc) from exc
        _write(os.path.join(out, "trace.csv"), csv_text(("R", "epoch", "loss", "atom_added"), res["dict_trace"]))
        m = res["metrics"]
        if exp == "gpod_ablation":
            results = [(exp, seed, method, R, "", split, err) for method, R, split, err in res["rows"]]
        else:
            results = [(exp, seed, method, R, Q, "test", err) for method, R, Q, err in res["rows"]]
        for row in results:
            print(" ".join(str(v) for v in row[2:6]), f"{row[6]:.3e}")
    _write_json(os.path.join(out, "metrics.json"), m)
    _write(os.path.join(out, "results.csv"), csv_text(RESULT_COLUMNS, results))
    return EXIT_OK


def cmd_eval(args):
    cfg = load_config(args.config)
    if cfg["experiment"] not in PDE_EXPERIMENTS:
        raise ConfigError(f"experiment: eval applies to {', '.join(PDE_EXPERIMENTS)}")
    sensors = args.sensors
    if sensors != "random":
        try:
            sensors = int(sensors)
        except ValueError:
            raise ConfigError(f"--sensors: expected an integer or 'random', got {sensors!r}") from None
        if sensors < 2:
            raise ConfigError("--sensors: need at least 2 sensors per axis")
    run_dir = args.run
    run_metrics = _read_json(os.path.join(run_dir, "metrics.json"))
    dictionary = Dictionary.load(os.path.join(run_dir, "dictionary.json"))
    model = DeepOnetModel.load(os.path.join(run_dir, "model.json"))
    if model.input_fingerprint != dictionary.fingerprint or run_metrics["dictionary_fingerprint"] != dictionary.fingerprint:
        raise FingerprintMismatch(f"{run_dir}: model and dictionary do not belong together")
    if run_metrics["data_hash"] != data_hash(cfg) or run_metrics["experiment"] != cfg["experiment"]:
        raise FingerprintMismatch(f"{run_dir} was trained under a different configuration")
    test = _load_split(os.path.join(_data_dir(args, cfg), "test"), cfg)
    out = args.out or os.path.join(run_dir, f"eval-{sensors}")
    try:
        errs = evaluate_sensors(model, dictionary, cfg["dictionary"]["lam"], test, sensors)
    except (RinoError, ValueError) as exc:
        raise StageFailure("eval", exc) from exc
    os.makedirs(out, exist_ok=True)
    seed = run_metrics["seed"]
    metrics = {
        "experiment": cfg["experiment"],
        "seed": seed,
        "config_hash": config_hash(cfg),
        "data_hash": data_hash(cfg),
        "dictionary_fingerprint": dictionary.fingerprint,
        "sensors": sensors,
        "test_rel_mse": float(np.mean(errs)),
        "test_rel_mse_std": float(np.std(errs)),
    }
    _write_json(os.path.join(out, "metrics.json"), metrics)
    row = (cfg["experiment"], seed, "rino", "", sensors, "test", metrics["test_rel_mse"])
    _write(os.path.join(out, "results.csv"), csv_text(RESULT_COLUMNS, [row]))
    print(f"{cfg['experiment']} seed {seed} M={sensors}: test {metrics['test_rel_mse']:.3e}")
    return EXIT_OK


def cmd_report(args):
    rows = []
    for d in args.runs:
        for root, _, files in sorted(os.walk(d)):
            if "results.csv" in files:
                with open(os.path.join(root, "results.csv"), newline="") as fh:
                    rows += [tuple(r[c] for c in RESULT_COLUMNS) for r in csv.DictReader(fh)]
    if not rows:
        raise FileNotFoundError("no results.csv found under the given directories")
    rows = sorted(set(rows))
    out = args.out or "report"
    os.makedirs(out, exist_ok=True)
    _write(os.path.join(out, "results.csv"), csv_text(RESULT_COLUMNS, rows))
    groups = {}
    for exp, _, method, R, M, split, err in rows:
        groups.setdefault((exp, method, R, M, split), []).append(float(err))
    summary = [(*k, float(np.mean(v)), float(np.std(v)), len(v)) for k, v in sorted(groups.items())]
    header = ("experiment", "method", "R", "M", "split", "mean_rel_mse", "std_rel_mse", "n")
    _write(os.path.join(out, "summary.csv"), csv_text(header, summary))
    for row in summary:
        print(" ".join(str(v) for v in row[:5]), f"{row[5]:.3e} +- {row[6]:.1e} (n={row[7]})")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="python -m rino", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate train/test datasets")
    g.add_argument("--config", required=True)
    g.add_argument("--seed", type=int, help="data seed (overrides data_seed)")
    g.add_argument("--out", help="dataset directory (default data/<experiment>)")
    g.add_argument("--dry-run", action="store_true")
    g.set_defaults(func=cmd_gen_data, data=None)

    r = sub.add_parser("run", help="learn dictionary and operator for one seed")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="training seed (default: first of config seeds)")
    r.add_argument("--data", help="dataset directory (default data/<experiment>)")
    r.add_argument("--out", help="artifact directory (default runs/<experiment>/seed-<seed>)")
    r.add_argument("--pod-center", action="store_true", help="subtract the snapshot mean before POD")
    r.add_argument("--dry-run", action="store_true")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score a run at a given input resolution")
    e.add_argument("--config", required=True)
    e.add_argument("--run", required=True, help="artifact directory written by run")
    e.add_argument("--data", help="dataset directory (default data/<experiment>)")
    e.add_argument("--sensors", default="random", help="uniform sensors per axis, or 'random' for the stored subsamples")
    e.add_argument("--out", help="output directory (default <run>/eval-<sensors>)")
    e.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="merge results.csv files into a summary")
    rep.add_argument("runs", nargs="+", help="directories searched recursively for results.csv")
    rep.add_argument("--out", help="report directory (default report)")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    threads = int(os.environ.get("RINO_THREADS", "1"))
    try:
        with threadpool_limits(limits=max(1, threads)):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FingerprintMismatch as exc:
        print(f"fingerprint mismatch: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except StageFailure as exc:
        print(f"{exc.stage} stage failed: {exc}", file=sys.stderr)
        return _STAGE_CODES[exc.stage]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
