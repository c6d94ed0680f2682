"""Experiment configurations and end-to-end pipelines.

A configuration is a plain JSON object. ``default_config(name)`` returns
the full set of defaults for one experiment and ``load_config`` merges a
user file over them, rejecting unknown keys and bad values with a
:class:`~rino.errors.ConfigError` naming the offending field.

Datasets live in ``<dir>/train`` and ``<dir>/test``; each holds a
``manifest.json`` and a ``data.jsonl`` with one realization per line.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from . import jsonio
from .baselines import GpodConfig, embedding_consistency_report, gpod_project, gpod_reconstruct, make_analytic_dictionary
from .datagen import (
    GrfConfig,
    SubsampleConfig,
    make_three_basis_dataset,
    mask_matrix,
    sample_grf,
    solve_antiderivative,
    solve_burgers,
    solve_darcy_1d,
    solve_darcy_2d,
    subsample_signal,
)
from .dictionary import DictLearnConfig, Dictionary, Embedding, PointCloudSignal, learn_dictionary_batch, project_many, reconstruction_errors
from .errors import ConfigError, RinoError
from .inr import MlpSpec
from .numerics import RngState
from .operator import (
    DeepOnetModel,
    OperatorSample,
    TrainConfig,
    Trunk,
    evaluate_model,
    make_model,
    pod_modes,
    train_predefined_trunk,
    train_unknown_trunk,
)

log = logging.getLogger(__name__)

EXPERIMENTS = ("antiderivative", "darcy1d", "darcy2d", "burgers", "gpod_ablation", "random_basis_ablation")
PDE_EXPERIMENTS = EXPERIMENTS[:4]

# RNG stream ids; every random draw in a pipeline hangs off (seed, stream)
_S_TRAIN_FIELDS, _S_TEST_FIELDS, _S_TRAIN_SUB, _S_TEST_SUB = 1, 2, 3, 4
_S_DICT, _S_MODEL, _S_MASK_TRAIN, _S_MASK_TEST, _S_RANDOM_BASIS, _S_CONSISTENCY = 11, 12, 21, 22, 23, 24


def _atom(input_dim, width, layers, omega0):
    return {"input_dim": input_dim, "output_dim": 1, "hidden_widths": [width] * layers, "activation": "sine", "omega0": omega0}


def _dict_cfg(atom, lr, lam, **extra):
    d = DictLearnConfig().to_dict()
    d.update(atom_spec=atom, lr=lr, lam=lam, **extra)
    return d


_DEFAULTS = {
    "antiderivative": {
        "data": {"n_train": 150, "n_test": 1000, "grid": 100, "length_scale": 0.2, "m_min": 10, "m_max": 60},
        "dictionary": _dict_cfg(_atom(1, 20, 2, 5.0), 1.66e-4, 1e-4),
        "operator": {
            "branch": None,
            "trunk": {"kind": "network", "hidden_widths": [50, 50], "activation": "sine", "omega0": 5.0},
            "width": None,
            "train": {"lr": 1e-3, "epochs": 5000, "batch_size": None, "tau": 1.0, "normalize_embeddings": False},
        },
        "eval": {"sensors": [100, 51, 26, 21, 11]},
    },
    "darcy1d": {
        "data": {"n_train": 800, "n_test": 200, "grid": 50, "length_scale": 0.05, "m_min": 20, "m_max": 35},
        "dictionary": _dict_cfg(_atom(1, 30, 2, 10.0), 3e-4, 1e-4, max_atoms=30),
        "operator": {
            "branch": {"hidden_widths": [50], "activation": "relu"},
            "trunk": {"kind": "network", "hidden_widths": [50, 50, 50], "activation": "sine", "omega0": 5.0},
            "width": 50,
            "train": {"lr": 1e-3, "epochs": 5000, "batch_size": 50, "tau": 1.0, "normalize_embeddings": True},
        },
        "eval": {"sensors": [50, 26, 11, 6]},
    },
    "darcy2d": {
        "data": {"n_train": 800, "n_test": 200, "grid": 20, "length_scale": 0.25, "m_min": 100, "m_max": 280},
        "dictionary": _dict_cfg(_atom(2, 50, 3, 10.0), 6.6e-4, 1e-5, max_atoms=80),
        "operator": {
            "branch": {"hidden_widths": [50], "activation": "relu"},
            "trunk": {"kind": "network", "hidden_widths": [50, 50], "activation": "relu", "omega0": 1.0},
            "width": 100,
            "train": {"lr": 1e-3, "epochs": 5000, "batch_size": None, "tau": 1.0, "normalize_embeddings": True},
        },
        "eval": {"sensors": [20, 10, 4]},
    },
    "burgers": {
        "data": {
            "n_train": 1500,
            "n_test": 500,
            "grid": 101,
            "length_scale": 0.2,
            "m_min": 40,
            "m_max": 70,
            "nu": 0.01,
            "n_times": 100,
            "linear": False,
        },
        "dictionary": _dict_cfg(_atom(1, 30, 2, 10.0), 6.6e-4, 1e-5, max_atoms=30),
        "operator": {
            "branch": {"hidden_widths": [100, 100], "activation": "tanh"},
            "trunk": {"kind": "pod", "modes": 70, "center": False},
            "width": None,
            "train": {"lr": 1e-3, "epochs": 5000, "batch_size": None, "tau": 1.0, "normalize_embeddings": False},
        },
        "eval": {"sensors": [101, 51, 21, 11]},
    },
    "gpod_ablation": {
        "data": {"n_train": 200, "n_test": 200, "grid": 100},
        "masking": [25, 50, 75, 90, 95],
        "gpod": {"rank": 3, "max_iters": 3000, "conv_tol": 1e-10, "ridge": 1e-10, "rank_schedule": "fixed"},
        "dictionary": _dict_cfg(_atom(1, 20, 2, 5.0), 1.66e-4, 1e-4, max_atoms=4, tol=1e-12, epochs_per_atom=2000),
    },
    "random_basis_ablation": {
        "data": {"n_train": 200, "n_test": 200, "grid": 100},
        "masking": [85],
        "counts": [3, 10, 100],
        "kinds": ["random_cosine", "random_relu", "legendre", "monomial"],
        "dictionary": _dict_cfg(_atom(1, 20, 2, 5.0), 1.66e-4, 1e-4, max_atoms=4, tol=1e-12, epochs_per_atom=2000),
        "consistency": {"masking": 50, "signals": 5, "trials": 5, "keep_fraction": 0.5, "random_atoms": 3},
    },
}


def default_config(experiment):
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown value {experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    cfg = {"experiment": experiment, "seeds": [0, 1, 2, 3, 4], "data_seed": 0}
    cfg.update(copy.deepcopy(_DEFAULTS[experiment]))
    return cfg


# sub-objects replaced wholesale rather than merged key by key
_REPLACED = ("branch", "trunk")


def _merge(base, override, path):
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[key], dict) and isinstance(value, dict) and key not in _REPLACED:
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _require(cond, where, msg):
    if not cond:
        raise ConfigError(f"{where}: {msg}")


def validate_config(raw):
    """Merge ``raw`` over the experiment defaults and check every field."""
    _require(isinstance(raw, dict), "<root>", "configuration must be a JSON object")
    _require("experiment" in raw, "experiment", "missing required field")
    cfg = _merge(default_config(raw["experiment"]), raw, "")
    seeds = cfg["seeds"]
    _require(isinstance(seeds, list) and seeds and all(isinstance(s, int) and s >= 0 for s in seeds), "seeds", "need a non-empty list of non-negative integers")
    _require(isinstance(cfg["data_seed"], int) and cfg["data_seed"] >= 0, "data_seed", "need a non-negative integer")
    data = cfg["data"]
    for key in ("n_train", "n_test", "grid"):
        _require(isinstance(data[key], int) and data[key] >= 1, f"data.{key}", "need a positive integer")
    if "m_min" in data:
        _require(0 < data["m_min"] <= data["m_max"], "data.m_min", "need 0 < m_min <= m_max")
        n_points = data["grid"] ** 2 if cfg["experiment"] == "darcy2d" else data["grid"]
        _require(data["m_max"] <= n_points, "data.m_max", f"exceeds the {n_points} grid points")
    if "length_scale" in data:
        _require(data["length_scale"] > 0, "data.length_scale", "must be positive")
    if "n_times" in data:
        _require(isinstance(data["n_times"], int) and data["n_times"] >= 2, "data.n_times", "need an integer >= 2")
        _require(data["nu"] >= 0, "data.nu", "must be non-negative")
    try:
        DictLearnConfig.from_dict(cfg["dictionary"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"dictionary: {exc}") from None
    if cfg["experiment"] in PDE_EXPERIMENTS:
        op = cfg["operator"]
        try:
            TrainConfig(**op["train"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"operator.train: {exc}") from None
        kind = op["trunk"].get("kind")
        _require(kind in ("network", "pod"), "operator.trunk.kind", "must be 'network' or 'pod'")
        if op["branch"] is None:
            _require(kind == "network" and op["width"] is None, "operator.width", "identity branch takes its width from the dictionary")
        elif kind == "network":
            _require(isinstance(op["width"], int) and op["width"] >= 1, "operator.width", "need a positive integer")
        for M in cfg["eval"]["sensors"]:
            _require(isinstance(M, int) and M >= 2, "eval.sensors", "sensor counts must be integers >= 2")
    else:
        for R in cfg["masking"]:
            _require(0 <= R < 100, "masking", "percentages must lie in [0, 100)")
        c = cfg.get("consistency")
        if c is not None:
            _require(0 <= c["masking"] < 100, "consistency.masking", "percentage must lie in [0, 100)")
            _require(0 < c["keep_fraction"] <= 1, "consistency.keep_fraction", "must lie in (0, 1]")
            _require(c["signals"] <= data["n_test"], "consistency.signals", "exceeds the number of test signals")
        if "gpod" in cfg:
            try:
                GpodConfig(**cfg["gpod"])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"gpod: {exc}") from None
    return cfg


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return validate_config(raw)


def config_hash(cfg):
    return jsonio.sha256_of(cfg)


def data_hash(cfg):
    """Hash of the fields that determine a dataset; runs and datasets are matched on it."""
    return jsonio.sha256_of({"experiment": cfg["experiment"], "data_seed": cfg["data_seed"], "data": cfg["data"]})


class StageFailure(Exception):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {type(exc).__name__}: {exc}")
        self.stage = stage


# ---------------------------------------------------------------------------
# data generation


def _fields_and_solutions(cfg, n, stream):
    """Dense input fields, their input grid, and output (points, values) per realization."""
    exp, data = cfg["experiment"], cfg["data"]
    rng = RngState(cfg["data_seed"], stream)
    g = data["grid"]
    if exp == "antiderivative":
        x = np.linspace(0.0, 1.0, g)
        U = sample_grf(x, GrfConfig(data["length_scale"]), rng, n_samples=n)
        outs = [(x[:, None], solve_antiderivative(x, u)) for u in U]
        return x[:, None], U, outs
    if exp == "darcy1d":
        x = np.linspace(0.0, 1.0, g)
        U = sample_grf(x, GrfConfig(data["length_scale"]), rng, n_samples=n)
        outs = []
        for u in U:
            sol = solve_darcy_1d(u)
            outs.append((sol.points, sol.values))
        return x[:, None], U, outs
    if exp == "darcy2d":
        x = np.linspace(0.0, 1.0, g)
        X, Y = np.meshgrid(x, x, indexing="ij")
        P = np.stack([X.ravel(), Y.ravel()], axis=1)
        U = sample_grf(P, GrfConfig(data["length_scale"]), rng, n_samples=n)
        outs = []
        for u in U:
            sol = solve_darcy_2d(u.reshape(g, g))
            outs.append((sol.points, sol.values.ravel()))
        return P, U, outs
    # burgers: periodic field on [0, 1) closed with its copy at x = 1
    x = np.linspace(0.0, 1.0, g)
    U = sample_grf(x[:-1], GrfConfig(data["length_scale"], periodic=True), rng, n_samples=n)
    U = np.concatenate([U, U[:, :1]], axis=1)
    outs = []
    for u in U:
        # inner step of at most 1/990, the step of 10 substeps between 100 snapshots
        substeps = max(1, int(np.ceil(990 / (data["n_times"] - 1))))
        sol = solve_burgers(u, nu=data["nu"], n_times=data["n_times"], substeps=substeps, linear=data["linear"])
        outs.append((sol.points, sol.values.ravel()))
    return x[:, None], U, outs


def generate_split(cfg, split):
    """``(manifest, records)`` for ``split`` in {"train", "test"}."""
    exp, data = cfg["experiment"], cfg["data"]
    n = data["n_train" if split == "train" else "n_test"]
    manifest = {
        "generator": exp,
        "split": split,
        "seed": cfg["data_seed"],
        "config_hash": config_hash(cfg),
        "data_hash": data_hash(cfg),
        "count": n,
        "domain": {"lower": [0.0] * (2 if exp == "darcy2d" else 1), "upper": [1.0] * (2 if exp == "darcy2d" else 1)},
    }
    if exp in ("gpod_ablation", "random_basis_ablation"):
        stream = _S_TRAIN_FIELDS if split == "train" else _S_TEST_FIELDS
        x, D, coeffs = make_three_basis_dataset(n, data["grid"], RngState(cfg["data_seed"], stream))
        manifest["input_grid"] = x[:, None]
        records = [{"id": i, "u_dense": D[i], "coeffs": coeffs[i]} for i in range(n)]
        return manifest, records
    stream = _S_TRAIN_FIELDS if split == "train" else _S_TEST_FIELDS
    P, U, outs = _fields_and_solutions(cfg, n, stream)
    sub_cfg = SubsampleConfig(data["m_min"], data["m_max"])
    sub_rng = RngState(cfg["data_seed"], _S_TRAIN_SUB if split == "train" else _S_TEST_SUB)
    manifest["input_grid"] = P
    shared_y = exp == "burgers"
    if shared_y:
        manifest["output_grid"] = outs[0][0]
    records = []
    for i in range(n):
        sig = subsample_signal(PointCloudSignal(P, U[i], i), sub_cfg, sub_rng.child(i))
        rec = {"id": i, "x": sig.points, "u": sig.values}
        if not shared_y:
            rec["y"] = outs[i][0]
        rec["s"] = outs[i][1]
        rec["u_dense"] = U[i]
        records.append(rec)
    return manifest, records


def _records_to_samples(manifest, records):
    """Input signals (stored subsamples), dense inputs, and output (Y, s) per record."""
    grid = np.asarray(manifest["input_grid"], dtype=float)
    shared_y = manifest.get("output_grid")
    shared_y = None if shared_y is None else np.asarray(shared_y, dtype=float)
    signals, dense, outputs = [], [], []
    for rec in records:
        signals.append(PointCloudSignal(np.asarray(rec["x"], dtype=float), rec["u"], rec["id"]))
        dense.append(PointCloudSignal(grid, rec["u_dense"], rec["id"]))
        Y = shared_y if shared_y is not None else np.asarray(rec["y"], dtype=float)
        outputs.append((Y, np.asarray(rec["s"], dtype=float)))
    return signals, dense, outputs


# ---------------------------------------------------------------------------
# pipelines


def _branch_spec(op, q, width):
    if op["branch"] is None:
        return None
    b = op["branch"]
    return MlpSpec(q, width, tuple(b["hidden_widths"]), b["activation"], float(b.get("omega0", 1.0)))


def _trunk(op, outputs, width, d_y, pod_center):
    t = op["trunk"]
    if t["kind"] == "network":
        return Trunk("network", spec=MlpSpec(d_y, width, tuple(t["hidden_widths"]), t["activation"], float(t["omega0"])))
    Y = outputs[0][0]
    if any(o[0].shape != Y.shape or not np.array_equal(o[0], Y) for o in outputs):
        raise ConfigError("operator.trunk.kind: a POD trunk needs every output on one shared grid")
    center = bool(t.get("center", False) or pod_center)
    modes, mean = pod_modes(np.stack([o[1] for o in outputs]), int(t["modes"]), center=center)
    return Trunk("pod", grid=Y, modes=modes, mean=mean)


def _operator_samples(embeddings, outputs, trunk=None):
    samples = []
    for emb, (Y, s) in zip(embeddings, outputs):
        gamma = None
        if trunk is not None and trunk.kind == "pod":
            target = s if trunk.mean is None else s - trunk.offset(Y)
            gamma = Embedding(trunk.evaluate(Y).T @ target, "pod", 0.0)
        samples.append(OperatorSample(emb, Y, s, gamma))
    return samples


def run_pde(cfg, train, test, seed, pod_center=False):
    """Dictionary learning, embedding and operator training for one seed.

    ``train`` and ``test`` are ``(manifest, records)`` pairs. Returns a
    dict with the dictionary, model, dictionary trace rows and metrics.
    """
    dcfg = DictLearnConfig.from_dict(cfg["dictionary"])
    op = cfg["operator"]
    tr_signals, _, tr_out = _records_to_samples(*train)
    te_signals, _, te_out = _records_to_samples(*test)
    dim = tr_signals[0].points.shape[1]
    try:
        dictionary, trace = learn_dictionary_batch(tr_signals, dcfg, rng=RngState(seed, _S_DICT))
    except (RinoError, ValueError) as exc:
        raise StageFailure("dictionary", exc) from exc
    q = len(dictionary)
    log.info("dictionary: %d atoms, training error %.3e", q, trace.atom_errors[-1])

    width = q if op["branch"] is None else (op["width"] if op["trunk"]["kind"] == "network" else int(op["trunk"]["modes"]))
    d_y = tr_out[0][0].shape[1]
    try:
        trunk = _trunk(op, tr_out, width, d_y, pod_center)
    except ConfigError:
        raise
    except (RinoError, ValueError) as exc:
        raise StageFailure("operator", exc) from exc
    model = make_model(trunk, dictionary.fingerprint, RngState(seed, _S_MODEL), _branch_spec(op, q, width))
    tcfg = TrainConfig(seed=seed, **op["train"])
    try:
        tr_emb = project_many(dictionary, tr_signals, dcfg.lam)
        samples = _operator_samples(tr_emb, tr_out, trunk)
        if trunk.kind == "network":
            model, otrace = train_unknown_trunk(samples, model, tcfg)
        else:
            model, otrace = train_predefined_trunk(samples, model, tcfg)
    except (RinoError, ValueError) as exc:
        raise StageFailure("operator", exc) from exc

    te_emb = project_many(dictionary, te_signals, dcfg.lam)
    train_err = evaluate_model(model, samples)
    test_err = evaluate_model(model, _operator_samples(te_emb, te_out))
    metrics = {
        "experiment": cfg["experiment"],
        "seed": seed,
        "config_hash": config_hash(cfg),
        "data_hash": data_hash(cfg),
        "dictionary_size": q,
        "dictionary_fingerprint": dictionary.fingerprint,
        "dictionary_train_rel_mse": float(trace.atom_errors[-1]),
        "dictionary_test_rel_mse": float(np.mean(reconstruction_errors(dictionary, te_signals, dcfg.lam))),
        "dictionary_no_progress": bool(trace.no_progress),
        "input_dim": dim,
        "train_rel_mse": float(np.mean(train_err)),
        "test_rel_mse": float(np.mean(test_err)),
        "final_loss": float(otrace.losses[-1]) if otrace.losses else None,
    }
    return {
        "dictionary": dictionary,
        "model": model,
        "dict_trace": trace.to_rows(),
        "op_trace": otrace.losses,
        "metrics": metrics,
    }


def rediscretize(dense: PointCloudSignal, M):
    """Resample a dense grid signal onto ``M`` uniform sensors per axis with a cubic spline."""
    P = dense.points
    if P.shape[1] == 1:
        x = P[:, 0]
        xm = np.linspace(x.min(), x.max(), M)
        return PointCloudSignal(xm, CubicSpline(x, dense.values)(xm), dense.id)
    xs = np.unique(P[:, 0])
    ys = np.unique(P[:, 1])
    V = dense.values.reshape(xs.size, ys.size)
    spline = RectBivariateSpline(xs, ys, V, kx=3, ky=3)
    xm = np.linspace(xs[0], xs[-1], M)
    ym = np.linspace(ys[0], ys[-1], M)
    X, Y = np.meshgrid(xm, ym, indexing="ij")
    return PointCloudSignal(np.stack([X.ravel(), Y.ravel()], axis=1), spline(xm, ym).ravel(), dense.id)


def evaluate_sensors(model: DeepOnetModel, dictionary: Dictionary, lam, test, sensors):
    """Per-realization relative MSE with inputs at ``sensors`` (int M or "random")."""
    signals, dense, outputs = _records_to_samples(*test)
    if sensors != "random":
        signals = [rediscretize(d, int(sensors)) for d in dense]
    emb = project_many(dictionary, signals, lam)
    return evaluate_model(model, _operator_samples(emb, outputs))


# ---------------------------------------------------------------------------
# ablations


def _rel_rows(truth, pred):
    sup2 = np.max(truth**2, axis=1)
    return np.mean((truth - pred) ** 2, axis=1) / sup2


def _masked_signals(x, D, mask):
    return [PointCloudSignal(x[~mask[i]], D[i, ~mask[i]], i) for i in range(D.shape[0])]


def _learned_masked_dictionary(cfg, x, D, mask, seed, stream_index):
    dcfg = DictLearnConfig.from_dict(dict(cfg["dictionary"], seed=seed))
    return learn_dictionary_batch(_masked_signals(x, D, mask), dcfg, rng=RngState(seed, _S_DICT).child(stream_index))


def _dense_matrix(split):
    manifest, records = split
    x = np.asarray(manifest["input_grid"], dtype=float)[:, 0]
    return x, np.stack([np.asarray(r["u_dense"], dtype=float) for r in records])


def run_gpod_ablation(cfg, train, test, seed):
    """Gappy POD vs. batch dictionary learning on masked three-basis data."""
    x, D = _dense_matrix(train)
    _, Dt = _dense_matrix(test)
    gcfg = GpodConfig(**cfg["gpod"])
    lam = cfg["dictionary"]["lam"]
    rows, detail = [], {}
    trace_rows = []
    for R in cfg["masking"]:
        m = mask_matrix(*D.shape, R, RngState(seed, _S_MASK_TRAIN).child(R))
        mt = mask_matrix(*Dt.shape, R, RngState(seed, _S_MASK_TEST).child(R))
        g = gpod_reconstruct(D, m, gcfg)
        g_train = float(np.mean(_rel_rows(D, g.filled)))
        g_test = float(np.mean(_rel_rows(Dt, gpod_project(g.modes, Dt, mt, gcfg.ridge))))
        d, trace = _learned_masked_dictionary(cfg, x, D, m, seed, R)
        full_tr = [PointCloudSignal(x, D[i], i) for i in range(D.shape[0])]
        full_te = [PointCloudSignal(x, Dt[i], i) for i in range(Dt.shape[0])]
        a_train = float(np.mean(reconstruction_errors(d, _masked_signals(x, D, m), lam, query=full_tr)))
        a_test = float(np.mean(reconstruction_errors(d, _masked_signals(x, Dt, mt), lam, query=full_te)))
        rows += [
            ("gpod", R, "train", g_train),
            ("gpod", R, "test", g_test),
            ("batch_dictionary", R, "train", a_train),
            ("batch_dictionary", R, "test", a_test),
        ]
        detail[str(R)] = {
            "gpod": {"train_rel_mse": g_train, "test_rel_mse": g_test, "converged": g.converged, "iterations": g.iterations},
            "batch_dictionary": {"train_rel_mse": a_train, "test_rel_mse": a_test, "atoms": len(d), "no_progress": trace.no_progress},
        }
        trace_rows += [(R, e, err, mark) for e, err, mark in trace.to_rows()]
        log.info("R=%d%%: gpod test %.3e, dictionary test %.3e", R, g_test, a_test)
    metrics = {"experiment": cfg["experiment"], "seed": seed, "config_hash": config_hash(cfg), "by_masking": detail}
    return {"rows": rows, "metrics": metrics, "dict_trace": trace_rows}


def run_random_basis_ablation(cfg, train, test, seed):
    """Learned 3-atom dictionary vs. predefined bases on masked data, plus embedding consistency."""
    x, D = _dense_matrix(train)
    _, Dt = _dense_matrix(test)
    lam = cfg["dictionary"]["lam"]
    full_te = [PointCloudSignal(x, Dt[i], i) for i in range(Dt.shape[0])]
    rows, detail, trace_rows = [], {}, []
    for R in cfg["masking"]:
        m = mask_matrix(*D.shape, R, RngState(seed, _S_MASK_TRAIN).child(R))
        mt = mask_matrix(*Dt.shape, R, RngState(seed, _S_MASK_TEST).child(R))
        test_sig = _masked_signals(x, Dt, mt)
        d, trace = _learned_masked_dictionary(cfg, x, D, m, seed, R)
        learned = float(np.mean(reconstruction_errors(d, test_sig, lam, query=full_te)))
        rows.append(("learned", R, len(d), learned))
        entry = {"learned": {"atoms": len(d), "test_rel_mse": learned}}
        for kind in cfg["kinds"]:
            for Q in cfg["counts"]:
                basis = make_analytic_dictionary(kind, Q, RngState(seed, _S_RANDOM_BASIS).child(Q))
                err = float(np.mean(reconstruction_errors(basis, test_sig, lam, query=full_te)))
                rows.append((kind, R, Q, err))
                entry.setdefault(kind, {})[str(Q)] = err
        detail[str(R)] = entry
        trace_rows += [(R, e, err, mark) for e, err, mark in trace.to_rows()]

    metrics = {"experiment": cfg["experiment"], "seed": seed, "config_hash": config_hash(cfg), "by_masking": detail}
    c = cfg["consistency"]
    if c is None:
        return {"rows": rows, "metrics": metrics, "dict_trace": trace_rows}
    m = mask_matrix(*D.shape, c["masking"], RngState(seed, _S_MASK_TRAIN).child(c["masking"]))
    d, _ = _learned_masked_dictionary(cfg, x, D, m, seed, c["masking"])
    learned_dev, random_dev = [], []
    for j in range(c["signals"]):
        sig = PointCloudSignal(x, Dt[j], j)
        rng = RngState(seed, _S_CONSISTENCY).child(j)
        learned_dev.append(embedding_consistency_report(d, sig, c["trials"], c["keep_fraction"], rng, lam)["rel_max_dev"])
        per_basis = []
        for k in range(5):
            basis = make_analytic_dictionary("random_cosine", c["random_atoms"], RngState(seed, _S_RANDOM_BASIS).child(1000 + k))
            per_basis.append(embedding_consistency_report(basis, sig, c["trials"], c["keep_fraction"], rng, lam)["rel_max_dev"])
        random_dev.append(float(np.mean(per_basis)))
    consistency = {
        "learned_rel_max_dev": learned_dev,
        "random_cosine_rel_max_dev": random_dev,
        "learned_mean": float(np.mean(learned_dev)),
        "random_cosine_mean": float(np.mean(random_dev)),
    }
    metrics["consistency"] = consistency
    return {"rows": rows, "metrics": metrics, "dict_trace": trace_rows}


# ---------------------------------------------------------------------------
# tabular output


RESULT_COLUMNS = ("experiment", "seed", "method", "R", "M", "split", "rel_mse")


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()
