"""Command-line experiment runner.

``run`` trains one method over several seeded splits/restarts and writes
per-run traces, final metrics, the final state and an aggregate summary.
``dump-cov`` writes means, marginal variances and off-diagonal covariances of
two saved states. ``selftest`` checks the structured algebra against dense
oracles.

Configuration is one JSON document::

    {
      "dataset": {"path": "data/breast-cancer_scale", "standardize": true,
                  "train_fraction": 0.5},
      "model": {"type": "logistic"},
      "method": "slang",
      "optimizer": {"prior_precision": 1.0, "rank": 10, "batch_size": 32},
      "epochs": 2000,
      "splits": 20,
      "restarts": 1
    }

``dataset`` alternatively takes ``train_path``/``test_path`` (a fixed split)
or ``{"synthetic": "cubic", "n": 30}``. ``model`` may be
``{"type": "mlp", "hidden": [50], "likelihood": "gaussian", "tau": 1.0}``.
Optional top-level keys: ``eval`` (``n_mc``, ``trace_every``), ``reference``
(also fit the full-Gaussian reference and report the symmetric KL),
``workers`` and ``record_timing``. Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import dataio
from . import linalg as la
from . import metrics as mt
from .errors import ConfigError, NumericError, SlangError
from .models import DENSE_LIMIT, LogisticRegression, MlpArchitecture
from .optimizers import METHODS, DenseState, GaussianState, OptimizerConfig, fit, full_gaussian_reference, init_state

__all__ = [
    "STATE_FORMAT",
    "STATE_VERSION",
    "TRACE_HEADER",
    "load_config",
    "run_experiment",
    "state_to_dict",
    "state_from_dict",
    "save_state",
    "load_state",
    "dump_covariance",
    "selftest",
    "main",
]

STATE_FORMAT = "slang-gaussian-state"
STATE_VERSION = 1
TRACE_HEADER = ["epoch", "step", "neg_elbo", "test_nll"]

_TOP_KEYS = {"dataset", "model", "method", "optimizer", "epochs", "splits", "restarts", "eval",
             "reference", "workers", "record_timing", "seed"}
_DATASET_KEYS = {"path", "train_path", "test_path", "format", "task", "standardize", "train_fraction",
                 "synthetic", "n"}
_MODEL_KEYS = {"type", "hidden", "likelihood", "tau"}
_EVAL_KEYS = {"n_mc", "trace_every"}
_OPT_KEYS = {f.name for f in fields(OptimizerConfig)} - {"n_total", "seed"}


def _check_keys(section, allowed, where):
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {where}: {sorted(extra)}")


def _with_defaults(cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(cfg, _TOP_KEYS, "config")
    for key in ("dataset", "method", "optimizer"):
        if key not in cfg:
            raise ConfigError(f"config is missing {key!r}")
    _check_keys(cfg["dataset"], _DATASET_KEYS, "dataset")
    _check_keys(cfg["optimizer"], _OPT_KEYS, "optimizer")
    cfg.setdefault("model", {"type": "logistic"})
    _check_keys(cfg["model"], _MODEL_KEYS, "model")
    cfg.setdefault("eval", {})
    _check_keys(cfg["eval"], _EVAL_KEYS, "eval")
    cfg["eval"].setdefault("n_mc", 1000)
    cfg["eval"].setdefault("trace_every", 0)
    cfg.setdefault("epochs", 2000)
    cfg.setdefault("splits", 1)
    cfg.setdefault("restarts", 1)
    cfg.setdefault("reference", False)
    cfg.setdefault("workers", 1)
    cfg.setdefault("record_timing", False)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["method"] not in METHODS:
        raise ConfigError(f"unknown method {cfg['method']!r}; choose from {METHODS}")
    mtype = cfg["model"].get("type", "logistic")
    if mtype not in ("logistic", "mlp"):
        raise ConfigError(f"unknown model type {mtype!r}")
    if mtype != "logistic" and cfg["method"] in ("von-full", "mean-field-hessian"):
        raise ConfigError(f"method {cfg['method']!r} requires the logistic model")
    if mtype != "logistic" and cfg["reference"]:
        raise ConfigError("the full-Gaussian reference is only available for the logistic model")
    for key in ("epochs",):
        if not isinstance(cfg[key], int) or cfg[key] < 0:
            raise ConfigError(f"{key} must be a non-negative integer")
    for key in ("splits", "restarts", "workers"):
        if not isinstance(cfg[key], int) or cfg[key] < 1:
            raise ConfigError(f"{key} must be a positive integer")
    if not isinstance(cfg["eval"]["n_mc"], int) or cfg["eval"]["n_mc"] < 1:
        raise ConfigError("eval.n_mc must be a positive integer")
    if not isinstance(cfg["eval"]["trace_every"], int) or cfg["eval"]["trace_every"] < 0:
        raise ConfigError("eval.trace_every must be a non-negative integer")
    ds = cfg["dataset"]
    sources = sum(k in ds for k in ("path", "train_path", "synthetic"))
    if sources != 1:
        raise ConfigError("dataset needs exactly one of 'path', 'train_path'+'test_path' or 'synthetic'")
    if ("train_path" in ds) != ("test_path" in ds):
        raise ConfigError("train_path and test_path go together")
    if "synthetic" in ds and ds["synthetic"] != "cubic":
        raise ConfigError(f"unknown synthetic dataset {ds['synthetic']!r}")
    # catches out-of-range optimizer values early
    OptimizerConfig(n_total=1, **cfg["optimizer"])


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return _with_defaults(cfg)


def _resolve_path(p, base):
    p = Path(p)
    return p if p.is_absolute() else Path(base) / p


def _build_model(cfg, n_features):
    spec = cfg["model"]
    if spec.get("type", "logistic") == "logistic":
        return LogisticRegression()
    return MlpArchitecture(n_inputs=n_features, hidden=tuple(spec.get("hidden", (50,))),
                           likelihood=spec.get("likelihood", "gaussian"), tau=float(spec.get("tau", 1.0)))


def _load_data(cfg, base, split_seed):
    ds = cfg["dataset"]
    task = ds.get("task", "regression" if "synthetic" in ds else "classification")
    fmt = ds.get("format")
    standardize = bool(ds.get("standardize", False))
    fraction = float(ds.get("train_fraction", 0.5))
    if "train_path" in ds:
        train = dataio.dataset_from_path(_resolve_path(ds["train_path"], base), task, fmt)
        test = dataio.dataset_from_path(_resolve_path(ds["test_path"], base), task, fmt)
        if train.d != test.d:
            raise ConfigError(f"train has {train.d} columns, test has {test.d}")
        return train, test
    if "synthetic" in ds:
        full = dataio.make_cubic_toy(int(ds.get("n", 30)), seed=split_seed)
        has_bias = False
    else:
        full = dataio.dataset_from_path(_resolve_path(ds["path"], base), task, fmt)
        has_bias = True
    spec = dataio.SplitSpec(train_fraction=fraction, seed=split_seed, standardize=standardize, has_bias=has_bias)
    return dataio.split(full, spec)


def _seed_int(*entropy) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, dtype=np.uint32)[0])


# ---------------------------------------------------------------- state I/O

def state_to_dict(state) -> dict:
    """JSON-ready description of a Gaussian state (``version`` is required)."""
    out = {"format": STATE_FORMAT, "version": STATE_VERSION, "dim": int(state.dim), "step": int(state.step),
           "mean": state.mean.tolist(), "momentum": state.momentum_buf.tolist()}
    if isinstance(state, GaussianState):
        out["kind"] = "lowrank"
        out["rank"] = int(state.precision.rank)
        out["u_factors"] = state.precision.u_factors.tolist()
        out["diag"] = state.precision.diag.tolist()
    elif isinstance(state, DenseState):
        out["kind"] = "dense"
        out["precision"] = state.precision.tolist()
    else:
        raise ConfigError(f"cannot serialize {type(state).__name__}")
    return out


def state_from_dict(obj: dict):
    if obj.get("format") != STATE_FORMAT:
        raise ConfigError("not a serialized Gaussian state")
    if "version" not in obj:
        raise ConfigError("state file has no version field")
    if obj["version"] != STATE_VERSION:
        raise ConfigError(f"unsupported state version {obj['version']}")
    dim = int(obj["dim"])
    mean = np.asarray(obj["mean"], dtype=np.float64)
    buf = np.asarray(obj["momentum"], dtype=np.float64)
    if obj["kind"] == "lowrank":
        u = np.asarray(obj["u_factors"], dtype=np.float64).reshape(dim, int(obj["rank"]))
        prec = la.LowRankDiagMatrix(u, np.asarray(obj["diag"], dtype=np.float64))
        return GaussianState(mean, prec, buf, int(obj["step"]))
    if obj["kind"] == "dense":
        prec = np.asarray(obj["precision"], dtype=np.float64).reshape(dim, dim)
        return DenseState(mean, prec, buf, int(obj["step"]))
    raise ConfigError(f"unknown state kind {obj['kind']!r}")


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def save_state(state, path) -> None:
    _write_json(path, state_to_dict(state))


def load_state(path):
    with open(path, "r", encoding="utf-8") as fh:
        return state_from_dict(json.load(fh))


# ---------------------------------------------------------------- running

def _evaluate(state, model, train, test, lam, n_mc, seed):
    neg_elbo = -mt.elbo_estimate(state, model, train, lam, n_mc=n_mc, rng=np.random.default_rng([seed, 0]),
                                 per_example=True)
    nll = mt.predictive_nll(state, model, test, n_mc=n_mc, rng=np.random.default_rng([seed, 1]))
    return neg_elbo, nll


def _fmt(x):
    return repr(float(x))


def _run_one(job):
    """Train and evaluate one (split, restart); returns a summary dict."""
    cfg, base, out_dir, split_idx, restart_idx, seed = job
    run_dir = Path(out_dir) / f"split{split_idx:03d}_restart{restart_idx:03d}"
    run_dir.mkdir(parents=True, exist_ok=True)
    split_seed = _seed_int(seed, split_idx)
    run_seed = _seed_int(seed, split_idx, restart_idx)
    eval_seed = _seed_int(seed, split_idx, restart_idx, 1)
    train, test = _load_data(cfg, base, split_seed)
    model = _build_model(cfg, train.d)
    opt = OptimizerConfig(n_total=train.n, seed=run_seed, **cfg["optimizer"])
    lam = opt.prior_precision
    n_mc = cfg["eval"]["n_mc"]
    epochs = cfg["epochs"]
    every = cfg["eval"]["trace_every"] or max(1, epochs // 100)
    state0 = None
    if isinstance(model, MlpArchitecture):
        state0 = init_state(cfg["method"], model.n_params(train.d), opt,
                            mean=model.init_mean(np.random.default_rng([run_seed, 7])))

    trace_rows, timing_rows = [], []
    t0 = time.perf_counter()

    def record(epoch, state):
        if epoch % every and epoch != epochs:
            return
        neg_elbo, nll = _evaluate(state, model, train, test, lam, min(n_mc, 200), _seed_int(eval_seed, epoch))
        trace_rows.append([str(epoch), str(state.step), _fmt(neg_elbo), _fmt(nll)])
        timing_rows.append([str(epoch), f"{time.perf_counter() - t0:.6f}"])

    result = {"split": split_idx, "restart": restart_idx, "status": "ok", "error": None}
    state = None
    try:
        state = state0 if state0 is not None else init_state(cfg["method"], model.n_params(train.d), opt)
        record(0, state)
        if epochs:
            state = fit(model, train, opt, cfg["method"], epochs, state=state, callback=record)
        wall = time.perf_counter() - t0
        neg_elbo, nll = _evaluate(state, model, train, test, lam, n_mc, eval_seed)
        rec = mt.MetricsRecord(neg_elbo_per_example=neg_elbo, test_nll=nll,
                               wall_time=wall if cfg["record_timing"] else None)
        if isinstance(model, MlpArchitecture) and model.likelihood == "gaussian":
            rec.rmse = mt.rmse(state, model, test, n_mc, rng=np.random.default_rng([eval_seed, 2]))
        if cfg["reference"]:
            ref = full_gaussian_reference(train, lam)
            save_state(ref, run_dir / "reference.json")
            rec.symmetric_kl = mt.symmetric_kl(ref, state)
        if not all(math.isfinite(v) for v in (rec.neg_elbo_per_example, rec.test_nll)):
            raise NumericError("final metrics are not finite")
        result["metrics"] = rec.as_dict()
    except (NumericError, FloatingPointError) as exc:
        result["status"] = "diverged"
        result["error"] = str(exc)
        result["metrics"] = None

    with open(run_dir / "trace.csv", "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        w.writerows(trace_rows)
    if cfg["record_timing"]:
        with open(run_dir / "timing.csv", "w", newline="", encoding="ascii") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "wall_time"])
            w.writerows(timing_rows)
    if state is not None and result["status"] == "ok":
        save_state(state, run_dir / "state.json")
    _write_json(run_dir / "metrics.json", result)
    return result


def _aggregate(results):
    ok = [r for r in results if r["status"] == "ok"]
    summary = {"n_runs": len(results), "n_ok": len(ok), "n_diverged": len(results) - len(ok), "metrics": {}}
    for key in ("neg_elbo_per_example", "test_nll", "symmetric_kl", "rmse"):
        vals = np.array([r["metrics"][key] for r in ok if r["metrics"][key] is not None], dtype=np.float64)
        if vals.size == 0:
            continue
        se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
        summary["metrics"][key] = {"mean": float(vals.mean()), "se": se, "n": int(vals.size)}
    return summary


def run_experiment(cfg: dict, out_dir, seed: int, base_dir=".") -> dict:
    """Run every split/restart of ``cfg`` and write results under ``out_dir``.

    Each run draws its own seeds from ``(seed, split, restart)``, so results
    do not depend on worker scheduling.
    """
    cfg = _with_defaults(cfg)
    cfg["seed"] = int(seed)
    _validate(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_json(out_dir / "config.json", cfg)
    jobs = [(cfg, str(base_dir), str(out_dir), s, r, int(seed))
            for s in range(cfg["splits"]) for r in range(cfg["restarts"])]
    if cfg["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    summary = _aggregate(results)
    _write_json(out_dir / "summary.json", summary)
    return summary


# ---------------------------------------------------------------- dump-cov

def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _dump_one(state, out_dir):
    g = mt.DenseGaussian.from_state(state)
    out_dir.mkdir(parents=True, exist_ok=True)
    dim = g.dim
    _write_rows(out_dir / "means.csv", ["index", "value"], [[i, _fmt(v)] for i, v in enumerate(g.mean)])
    _write_rows(out_dir / "variances.csv", ["index", "value"],
                [[i, _fmt(v)] for i, v in enumerate(np.diag(g.covariance))])
    _write_rows(out_dir / "covariance.csv", ["row", "col", "value"],
                [[i, j, _fmt(g.covariance[i, j])] for i in range(dim) for j in range(dim) if i != j])


def dump_covariance(state, reference, out_dir) -> None:
    """Write ``means.csv``, ``variances.csv`` and ``covariance.csv`` (off-diagonal
    entries only) for ``state`` under ``out_dir/state`` and for ``reference``
    under ``out_dir/reference``."""
    for s in (state, reference):
        if s.dim > DENSE_LIMIT:
            raise ConfigError(f"dump-cov needs D <= {DENSE_LIMIT}")
    if state.dim != reference.dim:
        raise ConfigError("state and reference dimensions differ")
    out_dir = Path(out_dir)
    _dump_one(state, out_dir / "state")
    _dump_one(reference, out_dir / "reference")


# ---------------------------------------------------------------- selftest

def selftest(n_cases: int = 50, seed: int = 0, stream=None) -> bool:
    """Compare the structured operations with dense linear algebra on random cases."""
    stream = stream or sys.stdout
    rng = np.random.default_rng(seed)
    worst = {"woodbury": 0.0, "factor": 0.0, "logdet": 0.0, "trace": 0.0, "eig": 0.0}
    for _ in range(n_cases):
        dim = int(rng.integers(2, 51))
        rank = int(rng.integers(0, min(5, dim) + 1))
        a = la.LowRankDiagMatrix(rng.standard_normal((dim, rank)), rng.uniform(0.5, 2.0, dim))
        dense = a.to_dense()
        inv = np.linalg.inv(dense)
        g = rng.standard_normal(dim)
        ref = np.linalg.solve(dense, g)
        worst["woodbury"] = max(worst["woodbury"],
                                np.linalg.norm(la.woodbury_solve(a, g) - ref) / np.linalg.norm(ref))
        b = la.symmetric_factor_apply(a, np.eye(dim))
        worst["factor"] = max(worst["factor"], float(np.max(np.abs(b @ b.T - inv))))
        logdet, trace = la.logdet_and_trace_inverse(a)
        sign, ref_logdet = np.linalg.slogdet(dense)
        worst["logdet"] = max(worst["logdet"], abs(logdet - ref_logdet) / max(1.0, abs(ref_logdet)))
        worst["trace"] = max(worst["trace"], abs(trace - np.trace(inv)) / abs(np.trace(inv)))
        k = min(rank + 3, dim)
        cols = rng.standard_normal((dim, k))
        if rank:
            eig = la.fast_eig(cols, rank, oversample=3, rng=rng)
            top = np.sort(np.linalg.eigvalsh(cols @ cols.T))[::-1][:rank]
            worst["eig"] = max(worst["eig"], float(np.max(np.abs(eig.values - top) / top)))
    limits = {"woodbury": 1e-10, "factor": 1e-8, "logdet": 1e-10, "trace": 1e-10, "eig": 1e-6}
    ok = True
    for key, value in worst.items():
        passed = value <= limits[key]
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {key:9s} worst={value:.3e} limit={limits[key]:.0e}", file=stream)
    return ok


# ---------------------------------------------------------------- entry point

def _parser():
    p = argparse.ArgumentParser(prog="slang", description="Low-rank natural-gradient variational inference")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    r.add_argument("--out", default="results")
    r.add_argument("--seed", type=int, required=True)
    r.add_argument("--epochs", type=int)
    r.add_argument("--method", choices=METHODS)
    r.add_argument("--rank", type=int)
    r.add_argument("--splits", type=int)
    r.add_argument("--workers", type=int)
    d = sub.add_parser("dump-cov", help="write means/variances/covariances of two saved states")
    d.add_argument("state")
    d.add_argument("reference")
    d.add_argument("--out", required=True)
    t = sub.add_parser("selftest", help="check structured algebra against dense oracles")
    t.add_argument("--cases", type=int, default=50)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            for key in ("epochs", "method", "splits", "workers"):
                if getattr(args, key) is not None:
                    cfg[key] = getattr(args, key)
            if args.rank is not None:
                cfg["optimizer"]["rank"] = args.rank
            base = os.path.dirname(os.path.abspath(args.config))
            summary = run_experiment(cfg, args.out, args.seed, base_dir=base)
            json.dump(summary, sys.stdout, indent=2, sort_keys=True)
            sys.stdout.write("\n")
            return 0 if summary["n_ok"] else 1
        if args.command == "dump-cov":
            dump_covariance(load_state(args.state), load_state(args.reference), args.out)
            return 0
        return 0 if selftest(args.cases) else 1
    except (SlangError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
