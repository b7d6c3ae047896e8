"""Config-driven experiment runner.

Subcommands:
    run <config> [--jobs N] [--out DIR]   execute every method x seed, write
                                          metrics.csv, per-run traces and
                                          checkpoints, print the ranked table
    validate <config>                     schema + cross-field checks only
    describe <checkpoint>                 print model dims, hyperparameters
                                          and training provenance

Exit codes: 0 success, 1 config error, 2 data error, 3 partial run failures.
The DVGP_OUT_ROOT environment variable sets the default root for relative
output directories.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import yaml

from .data import (
    Dataset,
    apply_standardization,
    infer_intervals,
    load_csv,
    rng_for,
    split,
    standardize,
    synthetic_train_test,
)
from .fourier import FourierBasis, MultiDimBasis, basis_to_config, target_feature_count
from .kernels import KernelSpec, spec_from_config, spec_to_config
from .likelihoods import GaussianLikelihood, likelihood_from_config, likelihood_to_config
from .linalg import kmeans
from .metrics import MetricsRecord, aggregate, evaluate, format_table, write_metrics_csv
from .model import DecoupledGP, FourierCovBasis, InducingCovBasis, VariationalState
from .training import TrainConfig, train

logger = logging.getLogger("dvgp.cli")

SCHEMA_VERSION = 1
METHOD_KINDS = ("decoupled_fourier", "decoupled_inducing", "svgp", "sgpr", "vff")
_FOURIER_KINDS = ("decoupled_fourier", "vff")

_TOP_KEYS = {"schema_version", "dataset", "standardize", "methods", "train",
             "replications", "output_dir"}
_SYNTH_KEYS = {"kind", "dims", "n_train", "n_test", "kernel", "noise_variance",
               "train_gap", "sampler"}
_CSV_KEYS = {"kind", "path", "target", "features", "test_fraction", "delimiter"}
_KERNEL_KEYS = {"family", "lengthscales", "variance", "structure"}
_METHOD_KEYS = {"name", "kind", "num_mean_inducing", "num_cov_features",
                "num_inducing", "structure", "family", "lengthscale_init",
                "variance_init", "noise_variance_init", "init",
                "interval_expansion"}
_TRAIN_KEYS = {"iterations", "batch_size", "learning_rate", "nat_grad_step",
               "nat_grad_decay_every", "nat_grad_decay_factor",
               "optimize_locations", "optimize_hyperparameters", "eval_every",
               "record_full_elbo"}
_REPL_KEYS = {"count", "base_seed"}


def _err(errors, field, reason):
    errors.append({"field": field, "reason": reason})


def _check_unknown(errors, block, allowed, path):
    for key in block:
        if key not in allowed:
            _err(errors, f"{path}.{key}", "unknown key")


def validate_config(cfg) -> list:
    """Full schema and cross-field validation; returns a list of errors."""
    errors: list = []
    if not isinstance(cfg, dict):
        _err(errors, "<root>", "config must be a mapping")
        return errors
    _check_unknown(errors, cfg, _TOP_KEYS, "<root>")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        _err(errors, "schema_version", f"must be {SCHEMA_VERSION}")

    ds = cfg.get("dataset")
    if not isinstance(ds, dict):
        _err(errors, "dataset", "required mapping")
    else:
        kind = ds.get("kind")
        if kind == "synthetic":
            _check_unknown(errors, ds, _SYNTH_KEYS, "dataset")
            for key in ("dims", "n_train", "n_test"):
                if not isinstance(ds.get(key), int) or ds.get(key, 0) < 1:
                    _err(errors, f"dataset.{key}", "positive integer required")
            if not isinstance(ds.get("kernel"), dict):
                _err(errors, "dataset.kernel", "required mapping")
            else:
                _check_unknown(errors, ds["kernel"], _KERNEL_KEYS, "dataset.kernel")
            nv = ds.get("noise_variance")
            if not isinstance(nv, (int, float)) or nv < 0:
                _err(errors, "dataset.noise_variance", "non-negative number required")
            gap = ds.get("train_gap")
            if gap is not None:
                if (not isinstance(gap, (list, tuple)) or len(gap) != 2
                        or not 0 <= gap[0] < gap[1] <= 1):
                    _err(errors, "dataset.train_gap", "expected [a, b] with 0 <= a < b <= 1")
        elif kind == "csv":
            _check_unknown(errors, ds, _CSV_KEYS, "dataset")
            if not isinstance(ds.get("path"), str):
                _err(errors, "dataset.path", "string path required")
            if not isinstance(ds.get("target"), str):
                _err(errors, "dataset.target", "target column name required")
            tf = ds.get("test_fraction", 0.1)
            if not isinstance(tf, (int, float)) or not 0 < tf < 1:
                _err(errors, "dataset.test_fraction", "must lie in (0, 1)")
        else:
            _err(errors, "dataset.kind", "must be 'synthetic' or 'csv'")

    methods = cfg.get("methods")
    if not isinstance(methods, list) or not methods:
        _err(errors, "methods", "at least one method required")
        methods = []
    names = set()
    for i, m in enumerate(methods):
        path = f"methods[{i}]"
        if not isinstance(m, dict):
            _err(errors, path, "method entries must be mappings")
            continue
        _check_unknown(errors, m, _METHOD_KEYS, path)
        kind = m.get("kind")
        if kind not in METHOD_KINDS:
            _err(errors, f"{path}.kind", f"must be one of {METHOD_KINDS}")
            continue
        name = m.get("name", kind)
        if name in names:
            _err(errors, f"{path}.name", f"duplicate method name {name!r}")
        names.add(name)
        if kind in ("decoupled_fourier", "decoupled_inducing"):
            ng = m.get("num_mean_inducing")
            nb = m.get("num_cov_features")
            if not isinstance(ng, int) or ng < 0:
                _err(errors, f"{path}.num_mean_inducing", "integer >= 0 required")
            if not isinstance(nb, int) or nb < 1:
                _err(errors, f"{path}.num_cov_features", "integer >= 1 required")
            if isinstance(ng, int) and isinstance(nb, int) and ng + nb < 1:
                _err(errors, f"{path}", "num_mean_inducing + num_cov_features must be > 0")
        elif kind == "vff":
            nb = m.get("num_cov_features")
            if not isinstance(nb, int) or nb < 1:
                _err(errors, f"{path}.num_cov_features", "integer >= 1 required")
        else:  # svgp / sgpr
            ni = m.get("num_inducing")
            if not isinstance(ni, int) or ni < 1:
                _err(errors, f"{path}.num_inducing", "integer >= 1 required")
        init = m.get("init", "random_subset")
        if init not in ("random_subset", "kmeans"):
            _err(errors, f"{path}.init", "must be 'random_subset' or 'kmeans'")
        nv = m.get("noise_variance_init", 0.1)
        if not isinstance(nv, (int, float)) or nv <= 0:
            _err(errors, f"{path}.noise_variance_init", "positive number required")

    tr = cfg.get("train")
    if not isinstance(tr, dict):
        _err(errors, "train", "required mapping")
    else:
        _check_unknown(errors, tr, _TRAIN_KEYS, "train")
        try:
            tc = TrainConfig(**{k: v for k, v in tr.items()})
            if (isinstance(ds, dict) and ds.get("kind") == "synthetic"
                    and isinstance(ds.get("n_train"), int)
                    and tc.batch_size > ds["n_train"]):
                _err(errors, "train.batch_size", "exceeds dataset n_train")
        except (TypeError, ValueError) as exc:
            _err(errors, "train", str(exc))

    rep = cfg.get("replications")
    if not isinstance(rep, dict):
        _err(errors, "replications", "required mapping")
    else:
        _check_unknown(errors, rep, _REPL_KEYS, "replications")
        if not isinstance(rep.get("count"), int) or rep.get("count", 0) < 1:
            _err(errors, "replications.count", "positive integer required")
        if not isinstance(rep.get("base_seed"), int):
            _err(errors, "replications.base_seed", "integer required")

    if not isinstance(cfg.get("output_dir"), str):
        _err(errors, "output_dir", "string path required")
    return errors


def load_config(path) -> dict:
    with open(path) as fh:
        return yaml.safe_load(fh)


# ---------------------------------------------------------------------------
# experiment construction
# ---------------------------------------------------------------------------


def _dataset_kernel(ds_cfg) -> KernelSpec:
    kc = ds_cfg["kernel"]
    dims = ds_cfg["dims"]
    ell = kc.get("lengthscales", 0.1)
    if isinstance(ell, (int, float)):
        ell = [float(ell)] * dims
    structure = kc.get("structure", "one_dim" if dims == 1 else "additive")
    return KernelSpec(
        families=(kc.get("family", "matern32"),) * dims,
        lengthscales=tuple(ell),
        variance=float(kc.get("variance", 1.0)),
        structure=structure,
    )


def build_dataset(cfg, seed: int):
    """Train/test datasets for one replication seed."""
    ds = cfg["dataset"]
    if ds["kind"] == "synthetic":
        train_ds, test_ds = synthetic_train_test(
            dims=ds["dims"],
            n_train=ds["n_train"],
            n_test=ds["n_test"],
            kernel_spec=_dataset_kernel(ds),
            noise_variance=float(ds["noise_variance"]),
            seed=seed,
            train_gap=ds.get("train_gap"),
            method=ds.get("sampler", "auto"),
        )
    else:
        full = load_csv(
            ds["path"], target=ds["target"], features=ds.get("features"),
            delimiter=ds.get("delimiter", ","),
        )
        train_ds, test_ds = split(full, float(ds.get("test_fraction", 0.1)), seed)
    if cfg.get("standardize", True):
        train_ds, rec = standardize(train_ds)
        test_ds = apply_standardization(test_ds, rec)
    return train_ds, test_ds


def _model_kernel(mcfg, dims: int) -> KernelSpec:
    structure = mcfg.get("structure", "one_dim" if dims == 1 else "additive")
    ell = mcfg.get("lengthscale_init", 0.3)
    if isinstance(ell, (int, float)):
        ell = [float(ell)] * dims
    return KernelSpec(
        families=(mcfg.get("family", "matern32"),) * dims,
        lengthscales=tuple(ell),
        variance=float(mcfg.get("variance_init", 1.0)),
        structure=structure,
    )


def _init_locations(X: np.ndarray, m: int, mode: str, seed: int) -> np.ndarray:
    if m == 0:
        return np.zeros((0, X.shape[1]))
    if mode == "kmeans":
        return kmeans(X, m, seed=seed).centers
    idx = rng_for(seed).choice(X.shape[0], size=min(m, X.shape[0]), replace=False)
    return X[idx].copy()


def build_method(mcfg, train_ds: Dataset, seed: int):
    """Build (model, initial state, realized beta size, gamma size)."""
    dims = train_ds.dim
    kernel = _model_kernel(mcfg, dims)
    lik = GaussianLikelihood(float(mcfg.get("noise_variance_init", 0.1)))
    kind = mcfg["kind"]
    init_mode = mcfg.get("init", "random_subset")

    if kind in ("decoupled_fourier", "decoupled_inducing"):
        n_gamma = mcfg["num_mean_inducing"]
        n_beta = mcfg["num_cov_features"]
    elif kind == "vff":
        n_gamma = 0
        n_beta = mcfg["num_cov_features"]
    else:
        n_gamma = 0
        n_beta = mcfg["num_inducing"]

    if kind in _FOURIER_KINDS:
        expansion = float(mcfg.get("interval_expansion", 0.1))
        intervals = infer_intervals(train_ds.X, expansion=expansion)
        n_freq = target_feature_count(n_beta, dims, kernel.structure)
        mb = MultiDimBasis(
            structure=kernel.structure,
            bases=tuple(FourierBasis(interval=iv, n_freq=n_freq) for iv in intervals),
        )
        basis = FourierCovBasis(mb)
        if basis.size != n_beta:
            logger.info(
                "method %s: realized %d Fourier features for target %d",
                mcfg.get("name", kind), basis.size, n_beta,
            )
    else:
        u = _init_locations(train_ds.X, n_beta, init_mode, seed)
        basis = InducingCovBasis(u)

    model = DecoupledGP(kernel, basis, lik)
    gamma = _init_locations(train_ds.X, n_gamma, init_mode, seed + 1)
    state = model.init_state(gamma)
    return model, state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def _write_json_atomic(obj, path):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(obj, fh, indent=1)
    os.replace(tmp, path)


def checkpoint_payload(model, state, mcfg, seed, train_cfg, dataset_tag, metrics):
    if isinstance(model.cov_basis, FourierCovBasis):
        basis_cfg = {"kind": "fourier", **basis_to_config(model.cov_basis.mb)}
    else:
        basis_cfg = {"kind": "inducing", "locations": model.cov_basis.u.tolist()}
    return {
        "schema_version": SCHEMA_VERSION,
        "method": mcfg,
        "seed": seed,
        "dataset": dataset_tag,
        "kernel": spec_to_config(model.kernel),
        "likelihood": likelihood_to_config(model.likelihood),
        "basis": basis_cfg,
        "state": {
            "a_gamma": state.a_gamma.tolist(),
            "a_beta": state.a_beta.tolist(),
            "chol_s": state.chol_s.tolist(),
            "gamma_locs": state.gamma_locs.tolist(),
        },
        "train": train_cfg,
        "metrics": metrics,
    }


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unknown checkpoint schema version {payload.get('schema_version')!r}")
    kernel = spec_from_config(payload["kernel"])
    lik = likelihood_from_config(payload["likelihood"])
    bc = payload["basis"]
    if bc["kind"] == "fourier":
        from .fourier import basis_from_config

        basis = FourierCovBasis(basis_from_config(bc))
    else:
        basis = InducingCovBasis(np.asarray(bc["locations"], dtype=float))
    st = payload["state"]
    state = VariationalState(
        a_gamma=np.asarray(st["a_gamma"], dtype=float),
        a_beta=np.asarray(st["a_beta"], dtype=float),
        chol_s=np.asarray(st["chol_s"], dtype=float),
        gamma_locs=np.asarray(st["gamma_locs"], dtype=float).reshape(
            len(st["gamma_locs"]), -1
        )
        if st["gamma_locs"]
        else np.zeros((0, kernel.dim)),
    )
    return DecoupledGP(kernel, basis, lik), state, payload


def describe_checkpoint(path) -> str:
    model, state, payload = load_checkpoint(path)
    lines = [
        f"checkpoint {path}",
        f"  method: {payload['method'].get('name', payload['method'].get('kind'))} "
        f"({payload['method'].get('kind')})",
        f"  dataset: {payload['dataset']}",
        f"  seed: {payload['seed']}",
        f"  dims: D={model.kernel.dim}, |beta|={model.cov_basis.size}, "
        f"|gamma|={state.n_gamma}",
        f"  kernel: {model.kernel.structure} "
        f"families={list(model.kernel.families)} "
        f"lengthscales={[round(v, 6) for v in model.kernel.lengthscales]} "
        f"variance={model.kernel.variance:.6g}",
        f"  likelihood: {likelihood_to_config(model.likelihood)}",
    ]
    if payload.get("train"):
        lines.append(f"  train: {payload['train']}")
    if payload.get("metrics"):
        lines.append(f"  metrics: {payload['metrics']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _dataset_tag(cfg: dict) -> str:
    ds = cfg["dataset"]
    if ds["kind"] == "csv":
        return ds["path"]
    return f"synthetic(D={ds['dims']},N={ds['n_train']})"


def _run_single(cfg: dict, method_index: int, seed: int, out_dir: str) -> dict:
    mcfg = cfg["methods"][method_index]
    name = mcfg.get("name", mcfg["kind"])
    try:
        train_ds, test_ds = build_dataset(cfg, seed)
    except Exception as exc:
        return {"status": "data_error", "method": name, "seed": seed, "error": str(exc)}
    try:
        t_start = time.perf_counter()
        model, state = build_method(mcfg, train_ds, seed)
        train_cfg_dict = dict(cfg["train"])
        trace = None
        if mcfg["kind"] == "sgpr":
            state = model.analytic_optimum(
                train_ds.X, train_ds.y, max_n=max(50000, train_ds.n)
            )
        else:
            tc = TrainConfig(seed=seed, **train_cfg_dict)
            state, trace = train(model, state, train_ds.X, train_ds.y, tc)
            if trace.aborted:
                raise RuntimeError(
                    f"training aborted at iteration {trace.abort_iteration}: "
                    f"{trace.abort_reason}"
                )
        wall = time.perf_counter() - t_start
        pred = model.predict(state, test_ds.X)
        m = evaluate(pred, model.likelihood, test_ds.y)
        record = MetricsRecord(
            method=name,
            dataset=_dataset_tag(cfg),
            n_cov_features=model.cov_basis.size,
            n_mean_inducing=state.n_gamma,
            seed=seed,
            test_log_lik=m["test_log_lik"],
            rmse=m["rmse"],
            coverage95=m["coverage95"],
            wall_seconds=wall,
        )
        run_dir = os.path.join(out_dir, "runs", f"{name}_seed{seed}")
        os.makedirs(run_dir, exist_ok=True)
        if trace is not None:
            tmp = os.path.join(run_dir, "trace.jsonl.tmp")
            trace.write_jsonl(tmp)
            os.replace(tmp, os.path.join(run_dir, "trace.jsonl"))
        payload = checkpoint_payload(
            model, state, mcfg, seed, train_cfg_dict, train_ds.provenance, m
        )
        _write_json_atomic(payload, os.path.join(run_dir, "checkpoint.json"))
        return {"status": "ok", "record": record.__dict__}
    except Exception as exc:
        return {"status": "failed", "method": name, "seed": seed, "error": str(exc)}


def run_experiment(cfg: dict, out_dir: str, jobs: int = 1) -> int:
    os.makedirs(out_dir, exist_ok=True)
    count = cfg["replications"]["count"]
    base_seed = cfg["replications"]["base_seed"]
    tasks = [
        (mi, base_seed + rep)
        for mi in range(len(cfg["methods"]))
        for rep in range(count)
    ]
    # pre-flight the dataset once so config-level data problems exit cleanly
    try:
        build_dataset(cfg, base_seed)
    except Exception as exc:
        print(json.dumps({"error": {"kind": "data", "reason": str(exc)}}))
        return 2

    results = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_single, cfg, mi, seed, out_dir) for mi, seed in tasks]
            results = [f.result() for f in futures]
    else:
        results = [_run_single(cfg, mi, seed, out_dir) for mi, seed in tasks]

    records = [MetricsRecord(**r["record"]) for r in results if r["status"] == "ok"]
    failures = [r for r in results if r["status"] != "ok"]
    if records:
        tmp = os.path.join(out_dir, "metrics.csv.tmp")
        write_metrics_csv(records, tmp)
        os.replace(tmp, os.path.join(out_dir, "metrics.csv"))
        print(format_table(aggregate(records)))
    for f in failures:
        print(json.dumps({"error": {"kind": "run", **f}}), file=sys.stderr)
    if failures:
        return 3 if records else 2
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dvgp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.add_argument("--out", default=None)

    p_val = sub.add_parser("validate", help="validate an experiment config")
    p_val.add_argument("config")

    p_desc = sub.add_parser("describe", help="describe a run checkpoint")
    p_desc.add_argument("checkpoint")

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")

    if args.command in ("run", "validate"):
        try:
            cfg = load_config(args.config)
        except Exception as exc:
            print(json.dumps({"errors": [{"field": "<file>", "reason": str(exc)}]}))
            return 1
        errors = validate_config(cfg)
        if errors:
            print(json.dumps({"errors": errors}, indent=1))
            return 1
        if args.command == "validate":
            print(json.dumps({"ok": True, "methods": len(cfg["methods"])}))
            return 0
        out_root = os.environ.get("DVGP_OUT_ROOT", ".")
        out_dir = args.out if args.out else os.path.join(out_root, cfg["output_dir"])
        return run_experiment(cfg, out_dir, jobs=args.jobs)

    try:
        print(describe_checkpoint(args.checkpoint))
    except Exception as exc:
        print(json.dumps({"errors": [{"field": "<checkpoint>", "reason": str(exc)}]}))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
