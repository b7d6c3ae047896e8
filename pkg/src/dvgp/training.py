"""Minibatch stochastic training: natural-gradient steps on the covariance
block, Adam on hyperparameters, basis locations and mean coefficients, with
seeded shuffling and trace recording. Deterministic given the seed."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

from .likelihoods import GaussianLikelihood
from .linalg import chol_psd
from .model import DecoupledGP, InducingCovBasis, VariationalState


@dataclass(frozen=True)
class TrainConfig:
    iterations: int
    batch_size: int
    learning_rate: float = 1e-2
    nat_grad_step: float = 0.1
    nat_grad_decay_every: int = 2000
    nat_grad_decay_factor: float = 0.5
    seed: int = 0
    optimize_locations: bool = True
    optimize_hyperparameters: bool = True
    eval_every: int = 100
    record_full_elbo: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        # zero step sizes are allowed and freeze the corresponding block
        if self.learning_rate < 0 or self.nat_grad_step < 0:
            raise ValueError("step sizes must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class TraceRecord:
    iteration: int
    elbo_minibatch: float
    elbo_full: float | None
    hypers: dict
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "iteration": self.iteration,
                "elbo_minibatch": self.elbo_minibatch,
                "elbo_full": self.elbo_full,
                "hypers": self.hypers,
                "wall_time": self.wall_time,
            }
        )


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    aborted: bool = False
    abort_iteration: int | None = None
    abort_reason: str | None = None

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")
            if self.aborted:
                fh.write(
                    json.dumps(
                        {
                            "aborted": True,
                            "iteration": self.abort_iteration,
                            "reason": self.abort_reason,
                        }
                    )
                    + "\n"
                )


def minibatch_stream(n: int, batch_size: int, seed: int):
    """Endless epoch-wise shuffled index batches; every index appears exactly
    once per epoch and the last partial batch is kept."""
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {n}")
    rng = np.random.Generator(np.random.Philox(seed))
    while True:
        perm = rng.permutation(n)
        for lo in range(0, n, batch_size):
            yield perm[lo : lo + batch_size]


class Adam:
    """Gradient-ascent Adam over a dict of named parameter arrays."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for name, x in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(np.asarray(x, float))
                self.v[name] = np.zeros_like(np.asarray(x, float))
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mh = self.m[name] / (1 - self.beta1**self.t)
            vh = self.v[name] / (1 - self.beta2**self.t)
            out[name] = x + self.lr * mh / (np.sqrt(vh) + self.eps)
        return out


def natural_step(model: DecoupledGP, state: VariationalState, grads, rho: float,
                 gram=None):
    """One natural-gradient step on the covariance-block natural parameters.

    Returns the updated (a_beta, chol_s) or None if no positive-definite step
    was found after halving the step size several times.
    """
    gram = gram if gram is not None else model.op_gram()
    th1, th2 = state.natural_params(gram)
    m_beta = gram.matvec(state.a_beta)
    d_th1 = grads.nat_mean - 2.0 * grads.nat_cov @ m_beta
    d_th2 = grads.nat_cov
    for _ in range(12):
        prec = -2.0 * (th2 + rho * d_th2)
        try:
            L = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError:
            rho *= 0.5
            continue
        eye = np.eye(prec.shape[0])
        s_new = sla.cho_solve((L, True), eye)
        s_new = 0.5 * (s_new + s_new.T)
        try:
            chol_s = chol_psd(s_new, max_jitter=1e-8).L
        except np.linalg.LinAlgError:
            rho *= 0.5
            continue
        m_new = s_new @ (th1 + rho * d_th1)
        return gram.solve(m_new), chol_s
    return None


def _hyper_snapshot(model: DecoupledGP) -> dict:
    snap = {
        "lengthscales": [float(v) for v in model.kernel.lengthscales],
        "variance": float(model.kernel.variance),
    }
    if isinstance(model.likelihood, GaussianLikelihood):
        snap["noise_variance"] = float(model.likelihood.noise_variance)
    return snap


def _first_bad_block(named_arrays) -> str | None:
    for name, arr in named_arrays:
        if arr is None:
            continue
        if not np.all(np.isfinite(arr)):
            return name
    return None


def train(model: DecoupledGP, state: VariationalState, X, y, config: TrainConfig):
    """Run the stochastic training loop; mutates the model's kernel/likelihood
    and returns (final state, trace)."""
    X = np.asarray(X, float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, float)
    n = X.shape[0]
    stream = minibatch_stream(n, config.batch_size, config.seed)
    adam = Adam(config.learning_rate)
    trace = TrainTrace()
    t0 = time.perf_counter()
    gaussian = isinstance(model.likelihood, GaussianLikelihood)
    has_beta_locs = isinstance(model.cov_basis, InducingCovBasis)
    last_good = state.copy()

    for it in range(1, config.iterations + 1):
        idx = next(stream)
        Xb, yb = X[idx], y[idx]
        gram = model.op_gram()
        grads = model.elbo_grads(
            state, Xb, yb, n,
            want_hyper=config.optimize_hyperparameters,
            want_locations=config.optimize_locations,
            gram=gram,
        )
        bad = _first_bad_block(
            [
                ("a_gamma", grads.a_gamma),
                ("a_beta", grads.a_beta),
                ("chol_s", grads.chol_s),
                ("log_kernel", grads.log_kernel),
                ("log_noise", np.asarray([grads.log_noise])),
                ("gamma_locs", grads.gamma_locs),
                ("beta_locs", grads.beta_locs),
            ]
        )
        if bad is not None:
            trace.aborted = True
            trace.abort_iteration = it
            trace.abort_reason = f"non-finite gradient in block {bad!r}"
            return last_good, trace

        # (i) natural-gradient step on the covariance block
        if config.nat_grad_step > 0:
            decay = config.nat_grad_decay_factor ** ((it - 1) // config.nat_grad_decay_every)
            stepped = natural_step(model, state, grads, config.nat_grad_step * decay, gram=gram)
            if stepped is None:
                trace.aborted = True
                trace.abort_iteration = it
                trace.abort_reason = "natural-gradient step lost positive definiteness"
                return last_good, trace
            a_beta, chol_s = stepped
        else:
            a_beta, chol_s = state.a_beta, state.chol_s

        # (ii) Adam step on the remaining blocks from the same batch gradient
        params: dict = {}
        gvals: dict = {}
        if state.a_gamma.size:
            params["a_gamma"] = state.a_gamma
            gvals["a_gamma"] = grads.a_gamma
        if config.optimize_hyperparameters:
            params["log_kernel"] = model.kernel.log_params()
            gvals["log_kernel"] = grads.log_kernel
            if gaussian:
                params["log_noise"] = np.array([np.log(model.likelihood.noise_variance)])
                gvals["log_noise"] = np.array([grads.log_noise])
        if config.optimize_locations:
            if state.gamma_locs.size:
                params["gamma_locs"] = state.gamma_locs
                gvals["gamma_locs"] = grads.gamma_locs
            if has_beta_locs:
                params["beta_locs"] = model.cov_basis.u
                gvals["beta_locs"] = grads.beta_locs
        new = adam.step(params, gvals) if params else {}

        if "log_kernel" in new:
            model.kernel = model.kernel.with_log_params(new["log_kernel"])
        if "log_noise" in new:
            model.likelihood = model.likelihood.with_noise(float(np.exp(new["log_noise"][0])))
        if "beta_locs" in new:
            model.cov_basis = InducingCovBasis(new["beta_locs"])
        state = VariationalState(
            a_gamma=new.get("a_gamma", state.a_gamma),
            a_beta=a_beta,
            chol_s=chol_s,
            gamma_locs=new.get("gamma_locs", state.gamma_locs),
        )

        if it % config.eval_every == 0 or it == config.iterations:
            elbo_mb = model.elbo(state, Xb, yb, n)
            if not np.isfinite(elbo_mb):
                trace.aborted = True
                trace.abort_iteration = it
                trace.abort_reason = "non-finite ELBO"
                return last_good, trace
            elbo_full = model.elbo(state, X, y, n) if config.record_full_elbo else None
            trace.records.append(
                TraceRecord(
                    iteration=it,
                    elbo_minibatch=float(elbo_mb),
                    elbo_full=None if elbo_full is None else float(elbo_full),
                    hypers=_hyper_snapshot(model),
                    wall_time=time.perf_counter() - t0,
                )
            )
        last_good = state.copy()

    return state, trace
