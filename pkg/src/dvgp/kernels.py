"""Stationary Matern kernels (nu in {1/2, 3/2, 5/2}) with ARD lengthscales and
one-dimensional, additive, separable (product) or stationary-plus-periodic
structure over hyper-rectangle input domains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import backend
from .backend import _matern_du_np, _matern_np

FAMILY_CODES = {"matern12": 0, "matern32": 1, "matern52": 2}

ONE_DIM = "one_dim"
ADDITIVE = "additive"
SEPARABLE = "separable"
HYBRID_ADDITIVE = "hybrid_additive"
STRUCTURES = (ONE_DIM, ADDITIVE, SEPARABLE, HYBRID_ADDITIVE)


@dataclass(frozen=True)
class PeriodicSpec:
    """Non-stationary (periodic) addend for the hybrid structure."""

    variance: float
    lengthscale: float
    period: float

    def __post_init__(self):
        if self.variance < 0:
            raise ValueError("periodic variance must be >= 0")
        if self.lengthscale <= 0 or self.period <= 0:
            raise ValueError("periodic lengthscale and period must be > 0")


@dataclass(frozen=True)
class KernelSpec:
    """Matern kernel family per dimension, ARD lengthscales, total variance.

    The additive structure splits the total variance equally across the D
    per-dimension kernels so that k(x, x) equals ``variance`` regardless of
    structure; separable factors carry variance**(1/D) each for the same
    reason.
    """

    families: tuple
    lengthscales: tuple
    variance: float
    structure: str = ONE_DIM
    nonstationary: PeriodicSpec | None = None

    def __post_init__(self):
        fams = tuple(self.families)
        ells = tuple(float(v) for v in self.lengthscales)
        object.__setattr__(self, "families", fams)
        object.__setattr__(self, "lengthscales", ells)
        if self.structure not in STRUCTURES:
            raise ValueError(f"unknown structure {self.structure!r}")
        for f in fams:
            if f not in FAMILY_CODES:
                raise ValueError(
                    f"unsupported kernel family {f!r}; "
                    f"choose one of {sorted(FAMILY_CODES)}"
                )
        if len(fams) != len(ells):
            raise ValueError("families and lengthscales must have equal length")
        if any(l <= 0 for l in ells):
            raise ValueError("lengthscales must be positive")
        if self.variance <= 0:
            raise ValueError("variance must be positive")
        D = len(ells)
        if self.structure == ONE_DIM and D != 1:
            raise ValueError("one_dim structure requires exactly one dimension")
        if self.structure == SEPARABLE and D > 3:
            raise ValueError("separable structure is limited to D <= 3")
        if self.structure == HYBRID_ADDITIVE:
            if D != 1:
                raise ValueError("hybrid_additive structure requires D = 1")
            if self.nonstationary is None:
                raise ValueError("hybrid_additive requires a nonstationary addend")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    @property
    def codes(self) -> np.ndarray:
        return np.array([FAMILY_CODES[f] for f in self.families], dtype=np.int64)

    @property
    def per_dim_variance(self) -> np.ndarray:
        D = self.dim
        if self.structure in (ONE_DIM, ADDITIVE, HYBRID_ADDITIVE):
            return np.full(D, self.variance / D)
        # separable: equal factor split of the total variance
        return np.full(D, self.variance ** (1.0 / D))

    # -- log-parameter view (positivity through log-space) ------------------

    def log_params(self) -> np.ndarray:
        return np.concatenate([np.log(self.lengthscales), [math.log(self.variance)]])

    def with_log_params(self, lp: np.ndarray) -> "KernelSpec":
        lp = np.asarray(lp, dtype=float)
        D = self.dim
        if lp.shape != (D + 1,):
            raise ValueError(f"expected {D + 1} log-parameters, got {lp.shape}")
        return KernelSpec(
            families=self.families,
            lengthscales=tuple(np.exp(lp[:D])),
            variance=float(np.exp(lp[D])),
            structure=self.structure,
            nonstationary=self.nonstationary,
        )

    @property
    def n_log_params(self) -> int:
        return self.dim + 1


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None] if x.shape[0] else x.reshape(0, 1)
    return x


def periodic_matrix(ns: PeriodicSpec, X1, X2) -> np.ndarray:
    X1, X2 = _as_2d(X1), _as_2d(X2)
    r = np.abs(X1[:, 0, None] - X2[None, :, 0])
    s = np.sin(math.pi * r / ns.period)
    return ns.variance * np.exp(-2.0 * s * s / ns.lengthscale**2)


def eval_kernel(spec: KernelSpec, x, xp) -> float:
    """Pointwise kernel value; raises on dimension mismatch."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(xp, dtype=float))
    if x.shape != xp.shape or x.shape[0] != spec.dim:
        raise ValueError(
            f"input dimension mismatch: {x.shape} vs {xp.shape} for D={spec.dim}"
        )
    u = np.abs(x - xp) / np.asarray(spec.lengthscales)
    vals = np.array(
        [_matern_np(FAMILY_CODES[f], ui) for f, ui in zip(spec.families, u)]
    )
    if spec.structure in (ONE_DIM, ADDITIVE):
        return float(np.sum(spec.per_dim_variance * vals))
    if spec.structure == SEPARABLE:
        return float(spec.variance * np.prod(vals))
    # hybrid: stationary 1-D Matern plus the periodic addend
    stat = float(spec.variance * vals[0])
    return stat + float(periodic_matrix(spec.nonstationary, x, xp)[0, 0])


def kernel_matrix(spec: KernelSpec, X, Xp=None) -> np.ndarray:
    """Cross-kernel matrix k(X, Xp); k(X, X) when Xp is omitted."""
    X = _as_2d(X)
    Xp = X if Xp is None else _as_2d(Xp)
    if X.shape[1] != spec.dim or Xp.shape[1] != spec.dim:
        raise ValueError(
            f"input dimension mismatch: {X.shape[1]} / {Xp.shape[1]} vs D={spec.dim}"
        )
    if X.shape[0] == 0 or Xp.shape[0] == 0:
        return np.zeros((X.shape[0], Xp.shape[0]))
    ell = np.asarray(spec.lengthscales)
    if spec.structure in (ONE_DIM, ADDITIVE):
        return backend.additive_cross(X, Xp, ell, spec.per_dim_variance, spec.codes)
    if spec.structure == SEPARABLE:
        return backend.separable_cross(X, Xp, ell, spec.variance, spec.codes)
    stat = backend.additive_cross(
        X, Xp, ell, np.array([spec.variance]), spec.codes
    )
    return stat + periodic_matrix(spec.nonstationary, X, Xp)


def kernel_diag(spec: KernelSpec, X) -> np.ndarray:
    X = _as_2d(X)
    total = spec.variance
    if spec.structure == HYBRID_ADDITIVE:
        total += spec.nonstationary.variance
    return np.full(X.shape[0], total)


def kernel_contract(spec: KernelSpec, X1, X2, G, want_dx1=False, want_dx2=False):
    """Contract adjoint G against derivatives of kernel_matrix(spec, X1, X2).

    Returns (d_log_params (D+1,), dX1 (n,D), dX2 (m,D)); the log-parameter
    layout matches ``KernelSpec.log_params``. Hybrid kernels are rejected
    (their hyperparameters are frozen during training).
    """
    if spec.structure == HYBRID_ADDITIVE:
        raise NotImplementedError("hybrid kernels do not support hyper-gradients")
    X1, X2 = _as_2d(X1), _as_2d(X2)
    G = np.asarray(G, dtype=float)
    if X1.shape[0] == 0 or X2.shape[0] == 0:
        return np.zeros(spec.n_log_params), np.zeros_like(X1), np.zeros_like(X2)
    ell = np.asarray(spec.lengthscales)
    if spec.structure in (ONE_DIM, ADDITIVE):
        d_ell, d_var, dX1, dX2 = backend.additive_contract(
            G, X1, X2, ell, spec.per_dim_variance, spec.codes, want_dx1, want_dx2
        )
    else:
        d_ell, d_var, dX1, dX2 = backend.separable_contract(
            G, X1, X2, ell, spec.variance, spec.codes, want_dx1, want_dx2
        )
    return np.concatenate([d_ell, [d_var]]), dX1, dX2


@dataclass(frozen=True)
class InputDomain:
    """Per-dimension closed intervals containing the modeled inputs."""

    intervals: tuple

    def __post_init__(self):
        ivals = tuple((float(a), float(b)) for a, b in self.intervals)
        object.__setattr__(self, "intervals", ivals)
        for a, b in ivals:
            if not a < b:
                raise ValueError(f"degenerate interval [{a}, {b}]")

    @property
    def dim(self) -> int:
        return len(self.intervals)

    def contains(self, X) -> np.ndarray:
        X = _as_2d(X)
        ok = np.ones(X.shape[0], dtype=bool)
        for d, (a, b) in enumerate(self.intervals):
            ok &= (X[:, d] >= a) & (X[:, d] <= b)
        return ok


def spec_to_config(spec: KernelSpec) -> dict:
    cfg = {
        "families": list(spec.families),
        "lengthscales": [float(v) for v in spec.lengthscales],
        "variance": float(spec.variance),
        "structure": spec.structure,
    }
    if spec.nonstationary is not None:
        ns = spec.nonstationary
        cfg["nonstationary"] = {
            "variance": ns.variance,
            "lengthscale": ns.lengthscale,
            "period": ns.period,
        }
    return cfg


def spec_from_config(cfg: dict) -> KernelSpec:
    ns = cfg.get("nonstationary")
    return KernelSpec(
        families=tuple(cfg["families"]),
        lengthscales=tuple(cfg["lengthscales"]),
        variance=float(cfg["variance"]),
        structure=cfg.get("structure", ONE_DIM),
        nonstationary=PeriodicSpec(**ns) if ns else None,
    )
