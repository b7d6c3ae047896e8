"""Dataset handling: seeded synthetic GP draws (exact dense or random-feature
approximate sampler), CSV ingestion, standardization with train-statistics
records, seeded splits and Fourier-interval inference.

All randomness runs through the Philox counter-based generator so that seeded
operations reproduce across runs and platforms.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd

from .kernels import (
    ADDITIVE,
    FAMILY_CODES,
    HYBRID_ADDITIVE,
    ONE_DIM,
    SEPARABLE,
    KernelSpec,
    kernel_matrix,
    periodic_matrix,
)
from .linalg import chol_psd

logger = logging.getLogger("dvgp.data")

_FAMILY_DF = {"matern12": 1.0, "matern32": 3.0, "matern52": 5.0}


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass
class StandardizeRecord:
    x_mean: np.ndarray
    x_scale: np.ndarray
    y_mean: float
    y_scale: float

    def is_identity(self, tol: float = 1e-12) -> bool:
        return (
            np.all(np.abs(self.x_mean) < tol)
            and np.all(np.abs(self.x_scale - 1.0) < tol)
            and abs(self.y_mean) < tol
            and abs(self.y_scale - 1.0) < tol
        )


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    provenance: str
    standardization: StandardizeRecord | None = None
    n_dropped: int = 0

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y, dtype=float)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("X and y row counts differ")
        if self.X.shape[0] < 1:
            raise ValueError("empty dataset")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.y))):
            raise ValueError("dataset contains NaN or Inf")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


# ---------------------------------------------------------------------------
# GP sampling
# ---------------------------------------------------------------------------


def _sample_exact(spec: KernelSpec, X: np.ndarray, rng) -> np.ndarray:
    # deduplicate rows so repeated inputs get exactly repeated function values
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    K = kernel_matrix(spec, uniq)
    L = chol_psd(K).L
    f = L @ rng.standard_normal(uniq.shape[0])
    return f[inverse]


def _rff_frequencies(family: str, ell: float, size, rng) -> np.ndarray:
    # Matern spectral density is a Student-t with 2*nu degrees of freedom
    return rng.standard_t(_FAMILY_DF[family], size=size) / ell


def _sample_fourier(spec: KernelSpec, X: np.ndarray, rng, n_features: int) -> np.ndarray:
    n, D = X.shape
    f = np.zeros(n)
    var_d = spec.per_dim_variance
    if spec.structure in (ONE_DIM, ADDITIVE):
        for d in range(D):
            om = _rff_frequencies(spec.families[d], spec.lengthscales[d], n_features, rng)
            a = rng.standard_normal(n_features)
            b = rng.standard_normal(n_features)
            arg = np.outer(X[:, d], om)
            f += np.sqrt(var_d[d] / n_features) * (np.cos(arg) @ a + np.sin(arg) @ b)
        return f
    if spec.structure == SEPARABLE:
        om = np.column_stack(
            [
                _rff_frequencies(spec.families[d], spec.lengthscales[d], n_features, rng)
                for d in range(D)
            ]
        )
        a = rng.standard_normal(n_features)
        b = rng.standard_normal(n_features)
        arg = X @ om.T
        return np.sqrt(spec.variance / n_features) * (np.cos(arg) @ a + np.sin(arg) @ b)
    raise ValueError("approximate sampler does not support hybrid kernels")


def gp_sample(
    spec: KernelSpec,
    X,
    noise_variance: float,
    rng,
    method: str = "auto",
    n_features: int = 500,
    dense_cap: int = 20000,
) -> np.ndarray:
    """Draw noisy GP observations at the rows of X, deterministically per rng."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if noise_variance < 0:
        raise ValueError("noise variance must be >= 0")
    if method == "auto":
        method = "exact" if X.shape[0] <= dense_cap else "fourier"
    if method == "exact":
        if X.shape[0] > dense_cap:
            raise ValueError(
                f"N={X.shape[0]} too large for exact sampling (cap {dense_cap}); "
                "pass method='fourier'"
            )
        f = _sample_exact(spec, X, rng)
    elif method == "fourier":
        f = _sample_fourier(spec, X, rng, n_features)
    else:
        raise ValueError(f"unknown sampling method {method!r}")
    if noise_variance > 0:
        f = f + np.sqrt(noise_variance) * rng.standard_normal(X.shape[0])
    return f


def _uniform_inputs(rng, n: int, dims: int, gap=None) -> np.ndarray:
    X = rng.uniform(0.0, 1.0, size=(n, dims))
    if gap is not None:
        a, b = float(gap[0]), float(gap[1])
        if not (0.0 <= a < b <= 1.0):
            raise ValueError(f"gap must satisfy 0 <= a < b <= 1, got [{a}, {b}]")
        # uniform on [0,1] \ [a,b]: compress then shift past the gap
        u = X[:, 0] * (1.0 - (b - a))
        X[:, 0] = np.where(u < a, u, u + (b - a))
    return X


def sample_synthetic(
    dims: int,
    n: int,
    kernel_spec: KernelSpec,
    noise_variance: float,
    seed: int,
    input_gap=None,
    method: str = "auto",
) -> Dataset:
    """Inputs uniform on [0,1]^D (minus an optional first-dimension gap),
    outputs drawn from the specified GP plus independent Gaussian noise."""
    if kernel_spec.dim != dims:
        raise ValueError("kernel dimension does not match dims")
    rng = rng_for(seed)
    X = _uniform_inputs(rng, n, dims, gap=input_gap)
    y = gp_sample(kernel_spec, X, noise_variance, rng, method=method)
    tag = f"synthetic(D={dims},N={n},seed={seed})"
    return Dataset(X=X, y=y, provenance=tag)


def synthetic_train_test(
    dims: int,
    n_train: int,
    n_test: int,
    kernel_spec: KernelSpec,
    noise_variance: float,
    seed: int,
    train_gap=None,
    method: str = "auto",
):
    """Train and test sets drawn jointly from one GP realization; the optional
    input gap applies to the training inputs only."""
    rng = rng_for(seed)
    X_tr = _uniform_inputs(rng, n_train, dims, gap=train_gap)
    X_te = _uniform_inputs(rng, n_test, dims, gap=None)
    X = np.vstack([X_tr, X_te])
    y = gp_sample(kernel_spec, X, noise_variance, rng, method=method)
    tag = f"synthetic(D={dims},N={n_train}+{n_test},seed={seed})"
    train = Dataset(X=X_tr, y=y[:n_train], provenance=tag + "/train")
    test = Dataset(X=X_te, y=y[n_train:], provenance=tag + "/test")
    return train, test


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_csv(path, target: str, features=None, delimiter: str = ",") -> Dataset:
    df = pd.read_csv(path, delimiter=delimiter, float_precision="round_trip")
    if df.shape[0] == 0:
        raise ValueError(f"empty file {path}")
    if target not in df.columns:
        raise ValueError(f"missing target column {target!r} in {path}")
    if features is None:
        features = [c for c in df.columns if c != target]
    missing = [c for c in features if c not in df.columns]
    if missing:
        raise ValueError(f"missing feature columns {missing} in {path}")
    sub = df[list(features) + [target]].apply(pd.to_numeric, errors="coerce")
    if sub.isna().all(axis=None):
        raise ValueError(f"no numeric data in {path}")
    bad_cols = [c for c in sub.columns if sub[c].isna().all()]
    if bad_cols:
        raise ValueError(f"non-numeric columns {bad_cols} in {path}")
    n_before = sub.shape[0]
    sub = sub.dropna(axis=0)
    n_dropped = n_before - sub.shape[0]
    if n_dropped:
        logger.warning("dropped %d rows with missing values from %s", n_dropped, path)
    return Dataset(
        X=sub[list(features)].to_numpy(dtype=float),
        y=sub[target].to_numpy(dtype=float),
        provenance=str(path),
        n_dropped=n_dropped,
    )


def save_csv(ds: Dataset, path, target: str = "target"):
    cols = {f"x{d + 1}": ds.X[:, d] for d in range(ds.dim)}
    cols[target] = ds.y
    pd.DataFrame(cols).to_csv(path, index=False, float_format="%.17g")


# ---------------------------------------------------------------------------
# standardization and splits
# ---------------------------------------------------------------------------


def standardize(ds: Dataset):
    """Shift/scale columns to zero mean and unit variance using this dataset's
    own statistics (call on the training split only)."""
    x_mean = ds.X.mean(axis=0)
    x_scale = ds.X.std(axis=0)
    zero = x_scale < 1e-300
    if np.any(zero):
        warnings.warn("zero-variance input column; scale kept at 1", UserWarning)
        x_scale = np.where(zero, 1.0, x_scale)
    y_mean = float(ds.y.mean())
    y_scale = float(ds.y.std())
    if y_scale < 1e-300:
        warnings.warn("zero-variance targets; scale kept at 1", UserWarning)
        y_scale = 1.0
    rec = StandardizeRecord(x_mean=x_mean, x_scale=x_scale, y_mean=y_mean, y_scale=y_scale)
    return apply_standardization(ds, rec), rec


def apply_standardization(ds: Dataset, rec: StandardizeRecord) -> Dataset:
    return Dataset(
        X=(ds.X - rec.x_mean) / rec.x_scale,
        y=(ds.y - rec.y_mean) / rec.y_scale,
        provenance=ds.provenance,
        standardization=rec,
        n_dropped=ds.n_dropped,
    )


def destandardize_y(y, rec: StandardizeRecord) -> np.ndarray:
    return np.asarray(y, float) * rec.y_scale + rec.y_mean


def split(ds: Dataset, test_fraction: float, seed: int):
    """Seeded disjoint train/test split with |test| = round(fraction * N)."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test fraction must be in (0, 1)")
    n_test = int(round(test_fraction * ds.n))
    if n_test < 1 or n_test >= ds.n:
        raise ValueError(f"split of {ds.n} rows at {test_fraction} leaves an empty side")
    perm = rng_for(seed).permutation(ds.n)
    te, tr = perm[:n_test], perm[n_test:]
    return (
        Dataset(X=ds.X[tr], y=ds.y[tr], provenance=ds.provenance + "/train"),
        Dataset(X=ds.X[te], y=ds.y[te], provenance=ds.provenance + "/test"),
    )


def infer_intervals(X, expansion: float = 0.1):
    """Per-dimension train-input ranges grown symmetrically by ``expansion``
    (total width), always containing every training input."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    out = []
    for d in range(X.shape[1]):
        lo, hi = float(X[:, d].min()), float(X[:, d].max())
        width = hi - lo
        pad = 0.5 * expansion * width if width > 0 else 0.5
        out.append((lo - pad, hi + pad))
    return out
