"""Structured linear algebra: jittered Cholesky, Woodbury solves, structured
Gram operators (dense / diag-plus-low-rank / block-diagonal / Kronecker) and
k-means initialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .backend import kmeans_assign


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CholFactor:
    """Lower-triangular factor of M + jitter*I, with the jitter recorded."""

    L: np.ndarray
    jitter: float

    def solve(self, B: np.ndarray) -> np.ndarray:
        return sla.cho_solve((self.L, True), B)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))


def chol_psd(M: np.ndarray, max_jitter: float = 1e-4) -> CholFactor:
    """Cholesky with escalating diagonal jitter.

    The first attempt adds no jitter; retries add 1e-8, 1e-7, ..., up to
    ``max_jitter`` times the mean diagonal. Raises NotPositiveDefiniteError
    when even the largest jitter fails.
    """
    M = np.asarray(M, dtype=float)
    if M.shape[0] == 0:
        return CholFactor(np.zeros((0, 0)), 0.0)
    mean_diag = float(np.trace(M)) / M.shape[0]
    scale = abs(mean_diag) if mean_diag != 0.0 else 1.0
    jitter = 0.0
    step = 1e-8
    while True:
        try:
            L = np.linalg.cholesky(M + jitter * np.eye(M.shape[0]))
            return CholFactor(L, jitter)
        except np.linalg.LinAlgError:
            if jitter == 0.0:
                jitter = step * scale
            else:
                jitter *= 10.0
            if jitter > max_jitter * scale * (1.0 + 1e-12):
                raise NotPositiveDefiniteError(
                    f"matrix not PSD within tolerance (max jitter {max_jitter:g} "
                    f"relative to mean diagonal {mean_diag:g})"
                )


def woodbury_solve(diag: np.ndarray, U: np.ndarray, signs: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Solve (diag(d) + sum_j s_j u_j u_j^T) X = B at O(n r^2 + n r m) cost.

    U is n x r with columns u_j; signs holds the s_j. Columns with s_j == 0
    are dropped. Raises NotPositiveDefiniteError when the implied capacitance
    matrix is not positive definite, reporting its smallest pivot.
    """
    diag = np.asarray(diag, dtype=float)
    B = np.asarray(B, dtype=float)
    squeeze = B.ndim == 1
    if squeeze:
        B = B[:, None]
    if np.any(diag <= 0.0):
        raise NotPositiveDefiniteError("diagonal term has non-positive entries")
    keep = np.flatnonzero(np.asarray(signs) != 0.0)
    DiB = B / diag[:, None]
    if U is None or U.shape[1] == 0 or keep.size == 0:
        return DiB[:, 0] if squeeze else DiB
    U = U[:, keep]
    s = np.asarray(signs, dtype=float)[keep]
    DiU = U / diag[:, None]
    G = U.T @ DiU
    cap = np.diag(1.0 / s) + G
    if np.all(s > 0):
        # positive updates keep the implied matrix SPD and the capacitance SPD
        c, low = sla.cho_factor(cap, lower=True)
        X = DiB - DiU @ sla.cho_solve((c, low), U.T @ DiB)
        return X[:, 0] if squeeze else X
    # mixed signs: the implied matrix is SPD iff every eigenvalue of
    # diag(s) U^T D^{-1} U exceeds -1
    rt = np.sqrt(np.abs(s))
    lams = np.linalg.eigvals(np.sign(s)[:, None] * (rt[:, None] * G * rt[None, :]))
    pivots = 1.0 + np.real(lams)
    if pivots.min() <= 0.0:
        raise NotPositiveDefiniteError(
            f"implied matrix not SPD (smallest pivot {pivots.min():g})"
        )
    X = DiB - DiU @ sla.solve(cap, U.T @ DiB, assume_a="sym")
    return X[:, 0] if squeeze else X


# ---------------------------------------------------------------------------
# structured Gram operators
# ---------------------------------------------------------------------------


class DenseGram:
    """Plain dense symmetric PSD operator backed by a jittered Cholesky.

    Rows whose diagonal entry is exactly zero (degenerate zero-variance
    components; the whole row is zero for a PSD matrix) are pruned and mapped
    to zero by solve(), so degenerate blocks do not force jitter into the
    active part.
    """

    def __init__(self, K: np.ndarray):
        self.K = np.asarray(K, dtype=float)
        d = np.diag(self.K)
        self._active = np.flatnonzero(d != 0.0) if np.any(d == 0.0) else None
        self._chol: CholFactor | None = None

    @property
    def size(self) -> int:
        return self.K.shape[0]

    def _factor(self) -> CholFactor:
        if self._chol is None:
            if self._active is None:
                self._chol = chol_psd(self.K)
            else:
                self._chol = chol_psd(self.K[np.ix_(self._active, self._active)])
        return self._chol

    def matvec(self, B: np.ndarray) -> np.ndarray:
        return self.K @ B

    def solve(self, B: np.ndarray) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if self.size == 0:
            return np.zeros_like(B)
        if self._active is None:
            return self._factor().solve(B)
        out = np.zeros_like(B)
        out[self._active] = self._factor().solve(B[self._active])
        return out

    def logdet(self) -> float:
        return self._factor().logdet()

    def dense(self) -> np.ndarray:
        return self.K


class DiagLowRank:
    """Operator diag(d) + W W^T with W of small rank (possibly zero columns)."""

    def __init__(self, d: np.ndarray, W: np.ndarray | None = None):
        self.d = np.asarray(d, dtype=float)
        if W is None:
            W = np.zeros((self.d.shape[0], 0))
        self.W = np.asarray(W, dtype=float)

    @property
    def size(self) -> int:
        return self.d.shape[0]

    def matvec(self, B: np.ndarray) -> np.ndarray:
        B = np.asarray(B, dtype=float)
        if B.ndim == 1:
            return self.d * B + self.W @ (self.W.T @ B)
        return self.d[:, None] * B + self.W @ (self.W.T @ B)

    def solve(self, B: np.ndarray) -> np.ndarray:
        return woodbury_solve(self.d, self.W, np.ones(self.W.shape[1]), B)

    def logdet(self) -> float:
        r = self.W.shape[1]
        out = float(np.sum(np.log(self.d)))
        if r:
            cap = np.eye(r) + (self.W / self.d[:, None]).T @ self.W
            out += 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(cap)))))
        return out

    def dense(self) -> np.ndarray:
        return np.diag(self.d) + self.W @ self.W.T


class BlockDiagGram:
    """Block-diagonal operator over a list of structured blocks."""

    def __init__(self, blocks):
        self.blocks = list(blocks)
        sizes = [b.size for b in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)])

    @property
    def size(self) -> int:
        return int(self.offsets[-1])

    def _map(self, B, op):
        B = np.asarray(B, dtype=float)
        squeeze = B.ndim == 1
        if squeeze:
            B = B[:, None]
        out = np.empty_like(B)
        for blk, lo, hi in zip(self.blocks, self.offsets[:-1], self.offsets[1:]):
            out[lo:hi] = getattr(blk, op)(B[lo:hi])
        return out[:, 0] if squeeze else out

    def matvec(self, B):
        return self._map(B, "matvec")

    def solve(self, B):
        return self._map(B, "solve")

    def logdet(self) -> float:
        return float(sum(b.logdet() for b in self.blocks))

    def dense(self) -> np.ndarray:
        n = self.size
        out = np.zeros((n, n))
        for blk, lo, hi in zip(self.blocks, self.offsets[:-1], self.offsets[1:]):
            out[lo:hi, lo:hi] = blk.dense()
        return out


def _kron_apply(factors, X, op):
    """Apply (op over each Kronecker factor) to columns of X.

    Index convention matches np.kron: the first factor varies slowest.
    """
    sizes = [f.size for f in factors]
    total = int(np.prod(sizes))
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 1
    if squeeze:
        X = X[:, None]
    ncols = X.shape[1]
    out = np.empty_like(X)
    for c in range(ncols):
        T = X[:, c].reshape(sizes)
        for axis, f in enumerate(factors):
            Tm = np.moveaxis(T, axis, 0).reshape(sizes[axis], -1)
            Tm = getattr(f, op)(Tm)
            T = np.moveaxis(Tm.reshape([sizes[axis]] + [s for i, s in enumerate(sizes) if i != axis]), 0, axis)
        out[:, c] = T.reshape(total)
    return out[:, 0] if squeeze else out


class KroneckerGram:
    """Kronecker product of structured factors (np.kron ordering)."""

    def __init__(self, factors):
        self.factors = list(factors)

    @property
    def size(self) -> int:
        return int(np.prod([f.size for f in self.factors]))

    def matvec(self, B):
        return _kron_apply(self.factors, B, "matvec")

    def solve(self, B):
        return _kron_apply(self.factors, B, "solve")

    def logdet(self) -> float:
        total = self.size
        out = 0.0
        for f in self.factors:
            out += (total / f.size) * f.logdet()
        return float(out)

    def dense(self) -> np.ndarray:
        out = np.ones((1, 1))
        for f in self.factors:
            out = np.kron(out, f.dense())
        return out


# ---------------------------------------------------------------------------
# k-means for inducing-point initialization
# ---------------------------------------------------------------------------


@dataclass
class KMeansResult:
    centers: np.ndarray
    labels: np.ndarray
    inertia_history: list = field(default_factory=list)


def kmeans(X: np.ndarray, k: int, seed: int, max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm from a seeded distinct-point initialization.

    Deterministic given the seed (Philox counter-based generator). Empty
    clusters are reseeded at the point currently farthest from its center.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty input")
    if k > n:
        raise ValueError(f"k={k} exceeds number of points {n}")
    rng = np.random.Generator(np.random.Philox(seed))
    centers = X[rng.choice(n, size=k, replace=False)].copy()
    history = []
    labels = np.zeros(n, dtype=np.int64)
    for _ in range(max_iter):
        labels, inertia = kmeans_assign(X, centers)
        # reseed empty clusters before the mean update
        counts = np.bincount(labels, minlength=k)
        if np.any(counts == 0):
            d2 = ((X - centers[labels]) ** 2).sum(axis=1)
            for c in np.flatnonzero(counts == 0):
                far = int(np.argmax(d2))
                centers[c] = X[far]
                labels[far] = c
                d2[far] = 0.0
            labels, inertia = kmeans_assign(X, centers)
            counts = np.bincount(labels, minlength=k)
        history.append(inertia)
        new_centers = np.zeros_like(centers)
        for d in range(X.shape[1]):
            new_centers[:, d] = np.bincount(labels, weights=X[:, d], minlength=k) / counts
        if np.allclose(new_centers, centers):
            centers = new_centers
            break
        centers = new_centers
        if len(history) >= 2:
            prev, cur = history[-2], history[-1]
            if prev > 0 and (prev - cur) / prev < tol:
                break
    return KMeansResult(centers=centers, labels=labels, inertia_history=history)
