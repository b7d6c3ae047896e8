"""Hot numeric kernels: numba-jitted implementations with pure-numpy fallbacks.

The backend is selected once at import time from the DVGP_BACKEND environment
variable ("numba" or "numpy"). The default is numba when it imports cleanly.
Both implementations are always importable (suffixed ``_nb`` / ``_np``) so the
test suite and the benchmark script can compare them directly.

Matern family codes: 0 -> nu=1/2, 1 -> nu=3/2, 2 -> nu=5/2.
"""

from __future__ import annotations

import math
import os

import numpy as np

_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)

_choice = os.environ.get("DVGP_BACKEND", "numba").strip().lower()
if _choice not in ("numba", "numpy"):
    raise ValueError(f"DVGP_BACKEND must be 'numba' or 'numpy', got {_choice!r}")

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

USING_NUMBA = _HAVE_NUMBA and _choice == "numba"


# ---------------------------------------------------------------------------
# scalar Matern forms (shared by both backends through duplication: the numba
# versions must be jit-compiled, the numpy versions vectorized)
# ---------------------------------------------------------------------------

def _matern_np(code: int, u: np.ndarray) -> np.ndarray:
    """Unit-variance Matern correlation at scaled distance u = |dx| / ell."""
    if code == 0:
        return np.exp(-u)
    if code == 1:
        a = _SQRT3 * u
        return (1.0 + a) * np.exp(-a)
    a = _SQRT5 * u
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


def _matern_du_np(code: int, u: np.ndarray) -> np.ndarray:
    """d/du of the unit-variance Matern correlation."""
    if code == 0:
        return -np.exp(-u)
    if code == 1:
        a = _SQRT3 * u
        return -3.0 * u * np.exp(-a)
    a = _SQRT5 * u
    return -(_SQRT5 * a / 3.0) * (1.0 + a) * np.exp(-a)


# ---------------------------------------------------------------------------
# additive kernels: k(x, x') = sum_d var_d * m_d(|x_d - x'_d| / ell_d)
# ---------------------------------------------------------------------------

def additive_cross_np(X1, X2, ell, var_d, codes):
    n, m = X1.shape[0], X2.shape[0]
    K = np.zeros((n, m))
    for d in range(X1.shape[1]):
        u = np.abs(X1[:, d, None] - X2[None, :, d]) / ell[d]
        K += var_d[d] * _matern_np(int(codes[d]), u)
    return K


def additive_contract_np(G, X1, X2, ell, var_d, codes, want_dx1, want_dx2):
    """Contract an adjoint G (n x m) against the derivatives of the additive
    cross-kernel matrix k(X1, X2).

    Returns (d_log_ell (D,), d_log_var scalar, dX1 (n,D)|None, dX2 (m,D)|None).
    d_log_var is the derivative w.r.t. the single log total variance (every
    var_d scales with it).
    """
    D = X1.shape[1]
    d_log_ell = np.zeros(D)
    d_log_var = 0.0
    dX1 = np.zeros_like(X1) if want_dx1 else None
    dX2 = np.zeros_like(X2) if want_dx2 else None
    for d in range(D):
        delta = X1[:, d, None] - X2[None, :, d]
        u = np.abs(delta) / ell[d]
        mv = _matern_np(int(codes[d]), u)
        dv = _matern_du_np(int(codes[d]), u)
        d_log_var += var_d[d] * np.sum(G * mv)
        d_log_ell[d] = -var_d[d] * np.sum(G * dv * u)
        if want_dx1 or want_dx2:
            sgn = np.sign(delta)
            w = G * (var_d[d] / ell[d]) * dv
            if want_dx1:
                dX1[:, d] += np.sum(w * sgn, axis=1)
            if want_dx2:
                dX2[:, d] += -np.sum(w * sgn, axis=0)
    return d_log_ell, d_log_var, dX1, dX2


# ---------------------------------------------------------------------------
# separable kernels: k(x, x') = var * prod_d m_d(|x_d - x'_d| / ell_d)
# ---------------------------------------------------------------------------

def separable_cross_np(X1, X2, ell, var, codes):
    n, m = X1.shape[0], X2.shape[0]
    K = np.full((n, m), var)
    for d in range(X1.shape[1]):
        u = np.abs(X1[:, d, None] - X2[None, :, d]) / ell[d]
        K *= _matern_np(int(codes[d]), u)
    return K


def separable_contract_np(G, X1, X2, ell, var, codes, want_dx1, want_dx2):
    D = X1.shape[1]
    K = separable_cross_np(X1, X2, ell, var, codes)
    d_log_ell = np.zeros(D)
    d_log_var = float(np.sum(G * K))
    dX1 = np.zeros_like(X1) if want_dx1 else None
    dX2 = np.zeros_like(X2) if want_dx2 else None
    for d in range(D):
        delta = X1[:, d, None] - X2[None, :, d]
        u = np.abs(delta) / ell[d]
        mv = _matern_np(int(codes[d]), u)
        dv = _matern_du_np(int(codes[d]), u)
        # ratio dv/mv is bounded for all three families
        with np.errstate(invalid="ignore"):
            ratio = np.where(mv > 0.0, dv / np.maximum(mv, 1e-300), 0.0)
        d_log_ell[d] = -np.sum(G * K * ratio * u)
        if want_dx1 or want_dx2:
            w = G * K * ratio * np.sign(delta) / ell[d]
            if want_dx1:
                dX1[:, d] += np.sum(w, axis=1)
            if want_dx2:
                dX2[:, d] += -np.sum(w, axis=0)
    return d_log_ell, d_log_var, dX1, dX2


# ---------------------------------------------------------------------------
# k-means assignment step
# ---------------------------------------------------------------------------

def kmeans_assign_np(X, C):
    d2 = ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(X.shape[0]), labels].sum())
    return labels.astype(np.int64), inertia


# ---------------------------------------------------------------------------
# numba twins
# ---------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True, inline="always")
    def _matern_s(code, u):
        if code == 0:
            return math.exp(-u)
        if code == 1:
            a = _SQRT3 * u
            return (1.0 + a) * math.exp(-a)
        a = _SQRT5 * u
        return (1.0 + a + a * a / 3.0) * math.exp(-a)

    @njit(cache=True, inline="always")
    def _matern_du_s(code, u):
        if code == 0:
            return -math.exp(-u)
        if code == 1:
            a = _SQRT3 * u
            return -3.0 * u * math.exp(-a)
        a = _SQRT5 * u
        return -(_SQRT5 * a / 3.0) * (1.0 + a) * math.exp(-a)

    @njit(cache=True)
    def additive_cross_nb(X1, X2, ell, var_d, codes):
        n, m = X1.shape[0], X2.shape[0]
        D = X1.shape[1]
        K = np.zeros((n, m))
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for d in range(D):
                    u = abs(X1[i, d] - X2[j, d]) / ell[d]
                    acc += var_d[d] * _matern_s(codes[d], u)
                K[i, j] = acc
        return K

    @njit(cache=True, inline="always")
    def _matern_pair_s(code, u):
        """(value, d/du) sharing a single exp evaluation."""
        if code == 0:
            e = math.exp(-u)
            return e, -e
        if code == 1:
            a = _SQRT3 * u
            e = math.exp(-a)
            return (1.0 + a) * e, -3.0 * u * e
        a = _SQRT5 * u
        e = math.exp(-a)
        return (1.0 + a + a * a / 3.0) * e, -(_SQRT5 * a / 3.0) * (1.0 + a) * e

    @njit(cache=True)
    def additive_contract_nb(G, X1, X2, ell, var_d, codes, want_dx1, want_dx2):
        n, m = X1.shape[0], X2.shape[0]
        D = X1.shape[1]
        d_log_ell = np.zeros(D)
        d_log_var = 0.0
        dX1 = np.zeros((n, D))
        dX2 = np.zeros((m, D))
        want_dx = want_dx1 or want_dx2
        for i in range(n):
            for j in range(m):
                g = G[i, j]
                for d in range(D):
                    delta = X1[i, d] - X2[j, d]
                    u = abs(delta) / ell[d]
                    mv, dv = _matern_pair_s(codes[d], u)
                    d_log_var += g * var_d[d] * mv
                    d_log_ell[d] += -g * var_d[d] * dv * u
                    if want_dx:
                        s = 0.0
                        if delta > 0.0:
                            s = 1.0
                        elif delta < 0.0:
                            s = -1.0
                        w = g * var_d[d] / ell[d] * dv * s
                        if want_dx1:
                            dX1[i, d] += w
                        if want_dx2:
                            dX2[j, d] += -w
        return d_log_ell, d_log_var, dX1, dX2

    @njit(cache=True)
    def separable_cross_nb(X1, X2, ell, var, codes):
        n, m = X1.shape[0], X2.shape[0]
        D = X1.shape[1]
        K = np.empty((n, m))
        for i in range(n):
            for j in range(m):
                acc = var
                for d in range(D):
                    u = abs(X1[i, d] - X2[j, d]) / ell[d]
                    acc *= _matern_s(codes[d], u)
                K[i, j] = acc
        return K

    @njit(cache=True)
    def separable_contract_nb(G, X1, X2, ell, var, codes, want_dx1, want_dx2):
        n, m = X1.shape[0], X2.shape[0]
        D = X1.shape[1]
        d_log_ell = np.zeros(D)
        d_log_var = 0.0
        dX1 = np.zeros((n, D))
        dX2 = np.zeros((m, D))
        for i in range(n):
            for j in range(m):
                g = G[i, j]
                if g == 0.0:
                    continue
                kv = var
                for d in range(D):
                    u = abs(X1[i, d] - X2[j, d]) / ell[d]
                    kv *= _matern_s(codes[d], u)
                d_log_var += g * kv
                for d in range(D):
                    delta = X1[i, d] - X2[j, d]
                    u = abs(delta) / ell[d]
                    mv, dv = _matern_pair_s(codes[d], u)
                    ratio = 0.0
                    if mv > 1e-300:
                        ratio = dv / mv
                    d_log_ell[d] += -g * kv * ratio * u
                    if want_dx1 or want_dx2:
                        s = 0.0
                        if delta > 0.0:
                            s = 1.0
                        elif delta < 0.0:
                            s = -1.0
                        w = g * kv * ratio * s / ell[d]
                        if want_dx1:
                            dX1[i, d] += w
                        if want_dx2:
                            dX2[j, d] += -w
        return d_log_ell, d_log_var, dX1, dX2

    @njit(cache=True)
    def kmeans_assign_nb(X, C):
        n = X.shape[0]
        k = C.shape[0]
        D = X.shape[1]
        labels = np.zeros(n, dtype=np.int64)
        inertia = 0.0
        for i in range(n):
            best = 1e300
            arg = 0
            for c in range(k):
                acc = 0.0
                for d in range(D):
                    t = X[i, d] - C[c, d]
                    acc += t * t
                if acc < best:
                    best = acc
                    arg = c
            labels[i] = arg
            inertia += best
        return labels, inertia


def _np_contract_wrap(fn):
    # numba twins always allocate dX1/dX2; mirror that shape contract here
    def wrapped(G, X1, X2, ell, v, codes, want_dx1, want_dx2):
        d_log_ell, d_log_var, dX1, dX2 = fn(
            G, X1, X2, ell, v, codes, want_dx1, want_dx2
        )
        if dX1 is None:
            dX1 = np.zeros_like(X1)
        if dX2 is None:
            dX2 = np.zeros_like(X2)
        return d_log_ell, d_log_var, dX1, dX2

    return wrapped


if USING_NUMBA:
    additive_cross = additive_cross_nb
    additive_contract = additive_contract_nb
    separable_cross = separable_cross_nb
    separable_contract = separable_contract_nb
    kmeans_assign = kmeans_assign_nb
else:
    additive_cross = additive_cross_np
    additive_contract = _np_contract_wrap(additive_contract_np)
    separable_cross = separable_cross_np
    separable_contract = _np_contract_wrap(separable_contract_np)
    kmeans_assign = kmeans_assign_np
