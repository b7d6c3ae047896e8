"""Decoupled variational sparse GPs.

One model class covers the whole family: the variational mean lives on an
inducing-point basis (the gamma block) orthogonalized against a covariance
basis (the beta block), which is either a Fourier-feature basis or a second
inducing-point set. Setting the gamma block empty recovers the plain
feature-only / SVGP models, and the analytic optimum of the inducing-point
model with no gamma block is the collapsed SGPR solution.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from . import fourier
from .fourier import MultiDimBasis, cross_covariance, cross_covariance_dx
from .kernels import (
    HYBRID_ADDITIVE,
    KernelSpec,
    _as_2d,
    kernel_contract,
    kernel_diag,
    kernel_matrix,
)
from .likelihoods import GaussianLikelihood
from .linalg import DenseGram, chol_psd


class VarianceClampWarning(UserWarning):
    """More than 0.1% of predictive variances were clamped at zero."""


# ---------------------------------------------------------------------------
# covariance bases
# ---------------------------------------------------------------------------


class FourierCovBasis:
    """Covariance basis built from RKHS Fourier features."""

    def __init__(self, mb: MultiDimBasis):
        self.mb = mb

    @property
    def size(self) -> int:
        return self.mb.size

    @property
    def locations(self):
        return None

    def cross(self, kernel: KernelSpec, X) -> np.ndarray:
        return cross_covariance(self.mb, kernel, X)

    def gram(self, kernel: KernelSpec):
        return fourier.gram(self.mb, kernel)

    def count_outside(self, X) -> int:
        X = _as_2d(X)
        out = np.zeros(X.shape[0], dtype=bool)
        for d, b in enumerate(self.mb.bases):
            lo, hi = b.interval
            out |= (X[:, d] < lo) | (X[:, d] > hi)
        return int(np.sum(out))

    def backward(self, kernel: KernelSpec, G_gram, cross_terms):
        """Contract adjoints of the Gram and of cross matrices.

        cross_terms is a list of (X, G_cross, want_dX). Returns
        (d_log_kernel_params, d_own_locations, [dX per term]).
        """
        d_log = np.zeros(kernel.n_log_params)
        if G_gram is not None and kernel.structure != HYBRID_ADDITIVE:
            for h, dK in enumerate(fourier.gram_dlog_hypers(self.mb, kernel)):
                d_log[h] += float(np.sum(G_gram * dK))
        dXs = []
        for X, G_c, want_dx in cross_terms:
            if want_dx and G_c is not None and _as_2d(X).shape[0]:
                dPhi = cross_covariance_dx(self.mb, kernel, X)
                dXs.append(np.einsum("mn,mnd->nd", G_c, dPhi))
            else:
                dXs.append(None)
        return d_log, None, dXs


class InducingCovBasis:
    """Covariance basis built from inducing-point function values."""

    def __init__(self, locations):
        self.u = _as_2d(np.array(locations, dtype=float))

    @property
    def size(self) -> int:
        return self.u.shape[0]

    @property
    def locations(self):
        return self.u

    def cross(self, kernel: KernelSpec, X) -> np.ndarray:
        return kernel_matrix(kernel, self.u, X)

    def gram(self, kernel: KernelSpec):
        return DenseGram(kernel_matrix(kernel, self.u))

    def count_outside(self, X) -> int:
        return 0

    def backward(self, kernel: KernelSpec, G_gram, cross_terms):
        d_log = np.zeros(kernel.n_log_params)
        du = np.zeros_like(self.u)
        if G_gram is not None:
            dlp, d1, d2 = kernel_contract(
                kernel, self.u, self.u, G_gram, want_dx1=True, want_dx2=True
            )
            d_log += dlp
            du += d1 + d2
        dXs = []
        for X, G_c, want_dx in cross_terms:
            if G_c is None or _as_2d(X).shape[0] == 0:
                dXs.append(None)
                continue
            dlp, d1, d2 = kernel_contract(
                kernel, self.u, X, G_c, want_dx1=True, want_dx2=want_dx
            )
            d_log += dlp
            du += d1
            dXs.append(d2 if want_dx else None)
        return d_log, du, dXs


# ---------------------------------------------------------------------------
# state containers
# ---------------------------------------------------------------------------


@dataclass
class VariationalState:
    """Variational parameters: mean coefficients on each basis plus the
    Cholesky factor of the covariance-block matrix S."""

    a_gamma: np.ndarray
    a_beta: np.ndarray
    chol_s: np.ndarray
    gamma_locs: np.ndarray

    @property
    def n_gamma(self) -> int:
        return self.a_gamma.shape[0]

    @property
    def s_cov(self) -> np.ndarray:
        return self.chol_s @ self.chol_s.T

    def natural_params(self, gram):
        """Natural-parameter mirror of the implied Gaussian over the beta
        block: mean K_beta a_beta, covariance S."""
        m_beta = gram.matvec(self.a_beta)
        s_inv = sla.cho_solve((self.chol_s, True), np.eye(self.chol_s.shape[0]))
        return s_inv @ m_beta, -0.5 * s_inv

    def copy(self) -> "VariationalState":
        return VariationalState(
            a_gamma=self.a_gamma.copy(),
            a_beta=self.a_beta.copy(),
            chol_s=self.chol_s.copy(),
            gamma_locs=self.gamma_locs.copy(),
        )


@dataclass
class Predictive:
    mean: np.ndarray
    variance: np.ndarray
    n_clamped: int = 0
    n_outside_domain: int = 0


@dataclass
class Grads:
    a_gamma: np.ndarray
    a_beta: np.ndarray
    chol_s: np.ndarray
    nat_mean: np.ndarray
    nat_cov: np.ndarray
    log_kernel: np.ndarray
    log_noise: float
    gamma_locs: np.ndarray
    beta_locs: np.ndarray | None


def _sym(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


_DENSE_OP_CAP = 1024


class DecoupledGP:
    """Variational GP with decoupled mean / covariance bases.

    The object is a value holder for (kernel, covariance basis, likelihood);
    prediction and bound evaluation are read-only, training replaces the
    kernel/likelihood fields through a single writer.
    """

    def __init__(self, kernel: KernelSpec, cov_basis, likelihood):
        self.kernel = kernel
        self.cov_basis = cov_basis
        self.likelihood = likelihood

    def op_gram(self):
        """Gram operator used for solves: small structured Grams are wrapped
        in a cached dense Cholesky, which beats per-block dispatch overhead at
        desk scale; large ones keep their structured solve paths."""
        gram = self.cov_basis.gram(self.kernel)
        if not isinstance(gram, DenseGram) and gram.size <= _DENSE_OP_CAP:
            return DenseGram(gram.dense())
        return gram

    # -- construction -------------------------------------------------------

    def init_state(self, gamma_locs=None) -> VariationalState:
        """Prior-matching start: a = 0, S = K_beta, so the KL term is zero."""
        if gamma_locs is None:
            gamma_locs = np.zeros((0, self.kernel.dim))
        gamma_locs = _as_2d(np.array(gamma_locs, dtype=float))
        gram = self.cov_basis.gram(self.kernel)
        chol = chol_psd(gram.dense()).L
        return VariationalState(
            a_gamma=np.zeros(gamma_locs.shape[0]),
            a_beta=np.zeros(self.cov_basis.size),
            chol_s=chol,
            gamma_locs=gamma_locs,
        )

    # -- internals ----------------------------------------------------------

    def _moments(self, state: VariationalState, X, gram=None):
        """Per-point predictive mean and raw latent variance."""
        X = _as_2d(X)
        gram = gram if gram is not None else self.op_gram()
        Phi = self.cov_basis.cross(self.kernel, X)
        P = gram.solve(Phi)
        L = state.chol_s
        SP = L @ (L.T @ P)
        g = state.n_gamma
        if g:
            R = kernel_matrix(self.kernel, X, state.gamma_locs)
            Kbg = self.cov_basis.cross(self.kernel, state.gamma_locs)
            B = gram.solve(Kbg)
            rho = R - Phi.T @ B
            m = rho @ state.a_gamma + Phi.T @ state.a_beta
        else:
            R = Kbg = B = rho = None
            m = Phi.T @ state.a_beta
        kdiag = kernel_diag(self.kernel, X)
        s_raw = kdiag - np.sum(Phi * P, axis=0) + np.sum(P * SP, axis=0)
        return {
            "X": X, "gram": gram, "Phi": Phi, "P": P, "SP": SP,
            "R": R, "Kbg": Kbg, "B": B, "rho": rho,
            "m": m, "s_raw": s_raw, "kdiag": kdiag,
        }

    # -- prediction ----------------------------------------------------------

    def predict(self, state: VariationalState, Xq) -> Predictive:
        c = self._moments(state, Xq)
        s = np.maximum(c["s_raw"], 0.0)
        n_clamped = int(np.sum(c["s_raw"] < 0.0))
        n = s.shape[0]
        if n_clamped > 0.001 * n:
            warnings.warn(
                f"{n_clamped}/{n} predictive variances clamped at zero; "
                "covariance deflation terms nearly cancel",
                VarianceClampWarning,
                stacklevel=2,
            )
        n_outside = self.cov_basis.count_outside(c["X"])
        return Predictive(mean=c["m"], variance=s, n_clamped=n_clamped,
                          n_outside_domain=n_outside)

    # -- divergence and bound -------------------------------------------------

    def kl(self, state: VariationalState, gram=None) -> float:
        gram = gram if gram is not None else self.op_gram()
        M = gram.size
        L = state.chol_s
        S = L @ L.T
        tr = float(np.trace(gram.solve(S)))
        logdet_k = gram.logdet()
        logdet_s = 2.0 * float(np.sum(np.log(np.diag(L))))
        quad = float(state.a_beta @ gram.matvec(state.a_beta))
        if state.n_gamma:
            Kg = kernel_matrix(self.kernel, state.gamma_locs)
            Kbg = self.cov_basis.cross(self.kernel, state.gamma_locs)
            t = Kbg @ state.a_gamma
            quad += float(state.a_gamma @ (Kg @ state.a_gamma)) - float(t @ gram.solve(t))
        val = 0.5 * (tr - M + quad + logdet_k - logdet_s)
        if val < 0.0 and val > -1e-9 * max(1.0, abs(tr)):
            return 0.0
        return val

    def elbo(self, state: VariationalState, X, y, n_total: int, gram=None) -> float:
        c = self._moments(state, X, gram=gram)
        s = np.maximum(c["s_raw"], 0.0)
        ell = self.likelihood.expected_log_lik(np.asarray(y, float), c["m"], s)
        w = n_total / s.shape[0]
        return w * float(np.sum(ell)) - self.kl(state, c["gram"])

    # -- gradients ------------------------------------------------------------

    def elbo_grads(self, state: VariationalState, X, y, n_total: int,
                   want_hyper: bool = True, want_locations: bool = True,
                   gram=None) -> Grads:
        y = np.asarray(y, float)
        c = self._moments(state, X, gram=gram)
        gram, Phi, P = c["gram"], c["Phi"], c["P"]
        M = gram.size
        g = state.n_gamma
        n = c["m"].shape[0]
        w = n_total / n
        s = np.maximum(c["s_raw"], 0.0)
        d_m, d_s = self.likelihood.d_mean_d_var(y, c["m"], s)
        d_m = w * d_m
        d_s = w * d_s

        L = state.chol_s
        S = L @ L.T
        eye = np.eye(M)
        k_inv = gram.solve(eye)
        s_inv = sla.cho_solve((L, True), eye)

        g_abeta = Phi @ d_m - gram.matvec(state.a_beta)
        W = (P * d_s) @ P.T
        g_S = _sym(W - 0.5 * (k_inv - s_inv))
        g_chol = np.tril(2.0 * g_S @ L)
        nat_mean = gram.solve(g_abeta)

        if g:
            Kbg, B, rho = c["Kbg"], c["B"], c["rho"]
            Kg = kernel_matrix(self.kernel, state.gamma_locs)
            t = Kbg @ state.a_gamma
            v = B @ state.a_gamma
            g_agamma = rho.T @ d_m - (Kg @ state.a_gamma - Kbg.T @ v)
        else:
            t = v = np.zeros(M)
            g_agamma = np.zeros(0)

        d_log_kernel = np.zeros(self.kernel.n_log_params)
        d_log_noise = 0.0
        d_gamma = np.zeros_like(state.gamma_locs)
        d_beta_locs = None

        if isinstance(self.likelihood, GaussianLikelihood):
            d_log_noise = w * float(np.sum(self.likelihood.d_log_noise(y, c["m"], s)))

        if want_hyper or want_locations:
            Pd = P @ d_m
            KiS = gram.solve(S)
            CPhi = P - gram.solve(c["SP"])
            u1 = state.a_beta - v
            G_Phi = np.outer(u1, d_m) - 2.0 * (CPhi * d_s)
            A = KiS @ W
            G_K = W - A - A.T
            G_K += 0.5 * gram.solve(KiS.T)
            G_K += -0.5 * k_inv - 0.5 * np.outer(state.a_beta, state.a_beta)
            if g:
                G_K += -0.5 * np.outer(v, v) + np.outer(Pd, v)
            G_K = _sym(G_K)

            # k(x, x) depends on the variance only
            d_log_kernel[-1] += float(np.sum(d_s * c["kdiag"]))

            if g:
                G_R = np.outer(d_m, state.a_gamma)
                dlp, _, dX2 = kernel_contract(
                    self.kernel, c["X"], state.gamma_locs, G_R, want_dx2=want_locations
                )
                d_log_kernel += dlp
                if want_locations:
                    d_gamma += dX2
                G_Kg = -0.5 * np.outer(state.a_gamma, state.a_gamma)
                dlp, d1, d2 = kernel_contract(
                    self.kernel, state.gamma_locs, state.gamma_locs, G_Kg,
                    want_dx1=want_locations, want_dx2=want_locations,
                )
                d_log_kernel += dlp
                if want_locations:
                    d_gamma += d1 + d2
                G_Kbg = np.outer(v - Pd, state.a_gamma)
                cross_terms = [(c["X"], G_Phi, False), (state.gamma_locs, G_Kbg, want_locations)]
            else:
                cross_terms = [(c["X"], G_Phi, False)]

            dlp, d_u, dXs = self.cov_basis.backward(self.kernel, G_K, cross_terms)
            d_log_kernel += dlp
            d_beta_locs = d_u
            if g and want_locations and dXs[1] is not None:
                d_gamma += dXs[1]

        return Grads(
            a_gamma=g_agamma, a_beta=g_abeta, chol_s=g_chol,
            nat_mean=nat_mean, nat_cov=g_S,
            log_kernel=d_log_kernel, log_noise=d_log_noise,
            gamma_locs=d_gamma, beta_locs=d_beta_locs,
        )

    # -- closed-form optimum ---------------------------------------------------

    def analytic_optimum(self, X, y, gamma_locs=None, max_n: int = 20000) -> VariationalState:
        """Full-batch optimal variational parameters for Gaussian likelihood."""
        if not isinstance(self.likelihood, GaussianLikelihood):
            raise ValueError("analytic optimum requires a Gaussian likelihood")
        X = _as_2d(X)
        y = np.asarray(y, float)
        if X.shape[0] > max_n:
            raise ValueError(
                f"N={X.shape[0]} exceeds the full-batch cap {max_n}; "
                "use the minibatch training path"
            )
        if gamma_locs is None:
            gamma_locs = np.zeros((0, self.kernel.dim))
        gamma_locs = _as_2d(np.array(gamma_locs, dtype=float))
        g = gamma_locs.shape[0]
        noise = self.likelihood.noise_variance

        K_full = self.cov_basis.gram(self.kernel).dense()
        Phi_full = self.cov_basis.cross(self.kernel, X)
        M = K_full.shape[0]
        # zero prior-variance components carry zero coefficients exactly;
        # prune them so jitter never leaks into the active block
        act = np.flatnonzero(np.diag(K_full) != 0.0)
        K = K_full[np.ix_(act, act)]
        Phi = Phi_full[act]
        G = _sym(K + Phi @ Phi.T / noise)
        S_act = _sym(K @ chol_psd(G).solve(K))
        S_chol = np.zeros((M, M))
        S_chol[np.ix_(act, act)] = chol_psd(S_act).L

        if g:
            Rgx = kernel_matrix(self.kernel, gamma_locs, X)
            Kg = kernel_matrix(self.kernel, gamma_locs)
            Kbg = self.cov_basis.cross(self.kernel, gamma_locs)[act]
            K_ax = np.vstack([Rgx, Phi])
            K_alpha = np.block([[Kg, Kbg.T], [Kbg, K]])
        else:
            Kbg = None
            K_ax = Phi
            K_alpha = K
        A = _sym(K_ax @ K_ax.T + noise * K_alpha)
        a_alpha = chol_psd(A).solve(K_ax @ y)
        a_gamma = a_alpha[:g]
        a_beta_act = a_alpha[g:]
        if g:
            a_beta_act = a_beta_act + chol_psd(K).solve(Kbg @ a_gamma)
        a_beta = np.zeros(M)
        a_beta[act] = a_beta_act
        return VariationalState(
            a_gamma=a_gamma, a_beta=a_beta,
            chol_s=S_chol, gamma_locs=gamma_locs,
        )


# ---------------------------------------------------------------------------
# baselines and oracles
# ---------------------------------------------------------------------------


def coupled_basis_predict(kernel: KernelSpec, u, b, S_u, Xq) -> Predictive:
    """Predictive distribution of an inducing-point posterior written in the
    coupled (a, A) parametrization; used as an independent code path against
    the decoupled model's own predictive equations."""
    u = _as_2d(u)
    Xq = _as_2d(Xq)
    Kuu = kernel_matrix(kernel, u)
    f = chol_psd(Kuu)
    a_alpha = f.solve(np.asarray(b, float))
    A = -f.solve(f.solve(np.asarray(S_u, float) - Kuu).T)
    Kxu = kernel_matrix(kernel, Xq, u)
    mean = Kxu @ a_alpha
    var = kernel_diag(kernel, Xq) - np.sum((Kxu @ A) * Kxu, axis=1)
    return Predictive(mean=mean, variance=var)


def sgpr_optimal_params(kernel: KernelSpec, u, X, y, noise: float):
    """Closed-form optimal q(u) = N(b, S_u) of the collapsed inducing-point
    model with Gaussian noise."""
    u = _as_2d(u)
    X = _as_2d(X)
    Kuu = kernel_matrix(kernel, u)
    Kux = kernel_matrix(kernel, u, X)
    Sigma = _sym(Kuu + Kux @ Kux.T / noise)
    f = chol_psd(Sigma)
    S_u = _sym(Kuu @ f.solve(Kuu))
    b = Kuu @ f.solve(Kux @ np.asarray(y, float)) / noise
    return b, S_u


def sgpr_fit(kernel: KernelSpec, u, X, y, likelihood: GaussianLikelihood,
             max_n: int = 50000):
    """Collapsed full-batch baseline: analytic optimum of the inducing-point
    model with an empty mean basis."""
    model = DecoupledGP(kernel, InducingCovBasis(u), likelihood)
    state = model.analytic_optimum(X, y, max_n=max_n)
    return model, state
