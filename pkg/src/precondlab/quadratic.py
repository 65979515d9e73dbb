"""Diagnostic quadratic objective with synthetic stochastic gradients.

The model is F(w) = 0.5 (w - w*)^T H (w - w*) + F* with an SPD curvature
matrix H given by its eigenpairs.  Stochastic gradients are the exact
gradient plus Gaussian noise with covariance (sigma^2 / B) * H, which is
the second-order statistic of least-squares problems near the minimizer.
All metric constants (smoothness, strong convexity / PL, noise level) for
a given preconditioner come out in closed form here.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .linalg import SymEig, eig_spd, haar_orthogonal
from .rng import stream

__all__ = [
    "QuadraticModel",
    "TheoryConstants",
    "NoiseMoments",
    "make_diagnostic_model",
    "loss",
    "grad",
    "sample_stochastic_grad",
    "constants_for",
    "estimate_noise_moments",
]


@dataclass(frozen=True)
class QuadraticModel:
    """Quadratic objective defined by the eigenpairs of its Hessian.

    ``sigma`` is the gradient-noise scale and ``batch`` the synthetic
    mini-batch size; together they set Cov(noise) = (sigma^2/batch) * H.
    """

    hess_eig: SymEig
    w_star: np.ndarray
    f_star: float
    sigma: float
    batch: int

    def __post_init__(self) -> None:
        if np.any(self.hess_eig.eigenvalues <= 0):
            raise ValueError("curvature must be SPD: all eigenvalues > 0")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if self.batch < 1:
            raise ValueError(f"batch must be >= 1, got {self.batch}")

    @property
    def dim(self) -> int:
        return self.w_star.shape[0]

    @cached_property
    def hess(self) -> np.ndarray:
        """Dense H = U diag(lam) U^T, symmetrized."""
        u = self.hess_eig.eigenvectors
        h = (u * self.hess_eig.eigenvalues) @ u.T
        return 0.5 * (h + h.T)

    @cached_property
    def hess_sqrt(self) -> np.ndarray:
        """H^{1/2} = U diag(sqrt(lam)) U^T, used once per model for sampling."""
        u = self.hess_eig.eigenvectors
        return (u * np.sqrt(self.hess_eig.eigenvalues)) @ u.T

    # Convenience methods so the run engine can duck-type on tasks.
    def loss(self, w: np.ndarray) -> float:
        return loss(self, w)

    def grad(self, w: np.ndarray) -> np.ndarray:
        return grad(self, w)

    def sample_grad(self, w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return sample_stochastic_grad(self, w, rng)


@dataclass(frozen=True)
class TheoryConstants:
    """Metric constants of a (model, preconditioner) pair.

    l_hat / c_hat are the extreme eigenvalues of M^{-1} H (smoothness and
    strong convexity in the M-metric; c_hat doubles as the PL constant for
    quadratics).  k_noise is the preconditioned noise level
    (sigma^2/B) tr(M^{-1} H).  For the synthetic additive noise the first
    moments are exact: mu = mu_g = 1, k_v = 0, k_g = 1.
    """

    l_hat: float
    c_hat: float
    mu: float
    mu_g: float
    k_noise: float
    k_v: float
    k_g: float
    kappa_eff: float

    def __post_init__(self) -> None:
        if not (0 < self.c_hat <= self.l_hat):
            raise ValueError(f"need 0 < c_hat <= l_hat, got c_hat={self.c_hat}, l_hat={self.l_hat}")
        if not (self.mu_g >= self.mu > 0):
            raise ValueError(f"need mu_g >= mu > 0, got mu={self.mu}, mu_g={self.mu_g}")
        if self.k_noise < 0:
            raise ValueError(f"k_noise must be >= 0, got {self.k_noise}")
        if self.k_g < self.mu**2:
            raise ValueError(f"need k_g >= mu^2, got k_g={self.k_g}, mu={self.mu}")


@dataclass(frozen=True)
class NoiseMoments:
    """Monte Carlo estimates of the gradient moment ratios in the M-metric.

    ``degenerate`` flags a zero-gradient query point, where the two ratio
    estimates are undefined and only the variance is returned.
    """

    mu_emp: float
    mu_g_emp: float
    k_emp: float
    degenerate: bool = False


def make_diagnostic_model(
    d: int,
    lambda_min: float,
    lambda_max: float,
    seed: int,
    sigma: float = 0.1,
    batch: int = 1,
) -> QuadraticModel:
    """Diagnostic quadratic with a log-uniform spectrum and Haar eigenvectors.

    Eigenvalues form the log-uniform grid
    lambda_i = lambda_min * (lambda_max/lambda_min)^(i/(d-1)), i = 0..d-1,
    the eigenvector basis is Haar-random, and the minimizer is w* = 0 with
    F* = 0.
    """
    if d < 2:
        raise ValueError(f"dimension must be >= 2, got {d}")
    if not (0 < lambda_min < lambda_max):
        raise ValueError(f"need 0 < lambda_min < lambda_max, got [{lambda_min}, {lambda_max}]")
    i = np.arange(d)
    lam = lambda_min * (lambda_max / lambda_min) ** (i / (d - 1))
    lam = lam[::-1].copy()  # descending, per SymEig convention
    u = haar_orthogonal(d, seed)
    return QuadraticModel(
        hess_eig=SymEig(eigenvalues=lam, eigenvectors=u),
        w_star=np.zeros(d),
        f_star=0.0,
        sigma=float(sigma),
        batch=int(batch),
    )


def loss(model: QuadraticModel, w: np.ndarray) -> float:
    """F(w) = 0.5 (w - w*)^T H (w - w*) + F*."""
    e = w - model.w_star
    return 0.5 * float(e @ (model.hess @ e)) + model.f_star


def grad(model: QuadraticModel, w: np.ndarray) -> np.ndarray:
    """Exact gradient H (w - w*)."""
    return model.hess @ (w - model.w_star)


def sample_stochastic_grad(
    model: QuadraticModel, w: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Unbiased gradient grad(w) + zeta, Cov(zeta) = (sigma^2/batch) H.

    zeta is drawn as (sigma/sqrt(batch)) * H^{1/2} z with z standard
    normal; the draw advances ``rng`` deterministically.
    """
    g = grad(model, w)
    if model.sigma == 0.0:
        return g
    scale = model.sigma / np.sqrt(model.batch)
    return g + scale * (model.hess_sqrt @ rng.standard_normal(model.dim))


def preconditioned_spectrum(model: QuadraticModel, precond) -> np.ndarray:
    """Eigenvalues of M^{-1} H via the symmetrized form P^T H P, M^{-1} = P P^T.

    P is the symmetric inverse square root of the materialized M, so the
    spectrum is computed from an explicitly symmetric matrix.  Descending.

    A preconditioner built from this model's own eigenbasis knows the
    spectrum in closed form (it commutes with H); in that case the exact
    values are returned directly.
    """
    if getattr(precond, "kind", None) == "Identity":
        return model.hess_eig.eigenvalues.copy()
    hint = getattr(precond, "spectrum_hint", None)
    hint_eigs = getattr(precond, "hint_hessian_eigs", None)
    if hint is not None and hint_eigs is not None:
        if np.array_equal(hint_eigs, model.hess_eig.eigenvalues):
            return hint.copy()
    m = precond.materialize()
    m_eig = eig_spd(m)
    if np.any(m_eig.eigenvalues <= 0):
        raise ValueError("preconditioner is not SPD")
    v = m_eig.eigenvectors
    p = (v * (1.0 / np.sqrt(m_eig.eigenvalues))) @ v.T
    php = p @ model.hess @ p
    return eig_spd(php).eigenvalues


def constants_for(model: QuadraticModel, precond) -> TheoryConstants:
    """Closed-form metric constants for the quadratic under a preconditioner.

    l_hat and c_hat are the extreme eigenvalues of M^{-1} H, the noise
    level is (sigma^2/B) tr(M^{-1} H), and the synthetic gradient being
    unbiased with additive noise pins mu = mu_g = 1, k_v = 0, k_g = 1.
    """
    spec = preconditioned_spectrum(model, precond)
    l_hat = float(spec[0])
    c_hat = float(spec[-1])
    k_noise = (model.sigma**2 / model.batch) * float(np.sum(spec))
    return TheoryConstants(
        l_hat=l_hat,
        c_hat=c_hat,
        mu=1.0,
        mu_g=1.0,
        k_noise=k_noise,
        k_v=0.0,
        k_g=1.0,
        kappa_eff=l_hat / c_hat,
    )


def estimate_noise_moments(
    model: QuadraticModel,
    precond,
    w: np.ndarray,
    n_samples: int,
    seed: int,
) -> NoiseMoments:
    """Monte Carlo cross-check of the moment constants at a query point.

    Estimates <grad F, E g>_{M^-1} / ||grad F||^2_{M^-1}, the ratio
    ||E g||_{M^-1} / ||grad F||_{M^-1}, and the M^{-1}-norm variance of g
    from ``n_samples`` draws.  At the minimizer the ratios are undefined;
    the result is flagged degenerate and carries the variance only.
    """
    if n_samples < 1000:
        raise ValueError(f"n_samples must be >= 1e3, got {n_samples}")
    rng = stream(seed, "noise-moments")
    g_exact = grad(model, w)
    scale = model.sigma / np.sqrt(model.batch)
    z = rng.standard_normal((model.dim, n_samples))
    samples = g_exact[:, None] + scale * (model.hess_sqrt @ z)

    minv_samples = precond.apply_inverse(samples)
    g_bar = samples.mean(axis=1)
    minv_gbar = precond.apply_inverse(g_bar)
    sq_norms = np.einsum("ij,ij->j", samples, minv_samples)
    k_emp = float(sq_norms.mean() - g_bar @ minv_gbar)

    gf_sq = float(g_exact @ precond.apply_inverse(g_exact))
    if gf_sq == 0.0:
        return NoiseMoments(mu_emp=np.nan, mu_g_emp=np.nan, k_emp=k_emp, degenerate=True)
    mu_emp = float(g_exact @ minv_gbar) / gf_sq
    mu_g_emp = float(np.sqrt((g_bar @ minv_gbar) / gf_sq))
    return NoiseMoments(mu_emp=mu_emp, mu_g_emp=mu_g_emp, k_emp=k_emp)
