"""SPD preconditioners: the metric M applied through its inverse action.

Concrete kinds: identity, rank-s spectral deflation (targeting chosen
eigendirections of the curvature), Adam-style diagonal from second-moment
estimates, L-BFGS two-loop memory, and matrix-free curvature solves
(Hessian or Gauss-Newton vector products inverted by a budgeted CG).

``apply_inverse`` accepts a vector or a (d, n) column stack.  Dense
``materialize`` is available on the analysis-friendly kinds and is used by
test oracles and the covariance recursion; the iteration itself only ever
needs the inverse action.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import CgConfig, cg_solve
from .quadratic import QuadraticModel

__all__ = [
    "Preconditioner",
    "IdentityPreconditioner",
    "DeflationSpec",
    "SpectralDeflation",
    "DiagonalPreconditioner",
    "LbfgsMemory",
    "LbfgsPreconditioner",
    "CurvatureCgPreconditioner",
    "build_deflation",
    "diagonal_precond_from_moments",
    "lbfgs_direction",
    "curvature_cg_precondition",
]

DEFLATION_MODES = ("top_to_one", "top_to_common", "bottom_to_one")


class Preconditioner:
    """Behavioral interface: M^{-1} action plus optional dense views."""

    kind: str = "Abstract"

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply(self, v: np.ndarray) -> np.ndarray:
        """M v, used for M-norm distances.  Default goes through the dense M."""
        return self.materialize() @ v

    def materialize(self) -> np.ndarray:
        raise NotImplementedError(f"{self.kind} preconditioner has no dense form")


@dataclass(frozen=True)
class IdentityPreconditioner(Preconditioner):
    dim: int
    kind: str = field(default="Identity", init=False)

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float).copy()

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v, dtype=float).copy()

    def materialize(self) -> np.ndarray:
        return np.eye(self.dim)


@dataclass(frozen=True)
class DeflationSpec:
    """Which part of the spectrum to move, and where.

    * ``top_to_one``: the largest ``s`` eigenvalues of M^{-1}H become 1.
    * ``top_to_common``: the largest ``s`` become the common value ``v``
      (``v`` must lie between the (s+1)-th and the smallest eigenvalue).
    * ``bottom_to_one``: the smallest ``s`` become 1.
    """

    mode: str
    s: int
    v: float | None = None

    def __post_init__(self) -> None:
        if self.mode not in DEFLATION_MODES:
            raise ValueError(f"mode must be one of {DEFLATION_MODES}, got {self.mode!r}")
        if self.s < 1:
            raise ValueError(f"s must be >= 1, got {self.s}")
        if self.mode == "top_to_common" and (self.v is None or self.v <= 0):
            raise ValueError("top_to_common needs a positive target value v")


@dataclass(frozen=True)
class SpectralDeflation(Preconditioner):
    """Rank-s metric correction M = I + U_s (diag(tau) - I) U_s^T.

    U_s holds the selected orthonormal eigendirections; tau are their
    M-eigenvalues.  Because U_s is orthonormal the inverse action has the
    closed form M^{-1} v = v + U_s ((1/tau - 1) * (U_s^T v)).

    When built from a quadratic's own eigenbasis, M commutes with the
    curvature H, so the spectrum of M^{-1}H is known in closed form;
    ``spectrum_hint`` carries it (descending) together with the curvature
    eigenvalues it was derived from, letting analysis code use exact
    values instead of re-diagonalizing.
    """

    basis: np.ndarray  # (d, s), orthonormal columns
    tau: np.ndarray  # (s,), positive targets
    spectrum_hint: np.ndarray | None = None
    hint_hessian_eigs: np.ndarray | None = None
    kind: str = field(default="SpectralDeflation", init=False)

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        coeff = self.basis.T @ v
        scale = 1.0 / self.tau - 1.0
        if coeff.ndim == 1:
            return v + self.basis @ (scale * coeff)
        return v + self.basis @ (scale[:, None] * coeff)

    def apply(self, v: np.ndarray) -> np.ndarray:
        coeff = self.basis.T @ v
        scale = self.tau - 1.0
        if coeff.ndim == 1:
            return v + self.basis @ (scale * coeff)
        return v + self.basis @ (scale[:, None] * coeff)

    def materialize(self) -> np.ndarray:
        d = self.basis.shape[0]
        return np.eye(d) + (self.basis * (self.tau - 1.0)) @ self.basis.T


@dataclass(frozen=True)
class DiagonalPreconditioner(Preconditioner):
    """M = diag(entries); the Adam-style second-moment rescaling."""

    entries: np.ndarray
    kind: str = field(default="Diagonal", init=False)

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        if np.ndim(v) == 1:
            return v / self.entries
        return v / self.entries[:, None]

    def apply(self, v: np.ndarray) -> np.ndarray:
        if np.ndim(v) == 1:
            return v * self.entries
        return v * self.entries[:, None]

    def materialize(self) -> np.ndarray:
        return np.diag(self.entries)


def build_deflation(model: QuadraticModel, spec: DeflationSpec) -> SpectralDeflation:
    """Spectral preconditioner for the diagnostic quadratic.

    Per-mode targets (lam sorted descending):

    * top_to_one:    tau_i = lam_i for the top s, preconditioned eigenvalue 1
    * top_to_common: tau_i = lam_i / v, preconditioned eigenvalue v
    * bottom_to_one: tau_i = lam_i for the bottom s, preconditioned eigenvalue 1
    """
    lam = model.hess_eig.eigenvalues
    u = model.hess_eig.eigenvectors
    d = lam.shape[0]
    if spec.s > d:
        raise ValueError(f"s={spec.s} exceeds dimension {d}")

    if spec.mode == "bottom_to_one":
        idx = np.arange(d - spec.s, d)
        tau = lam[idx].copy()
    elif spec.mode == "top_to_one":
        idx = np.arange(spec.s)
        tau = lam[idx].copy()
    else:  # top_to_common
        idx = np.arange(spec.s)
        upper = lam[spec.s] if spec.s < d else np.inf
        lower = lam[-1]
        if not (lower <= spec.v <= upper):
            raise ValueError(
                f"common target v={spec.v} must lie in [lambda_d, lambda_(s+1)] = "
                f"[{lower:g}, {upper:g}]"
            )
        tau = lam[idx] / spec.v

    hint = lam.copy()
    hint[idx] = lam[idx] / tau
    hint = np.sort(hint)[::-1]
    return SpectralDeflation(
        basis=np.ascontiguousarray(u[:, idx]),
        tau=tau,
        spectrum_hint=hint,
        hint_hessian_eigs=lam.copy(),
    )


def diagonal_precond_from_moments(s_k: np.ndarray, eps: float) -> DiagonalPreconditioner:
    """M = diag(sqrt(s_k) + eps) from second-moment estimates."""
    s_k = np.asarray(s_k, dtype=float)
    if np.any(s_k < 0):
        raise ValueError("second-moment estimates must be nonnegative")
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    return DiagonalPreconditioner(entries=np.sqrt(s_k) + eps)


class LbfgsMemory:
    """Bounded history of (s, y) displacement/gradient-difference pairs.

    Pairs violating the curvature condition s^T y > 0 are dropped at
    insertion so the two-loop direction stays a descent direction.
    """

    def __init__(self, max_pairs: int = 100):
        if max_pairs < 1:
            raise ValueError(f"max_pairs must be >= 1, got {max_pairs}")
        self.max_pairs = max_pairs
        self.pairs: list[tuple[np.ndarray, np.ndarray]] = []

    def insert(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Append a pair; returns False when rejected by the curvature test."""
        if float(s @ y) <= 0.0:
            return False
        self.pairs.append((np.asarray(s, dtype=float), np.asarray(y, dtype=float)))
        if len(self.pairs) > self.max_pairs:
            self.pairs.pop(0)
        return True


def lbfgs_direction(memory, g: np.ndarray) -> np.ndarray:
    """Quasi-Newton direction -H_approx^{-1} g via the two-loop recursion.

    ``memory`` is a sequence of (s_i, y_i) pairs, oldest first, each with
    s_i^T y_i > 0.  The initial matrix is the standard scaling
    H_0 = (s_m^T y_m / y_m^T y_m) I from the newest pair; with no history
    the direction falls back to -g.
    """
    pairs = memory.pairs if isinstance(memory, LbfgsMemory) else list(memory)
    if not pairs:
        return -np.asarray(g, dtype=float)

    q = np.asarray(g, dtype=float).copy()
    rhos = [1.0 / float(y @ s) for s, y in pairs]
    alphas = [0.0] * len(pairs)
    for i in range(len(pairs) - 1, -1, -1):
        s, y = pairs[i]
        alphas[i] = rhos[i] * float(s @ q)
        q -= alphas[i] * y

    s_new, y_new = pairs[-1]
    gamma = float(s_new @ y_new) / float(y_new @ y_new)
    r = gamma * q
    for i in range(len(pairs)):
        s, y = pairs[i]
        beta = rhos[i] * float(y @ r)
        r += (alphas[i] - beta) * s
    return -r


def curvature_cg_precondition(
    apply_curvature: Callable[[np.ndarray], np.ndarray],
    g: np.ndarray,
    cfg: CgConfig,
) -> np.ndarray:
    """Approximate (A + damping*I)^{-1} g with a budgeted CG solve.

    ``apply_curvature`` is the Hessian- or Gauss-Newton-vector product of
    the current loss at the current weights; the CG budget and damping
    come from ``cfg``.  Indefinite curvature (possible for exact Hessians
    of nonconvex losses) truncates the solve at the last good iterate
    instead of failing; non-finite values still raise.
    """
    x, _, _ = cg_solve(apply_curvature, g, cfg, on_negative_curvature="truncate")
    return x


@dataclass
class CurvatureCgPreconditioner(Preconditioner):
    """Matrix-free curvature metric: apply_inverse solves through CG.

    ``make_operator`` returns the curvature-vector product at the weights
    the optimizer is currently holding; the preconditioner is rebuilt
    (fresh solve) at every application, never cached across steps.
    """

    make_operator: Callable[[], Callable[[np.ndarray], np.ndarray]]
    cfg: CgConfig
    kind: str = field(default="CurvatureCG", init=False)

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        return curvature_cg_precondition(self.make_operator(), v, self.cfg)


@dataclass
class LbfgsPreconditioner(Preconditioner):
    """History-based metric: apply_inverse is the two-loop H_approx^{-1} v.

    Owns its memory; intended for a single optimizer instance, never
    shared across concurrent runs.
    """

    memory: LbfgsMemory
    kind: str = field(default="LbfgsMemory", init=False)

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        return -lbfgs_direction(self.memory, v)
