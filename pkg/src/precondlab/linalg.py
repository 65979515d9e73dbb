"""Dense small-scale linear algebra.

Symmetric eigendecomposition via cyclic Jacobi rotations, Haar-random
orthogonal matrices, and an unpreconditioned matrix-free conjugate-gradient
solver with optional diagonal damping.  Everything here is meant for
matrices up to a few hundred rows; no sparsity, no GPU.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .rng import stream

__all__ = [
    "SymEig",
    "CgConfig",
    "CgError",
    "eig_spd",
    "haar_orthogonal",
    "cg_solve",
]


@dataclass(frozen=True)
class SymEig:
    """Eigendecomposition of a symmetric matrix.

    ``eigenvalues`` are sorted descending; column ``i`` of ``eigenvectors``
    pairs with ``eigenvalues[i]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        """U diag(lam) U^T."""
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.T


@dataclass(frozen=True)
class CgConfig:
    """Budget and damping for a conjugate-gradient solve.

    ``damping`` adds lambda*I to the operator inside the solver; callers
    pass the raw operator.
    """

    max_iters: int = 100
    tol: float = 1e-10
    damping: float = 0.0

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.damping < 0:
            raise ValueError(f"damping must be >= 0, got {self.damping}")


class CgError(RuntimeError):
    """Conjugate gradient hit a non-finite or non-SPD state."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


def _jacobi_sweeps(a: np.ndarray, tol: float, max_sweeps: int) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi on a symmetric matrix; returns (diagonal values, rotations)."""
    d = a.shape[0]
    v = np.eye(d)
    norm = np.linalg.norm(a, "fro")
    if norm == 0.0:
        return np.zeros(d), v
    skip = 1e-2 * tol * norm / d
    for _ in range(max_sweeps):
        off = float(np.linalg.norm(a - np.diag(np.diag(a)), "fro"))
        if off <= tol * norm:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= skip:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) if theta != 0 else 1.0
                t = t / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # Two-sided rotation on rows/columns p, q.
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    return np.diag(a).copy(), v


def eig_spd(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 60) -> SymEig:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    The input is symmetrized as (A + A^T)/2 before sweeping.  Suitable for
    dimensions up to a few hundred.  Eigenvalues come back sorted
    descending with matching eigenvector columns.

    Raises ValueError on non-finite entries or a non-square input.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    work = 0.5 * (a + a.T)
    vals, vecs = _jacobi_sweeps(work, tol, max_sweeps)
    order = np.argsort(vals)[::-1]
    return SymEig(eigenvalues=vals[order], eigenvectors=np.ascontiguousarray(vecs[:, order]))


def haar_orthogonal(d: int, seed: int) -> np.ndarray:
    """Haar-distributed random orthogonal matrix.

    QR of a d x d standard-normal matrix with the sign convention
    R_ii > 0, which makes the factor unique and Haar-distributed.
    Deterministic for a fixed seed.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    rng = stream(seed, "haar-orthogonal")
    z = rng.standard_normal((d, d))
    q, r = np.linalg.qr(z)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def cg_solve(
    apply_a: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    cfg: CgConfig,
    on_negative_curvature: str = "error",
) -> tuple[np.ndarray, int, float]:
    """Conjugate gradient for (A + damping*I) x = b with a matrix-free A.

    Returns (x, iterations used, relative residual).  The residual is
    recomputed from the definition ||(A + damping I)x - b|| / ||b|| on
    exit.  A zero right-hand side returns x = 0 immediately.

    Raises CgError when the recurrence produces non-finite values,
    carrying the iteration index.  A finite but non-positive curvature
    p^T A p is an error by default; with
    ``on_negative_curvature="truncate"`` the solve instead stops at the
    last iterate (the standard truncated-CG treatment for indefinite
    curvature, falling back to b itself when no step was taken yet).
    """
    if on_negative_curvature not in ("error", "truncate"):
        raise ValueError("on_negative_curvature must be 'error' or 'truncate'")
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise ValueError("right-hand side contains non-finite entries")

    lam = cfg.damping

    def op(v: np.ndarray) -> np.ndarray:
        av = apply_a(v)
        return av + lam * v if lam != 0.0 else av

    b_norm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if b_norm == 0.0:
        return x, 0, 0.0

    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    iters = 0
    for i in range(1, cfg.max_iters + 1):
        ap = op(p)
        p_ap = float(p @ ap)
        if not np.isfinite(p_ap):
            raise CgError("non-finite curvature in CG", iteration=i)
        if p_ap <= 0.0:
            if on_negative_curvature == "error":
                raise CgError(
                    "operator is not positive definite along search direction", iteration=i
                )
            if i == 1:
                x = b.copy()
            break
        alpha = rs / p_ap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        if not np.isfinite(rs_new):
            raise CgError("non-finite residual in CG", iteration=i)
        iters = i
        if np.sqrt(rs_new) <= cfg.tol * b_norm:
            break
        p = r + (rs_new / rs) * p
        rs = rs_new

    rel_residual = float(np.linalg.norm(op(x) - b) / b_norm)
    return x, iters, rel_residual
