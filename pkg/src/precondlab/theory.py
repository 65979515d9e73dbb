"""Closed-form bound oracles and exact-expectation checks.

Four bound evaluators cover the fixed and harmonic learning-rate regimes,
globally and inside a local basin, plus the basin-stability lower bound.
For the quadratic task the expected optimality gap also admits an exact
covariance recursion

    C_{k+1} = A C_k A^T + alpha^2 M^{-1} (Sigma/B) M^{-T},
    A = I - alpha M^{-1} H,   E[F(w_k) - F*] = tr(H C_k) / 2,

which serves as the independent oracle for the Monte Carlo runs, along
with its stationary fixed point (the exact noise floor).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import RunConfig
from .precond import Preconditioner
from .quadratic import QuadraticModel, TheoryConstants, constants_for, grad, preconditioned_spectrum
from .rng import stream

__all__ = [
    "FixedRateBound",
    "BasinSpec",
    "LossRecursion",
    "DescentPoint",
    "DescentReport",
    "BasinMcResult",
    "bound_fixed",
    "bound_diminishing",
    "bound_local_fixed",
    "bound_local_diminishing",
    "basin_stability_bound",
    "exact_loss_recursion",
    "check_descent_lemma",
    "basin_stability_mc",
    "admissible_alpha_fixed",
    "admissible_alpha_local",
    "basin_for_quadratic",
    "suggested_basin_horizon",
]


@dataclass(frozen=True)
class FixedRateBound:
    """Geometric envelope floor + (1 - contraction-gap)^{k-1} (gap_1 - floor)."""

    floor_c: float
    contraction: float  # the factor 1 - alpha_bar * c_hat * mu
    initial_gap: float

    def at(self, k) -> np.ndarray | float:
        k = np.asarray(k)
        val = self.floor_c + self.contraction ** (k - 1) * (self.initial_gap - self.floor_c)
        return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class BasinSpec:
    """Local-basin geometry in the M-metric.

    ``r`` is the stay-in radius, ``r_plus`` the one-step containment
    radius, ``alpha_qg`` the quadratic-growth constant, and ``mu_pl`` the
    local gradient-domination (PL) constant.  For the diagnostic quadratic
    both constants equal c_hat.
    """

    r: float
    alpha_qg: float
    mu_pl: float
    r_plus: float = np.inf

    def __post_init__(self) -> None:
        if not (0 < self.r < self.r_plus):
            raise ValueError(f"need 0 < r < r_plus, got r={self.r}, r_plus={self.r_plus}")
        if not self.alpha_qg > 0:
            raise ValueError(f"alpha_qg must be > 0, got {self.alpha_qg}")
        if not self.mu_pl > 0:
            raise ValueError(f"mu_pl must be > 0, got {self.mu_pl}")


def basin_for_quadratic(constants: TheoryConstants, r: float, r_plus: float = np.inf) -> BasinSpec:
    """Basin whose PL and quadratic-growth constants are the quadratic's c_hat."""
    return BasinSpec(r=r, alpha_qg=constants.c_hat, mu_pl=constants.c_hat, r_plus=r_plus)


def admissible_alpha_fixed(constants: TheoryConstants) -> float:
    """Largest fixed learning rate admitted by the global geometric bound."""
    return constants.mu / (constants.l_hat * constants.k_g)


def admissible_alpha_local(constants: TheoryConstants, basin: BasinSpec) -> float:
    """The three-way learning-rate ceiling of the local fixed-rate regime."""
    c = constants
    clause1 = c.mu / (c.l_hat * c.k_g)
    clause2 = (
        basin.alpha_qg * basin.mu_pl * c.mu * basin.r**2 / (c.l_hat * c.k_noise)
        if c.k_noise > 0
        else np.inf
    )
    clause3 = 1.0 / (c.mu * basin.mu_pl)
    return min(clause1, clause2, clause3)


def bound_fixed(constants: TheoryConstants, alpha_bar: float, initial_gap: float, k):
    """Fixed-rate optimality-gap envelope C + (1 - a c mu)^{k-1} (gap_1 - C).

    Requires 0 < alpha_bar <= mu / (l_hat * k_g); the floor is
    C = alpha_bar * l_hat * K / (2 c_hat mu).
    """
    c = constants
    limit = admissible_alpha_fixed(c)
    if not (0 < alpha_bar <= limit):
        raise ValueError(
            f"alpha_bar={alpha_bar:g} is inadmissible: need 0 < alpha_bar <= "
            f"mu/(l_hat*k_g) = {limit:g}"
        )
    if initial_gap < 0:
        raise ValueError(f"initial_gap must be >= 0, got {initial_gap}")
    floor = alpha_bar * c.l_hat * c.k_noise / (2.0 * c.c_hat * c.mu)
    env = FixedRateBound(
        floor_c=floor, contraction=1.0 - alpha_bar * c.c_hat * c.mu, initial_gap=initial_gap
    )
    return env.at(k)


def bound_diminishing(
    constants: TheoryConstants, beta: float, gamma: float, initial_gap: float, k
):
    """Harmonic-rate envelope nu / (gamma + k).

    Requires beta > 1/(c_hat mu) and alpha_1 = beta/(gamma+1) <=
    mu/(l_hat k_g); nu is the standard max of the noise-driven and
    initial-gap clauses.
    """
    c = constants
    beta_min = 1.0 / (c.c_hat * c.mu)
    if not beta > beta_min:
        raise ValueError(f"beta={beta:g} is inadmissible: need beta > 1/(c_hat*mu) = {beta_min:g}")
    alpha1 = beta / (gamma + 1.0)
    limit = admissible_alpha_fixed(c)
    if not (gamma > 0 and alpha1 <= limit):
        raise ValueError(
            f"gamma={gamma:g} is inadmissible: need gamma > 0 and beta/(gamma+1) <= "
            f"mu/(l_hat*k_g) = {limit:g} (got alpha_1 = {alpha1:g})"
        )
    nu = max(
        beta**2 * c.l_hat * c.k_noise / (2.0 * (beta * c.c_hat * c.mu - 1.0)),
        (gamma + 1.0) * initial_gap,
    )
    k = np.asarray(k)
    val = nu / (gamma + k)
    return float(val) if val.ndim == 0 else val


def bound_local_fixed(
    constants: TheoryConstants,
    basin: BasinSpec,
    alpha_bar: float,
    initial_gap: float,
    k,
) -> tuple[np.ndarray | float, float, float]:
    """Local fixed-rate envelope; returns (bound, rho, floor).

    rho = alpha_bar * mu_pl * mu and floor = alpha_bar * l_hat * K /
    (2 mu_pl mu).  The learning rate must clear the three-way ceiling; the
    error message names the clause that failed.
    """
    c = constants
    clauses = {
        "mu/(l_hat*k_g)": c.mu / (c.l_hat * c.k_g),
        "alpha_qg*mu_pl*mu*r^2/(l_hat*K)": (
            basin.alpha_qg * basin.mu_pl * c.mu * basin.r**2 / (c.l_hat * c.k_noise)
            if c.k_noise > 0
            else np.inf
        ),
        "1/(mu*mu_pl)": 1.0 / (c.mu * basin.mu_pl),
    }
    for name, limit in clauses.items():
        if not alpha_bar < limit:
            raise ValueError(
                f"alpha_bar={alpha_bar:g} is inadmissible: violates clause {name} = {limit:g}"
            )
    if not alpha_bar > 0:
        raise ValueError(f"alpha_bar must be > 0, got {alpha_bar}")
    rho = alpha_bar * basin.mu_pl * c.mu
    floor = alpha_bar * c.l_hat * c.k_noise / (2.0 * basin.mu_pl * c.mu)
    k = np.asarray(k)
    val = floor + (1.0 - rho) ** (k - 1) * (initial_gap - floor)
    return (float(val) if val.ndim == 0 else val), rho, floor


def bound_local_diminishing(
    constants: TheoryConstants,
    basin: BasinSpec,
    beta: float,
    gamma: float,
    initial_gap: float,
    k,
):
    """Local harmonic-rate envelope nu / (gamma + k).

    beta must sit in the window 2/(mu_pl mu) < beta <= mu (gamma+1) /
    (l_hat k_g); the error names both endpoints.
    """
    c = constants
    lower = 2.0 / (basin.mu_pl * c.mu)
    upper = c.mu * (gamma + 1.0) / (c.l_hat * c.k_g)
    if not (lower < beta <= upper):
        raise ValueError(
            f"beta={beta:g} outside the admissible window "
            f"(2/(mu_pl*mu), mu*(gamma+1)/(l_hat*k_g)] = ({lower:g}, {upper:g}]"
        )
    nu = max(
        beta**2 * c.l_hat * c.k_noise / (2.0 * (beta * basin.mu_pl * c.mu - 1.0)),
        (gamma + 1.0) * initial_gap,
    )
    k = np.asarray(k)
    val = nu / (gamma + k)
    return float(val) if val.ndim == 0 else val


def basin_stability_bound(basin: BasinSpec, initial_gap: float) -> float:
    """Lower bound on P(all iterates stay in the radius-r basin)."""
    if initial_gap < 0:
        raise ValueError(f"initial_gap must be >= 0, got {initial_gap}")
    level = 0.5 * basin.alpha_qg * basin.r**2
    return max(0.0, 1.0 - initial_gap / level)


@dataclass(frozen=True)
class LossRecursion:
    """Exact expected gaps E[F(w_k) - F*] for k = 1..k_max, plus the floor."""

    gaps: np.ndarray
    floor: float


def exact_loss_recursion(
    model: QuadraticModel,
    precond: Preconditioner,
    alpha_bar: float,
    init_cov_scale: float,
    k_max: int,
) -> LossRecursion:
    """Exact-expectation oracle for fixed-rate runs on the quadratic.

    With w* = 0 and w_1 ~ N(0, init_cov_scale I), the error covariance
    evolves as C_{k+1} = A C_k A^T + alpha^2 M^{-1}(Sigma/B)M^{-T} and the
    expected gap is tr(H C_k)/2.  The stationary floor tr(H C_inf)/2 is
    obtained by iterating the Lyapunov recursion (in doubled form) to
    1e-12 relative change.  Raises on spectral radius >= 1.
    """
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    if init_cov_scale < 0:
        raise ValueError(f"init_cov_scale must be >= 0, got {init_cov_scale}")
    d = model.dim
    h = model.hess
    minv = precond.apply_inverse(np.eye(d))
    spec = preconditioned_spectrum(model, precond)
    radius = float(np.max(np.abs(1.0 - alpha_bar * spec)))
    if radius >= 1.0:
        raise ValueError(
            f"iteration map has spectral radius {radius:g} >= 1: divergent for "
            f"alpha_bar={alpha_bar:g}"
        )
    a = np.eye(d) - alpha_bar * (minv @ h)
    sigma_cov = (model.sigma**2 / model.batch) * h
    q = alpha_bar**2 * (minv @ sigma_cov @ minv.T)

    cov = init_cov_scale * np.eye(d)
    gaps = np.empty(k_max)
    for k in range(k_max):
        gaps[k] = 0.5 * float(np.sum(h * cov))
        if k + 1 < k_max:
            cov = a @ cov @ a.T + q

    # Doubling form of the Lyapunov iteration: s accumulates sum_j A^j Q A^T^j.
    s = q.copy()
    t = a.copy()
    floor = 0.5 * float(np.sum(h * s))
    for _ in range(200):
        s = s + t @ s @ t.T
        t = t @ t
        new_floor = 0.5 * float(np.sum(h * s))
        if abs(new_floor - floor) <= 1e-12 * max(abs(new_floor), 1e-300):
            floor = new_floor
            break
        floor = new_floor
    return LossRecursion(gaps=gaps, floor=floor)


def suggested_basin_horizon(
    model: QuadraticModel,
    precond: Preconditioner,
    alpha_bar: float,
    init_cov_scale: float,
    cap: int = 1500,
) -> int:
    """Finite-horizon proxy for an infinite exit time.

    Ten times the iteration count at which the exact recursion first comes
    within 1% of its stationary floor, clipped to ``cap`` (exit events
    concentrate in the early transient, so a longer horizon changes the
    stay fraction only marginally; the Monte Carlo bound check stays valid
    for any horizon).
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    d = model.dim
    h = model.hess
    minv = precond.apply_inverse(np.eye(d))
    a = np.eye(d) - alpha_bar * (minv @ h)
    q = alpha_bar**2 * ((model.sigma**2 / model.batch) * (minv @ h @ minv.T))
    floor = exact_loss_recursion(model, precond, alpha_bar, init_cov_scale, 1).floor
    cov = init_cov_scale * np.eye(d)
    for k in range(1, cap + 1):
        gap = 0.5 * float(np.sum(h * cov))
        if gap <= 1.01 * floor and floor > 0:
            return min(10 * k, cap)
        cov = a @ cov @ a.T + q
    return cap


@dataclass(frozen=True)
class DescentPoint:
    gap_before: float
    mc_mean: float
    mc_se: float
    rhs: float
    exact: float
    passed: bool
    oracle_ok: bool


@dataclass(frozen=True)
class DescentReport:
    points: tuple[DescentPoint, ...]
    alpha: float

    @property
    def all_passed(self) -> bool:
        return all(p.passed for p in self.points)

    @property
    def all_oracle_ok(self) -> bool:
        return all(p.oracle_ok for p in self.points)


def check_descent_lemma(
    model: QuadraticModel,
    precond: Preconditioner,
    w_samples,
    alpha: float,
    n_mc: int,
    seed: int,
) -> DescentReport:
    """Per-step descent invariant, Monte Carlo versus its closed-form RHS.

    At each sample point the one-step expectation E[F(w+) - F*] is
    estimated from ``n_mc`` noise draws and compared against
    (1 - alpha c_hat mu)(F(w) - F*) + alpha^2 l_hat K / 2 with a
    3-standard-error allowance.  The same expectation is also computed
    exactly from the one-step covariance propagation as a cross-check.
    """
    if n_mc < 10_000:
        raise ValueError(f"n_mc must be >= 1e4, got {n_mc}")
    c = constants_for(model, precond)
    limit = admissible_alpha_fixed(c)
    if not (0 < alpha <= limit):
        raise ValueError(f"alpha={alpha:g} inadmissible: need 0 < alpha <= {limit:g}")

    d = model.dim
    h = model.hess
    minv = precond.apply_inverse(np.eye(d))
    noise_term = (
        0.5 * alpha**2 * (model.sigma**2 / model.batch) * float(np.trace(minv @ h @ minv @ h))
    )
    rng = stream(seed, "descent-lemma")
    scale = model.sigma / np.sqrt(model.batch)
    points = []
    for w in w_samples:
        w = np.asarray(w, dtype=float)
        gap_before = model.loss(w) - model.f_star
        rhs = (1.0 - alpha * c.c_hat * c.mu) * gap_before + 0.5 * alpha**2 * c.l_hat * c.k_noise

        z = rng.standard_normal((d, n_mc))
        g_all = grad(model, w)[:, None] + scale * (model.hess_sqrt @ z)
        w_plus = (w - model.w_star)[:, None] - alpha * precond.apply_inverse(g_all)
        vals = 0.5 * np.einsum("ij,ij->j", w_plus, h @ w_plus)
        mc_mean = float(vals.mean())
        mc_se = float(vals.std(ddof=1) / np.sqrt(n_mc))

        e_step = (w - model.w_star) - alpha * (minv @ grad(model, w))
        exact = 0.5 * float(e_step @ (h @ e_step)) + noise_term

        points.append(
            DescentPoint(
                gap_before=gap_before,
                mc_mean=mc_mean,
                mc_se=mc_se,
                rhs=rhs,
                exact=exact,
                passed=mc_mean <= rhs + 3.0 * mc_se,
                oracle_ok=abs(mc_mean - exact) <= 3.0 * mc_se,
            )
        )
    return DescentReport(points=tuple(points), alpha=alpha)


@dataclass(frozen=True)
class BasinMcResult:
    """Empirical basin-stability estimate next to its theoretical bound.

    ``r_plus_observed`` reports r + alpha * max ||M^{-1} g||_M over all
    recorded steps (the realized one-step containment radius).  Final-gap
    means are reported both conditioned on staying and unconditioned.
    """

    stay_fraction: float
    bound: float
    mean_initial_gap: float
    n_seeds: int
    n_exited: int
    r_plus_observed: float
    final_gap_stayed: float
    final_gap_all: float

    def binomial_se(self) -> float:
        p = self.stay_fraction
        return float(np.sqrt(max(p * (1.0 - p), 0.0) / self.n_seeds))


def basin_stability_mc(
    model: QuadraticModel,
    precond: Preconditioner,
    basin: BasinSpec,
    cfg: RunConfig,
) -> BasinMcResult:
    """Fraction of seeds whose whole trajectory stays in the M-ball of radius r.

    w_1 is drawn from N(0, init_std^2 I) and resampled until it lands
    inside the basin.  The run horizon is ``cfg.iters`` (finite proxy for
    an infinite exit time; a longer horizon can only lower the fraction,
    so the reported value is a valid upper estimate of P(stay forever),
    which the theoretical bound lower-bounds).
    """
    w_star = model.w_star

    def dist_m(w: np.ndarray) -> float:
        e = w - w_star
        return float(np.sqrt(e @ precond.apply(e)))

    stays = []
    gap0s = []
    finals = []
    max_step_norm = 0.0
    max_alpha = 0.0
    for seed in cfg.seeds:
        rng_init = stream(seed, "basin-init")
        for _ in range(10_000):
            w = w_star + cfg.init_std * rng_init.standard_normal(model.dim)
            if dist_m(w) <= basin.r:
                break
        else:
            raise RuntimeError(
                f"could not sample w_1 inside the basin (r={basin.r:g}) after 10000 tries"
            )
        gap0s.append(model.loss(w) - model.f_star)
        rng_noise = stream(seed, "basin-noise")
        stayed = True
        for k in range(1, cfg.iters + 1):
            alpha_k = cfg.schedule.alpha(k)
            g = model.sample_grad(w, rng_noise)
            mg = precond.apply_inverse(g)
            step_norm = float(np.sqrt(g @ mg))  # ||M^{-1} g||_M = sqrt(g^T M^{-1} g)
            if step_norm > max_step_norm:
                max_step_norm = step_norm
            if alpha_k > max_alpha:
                max_alpha = alpha_k
            w = w - alpha_k * mg
            if stayed and dist_m(w) > basin.r:
                stayed = False
        stays.append(stayed)
        finals.append(model.loss(w) - model.f_star)

    stays_arr = np.asarray(stays)
    finals_arr = np.asarray(finals)
    mean_gap0 = float(np.mean(gap0s))
    stayed_final = float(finals_arr[stays_arr].mean()) if stays_arr.any() else np.nan
    return BasinMcResult(
        stay_fraction=float(stays_arr.mean()),
        bound=basin_stability_bound(basin, mean_gap0),
        mean_initial_gap=mean_gap0,
        n_seeds=len(cfg.seeds),
        n_exited=int(np.sum(~stays_arr)),
        r_plus_observed=basin.r + max_alpha * max_step_norm,
        final_gap_stayed=stayed_final,
        final_gap_all=float(finals_arr.mean()),
    )
