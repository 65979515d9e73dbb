"""Command-line front end.

Subcommands::

    precondlab quad-sweep --config cfg.txt [--out DIR] [--jobs N]
    precondlab bounds     --config cfg.txt [--out DIR] [--jobs N]
    precondlab basin      --config cfg.txt [--out DIR] [--jobs N]
    precondlab franke     --config cfg.txt [--out DIR] [--jobs N]

Every run writes its fully-resolved config, a metadata manifest (seed
lists, build identifier, derived quantities), plot-ready CSVs (one curve
per file), and rendered figures into the output directory.  Re-running a
command with the same config byte-reproduces all CSVs except the
wall-clock timing tables.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, format_config, load_config, resolve
from .engine import (
    NN_METHODS,
    FixedSchedule,
    HarmonicSchedule,
    OptimizerSpec,
    RunConfig,
    run_psgd,
    two_phase_run,
)
from .linalg import CgConfig
from .nn import FrankeTask, Mlp
from .precond import DeflationSpec, IdentityPreconditioner, build_deflation
from .quadratic import constants_for, make_diagnostic_model
from .report import (
    build_identifier,
    plot_basin,
    plot_curves,
    write_basin_table,
    write_constants_table,
    write_metadata,
    write_resolved_config,
    write_result_table,
    write_timing_table,
)
from .theory import (
    admissible_alpha_fixed,
    admissible_alpha_local,
    basin_for_quadratic,
    basin_stability_mc,
    bound_diminishing,
    bound_fixed,
    exact_loss_recursion,
    suggested_basin_horizon,
)

__all__ = ["main"]

# Learning-rate search grids for the regression benchmark.  The shipped
# per-method defaults in the config schema were selected from these grids;
# the value actually used is recorded in each run's metadata.
LR_GRIDS = {
    "sgd": (0.001, 0.0005, 0.0002, 0.0001, 0.01, 0.05, 0.1),
    "momentum": (0.001, 0.0005, 0.0002, 0.0001, 0.01, 0.02, 0.05),
    "adam": (0.001, 0.0005, 0.0002, 0.0001, 0.00005, 0.00002, 0.00001),
    "lbfgs": (1.0, 0.5, 0.2, 0.1, 0.05, 0.01),
    "cg_hessian": (1.0, 0.5, 0.2, 0.1, 0.05, 0.01, 0.005, 0.001),
    "cg_ggn": (0.1, 0.05, 0.02, 0.01, 0.005, 0.001, 0.0005, 0.0001),
}


def _resolve_seeds(cfg) -> tuple[int, ...]:
    if cfg["seeds"]:
        return tuple(cfg["seeds"])
    return tuple(range(cfg["seed_base"], cfg["seed_base"] + cfg["n_seeds"]))


def _model_from(cfg):
    return make_diagnostic_model(
        d=cfg["dim"],
        lambda_min=cfg["lambda_min"],
        lambda_max=cfg["lambda_max"],
        seed=cfg["model_seed"],
        sigma=cfg["sigma"],
        batch=cfg["batch"],
    )


def _precond_from(cfg, model):
    mode = cfg["deflate_mode"]
    if mode == "none":
        return IdentityPreconditioner(model.dim)
    v = cfg["deflate_v"] if mode == "top_to_common" else None
    return build_deflation(model, DeflationSpec(mode=mode, s=cfg["deflate_s"], v=v))


def _sweep_alpha(cfg, model) -> float:
    """Shared sweep learning rate: 0.5 / lambda_max(H) unless overridden."""
    if cfg["alpha_bar"] > 0:
        return cfg["alpha_bar"]
    return 0.5 / float(model.hess_eig.eigenvalues[0])


def _base_metadata(cfg, command: str) -> dict:
    return {
        "command": command,
        "build": build_identifier(),
        "seeds": list(_resolve_seeds(cfg)),
        "config": {k: v for k, v in sorted(cfg.items())},
    }


def cmd_quad_sweep(cfg, out_dir: Path) -> None:
    """Three deflation panels on the diagnostic quadratic, one CSV per curve."""
    model = _model_from(cfg)
    alpha = _sweep_alpha(cfg, model)
    seeds = _resolve_seeds(cfg)
    run_cfg = RunConfig(
        iters=cfg["iters"],
        seeds=seeds,
        schedule=FixedSchedule(alpha),
        record_every=cfg["record_every"],
        init_std=cfg["init_std"],
    )

    panels = {
        "top_to_one": [("identity", None)]
        + [(f"s{s}", DeflationSpec("top_to_one", s)) for s in cfg["sweep_s_list"]],
        "top_to_common": [("identity", None)]
        + [
            (f"v{v:g}", DeflationSpec("top_to_common", cfg["common_s"], v=v))
            for v in cfg["sweep_v_list"]
        ],
        "bottom_to_one": [("identity", None)]
        + [(f"s{s}", DeflationSpec("bottom_to_one", s)) for s in cfg["sweep_s_list"]],
    }

    meta = _base_metadata(cfg, "quad-sweep")
    meta["alpha_bar_used"] = alpha
    for panel_name, specs in panels.items():
        panel_dir = out_dir / panel_name
        const_rows = []
        curves = {}
        for label, spec in specs:
            precond = (
                IdentityPreconditioner(model.dim) if spec is None else build_deflation(model, spec)
            )
            traj = run_psgd(model, precond, run_cfg, jobs=cfg["jobs"])
            write_result_table(panel_dir / f"{label}.csv", traj.ks, traj.loss_mean, traj.loss_std)
            c = constants_for(model, precond)
            floor = alpha * c.l_hat * c.k_noise / (2.0 * c.c_hat * c.mu)
            const_rows.append(
                {
                    "label": label,
                    "l_hat": c.l_hat,
                    "c_hat": c.c_hat,
                    "k_noise": c.k_noise,
                    "kappa_eff": c.kappa_eff,
                    "floor": floor,
                }
            )
            curves[label] = (traj.ks, traj.loss_mean)
        write_constants_table(panel_dir / "constants.csv", const_rows)
        plot_curves(out_dir / f"{panel_name}.png", curves, f"deflation panel: {panel_name}")
    write_metadata(out_dir, meta)


def cmd_bounds(cfg, out_dir: Path) -> None:
    """Run-versus-bound-versus-oracle overlay on one shared iteration grid."""
    model = _model_from(cfg)
    precond = _precond_from(cfg, model)
    constants = constants_for(model, precond)
    seeds = _resolve_seeds(cfg)

    meta = _base_metadata(cfg, "bounds")
    meta["constants"] = {
        "l_hat": constants.l_hat,
        "c_hat": constants.c_hat,
        "k_noise": constants.k_noise,
        "kappa_eff": constants.kappa_eff,
    }

    if cfg["schedule"] == "fixed":
        alpha = cfg["alpha_bar"] if cfg["alpha_bar"] > 0 else 0.5 * admissible_alpha_fixed(constants)
        schedule = FixedSchedule(alpha)
        meta["alpha_bar_used"] = alpha
    elif cfg["schedule"] == "harmonic":
        beta = cfg["beta"] if cfg["beta"] > 0 else 2.0 / (constants.c_hat * constants.mu)
        min_gamma = beta * constants.l_hat * constants.k_g / constants.mu - 1.0
        gamma = cfg["gamma"] if cfg["gamma"] > 0 else max(min_gamma, 1.0)
        schedule = HarmonicSchedule(beta, gamma)
        meta["beta_used"], meta["gamma_used"] = beta, gamma
    else:
        raise ConfigError(f"schedule must be 'fixed' or 'harmonic', got {cfg['schedule']!r}")

    run_cfg = RunConfig(
        iters=cfg["iters"],
        seeds=seeds,
        schedule=schedule,
        record_every=cfg["record_every"],
        init_std=cfg["init_std"],
    )
    traj = run_psgd(model, precond, run_cfg, jobs=cfg["jobs"])
    initial_gap = float(traj.loss_mean[0])

    oracle = None
    if isinstance(schedule, FixedSchedule):
        bound = bound_fixed(constants, schedule.alpha_bar, initial_gap, traj.ks)
        rec = exact_loss_recursion(
            model, precond, schedule.alpha_bar, cfg["init_std"] ** 2, int(traj.ks[-1])
        )
        oracle = rec.gaps[traj.ks - 1]
        meta["oracle_floor"] = rec.floor
    else:
        bound = bound_diminishing(constants, schedule.beta, schedule.gamma, initial_gap, traj.ks)

    write_result_table(out_dir / "bounds.csv", traj.ks, traj.loss_mean, traj.loss_std, bound, oracle)
    curves = {"mean gap": (traj.ks, traj.loss_mean), "bound": (traj.ks, np.asarray(bound))}
    if oracle is not None:
        curves["oracle"] = (traj.ks, oracle)
    plot_curves(out_dir / "bounds.png", curves, f"{cfg['schedule']} schedule vs bound")
    write_metadata(out_dir, meta)


def cmd_basin(cfg, out_dir: Path) -> None:
    """Basin-stability study over a grid of radii and admissible rates."""
    model = _model_from(cfg)
    precond = _precond_from(cfg, model)
    constants = constants_for(model, precond)
    seeds = _resolve_seeds(cfg)

    # Expected initial gap for w_1 ~ N(0, init_std^2 I): tr(H) init_std^2 / 2.
    gap0_expected = 0.5 * cfg["init_std"] ** 2 * float(np.sum(model.hess_eig.eigenvalues))
    r_unit = float(np.sqrt(2.0 * gap0_expected / constants.c_hat))
    radii = cfg["basin_r"] or tuple(f * r_unit for f in cfg["basin_r_factors"])

    rows = []
    detail = []
    for r in radii:
        basin = basin_for_quadratic(constants, r)
        alpha_max = admissible_alpha_local(constants, basin)
        for a_factor in cfg["basin_alpha_factors"]:
            alpha = a_factor * alpha_max
            horizon = suggested_basin_horizon(
                model, precond, alpha, cfg["init_std"] ** 2, cap=cfg["iters"]
            )
            run_cfg = RunConfig(
                iters=horizon,
                seeds=seeds,
                schedule=FixedSchedule(alpha),
                record_every=horizon,
                init_std=cfg["init_std"],
            )
            result = basin_stability_mc(model, precond, basin, run_cfg)
            rows.append((r, alpha, result.stay_fraction, result.bound))
            detail.append(
                {
                    "r": r,
                    "alpha": alpha,
                    "horizon": horizon,
                    "horizon_capped": horizon == cfg["iters"],
                    "stay_fraction": result.stay_fraction,
                    "bound": result.bound,
                    "mean_initial_gap": result.mean_initial_gap,
                    "n_exited": result.n_exited,
                    "r_plus_observed": result.r_plus_observed,
                    "final_gap_stayed": result.final_gap_stayed,
                    "final_gap_all": result.final_gap_all,
                }
            )
    write_basin_table(out_dir / "basin.csv", rows)
    plot_basin(out_dir / "basin.png", rows, "basin stability: Monte Carlo vs bound")
    meta = _base_metadata(cfg, "basin")
    meta["r_unit"] = r_unit
    meta["expected_initial_gap"] = gap0_expected
    meta["horizon_rule"] = "10x iterations to reach 1% above the oracle floor, capped at iters"
    meta["horizon_cap"] = cfg["iters"]
    meta["grid"] = detail
    write_metadata(out_dir, meta)


def cmd_franke(cfg, out_dir: Path) -> None:
    """Two-phase regression benchmark across all six methods."""
    if cfg["activation"] not in ("relu", "tanh"):
        raise ConfigError(f"activation must be relu or tanh, got {cfg['activation']!r}")
    net = Mlp(layer_dims=(2, *cfg["hidden_dims"], 1), activation=cfg["activation"])
    task = FrankeTask(net=net, n_points=cfg["n_points"], noise_var=cfg["noise_var"])
    seeds = _resolve_seeds(cfg)
    cg = CgConfig(max_iters=cfg["cg_iters"], tol=1e-10, damping=cfg["cg_damping"])

    run_cfg = RunConfig(
        iters=cfg["phase2_epochs"],
        seeds=seeds,
        schedule=FixedSchedule(1.0),  # per-method rates live in the OptimizerSpec
        record_every=1,
    )

    lr_of = {m: cfg[f"lr_{m}"] for m in NN_METHODS}
    curves = {}
    time_curves = {}
    meta = _base_metadata(cfg, "franke")
    meta["methods"] = list(NN_METHODS)
    meta["selected_learning_rates"] = lr_of
    meta["learning_rate_grids"] = {m: list(g) for m, g in LR_GRIDS.items()}
    meta["phase1"] = {"optimizer": "adam", "lr": cfg["phase1_lr"], "epochs": cfg["phase1_epochs"]}
    meta["phase2_seeds"] = [s + 1 for s in seeds]

    for method in NN_METHODS:
        spec = OptimizerSpec(name=method, lr=lr_of[method], cg=cg)
        traj = two_phase_run(
            task, cfg["phase1_epochs"], spec, run_cfg, jobs=cfg["jobs"],
            phase1_lr=cfg["phase1_lr"],
        )
        write_result_table(
            out_dir / f"{method}_epochs.csv", traj.ks, traj.loss_mean, traj.loss_std
        )
        write_timing_table(out_dir / f"{method}_time.csv", traj.elapsed_mean, traj.loss_mean)
        curves[method] = (traj.ks, traj.loss_mean)
        time_curves[method] = (traj.elapsed_mean, traj.loss_mean)

    plot_curves(
        out_dir / "franke_epochs.png",
        curves,
        f"Franke regression (phase II at epoch {cfg['phase1_epochs']})",
        xlabel="epoch",
        ylabel="training loss",
    )
    plot_curves(
        out_dir / "franke_time.png",
        time_curves,
        "Franke regression vs wall-clock time",
        xlabel="elapsed seconds (optimizer loop)",
        ylabel="training loss",
    )
    write_metadata(out_dir, meta)


_COMMANDS = {
    "quad-sweep": cmd_quad_sweep,
    "bounds": cmd_bounds,
    "basin": cmd_basin,
    "franke": cmd_franke,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="precondlab",
        description="Preconditioned-SGD laboratory: sweeps, bound checks, basin stability, "
        "and the Franke regression benchmark.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--jobs", type=int, default=None, help="parallel workers across seeds")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.config is not None:
            cfg = load_config(args.config, args.command)
        else:
            cfg = resolve({}, args.command)
        if args.jobs is not None:
            cfg["jobs"] = args.jobs
        out_dir = Path(args.out or cfg["out_dir"] or f"runs/{args.command}")
        write_resolved_config(out_dir, format_config(cfg))
        _COMMANDS[args.command](cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote results to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
