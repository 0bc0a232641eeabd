"""Command-line front end.

Three subcommands are pure printers (coeffs, divergence, bound) and write
CSV or a bare value to standard output. The other four (solve-policy,
gaussfit, train, eval) are run commands: they write their outputs plus a
manifest.json into --out, stay silent on success, exit nonzero with a
one-line diagnostic on failure, and remove partial outputs so an output
directory is either complete or absent. Stochastic commands require
--seed; nothing defaults to wall-clock entropy.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .divergences import (
    chi_n,
    exact_f_divergence,
    f_derivative_at_one,
    g_derivative_at_one,
    parse_family,
    series_coefficient,
    taylor_divergence,
    truncation_bound,
)
from .gaussfit import GaussianModel, fit_sgd, standard_mixture
from .policy import solve_chi2, solve_chi23
from .trainer import (
    TabularPolicy,
    TrainConfig,
    config_from_dict,
    evaluate_policy,
    make_gridworld,
    train,
)

_MANIFEST_SCHEMA_VERSION = 1


def _write_csv(path: Path, header, rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _write_json(path: Path, payload: dict) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _write_manifest(out: Path, command: str, config_path, seed, started: float) -> None:
    _write_json(
        out / "manifest.json",
        {
            "schema_version": _MANIFEST_SCHEMA_VERSION,
            "command": command,
            "config_path": None if config_path is None else str(config_path),
            "seed": seed,
            "output_dir": str(out),
            "tool_version": __version__,
            "duration_seconds": time.monotonic() - started,
        },
    )


def _cleanup(paths) -> None:
    for path in paths:
        path.unlink(missing_ok=True)
        path.with_name(path.name + ".tmp").unlink(missing_ok=True)


def _read_vector(path: str) -> np.ndarray:
    """Flatten every CSV cell in the file to a float vector."""
    cells: list[float] = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            cells.extend(float(cell) for cell in row if cell.strip())
    if not cells:
        raise ValueError(f"{path}: no values")
    return np.array(cells)


def _read_instance(path: str):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"mu", "q"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected a header row with mu and q columns")
        mu: list[float] = []
        q_values: list[float] = []
        for row in reader:
            mu.append(float(row["mu"]))
            q_values.append(float(row["q"]))
    if not mu:
        raise ValueError(f"{path}: no data rows")
    return np.array(mu), np.array(q_values)


def _read_policy_column(path: Path, name: str, n_states: int, n_actions: int) -> np.ndarray:
    column = name + "_prob"
    probs = np.full((n_states, n_actions), np.nan)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValueError(f"{path}: missing column {column}")
        for row in reader:
            s, a = int(row["state"]), int(row["action"])
            if not (0 <= s < n_states and 0 <= a < n_actions):
                raise ValueError(f"{path}: state {s} action {a} out of range")
            probs[s, a] = float(row[column])
    if np.isnan(probs).any():
        raise ValueError(f"{path}: incomplete policy table")
    return probs


def cmd_coeffs(args) -> int:
    family = parse_family(args.family)
    if args.order < 2:
        raise ValueError("order must be at least 2")
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(("n", "g_deriv_at_1", "coefficient"))
    for n in range(2, args.order + 1):
        writer.writerow((n, g_derivative_at_one(family, n), series_coefficient(family, n)))
    return 0


def cmd_divergence(args) -> int:
    family = parse_family(args.family)
    p = _read_vector(args.p)
    q = _read_vector(args.q)
    if args.mode == "exact":
        if args.order is not None:
            raise ValueError("--order only applies to --mode taylor")
        print(repr(exact_f_divergence(family, p, q)))
        return 0
    if args.order is None:
        raise ValueError("--order is required with --mode taylor")
    print(repr(taylor_divergence(family, p, q, args.order)))
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(("n", "contribution"))
    for n in range(2, args.order + 1):
        coeff = f_derivative_at_one(family, n) / math.factorial(n)
        writer.writerow((n, coeff * chi_n(p, q, n)))
    return 0


def cmd_bound(args) -> int:
    family = parse_family(args.family)
    print(repr(truncation_bound(family, args.order, args.eps, args.dataset_size)))
    return 0


def cmd_solve_policy(args) -> int:
    started = time.monotonic()
    if args.method == "chi23":
        if args.family is None:
            raise ValueError("--method chi23 requires --family")
        family = parse_family(args.family)
    elif args.family is not None:
        raise ValueError("--family only applies to --method chi23")
    mu, q_values = _read_instance(args.input)
    if args.method == "chi2":
        solution = solve_chi2(mu, q_values, args.tau)
    else:
        solution = solve_chi23(mu, q_values, args.tau, family)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "solution.csv"
    try:
        _write_csv(
            path,
            ("action", "mu", "q", "prob", "support", "alpha"),
            (
                (i, float(mu[i]), float(q_values[i]), float(solution.probs[i]),
                 int(solution.support_mask[i]), float(solution.alpha))
                for i in range(mu.size)
            ),
        )
    except Exception:
        _cleanup([path])
        raise
    _write_manifest(out, "solve-policy", args.input, None, started)
    return 0


def cmd_gaussfit(args) -> int:
    started = time.monotonic()
    family = parse_family(args.family)
    if args.grid is not None and args.grid < 2:
        raise ValueError("--grid needs at least 2 points")
    target = standard_mixture()
    report = fit_sgd(
        family, target, args.variant, n_loss=args.nloss, steps=args.steps,
        lr=args.lr, batch=args.batch, seed=args.seed, eps=args.eps,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fit_path = out / "fit.csv"
    grid_path = out / "density_grid.csv"
    try:
        _write_csv(
            fit_path,
            ("method", "family", "mu_hat", "sigma_hat", "divergence_value", "steps", "seed"),
            [(report.method, report.family.name, report.mu_hat, report.sigma_hat,
              report.divergence_value, report.steps, report.seed)],
        )
        if args.grid is not None:
            xs = np.linspace(-10.0, 10.0, args.grid)
            model = GaussianModel(report.mu_hat, math.log(report.sigma_hat))
            _write_csv(
                grid_path,
                ("x", "target_pdf", "model_pdf"),
                zip(xs.tolist(), target.pdf(xs).tolist(), model.pdf(xs).tolist()),
            )
    except Exception:
        _cleanup([fit_path, grid_path])
        raise
    _write_manifest(out, "gaussfit", None, args.seed, started)
    return 0


def cmd_train(args) -> int:
    started = time.monotonic()
    if args.config is not None:
        data = json.loads(Path(args.config).read_text())
        config = replace(config_from_dict(data), seed=args.seed)
    else:
        config = TrainConfig(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    produced = [
        out / name
        for name in ("transitions.csv", "learning_curve.csv", "policy_final.csv", "config.json")
    ]
    try:
        train(config, out)
    except Exception:
        _cleanup(produced)
        raise
    _write_manifest(out, "train", args.config, args.seed, started)
    return 0


def cmd_eval(args) -> int:
    started = time.monotonic()
    run = Path(args.run)
    config_path = run / "config.json"
    config = config_from_dict(json.loads(config_path.read_text()))
    mdp = make_gridworld(
        config.grid_size, config.step_reward, config.goal_reward, config.gamma
    )
    probs = _read_policy_column(
        run / "policy_final.csv", args.policy, mdp.n_states, mdp.n_actions
    )
    report = evaluate_policy(mdp, TabularPolicy(probs), args.episodes, args.horizon, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "eval.csv"
    try:
        _write_csv(
            path,
            ("policy", "discounted_mean", "discounted_std",
             "undiscounted_mean", "undiscounted_std", "episodes", "horizon"),
            [(args.policy, report.discounted_mean, report.discounted_std,
              report.undiscounted_mean, report.undiscounted_std,
              report.episodes, report.horizon)],
        )
    except Exception:
        _cleanup([path])
        raise
    _write_manifest(out, "eval", config_path, args.seed, started)
    return 0


def _add_command(sub, name: str, description: str):
    parser = sub.add_parser(name, help=description, description=description, add_help=False)
    parser.add_argument("--help", action="help", help="show this help message and exit")
    return parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sfac",
        description="Symmetric f-divergence regularization toolkit.",
        add_help=False,
    )
    parser.add_argument("--help", action="help", help="show this help message and exit")
    parser.add_argument("--version", action="version", version=f"sfac {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = _add_command(sub, "coeffs", "print series coefficients c_n as CSV on stdout")
    p.add_argument("--family", required=True,
                   help="divergence family name, e.g. jeffreys, jensen_shannon, gan")
    p.add_argument("--order", type=int, required=True,
                   help="highest order n to print, starting from 2")
    p.set_defaults(func=cmd_coeffs)

    p = _add_command(sub, "divergence",
                     "evaluate a divergence between two distributions read from CSV files")
    p.add_argument("--family", required=True, help="divergence family name")
    p.add_argument("--p", required=True, help="CSV file with the first distribution")
    p.add_argument("--q", required=True, help="CSV file with the second distribution")
    p.add_argument("--mode", choices=("exact", "taylor"), required=True,
                   help="exact summation or truncated series")
    p.add_argument("--order", type=int,
                   help="series truncation order (taylor mode only); per-order "
                        "contributions are printed as CSV after the value")
    p.set_defaults(func=cmd_divergence)

    p = _add_command(sub, "bound", "print the worst-case truncation error bound")
    p.add_argument("--family", required=True, help="symmetric divergence family name")
    p.add_argument("--order", type=int, required=True, help="series truncation order N")
    p.add_argument("--eps", type=float, required=True, help="ratio clip radius")
    p.add_argument("--dataset-size", type=int, required=True,
                   help="number of transitions the bound is scaled by")
    p.set_defaults(func=cmd_bound)

    p = _add_command(sub, "solve-policy",
                     "solve one regularized policy instance from a CSV of (mu, q) rows")
    p.add_argument("--input", required=True,
                   help="CSV file with columns mu and q, one row per action")
    p.add_argument("--tau", type=float, required=True, help="regularization strength")
    p.add_argument("--method", choices=("chi2", "chi23"), default="chi2",
                   help="closed-form solver: quadratic or quadratic plus cubic")
    p.add_argument("--family",
                   help="divergence family supplying the cubic weight (chi23 only)")
    p.add_argument("--out", required=True, help="output directory for solution.csv")
    p.set_defaults(func=cmd_solve_policy)

    p = _add_command(sub, "gaussfit",
                     "fit a single Gaussian to the standard bimodal mixture by SGD")
    p.add_argument("--family", default="jensen_shannon", help="divergence family name")
    p.add_argument("--variant", choices=("exact", "expanded"), default="expanded",
                   help="optimize the exact divergence or its clipped series form")
    p.add_argument("--nloss", type=int, default=5, help="series truncation order")
    p.add_argument("--seed", type=int, required=True, help="sampling seed")
    p.add_argument("--steps", type=int, default=1000, help="SGD steps")
    p.add_argument("--lr", type=float, default=0.001, help="SGD learning rate")
    p.add_argument("--batch", type=int, default=128, help="samples per step")
    p.add_argument("--eps", type=float, default=0.3, help="ratio clip radius (expanded)")
    p.add_argument("--grid", type=int,
                   help="also write density_grid.csv with this many points")
    p.add_argument("--out", required=True, help="output directory for fit.csv")
    p.set_defaults(func=cmd_gaussfit)

    p = _add_command(sub, "train", "train the tabular offline actor-critic")
    p.add_argument("--config",
                   help="JSON run config; defaults apply for anything omitted")
    p.add_argument("--seed", type=int, required=True,
                   help="run seed; overrides any seed in --config")
    p.add_argument("--out", required=True, help="output directory for run artifacts")
    p.set_defaults(func=cmd_train)

    p = _add_command(sub, "eval", "re-evaluate a policy table from a finished training run")
    p.add_argument("--run", required=True,
                   help="training output directory holding config.json and policy_final.csv")
    p.add_argument("--policy", choices=("theta", "zeta", "behavior"), default="theta",
                   help="which stored policy column to evaluate")
    p.add_argument("--episodes", type=int, default=200, help="rollout episodes")
    p.add_argument("--horizon", type=int, default=200, help="rollout horizon")
    p.add_argument("--seed", type=int, required=True, help="rollout seed")
    p.add_argument("--out", required=True, help="output directory for eval.csv")
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
