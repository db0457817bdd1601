"""Command-line front end: ``levyfluid {analyze,simulate,verify}``.

Exit codes: 0 success, 1 failed checks, 2 configuration or usage errors.
Every output file starts with (or, for JSON, contains) the config hash and
the master seed.
"""

from __future__ import annotations

import argparse
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .analytics import BreakdownEmbedding, moments_as_printed, pk_lst, steady_state_lst, steady_state_summary
from .config import ConfigError, load_config
from .levy_core import NumericsError, UnstableModelError
from .queue_sim import breakdown_pairs, make_rng, simulate_path, stationary_samples, write_samples_csv
from .transforms import EULER_M, LstCurve, clamp_cdf, invert_lst_to_cdf
from .validation import BUDGETS, format_table, reports_to_json, run_verification_suite

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_CONFIG = 2

# fixed stream indices so each output is reproducible on its own
STREAM_EMBEDDING = 1
STREAM_PATH = 2
STREAM_SAMPLES = 3

BUNDLED = ("config_a.yaml", "config_b.yaml", "config_c.yaml")


def bundled_config_paths():
    root = resources.files("levyfluid") / "configs"
    return [Path(str(root / name)) for name in BUNDLED]


def _out_dir(cfg, args):
    out = Path(args.out) if args.out else Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _embedding(cfg):
    model = cfg.model
    if model.is_reflected or model.p == 0:
        return None
    if cfg.run.embedding == "poisson":
        return BreakdownEmbedding.poisson_stationary(model)
    if cfg.run.samples < 2:
        raise ConfigError(f"{cfg.source}: run.samples must be >= 2 to estimate the breakdown embedding")
    rng = make_rng(cfg.run.seed, STREAM_EMBEDDING)
    wm, wp = breakdown_pairs(model, cfg.run.samples, rng, warmup=cfg.run.warmup)
    return BreakdownEmbedding.from_samples(wm, wp)


def _default_x_grid(mean, variance):
    upper = mean + 6.0 * math.sqrt(variance)
    return np.linspace(0.0, upper, 65)[1:]


def cmd_analyze(cfg, args):
    out = _out_dir(cfg, args)
    model = cfg.model
    emb = _embedding(cfg)
    summary = steady_state_summary(model, emb, grid=cfg.run.theta_grid)
    header = cfg.header()
    formats = cfg.output.formats
    if "json" in formats:
        (out / "summary.json").write_text(summary.to_json(cfg.config_hash, cfg.run.seed), encoding="utf-8")
    if "csv" in formats:
        summary.lst.write_csv(out / "lst.csv", header=header)
        if model.is_reflected:

            def lst(s):
                return pk_lst(model.net, s)

        else:

            def lst(s):
                return steady_state_lst(model, emb, s)

        x = np.asarray(cfg.run.x_grid) if cfg.run.x_grid else _default_x_grid(summary.mean, summary.variance)
        cdf = clamp_cdf(invert_lst_to_cdf(lst, x))
        LstCurve(x, cdf, np.zeros_like(cdf), f"inverted (Euler, M={EULER_M})").write_csv(
            out / "cdf.csv", header=header, column="x"
        )
    printed = moments_as_printed(model, emb)[1]
    print(f"# {header}")
    print(f"p = {summary.p:.6g}  lambda_R = {summary.lambda_R:.6g}  lambda_V = {summary.lambda_V:.6g}")
    print(f"mean = {summary.mean:.6g}  variance = {summary.variance:.6g}  (as printed: {printed:.6g})")
    print(f"busy_mean = {summary.busy_mean:.6g}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_simulate(cfg, args):
    out = _out_dir(cfg, args)
    model = cfg.model
    run = cfg.run
    header = cfg.header()
    path = simulate_path(model, run.horizon, run.theta_grid, make_rng(run.seed, STREAM_PATH))
    if "csv" in cfg.output.formats:
        path.write_csv(out / "events.csv", header=header)
    print(f"# {header}")
    print(f"horizon = {run.horizon:g}  events = {path.event_time.size}")
    print(f"breakdowns = {path.n_breakdowns}  vacations = {path.n_vacations}  final W = {path.final_workload:.6g}")
    if run.samples > 0:
        samples = stationary_samples(
            model, run.samples, make_rng(run.seed, STREAM_SAMPLES), warmup=run.warmup, spacing=run.spacing
        )
        if "csv" in cfg.output.formats:
            write_samples_csv(out / "samples.csv", np.asarray(samples), header=header)
        values = np.asarray(samples)
        print(
            f"stationary samples = {values.size}  mean = {values.mean():.6g}  variance = {values.var(ddof=1):.6g}"
            f"  lag autocorrelation = {samples.autocorrelation:.3g}"
        )
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_verify(cfg, args):
    out = _out_dir(cfg, args)
    budget = args.budget or cfg.run.budget
    reports = run_verification_suite(cfg.model, budget, seed=cfg.run.seed, perturb=args.perturb)
    header = cfg.header()
    table = format_table(reports)
    if "json" in cfg.output.formats:
        (out / "report.json").write_text(reports_to_json(reports, cfg.config_hash, cfg.run.seed), encoding="utf-8")
    if "txt" in cfg.output.formats:
        (out / "report.txt").write_text(f"# {header} budget={budget}\n{table}\n", encoding="utf-8")
    print(f"# {cfg.source} {header} budget={budget}")
    print(table)
    failed = sum(not r.passed for r in reports)
    return EXIT_CHECKS_FAILED if failed else EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "verify": cmd_verify}


def build_parser():
    parser = argparse.ArgumentParser(prog="levyfluid", description="Levy-driven fluid queue with breakdowns and vacations.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("analyze", "closed-form steady-state summary, LST and CDF"),
        ("simulate", "simulate a path and stationary samples"),
        ("verify", "run the theory-versus-simulation suite"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
        p.add_argument("--out", help="output directory (overrides output.directory)")
        if name == "verify":
            p.add_argument("--budget", choices=sorted(BUDGETS), help="simulation budget (overrides run.budget)")
            p.add_argument("--perturb", action="store_true", help="perturb every theory value; all checks should fail")
            p.add_argument("--bundled", action="store_true", help="run the three bundled reference configs")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    bundled = getattr(args, "bundled", False)
    if bundled and args.config:
        parser.error("--bundled and --config are mutually exclusive")
    if not bundled and not args.config:
        parser.error("--config is required")
    paths = bundled_config_paths() if bundled else [Path(args.config)]
    try:
        configs = [load_config(p) for p in paths]
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.seed is not None:
        if args.seed < 0:
            print("error: --seed must be >= 0", file=sys.stderr)
            return EXIT_CONFIG
        configs = [c.with_seed(args.seed) for c in configs]
    status = EXIT_OK
    for cfg in configs:
        if bundled:
            base = Path(args.out) if args.out else Path("out")
            args_one = argparse.Namespace(**{**vars(args), "out": str(base / Path(cfg.source).stem)})
        else:
            args_one = args
        try:
            status = max(status, COMMANDS[args.command](cfg, args_one))
        except (ConfigError, UnstableModelError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except NumericsError as exc:
            print(f"numerical error: {exc}", file=sys.stderr)
            return EXIT_CHECKS_FAILED
    return status


if __name__ == "__main__":
    sys.exit(main())
