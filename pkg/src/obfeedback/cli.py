"""Command-line experiment runner (``obf``).

Every subcommand writes one table: a provenance line starting with ``#``
followed by CSV, or a JSON object with ``provenance`` and ``records``.
``figures`` writes one such table per figure into a directory.

Settings come from flags, then from a ``key = value`` config file given by
``--config`` (keys are flag names without the leading dashes), then from
the ``OBF_SEED`` environment variable for the seed, then from defaults.

Exit codes: 0 success, 2 usage or parse error, 3 numeric failure,
4 verification-suite failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from contextlib import nullcontext
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, analytic, mc_sim, optimize, policies, schur, verification
from .numerics import BracketError, QuadratureError
from .sinr_models import Rayleigh, SinrModel, db_to_linear, parse_model

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_SUITE = 4

COMMANDS = ("rate", "optimize", "schur-map", "tradeoff", "gap", "figures", "verify")


class UsageError(ValueError):
    """Configuration that cannot be parsed or is inconsistent."""


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------

def parse_grid(text: str) -> np.ndarray:
    """``"a:b:step"`` (inclusive) or a comma-separated list."""
    text = text.strip()
    try:
        if ":" in text:
            parts = [float(v) for v in text.split(":")]
            if len(parts) != 3 or parts[2] <= 0 or parts[1] < parts[0]:
                raise ValueError
            start, stop, step = parts
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return np.round(start + step * np.arange(count), 12)
        values = np.array([float(v) for v in text.split(",") if v.strip()])
        if values.size == 0:
            raise ValueError
        return values
    except ValueError:
        raise UsageError(f"malformed grid {text!r}") from None


def parse_int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
        if not values:
            raise ValueError
        return values
    except ValueError:
        raise UsageError(f"malformed integer list {text!r}") from None


def count(text: str) -> int:
    """Sample counts; accepts ``1e6``."""
    value = float(text)
    if value != int(value) or value < 1:
        raise argparse.ArgumentTypeError(f"not a positive integer: {text!r}")
    return int(value)


def read_config(path: str) -> list[tuple[str, str]]:
    """``key = value`` lines; ``#`` starts a comment."""
    items = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path!r}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise UsageError(f"{path}:{lineno}: empty key")
        items.append((key.replace("_", "-"), value))
    return items


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _config_tokens(items, flags: set[str]) -> list[str]:
    tokens = []
    for key, value in items:
        if key in flags:
            low = value.lower()
            if low in _TRUE:
                tokens.append(f"--{key}")
            elif low not in _FALSE:
                raise UsageError(f"config key {key!r} expects true/false")
        else:
            tokens.extend([f"--{key}", value])
    return tokens


def _rho_values(args, linear_attr: str = "rho", db_attr: str = "rho_db"):
    lin, db = getattr(args, linear_attr), getattr(args, db_attr)
    if (lin is None) == (db is None):
        raise UsageError(f"exactly one of --{linear_attr.replace('_', '-')} or "
                         f"--{db_attr.replace('_', '-')} is required")
    if lin is not None:
        return parse_grid(lin)
    return np.array([db_to_linear(v) for v in parse_grid(db)])


def _model(args) -> SinrModel:
    if args.model is None:
        raise UsageError("--model is required")
    try:
        return parse_model(args.model)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def _cell(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _json_value(value):
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def render(records: list[dict], provenance: dict, fmt: str) -> str:
    """Serialize ``records`` with a provenance header."""
    prov = {"artifact": f"obfeedback {__version__}", **provenance}
    if fmt == "json":
        body = {"provenance": {k: _json_value(v) for k, v in prov.items()},
                "records": [{k: _json_value(v) for k, v in r.items()} for r in records]}
        return json.dumps(body, indent=2) + "\n"
    head = "# " + " | ".join(f"{k}={_cell(v)}" for k, v in prov.items())
    buf = io.StringIO()
    buf.write(head + "\n")
    if records:
        writer = csv.DictWriter(buf, fieldnames=list(records[0]), lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow({k: _cell(v) for k, v in rec.items()})
    return buf.getvalue()


def _emit(text: str, output: str | None):
    if output in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def analytic_sum_rate(model: SinrModel, policy) -> float | None:
    """Closed-form sum-rate when one is available, else ``None``.

    Covers two-user GTFP and homogeneous GTFP on every beam, and MTFP where
    it coincides with GTFP (Rayleigh, all thresholds at least 1, or M = 1).
    """
    if not isinstance(policy, policies.ThresholdPolicy):
        return None
    tau = policy.tau
    if policy.mode is policies.Mode.MTFP and model.M > 1:
        if not (isinstance(model, Rayleigh) and np.all(tau >= 1.0)):
            return None
    if np.all(tau == tau[0]):
        if math.isinf(tau[0]):
            return 0.0
        return model.M * float(analytic.rate_homogeneous(model, policy.n, float(tau[0])))
    if policy.n == 2:
        if np.any(np.isinf(tau)):
            finite = float(tau[np.isfinite(tau)][0])
            return model.M * float(analytic.log_rate_integral(model, model.cdf(finite), 1.0, 1.0))
        return model.M * float(analytic.rate_two_user_beam(model, float(tau[0]), float(tau[1])))
    return None


def cmd_rate(args) -> tuple[list[dict], dict]:
    model = _model(args)
    if args.policy is None:
        raise UsageError("--policy is required")
    try:
        policy = policies.parse_policy(args.policy, model)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    est = mc_sim.estimate_all(model, policy, args.samples, args.seed, args.threads)
    record = {
        "analytic_rate": analytic_sum_rate(model, policy),
        "mc_mean": est["rate"].mean,
        "mc_halfwidth": est["rate"].half_width_95,
        "load": policies.feedback_load(model, policy),
        "mc_load": est["load"].mean,
        "outage": policies.outage_probability(model, policy),
        "mc_outage": est["outage"].mean,
        "samples": args.samples,
    }
    prov = {"command": "rate", "model": model.spec(), "policy": policy.spec(), "seed": args.seed,
            "grid": f"samples={args.samples}"}
    return [record], prov


def _opt_record(res: optimize.OptResult, **extra) -> dict:
    return {**extra, "p1_star": res.p_star[0], "p2_star": res.p_star[1], "rate_star": res.rate_star,
            "rate_homogeneous": res.rate_homogeneous, "gap": res.gap, "ratio": res.ratio}


def cmd_optimize(args) -> tuple[list[dict], dict]:
    model = _model(args)
    res = optimize.optimal_two_user(model, args.lam, args.resolution)
    prov = {"command": "optimize", "model": model.spec(), "policy": "two-user optimum",
            "seed": args.seed, "grid": f"lam={args.lam} resolution={args.resolution}"}
    return [_opt_record(res, lam=args.lam)], prov


def _region_records(cells) -> list[dict]:
    return [{"param": c.param, "rho": c.rho, "theorem5": c.theorem5, "theorem6": c.theorem6,
             "margin5": c.margin5, "margin6": c.margin6} for c in cells]


def cmd_schur_map(args) -> tuple[list[dict], dict]:
    params = parse_grid(args.params)
    rhos = _rho_values(args)
    cells = schur.optimality_region_map(args.family, params, rhos, args.lam, args.q_points)
    prov = {"command": "schur-map", "model": args.family, "policy": "homogeneous", "seed": args.seed,
            "grid": f"params={args.params} rho={args.rho or ''} rho_db={args.rho_db or ''} "
                    f"lam={args.lam} q_points={args.q_points}"}
    return _region_records(cells), prov


def _tradeoff_records(points) -> list[dict]:
    return [{"n": p.n, "lam": p.lam, "rate_threshold": p.rate_threshold, "rate_all": p.rate_all,
             "ratio": p.ratio} for p in points]


def cmd_tradeoff(args) -> tuple[list[dict], dict]:
    model = _model(args)
    ns = parse_int_list(args.n)
    lams = parse_grid(args.lambda_grid)
    points = optimize.tradeoff_curve(model, ns, lams)
    prov = {"command": "tradeoff", "model": model.spec(), "policy": "homogeneous gtfp",
            "seed": args.seed, "grid": f"n={args.n} lambda={args.lambda_grid}"}
    return _tradeoff_records(points), prov


def _gap_records(curve) -> list[dict]:
    return [{"rho_db": p.rho_db, "rho": p.rho, "p2_star": p.p2_star, "rate_star": p.rate_star,
             "rate_homogeneous": p.rate_homogeneous, "gap": p.gap, "ratio": p.ratio} for p in curve]


def cmd_gap(args) -> tuple[list[dict], dict]:
    if (args.rho is None) == (args.rho_db is None):
        raise UsageError("exactly one of --rho or --rho-db is required")
    grid_db = (parse_grid(args.rho_db) if args.rho_db is not None
               else 10.0 * np.log10(parse_grid(args.rho)))
    curve = optimize.optimality_gap_curve(grid_db, args.lam, args.M, args.resolution)
    cross = optimize.crossover_rho_db(curve, args.threshold)
    prov = {"command": "gap", "model": f"rayleigh M={args.M}", "policy": "two-user optimum",
            "seed": args.seed, "grid": f"rho={args.rho or ''} rho_db={args.rho_db or ''} lam={args.lam} "
                                       f"resolution={args.resolution}",
            "crossover_db": cross}
    return _gap_records(curve), prov


# figure grids: (full, quick)
_FIGURE_GRIDS = {
    "sweep_points": (201, 41),
    "gap_db": ("0:20:0.1", "0:20:1"),
    "tradeoff_n": ([10, 150, 300], [10, 150]),
    "tradeoff_lambda": ("0.5:20:0.5", "1:10:1"),
    "nakagami_mu": ("0.5,1,1.5,2,3", "0.5,1,2"),
    "rician_K": ("0,1,2,5,10", "0,2"),
    "region_rho_db": ("-10:10:1", "-6:6:3"),
    "ratio_K": ("0,2,10,50", "0,10"),
    "ratio_rho_db": ("-10:30:10", "0,30"),
    "resolution": (2001, 201),
    "q_points": (201, 41),
}


def figure_tables(quick: bool = False) -> dict[str, tuple[list[dict], dict]]:
    """Data for every figure, keyed by file stem."""
    pick = {k: v[1] if quick else v[0] for k, v in _FIGURE_GRIDS.items()}
    out = {}
    res = pick["resolution"]

    for stem, rho_db in (("fig5a", 0.0), ("fig5b", 10.0)):
        model = Rayleigh(1, db_to_linear(rho_db))
        p2 = np.linspace(0.0, 0.25, pick["sweep_points"])
        rates = analytic.rate_two_user_on_plane(model, 0.5, p2)
        out[stem] = ([{"p2": a, "rate": b} for a, b in zip(p2, rates)],
                     {"figure": stem, "model": model.spec(), "policy": "plane lam=0.5",
                      "grid": f"p2=linspace(0,0.25,{p2.size})"})

    curve = optimize.optimality_gap_curve(parse_grid(pick["gap_db"]), 0.5, 1, res)
    out["fig6_gap"] = (_gap_records(curve),
                       {"figure": "fig6_gap", "model": "rayleigh M=1", "policy": "two-user optimum lam=0.5",
                        "grid": f"rho_db={pick['gap_db']} resolution={res}",
                        "crossover_db": optimize.crossover_rho_db(curve)})
    out["fig10_p2star"] = ([{"rho_db": p.rho_db, "rho": p.rho, "p2_star": p.p2_star} for p in curve],
                           {"figure": "fig10_p2star", "model": "rayleigh M=1",
                            "policy": "two-user optimum lam=0.5",
                            "grid": f"rho_db={pick['gap_db']} resolution={res}"})

    model = Rayleigh(1, 1.0)
    pts = optimize.tradeoff_curve(model, pick["tradeoff_n"], parse_grid(pick["tradeoff_lambda"]))
    out["fig7_tradeoff"] = (_tradeoff_records(pts),
                            {"figure": "fig7_tradeoff", "model": model.spec(), "policy": "homogeneous gtfp",
                             "grid": f"n={pick['tradeoff_n']} lambda={pick['tradeoff_lambda']}"})

    rhos = [db_to_linear(v) for v in parse_grid(pick["region_rho_db"])]
    for stem, family, key in (("fig8_nakagami_region", "nakagami", "nakagami_mu"),
                              ("fig9_rician_region", "rician", "rician_K")):
        cells = schur.optimality_region_map(family, parse_grid(pick[key]), rhos, 0.5, pick["q_points"])
        out[stem] = (_region_records(cells),
                     {"figure": stem, "model": family, "policy": "homogeneous",
                      "grid": f"param={pick[key]} rho_db={pick['region_rho_db']} q_points={pick['q_points']}"})

    ratio_rhos = [db_to_linear(v) for v in parse_grid(pick["ratio_rho_db"])]
    pts = optimize.ratio_homo_vs_opt(parse_grid(pick["ratio_K"]), ratio_rhos, 1.0, res)
    out["fig11_ratio"] = ([{"K": p.K, "rho": p.rho, "rho_db": round(10 * math.log10(p.rho), 9),
                            "p2_star": p.p2_star, "ratio": p.ratio} for p in pts],
                          {"figure": "fig11_ratio", "model": "rician", "policy": "two-user optimum lam=1",
                           "grid": f"K={pick['ratio_K']} rho_db={pick['ratio_rho_db']} resolution={res}",
                           "limit": optimize.limiting_ratio(1.0)})
    return out


def cmd_figures(args) -> int:
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    tables = figure_tables(args.quick)
    suffix = "json" if args.format == "json" else "csv"
    for stem, (records, prov) in tables.items():
        prov = {"command": "figures", **prov, "seed": args.seed}
        (outdir / f"{stem}.{suffix}").write_text(render(records, prov, args.format))
    print(f"wrote {len(tables)} tables to {outdir}")
    return EXIT_OK


def cmd_verify(args) -> int:
    names = args.suite or list(verification.SUITES)
    unknown = [n for n in names if n not in verification.SUITES]
    if unknown:
        raise UsageError(f"unknown suite(s): {', '.join(unknown)}; "
                         f"choose from {', '.join(verification.SUITES)}")
    guard = analytic.inject_derivative_fault() if args.inject_fault else nullcontext()
    with guard:
        results = verification.run_suites(names, args.samples, args.seed, args.threads)
    width = max(len(r.name) for r in results)
    for r in results:
        print(f"{r.suite:<11} {r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"FAILED: {failed[0].name}", file=sys.stderr)
        return EXIT_SUITE
    print("all properties passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file (flags take precedence)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default: $OBF_SEED or 0)")
    common.add_argument("--threads", type=int, default=1, help="worker threads; results do not depend on it")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--output", default=None, help="output file (default: standard output)")

    parser = argparse.ArgumentParser(prog="obf", description="Threshold-feedback beamforming experiments.")
    parser.add_argument("--version", action="version", version=f"obfeedback {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rate", parents=[common], help="analytic and Monte-Carlo rate of a policy")
    p.add_argument("--model")
    p.add_argument("--policy")
    p.add_argument("--samples", type=count, default=10**6)

    p = sub.add_parser("optimize", parents=[common], help="two-user optimal thresholds on a budget plane")
    p.add_argument("--model")
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--resolution", type=int, default=2001)

    p = sub.add_parser("schur-map", parents=[common], help="Schur-concavity region map")
    p.add_argument("--family", choices=("nakagami", "rician"), required=False, default="nakagami")
    p.add_argument("--params", default="0.5,1,2", help="shape mu or K-factor grid")
    p.add_argument("--rho", default=None, help="linear SNR grid")
    p.add_argument("--rho-db", default=None, help="SNR grid in dB")
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--q-points", type=int, default=201)

    p = sub.add_parser("tradeoff", parents=[common], help="rate ratio versus feedback budget")
    p.add_argument("--model")
    p.add_argument("--n", default="10,150,300")
    p.add_argument("--lambda-grid", default="0.5:20:0.5")

    p = sub.add_parser("gap", parents=[common], help="heterogeneous-vs-homogeneous gap versus SNR")
    p.add_argument("--rho", default=None, help="linear SNR grid")
    p.add_argument("--rho-db", default=None, help="SNR grid in dB")
    p.add_argument("--lam", type=float, default=0.5)
    p.add_argument("--M", type=int, default=1)
    p.add_argument("--resolution", type=int, default=2001)
    p.add_argument("--threshold", type=float, default=1e-4)

    p = sub.add_parser("figures", parents=[common], help="write every figure table")
    p.add_argument("--outdir", default="figures")
    p.add_argument("--quick", action="store_true", help="coarse grids for smoke tests")

    p = sub.add_parser("verify", parents=[common], help="run the cross-validation suites")
    p.add_argument("--suite", action="append", help=f"one of {', '.join(verification.SUITES)}; repeatable")
    p.add_argument("--samples", type=count, default=200_000)
    p.add_argument("--inject-fault", action="store_true", help="flip the derivative boundary term")
    return parser


def _store_true_flags(parser: argparse.ArgumentParser, command: str) -> set[str]:
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    return {opt[2:] for act in sub.choices[command]._actions
            if isinstance(act, argparse._StoreTrueAction) for opt in act.option_strings}


def _expand_config(parser, argv: list[str]) -> list[str]:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config is None:
        return argv
    pos = next((i for i, tok in enumerate(argv) if tok in COMMANDS), None)
    if pos is None:
        return argv
    items = [(k, v) for k, v in read_config(known.config) if k not in ("config", "command")]
    tokens = _config_tokens(items, _store_true_flags(parser, argv[pos]))
    return argv[:pos + 1] + tokens + argv[pos + 1:]


def _resolve_seed(args):
    if args.seed is None:
        env = os.environ.get("OBF_SEED")
        if env is not None:
            try:
                args.seed = int(env)
            except ValueError:
                raise UsageError(f"OBF_SEED must be an integer, got {env!r}") from None
        else:
            args.seed = 0
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")


_HANDLERS = {
    "rate": cmd_rate,
    "optimize": cmd_optimize,
    "schur-map": cmd_schur_map,
    "tradeoff": cmd_tradeoff,
    "gap": cmd_gap,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _expand_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
        _resolve_seed(args)
        if args.command == "figures":
            return cmd_figures(args)
        if args.command == "verify":
            return cmd_verify(args)
        records, prov = _HANDLERS[args.command](args)
        _emit(render(records, prov, args.format), args.output)
        return EXIT_OK
    except UsageError as exc:
        print(f"obf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except optimize.NotCertifiedError as exc:
        print(f"obf: refused: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (QuadratureError, BracketError, FloatingPointError) as exc:
        print(f"obf: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"obf: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
