"""Command-line interface: ``regtangent <subcommand> ...``.

Every run writes its outputs plus a ``manifest.json`` into ``--out-dir``.
Exit codes: 0 success, 1 malformed input, 2 numerical failure, 3 non-convergence.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .active import Heuristic, score_candidates
from .cv import SOptConfig, loocv_exact, optimize_s
from .datasets import gapped_data
from .exceptions import ConvergenceWarning, InvalidInputError, NumericalError
from .influence import compute_tangent, gpert, influence_report, regularity_tangent
from .model import (L2, Dataset, IdentityFeatures, Linear, MaskedL2, PolynomialFeatures,
                    Problem, SharedMeanL2)
from .optimize import LissaConfig, TrainConfig, fit_normal_equations, run_adam, run_lissa, run_sgd, run_sgdf

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_NOT_CONVERGED = 0, 1, 2, 3
LISSA_CHECK_TOL = 1e-12


class NotConverged(Exception):
    """Raised to finish a run with exit code 3 after outputs are written."""


# ---------------------------------------------------------------------------
# formats
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    v = float(v)
    if not math.isfinite(v):
        raise NumericalError(f"non-finite value {v!r} in output")
    return format(v, ".17g")


def dumps_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with floats written to 17 significant digits; key order is preserved."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps_json(v, indent, _level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (float, int, np.floating, np.integer)) and not isinstance(v, bool)
               for v in seq):
            return "[" + ", ".join(dumps_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dumps_json(v, indent, _level + 1) for v in seq) \
            + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(obj)
    return json.dumps(str(obj))


def read_csv(path, labeled: bool = True) -> Dataset | np.ndarray:
    """Read ``x,y`` (labeled) or ``x`` (candidates) columns from a headed CSV."""
    try:
        with open(path, newline="", encoding="utf-8-sig") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            need = ["x", "y"] if labeled else ["x"]
            missing = [c for c in need if c not in fields]
            if missing:
                raise InvalidInputError(f"{path}: missing column(s) {', '.join(missing)}")
            rows = list(reader)
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise InvalidInputError(f"{path}: no data rows")
    try:
        x = [float(r["x"]) for r in rows]
        y = [float(r["y"]) for r in rows] if labeled else None
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{path}: non-numeric entry ({exc})") from exc
    if labeled:
        return Dataset(x, y)
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{path}: non-finite input")
    return arr


def write_csv(path: Path, header, columns) -> None:
    cols = [np.asarray(c) for c in columns]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([str(int(v)) if np.issubdtype(type(v), np.integer) else _fmt(v)
                        for v in row])


class Run:
    """Collects outputs of one invocation and writes the manifest."""

    def __init__(self, args, config: dict):
        self.args = args
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.config = config
        self.outputs: list[str] = []
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(str(p))
        return p

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(dumps_json(obj) + "\n", encoding="utf-8")
        return p

    def manifest(self) -> None:
        inputs = [str(v) for k in ("data", "candidates", "test") if (v := getattr(self.args, k, None))]
        m = {
            "subcommand": self.args.command,
            "inputs": inputs,
            "seed": self.args.seed,
            "config": self.config,
            "version": __version__,
            "outputs": self.outputs,
        }
        m.update(self.extra)
        m["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        (self.out_dir / "manifest.json").write_text(dumps_json(m) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# problem construction
# ---------------------------------------------------------------------------


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise InvalidInputError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise InvalidInputError(f"expected comma-separated integers, got {text!r}") from exc


def build_problem(args, data: Dataset) -> Problem:
    fmap = PolynomialFeatures(args.degree) if args.degree is not None else IdentityFeatures(1)
    if args.reg == "l2":
        reg = L2()
    elif args.reg == "masked":
        if not args.mask:
            raise InvalidInputError("--reg masked needs --mask")
        reg = MaskedL2(tuple(_ints(args.mask)))
    else:
        if not args.center:
            raise InvalidInputError("--reg shared-mean needs --center")
        reg = SharedMeanL2(np.array(_floats(args.center)))
    return Problem(data, fmap, reg, args.s)


def _problem_config(args) -> dict:
    return {"degree": args.degree, "reg": args.reg, "mask": args.mask, "center": args.center,
            "s": args.s, "method": args.method, "epochs": args.epochs,
            "step_size": args.step_size}


def fit(args, problem: Problem) -> np.ndarray:
    if args.method == "normal":
        return fit_normal_equations(problem)
    cfg = TrainConfig(optimizer=args.method if args.method == "adam" else "sgd",
                      step_size=args.step_size, epochs=args.epochs, seed=args.seed)
    return (run_adam if args.method == "adam" else run_sgd)(problem, cfg)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fit(args) -> int:
    problem = build_problem(args, read_csv(args.data))
    run = Run(args, _problem_config(args))
    theta = fit(args, problem)
    run.write_json("fit.json", {"theta": theta, "s": problem.s})
    run.manifest()
    print(dumps_json({"theta": theta, "s": problem.s}))
    return EXIT_OK


def cmd_tangent(args) -> int:
    problem = build_problem(args, read_csv(args.data))
    cfg = _problem_config(args) | {"tangent_method": args.tangent_method}
    run = Run(args, cfg)
    theta = fit(args, problem)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        res = compute_tangent(problem, theta, args.tangent_method)
    out = {"theta": theta, "theta_dot": res.theta_dot, "s": problem.s,
           "method": res.method, "converged": res.converged, "residual_norm": res.residual_norm}
    run.write_json("tangent.json", out)
    run.manifest()
    print(dumps_json(out))
    if not res.converged:
        raise NotConverged(f"{res.method} tangent did not converge (residual {res.residual_norm:.3g})")
    return EXIT_OK


def cmd_influence(args) -> int:
    data = read_csv(args.data)
    problem = build_problem(args, data)
    run = Run(args, _problem_config(args))
    theta = fit(args, problem)
    test = None
    if args.test:
        td = read_csv(args.test)
        test = [td.point(i) for i in range(td.n)]
    rep = influence_report(problem, theta, test_points=test, test_set=args.test)
    header = ["index", "x", "y", "i_up_reg", "self_influence"]
    cols = [rep.indices, data.inputs, data.labels, rep.i_up_reg, rep.self_influence]
    if rep.i_up_loss is not None:
        header.append("i_up_loss")
        cols.append(rep.i_up_loss)
    write_csv(run.path("influence.csv"), header, cols)
    run.manifest()
    return EXIT_OK


def cmd_query(args) -> int:
    data = read_csv(args.data)
    problem = build_problem(args, data)
    cand = read_csv(args.candidates, labeled=False)
    run = Run(args, _problem_config(args) | {"heuristic": args.heuristic,
                                             "reference_set": args.reference_set})
    theta = fit(args, problem)
    h = Heuristic(args.heuristic)
    if h.needs_label:
        raise InvalidInputError("SLD_labeled cannot score unlabeled candidates")
    td = regularity_tangent(problem, theta) if h.needs_tangent else None
    ref = _ints(args.reference_set) if args.reference_set else None
    qs = score_candidates(problem, theta, td, cand, h, reference=ref)
    order = qs.ranking
    write_csv(run.path("query.csv"), ["rank", "index", "x", "raw", "normalized"],
              [np.arange(1, len(order) + 1), order, cand[order], qs.raw[order],
               qs.normalized[order]])
    run.manifest()
    return EXIT_OK


def cmd_cv(args) -> int:
    problem = build_problem(args, read_csv(args.data))
    lo, hi = args.bounds
    cfg = SOptConfig(method="grid", bounds=(lo, hi), grid_size=args.grid)
    run = Run(args, _problem_config(args) | {"grid": args.grid, "bounds": [lo, hi]})
    grid = cfg.grid()
    loo = [loocv_exact(problem, s) for s in grid]
    gp = [gpert(problem, s) for s in grid]
    write_csv(run.path("cv.csv"), ["s", "loocv", "gpert"], [grid, loo, gp])
    run.manifest()
    return EXIT_OK


def lissa_sgdf_deviation(problem: Problem, steps: int, step_size: float, seed: int) -> float:
    """Largest relative per-step gap between ``-h`` (LiSSA) and the SGDF tangent."""
    theta = fit_normal_equations(problem)
    rho = np.asarray(problem.regularizer.rho(problem.s, theta), dtype=float)
    embedded = problem.with_regularizer(Linear(rho), s=0.0)
    hs, ds = [], []
    run_lissa(embedded, theta, LissaConfig(rho, step_size, steps, seed),
              callback=lambda t, h: hs.append(h.copy()))
    epochs = -(-steps // problem.n)
    cfg = TrainConfig(step_size=step_size, epochs=epochs, seed=seed, reg_cadence="per_update",
                      track_tangent=True, tol=0.0)
    run_sgdf(embedded, cfg, theta,
             callback=lambda t, d: ds.append(d.tangent.copy()) if t <= steps else None)
    dev = 0.0
    for h, d in zip(hs, ds):
        scale = max(float(np.max(np.abs(d))), 1e-300)
        dev = max(dev, float(np.max(np.abs(-h - d))) / scale)
    return dev


def cmd_lissa_check(args) -> int:
    problem = Problem(gapped_data(args.n, args.seed), PolynomialFeatures(args.degree), L2(), args.s)
    run = Run(args, {"n": args.n, "degree": args.degree, "s": args.s, "steps": args.steps,
                     "step_size": args.step_size})
    dev = lissa_sgdf_deviation(problem, args.steps, args.step_size, args.seed)
    run.write_json("lissa_check.json", {"max_deviation": dev, "tolerance": LISSA_CHECK_TOL})
    run.manifest()
    print(f"max per-step deviation: {dev:.3e}")
    return EXIT_OK if dev <= LISSA_CHECK_TOL else EXIT_NUMERICAL


def repro_curves(seed: int = 42, n: int = 6, degree: int = 5, points: int = 200,
                 high_factor: float = 1.75, fd_rel_step: float = 1e-4) -> dict:
    """Curve data for the gapped polynomial example; see :func:`cmd_repro`."""
    data = gapped_data(n, seed)
    base = Problem(data, PolynomialFeatures(degree), L2(), 0.0)
    s_star, loo = optimize_s(base, SOptConfig(method="golden_section"), "loocv")
    P = base.with_s(s_star)
    theta = fit_normal_equations(P)
    td = regularity_tangent(P, theta)
    xs = np.linspace(0.0, 1.0, points)
    Phi = P.features.design(xs)
    resp = Phi @ theta
    resp_hi = Phi @ fit_normal_equations(base.with_s(high_factor * s_star))
    h = fd_rel_step * s_star
    fd = Phi @ ((fit_normal_equations(base.with_s(s_star + h))
                 - fit_normal_equations(base.with_s(s_star - h))) / (2 * h))
    secant = (resp_hi - resp) / ((high_factor - 1) * s_star)
    rt_sq = (Phi @ td) ** 2
    r = P.X @ theta - P.y
    si_ref = [int(np.argmax(np.abs(r)))]
    heur = {}
    for hname in ("SLD_unlabeled", "SI", "SSI_labeled", "SSI_unlabeled", "STI_labeled",
                  "STI_unlabeled"):
        ref = si_ref if hname == "SI" else None
        heur[hname] = score_candidates(P, theta, td, xs, hname, reference=ref).normalized
    return {"data": data, "s_star": s_star, "loocv": loo, "s_high": high_factor * s_star,
            "theta": theta, "theta_dot": td, "x": xs, "response": resp, "response_high": resp_hi,
            "rt_sq": rt_sq, "fd_sq": fd ** 2, "secant_sq": secant ** 2, "heuristics": heur,
            "si_reference": si_ref}


def cmd_repro(args) -> int:
    run = Run(args, {"n": 6, "degree": 5, "points": args.points, "high_factor": 1.75,
                     "fd_rel_step": 1e-4, "s_search": "loocv grid+golden on [1e-3, 1e1]"})
    c = repro_curves(args.seed, points=args.points)
    x = c["x"]
    write_csv(run.path("response_s_star.csv"), ["x", "response"], [x, c["response"]])
    write_csv(run.path("response_s_high.csv"), ["x", "response"], [x, c["response_high"]])
    write_csv(run.path("rt_squared.csv"), ["x", "rt_squared"], [x, c["rt_sq"]])
    write_csv(run.path("fd_squared.csv"), ["x", "fd_squared", "secant_squared"],
              [x, c["fd_sq"], c["secant_sq"]])
    names = list(c["heuristics"])
    write_csv(run.path("heuristics.csv"), ["x"] + names, [x] + [c["heuristics"][k] for k in names])
    run.extra = {"dataset": {"x": c["data"].inputs, "y": c["data"].labels},
                 "s_star": c["s_star"], "s_high": c["s_high"], "loocv_at_s_star": c["loocv"],
                 "si_reference": c["si_reference"]}
    run.manifest()
    print(f"s* = {c['s_star']:.6g}; wrote {len(run.outputs)} files to {run.out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")


def _model_args(p, data=True):
    if data:
        p.add_argument("data", help="CSV with header and columns x,y")
    p.add_argument("--degree", type=int, default=None,
                   help="polynomial degree (identity features when omitted)")
    p.add_argument("--reg", choices=["l2", "masked", "shared-mean"], default="l2")
    p.add_argument("--mask", default=None, help="comma-separated indices for --reg masked")
    p.add_argument("--center", default=None, help="comma-separated center for --reg shared-mean")
    p.add_argument("--s", type=float, default=0.05)
    p.add_argument("--method", choices=["normal", "sgd", "adam"], default="normal")
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--step-size", type=float, default=1e-3)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regtangent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="train and write theta as JSON")
    _model_args(p); _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tangent", help="write theta and the regularity tangent as JSON")
    _model_args(p); _common(p)
    p.add_argument("--tangent-method", choices=["direct", "cg", "sgdf"], default="direct")
    p.set_defaults(func=cmd_tangent)

    p = sub.add_parser("influence", help="per-point influence values as CSV")
    _model_args(p); _common(p)
    p.add_argument("--test", default=None, help="CSV of test points for i_up_loss")
    p.set_defaults(func=cmd_influence)

    p = sub.add_parser("query", help="rank candidate inputs by a query heuristic")
    _model_args(p); _common(p)
    p.add_argument("--candidates", required=True, help="CSV with header and column x")
    p.add_argument("--heuristic", choices=[h.value for h in Heuristic if not h.needs_label],
                   default="SLD_unlabeled")
    p.add_argument("--reference-set", default=None,
                   help="comma-separated training indices (default: all)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("cv", help="leave-one-out and perturbative errors over a log grid")
    _model_args(p); _common(p)
    p.add_argument("--grid", type=int, default=20)
    p.add_argument("--bounds", type=float, nargs=2, default=[1e-3, 1e1], metavar=("LO", "HI"))
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("lissa-check", help="compare LiSSA and SGDF tangent iterates")
    _common(p)
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--degree", type=int, default=5)
    p.add_argument("--s", type=float, default=0.05)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--step-size", type=float, default=1e-3)
    p.set_defaults(func=cmd_lissa_check)

    p = sub.add_parser("repro", help="curve data for the gapped six-point example")
    _common(p)
    p.add_argument("--points", type=int, default=200)
    p.set_defaults(func=cmd_repro, seed=42)
    return parser


def run_cli(argv=None) -> int:
    """Parse ``argv`` and run a subcommand; returns the exit code."""
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except NotConverged as exc:
        print(f"regtangent: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except InvalidInputError as exc:
        print(f"regtangent: invalid input: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"regtangent: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    sys.exit(run_cli())
