"""Command line entry point: ``hilbert-tikhonov <subcommand> ...``.

Exit codes: 0 on success or passing rate check, 2 when a rate or contrast
check fails, 1 on any error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics, harness
from .estimator import lambda_apriori, parameter_condition, tikhonov_solve
from .harness import ExperimentConfig
from .noise import NoiseModel, certify_bernstein
from .operators import ForwardOp
from .rkhs import KernelView, classify_decay, effective_dimension, kappa_sq
from .testbed import TestbedSpec

logger = logging.getLogger("hilbert_tikhonov")

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def parse_lambda_grid(text: str) -> np.ndarray:
    """``lo:hi:logK`` gives K log-spaced values, ``lo:hi:K`` K linear ones, else a comma list."""
    m = re.fullmatch(r"\s*([^:]+):([^:]+):(log)?(\d+)\s*", text)
    if m:
        lo, hi, count = float(m.group(1)), float(m.group(2)), int(m.group(4))
        if not (0 < lo < hi) or count < 2:
            raise ValueError(f"bad lambda grid {text!r}")
        if m.group(3):
            return np.logspace(np.log10(lo), np.log10(hi), count)
        return np.linspace(lo, hi, count)
    return np.array([float(v) for v in text.split(",")])


def _load_json(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _resolve(out: str | None, out_dir: str | None, default: str) -> Path:
    path = Path(out or default)
    return path if path.is_absolute() or out_dir is None else Path(out_dir) / path


def _experiment(args) -> ExperimentConfig:
    data = _load_json(args.config)
    cfg = ExperimentConfig.from_dict(data)
    overrides = {}
    if args.seed is not None:
        overrides["root_seed"] = args.seed
    if getattr(args, "trials_per_m", None) is not None:
        overrides["trials_per_m"] = args.trials_per_m
    if getattr(args, "rule", None) is not None:
        overrides["rule"] = args.rule
    return replace(cfg, **overrides) if overrides else cfg


# -- subcommands ----------------------------------------------------------------


def cmd_effdim(args) -> int:
    spec_data = _load_json(args.spec) if args.spec else _load_json(args.config).get("testbed", {})
    spec = TestbedSpec.from_dict(spec_data)
    grid = parse_lambda_grid(args.lambda_grid)
    kv = KernelView(spec)
    k2 = kappa_sq(kv)[0]
    n_eff = np.array([effective_dimension(spec.mu, lam) for lam in grid])
    try:
        fit = classify_decay(spec.mu, grid)
        fitted = fit.predict(grid)
        regime = fit.regime
    except ValueError as exc:
        logger.warning("decay fit skipped: %s", exc)
        fitted, regime = np.full_like(grid, np.nan), "neither"
    path = _resolve(args.out, args.out_dir, "effdim.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["lambda", "n_eff", "trivial_bound", "regime_fit"])
        for lam, n, fv in zip(grid, n_eff, fitted):
            writer.writerow([repr(float(lam)), repr(float(n)), repr(k2 / float(lam)), repr(float(fv))])
    print(f"regime={regime} rows={len(grid)} -> {path}")
    return EXIT_OK


def cmd_solve(args) -> int:
    base = _load_json(args.config)
    spec = TestbedSpec.from_dict(_load_json(args.testbed) if args.testbed else base.get("testbed", {}))
    op_data = _load_json(args.op) if args.op else dict(base.get("op", {}))
    if args.p is not None:
        op_data["p"] = args.p
    noise = NoiseModel.from_dict(_load_json(args.noise) if args.noise else base.get("noise", {}))
    p = float(op_data.get("p", 1.0))
    q = args.q if args.q is not None else float(base.get("q", 2.0))
    b = args.b if args.b is not None else base.get("b", 0.5)
    rule = args.rule or base.get("rule", "poly")
    seed = args.seed if args.seed is not None else int(base.get("root_seed", 0))

    f_rho = harness.make_truth(spec, q, int(base.get("truth_seed", 0)))
    op = ForwardOp.from_dict(spec, op_data).with_center(f_rho)
    rng = np.random.default_rng(seed)
    sample = harness.draw_sample(op, noise, f_rho, args.m, rng)
    lam = lambda_apriori(rule, p, q, args.m, mu=spec.mu, b=b)
    res = tikhonov_solve(op, sample, np.zeros(spec.n), lam, rng=rng)
    payload = {
        "m": args.m,
        "rule": rule,
        "lambda": lam,
        "condition_holds": parameter_condition(lam, args.m, spec.mu).holds,
        "error_H": float(np.linalg.norm(res.f_hat - f_rho)),
        "converged": res.converged,
        "iterations": res.iterations,
        "objective": res.objective,
        "f_hat": res.f_hat.tolist(),
    }
    path = _resolve(args.out, args.out_dir, "solve.json")
    _write_json(path, payload)
    print(f"lambda={lam:.6g} error_H={payload['error_H']:.6g} converged={res.converged} -> {path}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = _experiment(args)
    seed = cfg.root_seed
    if not certify_bernstein(cfg.noise).holds:
        logger.warning("stored (M, Sigma) pair does not satisfy the moment condition")
    f_rho = cfg.truth()
    op = cfg.forward_op(center=f_rho)
    rep = diagnostics.concentration_study(op, cfg.noise, f_rho, args.m, args.lam, args.trials, args.eta, seed)
    path = _resolve(args.out, args.out_dir, "diag.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = ("theta_z", "psi_x", "gamma_x", "psi_hs")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["trial", *keys])
        cols = [rep.theta_z, rep.psi_x, rep.gamma_x, rep.psi_hs]
        for i in range(len(rep.theta_z)):
            writer.writerow([i] + [repr(float(c[i])) for c in cols])
        writer.writerow(["quantile"] + [repr(rep.quantiles[k]) for k in keys])
        writer.writerow(["bound"] + [repr(rep.bounds[k]) if k in rep.bounds else "" for k in keys])
    for key in ("theta_z", "psi_hs"):
        verdict = "ok" if rep.passes[key] else "EXCEEDED"
        print(f"{key}: quantile={rep.quantiles[key]:.4g} bound={rep.bounds[key]:.4g} {verdict}")
    print(f"condition_holds={rep.condition_holds} -> {path}")
    return EXIT_OK if rep.check("theta_z", "psi_hs") else EXIT_FAIL


def cmd_rates(args) -> int:
    cfg = _experiment(args)
    report = harness.run_rate_study(cfg, workers=args.threads)
    out_dir = Path(args.out_dir or ".")
    harness.emit_report(report, out_dir)
    _write_json(out_dir / "rates.json", report.summary())
    print(
        f"rule={cfg.rule} fitted={report.fitted_slope:.4f}±{report.slope_stderr:.4f} "
        f"theoretical={report.theoretical:.4f} passed={report.passed} reliable={report.reliable}"
    )
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_saturation(args) -> int:
    cfg = _experiment(args)
    out_dir = Path(args.out_dir or ".")
    seeds = args.seeds if args.seeds else [cfg.root_seed]
    rows, ok = [], True
    for seed in seeds:
        rep = harness.saturation_contrast(replace(cfg, root_seed=seed), workers=args.threads)
        harness.emit_report(rep.hilbert, out_dir, stem=f"rates_hilbert_seed{seed}")
        harness.emit_report(rep.standard, out_dir, stem=f"rates_identity_seed{seed}")
        rows.append({"seed": seed, "hilbert": rep.hilbert.fitted_slope, "identity": rep.standard.fitted_slope, "passed": rep.passed})
        ok &= rep.passed
        print(f"seed={seed} hilbert={rep.hilbert.fitted_slope:.4f} identity={rep.standard.fitted_slope:.4f} passed={rep.passed}")
    _write_json(out_dir / "saturation.json", {"seeds": rows, "passed": ok})
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON (union of testbed, op, noise and study fields)")
    common.add_argument("--seed", type=int, help="root seed")
    common.add_argument("--out-dir", help="directory for outputs")
    common.add_argument("--threads", type=int, default=1, help="worker processes for trials")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="hilbert-tikhonov", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("effdim", parents=[common], help="effective dimension table and decay regime")
    p.add_argument("--spec", help="testbed JSON")
    p.add_argument("--lambda-grid", default="1e-5:1e-1:log20")
    p.add_argument("--out")
    p.set_defaults(func=cmd_effdim)

    p = sub.add_parser("solve", parents=[common], help="one sample, one solve")
    p.add_argument("--testbed")
    p.add_argument("--op")
    p.add_argument("--noise")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--rule", choices=("theta_general", "trivial", "poly", "log"))
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("diagnose", parents=[common], help="concentration quantiles against their bounds")
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--m", type=int, default=1000)
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("rates", parents=[common], help="Monte Carlo rate study")
    p.add_argument("--rule", choices=("theta_general", "trivial", "poly", "log"))
    p.add_argument("--trials-per-m", type=int)
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("saturation", parents=[common], help="Hilbert-scale versus identity penalty")
    p.add_argument("--rule", choices=("theta_general", "trivial", "poly", "log"))
    p.add_argument("--trials-per-m", type=int)
    p.add_argument("--seeds", type=int, nargs="+")
    p.set_defaults(func=cmd_saturation)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # any failure maps to exit code 1
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
