"""Command-line batch runner: ``npga run | validate | bounds | compare``.

Exit codes: 0 ok, 1 runtime failure, 2 configuration error, 3 assumption failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from npga import oracle, theory
from npga.config import ConfigError, ExperimentConfig, comparable_key, load_config, resolve
from npga.graph import Graph, connected_erdos_renyi, mixing_matrix_laplacian
from npga.schemes import AssumptionReport, build_scheme, canonical_name, check_assumptions, needs_lazy
from npga.solver import AssumptionError, run

log = logging.getLogger("npga")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG, EXIT_ASSUMPTION = 0, 1, 2, 3


def _write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _execute(cfg: ExperimentConfig, force=False, timing=False):
    res = resolve(cfg, force=force)
    for note in res.notes:
        log.warning(note)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = oracle.centralized_pga(res.problem)
    trace = run(res.problem, res.scheme, res.steps, engine=cfg.engine, max_iters=cfg.max_iters,
                stop=cfg.stop, oracle_solution=(sol.x_star, sol.lambda_star), force=force,
                timing=timing)
    if res.certificate is not None:
        trace.certificate = res.certificate.to_dict()
    return res, trace


# -- run ---------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    res, trace = _execute(cfg, force=args.force, timing=args.timing)
    out = Path(args.out)
    _write_atomic(out / cfg.output.trace, trace.to_csv())
    _write_atomic(out / cfg.output.summary, trace.summary_json())
    if res.certificate is not None:
        _write_atomic(out / cfg.output.certificate, res.certificate.to_json() + "\n")
    last = trace.records[-1]
    case = res.certificate.case if res.certificate is not None else "uncertified"
    print(f"{trace.scheme} [{case}] status={trace.status} iterations={last.k} "
          f"comm_rounds={last.comm_rounds} final_gap={last.gap:.6e}")
    if trace.status == "diverged":
        _err(trace.message)
        return EXIT_RUNTIME
    return EXIT_OK


# -- validate ----------------------------------------------------------------


def _report_table(label, report: AssumptionReport) -> str:
    lines = [f"scheme {label}", f"{'check':8s} {'result':6s} {'witness':>14s}  condition"]
    for name in AssumptionReport.NAMES:
        c = getattr(report, name)
        lines.append(f"{name:8s} {'pass' if c.passed else 'FAIL':6s} {c.witness:14.6e}  {c.detail}")
    lines.append(f"{'a4':8s} {'pass' if report.a4 else 'FAIL':6s}")
    return "\n".join(lines)


def cmd_validate(args) -> int:
    try:
        name = canonical_name(args.scheme)
    except ValueError as exc:
        raise ConfigError("--scheme", str(exc)) from None
    if args.edgelist:
        try:
            g = Graph.load(args.edgelist)
        except (OSError, ValueError) as exc:
            raise ConfigError("--edgelist", str(exc)) from None
    else:
        g, _ = connected_erdos_renyi(args.n, args.prob, args.seed)
    W = mixing_matrix_laplacian(g, args.mix_c)
    lazy = needs_lazy(name) if args.lazy == "auto" else args.lazy == "on"
    if canonical_name(name) == "NPGA-DLM" and args.beta is None:
        raise ConfigError("--beta", "NPGA-DLM depends on the dual step size; pass --beta")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scheme = build_scheme(name, W, args.c_param, beta=args.beta, lazy=lazy)
    report = check_assumptions(scheme, tol=args.tol)
    suffix = f" (c={scheme.c_param})" if scheme.c_param is not None else ""
    print(_report_table(scheme.label + suffix + (" lazy" if lazy else ""), report))
    required = [r.strip().lower() for r in args.require.split(",") if r.strip()]
    unknown = [r for r in required if r != "a4" and r not in AssumptionReport.NAMES]
    if unknown:
        raise ConfigError("--require", f"unknown assumption(s) {unknown}")
    failing = report.failing(required)
    if args.json:
        print(json.dumps({"scheme": scheme.label, "c_param": scheme.c_param, "lazy": lazy,
                          "checks": report.as_dict(), "failing": failing}, sort_keys=True))
    if failing:
        print(f"required assumptions failing: {', '.join(failing)}")
        return EXIT_ASSUMPTION
    return EXIT_OK


# -- bounds ------------------------------------------------------------------


def _fmt_bound(name, b):
    if b is None:
        return f"{name} depends on (alpha, beta)"
    return f"{name} {'<' if b.strict else '<='} {b.value:.6e}"


def cmd_bounds(args) -> int:
    cfg = load_config(args.config, seed=args.seed)
    res = resolve(cfg, force=True)
    problem, scheme = res.problem, res.scheme
    cases = [theory._case(args.case)] if args.case else theory.applicable_cases(problem, scheme)
    if args.case:
        thetas = args.theta or [None]
        for th in thetas:
            t = scheme.pinned.get("theta", theory.DEFAULT_THETA[cases[0]] if th is None else th)
            bad = theory.case_failures(cases[0], problem, scheme, t)
            if bad:
                raise AssumptionError(bad[0][0], f"{cases[0]}: {bad[0][1]}")
    if not cases:
        print(f"no certified regime applies to {scheme.label}")
        return EXIT_ASSUMPTION
    out = []
    for case in cases:
        for th in args.theta or [None]:
            pinned = scheme.pinned.get("theta")
            if th is None:
                th = pinned if pinned is not None else (
                    theory.DEFAULT_THETA[case] if cfg.theta is None else cfg.theta)
            elif pinned is not None and th != pinned:
                print(f"{case}: {scheme.label} pins theta={pinned:g}; skipping theta={th:g}")
                continue
            if theory.case_failures(case, problem, scheme, th):
                print(f"{case}: not applicable at theta={th}")
                continue
            steps = theory.suggest_steps(case, problem, scheme, theta=th, safety=cfg.safety,
                                         smooth_modulus=cfg.smooth_modulus)
            if args.steps == "config" and cfg.auto_case is None and not isinstance(cfg.steps, str):
                steps = res.steps
            cert = theory.step_bounds(case, problem, scheme, theta=th, alpha=steps.alpha,
                                      beta=steps.beta, smooth_modulus=cfg.smooth_modulus)
            print(f"{scheme.label} {case} theta={th:g}")
            print("  " + _fmt_bound("alpha", cert.alpha_max))
            print("  " + _fmt_bound("beta ", cert.beta_max))
            print("  " + _fmt_bound("gamma", cert.gamma_max) + "  (at the steps below)")
            print(f"  steps alpha={steps.alpha:.6e} beta={steps.beta:.6e} "
                  f"gamma={steps.gamma:.6e}")
            try:
                full = theory.rate(case, problem, scheme, steps, smooth_modulus=cfg.smooth_modulus)
                print(f"  delta={full.delta:.10f} (delta1={full.delta1:.6g}, "
                      f"delta2={full.delta2:.6g}, delta3={full.delta3:.6g})")
                out.append(full.to_dict())
            except ValueError as exc:
                print(f"  no certificate: {exc}")
    if args.json:
        _write_atomic(Path(args.json), json.dumps(out, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- compare -----------------------------------------------------------------


def compare_traces(labels, traces, threshold=1e-6) -> tuple[str, dict]:
    """Merged CSV (rows keyed by iteration, per-label comm rounds and gap) and report."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["iter"]
    for lab in labels:
        header += [f"{lab}:comm_rounds", f"{lab}:gap"]
    w.writerow(header)
    rows = max(len(t) for t in traces)
    for k in range(rows):
        row = [str(k)]
        for t in traces:
            if k < len(t):
                r = t.records[k]
                row += [str(r.comm_rounds), repr(float(r.gap))]
            else:
                row += ["", ""]
        w.writerow(row)
    report = {"threshold": threshold, "runs": {}}
    for lab, t in zip(labels, traces):
        it = t.iterations_to(threshold)
        report["runs"][lab] = {
            "status": t.status,
            "iterations_to_threshold": it,
            "comm_rounds_to_threshold": None if it is None else t.records[it].comm_rounds,
            "final_gap": t.final_gap,
            "certificate_case": (t.certificate or {}).get("case"),
            "steps": t.steps.as_dict() if t.steps else None,
        }
    reached = {lab: v["iterations_to_threshold"] for lab, v in report["runs"].items()
               if v["iterations_to_threshold"] is not None}
    report["fastest_by_iterations"] = min(reached, key=reached.get) if reached else None
    return buf.getvalue(), report


def cmd_compare(args) -> int:
    cfgs = [load_config(p, seed=args.seed) for p in args.configs]
    keys = {comparable_key(c) for c in cfgs}
    if len(keys) > 1:
        raise ConfigError("configs", "problem/graph specifications differ across configs")
    labels, traces = [], []
    for path, cfg in zip(args.configs, cfgs):
        res, trace = _execute(cfg, force=args.force, timing=False)
        lab = trace.scheme
        if lab in labels:
            lab = f"{lab}#{len(labels)}"
        labels.append(lab)
        traces.append(trace)
    merged, report = compare_traces(labels, traces, args.threshold)
    out = Path(args.out)
    _write_atomic(out / "compare.csv", merged)
    _write_atomic(out / "compare_report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"{'run':24s} {'iters':>8s} {'rounds':>8s} {'final gap':>12s}")
    for lab in labels:
        r = report["runs"][lab]
        it = r["iterations_to_threshold"]
        cr = r["comm_rounds_to_threshold"]
        print(f"{lab:24s} {('-' if it is None else it):>8} {('-' if cr is None else cr):>8} "
              f"{r['final_gap']:12.4e}")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="npga", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="solve one configured experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true", help="run despite failing assumptions")
    p.add_argument("--timing", action="store_true",
                   help="record wall-clock ms per iteration (output no longer byte-reproducible)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate", help="check the structural assumptions of a scheme")
    p.add_argument("--scheme", required=True)
    p.add_argument("--c-param", type=float)
    p.add_argument("--beta", type=float, help="dual step (needed by NPGA-DLM)")
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--prob", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mix-c", type=float, default=1.0)
    p.add_argument("--edgelist")
    p.add_argument("--lazy", choices=("auto", "on", "off"), default="auto")
    p.add_argument("--require", default="a4",
                   help="comma-separated checks that must pass (a4, a4_i..a4_iv, a6, a7, a9)")
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bounds", help="print step-size boxes and certified rates")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--case")
    p.add_argument("--theta", type=float, nargs="+")
    p.add_argument("--steps", choices=("suggest", "config"), default="suggest")
    p.add_argument("--json")
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("compare", help="run several configs on one problem and merge traces")
    p.add_argument("configs", nargs="+")
    p.add_argument("--out", default=".")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.add_argument("--threshold", type=float, default=1e-6)
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    np.seterr(over="ignore", invalid="ignore")
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    except AssumptionError as exc:
        _err(str(exc))
        return EXIT_ASSUMPTION
    except (FloatingPointError, RuntimeError, ValueError, OSError) as exc:
        _err(str(exc))
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
