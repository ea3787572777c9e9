"""Command-line harness: run certified solves, list methods, compare runs.

Exit codes: 0 all checks passed, 1 certificate failure with enforcement on,
2 divergence, 3 configuration error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics, methods, problems
from .engine import CertificateError, DivergenceError, StoppingRule
from .methods import StepSizeError
from .operators import EvalCounter


class ConfigError(ValueError):
    pass


EXIT_OK = 0
EXIT_CERTIFICATE = 1
EXIT_DIVERGED = 2
EXIT_CONFIG = 3


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read JSON document {path}: {exc}") from exc


def _build_problem(block, seed_override=None):
    if not isinstance(block, dict):
        raise ConfigError("config must contain a 'problem' object")
    if "path" in block:
        return problems.load_problem(_load_json(block["path"]))
    if "generator" not in block:
        raise ConfigError("problem block needs 'generator' or 'path'")
    seed = block.get("seed", 0) if seed_override is None else seed_override
    try:
        return problems.generate_problem(block["generator"],
                                         block.get("params", {}), int(seed))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _build_method(block, problem):
    if not isinstance(block, dict) or "preset" not in block:
        raise ConfigError("method block needs a 'preset' name")
    try:
        return methods.build_preset(block["preset"], problem,
                                    block.get("params", {}))
    except StepSizeError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _stopping(block, max_iter_override=None, tol_override=None):
    block = dict(block or {})
    if max_iter_override is not None:
        block["max_iter"] = max_iter_override
    if tol_override is not None:
        block["step_tol"] = tol_override
    try:
        return StoppingRule(max_iter=int(block.get("max_iter", 10000)),
                            step_tol=float(block.get("step_tol", 0.0)),
                            residual_tol=float(block.get("residual_tol", 0.0)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_run(args):
    config = _load_json(args.config)
    problem = _build_problem(config.get("problem"), args.seed)
    counter = EvalCounter()
    problem = problems.instrument_problem(problem, counter)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    output = config.get("output", {})
    trace_path = out_dir / output.get("trace", "trace.csv")
    summary_path = out_dir / output.get("summary", "summary.json")

    try:
        inst = _build_method(config.get("method"), problem)
    except StepSizeError as exc:
        with open(summary_path, "w") as fh:
            json.dump({"certificate": {"passed": False,
                                       "condition": exc.condition},
                       "error": str(exc)}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"step-size condition violated: {exc.condition}", file=sys.stderr)
        return EXIT_CERTIFICATE
    cert = inst.certificate()
    stopping = _stopping(config.get("stopping"), args.max_iter, args.tol)
    enforce = config.get("enforce_certificate", True) and not args.no_enforce_certificate

    oracle = None
    try:
        oracle = problem.oracle_vec(joined=inst.space is not None)
    except ValueError:
        pass

    trace = inst.solve(stopping=stopping, oracle=oracle, counter=counter,
                       enforce_certificate=enforce)
    tol = diagnostics.Tolerances(
        step=stopping.step_tol or 1e-6,
        residual=stopping.residual_tol or 1e-6)
    report = diagnostics.verdict(trace, tol)
    diagnostics.trace_to_csv(trace, trace_path)
    diagnostics.write_summary(trace, report, summary_path)
    print(f"{inst.name}: {trace.termination} after {trace.iterations} iterations; "
          f"certificate {'PASS' if cert.passed else 'FAIL'}; "
          f"verdict {'PASS' if report.passed else 'FAIL'}")
    print(f"trace: {trace_path}")
    print(f"summary: {summary_path}")
    return EXIT_OK if report.passed else EXIT_CERTIFICATE


def cmd_list_methods(args):
    entries = []
    for name in sorted(methods.PRESETS):
        spec = methods.PRESETS[name]
        entries.append({
            "name": name,
            "summary": spec.summary,
            "parameters": {k: {"default": d, "doc": doc}
                           for k, (d, doc) in spec.schema.items()},
            "certificate": spec.certificate_text,
        })
    if args.json:
        json.dump({"methods": entries}, sys.stdout, indent=2)
        sys.stdout.write("\n")
    else:
        for e in entries:
            print(f"{e['name']}")
            print(f"    {e['summary']}")
            print(f"    certificate: {e['certificate']}")
            params = ", ".join(
                f"{k}{'' if v['default'] is not None else ' (required)'}"
                for k, v in e["parameters"].items())
            print(f"    parameters: {params}")
    return EXIT_OK


def _per_iteration_counts(problem_block, method_block, seed, base=12):
    """Steady-state evaluation counts per iteration: run the method for n and
    2n iterations on fresh instrumented problems and difference the tallies,
    so setup and diagnostic evaluations cancel out."""
    totals = {}
    for n in (base, 2 * base):
        counter = EvalCounter()
        problem = problems.instrument_problem(
            _build_problem(problem_block, seed), counter)
        inst = _build_method(method_block, problem)
        inst.solve(x0=np.ones(inst.metric.dim),
                   stopping=StoppingRule(max_iter=n), collect="none",
                   enforce_certificate=False)
        totals[n] = counter.snapshot()
    keys = set(totals[base]) | set(totals[2 * base])
    return {k: (totals[2 * base].get(k, 0) - totals[base].get(k, 0)) / base
            for k in sorted(keys)}


def cmd_compare(args):
    config = _load_json(args.config)
    method_blocks = config.get("methods")
    if not isinstance(method_blocks, list) or not method_blocks:
        raise ConfigError("compare config needs a nonempty 'methods' list")
    for block in method_blocks:
        if isinstance(block, dict) and "problem" in block:
            raise ConfigError("compare runs share one problem; per-method "
                              "problem blocks are not allowed")
    stopping = _stopping(config.get("stopping"), args.max_iter, args.tol)
    rows = []
    for block in method_blocks:
        problem = _build_problem(config.get("problem"), args.seed)
        inst = _build_method(block, problem)
        label = block.get("label", inst.name)
        cert = inst.certificate()
        row = {"method": label, "certificate": "PASS" if cert.passed else "FAIL",
               "iterations": None, "final_residual": None, "per_iteration": {}}
        if cert.passed or args.no_enforce_certificate:
            try:
                trace = inst.solve(stopping=stopping,
                                   enforce_certificate=False, collect="full")
                row["iterations"] = trace.iterations
                if trace.records:
                    row["final_residual"] = trace.records[-1].residual_norm
                row["per_iteration"] = _per_iteration_counts(
                    config.get("problem"), block, args.seed)
            except DivergenceError as exc:
                row["final_residual"] = "diverged"
                row["iterations"] = exc.iterations
        rows.append(row)

    header = f"{'method':<28} {'cert':<5} {'iters':>7} {'final residual':>15}  per-iteration evals"
    print(header)
    print("-" * len(header))
    for row in rows:
        res = row["final_residual"]
        res_text = f"{res:.3e}" if isinstance(res, float) else str(res)
        evals = " ".join(f"{k}={v}" for k, v in row["per_iteration"].items())
        print(f"{row['method']:<28} {row['certificate']:<5} "
              f"{str(row['iterations']):>7} {res_text:>15}  {evals}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "comparison.json", "w") as fh:
            json.dump({"rows": rows}, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def cmd_gen_problem(args):
    params = json.loads(args.params) if args.params else {}
    try:
        tp = problems.generate_problem(args.generator, params, args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    doc = problems.save_problem(tp)
    out = Path(args.out)
    with open(out, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"problem document written to {out} "
          f"(kind={tp.kind}, dim={tp.dim}, oracle: {tp.oracle_note})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="momsplit",
        description="operator-splitting solves with runtime convergence certificates")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one certified solve from a config document")
    run.add_argument("--config", required=True, help="JSON run configuration")
    run.add_argument("--out", default=".", help="output directory")
    run.add_argument("--seed", type=int, default=None, help="problem seed override")
    run.add_argument("--max-iter", type=int, default=None)
    run.add_argument("--tol", type=float, default=None, help="step-norm stopping tolerance")
    run.add_argument("--no-enforce-certificate", action="store_true")
    run.set_defaults(func=cmd_run)

    lm = sub.add_parser("list-methods", help="show the method catalog")
    lm.add_argument("--json", action="store_true", help="machine-readable output")
    lm.set_defaults(func=cmd_list_methods)

    cmp_ = sub.add_parser("compare", help="run several methods on one problem")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--out", default=None)
    cmp_.add_argument("--seed", type=int, default=None)
    cmp_.add_argument("--max-iter", type=int, default=None)
    cmp_.add_argument("--tol", type=float, default=None)
    cmp_.add_argument("--no-enforce-certificate", action="store_true")
    cmp_.set_defaults(func=cmd_compare)

    gen = sub.add_parser("gen-problem", help="generate and serialize a test problem")
    gen.add_argument("--generator", required=True)
    gen.add_argument("--params", default=None, help="generator parameters as JSON")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True, help="output problem document path")
    gen.set_defaults(func=cmd_gen_problem)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificateError as exc:
        print(f"certificate failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except json.JSONDecodeError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
