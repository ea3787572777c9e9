"""Per-iteration convergence monitors and post-hoc verdicts.

The monitored quantities are the step norm |x_{k+1} - x_k|_S, the correction
norm |u_k|_{S^-1}, the inclusion residual produced by each update, the
certificate margin, and -- when a solution oracle is available -- the descent
quantity

    V_k = |x_k + S^{-1} u_k - z|_S^2 + (1 - L_{k-1}) L_{k-1} |x_k - x_{k-1}|_S^2

which decreases by at least margin_k * |x_{k+1} - x_k|_S^2 along certified
runs.  Runs with additional momentum theta are monitored in the equivalent
plain parameterization (step sizes divided by 1 - theta), where the descent
inequality lives.
"""

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .engine import IterRecord, SolveTrace  # noqa: F401  (re-exported)

#: absolute slack for the descent inequality; covers float accumulation over
#: the handful of norm evaluations in the formula
LYAPUNOV_SLACK = 1e-9

CSV_COLUMNS = ("k", "step_norm_s", "correction_norm", "residual_norm",
               "lyapunov", "margin")


def lyapunov(metric, schedule, state, z, theta=0.0):
    """Descent quantity V_k for a solver state and a known solution z.

    Independent transcription of the formula (kept separate from the value
    the solve loop records, so the two can be cross-checked).
    """
    k = state.k
    l_prev = schedule.lipschitz_bound(k - 1) if k >= 1 else schedule.lipschitz_bound(0)
    u = state.u_vec
    if theta != 0.0:
        u = (u + theta * metric.apply(state.x - state.x_prev)) / (1.0 - theta)
        l_prev = (l_prev + abs(theta)) / (1.0 - theta)
    shifted = state.x + metric.apply_inverse(u) - z
    dx = state.x - state.x_prev
    return (float(np.dot(metric.apply(shifted), shifted))
            + (1.0 - l_prev) * l_prev * float(np.dot(metric.apply(dx), dx)))


def residual(problem, metric, schedule, state_k, state_k1, theta=0.0):
    """The inclusion element r_k contained in (A + C) x_{k+1}.

    r_k = M_k x_k - M_k x_{k+1} + gamma_k^{-1} u_k
          [+ gamma_k^{-1} theta S (x_k - x_{k-1})]
          + C x_{k+1} - C x_k,

    recomputed from the kernel's direct evaluation path.
    """
    k = state_k.k
    if state_k1.k != k + 1:
        raise ValueError("states must be consecutive")
    schedule.bind_iteration(k, state_k.x, state_k.x_prev, theta)
    g = schedule.gamma(k)
    r = schedule.kernel_eval(k, state_k.x) - schedule.kernel_eval(k, state_k1.x)
    r = r + state_k.u_vec / g
    if theta != 0.0:
        r = r + (theta / g) * metric.apply(state_k.x - state_k.x_prev)
    if problem.forward is not None:
        r = r + problem.forward(state_k1.x) - problem.forward(state_k.x)
    return r


@dataclass
class Tolerances:
    """Decay thresholds used by :func:`verdict`."""

    step: float = 1e-6
    correction: float = 1e-6
    residual: float = 1e-6
    lyapunov_slack: float = LYAPUNOV_SLACK


@dataclass
class VerdictReport:
    """Machine-readable per-property PASS/FAIL summary of a trace."""

    checks: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    error: str = None

    @property
    def passed(self):
        return self.error is None and all(self.checks.values())

    def as_dict(self):
        return {"passed": self.passed, "checks": dict(self.checks),
                "details": dict(self.details), "error": self.error}


def verdict(trace, tolerances=None):
    """Post-hoc PASS/FAIL report for a completed solve trace."""
    tol = tolerances or Tolerances()
    report = VerdictReport()
    if trace is None or not trace.records:
        report.error = "empty trace: nothing to verify"
        return report

    report.checks["certificate"] = bool(trace.certificate and trace.certificate.passed)
    if trace.certificate is not None:
        report.details["certificate"] = str(trace.certificate)
    if trace.warnings:
        report.details["warnings"] = list(trace.warnings)

    last = trace.records[-1]
    if not math.isnan(last.step_norm_s):
        report.checks["step_decay"] = last.step_norm_s <= tol.step
        report.details["final_step_norm"] = last.step_norm_s
    if not math.isnan(last.correction_norm):
        report.checks["correction_decay"] = last.correction_norm <= tol.correction
        report.details["final_correction_norm"] = last.correction_norm
    if not math.isnan(last.residual_norm):
        report.checks["residual_decay"] = last.residual_norm <= tol.residual
        report.details["final_residual_norm"] = last.residual_norm

    lyap = [(r.k, r.lyapunov, r.margin, r.step_norm_s) for r in trace.records
            if not math.isnan(r.lyapunov)]
    if len(lyap) >= 2:
        scale = 1.0 / (1.0 - trace.theta) if trace.theta != 0.0 else 1.0
        monotone = True
        descent = True
        worst = math.inf
        for (k0, v0, m0, s0), (_, v1, _, _) in zip(lyap, lyap[1:]):
            if v1 > v0 + tol.lyapunov_slack:
                monotone = False
            if k0 >= 1:
                gap = (v0 - v1) - scale * m0 * s0 * s0
                worst = min(worst, gap)
                if gap < -tol.lyapunov_slack:
                    descent = False
        report.checks["lyapunov_nonincreasing"] = monotone
        report.checks["lyapunov_descent"] = descent
        report.details["worst_descent_gap"] = worst
    return report


def _fmt(value):
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "nan"
    return repr(float(value))


def trace_to_csv(trace, path_or_file):
    """Write the per-iteration records as CSV (stable column set)."""
    if isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__"):
        with open(path_or_file, "w", newline="") as fh:
            _write_csv(trace, fh)
    else:
        _write_csv(trace, path_or_file)


def _write_csv(trace, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in trace.records:
        writer.writerow([r.k, _fmt(r.step_norm_s), _fmt(r.correction_norm),
                         _fmt(r.residual_norm), _fmt(r.lyapunov), _fmt(r.margin)])


def trace_csv_text(trace):
    buf = io.StringIO()
    _write_csv(trace, buf)
    return buf.getvalue()


def summary(trace, report=None):
    """JSON-style run summary with the verdict report attached."""
    out = {
        "descriptor": trace.descriptor,
        "iterations": trace.iterations,
        "termination": trace.termination,
        "theta": trace.theta,
        "certificate": None,
        "warnings": list(trace.warnings),
        "op_counts": dict(trace.op_counts),
    }
    if trace.certificate is not None:
        out["certificate"] = {
            "passed": trace.certificate.passed,
            "worst_margin": trace.certificate.worst_margin,
            "worst_k": trace.certificate.worst_k,
            "epsilon": trace.certificate.epsilon,
            "condition": trace.certificate.condition,
        }
    if trace.records:
        last = trace.records[-1]
        out["final"] = {
            "step_norm_s": None if math.isnan(last.step_norm_s) else last.step_norm_s,
            "correction_norm": None if math.isnan(last.correction_norm) else last.correction_norm,
            "residual_norm": None if math.isnan(last.residual_norm) else last.residual_norm,
        }
    if report is not None:
        out["verdict"] = report.as_dict()
    return out


def write_summary(trace, report, path):
    with open(path, "w") as fh:
        json.dump(summary(trace, report), fh, indent=2, sort_keys=True)
        fh.write("\n")
