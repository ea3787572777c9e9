"""Core iteration: nonlinear forward-backward steps with momentum correction.

One update of the driving scheme reads

    x_{k+1} = (M_k + A)^{-1}(M_k x_k - C x_k + gamma_k^{-1} u_k)
    u_{k+1} = (gamma_k M_k - S) x_{k+1} - (gamma_k M_k - S) x_k

with an optional additional momentum term ``gamma_k^{-1} theta S (x_k -
x_{k-1})`` added to the forward point.  The kernel family ``M_k``, the
correction operator ``gamma_k M_k - S`` and the backward map ``(M_k +
A)^{-1}`` are supplied by a :class:`KernelSchedule`; the loop itself never
sees ``A`` or ``M_k`` other than through the schedule.

Correction values are carried as :class:`CorrectionValue` pairs so that a
linear-adjoint factor common to all correction terms of one iteration is
applied once to their sum instead of once per term; schedules without such
structure simply return dense values.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .space import as_vector


class DivergenceError(RuntimeError):
    """An iterate picked up a non-finite coordinate."""

    def __init__(self, message, iterations=0):
        super().__init__(message)
        self.iterations = iterations


class CertificateError(RuntimeError):
    """A required convergence certificate failed and enforcement is on."""

    def __init__(self, certificate):
        super().__init__(f"convergence certificate failed: {certificate}")
        self.certificate = certificate


class CorrectionValue:
    """Value of (gamma_k M_k - S) x, optionally keeping a factor unapplied.

    The represented vector is ``dense + pending_map(pending)``.  Sums and
    scalings combine the pending parts, so one ``resolve`` call applies the
    (linear) pending map once to the combined argument.
    """

    __slots__ = ("dense", "pending", "pending_map", "_resolved")

    def __init__(self, dense, pending=None, pending_map=None):
        self.dense = dense
        self.pending = pending
        self.pending_map = pending_map
        self._resolved = None

    @classmethod
    def zero(cls, dim):
        return cls(np.zeros(dim))

    def resolve(self):
        if self.pending is None:
            return self.dense
        if self._resolved is None:
            self._resolved = self.dense + self.pending_map(self.pending)
        return self._resolved

    def _combine(self, other, sign):
        if other.pending is None:
            pending, pmap = self.pending, self.pending_map
        elif self.pending is None:
            pending, pmap = sign * other.pending, other.pending_map
        elif self.pending_map is other.pending_map:
            pending, pmap = self.pending + sign * other.pending, self.pending_map
        else:
            raise ValueError("cannot combine correction values with different pending maps")
        return CorrectionValue(self.dense + sign * other.dense, pending, pmap)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, scalar):
        pending = None if self.pending is None else scalar * self.pending
        return CorrectionValue(scalar * self.dense, pending, self.pending_map)

    __rmul__ = __mul__


class KernelSchedule:
    """Per-iteration kernel family (M_k, gamma_k, L_k) with its backward map.

    Subclasses implement the evaluation interface; ``kernel_eval`` and
    ``correction_eval`` must stay consistent with
    ``correction = gamma_k * kernel - S`` (checked by tests on probes).
    ``has_rescale_contract`` declares that correction operators at different
    indices differ by a scalar factor, letting the loop reuse the stored
    correction value at the current iterate instead of re-evaluating the
    expensive part of the kernel.
    """

    is_stationary = False
    has_rescale_contract = False

    def gamma(self, k):
        raise NotImplementedError

    def lipschitz_bound(self, k):
        raise NotImplementedError

    def kernel_eval(self, k, x):
        """M_k x, via the direct formula (independent of correction_eval)."""
        raise NotImplementedError

    def kernel_resolvent(self, k, p):
        """(M_k + A)^{-1} p at the iteration's forward point."""
        raise NotImplementedError

    def correction_eval(self, k, x):
        """(gamma_k M_k - S) x as a :class:`CorrectionValue`."""
        raise NotImplementedError

    def correction_rescale(self, j, k):
        """Scalar c with (gamma_k M_k - S) = c (gamma_j M_j - S), if declared."""
        return None

    def bind_iteration(self, k, x, x_prev, theta):
        """Hook for kernels that are built from the current iterate."""

    def begin_solve(self):
        """Reset any per-solve internal reuse caches."""


class ScheduleConstants(KernelSchedule):
    """Bare (gamma_k, L_k) provider for certificate arithmetic."""

    def __init__(self, gamma, lipschitz, stationary=None):
        self._gamma = gamma if callable(gamma) else (lambda k, g=float(gamma): g)
        self._lip = lipschitz if callable(lipschitz) else (lambda k, L=float(lipschitz): L)
        if stationary is None:
            stationary = not (callable(gamma) or callable(lipschitz))
        self.is_stationary = stationary

    def gamma(self, k):
        return self._gamma(k)

    def lipschitz_bound(self, k):
        return self._lip(k)


@dataclass
class InclusionProblem:
    """The inclusion 0 in A x + C x as the engine sees it.

    ``A`` enters only through the schedule's backward map and is kept here
    for diagnostics; ``C`` is evaluated in the forward step.  ``ell`` is the
    constant with C being ell^-1-cocoercive w.r.t. the solve metric (0 when
    C is absent).
    """

    forward: object = None          # SingleValuedOp C, or None
    ell: float = 0.0
    resolvent_part: object = None   # SetValuedOp A, when available
    descriptor: str = "inclusion"

    def __post_init__(self):
        if self.ell < 0:
            raise ValueError("ell must be >= 0")
        if self.forward is None and self.ell != 0.0:
            raise ValueError("ell must be 0 when there is no cocoercive term")


@dataclass
class SolverState:
    """Iteration state: (k, x_k, u_k, x_{k-1}) plus the stored correction."""

    k: int
    x: np.ndarray
    u: CorrectionValue
    x_prev: np.ndarray
    corr_cache: CorrectionValue = None
    cache_index: int = 0

    @property
    def u_vec(self):
        return self.u.resolve()


@dataclass
class StoppingRule:
    """Finite-run termination policy."""

    max_iter: int
    step_tol: float = 0.0
    residual_tol: float = 0.0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.step_tol < 0 or self.residual_tol < 0:
            raise ValueError("tolerances must be >= 0")


@dataclass
class Certificate:
    """Outcome of a step-size condition check over a horizon of indices."""

    passed: bool
    worst_margin: float
    worst_k: int
    epsilon: float
    horizon: int
    theta: float = 0.0
    condition: str = "1 - L_{k-1} - L_k - gamma_k*ell/2 >= eps"

    def __str__(self):
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict}: worst margin {self.worst_margin:.6g} at k={self.worst_k} "
                f"(eps={self.epsilon:g}, condition: {self.condition})")


def step_margin(schedule, ell, k):
    """1 - L_{k-1} - L_k - gamma_k*ell/2, with the L_{-1} := L_0 convention."""
    l_prev = schedule.lipschitz_bound(k - 1) if k >= 1 else schedule.lipschitz_bound(0)
    return 1.0 - l_prev - schedule.lipschitz_bound(k) - schedule.gamma(k) * ell / 2.0


def certify(schedule, ell, horizon=1, epsilon=1e-6):
    """Check the convergence condition margin >= epsilon for k in [0, horizon)."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    worst, worst_k = math.inf, 0
    for k in range(horizon):
        m = step_margin(schedule, ell, k)
        if m < worst:
            worst, worst_k = m, k
    return Certificate(worst >= epsilon, worst, worst_k, epsilon, horizon)


def certify_momentum(schedule, ell, theta, horizon=1, epsilon=1e-6):
    """Momentum variant: 1 - theta - 2|theta| - L_{k-1} - L_k - gamma_k*ell/2 >= eps."""
    if theta >= 1.0:
        raise ValueError("momentum parameter theta must be < 1")
    shift = theta + 2.0 * abs(theta)
    base = certify(schedule, ell, horizon=horizon, epsilon=epsilon)
    margin = base.worst_margin - shift
    return Certificate(margin >= epsilon, margin, base.worst_k, epsilon, horizon,
                       theta=theta,
                       condition="1 - theta - 2|theta| - L_{k-1} - L_k - gamma_k*ell/2 >= eps")


def init_state(schedule, metric, x0, u0=None, x_prev=None, theta=0.0):
    """State at k = 0; u0 defaults to zero, x_{-1} defaults to x_0."""
    x0 = as_vector(x0, metric.dim)
    x_prev = x0 if x_prev is None else as_vector(x_prev, metric.dim)
    if u0 is None:
        u = CorrectionValue.zero(metric.dim)
    elif isinstance(u0, CorrectionValue):
        u = u0
    else:
        u = CorrectionValue(as_vector(u0, metric.dim))
    state = SolverState(0, x0, u, x_prev)
    if schedule.has_rescale_contract:
        schedule.bind_iteration(0, x0, x_prev, theta)
        state.corr_cache = schedule.correction_eval(0, x0)
        state.cache_index = 0
    return state


def _advance(problem, metric, schedule, state, theta):
    """One update; returns (new_state, forward_point, correction_at_x)."""
    k = state.k
    schedule.bind_iteration(k, state.x, state.x_prev, theta)
    corr_x = None
    if schedule.has_rescale_contract and state.corr_cache is not None:
        factor = schedule.correction_rescale(state.cache_index, k)
        if factor is not None:
            corr_x = state.corr_cache * factor
    if corr_x is None:
        corr_x = schedule.correction_eval(k, state.x)
    g = schedule.gamma(k)
    drive = (corr_x + state.u).resolve()
    p = (metric.apply(state.x) + drive) / g
    if problem.forward is not None:
        p = p - problem.forward(state.x)
    if theta != 0.0:
        p = p + (theta / g) * metric.apply(state.x - state.x_prev)
    x_new = schedule.kernel_resolvent(k, p)
    if not np.all(np.isfinite(x_new)):
        raise DivergenceError(f"non-finite iterate at k={k + 1}", iterations=k + 1)
    corr_new = schedule.correction_eval(k, x_new)
    new_state = SolverState(k + 1, x_new, corr_new - corr_x, state.x,
                            corr_cache=corr_new, cache_index=k)
    return new_state, p, corr_new


def step(problem, metric, schedule, state):
    """One plain update x_k -> x_{k+1} (no additional momentum)."""
    new_state, _, _ = _advance(problem, metric, schedule, state, 0.0)
    return new_state


def step_with_momentum(problem, metric, schedule, state, theta):
    """One update with the additional momentum term theta*S(x_k - x_{k-1})."""
    if theta >= 1.0:
        raise ValueError("momentum parameter theta must be < 1")
    new_state, _, _ = _advance(problem, metric, schedule, state, theta)
    return new_state


@dataclass
class IterRecord:
    """Per-iteration monitor row (written as one CSV line by diagnostics)."""

    k: int
    step_norm_s: float = math.nan
    correction_norm: float = math.nan
    residual_norm: float = math.nan
    lyapunov: float = math.nan
    margin: float = math.nan


@dataclass
class SolveTrace:
    """Outcome of a solve: final state, per-iteration records, provenance."""

    records: list = field(default_factory=list)
    x: np.ndarray = None
    u: np.ndarray = None
    iterations: int = 0
    termination: str = ""
    certificate: Certificate = None
    certificate_enforced: bool = True
    warnings: list = field(default_factory=list)
    theta: float = 0.0
    op_counts: dict = field(default_factory=dict)
    iterates: list = None
    descriptor: str = ""


def _hat_quantities(u_vec, x, x_prev, metric, theta):
    """Map (u, L) of the momentum run to the equivalent plain-run values."""
    if theta == 0.0:
        return u_vec
    return (u_vec + theta * metric.apply(x - x_prev)) / (1.0 - theta)


def lyapunov_value(metric, schedule, x, u_vec, x_prev, k, z, theta=0.0):
    """V_k = |x_k + S^{-1}u_k - z|_S^2 + (1-L_{k-1})L_{k-1}|x_k - x_{k-1}|_S^2.

    For theta != 0 the quantity is evaluated for the equivalent plain
    parameterization (hatted u and L), which is where the descent lemma lives.
    """
    l_prev = schedule.lipschitz_bound(k - 1) if k >= 1 else schedule.lipschitz_bound(0)
    u_eff = _hat_quantities(u_vec, x, x_prev, metric, theta)
    if theta != 0.0:
        l_prev = (l_prev + abs(theta)) / (1.0 - theta)
    shifted = x + metric.apply_inverse(u_eff) - z
    first = float(np.dot(metric.apply(shifted), shifted))
    dx = x - x_prev
    second = (1.0 - l_prev) * l_prev * float(np.dot(metric.apply(dx), dx))
    return first + second


def solve(problem, metric, schedule, x0, u0=None, x_prev=None, stopping=None,
          theta=0.0, oracle=None, collect="full", enforce_certificate=True,
          epsilon=1e-6, horizon=None, monitors=(), counter=None,
          keep_iterates=False, descriptor=""):
    """Run the iteration under a stopping rule, recording diagnostics.

    Parameters
    ----------
    problem : InclusionProblem
    metric : Metric
        The scaling S the schedule was built for.
    schedule : KernelSchedule
    x0 : array_like
        Initial point.  ``u0`` defaults to zero and ``x_prev`` to ``x0``.
    stopping : StoppingRule
    theta : float
        Additional momentum parameter (0 disables the momentum term).
    oracle : array_like, optional
        A known solution; enables the Lyapunov column of the trace.
    collect : {"full", "basic", "none"}
        "full" records step/correction/residual norms, margins and Lyapunov
        values; "basic" records step norms only; "none" records nothing
        (use for evaluation-count audits, where diagnostics would add
        operator applications of their own).
    enforce_certificate : bool
        Check the step-size certificate before iterating; on failure raise
        :class:`CertificateError` if True, else record a warning and run.
    counter : EvalCounter, optional
        Snapshot stored on the trace after the run.

    Returns
    -------
    SolveTrace
    """
    if stopping is None:
        stopping = StoppingRule(max_iter=1000)
    if theta >= 1.0:
        raise ValueError("momentum parameter theta must be < 1")
    if collect not in ("full", "basic", "none"):
        raise ValueError("collect must be 'full', 'basic' or 'none'")

    if horizon is None:
        horizon = 1 if schedule.is_stationary else stopping.max_iter
    if theta != 0.0:
        cert = certify_momentum(schedule, problem.ell, theta,
                                horizon=horizon, epsilon=epsilon)
    else:
        cert = certify(schedule, problem.ell, horizon=horizon, epsilon=epsilon)

    trace = SolveTrace(certificate=cert, certificate_enforced=enforce_certificate,
                       theta=theta, descriptor=descriptor)
    if not cert.passed:
        if enforce_certificate:
            raise CertificateError(cert)
        trace.warnings.append(f"certificate not enforced and failing: {cert}")

    schedule.begin_solve()
    state = init_state(schedule, metric, x0, u0=u0, x_prev=x_prev, theta=theta)
    if oracle is not None:
        oracle = as_vector(oracle, metric.dim)
    if keep_iterates:
        trace.iterates = [state.x]

    termination = "max_iter"
    for _ in range(stopping.max_iter):
        k = state.k
        record = IterRecord(k) if collect != "none" else None
        if record is not None:
            record.margin = step_margin(schedule, problem.ell, k) - (
                theta + 2.0 * abs(theta) if theta != 0.0 else 0.0)
            if oracle is not None and collect == "full":
                record.lyapunov = lyapunov_value(
                    metric, schedule, state.x, state.u_vec, state.x_prev, k,
                    oracle, theta=theta)

        new_state, p, corr_new = _advance(problem, metric, schedule, state, theta)
        dx = new_state.x - state.x

        step_norm = None
        if collect != "none" or stopping.step_tol > 0:
            step_norm = float(np.sqrt(max(np.dot(metric.apply(dx), dx), 0.0)))
        residual_norm = None
        if collect == "full" or stopping.residual_tol > 0:
            m_new = (corr_new.resolve() + metric.apply(new_state.x)) / schedule.gamma(k)
            r = p - m_new
            if problem.forward is not None:
                r = r + problem.forward(new_state.x)
            residual_norm = float(np.linalg.norm(r))

        if record is not None:
            record.step_norm_s = step_norm
            if collect == "full":
                record.correction_norm = metric.inv_norm(new_state.u_vec)
                record.residual_norm = residual_norm
            trace.records.append(record)

        state = new_state
        if keep_iterates:
            trace.iterates.append(state.x)
        for monitor in monitors:
            monitor(state, record)

        if stopping.step_tol > 0 and step_norm is not None and step_norm <= stopping.step_tol:
            termination = "step_tol"
            break
        if (stopping.residual_tol > 0 and residual_norm is not None
                and residual_norm <= stopping.residual_tol):
            termination = "residual_tol"
            break

    trace.x = state.x
    trace.u = state.u_vec
    trace.iterations = state.k
    trace.termination = termination
    if counter is not None:
        trace.op_counts = counter.snapshot()
    return trace
