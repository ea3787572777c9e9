"""Named method builders: each one instantiates the core iteration's kernel
schedule, metric and certificate for a particular splitting scheme.

The builders cover

* a half-reflected three-operator scheme (``build_fhrb``) and its momentum
  variant, whose kernel is ``alpha_k^{-1} Id - D``;
* a primal-dual scheme with a block-triangular backward map
  (``build_pd_triangular``), parameterized by a dual extrapolation sequence
  ``lambda_k``, from which the classic primal-dual hybrid-gradient methods
  fall out as parameter choices;
* its Douglas-Rachford-style rewrite for identity coupling (``build_fhrdr``),
  where the dual resolvent is taken through the inverse-operator route;
* a primal-dual scheme whose kernel itself contains a resolvent, built from
  the current dual iterate (``build_pd_resolvent_compensated``).

Every built instance carries two certificate routes: the generic margin
``1 - L_{k-1} - L_k - gamma_k*ell/2`` evaluated from its schedule constants,
and the method-specific closed-form inequality (``corollary_margin``); they
agree up to the documented ``margin_scale`` factor.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from . import engine
from .engine import (CorrectionValue, InclusionProblem, KernelSchedule,
                     StoppingRule, certify, certify_momentum)
from .operators import (LinearOp, MemoLinear, MemoSetValued, MemoSingle,
                        SetValuedOp, SingleValuedOp, estimate_operator_norm,
                        inverse_of, linear_as_single, product_setvalued,
                        prox_catalog, resolvent_of_inverse, zero_single)
from .space import Metric, PairSpace, as_vector


# ---------------------------------------------------------------------------
# problem containers


class StepSizeError(ValueError):
    """A structural step-size condition is violated (the scaling would not
    be positive definite); carries the inequality that failed."""

    def __init__(self, condition, detail=""):
        super().__init__(f"step-size condition violated: {condition}"
                         + (f" ({detail})" if detail else ""))
        self.condition = condition


@dataclass
class PrimalDualProblem:
    """The structured inclusion 0 in B y + (V* o D o V) y + E y + F y.

    ``delta`` is the Lipschitz constant of E, ``beta`` the inverse
    cocoercivity constant of F (0 when F is absent), and ``norm_v`` an upper
    bound on |V| (estimated by power iteration when not supplied).
    """

    space: PairSpace
    b_op: SetValuedOp = None
    d_op: SetValuedOp = None
    e_op: SingleValuedOp = None
    f_op: SingleValuedOp = None
    v_op: LinearOp = None
    delta: float = 0.0
    beta: float = 0.0
    norm_v: float = None

    def __post_init__(self):
        if self.d_op is None or self.v_op is None:
            raise ValueError("a primal-dual problem needs both D and V")
        if self.e_op is None and self.delta != 0.0:
            raise ValueError("delta must be 0 when E is absent")
        if self.f_op is None and self.beta != 0.0:
            raise ValueError("beta must be 0 when F is absent")

    def norm_v_value(self):
        if self.norm_v is None:
            self.norm_v = estimate_operator_norm(self.v_op, iterations=300, seed=0)
        return self.norm_v


def pd_fixed_point_residual(pd, y, z, tau=1.0, sigma=1.0):
    """Residual norms of the two coupled optimality lines at (y, z).

    Zero exactly at solutions: the first line checks
    ``y = (Id + tau B)^{-1}(y - tau (V*z + Ey + Fy))`` and the second
    ``z = (Id + sigma D^{-1})^{-1}(z + sigma V y)``.
    """
    y = as_vector(y, pd.space.dim_primal)
    z = as_vector(z, pd.space.dim_dual)
    drive = pd.v_op.apply_adjoint(z)
    if pd.e_op is not None:
        drive = drive + pd.e_op(y)
    if pd.f_op is not None:
        drive = drive + pd.f_op(y)
    b_op = pd.b_op if pd.b_op is not None else prox_catalog("zero")
    res1 = float(np.linalg.norm(y - b_op.resolvent(tau, y - tau * drive)))
    res2 = float(np.linalg.norm(
        z - resolvent_of_inverse(pd.d_op, sigma, z + sigma * pd.v_op.apply(y))))
    return res1, res2


# ---------------------------------------------------------------------------
# method configs


@dataclass
class FhrbConfig:
    """Step sizes and constants for the half-reflected scheme.

    ``alpha`` is a positive constant or a callable k -> alpha_k (defined for
    k >= -1 when a callable; ``alpha_prev`` supplies alpha_{-1} otherwise).
    ``delta`` is the Lipschitz constant of the single-valued part folded into
    the kernel, ``beta`` the inverse cocoercivity constant of the forward
    term.  ``theta`` < 1 adds momentum.
    """

    alpha: object
    delta: float = 0.0
    beta: float = 0.0
    theta: float = 0.0
    alpha_prev: float = None
    epsilon: float = 1e-6

    def alpha_fn(self):
        if callable(self.alpha):
            return self.alpha
        a = float(self.alpha)
        if a <= 0:
            raise ValueError("alpha must be > 0")
        return lambda k: a

    def alpha_minus_one(self):
        if self.alpha_prev is not None:
            return float(self.alpha_prev)
        return self.alpha_fn()(-1) if callable(self.alpha) else float(self.alpha)


@dataclass
class PdTriConfig:
    """Parameters of the block-triangular primal-dual scheme.

    ``lam`` is the dual extrapolation sequence: a constant, a list cycled
    per iteration, or a callable k -> lambda_k (defined for k >= -1).
    Requires tau*sigma*|V|^2 < 1 so the scaling stays positive definite.
    """

    tau: float
    sigma: float
    lam: object = 2.0
    theta: float = 0.0
    epsilon: float = 1e-6

    def lam_fn(self):
        if callable(self.lam):
            return self.lam
        if isinstance(self.lam, (list, tuple)):
            seq = [float(v) for v in self.lam]
            return lambda k: seq[k % len(seq)]
        lam = float(self.lam)
        return lambda k: lam

    def lam_is_constant(self):
        return not callable(self.lam) and not (
            isinstance(self.lam, (list, tuple)) and len(set(self.lam)) > 1)


@dataclass
class PdResConfig:
    """Parameters of the resolvent-compensated primal-dual scheme."""

    tau: float
    sigma: float
    theta: float = 0.0
    epsilon: float = 1e-6


# ---------------------------------------------------------------------------
# built instance


@dataclass
class MethodInstance:
    """Everything a solve needs, plus the method's own certificate route."""

    name: str
    schedule: KernelSchedule
    metric: Metric
    problem: InclusionProblem
    theta: float = 0.0
    space: PairSpace = None
    pieces: dict = None
    corollary_margin: object = None     # callable k -> closed-form margin
    margin_scale: float = 1.0           # generic margin * scale = closed form
    epsilon: float = 1e-6
    initial_u: object = None            # callable (x0, x_prev) -> u0 or None

    def certificate(self, epsilon=None, horizon=None):
        eps = self.epsilon if epsilon is None else epsilon
        if horizon is None:
            horizon = 1 if self.schedule.is_stationary else 1000
        if self.theta != 0.0:
            return certify_momentum(self.schedule, self.problem.ell, self.theta,
                                    horizon=horizon, epsilon=eps)
        return certify(self.schedule, self.problem.ell, horizon=horizon, epsilon=eps)

    def default_x0(self):
        return np.zeros(self.metric.dim)

    def solve(self, x0=None, x_prev=None, stopping=None, **kwargs):
        x0 = self.default_x0() if x0 is None else as_vector(x0, self.metric.dim)
        u0 = kwargs.pop("u0", None)
        if u0 is None and x_prev is not None and self.initial_u is not None:
            u0 = self.initial_u(x0, as_vector(x_prev, self.metric.dim))
        kwargs.setdefault("epsilon", self.epsilon)
        kwargs.setdefault("descriptor", self.name)
        return engine.solve(self.problem, self.metric, self.schedule, x0,
                            u0=u0, x_prev=x_prev, stopping=stopping,
                            theta=self.theta, **kwargs)

    def split_solution(self, x):
        if self.space is None:
            return x, None
        return self.space.split(x)


# ---------------------------------------------------------------------------
# plain forward-backward (reduction kernel M_k = gamma_k^{-1} S)


class _ReductionSchedule(KernelSchedule):
    """Kernel equal to gamma_k^{-1} S: zero correction, plain resolvent steps."""

    has_rescale_contract = True

    def __init__(self, a_op, gamma, dim):
        self._a = a_op
        self._gamma = gamma if callable(gamma) else (lambda k, g=float(gamma): g)
        self._dim = dim
        self.is_stationary = not callable(gamma)

    def gamma(self, k):
        return self._gamma(k)

    def lipschitz_bound(self, k):
        return 0.0

    def kernel_eval(self, k, x):
        return x / self._gamma(k)

    def kernel_resolvent(self, k, p):
        g = self._gamma(k)
        return self._a.resolvent(g, g * p)

    def correction_eval(self, k, x):
        return CorrectionValue.zero(self._dim)

    def correction_rescale(self, j, k):
        return 1.0

    def bind_iteration(self, k, x, x_prev, theta):
        pass


def build_forward_backward(a_op, c_op, beta, gamma, dim, theta=0.0,
                           epsilon=1e-6, name="forward_backward"):
    """Plain forward-backward splitting in the identity metric.

    Solves 0 in A x + C x by x_{k+1} = (Id + gamma A)^{-1}(x - gamma C x);
    the correction sequence is identically zero here.
    """
    if gamma is not None and not callable(gamma) and gamma <= 0:
        raise ValueError("gamma must be > 0")
    if theta >= 1.0:
        raise ValueError("theta must be < 1")
    a_op = a_op if a_op is not None else prox_catalog("zero")
    metric = Metric.identity(dim)
    schedule = _ReductionSchedule(a_op, gamma, dim)
    problem = InclusionProblem(forward=c_op, ell=float(beta) if c_op is not None else 0.0,
                               resolvent_part=a_op, descriptor=name)
    shift = theta + 2.0 * abs(theta)

    def corollary_margin(k, g=schedule.gamma, b=problem.ell, shift=shift):
        return 1.0 - shift - g(k) * b / 2.0

    return MethodInstance(name=name, schedule=schedule, metric=metric,
                          problem=problem, theta=theta,
                          pieces={"A": a_op, "C": c_op},
                          corollary_margin=corollary_margin, margin_scale=1.0,
                          epsilon=epsilon)


# ---------------------------------------------------------------------------
# forward-half-reflected-backward family (kernel alpha_k^{-1} Id - D)


class _FhrbSchedule(KernelSchedule):
    """Kernel M_k = alpha_k^{-1} Id - D over the identity metric.

    The correction operator is -alpha_k D, so correction values at different
    indices differ by the scalar alpha_k / alpha_j: the loop's stored value
    of D at the current iterate is reused instead of re-evaluating D.
    """

    has_rescale_contract = True

    def __init__(self, b_op, d_op, alpha, delta, dim):
        self._b = b_op
        self._d = d_op
        self._alpha = alpha
        self._delta = float(delta)
        self._dim = dim
        self.is_stationary = alpha(0) == alpha(1) == alpha(997)

    def gamma(self, k):
        return self._alpha(k)

    def lipschitz_bound(self, k):
        return self._alpha(k) * self._delta

    def kernel_eval(self, k, x):
        return x / self._alpha(k) - self._d(x)

    def kernel_resolvent(self, k, p):
        a = self._alpha(k)
        return self._b.resolvent(a, a * p)

    def correction_eval(self, k, x):
        return CorrectionValue(-self._alpha(k) * self._d(x))

    def correction_rescale(self, j, k):
        return self._alpha(k) / self._alpha(j)


def build_fhrb(b_op, d_op, c_op, dim, config, name=None):
    """Half-reflected scheme for 0 in B x + D x + C x on R^dim.

    ``B`` is resolvent-capable, ``D`` single-valued Lipschitz (the kernel
    absorbs it, so the backward step only involves B), ``C`` cocoercive or
    None.  ``config.theta`` != 0 produces the momentum variant; its
    certificate budget shrinks from 1 to 1 - theta - 2|theta|.
    """
    alpha = config.alpha_fn()
    for probe in (0, 1, 2):
        if alpha(probe) <= 0:
            raise ValueError("alpha must be > 0 at every index")
    if config.theta >= 1.0:
        raise ValueError("theta must be < 1")
    if c_op is None and config.beta != 0.0:
        raise ValueError("beta must be 0 when C is absent")
    d_memo = MemoSingle(d_op) if d_op is not None else zero_single()
    c_memo = MemoSingle(c_op) if c_op is not None else None
    schedule = _FhrbSchedule(b_op, d_memo, alpha, config.delta, dim)
    problem = InclusionProblem(forward=c_memo,
                               ell=config.beta if c_op is not None else 0.0,
                               descriptor=name or "fhrb")
    shift = config.theta + 2.0 * abs(config.theta)
    delta, beta = config.delta, problem.ell

    def corollary_margin(k):
        return (1.0 - shift) - (alpha(k) * delta + alpha(k + 1) * (delta + beta / 2.0))

    a_prev = config.alpha_minus_one()

    def initial_u(x0, x_prev):
        if np.array_equal(x0, x_prev):
            return None
        return -a_prev * (d_memo(x0) - d_memo(x_prev))

    default = "fhrb_momentum" if config.theta != 0.0 else "fhrb"
    return MethodInstance(name=name or default, schedule=schedule,
                          metric=Metric.identity(dim), problem=problem,
                          theta=config.theta,
                          pieces={"B": b_op, "D": d_memo, "C": c_memo},
                          corollary_margin=corollary_margin, margin_scale=1.0,
                          epsilon=config.epsilon, initial_u=initial_u)


def build_fhrb_momentum(b_op, d_op, c_op, dim, config, name=None):
    """Momentum variant: forward point gains theta*(x_k - x_{k-1})."""
    if config.theta == 0.0:
        raise ValueError("momentum variant expects theta != 0 (use build_fhrb)")
    return build_fhrb(b_op, d_op, c_op, dim, config, name=name or "fhrb_momentum")


# ---------------------------------------------------------------------------
# primal-dual with block-triangular backward map


class _TriMetric(Metric):
    """S = [[Id, -tau V*], [-tau V, (tau/sigma) Id]] with a factorized inverse.

    The inverse is applied through the two Schur-style factors
    (Id - tau*sigma V*V) and (Id - tau*sigma V V*), factorized lazily on
    first use so count-audited runs never build them.
    """

    def __init__(self, space, v_op, tau, sigma, norm_v):
        gap = 1.0 - math.sqrt(tau * sigma) * norm_v
        if gap <= 0:
            raise StepSizeError("tau*sigma*|V|^2 < 1",
                                f"got {tau * sigma * norm_v ** 2:.6g}")
        bound = gap * min(1.0, tau / sigma)
        super().__init__(self._apply_fwd, self._apply_inv, space.dim, bound,
                         descriptor="primal-dual triangular metric")
        self._space = space
        self._v = v_op
        self._tau = float(tau)
        self._sigma = float(sigma)
        self._factors = None

    def _apply_fwd(self, x):
        y, z = self._space.split(x)
        return self._space.join(y - self._tau * self._v.apply_adjoint(z),
                                -self._tau * self._v.apply(y) + (self._tau / self._sigma) * z)

    def _ensure_factors(self):
        if self._factors is None:
            vd = self._v.to_dense()
            ts = self._tau * self._sigma
            k = np.eye(self._space.dim_primal) - ts * (vd.T @ vd)
            g = np.eye(self._space.dim_dual) - ts * (vd @ vd.T)
            self._factors = (scipy.linalg.cho_factor(k), scipy.linalg.cho_factor(g))
        return self._factors

    def _apply_inv(self, x):
        fk, fg = self._ensure_factors()
        a, b = self._space.split(x)
        w1 = a + self._sigma * self._v.apply_adjoint(b)
        w2 = self._sigma * self._v.apply(a) + (self._sigma / self._tau) * b
        return self._space.join(scipy.linalg.cho_solve(fk, w1),
                                scipy.linalg.cho_solve(fg, w2))


class _PdTriSchedule(KernelSchedule):
    """Lower block-triangular kernel; backward map solved by substitution."""

    def __init__(self, space, b_op, d_op, e_op, v_op, tau, sigma, lam,
                 delta, norm_v):
        self._space = space
        self._b = b_op
        self._d = d_op
        self._e = e_op
        self._v = v_op
        self._tau = float(tau)
        self._sigma = float(sigma)
        self._lam = lam
        self._delta = float(delta)
        self._norm_v = float(norm_v)
        self._den = 1.0 - tau * sigma * norm_v ** 2

    def gamma(self, k):
        return self._tau

    def lipschitz_bound(self, k):
        lam = self._lam(k)
        return (abs(2.0 - lam) * math.sqrt(self._tau * self._sigma) * self._norm_v
                + self._tau * self._delta) / self._den

    def kernel_eval(self, k, x):
        y, z = self._space.split(x)
        top = y / self._tau - self._v.apply_adjoint(z)
        if self._e is not None:
            top = top - self._e(y)
        bottom = (1.0 - self._lam(k)) * self._v.apply(y) + z / self._sigma
        return self._space.join(top, bottom)

    def kernel_resolvent(self, k, p):
        py, pz = self._space.split(p)
        y_new = self._b.resolvent(self._tau, self._tau * py)
        w = self._sigma * pz
        lam = self._lam(k)
        if lam != 0.0:
            w = w + self._sigma * lam * self._v.apply(y_new)
        z_new = resolvent_of_inverse(self._d, self._sigma, w)
        return self._space.join(y_new, z_new)

    def correction_eval(self, k, x):
        y, _ = self._space.split(x)
        coeff = self._tau * (2.0 - self._lam(k))
        if self._e is None and coeff == 0.0:
            return CorrectionValue.zero(self._space.dim)
        top = -self._tau * self._e(y) if self._e is not None else np.zeros(self._space.dim_primal)
        bottom = coeff * self._v.apply(y) if coeff != 0.0 else np.zeros(self._space.dim_dual)
        return CorrectionValue(self._space.join(top, bottom))


def _stacked_forward(f_op, space, ell):
    def eval_fn(x):
        y, _ = space.split(x)
        return space.join(f_op(y), np.zeros(space.dim_dual))
    return SingleValuedOp(eval_fn, ell, cocoercivity=ell if ell > 0 else None,
                          descriptor=f"({f_op.descriptor}, 0)")


def build_pd_triangular(pd, config, name=None):
    """Primal-dual scheme with lower block-triangular backward map.

    The dual extrapolation ``lambda_k`` controls how the dual update sees the
    primal progress: 2 reproduces the classic hybrid-gradient coupling, 0
    decouples the two resolvents within an iteration.  Requires
    tau*sigma*|V|^2 < 1.
    """
    tau, sigma = float(config.tau), float(config.sigma)
    if tau <= 0 or sigma <= 0:
        raise ValueError("tau and sigma must be > 0")
    if config.theta >= 1.0:
        raise ValueError("theta must be < 1")
    norm_v = pd.norm_v_value()
    if tau * sigma * norm_v ** 2 >= 1.0:
        raise StepSizeError("tau*sigma*|V|^2 < 1",
                            f"got {tau * sigma * norm_v ** 2:.6g}")
    lam = config.lam_fn()
    sp = pd.space
    v_memo = MemoLinear(pd.v_op, slots=4)
    e_memo = MemoSingle(pd.e_op) if pd.e_op is not None else None
    d_memo = MemoSetValued(pd.d_op, slots=4)
    f_memo = MemoSingle(pd.f_op) if pd.f_op is not None else None
    b_op = pd.b_op if pd.b_op is not None else prox_catalog("zero")

    metric = _TriMetric(sp, v_memo, tau, sigma, norm_v)
    schedule = _PdTriSchedule(sp, b_op, d_memo, e_memo, v_memo, tau, sigma,
                              lam, pd.delta, norm_v)
    schedule.is_stationary = config.lam_is_constant()
    den = 1.0 - tau * sigma * norm_v ** 2
    ell = pd.beta / den if pd.f_op is not None else 0.0
    forward = _stacked_forward(f_memo, sp, ell) if f_memo is not None else None
    problem = InclusionProblem(forward=forward, ell=ell,
                               descriptor=name or "pd_triangular")
    shift = config.theta + 2.0 * abs(config.theta)
    delta, beta = pd.delta, pd.beta

    def corollary_margin(k):
        extrap = (abs(2.0 - lam(k)) + abs(2.0 - lam(k + 1))) * math.sqrt(tau * sigma) * norm_v
        return (1.0 - shift * den) - (tau * sigma * norm_v ** 2 + extrap
                                      + tau * (2.0 * delta + beta / 2.0))

    def initial_u(x0, x_prev):
        if np.array_equal(x0, x_prev):
            return None
        lam_prev = lam(-1) if _lam_defined_at(lam, -1) else lam(0)
        saved = schedule._lam
        schedule._lam = lambda k: lam_prev
        try:
            u = schedule.correction_eval(-1, x0) - schedule.correction_eval(-1, x_prev)
        finally:
            schedule._lam = saved
        return u

    return MethodInstance(name=name or "pd_triangular", schedule=schedule,
                          metric=metric, problem=problem, theta=config.theta,
                          space=sp,
                          pieces={"B": b_op, "D": d_memo, "E": e_memo,
                                  "F": f_memo, "V": v_memo},
                          corollary_margin=corollary_margin, margin_scale=den,
                          epsilon=config.epsilon, initial_u=initial_u)


def _lam_defined_at(lam, k):
    try:
        lam(k)
        return True
    except Exception:
        return False


def _is_identity_linear(v_op, dim):
    if v_op.dim_in != v_op.dim_out or v_op.dim_in != dim:
        return False
    rng = np.random.Generator(np.random.Philox(1234))
    for _ in range(3):
        x = rng.standard_normal(dim)
        if np.max(np.abs(v_op.apply(x) - x)) != 0.0:
            return False
    return True


def fhrdr_margin(tau, varsigma, delta=0.0, beta=0.0):
    """Closed-form step-size margin 1 - tau*(1/varsigma + 2*delta + beta/2)."""
    return 1.0 - tau * (1.0 / varsigma + 2.0 * delta + beta / 2.0)


def build_fhrdr(pd, tau, varsigma, theta=0.0, epsilon=1e-6, name=None):
    """Douglas-Rachford-style rewrite of the triangular scheme for V = Id.

    A thin rewrite of :func:`build_pd_triangular` with lambda = 2 and
    sigma = 1/varsigma; the dual resolvent is evaluated through the
    inverse-operator route, which is exactly the variable change relating
    the two formulations.  Requires tau*(1/varsigma + 2*delta + beta/2) < 1.
    """
    if varsigma <= 0:
        raise ValueError("varsigma must be > 0")
    if not _is_identity_linear(pd.v_op, pd.space.dim_primal):
        raise ValueError("this scheme requires the coupling V to be the identity")
    pd = replace(pd, norm_v=1.0)
    config = PdTriConfig(tau=tau, sigma=1.0 / varsigma, lam=2.0, theta=theta,
                         epsilon=epsilon)
    inst = build_pd_triangular(pd, config, name=name or "fhrdr")

    def corollary_margin(k, tau=tau, varsigma=varsigma, pd=pd,
                         shift=theta + 2.0 * abs(theta)):
        den = 1.0 - tau / varsigma
        return fhrdr_margin(tau, varsigma, pd.delta, pd.beta) - shift * den

    inst.corollary_margin = corollary_margin
    return inst


# ---------------------------------------------------------------------------
# primal-dual with resolvent-compensated kernel


class _PdResSchedule(KernelSchedule):
    """Kernel containing a dual resolvent built from the current iterate.

    The top-left block is tau^{-1} Id - V* o (Id + sigma D^{-1})^{-1} o
    T_{-t_k} o sigma V with t_k = z_k + theta (z_k - z_{k-1}); the backward
    map is only evaluated at the iteration's own forward point, whose dual
    component equals sigma^{-1} t_k, which is what makes it computable.
    Correction values keep the V* factor pending so the loop applies it once
    per iteration to the combined correction-plus-history vector.
    """

    is_stationary = True

    def __init__(self, space, b_op, d_op, e_op, v_op, tau, sigma, delta, norm_v):
        self._space = space
        self._b = b_op
        self._d = d_op
        self._e = e_op
        self._v = v_op
        self._tau = float(tau)
        self._sigma = float(sigma)
        self._delta = float(delta)
        self._norm_v = float(norm_v)
        self._t = None
        self._dual_cache = {}

        def adjoint_embed(g, v=v_op, sp=space):
            return sp.embed_primal(v.apply_adjoint(g))

        self._adjoint_embed = adjoint_embed

    def begin_solve(self):
        self._t = None
        self._dual_cache.clear()

    def gamma(self, k):
        return self._tau

    def lipschitz_bound(self, k):
        return self._tau * self._delta + self._tau * self._sigma * self._norm_v ** 2

    def bind_iteration(self, k, x, x_prev, theta):
        _, z = self._space.split(x)
        if theta != 0.0:
            _, z_prev = self._space.split(x_prev)
            t = z + theta * (z - z_prev)
        else:
            t = z
        if self._t is None or not np.array_equal(t, self._t):
            self._t = t
            self._dual_cache.clear()

    def _dual_resolvent(self, y):
        """(Id + sigma D^{-1})^{-1}(t_k + sigma V y), reused within the iteration."""
        key = y.tobytes()
        hit = self._dual_cache.get(key)
        if hit is None:
            w = self._t + self._sigma * self._v.apply(y)
            hit = resolvent_of_inverse(self._d, self._sigma, w)
            self._dual_cache[key] = hit
            if len(self._dual_cache) > 6:
                self._dual_cache.pop(next(iter(self._dual_cache)))
        return hit

    def kernel_eval(self, k, x):
        y, z = self._space.split(x)
        top = y / self._tau - self._v.apply_adjoint(self._dual_resolvent(y))
        if self._e is not None:
            top = top - self._e(y)
        return self._space.join(top, z / self._sigma)

    def kernel_resolvent(self, k, p):
        py, _ = self._space.split(p)
        y_new = self._b.resolvent(self._tau, self._tau * py)
        z_new = self._dual_resolvent(y_new)
        return self._space.join(y_new, z_new)

    def correction_eval(self, k, x):
        y, _ = self._space.split(x)
        if self._e is not None:
            dense = self._space.embed_primal(-self._tau * self._e(y))
        else:
            dense = np.zeros(self._space.dim)
        return CorrectionValue(dense, pending=-self._tau * self._dual_resolvent(y),
                               pending_map=self._adjoint_embed)


def build_pd_resolvent_compensated(pd, config, name=None):
    """Primal-dual scheme whose kernel includes an extra dual resolvent.

    Per steady-state iteration this costs two dual resolvents, one primal
    resolvent, and one application each of V and V* (the image of the new
    primal iterate under V is stored for the next iteration).  The scaling
    is block diagonal, so it is positive for all tau, sigma > 0; the
    convergence certificate is 2*tau*sigma*|V|^2 + tau*(2*delta + beta/2) < 1.
    """
    tau, sigma = float(config.tau), float(config.sigma)
    if tau <= 0 or sigma <= 0:
        raise ValueError("tau and sigma must be > 0")
    if config.theta >= 1.0:
        raise ValueError("theta must be < 1")
    sp = pd.space
    norm_v = pd.norm_v_value()
    v_memo = MemoLinear(pd.v_op, slots=4)
    e_memo = MemoSingle(pd.e_op) if pd.e_op is not None else None
    d_memo = MemoSetValued(pd.d_op, slots=4)
    f_memo = MemoSingle(pd.f_op) if pd.f_op is not None else None
    b_op = pd.b_op if pd.b_op is not None else prox_catalog("zero")

    weights = np.concatenate([np.ones(sp.dim_primal),
                              (tau / sigma) * np.ones(sp.dim_dual)])
    metric = Metric.diagonal(weights)
    metric.descriptor = "primal-dual block-diagonal metric"
    schedule = _PdResSchedule(sp, b_op, d_memo, e_memo, v_memo, tau, sigma,
                              pd.delta, norm_v)
    ell = pd.beta if pd.f_op is not None else 0.0
    forward = _stacked_forward(f_memo, sp, ell) if f_memo is not None else None
    problem = InclusionProblem(forward=forward, ell=ell,
                               descriptor=name or "pd_resolvent_compensated")
    shift = config.theta + 2.0 * abs(config.theta)
    delta, beta = pd.delta, pd.beta

    def corollary_margin(k):
        return (1.0 - shift) - (2.0 * tau * sigma * norm_v ** 2
                                + tau * (2.0 * delta + beta / 2.0))

    return MethodInstance(name=name or "pd_resolvent_compensated",
                          schedule=schedule, metric=metric, problem=problem,
                          theta=config.theta, space=sp,
                          pieces={"B": b_op, "D": d_memo, "E": e_memo,
                                  "F": f_memo, "V": v_memo},
                          corollary_margin=corollary_margin, margin_scale=1.0,
                          epsilon=config.epsilon)


# ---------------------------------------------------------------------------
# three-operator view of a primal-dual problem (for the half-reflected family)


def saddle_view(pd, fold_cocoercive=False):
    """Rewrite a primal-dual problem as 0 in B x + D x + C x on K x G.

    B stacks the two resolvent-capable blocks, D collects the skew coupling
    (plus E, plus F when ``fold_cocoercive``), and C keeps F cocoercive
    otherwise.  Constants follow by the triangle inequality.
    """
    sp = pd.space
    b_stack = product_setvalued(pd.b_op if pd.b_op is not None else prox_catalog("zero"),
                                inverse_of(pd.d_op), sp)
    norm_v = pd.norm_v_value()
    fold_f = fold_cocoercive and pd.f_op is not None

    def d_eval(x):
        y, z = sp.split(x)
        top = pd.v_op.apply_adjoint(z)
        if pd.e_op is not None:
            top = top + pd.e_op(y)
        if fold_f:
            top = top + pd.f_op(y)
        return sp.join(top, -pd.v_op.apply(y))

    delta_hat = norm_v + pd.delta + (pd.beta if fold_f else 0.0)
    d_single = SingleValuedOp(d_eval, delta_hat, descriptor="skew coupling + drift")
    if fold_f or pd.f_op is None:
        c_hat, beta_hat = None, 0.0
    else:
        c_hat = _stacked_forward(pd.f_op, sp, pd.beta)
        beta_hat = pd.beta
    return {"b": b_stack, "d": d_single, "c": c_hat,
            "delta": delta_hat, "beta": beta_hat, "dim": sp.dim}


# ---------------------------------------------------------------------------
# preset registry


@dataclass
class Preset:
    """A named method template: builder plus parameter schema and certificate."""

    name: str
    summary: str
    schema: dict
    certificate_text: str
    build: object          # callable(problem_like, params) -> MethodInstance


def _params_with_defaults(preset, params):
    params = dict(params or {})
    unknown = set(params) - set(preset.schema)
    if unknown:
        raise ValueError(f"unknown parameters for preset {preset.name!r}: {sorted(unknown)}")
    out = {}
    for key, (default, _doc) in preset.schema.items():
        if key in params:
            out[key] = params[key]
        elif default is None:
            raise ValueError(f"preset {preset.name!r} requires parameter {key!r}")
        else:
            out[key] = default
    return out


def _build_fb(problem, p):
    inc = problem.as_inclusion()
    return build_forward_backward(inc["a"], inc["c"], inc["beta"], p["gamma"],
                                  inc["dim"], epsilon=p["epsilon"])


def _three_op_pieces(problem, fold_cocoercive):
    if problem.has_pd:
        return saddle_view(problem.as_pd(), fold_cocoercive=fold_cocoercive)
    inc = problem.as_inclusion()
    if fold_cocoercive and inc["c"] is not None:
        # fold the cocoercive term into the Lipschitz half-reflected part
        return {"b": inc["a"], "d": inc["c"], "c": None,
                "delta": inc["c"].lipschitz, "beta": 0.0, "dim": inc["dim"]}
    return {"b": inc["a"], "d": None, "c": inc["c"], "delta": 0.0,
            "beta": inc["beta"], "dim": inc["dim"]}


def _build_fhrb_preset(problem, p, fold_cocoercive=False, force_theta=None,
                       name=None):
    pieces = _three_op_pieces(problem, fold_cocoercive)
    theta = p.get("theta", 0.0) if force_theta is None else force_theta
    config = FhrbConfig(alpha=p["alpha"], delta=pieces["delta"],
                        beta=pieces["beta"], theta=theta, epsilon=p["epsilon"])
    inst = build_fhrb(pieces["b"], pieces["d"], pieces["c"], pieces["dim"],
                      config, name=name)
    if problem.has_pd:
        inst.space = problem.as_pd().space
    return inst


def _build_pd_tri_preset(problem, p, lam, name, require_no_e=False,
                         require_no_f=False):
    pd = problem.as_pd(variant="cp" if require_no_f else "default")
    if require_no_e and pd.e_op is not None:
        raise ValueError(f"preset {name} requires a problem without a drift term E")
    if require_no_f and pd.f_op is not None:
        raise ValueError(f"preset {name} requires a problem without a smooth term F")
    config = PdTriConfig(tau=p["tau"], sigma=p["sigma"], lam=lam,
                         theta=p.get("theta", 0.0), epsilon=p["epsilon"])
    return build_pd_triangular(pd, config, name=name)


def _build_fhrdr_preset(problem, p, name, require_no_f=False):
    pd = problem.as_pd(variant="cp" if require_no_f else "default")
    if require_no_f and pd.f_op is not None:
        raise ValueError(f"preset {name} requires a problem without a smooth term F")
    return build_fhrdr(pd, p["tau"], p["varsigma"], theta=p.get("theta", 0.0),
                       epsilon=p["epsilon"], name=name)


def _build_pd_res_preset(problem, p):
    pd = problem.as_pd()
    config = PdResConfig(tau=p["tau"], sigma=p["sigma"],
                         theta=p.get("theta", 0.0), epsilon=p["epsilon"])
    return build_pd_resolvent_compensated(pd, config)


_EPS = (1e-6, "certificate strictness epsilon")

PRESETS = {
    "forward_backward": Preset(
        "forward_backward",
        "plain forward-backward splitting (zero correction)",
        {"gamma": (1.0, "step size"), "epsilon": _EPS},
        "gamma*beta/2 <= 1 - eps",
        _build_fb),
    "frb": Preset(
        "frb",
        "reflected scheme with the cocoercive term folded into the kernel",
        {"alpha": (None, "step size"), "epsilon": _EPS},
        "alpha_k*delta + alpha_{k+1}*delta <= 1 - eps",
        lambda pr, p: _build_fhrb_preset(pr, p, fold_cocoercive=True,
                                         force_theta=0.0, name="frb")),
    "fhrb": Preset(
        "fhrb",
        "half-reflected scheme keeping the cocoercive term forward",
        {"alpha": (None, "step size"), "epsilon": _EPS},
        "alpha_k*delta + alpha_{k+1}*(delta + beta/2) <= 1 - eps",
        lambda pr, p: _build_fhrb_preset(pr, p, force_theta=0.0, name="fhrb")),
    "fhrb_momentum": Preset(
        "fhrb_momentum",
        "half-reflected scheme with additional momentum",
        {"alpha": (None, "step size"), "theta": (None, "momentum, < 1"),
         "epsilon": _EPS},
        "alpha_k*delta + alpha_{k+1}*(delta + beta/2) <= 1 - theta - 2|theta| - eps",
        lambda pr, p: _build_fhrb_preset(pr, p, name="fhrb_momentum")),
    "chambolle_pock": Preset(
        "chambolle_pock",
        "primal-dual hybrid gradient (no drift, no smooth term, lambda = 2)",
        {"tau": (None, "primal step"), "sigma": (None, "dual step"),
         "epsilon": _EPS},
        "tau*sigma*|V|^2 < 1 - eps",
        lambda pr, p: _build_pd_tri_preset(pr, p, 2.0, "chambolle_pock",
                                           require_no_e=True, require_no_f=True)),
    "vu_condat": Preset(
        "vu_condat",
        "primal-dual hybrid gradient with a cocoercive term (lambda = 2)",
        {"tau": (None, "primal step"), "sigma": (None, "dual step"),
         "epsilon": _EPS},
        "tau*sigma*|V|^2 + tau*beta/2 < 1 - eps",
        lambda pr, p: _build_pd_tri_preset(pr, p, 2.0, "vu_condat",
                                           require_no_e=True)),
    "pd_triangular": Preset(
        "pd_triangular",
        "block-triangular primal-dual scheme with dual extrapolation lambda_k",
        {"tau": (None, "primal step"), "sigma": (None, "dual step"),
         "lam": (1.5, "dual extrapolation (constant or cycled list)"),
         "theta": (0.0, "momentum, < 1"), "epsilon": _EPS},
        "tau*sigma*|V|^2 + (|2-lambda_k| + |2-lambda_{k+1}|)*sqrt(tau*sigma)*|V|"
        " + tau*(2*delta + beta/2) < 1 - eps",
        lambda pr, p: _build_pd_tri_preset(pr, p, p["lam"], "pd_triangular")),
    "pd_projective_style": Preset(
        "pd_projective_style",
        "decoupled variant (lambda = 0): primal and dual resolvents independent",
        {"tau": (None, "primal step"), "sigma": (None, "dual step"),
         "epsilon": _EPS},
        "tau*sigma*|V|^2 + 4*sqrt(tau*sigma)*|V| + tau*(2*delta + beta/2) < 1 - eps",
        lambda pr, p: _build_pd_tri_preset(pr, p, 0.0, "pd_projective_style")),
    "frdr": Preset(
        "frdr",
        "reflected Douglas-Rachford rewrite (V = Id, no smooth term)",
        {"tau": (None, "primal step"), "varsigma": (None, "dual step"),
         "epsilon": _EPS},
        "tau*(1/varsigma + 2*delta) < 1 - eps",
        lambda pr, p: _build_fhrdr_preset(pr, p, "frdr", require_no_f=True)),
    "fhrdr": Preset(
        "fhrdr",
        "half-reflected Douglas-Rachford rewrite (V = Id)",
        {"tau": (None, "primal step"), "varsigma": (None, "dual step"),
         "theta": (0.0, "momentum, < 1"), "epsilon": _EPS},
        "tau*(1/varsigma + 2*delta + beta/2) < 1 - eps",
        lambda pr, p: _build_fhrdr_preset(pr, p, "fhrdr")),
    "pd_resolvent_compensated": Preset(
        "pd_resolvent_compensated",
        "primal-dual scheme with an extra dual resolvent inside the kernel",
        {"tau": (None, "primal step"), "sigma": (None, "dual step"),
         "theta": (0.0, "momentum, < 1"), "epsilon": _EPS},
        "2*tau*sigma*|V|^2 + tau*(2*delta + beta/2) < 1 - eps",
        _build_pd_res_preset),
}


def preset(name):
    """Look up a preset by name; raises on unknown names."""
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    return PRESETS[name]


def build_preset(name, problem, params=None):
    """Build a MethodInstance from a preset, validating parameters first."""
    spec = preset(name)
    p = _params_with_defaults(spec, params)
    return spec.build(problem, p)
