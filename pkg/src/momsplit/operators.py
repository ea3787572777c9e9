"""Operator algebra for monotone inclusions.

Three operator families drive everything downstream:

* ``SetValuedOp``       -- maximally monotone, known through its resolvent
                           ``(Id + step*A)^{-1}``;
* ``SingleValuedOp``    -- single-valued with declared Lipschitz and optional
                           cocoercivity constants;
* ``LinearOp``          -- bounded linear map with adjoint.

Resolvents of inverse operators are never implemented directly: they are
always routed through Moreau's identity using the resolvent of the original
operator (see ``resolvent_of_inverse``).

Declared constants are inputs, not inferred quantities;
``verify_operator_properties`` is a randomized falsification tool only.
"""

import numpy as np
import scipy.linalg

from .space import as_vector, inner_s, norm_s


class SetValuedOp:
    """Maximally monotone operator accessed through its resolvent.

    Parameters
    ----------
    resolvent : callable
        ``resolvent(step, point)`` computing ``(Id + step * A)^{-1}(point)``
        for ``step > 0``.
    descriptor : str
        Human-readable identity.
    """

    def __init__(self, resolvent, descriptor="set-valued"):
        self._resolvent = resolvent
        self.descriptor = descriptor

    def resolvent(self, step, point):
        if step <= 0:
            raise ValueError("resolvent step must be > 0")
        return self._resolvent(step, np.asarray(point, dtype=float))

    def __repr__(self):
        return f"SetValuedOp({self.descriptor})"


class SingleValuedOp:
    """Single-valued operator with declared constants w.r.t. a metric.

    ``lipschitz`` is the constant L in |Tx - Ty|_{S^-1} <= L |x - y|_S and
    ``cocoercivity`` is the constant ell such that T is ell^-1-cocoercive
    (None for merely Lipschitz operators).  The metric the constants refer
    to is whatever the caller pairs the operator with; the catalog ships
    constants for the identity metric.
    """

    def __init__(self, eval_fn, lipschitz, cocoercivity=None,
                 descriptor="single-valued"):
        if lipschitz < 0:
            raise ValueError("Lipschitz constant must be >= 0")
        if cocoercivity is not None and cocoercivity < 0:
            raise ValueError("cocoercivity constant must be >= 0")
        self._eval = eval_fn
        self.lipschitz = float(lipschitz)
        self.cocoercivity = None if cocoercivity is None else float(cocoercivity)
        self.descriptor = descriptor

    def __call__(self, x):
        return self._eval(np.asarray(x, dtype=float))

    def __repr__(self):
        return f"SingleValuedOp({self.descriptor})"


class LinearOp:
    """Bounded linear map V with adjoint and a certified norm upper bound."""

    def __init__(self, apply, apply_adjoint, dim_in, dim_out,
                 norm_bound=None, matrix=None, descriptor="linear"):
        self._apply = apply
        self._adjoint = apply_adjoint
        self.dim_in = int(dim_in)
        self.dim_out = int(dim_out)
        self.norm_bound = None if norm_bound is None else float(norm_bound)
        self._matrix = matrix
        self.descriptor = descriptor

    def apply(self, x):
        return self._apply(np.asarray(x, dtype=float))

    def apply_adjoint(self, z):
        return self._adjoint(np.asarray(z, dtype=float))

    def __call__(self, x):
        return self.apply(x)

    def to_dense(self):
        """Materialize the matrix; columns via basis vectors if not stored."""
        if self._matrix is not None:
            return np.asarray(self._matrix, dtype=float)
        cols = np.empty((self.dim_out, self.dim_in))
        e = np.zeros(self.dim_in)
        for j in range(self.dim_in):
            e[j] = 1.0
            cols[:, j] = self._apply(e)
            e[j] = 0.0
        return cols

    @classmethod
    def from_matrix(cls, mat, norm_bound=None, descriptor="matrix"):
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2:
            raise ValueError("expected a 2-D matrix")
        return cls(lambda x, mat=mat: mat @ x,
                   lambda z, mat=mat: mat.T @ z,
                   mat.shape[1], mat.shape[0],
                   norm_bound=norm_bound, matrix=mat, descriptor=descriptor)

    @classmethod
    def identity(cls, dim):
        return cls(lambda x: x, lambda z: z, dim, dim,
                   norm_bound=1.0, descriptor="identity")

    def __repr__(self):
        return f"LinearOp({self.descriptor}, {self.dim_in}->{self.dim_out})"


# ---------------------------------------------------------------------------
# proximal-map catalog


def _soft_threshold(weight):
    def resolvent(step, p):
        t = step * weight
        return np.sign(p) * np.maximum(np.abs(p) - t, 0.0)
    return resolvent


def prox_catalog(name, **params):
    """Construct a cataloged maximally monotone operator.

    Supported names: ``zero``, ``l1``, ``box_indicator``, ``quadratic``,
    ``affine_subspace``, ``subdifferential_abs``.  The returned operator's
    resolvent is the analytic proximal map.
    """
    if name == "zero":
        _reject_params(name, params, ())
        return SetValuedOp(lambda step, p: p, descriptor="zero")

    if name in ("l1", "subdifferential_abs"):
        weight = float(params.pop("weight", 1.0))
        _reject_params(name, params, ())
        if weight < 0:
            raise ValueError("l1 weight must be >= 0")
        label = "l1" if name == "l1" else "subgradient of weight*|.|"
        return SetValuedOp(_soft_threshold(weight),
                           descriptor=f"{label}(weight={weight})")

    if name == "box_indicator":
        lower = params.pop("lower", -np.inf)
        upper = params.pop("upper", np.inf)
        _reject_params(name, params, ())
        lower, upper = np.asarray(lower, float), np.asarray(upper, float)
        if np.any(lower > upper):
            raise ValueError("box_indicator requires lower <= upper")
        return SetValuedOp(lambda step, p: np.clip(p, lower, upper),
                           descriptor=f"box[{lower}, {upper}]")

    if name == "quadratic":
        q = np.asarray(params.pop("q"), dtype=float)
        b = params.pop("b", None)
        _reject_params(name, params, ())
        if q.ndim == 0:
            q = q.reshape(1, 1)
        if q.shape[0] != q.shape[1]:
            raise ValueError("quadratic form matrix must be square")
        if np.max(np.abs(q - q.T)) > 1e-10 * (1.0 + np.max(np.abs(q))):
            raise ValueError("quadratic form matrix must be symmetric")
        q = 0.5 * (q + q.T)
        if np.linalg.eigvalsh(q)[0] < -1e-10 * (1.0 + np.max(np.abs(q))):
            raise ValueError("quadratic form matrix must be positive semidefinite")
        b = np.zeros(q.shape[0]) if b is None else as_vector(b, q.shape[0])
        factors = {}

        def resolvent(step, p, q=q, b=b, factors=factors):
            # x + step*(Qx - b) = p  =>  (I + step*Q) x = p + step*b
            key = float(step)
            if key not in factors:
                factors[key] = scipy.linalg.cho_factor(
                    np.eye(q.shape[0]) + step * q)
            return scipy.linalg.cho_solve(factors[key], p + step * b)

        return SetValuedOp(resolvent, descriptor=f"quadratic(dim={q.shape[0]})")

    if name == "affine_subspace":
        mat = np.asarray(params.pop("matrix"), dtype=float)
        rhs = params.pop("rhs", None)
        _reject_params(name, params, ())
        if mat.ndim != 2:
            raise ValueError("affine_subspace matrix must be 2-D")
        rhs = np.zeros(mat.shape[0]) if rhs is None else as_vector(rhs, mat.shape[0])
        pinv = np.linalg.pinv(mat)
        feas = pinv @ rhs
        if np.linalg.norm(mat @ feas - rhs) > 1e-8 * (1.0 + np.linalg.norm(rhs)):
            raise ValueError("affine_subspace constraint is infeasible")

        # Resolvent of the normal cone is the projection, for any step.
        def resolvent(step, p, mat=mat, pinv=pinv, rhs=rhs):
            return p - pinv @ (mat @ p - rhs)

        return SetValuedOp(resolvent, descriptor="affine-subspace normal cone")

    raise ValueError(f"unknown prox_catalog name: {name!r}")


def _reject_params(name, params, allowed):
    extra = set(params) - set(allowed)
    if extra:
        raise ValueError(f"invalid parameters for {name!r}: {sorted(extra)}")


def resolvent_of_inverse(op, sigma, point):
    """Resolvent of the inverse operator via Moreau's identity.

    Computes ``(Id + sigma * D^{-1})^{-1}(point)`` as
    ``point - sigma * (Id + sigma^{-1} D)^{-1}(sigma^{-1} point)``; the only
    resolvent evaluated is the one of ``D`` itself.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    point = np.asarray(point, dtype=float)
    inner = op.resolvent(1.0 / sigma, point / sigma)
    return point - sigma * inner


def inverse_of(op, descriptor=None):
    """Present ``D^{-1}`` as a ``SetValuedOp`` (resolvent through Moreau)."""
    label = descriptor or f"inverse({op.descriptor})"
    return SetValuedOp(lambda step, p, op=op: resolvent_of_inverse(op, step, p),
                       descriptor=label)


def product_setvalued(op_primal, op_dual, space, descriptor=None):
    """Blockwise resolvent on a :class:`~momsplit.space.PairSpace`."""
    label = descriptor or f"({op_primal.descriptor} x {op_dual.descriptor})"

    def resolvent(step, p):
        y, z = space.split(p)
        return space.join(op_primal.resolvent(step, y),
                          op_dual.resolvent(step, z))

    return SetValuedOp(resolvent, descriptor=label)


# ---------------------------------------------------------------------------
# operator-norm estimation


def estimate_operator_norm(op, iterations=200, seed=0):
    """Power-iteration upper estimate of |V| = sqrt(lambda_max(V* V)).

    The raw power-iteration value is a lower bound; the returned value is
    inflated by a factor 1 + 1e-3 so step-size conditions built on it stay
    conservative.  Deterministic for a fixed seed.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    if op.dim_in < 1 or op.dim_out < 1:
        raise ValueError("zero-dimensional operator")
    rng = np.random.Generator(np.random.Philox(seed))
    v = rng.standard_normal(op.dim_in)
    nv = np.linalg.norm(v)
    if nv == 0.0:
        v = np.ones(op.dim_in)
        nv = np.linalg.norm(v)
    v /= nv
    est = 0.0
    for _ in range(iterations):
        w = op.apply_adjoint(op.apply(v))
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        est = np.sqrt(nw)
        v = w / nw
    return float(est) * (1.0 + 1e-3)


# ---------------------------------------------------------------------------
# randomized falsification of declared constants


class PropertyReport:
    """Worst observed margins from randomized operator probing."""

    def __init__(self, descriptor, trials):
        self.descriptor = descriptor
        self.trials = trials
        self.worst_lipschitz_ratio = 0.0
        self.cocoercivity_margin = np.inf
        self.monotonicity_margin = np.inf
        self.firm_nonexpansiveness_margin = np.inf
        self.violations = []

    @property
    def ok(self):
        return not self.violations

    def __repr__(self):
        status = "ok" if self.ok else f"violations={self.violations}"
        return f"PropertyReport({self.descriptor}, {status})"


_SLACK = 1e-8


def verify_operator_properties(op, metric=None, trials=1000, seed=0,
                               monotone=True):
    """Probe declared operator constants on random pairs; report violations.

    For a ``SingleValuedOp`` with metric S the probes check the declared
    Lipschitz bound |Tx - Ty|_{S^-1} <= (L + slack) |x - y|_S, the declared
    cocoercivity margin and (optionally) plain monotonicity.  For a
    ``SetValuedOp`` the probes check firm nonexpansiveness of the resolvent.
    This is falsification only: passing proves nothing beyond the probes.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.Generator(np.random.Philox(seed))
    report = PropertyReport(op.descriptor, trials)

    if isinstance(op, SetValuedOp):
        dim = metric.dim if metric is not None else 1
        for _ in range(trials):
            step = float(rng.uniform(0.1, 2.0))
            p = rng.standard_normal(dim) * rng.uniform(0.1, 5.0)
            q = rng.standard_normal(dim) * rng.uniform(0.1, 5.0)
            jp, jq = op.resolvent(step, p), op.resolvent(step, q)
            d = jp - jq
            margin = float(np.dot(d, p - q) - np.dot(d, d))
            report.firm_nonexpansiveness_margin = min(
                report.firm_nonexpansiveness_margin, margin)
            if margin < -_SLACK * (1.0 + np.dot(p - q, p - q)):
                report.violations.append(
                    f"resolvent not firmly nonexpansive: margin {margin:.3e}")
        return report

    if metric is None:
        raise ValueError("a metric is required to probe a single-valued operator")

    ell_inv = None
    if op.cocoercivity is not None and op.cocoercivity > 0:
        ell_inv = 1.0 / op.cocoercivity
    for _ in range(trials):
        x = rng.standard_normal(metric.dim) * rng.uniform(0.1, 5.0)
        y = rng.standard_normal(metric.dim) * rng.uniform(0.1, 5.0)
        tx, ty = op(x), op(y)
        dt, dx = tx - ty, x - y
        dist_s = norm_s(metric, dx)
        dist_t = metric.inv_norm(dt) if not metric.is_identity else float(np.linalg.norm(dt))
        if dist_s > 0:
            ratio = dist_t / dist_s
            report.worst_lipschitz_ratio = max(report.worst_lipschitz_ratio, ratio)
            if ratio > op.lipschitz + _SLACK:
                report.violations.append(
                    f"Lipschitz bound {op.lipschitz} violated: ratio {ratio:.6e}")
        inprod = float(np.dot(dt, dx))
        if monotone:
            report.monotonicity_margin = min(report.monotonicity_margin, inprod)
            if inprod < -_SLACK * (1.0 + dist_s ** 2):
                report.violations.append(f"monotonicity violated: {inprod:.3e}")
        if ell_inv is not None:
            margin = inprod - (ell_inv - _SLACK) * dist_t ** 2
            report.cocoercivity_margin = min(report.cocoercivity_margin, margin)
            if margin < -_SLACK * (1.0 + dist_t ** 2):
                report.violations.append(
                    f"cocoercivity 1/{op.cocoercivity} violated: margin {margin:.3e}")
    return report


# ---------------------------------------------------------------------------
# instrumentation: evaluation counting and value reuse


class EvalCounter:
    """Shared evaluation tally, keyed by operator label."""

    def __init__(self):
        self.counts = {}

    def hit(self, key):
        self.counts[key] = self.counts.get(key, 0) + 1

    def get(self, key):
        return self.counts.get(key, 0)

    def reset(self):
        self.counts.clear()

    def snapshot(self):
        return dict(self.counts)


class CountedLinear(LinearOp):
    """LinearOp wrapper that tallies underlying apply/adjoint evaluations."""

    def __init__(self, op, counter, key):
        super().__init__(op._apply, op._adjoint, op.dim_in, op.dim_out,
                         norm_bound=op.norm_bound, matrix=op._matrix,
                         descriptor=op.descriptor)
        self._counter = counter
        self._key = key

    def apply(self, x):
        self._counter.hit(self._key)
        return super().apply(x)

    def apply_adjoint(self, z):
        self._counter.hit(self._key + "*")
        return super().apply_adjoint(z)


class CountedSetValued(SetValuedOp):
    def __init__(self, op, counter, key):
        super().__init__(op._resolvent, descriptor=op.descriptor)
        self._counter = counter
        self._key = key

    def resolvent(self, step, point):
        self._counter.hit(self._key)
        return super().resolvent(step, point)


class CountedSingle(SingleValuedOp):
    def __init__(self, op, counter, key):
        super().__init__(op._eval, op.lipschitz, op.cocoercivity,
                         descriptor=op.descriptor)
        self._counter = counter
        self._key = key

    def __call__(self, x):
        self._counter.hit(self._key)
        return super().__call__(x)


class _MemoTable:
    """Tiny exact-match memo (byte-keyed); models 'store and reuse' caching."""

    def __init__(self, slots):
        self.slots = slots
        self.items = []

    def get(self, key):
        for k, v in self.items:
            if k == key:
                return v
        return None

    def put(self, key, value):
        self.items.append((key, value))
        if len(self.items) > self.slots:
            self.items.pop(0)
        return value


class MemoLinear(LinearOp):
    """Reuses the last few apply/adjoint results (exact argument match).

    This is the storage the per-iteration cost claims rely on: applying the
    operator twice to the same stored iterate costs one evaluation.
    """

    def __init__(self, op, slots=3):
        super().__init__(op.apply, op.apply_adjoint, op.dim_in, op.dim_out,
                         norm_bound=op.norm_bound, matrix=op._matrix,
                         descriptor=op.descriptor)
        self._fwd = _MemoTable(slots)
        self._adj = _MemoTable(slots)

    def apply(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        hit = self._fwd.get(key)
        if hit is None:
            hit = self._fwd.put(key, super().apply(x))
        return hit

    def apply_adjoint(self, z):
        key = np.asarray(z, dtype=float).tobytes()
        hit = self._adj.get(key)
        if hit is None:
            hit = self._adj.put(key, super().apply_adjoint(z))
        return hit


class MemoSingle(SingleValuedOp):
    def __init__(self, op, slots=3):
        super().__init__(op.__call__, op.lipschitz, op.cocoercivity,
                         descriptor=op.descriptor)
        self._memo = _MemoTable(slots)

    def __call__(self, x):
        key = np.asarray(x, dtype=float).tobytes()
        hit = self._memo.get(key)
        if hit is None:
            hit = self._memo.put(key, super().__call__(x))
        return hit


class MemoSetValued(SetValuedOp):
    def __init__(self, op, slots=3):
        super().__init__(None, descriptor=op.descriptor)
        self._inner = op
        self._memo = _MemoTable(slots)

    def resolvent(self, step, point):
        key = (float(step), np.asarray(point, dtype=float).tobytes())
        hit = self._memo.get(key)
        if hit is None:
            hit = self._memo.put(key, self._inner.resolvent(step, point))
        return hit


# convenience constructors ---------------------------------------------------


def zero_single(descriptor="zero"):
    return SingleValuedOp(lambda x: np.zeros_like(x), 0.0, cocoercivity=0.0,
                          descriptor=descriptor)


def translation_gradient(target, descriptor=None):
    """Gradient of 0.5*|x - target|^2, i.e. x -> x - target (1-cocoercive)."""
    target = as_vector(target)
    return SingleValuedOp(lambda x: x - target, 1.0, cocoercivity=1.0,
                          descriptor=descriptor or "gradient of 0.5|x-b|^2")


def affine_single(slope, offset=0.0, descriptor=None):
    """Scalar affine map x -> slope*x + offset; monotone for slope >= 0."""
    slope = float(slope)
    if slope < 0:
        raise ValueError("affine_single requires slope >= 0 for monotonicity")
    offset = float(offset)
    coco = slope if slope > 0 else 0.0
    return SingleValuedOp(lambda x: slope * x + offset, slope,
                          cocoercivity=coco,
                          descriptor=descriptor or f"affine({slope}x+{offset})")


def linear_as_single(op, lipschitz, cocoercivity=None, descriptor=None):
    """View a LinearOp as a single-valued operator with declared constants."""
    return SingleValuedOp(op.apply, lipschitz, cocoercivity=cocoercivity,
                          descriptor=descriptor or op.descriptor)
