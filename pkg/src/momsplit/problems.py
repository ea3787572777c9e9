"""Reproducible desk-scale test problems with independent solution oracles.

Every generated problem carries an oracle solution whose provenance is
method-independent: a sign-interval grid search (scalar inclusions), a
constructed exact solution (drifted saddles), or a long high-accuracy
reference run of a fixed textbook scheme (dual projected gradient for the
generalized-lasso saddle, a primal-dual hybrid-gradient transcription for
total-variation denoising), always run to tolerances far tighter than any
acceptance check.  Randomness comes from the counter-based Philox generator
keyed by the seed, so problems are bit-reproducible.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .methods import PrimalDualProblem, pd_fixed_point_residual
from .operators import (CountedLinear, CountedSetValued, CountedSingle,
                        LinearOp, SetValuedOp, SingleValuedOp,
                        linear_as_single, prox_catalog, translation_gradient)
from .space import PairSpace, as_vector

ORACLE_RESIDUAL_TOL = 1e-8


def _rng(seed):
    return np.random.Generator(np.random.Philox(seed))


# ---------------------------------------------------------------------------
# problem container


@dataclass
class TestProblem:
    """A generated problem, its operators, constants and oracle solution."""

    kind: str
    seed: int
    params: dict
    oracle_primal: np.ndarray
    oracle_dual: np.ndarray = None
    oracle_note: str = ""
    pd: PrimalDualProblem = None
    pd_cp: PrimalDualProblem = None   # variant without the cocoercive term
    a_op: SetValuedOp = None
    a2_doc: dict = None               # second scalar resolvent piece, if any
    a_doc: dict = None
    a2_op: SetValuedOp = None
    c_op: SingleValuedOp = None
    beta: float = 0.0
    dim: int = 0
    data: dict = None

    @property
    def has_pd(self):
        return self.kind != "scalar_inclusion"

    def as_inclusion(self):
        """Single-resolvent view 0 in A x + C x (scalar problems only)."""
        if self.a_op is None:
            raise ValueError(f"{self.kind} problem has no single-resolvent view")
        if self.a2_op is not None:
            raise ValueError("two-resolvent scalar problem has no single-resolvent view")
        return {"a": self.a_op, "c": self.c_op, "beta": self.beta, "dim": self.dim}

    def as_pd(self, variant="default"):
        """Primal-dual view; variant='cp' selects the cocoercive-free split."""
        if variant == "cp":
            if self.pd_cp is not None:
                return self.pd_cp
            if self.pd is not None and self.pd.f_op is None:
                return self.pd
            raise ValueError(f"{self.kind} problem has no cocoercive-free variant")
        if self.pd is None:
            raise ValueError(f"{self.kind} problem has no primal-dual view")
        return self.pd

    def oracle_vec(self, joined=False):
        """Oracle as a flat vector; joined=True appends the dual block."""
        if not joined:
            return self.oracle_primal
        if self.pd is None or self.oracle_dual is None:
            raise ValueError("no joined oracle available")
        return self.pd.space.join(self.oracle_primal, self.oracle_dual)


# ---------------------------------------------------------------------------
# scalar inclusions with a sign-interval grid oracle


_SCALAR_DEFAULT_BRACKET = 5.0


def _scalar_interval(doc, x):
    """Vectorized value interval of a cataloged 1-D operator at grid x."""
    name = doc["name"]
    lo = np.zeros_like(x)
    hi = np.zeros_like(x)
    if name == "zero":
        return lo, hi
    if name in ("l1", "subdifferential_abs"):
        w = float(doc.get("weight", 1.0))
        c = float(doc.get("center", 0.0))
        s = np.sign(x - c)
        lo = np.where(s == 0, -w, w * s)
        hi = np.where(s == 0, w, w * s)
        return lo, hi
    if name == "quadratic":
        q = float(np.asarray(doc["q"]).reshape(()))
        b = float(np.asarray(doc.get("b", 0.0)).reshape(()))
        val = q * x - b
        return val, val.copy()
    if name == "box_indicator":
        lo_b = float(doc.get("lower", -np.inf))
        hi_b = float(doc.get("upper", np.inf))
        lo = np.where(x == hi_b, 0.0, np.where(x == lo_b, -np.inf, 0.0))
        hi = np.where(x == lo_b, 0.0, np.where(x == hi_b, np.inf, 0.0))
        outside = (x < lo_b) | (x > hi_b)
        lo = np.where(outside, np.inf, np.where(x == lo_b, -np.inf, lo))
        hi = np.where(outside, -np.inf, np.where(x == hi_b, np.inf, hi))
        return lo, hi
    raise ValueError(f"no interval rule for scalar operator {name!r}")


def _scalar_defect(spec, x):
    """dist(0, A x + A2 x + C x) on a grid, via interval arithmetic."""
    lo, hi = _scalar_interval(spec["a"], x)
    if spec.get("a2"):
        lo2, hi2 = _scalar_interval(spec["a2"], x)
        lo, hi = lo + lo2, hi + hi2
    c = spec.get("c")
    if c:
        val = float(c.get("slope", 0.0)) * x + float(c.get("offset", 0.0))
        lo, hi = lo + val, hi + val
    inside = (lo <= 0.0) & (hi >= 0.0)
    return np.where(inside, 0.0, np.minimum(np.abs(lo), np.abs(hi)))


def _scalar_breakpoints(spec):
    """Kink locations of the pieces; candidate solutions the grid must hit."""
    points = []
    for key in ("a", "a2"):
        doc = spec.get(key)
        if not doc:
            continue
        name = doc["name"]
        if name in ("l1", "subdifferential_abs"):
            points.append(float(doc.get("center", 0.0)))
        elif name == "box_indicator":
            for bound in (doc.get("lower"), doc.get("upper")):
                if bound is not None and np.isfinite(bound):
                    points.append(float(bound))
    return points


def _grid_search_zero(spec, bracket):
    stages = [(2.0 * bracket, 1e-3), (5e-3, 1e-7), (5e-7, 1e-11)]
    kinks = [p for p in _scalar_breakpoints(spec) if abs(p) <= bracket]
    center = 0.0
    best_x, best_d = None, np.inf
    for width, step in stages:
        grid = np.arange(center - width / 2.0, center + width / 2.0 + step, step)
        grid = np.concatenate([grid, np.asarray(kinks)])
        grid = grid[np.abs(grid) <= bracket + step]
        if grid.size == 0:
            break
        defect = _scalar_defect(spec, grid)
        i = int(np.argmin(defect))
        best_x, best_d = float(grid[i]), float(defect[i])
        center = best_x
        if best_d == 0.0:
            break
    return best_x, best_d


def _scalar_op_from_doc(doc):
    doc = dict(doc)
    name = doc.pop("name")
    center = float(doc.pop("center", 0.0)) if name in ("l1", "subdifferential_abs") else 0.0
    if name == "quadratic":
        doc["q"] = np.atleast_2d(np.asarray(doc["q"], dtype=float))
        if "b" in doc:
            doc["b"] = np.atleast_1d(np.asarray(doc["b"], dtype=float))
    op = prox_catalog(name, **doc)
    if center != 0.0:
        base = op
        op = SetValuedOp(lambda step, p, b=base, c=center: c + b.resolvent(step, p - c),
                         descriptor=f"{base.descriptor} shifted by {center}")
    return op


def make_scalar_inclusion(spec):
    """1-D inclusion 0 in A x (+ A2 x) (+ C x) with a grid-search oracle.

    ``spec`` is a document: ``{"a": {"name": ..., ...}, "a2": optional second
    resolvent piece, "c": {"slope": s, "offset": o} or None, "bracket": R}``.
    The oracle minimizes the interval distance dist(0, A x + A2 x + C x)
    over [-R, R], refined to sub-1e-6 resolution; raises if no zero is found
    in range.
    """
    spec = dict(spec)
    bracket = float(spec.get("bracket", _SCALAR_DEFAULT_BRACKET))
    x_star, defect = _grid_search_zero(spec, bracket)
    if defect > 1e-6:
        raise ValueError(f"no zero of the inclusion found in [-{bracket}, {bracket}] "
                         f"(best defect {defect:.3e})")
    a_op = _scalar_op_from_doc(spec["a"])
    a2_op = _scalar_op_from_doc(spec["a2"]) if spec.get("a2") else None
    c_doc = spec.get("c")
    c_op = None
    beta = 0.0
    if c_doc:
        slope = float(c_doc.get("slope", 0.0))
        offset = float(c_doc.get("offset", 0.0))
        from .operators import affine_single
        c_op = affine_single(slope, offset)
        beta = slope

    # dual multiplier for the lifted view: z* in A2(x*) with -z* in (A + C)(x*)
    x_arr = np.array([x_star])
    if a2_op is not None:
        lo2, hi2 = _scalar_interval(spec["a2"], x_arr)
        lo1, hi1 = _scalar_interval(spec["a"], x_arr)
        cval = (slope * x_star + offset) if c_doc else 0.0
        lo = max(float(lo2[0]), float(-hi1[0] - cval))
        hi = min(float(hi2[0]), float(-lo1[0] - cval))
        z_star = np.array([np.clip(0.5 * (lo + hi), lo, hi)])
    else:
        z_star = np.zeros(1)

    sp = PairSpace(1, 1)
    # With no second resolvent piece the lifted dual block is the zero
    # operator, whose inverse-resolvent is the zero map: the dual iterate
    # collapses to 0 and the primal line is the original inclusion.
    if a2_op is None:
        z_star = np.zeros(1)
        d_for_pd = prox_catalog("zero")
    else:
        d_for_pd = a2_op
    pd = PrimalDualProblem(space=sp, b_op=a_op, d_op=d_for_pd, e_op=None,
                           f_op=c_op, v_op=LinearOp.identity(1),
                           delta=0.0, beta=beta, norm_v=1.0)
    pd_cp = None
    if c_op is None:
        pd_cp = pd
    tp = TestProblem(kind="scalar_inclusion", seed=0, params={"spec": spec},
                     oracle_primal=np.array([x_star]), oracle_dual=z_star,
                     oracle_note=f"interval grid search, defect {defect:.2e}",
                     pd=pd, pd_cp=pd_cp, a_op=a_op, a2_op=a2_op,
                     a_doc=spec["a"], a2_doc=spec.get("a2"),
                     c_op=c_op, beta=beta, dim=1,
                     data={"spec": spec})
    _check_oracle(tp, defect)
    return tp


def _check_oracle(tp, scalar_defect=None):
    if tp.kind == "scalar_inclusion":
        if scalar_defect is None:
            scalar_defect = float(_scalar_defect(tp.params["spec"],
                                                 tp.oracle_primal.copy()))
        if scalar_defect > ORACLE_RESIDUAL_TOL:
            raise ValueError(f"oracle defect {scalar_defect:.3e} exceeds "
                             f"{ORACLE_RESIDUAL_TOL}")
        return
    res1, res2 = pd_fixed_point_residual(tp.pd, tp.oracle_primal, tp.oracle_dual)
    if max(res1, res2) > ORACLE_RESIDUAL_TOL:
        raise ValueError(f"oracle residual ({res1:.3e}, {res2:.3e}) exceeds "
                         f"{ORACLE_RESIDUAL_TOL} for {tp.kind}")


# ---------------------------------------------------------------------------
# group soft-threshold (rows of size 2) for total-variation pieces


def _l21_prox(weight, groups):
    """Prox of weight * sum_i |g_i|_2 with g_i the i-th pair of coordinates."""

    def resolvent(step, p):
        t = step * weight
        pairs = p.reshape(groups)
        mags = np.linalg.norm(pairs, axis=0)
        scale = np.zeros_like(mags)
        np.divide(np.maximum(mags - t, 0.0), mags, out=scale, where=mags > 0)
        return (pairs * scale).reshape(-1)

    return resolvent


def l21_operator(weight, n_groups):
    """Subdifferential of weight * |.|_{2,1} over pairs (dx_i, dy_i)."""
    return SetValuedOp(_l21_prox(weight, (2, n_groups)),
                       descriptor=f"l21(weight={weight})")


# ---------------------------------------------------------------------------
# discrete gradient on a width x height grid (forward differences, Neumann)


def _grad2d_matrix(width, height):
    def diff_matrix(n):
        d = np.zeros((n, n))
        idx = np.arange(n - 1)
        d[idx, idx] = -1.0
        d[idx, idx + 1] = 1.0
        return d

    ih = np.eye(height)
    iw = np.eye(width)
    dx = np.kron(ih, diff_matrix(width))       # along rows (x direction)
    dy = np.kron(diff_matrix(height), iw)      # along columns (y direction)
    return np.vstack([dx, dy])


def grad2d(width, height):
    """Forward-difference gradient K: R^{w*h} -> R^{2*w*h}; |K|^2 <= 8."""
    n = width * height

    def apply(u):
        img = u.reshape(height, width)
        gx = np.zeros_like(img)
        gy = np.zeros_like(img)
        gx[:, :-1] = img[:, 1:] - img[:, :-1]
        gy[:-1, :] = img[1:, :] - img[:-1, :]
        return np.concatenate([gx.reshape(-1), gy.reshape(-1)])

    def apply_adjoint(p):
        gx = p[:n].reshape(height, width)
        gy = p[n:].reshape(height, width)
        out = np.zeros_like(gx)
        out[:, :-1] -= gx[:, :-1]
        out[:, 1:] += gx[:, :-1]
        out[:-1, :] -= gy[:-1, :]
        out[1:, :] += gy[:-1, :]
        return out.reshape(-1)

    return LinearOp(apply, apply_adjoint, n, 2 * n,
                    norm_bound=math.sqrt(8.0),
                    matrix=_grad2d_matrix(width, height),
                    descriptor=f"grad2d({width}x{height})")


# ---------------------------------------------------------------------------
# high-accuracy reference solvers (fixed textbook schemes, oracle-only use)


def _dual_projected_gradient(b, v, project, iters, step):
    """Plain projected forward-backward on the dual of
    min_y 0.5|y - b|^2 + (support-function term of the projected set)(V y).
    """
    z = np.zeros(v.dim_out)
    for _ in range(iters):
        grad = v.apply(v.apply_adjoint(z) - b)
        z = project(z - step * grad)
    return z


def _polish_dual(b, vmat, z0, weight, group_size, newton_steps=10):
    """Polish a dual estimate for min_y 0.5|y-b|^2 + weight*|Vy|_{2,1}.

    Solves the dual fixed-point equation F(z) = z - P(z + V(b - V^T z)) = 0
    (P the groupwise ball projection, groups of ``group_size`` V-rows) by a
    semismooth Newton iteration with matrix-free Jacobian actions; F is
    differentiable near nondegenerate solutions, so the finishing rate is
    quadratic.  Returns the best iterate by residual.
    """
    import scipy.sparse.linalg

    n_groups = vmat.shape[0] // group_size

    def split(arr):
        return arr.reshape(group_size, n_groups)

    def project(s):
        g = split(s.copy())
        mags = np.linalg.norm(g, axis=0)
        scale = np.ones_like(mags)
        np.divide(weight, mags, out=scale, where=mags > weight)
        return (g * scale).reshape(-1)

    def fixed_point_gap(z):
        s = z + vmat @ (b - vmat.T @ z)
        return z - project(s), s

    z = z0.copy()
    gap, s = fixed_point_gap(z)
    best_z, best_res = z.copy(), float(np.linalg.norm(gap))
    for _ in range(newton_steps):
        g = split(s)
        mags = np.linalg.norm(g, axis=0)
        boundary = mags > weight
        dirs = np.zeros_like(g)
        np.divide(g, mags, out=dirs, where=boundary)
        coeff = np.zeros_like(mags)
        np.divide(weight, mags, out=coeff, where=boundary)

        def jac_mv(t):
            # J t = t - P'(s) (t - V V^T t); interior groups: P' = Id,
            # boundary groups: P'(s) q = (weight/|s|)(q - <dir, q> dir)
            q = t - vmat @ (vmat.T @ t)
            qg = split(q.copy())
            qb = qg[:, boundary]
            db = dirs[:, boundary]
            qg[:, boundary] = coeff[boundary] * (qb - db * np.sum(db * qb, axis=0))
            return t - qg.reshape(-1)

        op = scipy.sparse.linalg.LinearOperator((z.size, z.size), matvec=jac_mv)
        dz, _ = scipy.sparse.linalg.lgmres(op, -gap, rtol=1e-13, atol=0.0,
                                           maxiter=300)
        z = z + dz
        gap, s = fixed_point_gap(z)
        res = float(np.linalg.norm(gap))
        if res < best_res:
            best_z, best_res = z.copy(), res
        if res < 1e-13:
            break
    return best_z, best_res


def _reference_pdhg(b, v, dual_project, prox_data, tau, sigma, iters,
                    strongly_convex=True):
    """Textbook primal-dual hybrid-gradient reference run (data term in the
    primal prox, regularizer handled by dual projection), with the standard
    step acceleration for a 1-strongly-convex data term."""
    y = b.copy()
    y_bar = y.copy()
    z = np.zeros(v.dim_out)
    theta = 1.0
    for _ in range(iters):
        z = dual_project(z + sigma * v.apply(y_bar))
        y_new = prox_data(y - tau * v.apply_adjoint(z), tau)
        if strongly_convex:
            theta = 1.0 / math.sqrt(1.0 + 2.0 * tau)
            tau *= theta
            sigma /= theta
        y_bar = y_new + theta * (y_new - y)
        y = y_new
    return y, z


# ---------------------------------------------------------------------------
# generalized-lasso saddle


def make_lasso_saddle(m, n, mu, seed):
    """Saddle form of min_y 0.5|y - b|^2 + mu*|V y|_1 with a random design V.

    ``m`` is the primal dimension, ``n`` the dual one; for n >= m the design
    has trivial kernel almost surely, so large ``mu`` shrinks the solution
    to zero.  The smooth term y - b is 1-cocoercive, so beta = 1 exactly.
    The oracle comes from a long plain projected-gradient reference run on
    the dual program (the primal proximal map of the composite term has no
    closed form) followed by an active-face polish.
    """
    if not (1 <= m <= 200 and 1 <= n <= 200):
        raise ValueError("m and n must be in [1, 200]")
    if mu < 0:
        raise ValueError("mu must be >= 0")
    rng = _rng(seed)
    mat = rng.standard_normal((n, m)) / math.sqrt(max(m, n))
    if np.linalg.norm(mat) == 0.0:
        raise ValueError("degenerate (zero) design")
    b = rng.standard_normal(m)
    v = LinearOp.from_matrix(mat, descriptor="lasso design")
    norm_v = float(np.linalg.svd(mat, compute_uv=False)[0])
    v.norm_bound = norm_v

    z = _dual_projected_gradient(
        b, v, lambda z: np.clip(z, -mu, mu),
        iters=60000, step=1.0 / max(norm_v ** 2, 1e-12))
    z_star, _ = _polish_dual(b, mat, z, mu, group_size=1)
    y_star = b - v.apply_adjoint(z_star)

    sp = PairSpace(m, n)
    pd = PrimalDualProblem(space=sp, b_op=prox_catalog("zero"),
                           d_op=prox_catalog("l1", weight=mu), e_op=None,
                           f_op=translation_gradient(b), v_op=v,
                           delta=0.0, beta=1.0, norm_v=norm_v)
    tp = TestProblem(kind="lasso_saddle", seed=seed,
                     params={"m": m, "n": n, "mu": mu},
                     oracle_primal=y_star, oracle_dual=z_star,
                     oracle_note="dual projected-gradient reference + face polish",
                     pd=pd, dim=sp.dim,
                     data={"matrix": mat, "b": b, "mu": mu, "norm_v": norm_v})
    _check_oracle(tp)
    return tp


# ---------------------------------------------------------------------------
# total-variation denoising


def make_tv_denoise(width, height, lambda_tv, seed):
    """Isotropic TV denoising min_y 0.5|y - b|^2 + lambda*|grad y|_{2,1}.

    The coupling is the forward-difference gradient with the standard bound
    |V| <= sqrt(8) (also checked by power iteration in the test suite).
    The default split keeps the data term cocoercive (beta = 1); a variant
    with the data term in the primal resolvent and no cocoercive part is
    available for schemes that require it.  The oracle is a long accelerated
    primal-dual hybrid-gradient reference run plus an active-face polish.
    """
    npix = width * height
    if npix > 4096:
        raise ValueError("width*height must be <= 4096")
    if lambda_tv < 0:
        raise ValueError("lambda_tv must be >= 0")
    rng = _rng(seed)
    xs = np.linspace(0.0, 1.0, width)
    ys = np.linspace(0.0, 1.0, height)
    smooth = (np.sin(2.5 * math.pi * ys)[:, None] * np.cos(1.5 * math.pi * xs)[None, :]
              + 0.5 * np.outer(ys, xs))
    b = (smooth + 0.15 * rng.standard_normal((height, width))).reshape(-1)
    v = grad2d(width, height)
    norm_v = math.sqrt(8.0)

    def dual_project(z, lam=lambda_tv, npix=npix):
        pairs = z.reshape(2, npix)
        mags = np.linalg.norm(pairs, axis=0)
        scale = np.ones_like(mags)
        np.divide(lam, mags, out=scale, where=mags > lam)
        return (pairs * scale).reshape(-1)

    def prox_data(p, step, b=b):
        return (p + step * b) / (1.0 + step)

    if lambda_tv == 0.0:
        y_star, z_star = b.copy(), np.zeros(2 * npix)
        note = "zero regularization: solution equals the data"
    else:
        tau0 = sigma0 = 0.99 / norm_v
        y_star, z_star = _reference_pdhg(b, v, dual_project, prox_data,
                                         tau0, sigma0, iters=20000)
        z_star, _ = _polish_dual(b, v.to_dense(), z_star, lambda_tv, group_size=2)
        y_star = b - v.apply_adjoint(z_star)
        note = "accelerated primal-dual hybrid-gradient reference + face polish"

    sp = PairSpace(npix, 2 * npix)
    d_op = l21_operator(lambda_tv, npix)
    pd = PrimalDualProblem(space=sp, b_op=prox_catalog("zero"), d_op=d_op,
                           e_op=None, f_op=translation_gradient(b), v_op=v,
                           delta=0.0, beta=1.0, norm_v=norm_v)
    data_prox = SetValuedOp(lambda step, p, b=b: (p + step * b) / (1.0 + step),
                            descriptor="data-fit quadratic")
    pd_cp = PrimalDualProblem(space=sp, b_op=data_prox, d_op=d_op, e_op=None,
                              f_op=None, v_op=v, delta=0.0, beta=0.0,
                              norm_v=norm_v)
    tp = TestProblem(kind="tv_denoise", seed=seed,
                     params={"width": width, "height": height,
                             "lambda_tv": lambda_tv},
                     oracle_primal=y_star, oracle_dual=z_star, oracle_note=note,
                     pd=pd, pd_cp=pd_cp, dim=sp.dim,
                     data={"b": b, "width": width, "height": height,
                           "lambda_tv": lambda_tv})
    _check_oracle(tp)
    return tp


# ---------------------------------------------------------------------------
# skew-symmetric Lipschitz drift generator


def make_skew_lipschitz(dim, delta, seed):
    """Skew-symmetric linear map scaled to operator norm exactly delta.

    Monotone with <E x, x> = 0 but not cocoercive for delta > 0; the drift
    instances the primal-dual problems use.
    """
    if dim % 2 != 0:
        raise ValueError("dim must be even")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    rng = _rng(seed)
    r = rng.standard_normal((dim, dim))
    k = r - r.T
    norm = np.linalg.norm(k, 2)
    if norm == 0.0:
        raise ValueError("degenerate skew sample")
    mat = (delta / norm) * k
    lin = LinearOp.from_matrix(mat, norm_bound=delta, descriptor="skew drift")
    op = linear_as_single(lin, lipschitz=delta, descriptor=f"skew drift (delta={delta})")
    op.matrix = mat
    return op


# ---------------------------------------------------------------------------
# saddle with an exactly constructed solution


def make_constructed_saddle(dim_primal, dim_dual, mu, delta, seed):
    """Monotone saddle with drift whose solution is constructed exactly.

    Draw V and a skew drift E, pick a target y*, set z* = mu * sign(V y*)
    (a valid multiplier of the l1 dual block) and choose the data vector
    b = y* + V* z* + E y* so the smooth term y - b closes the primal line
    exactly.  The oracle is exact up to float rounding, which makes these
    instances the reference grade for descent-inequality checks.
    """
    if dim_primal > 200 or dim_dual > 200:
        raise ValueError("dimensions must be <= 200")
    rng = _rng(seed)
    mat = rng.standard_normal((dim_dual, dim_primal)) / math.sqrt(dim_dual)
    v = LinearOp.from_matrix(mat, descriptor="constructed design")
    norm_v = float(np.linalg.svd(mat, compute_uv=False)[0])
    v.norm_bound = norm_v
    e_op = make_skew_lipschitz(dim_primal, delta, seed + 1) if delta > 0 else None

    y_star = rng.standard_normal(dim_primal)
    w = v.apply(y_star)
    for _ in range(50):
        if np.min(np.abs(w)) > 1e-3:
            break
        y_star = rng.standard_normal(dim_primal)
        w = v.apply(y_star)
    z_star = mu * np.sign(w)
    b = y_star + v.apply_adjoint(z_star)
    if e_op is not None:
        b = b + e_op(y_star)

    sp = PairSpace(dim_primal, dim_dual)
    pd = PrimalDualProblem(space=sp, b_op=prox_catalog("zero"),
                           d_op=prox_catalog("l1", weight=mu), e_op=e_op,
                           f_op=translation_gradient(b), v_op=v,
                           delta=delta, beta=1.0, norm_v=norm_v)
    tp = TestProblem(kind="constructed_saddle", seed=seed,
                     params={"dim_primal": dim_primal, "dim_dual": dim_dual,
                             "mu": mu, "delta": delta},
                     oracle_primal=y_star, oracle_dual=z_star,
                     oracle_note="exactly constructed solution",
                     pd=pd, dim=sp.dim,
                     data={"matrix": mat, "b": b, "mu": mu, "delta": delta,
                           "skew": None if e_op is None else e_op.matrix,
                           "norm_v": norm_v})
    _check_oracle(tp)
    return tp


# ---------------------------------------------------------------------------
# instrumentation and serialization


def instrument_problem(tp, counter):
    """Counted copy of a problem: underlying operator evaluations tallied.

    Counting wraps the raw operators before any method builder adds its own
    reuse caches, so the tallies measure true evaluations.
    """
    if tp.kind == "scalar_inclusion":
        a = CountedSetValued(tp.a_op, counter, "B") if tp.a_op else None
        c = CountedSingle(tp.c_op, counter, "F") if tp.c_op else None
        new = replace(tp, a_op=a, c_op=c)
        if tp.pd is not None:
            new.pd = replace(tp.pd, b_op=a,
                             d_op=CountedSetValued(tp.pd.d_op, counter, "D"),
                             v_op=CountedLinear(tp.pd.v_op, counter, "V"),
                             f_op=c)
            new.pd_cp = new.pd if tp.pd_cp is not None else None
        return new
    def wrap_pd(pd):
        return replace(
            pd,
            b_op=None if pd.b_op is None else CountedSetValued(pd.b_op, counter, "B"),
            d_op=CountedSetValued(pd.d_op, counter, "D"),
            e_op=None if pd.e_op is None else CountedSingle(pd.e_op, counter, "E"),
            f_op=None if pd.f_op is None else CountedSingle(pd.f_op, counter, "F"),
            v_op=CountedLinear(pd.v_op, counter, "V"))
    new = replace(tp, pd=wrap_pd(tp.pd))
    if tp.pd_cp is not None:
        new.pd_cp = wrap_pd(tp.pd_cp)
    return new


def save_problem(tp):
    """Serialize a problem to a JSON-style document (matrices row-major)."""
    doc = {"format": "momsplit-problem/1", "kind": tp.kind, "seed": tp.seed,
           "params": _jsonable(tp.params),
           "oracle": {"primal": tp.oracle_primal.tolist(),
                      "dual": None if tp.oracle_dual is None else tp.oracle_dual.tolist(),
                      "note": tp.oracle_note}}
    return doc


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


GENERATORS = {
    "scalar_inclusion": lambda params, seed: make_scalar_inclusion(params["spec"]),
    "lasso_saddle": lambda params, seed: make_lasso_saddle(
        int(params["m"]), int(params["n"]), float(params["mu"]), seed),
    "tv_denoise": lambda params, seed: make_tv_denoise(
        int(params["width"]), int(params["height"]), float(params["lambda_tv"]), seed),
    "constructed_saddle": lambda params, seed: make_constructed_saddle(
        int(params["dim_primal"]), int(params["dim_dual"]), float(params["mu"]),
        float(params.get("delta", 0.0)), seed),
}


def generate_problem(name, params, seed=0):
    """Build a named test problem from generator parameters."""
    if name not in GENERATORS:
        raise ValueError(f"unknown problem generator {name!r}; known: {sorted(GENERATORS)}")
    return GENERATORS[name](params or {}, seed)


def load_problem(doc):
    """Rebuild a problem from its serialized document.

    Operators are regenerated deterministically from the stored generator
    parameters and seed; the stored oracle is kept and re-verified.
    """
    if doc.get("format") != "momsplit-problem/1":
        raise ValueError("unrecognized problem document format")
    tp = generate_problem(doc["kind"], doc["params"], int(doc["seed"]))
    oracle = doc.get("oracle") or {}
    stored = oracle.get("primal")
    if stored is not None:
        got = as_vector(stored)
        if got.shape != tp.oracle_primal.shape or not np.allclose(
                got, tp.oracle_primal, atol=1e-6, rtol=0):
            raise ValueError("stored oracle disagrees with regenerated problem")
    return tp
