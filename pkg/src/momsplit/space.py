"""Finite-dimensional real Hilbert-space arithmetic with scaled metrics.

Vectors are plain 1-D float64 numpy arrays.  A ``Metric`` wraps a strongly
positive self-adjoint linear map S together with its inverse and defines the
scaled inner product ``<x, y>_S = <S x, y>`` and the norms ``|.|_S`` and
``|.|_{S^-1}`` used throughout the solver.
"""

import numpy as np
import scipy.linalg


def as_vector(x, dim=None):
    """Coerce ``x`` to a finite 1-D float64 array, validating its length."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def _check_same_dim(*vecs):
    dims = {v.shape[0] for v in vecs}
    if len(dims) > 1:
        raise ValueError(f"dimension mismatch between vectors: {sorted(dims)}")


class Metric:
    """A strongly positive self-adjoint linear map S with explicit inverse.

    Parameters
    ----------
    apply : callable
        Maps a vector x to S x.
    apply_inverse : callable
        Maps a vector x to S^-1 x.
    dim : int
        Dimension of the underlying space.
    strong_positivity_bound : float
        A lower bound m > 0 with <S x, x> >= m |x|^2.
    descriptor : str, optional
        Human-readable identity.
    """

    def __init__(self, apply, apply_inverse, dim, strong_positivity_bound,
                 descriptor="metric"):
        if strong_positivity_bound <= 0:
            raise ValueError("strong positivity bound must be > 0")
        self._apply = apply
        self._apply_inverse = apply_inverse
        self.dim = int(dim)
        self.strong_positivity_bound = float(strong_positivity_bound)
        self.descriptor = descriptor

    def apply(self, x):
        return self._apply(x)

    def apply_inverse(self, x):
        return self._apply_inverse(x)

    def inner(self, x, y):
        return inner_s(self, x, y)

    def norm(self, x):
        return norm_s(self, x)

    def norm_sq(self, x):
        return float(np.dot(self.apply(x), x))

    def inv_norm(self, x):
        """|x|_{S^-1} = sqrt(<S^-1 x, x>)."""
        return float(np.sqrt(max(np.dot(self.apply_inverse(x), x), 0.0)))

    def inv_norm_sq(self, x):
        return float(np.dot(self.apply_inverse(x), x))

    @property
    def is_identity(self):
        return getattr(self, "_identity", False)

    @classmethod
    def identity(cls, dim):
        m = cls(lambda x: x, lambda x: x, dim, 1.0, descriptor="identity")
        m._identity = True
        return m

    @classmethod
    def diagonal(cls, weights):
        w = as_vector(weights)
        if np.any(w <= 0):
            raise ValueError("diagonal metric requires strictly positive weights")
        winv = 1.0 / w
        return cls(lambda x, w=w: w * x, lambda x, winv=winv: winv * x,
                   w.shape[0], float(w.min()), descriptor="diagonal")

    @classmethod
    def from_matrix(cls, mat, descriptor="dense"):
        """Build a metric from a dense SPD matrix; factorized once here."""
        mat = np.asarray(mat, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ValueError("metric matrix must be square")
        sym_defect = np.max(np.abs(mat - mat.T))
        if sym_defect > 1e-10 * (1.0 + np.max(np.abs(mat))):
            raise ValueError("metric matrix is not symmetric")
        mat = 0.5 * (mat + mat.T)
        eigmin = float(np.linalg.eigvalsh(mat)[0])
        if eigmin <= 0:
            raise ValueError("metric matrix is not positive definite")
        factor = scipy.linalg.cho_factor(mat)
        return cls(lambda x, mat=mat: mat @ x,
                   lambda x, factor=factor: scipy.linalg.cho_solve(factor, x),
                   mat.shape[0], eigmin * (1.0 - 1e-12), descriptor=descriptor)


def inner_s(metric, x, y):
    """Scaled inner product <S x, y>."""
    x = as_vector(x, metric.dim)
    y = as_vector(y, metric.dim)
    return float(np.dot(metric.apply(x), y))


def norm_s(metric, x):
    """Scaled norm sqrt(<S x, x>); nonnegative, zero only at x = 0."""
    x = as_vector(x, metric.dim)
    return float(np.sqrt(max(np.dot(metric.apply(x), x), 0.0)))


def check_four_point_identity(metric, a, b, c, d):
    """Absolute residual of 2<a-b, d-c>_S = |a-c|_S^2 - |b-c|_S^2 - |a-d|_S^2 + |b-d|_S^2."""
    a = as_vector(a, metric.dim)
    b = as_vector(b, metric.dim)
    c = as_vector(c, metric.dim)
    d = as_vector(d, metric.dim)
    lhs = 2.0 * inner_s(metric, a - b, d - c)
    rhs = (norm_s(metric, a - c) ** 2 - norm_s(metric, b - c) ** 2
           - norm_s(metric, a - d) ** 2 + norm_s(metric, b - d) ** 2)
    return abs(lhs - rhs)


def probe_metric(metric, trials=50, seed=0, tol=1e-10):
    """Randomized falsification of the metric contract.

    Checks self-adjointness, strong positivity and apply/apply_inverse
    consistency on random probe vectors.  Returns a list of violation
    messages; empty means no violation found.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    violations = []
    for _ in range(trials):
        x = rng.standard_normal(metric.dim)
        y = rng.standard_normal(metric.dim)
        sx, sy = metric.apply(x), metric.apply(y)
        scale = np.linalg.norm(x) * np.linalg.norm(y) + 1.0
        adj = abs(np.dot(sx, y) - np.dot(x, sy))
        if adj > tol * scale:
            violations.append(f"self-adjointness defect {adj:.3e}")
        quad = np.dot(sx, x)
        if quad < metric.strong_positivity_bound * np.dot(x, x) * (1.0 - 1e-9):
            violations.append(f"strong positivity defect: {quad:.3e}")
        roundtrip = np.linalg.norm(metric.apply(metric.apply_inverse(x)) - x)
        if roundtrip > tol * (np.linalg.norm(x) + 1.0):
            violations.append(f"apply o apply_inverse defect {roundtrip:.3e}")
    return violations


class PairSpace:
    """Product of two coordinate blocks (primal in K, dual in G).

    Flattening (y, z) -> concatenated vector of length dim_primal + dim_dual
    is the bijection used by all primal-dual schedules.
    """

    def __init__(self, dim_primal, dim_dual):
        if dim_primal < 1 or dim_dual < 1:
            raise ValueError("PairSpace blocks must be nonempty")
        self.dim_primal = int(dim_primal)
        self.dim_dual = int(dim_dual)
        self.dim = self.dim_primal + self.dim_dual

    def join(self, y, z):
        y = as_vector(y, self.dim_primal)
        z = as_vector(z, self.dim_dual)
        return np.concatenate([y, z])

    def split(self, x):
        x = as_vector(x, self.dim)
        return x[:self.dim_primal], x[self.dim_primal:]

    def embed_primal(self, y):
        out = np.zeros(self.dim)
        out[:self.dim_primal] = y
        return out

    def embed_dual(self, z):
        out = np.zeros(self.dim)
        out[self.dim_primal:] = z
        return out

    def zeros(self):
        return np.zeros(self.dim)
