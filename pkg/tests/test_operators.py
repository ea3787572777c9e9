import numpy as np
import pytest

from momsplit.operators import (CountedLinear, CountedSingle, EvalCounter,
                                LinearOp, MemoLinear, MemoSingle,
                                SingleValuedOp, affine_single,
                                estimate_operator_norm, prox_catalog,
                                resolvent_of_inverse, translation_gradient,
                                verify_operator_properties)
from momsplit.space import Metric

from conftest import rng


# --- prox catalog ----------------------------------------------------------

def test_l1_soft_threshold():
    op = prox_catalog("l1", weight=1.0)
    assert op.resolvent(1.0, np.array([2.5]))[0] == pytest.approx(1.5)
    np.testing.assert_allclose(op.resolvent(2.0, np.array([-3.0, 0.5, 1.0])),
                               [-1.0, 0.0, 0.0])


def test_zero_resolvent_is_identity():
    op = prox_catalog("zero")
    p = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(op.resolvent(0.7, p), p)


def test_quadratic_identity_resolvent_halves():
    op = prox_catalog("quadratic", q=np.eye(3))
    p = np.array([2.0, -4.0, 6.0])
    np.testing.assert_allclose(op.resolvent(1.0, p), p / 2.0, rtol=1e-14)


def test_quadratic_with_offset():
    q = np.array([[2.0, 0.0], [0.0, 1.0]])
    b = np.array([1.0, -1.0])
    op = prox_catalog("quadratic", q=q, b=b)
    p = np.array([0.5, 0.5])
    expect = np.linalg.solve(np.eye(2) + 0.3 * q, p + 0.3 * b)
    np.testing.assert_allclose(op.resolvent(0.3, p), expect, rtol=1e-13)


def test_box_indicator_clips():
    op = prox_catalog("box_indicator", lower=-1.0, upper=2.0)
    np.testing.assert_allclose(op.resolvent(5.0, np.array([-3.0, 0.5, 4.0])),
                               [-1.0, 0.5, 2.0])


def test_affine_subspace_projects():
    mat = np.array([[1.0, 1.0]])
    op = prox_catalog("affine_subspace", matrix=mat, rhs=np.array([1.0]))
    out = op.resolvent(1.0, np.array([2.0, 2.0]))
    np.testing.assert_allclose(out, [0.5, 0.5], rtol=1e-12)
    np.testing.assert_allclose(mat @ out, [1.0], atol=1e-12)


def test_catalog_errors():
    with pytest.raises(ValueError):
        prox_catalog("nope")
    with pytest.raises(ValueError):
        prox_catalog("quadratic", q=np.array([[0.0, 1.0], [-1.0, 0.0]]))  # not symmetric
    with pytest.raises(ValueError):
        prox_catalog("quadratic", q=-np.eye(2))
    with pytest.raises(ValueError):
        prox_catalog("l1", weight=1.0, bogus=2)
    with pytest.raises(ValueError):
        prox_catalog("box_indicator", lower=2.0, upper=1.0)
    with pytest.raises(ValueError):
        prox_catalog("l1", weight=1.0).resolvent(0.0, np.array([1.0]))


def test_resolvents_firmly_nonexpansive():
    metric5 = Metric.identity(5)
    for op in [prox_catalog("l1", weight=0.8),
               prox_catalog("box_indicator", lower=-1.0, upper=1.0),
               prox_catalog("quadratic", q=random_spsd(5, 21)),
               prox_catalog("zero")]:
        report = verify_operator_properties(op, metric5, trials=300, seed=5)
        assert report.ok, report.violations


def random_spsd(n, seed):
    r = rng(seed)
    m = r.standard_normal((n, n))
    return m @ m.T


# --- Moreau route for inverse resolvents ------------------------------------

def test_inverse_resolvent_of_zero_operator_is_zero_map():
    op = prox_catalog("zero")
    p = np.array([3.0, -1.5])
    np.testing.assert_allclose(resolvent_of_inverse(op, 1.0, p), 0.0, atol=0.0)
    np.testing.assert_allclose(resolvent_of_inverse(op, 0.7, p), 0.0, atol=1e-15)


def test_inverse_resolvent_identity_operator():
    ident = prox_catalog("quadratic", q=np.eye(1))  # A x = x
    out = resolvent_of_inverse(ident, 1.0, np.array([2.0]))
    assert out[0] == pytest.approx(1.0, abs=1e-14)


def test_inverse_resolvent_abs_subdifferential_vs_grid():
    # q solving q + sigma * D^{-1} q -> p for D = d|.|: brute-force over a grid
    op = prox_catalog("subdifferential_abs", weight=1.0)
    sigma, p = 1.0, 3.0
    out = resolvent_of_inverse(op, sigma, np.array([p]))[0]
    grid = np.linspace(-5, 5, 2000001)
    # D^{-1} = normal cone of [-1, 1]: defect of p in q + sigma*N(q)
    inside = np.abs(grid) < 1.0
    defect = np.where(inside, np.abs(grid - p),
                      np.where(grid * (p - grid) >= 0, 0.0, np.abs(grid - p)))
    defect = np.where(np.abs(grid) > 1.0, np.inf, defect)
    q_star = grid[np.argmin(defect)]
    assert out == pytest.approx(q_star, abs=1e-5)
    assert out == pytest.approx(1.0, abs=1e-12)


def test_moreau_decomposition_exact_by_construction():
    op = prox_catalog("l1", weight=0.6)
    r = rng(23)
    for sigma in (0.5, 1.0, 2.3):
        p = r.standard_normal(6)
        inner = op.resolvent(1.0 / sigma, p / sigma)
        out = resolvent_of_inverse(op, sigma, p)
        np.testing.assert_array_equal(out, p - sigma * inner)
        np.testing.assert_allclose(out + sigma * inner, p, rtol=0, atol=1e-15)


def test_inverse_resolvent_rejects_nonpositive_sigma():
    with pytest.raises(ValueError):
        resolvent_of_inverse(prox_catalog("zero"), 0.0, np.array([1.0]))


# --- operator norm estimation ------------------------------------------------

def test_norm_estimate_scaled_identity():
    v = LinearOp.from_matrix(2.0 * np.eye(3))
    est = estimate_operator_norm(v, iterations=50, seed=0)
    assert est / 1.001 == pytest.approx(2.0, abs=1e-6)


def test_norm_estimate_diagonal():
    v = LinearOp.from_matrix(np.diag([1.0, 3.0]))
    est = estimate_operator_norm(v, iterations=300, seed=0)
    assert est / 1.001 == pytest.approx(3.0, abs=1e-6)


def test_norm_estimate_random_matches_svd_oracle():
    mat = rng(31).standard_normal((8, 5))
    v = LinearOp.from_matrix(mat)
    est = estimate_operator_norm(v, iterations=2000, seed=1)
    top = float(np.linalg.svd(mat, compute_uv=False)[0])
    assert est / 1.001 == pytest.approx(top, rel=1e-6)
    assert est >= top  # inflation keeps it an upper bound


def test_norm_estimate_deterministic_and_validated():
    mat = rng(33).standard_normal((4, 4))
    v = LinearOp.from_matrix(mat)
    assert estimate_operator_norm(v, 40, seed=7) == estimate_operator_norm(v, 40, seed=7)
    with pytest.raises(ValueError):
        estimate_operator_norm(v, 0, seed=7)
    with pytest.raises(ValueError):
        estimate_operator_norm(LinearOp(lambda x: x, lambda z: z, 0, 0), 5, 0)


def test_linear_adjoint_consistency_probes():
    mat = rng(35).standard_normal((6, 4))
    v = LinearOp.from_matrix(mat)
    r = rng(36)
    for _ in range(50):
        x, z = r.standard_normal(4), r.standard_normal(6)
        lhs = float(np.dot(v.apply(x), z))
        rhs = float(np.dot(x, v.apply_adjoint(z)))
        assert abs(lhs - rhs) <= 1e-10 * (1 + abs(lhs))
    np.testing.assert_allclose(v.to_dense(), mat)


def test_to_dense_without_stored_matrix():
    v = LinearOp(lambda x: np.array([x[0] + x[1]]), lambda z: np.array([z[0], z[0]]), 2, 1)
    np.testing.assert_allclose(v.to_dense(), [[1.0, 1.0]])


# --- property falsification ---------------------------------------------------

def test_identity_with_declared_bound_passes():
    op = SingleValuedOp(lambda x: x, lipschitz=1.0)
    report = verify_operator_properties(op, Metric.identity(4), trials=200, seed=2)
    assert report.ok
    assert report.worst_lipschitz_ratio <= 1.0 + 1e-12


def test_misdeclared_lipschitz_flagged():
    op = SingleValuedOp(lambda x: 3.0 * x, lipschitz=2.0)
    report = verify_operator_properties(op, Metric.identity(3), trials=100, seed=3)
    assert not report.ok
    assert any("Lipschitz" in v for v in report.violations)


def test_gradient_cocoercivity_margins_nonnegative():
    op = translation_gradient(np.array([1.0, -2.0, 0.5]))
    report = verify_operator_properties(op, Metric.identity(3), trials=1000, seed=4)
    assert report.ok
    assert report.cocoercivity_margin >= -1e-12
    assert report.monotonicity_margin >= -1e-12


def test_three_point_inequality_for_cocoercive_ops(scalar_l1):
    # <Cx - Cy, z - y> >= -(ell/4)|z - x|^2 - 1e-9 for cataloged cocoercive C
    cases = [(translation_gradient(rng(41).standard_normal(6)), 1.0, 6),
             (affine_single(2.0, -1.0), 2.0, 1)]
    r = rng(42)
    for op, ell, dim in cases:
        for _ in range(500):
            x, y, z = (r.standard_normal(dim) * 3 for _ in range(3))
            lhs = float(np.dot(op(x) - op(y), z - y))
            rhs = -(ell / 4.0) * float(np.dot(z - x, z - x))
            assert lhs >= rhs - 1e-9


def test_verify_rejects_bad_trials():
    with pytest.raises(ValueError):
        verify_operator_properties(prox_catalog("zero"), Metric.identity(1), trials=0)


# --- counting and reuse wrappers ---------------------------------------------

def test_counting_wrappers_tally_evaluations():
    counter = EvalCounter()
    v = CountedLinear(LinearOp.from_matrix(np.eye(2)), counter, "V")
    c = CountedSingle(translation_gradient(np.zeros(2)), counter, "F")
    v.apply(np.ones(2))
    v.apply_adjoint(np.ones(2))
    v.apply_adjoint(np.ones(2))
    c(np.ones(2))
    assert counter.snapshot() == {"V": 1, "V*": 2, "F": 1}
    counter.reset()
    assert counter.snapshot() == {}


def test_memo_wrappers_reuse_exact_arguments():
    counter = EvalCounter()
    v = MemoLinear(CountedLinear(LinearOp.from_matrix(np.eye(3)), counter, "V"))
    x = np.arange(3.0)
    v.apply(x)
    v.apply(x.copy())        # same bytes -> no new evaluation
    v.apply(x + 1.0)
    assert counter.get("V") == 2
    f = MemoSingle(CountedSingle(translation_gradient(np.zeros(3)), counter, "F"))
    f(x), f(x.copy())
    assert counter.get("F") == 1
