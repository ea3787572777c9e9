import numpy as np
import pytest

from momsplit.problems import (make_constructed_saddle, make_lasso_saddle,
                               make_scalar_inclusion, make_tv_denoise)


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture(scope="session")
def scalar_l1():
    # 0 in sign(x) + x - 1  ->  x* = 0
    return make_scalar_inclusion({"a": {"name": "l1", "weight": 1.0},
                                  "c": {"slope": 1.0, "offset": -1.0}})


@pytest.fixture(scope="session")
def scalar_shifted():
    # 0 in sign(x) + x - 3  ->  x* = 2
    return make_scalar_inclusion({"a": {"name": "l1", "weight": 1.0},
                                  "c": {"slope": 1.0, "offset": -3.0}})


@pytest.fixture(scope="session")
def scalar_two_prox():
    # 0 in d|x| + d|x-1| + 0.5x - 0.2, strictly monotone, for the
    # Douglas-Rachford-style schemes (two resolvent-capable pieces, V = Id)
    return make_scalar_inclusion({"a": {"name": "l1", "weight": 1.0},
                                  "a2": {"name": "l1", "weight": 1.0, "center": 1.0},
                                  "c": {"slope": 0.5, "offset": -0.2}})


@pytest.fixture(scope="session")
def scalar_two_prox_plain():
    # same two-resolvent structure without a cocoercive term (for frdr)
    return make_scalar_inclusion({"a": {"name": "quadratic", "q": 0.5, "b": 0.4},
                                  "a2": {"name": "l1", "weight": 1.0, "center": 1.0}})


@pytest.fixture(scope="session")
def lasso():
    return make_lasso_saddle(20, 50, 0.1, seed=42)


@pytest.fixture(scope="session")
def lasso_small():
    return make_lasso_saddle(12, 20, 0.15, seed=3)


@pytest.fixture(scope="session")
def constructed():
    return make_constructed_saddle(12, 16, 0.4, 0.25, seed=13)


@pytest.fixture(scope="session")
def tv_small():
    return make_tv_denoise(8, 8, 0.1, seed=2)


@pytest.fixture(scope="session")
def tv32():
    return make_tv_denoise(32, 32, 0.1, seed=7)
