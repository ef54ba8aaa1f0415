import pytest

import mixdim as mx


@pytest.fixture(scope="session")
def tp1_problem():
    """The manufactured problem, gated by the strong-form residual check."""
    prob = mx.tp1()
    mx.residual_check(prob)
    return prob


@pytest.fixture(scope="session")
def tp1_n2(tp1_problem):
    return mx.discretize(tp1_problem, 2)


@pytest.fixture(scope="session")
def tp1_n2_rich(tp1_problem):
    """n=2 with a 1D partition fine enough to carry interior DOFs."""
    return mx.discretize(tp1_problem, 2, mx.Deltas(uhat=3.0, psi_d=0.5, psi_sigma=0.5))


@pytest.fixture(scope="session")
def tp1_n4(tp1_problem):
    return mx.discretize(tp1_problem, 4, with_b=True)
