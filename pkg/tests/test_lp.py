import random
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from supermarket.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, LinearProgram


def test_textbook_maximization():
    lp = LinearProgram(2, {0: F(-3), 1: F(-5)})
    lp.add_le({0: F(1)}, 4)
    lp.add_le({1: F(2)}, 12)
    lp.add_le({0: F(3), 1: F(2)}, 18)
    res = lp.solve()
    assert res.status == OPTIMAL
    assert res.x == [2, 6] and res.value == -36


def test_free_variable_minimax():
    # min t with t >= 3p - 1 and t >= 2(3(1 - p) - 1), 0 <= p <= 1
    lp = LinearProgram(2, {1: F(1)}, free={1})
    lp.add_le({0: F(3), 1: F(-1)}, 1)
    lp.add_ge({0: F(6), 1: F(1)}, 4)
    lp.add_le({0: F(1)}, 1)
    res = lp.solve()
    assert res.x == [F(5, 9), F(2, 3)]


def test_infeasible_and_unbounded():
    lp = LinearProgram(1, {0: F(1)})
    lp.add_eq({0: F(1)}, -1)
    assert lp.solve().status == INFEASIBLE
    assert LinearProgram(1, {0: F(-1)}).solve().status == UNBOUNDED


def test_redundant_equalities():
    lp = LinearProgram(2, {0: F(1), 1: F(2)})
    lp.add_eq({0: F(1), 1: F(1)}, 1)
    lp.add_eq({0: F(2), 1: F(2)}, 2)
    res = lp.solve()
    assert res.value == 1 and res.x == [1, 0]


def test_degenerate_cycling_example():
    # Beale's example cycles under the textbook rule; Bland's rule terminates.
    lp = LinearProgram(4, {0: F(-3, 4), 1: F(150), 2: F(-1, 50), 3: F(6)})
    lp.add_le({0: F(1, 4), 1: F(-60), 2: F(-1, 25), 3: F(9)}, 0)
    lp.add_le({0: F(1, 2), 1: F(-90), 2: F(-1, 50), 3: F(3)}, 0)
    lp.add_le({2: F(1)}, 1)
    res = lp.solve()
    assert res.value == F(-1, 20)


def test_bad_variable_index():
    with pytest.raises(IndexError):
        LinearProgram(1).add_le({3: F(1)}, 1)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_float_solver(seed):
    rng = random.Random(seed)
    n, m_le, m_eq = rng.randint(1, 5), rng.randint(0, 4), rng.randint(0, 2)
    coef = lambda: F(rng.randint(-5, 5), rng.randint(1, 3))
    c = {k: coef() for k in range(n)}
    lp = LinearProgram(n, c)
    A_ub, b_ub, A_eq, b_eq = [], [], [], []
    for _ in range(m_le):
        row = {k: coef() for k in range(n)}
        b = F(rng.randint(-2, 8))
        lp.add_le(row, b)
        A_ub.append([float(row[k]) for k in range(n)])
        b_ub.append(float(b))
    # box keeps the float oracle bounded
    for k in range(n):
        lp.add_le({k: F(1)}, 10)
    for _ in range(m_eq):
        row = {k: coef() for k in range(n)}
        b = F(rng.randint(-3, 3))
        lp.add_eq(row, b)
        A_eq.append([float(row[k]) for k in range(n)])
        b_eq.append(float(b))
    res = lp.solve()
    ref = linprog(
        [float(c[k]) for k in range(n)],
        A_ub=A_ub or None, b_ub=b_ub or None, A_eq=A_eq or None, b_eq=b_eq or None,
        bounds=[(0, 10)] * n, method="highs",
    )
    if ref.status == 2:
        assert res.status == INFEASIBLE
        return
    assert ref.status == 0
    assert res.status == OPTIMAL
    assert float(res.value) == pytest.approx(ref.fun, abs=1e-7)
    x = np.array([float(v) for v in res.x])
    if A_ub:
        assert (np.array(A_ub) @ x <= np.array(b_ub) + 1e-9).all()
    if A_eq:
        assert np.allclose(np.array(A_eq) @ x, b_eq)
    assert (x >= 0).all()
