import functools

import numpy as np
import pytest

from singshoot.benchmarks import get_case
from singshoot.integrate import SINGULAR, ControlStructure
from singshoot.problem import ProblemDef, VectorField, mat, vec
from singshoot.shooting import residual_map_for_case
from singshoot.solver import SolverSettings, solve


@functools.lru_cache(maxsize=None)
def solved(name, formulation="extended"):
    """Converged solve of a benchmark from its default start (cached per session)."""
    case = get_case(name)
    R = residual_map_for_case(case, formulation)
    rep = solve(R, case.default_start(), SolverSettings(tol=case.tol))
    assert rep.converged, rep.message
    return case, R, rep


@functools.lru_cache(maxsize=None)
def solved_trajectory(name, formulation="extended"):
    case, R, rep = solved(name, formulation)
    return R.trajectory(rep.nu)


@pytest.fixture(params=["fishing", "regulator", "goddard"])
def benchmark_name(request):
    return request.param


def zero_problem(n=2, m=1, bounds=True):
    """All vector fields identically zero, with a running-cost-free terminal cost."""
    def zero_field():
        return VectorField(
            f=lambda x: np.zeros(np.shape(x)),
            jac=lambda x: np.zeros(np.shape(x) + (n,)),
            hess=lambda x: np.zeros(np.shape(x) + (n, n)))

    return ProblemDef(
        n=n, m=m, fields=tuple(zero_field() for _ in range(m + 1)),
        cost=lambda x0, xT: np.asarray(xT)[..., 0],
        cost_grad=lambda x0, xT: (np.zeros(np.shape(x0)),
                                  np.eye(n)[0] + np.zeros(np.shape(xT))),
        x0=np.arange(1.0, n + 1.0), T=1.0,
        bounds=np.array([[-1.0, 1.0]] * m) if bounds else None, name="zero")


def singular_toy(c=2.0, T=3.0):
    """Fully singular linear problem with a closed-form solution.

    States ``(x1, x2, J)``: ``x1' = u``, ``x2' = x1``, ``J' = x1**2 / 2``;
    ``x2(0) = 0``, ``x2(T) = c``, ``x1(0)`` free, ``u`` unbounded.  The
    optimum keeps ``x1 = c/T`` with ``u = 0``, ``p1 = 0``, ``p2 = -c/T``.
    """
    f0 = VectorField(
        f=lambda x: vec(0.0 * x[..., 0], x[..., 0], 0.5 * x[..., 0] ** 2),
        jac=lambda x: mat([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [x[..., 0], 0.0, 0.0]]),
        hess=lambda x: _toy_hess(x))
    f1 = VectorField(
        f=lambda x: vec(1.0 + 0.0 * x[..., 0], 0.0, 0.0),
        jac=lambda x: np.zeros(np.shape(x) + (3,)),
        hess=lambda x: np.zeros(np.shape(x) + (3, 3)))
    return ProblemDef(
        n=3, m=1, fields=(f0, f1),
        cost=lambda x0, xT: np.asarray(xT)[..., 2],
        cost_grad=lambda x0, xT: (np.zeros(np.shape(x0)),
                                  np.array([0.0, 0.0, 1.0]) + np.zeros(np.shape(xT))),
        x0=np.array([0.0, 0.0, 0.0]), T=T, x0_free=(0,), terminal={1: c}, cost_states=(2,),
        name="toy")


def _toy_hess(x):
    out = np.zeros(np.shape(x)[:-1] + (3, 3, 3))
    out[..., 2, 0, 0] = 1.0
    return out


SINGLE_SINGULAR = ControlStructure(((SINGULAR,),))


#: criterion number -> (passed, one-line summary), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, summary = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'}  {summary}")
