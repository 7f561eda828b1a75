import functools

import numpy as np
import pytest

from singshoot.benchmarks import DEFAULTS, REGISTRY, fishing, get_case, goddard, regulator
from singshoot.errors import ConfigurationError
from singshoot.shooting import residual_map_for_case
from singshoot.solver import SolverSettings, solve


@functools.lru_cache(maxsize=None)
def from_published(name, formulation):
    case = get_case(name)
    R = residual_map_for_case(case, formulation)
    start = case.nu_hat_extended if formulation == "extended" else case.nu_hat
    return solve(R, start, SolverSettings(tol=case.tol))


def test_registry():
    assert set(REGISTRY) == {"fishing", "regulator", "goddard"} == set(DEFAULTS)
    assert get_case("fishing").name == "fishing"
    with pytest.raises(ConfigurationError):
        get_case("pendulum")
    with pytest.raises(ConfigurationError):
        get_case("fishing", {"gravity": 9.81})


def test_published_parameters():
    f = fishing().problem.params
    assert (f["T"], f["E"], f["c"], f["r"], f["k"], f["Umax"], f["x0"]) == (
        10.0, 1.0, 17.5, 0.71, 80.5, 20.0, 70.0)
    r = regulator().problem
    assert r.T == 5.0 and np.array_equal(r.x0[:2], [0.0, 1.0])
    assert np.array_equal(r.bounds, [[-1.0, 1.0]])
    g = goddard().problem.params
    assert (g["Tmax"], g["drag"], g["decay"], g["r0"], g["v0"], g["m0"], g["rT"]) == (
        3.5, 310.0, 500.0, 1.0, 0.0, 1.0, 1.01)


def test_structures_and_unknowns():
    assert str(fishing().structure) == "upper,singular,upper"
    assert str(regulator().structure) == "lower,singular"
    assert str(goddard().structure) == "upper,singular,lower"
    assert goddard().unknown_names == ("p1", "p2", "p3", "t1", "t2", "T")
    assert goddard().problem.free_time and not fishing().problem.free_time


def test_published_solutions_transcribed():
    assert np.array_equal(fishing().nu_hat,
                          [-0.462254744307241, 2.37041478456004, 6.98877992494185])
    assert np.array_equal(regulator().nu_hat,
                          [0.942173346483640, 1.44191017584598, 1.41376408762863])
    assert goddard().nu_hat[3:] == pytest.approx(
        [0.02350968417421373, 0.06684546924474312, 0.174129456729642], abs=1e-11)


@pytest.mark.parametrize("formulation", ["extended", "classical"])
def test_residual_at_published_solution(benchmark_name, formulation):
    case = get_case(benchmark_name)
    R = residual_map_for_case(case, formulation)
    start = case.nu_hat_extended if formulation == "extended" else case.nu_hat
    assert np.linalg.norm(R(start)) <= 1e-7


@pytest.mark.parametrize("formulation", ["extended", "classical"])
def test_published_start_converges_within_three_iterations(benchmark_name, formulation):
    rep = from_published(benchmark_name, formulation)
    assert rep.converged and rep.iterations <= 3


@pytest.mark.parametrize("name", ["fishing", "regulator"])
def test_formulations_agree(name):
    ext, cls = from_published(name, "extended"), from_published(name, "classical")
    assert np.max(np.abs(ext.nu - cls.nu)) <= 1e-9


@pytest.mark.xfail(strict=True, reason="the discretized Goddard systems differ at ~1e-9")
def test_goddard_formulations_agree():
    ext, cls = from_published("goddard", "extended"), from_published("goddard", "classical")
    assert np.max(np.abs(ext.nu - cls.nu)) <= 1e-9


def test_goddard_formulations_agree_in_relative_terms():
    ext, cls = from_published("goddard", "extended"), from_published("goddard", "classical")
    assert np.max(np.abs(ext.nu - cls.nu) / (1 + np.abs(cls.nu))) <= 1e-9


def test_cases_are_immutable():
    case = fishing()
    with pytest.raises(Exception):
        case.name = "other"


def test_published_grids():
    assert fishing().grid == ((-10.0, 10.0, 21), (0.0, 10.0, 21), (0.0, 10.0, 21))
    assert regulator().grid == ((-10.0, 10.0, 21), (-10.0, 10.0, 21), (0.0, 5.0, 21))
    assert np.prod([c for _, _, c in goddard().grid]) == 8000
