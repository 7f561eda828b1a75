"""The three reference problems: fishing, regulator and Goddard.

Each family is registered under its name with a parameter dictionary so that
problem-config files (and worker processes) can rebuild it from plain data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError
from .integrate import SINGULAR, ControlStructure
from .problem import ProblemDef, VectorField, mat, vec


@dataclass(frozen=True)
class BenchmarkCase:
    """A problem, its arc structure and the published reference data."""

    name: str
    problem: ProblemDef
    structure: ControlStructure
    nu_hat: np.ndarray
    nu_hat_extended: np.ndarray
    objective: float
    sigma: dict
    kappa: dict
    grid: tuple
    combine_entry: bool = False
    unknown_names: tuple = ()
    tol: float = 1e-12
    params: dict = field(default_factory=dict)
    #: default initial guess for a single solve
    start: Optional[np.ndarray] = None

    def default_start(self):
        return self.nu_hat.copy() if self.start is None else np.array(self.start, dtype=float)


def _terminal_cost(n, index, sign=1.0):
    def cost(x0, xT):
        return sign * np.asarray(xT)[..., index]

    def grad(x0, xT):
        gT = np.zeros(np.shape(xT))
        gT[..., index] = sign
        return np.zeros(np.shape(x0)), gT

    return cost, grad


FISHING_DEFAULTS = dict(T=10.0, E=1.0, c=17.5, r=0.71, k=80.5, Umax=20.0, x0=70.0,
                        cost_scale=1.0, unit_control=False)


def fishing_problem(T=10.0, E=1.0, c=17.5, r=0.71, k=80.5, Umax=20.0, x0=70.0,
                    cost_scale=1.0, unit_control=False):
    """Harvesting with logistic growth; state ``(x, J)`` with ``J`` the negated revenue.

    By default the control is the harvesting rate itself, ``u`` in
    ``[0, Umax]``, and the switching function is ``c/x - E - p`` (for the
    unit costate of ``J``).  With ``unit_control`` the control is the
    fraction ``u`` in ``[0, 1]`` of the maximal rate, which multiplies the
    switching function by ``Umax``.  Both describe the same problem; the
    Jacobian of the shooting function differs by the scaling of its
    singular-entry rows.
    """
    s = cost_scale
    a = Umax if unit_control else 1.0

    f0 = VectorField(
        f=lambda x: vec(r * x[..., 0] * (1 - x[..., 0] / k), 0.0 * x[..., 0]),
        jac=lambda x: mat([[r * (1 - 2 * x[..., 0] / k), 0.0], [0.0, 0.0]]),
        hess=lambda x: np.broadcast_to(
            np.array([[[-2 * r / k, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]]),
            np.shape(x)[:-1] + (2, 2, 2)),
    )
    f1 = VectorField(
        f=lambda x: vec(-a + 0.0 * x[..., 0], s * (c / x[..., 0] - E) * a),
        jac=lambda x: mat([[0.0, 0.0], [-s * c * a / x[..., 0] ** 2, 0.0]]),
        hess=lambda x: _fishing_f1_hess(x, s * c * a),
    )

    def u_sing(x, p, active):
        xs = x[..., 0]
        q = p[..., 0] / (s * p[..., 1])
        u = k * r / (2 * (c / xs - q) * a) * (
            c / xs - c / k - q + 2 * q * xs / k - 2 * q * xs ** 2 / k ** 2)
        return u[..., None]

    cost, grad = _terminal_cost(2, 1)
    return ProblemDef(
        n=2, m=1, fields=(f0, f1), cost=cost, cost_grad=grad,
        x0=np.array([x0, 0.0]), T=T, bounds=np.array([[0.0, Umax / a]]),
        cost_states=(1,), singular_control=u_sing, name="fishing",
        params=dict(T=T, E=E, c=c, r=r, k=k, Umax=Umax, x0=x0, cost_scale=cost_scale,
                    unit_control=bool(unit_control)))


def _fishing_f1_hess(x, a):
    out = np.zeros(np.shape(x)[:-1] + (2, 2, 2))
    out[..., 1, 0, 0] = 2 * a / x[..., 0] ** 3
    return out


REGULATOR_DEFAULTS = dict(T=5.0, x10=0.0, x20=1.0, umin=-1.0, umax=1.0)


def regulator_problem(T=5.0, x10=0.0, x20=1.0, umin=-1.0, umax=1.0):
    """Double integrator with quadratic running cost, state ``(x1, x2, J)``."""
    f0 = VectorField(f=_regulator_drift, jac=_regulator_drift_jac,
                     hess=lambda x: _regulator_hess(x))
    f1 = VectorField(
        f=_regulator_input,
        jac=lambda x: np.zeros(np.shape(x) + (3,)),
        hess=lambda x: np.zeros(np.shape(x) + (3, 3)),
    )
    cost, grad = _terminal_cost(3, 2)
    bounds = None if umin is None else np.array([[umin, umax]])
    return ProblemDef(
        n=3, m=1, fields=(f0, f1), cost=cost, cost_grad=grad,
        x0=np.array([x10, x20, 0.0]), T=T, bounds=bounds, cost_states=(2,),
        singular_control=lambda x, p, active: x[..., :1] + 0.0 * p[..., :1],
        name="regulator", params=dict(T=T, x10=x10, x20=x20, umin=umin, umax=umax))


# The regulator fields sit in the innermost integration loop, so they fill
# their outputs in place rather than going through ``vec``/``mat``.
def _regulator_drift(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    out[..., 0] = x[..., 1]
    out[..., 1] = 0.0
    out[..., 2] = 0.5 * (x[..., 0] ** 2 + x[..., 1] ** 2)
    return out


def _regulator_drift_jac(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (3,))
    out[..., 0, 1] = 1.0
    out[..., 2, 0] = x[..., 0]
    out[..., 2, 1] = x[..., 1]
    return out


def _regulator_input(x):
    out = np.zeros(np.shape(x))
    out[..., 1] = 1.0
    return out


def _regulator_hess(x):
    out = np.zeros(np.shape(x)[:-1] + (3, 3, 3))
    out[..., 2, 0, 0] = 1.0
    out[..., 2, 1, 1] = 1.0
    return out


GODDARD_DEFAULTS = dict(b=2.0, Tmax=3.5, drag=310.0, decay=500.0, r0=1.0, v0=0.0,
                        m0=1.0, rT=1.01, T=0.17)


def goddard_problem(b=2.0, Tmax=3.5, drag=310.0, decay=500.0, r0=1.0, v0=0.0, m0=1.0,
                    rT=1.01, T=0.17):
    """Vertical rocket ascent with free final time; state ``(r, v, m)``.

    Drag is ``drag * v**2 * exp(-decay (r - 1))``; the objective is ``-m(T)``.
    """

    def D(x):
        r, v = x[..., 0], x[..., 1]
        e = np.exp(-decay * (r - 1.0))
        return drag * v ** 2 * e, drag * e

    def f0_f(x):
        r, v, m = x[..., 0], x[..., 1], x[..., 2]
        d, _ = D(x)
        return vec(v, -1.0 / r ** 2 - d / m, 0.0 * r)

    def f0_jac(x):
        r, v, m = x[..., 0], x[..., 1], x[..., 2]
        d, ce = D(x)
        d_r = -decay * d
        d_v = 2.0 * ce * v
        z = 0.0 * r
        return mat([[z, 1.0, z],
                    [2.0 / r ** 3 - d_r / m, -d_v / m, d / m ** 2],
                    [z, z, z]])

    def f0_hess(x):
        r, v, m = x[..., 0], x[..., 1], x[..., 2]
        d, ce = D(x)
        d_r = -decay * d
        d_v = 2.0 * ce * v
        d_rr = decay ** 2 * d
        d_rv = -decay * d_v
        d_vv = 2.0 * ce
        out = np.zeros(np.shape(x)[:-1] + (3, 3, 3))
        out[..., 1, 0, 0] = -6.0 / r ** 4 - d_rr / m
        out[..., 1, 0, 1] = out[..., 1, 1, 0] = -d_rv / m
        out[..., 1, 0, 2] = out[..., 1, 2, 0] = d_r / m ** 2
        out[..., 1, 1, 1] = -d_vv / m
        out[..., 1, 1, 2] = out[..., 1, 2, 1] = d_v / m ** 2
        out[..., 1, 2, 2] = -2.0 * d / m ** 3
        return out

    def f1_f(x):
        m = x[..., 2]
        return vec(0.0 * m, Tmax / m, -b * Tmax + 0.0 * m)

    def f1_jac(x):
        m = x[..., 2]
        out = np.zeros(np.shape(x) + (3,))
        out[..., 1, 2] = -Tmax / m ** 2
        return out

    def f1_hess(x):
        m = x[..., 2]
        out = np.zeros(np.shape(x) + (3, 3))
        out[..., 1, 2, 2] = 2.0 * Tmax / m ** 3
        return out

    cost, grad = _terminal_cost(3, 2, sign=-1.0)
    return ProblemDef(
        n=3, m=1,
        fields=(VectorField(f0_f, f0_jac, f0_hess), VectorField(f1_f, f1_jac, f1_hess)),
        cost=cost, cost_grad=grad, x0=np.array([r0, v0, m0]), T=T, free_time=True,
        terminal={0: rT}, bounds=np.array([[0.0, 1.0]]), name="goddard",
        params=dict(b=b, Tmax=Tmax, drag=drag, decay=decay, r0=r0, v0=v0, m0=m0, rT=rT, T=T))


FISHING_NU = np.array([-0.462254744307241, 2.37041478456004, 6.98877992494185])
FISHING_NU_EXT = np.array([-0.462254744307242, 2.37041478456004, 6.98877992494185])
REGULATOR_NU = np.array([0.942173346483640, 1.44191017584598, 1.41376408762863])
REGULATOR_NU_EXT = np.array([0.942173346476773, 1.44191017581021, 1.41376408762893])
GODDARD_NU = np.array([-50.9280055899288, -1.94115676279896, -0.693270270795148,
                       0.02350968417421373, 0.06684546924474312, 0.174129456729642])
GODDARD_NU_EXT = np.array([-50.9280055901093, -1.94115676280611, -0.693270270787320,
                           0.02350968417420884, 0.06684546924565564, 0.174129456733106])


def fishing(**params):
    prob = fishing_problem(**{**FISHING_DEFAULTS, **params})
    T = prob.T
    return BenchmarkCase(
        name="fishing", problem=prob,
        structure=ControlStructure((("upper",), (SINGULAR,), ("upper",))),
        nu_hat=FISHING_NU, nu_hat_extended=FISHING_NU_EXT,
        start=np.array([-0.5, 2.4, 7.0]), objective=-106.9059979,
        sigma={"classical": (3.61, 0.43, 5.63e-2), "extended": (27.2, 1.71, 3.53e-1)},
        kappa={"classical": 64.12, "extended": 77.05},
        grid=((-10.0, 10.0, 21), (0.0, T, 21), (0.0, T, 21)),
        unknown_names=("p0", "t1", "t2"), params=prob.params)


def regulator(**params):
    prob = regulator_problem(**{**REGULATOR_DEFAULTS, **params})
    return BenchmarkCase(
        name="regulator", problem=prob,
        structure=ControlStructure((("lower",), (SINGULAR,))),
        nu_hat=REGULATOR_NU, nu_hat_extended=REGULATOR_NU_EXT,
        start=np.array([1.0, 1.5, 1.4]), objective=0.37699193037,
        sigma={"classical": (24.66, 5.19, 1.96e-8), "extended": (24.70, 5.97, 1.13)},
        kappa={"classical": 1.26e9, "extended": 21.86},
        grid=((-10.0, 10.0, 21), (-10.0, 10.0, 21), (0.0, prob.T, 21)),
        combine_entry=True, unknown_names=("p1", "p2", "t1"), params=prob.params)


def goddard(**params):
    prob = goddard_problem(**{**GODDARD_DEFAULTS, **params})
    return BenchmarkCase(
        name="goddard", problem=prob,
        structure=ControlStructure((("upper",), (SINGULAR,), ("lower",))),
        nu_hat=GODDARD_NU, nu_hat_extended=GODDARD_NU_EXT,
        start=np.array([float(f"{v:.3g}") for v in GODDARD_NU]), objective=-0.634130666,
        sigma={"classical": (6182, 9.44, 8.13, 2.46, 0.86, 1.09e-3),
               "extended": (6189, 12.30, 8.23, 2.49, 0.86, 1.09e-3)},
        kappa={"classical": 5.67e6, "extended": 5.67e6},
        grid=((-10.0, 10.0, 4),) * 3 + ((0.0, 0.2, 5),) * 3,
        unknown_names=("p1", "p2", "p3", "t1", "t2", "T"), params=prob.params,
        # With 500 RK4 steps the over-determined system is consistent only to
        # about 4e-10, so the residual cannot reach 1e-12.
        tol=1e-9)


REGISTRY: dict[str, Callable[..., BenchmarkCase]] = {
    "fishing": fishing,
    "regulator": regulator,
    "goddard": goddard,
}

DEFAULTS = {"fishing": FISHING_DEFAULTS, "regulator": REGULATOR_DEFAULTS,
            "goddard": GODDARD_DEFAULTS}


def get_case(name, params: Optional[dict] = None) -> BenchmarkCase:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown problem {name!r}; known: {', '.join(sorted(REGISTRY))}") from None
    unknown = set(params or {}) - set(DEFAULTS[name])
    if unknown:
        raise ConfigurationError(f"unknown parameters for {name}: {sorted(unknown)}")
    return factory(**(params or {}))
