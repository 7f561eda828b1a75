"""Control-affine problem data and pointwise Pontryagin quantities.

A problem is described by m+1 vector fields ``f_0 .. f_m`` so that the
dynamics read ``xdot = f_0(x) + sum_i u_i f_i(x)``.  Every field map works on
arrays with arbitrary leading batch axes: a state of shape ``(..., n)``
yields a value of shape ``(..., n)``, a Jacobian of shape ``(..., n, n)``
(``J[a, b] = d f_a / d x_b``) and, optionally, second derivatives of shape
``(..., n, n, n)`` (``H[a, b, c] = d2 f_a / dx_b dx_c``).

Integral costs are carried by extra "cost states" whose costate is pinned to
one; they are listed in :attr:`ProblemDef.cost_states`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, LegendreClebschViolation

#: condition number beyond which the singular-control system is rejected
LC_COND_MAX = 1e12


def _common_shape(items):
    shapes = {c.shape for c in items if isinstance(c, np.ndarray)}
    if len(shapes) == 1:
        return shapes.pop()
    return np.broadcast_shapes(*(np.shape(c) for c in items))


def vec(*components):
    """Stack broadcastable scalar/array components along a new last axis."""
    shape = _common_shape(components)
    out = np.empty(shape + (len(components),))
    for i, c in enumerate(components):
        out[..., i] = c
    return out


def mat(rows):
    """Build a ``(..., r, c)`` array from nested lists of broadcastable entries."""
    shape = _common_shape([c for row in rows for c in row])
    out = np.empty(shape + (len(rows), len(rows[0])))
    for i, row in enumerate(rows):
        for j, c in enumerate(row):
            out[..., i, j] = c
    return out


@dataclass(frozen=True)
class VectorField:
    """A smooth map R^n -> R^n with its derivatives."""

    f: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class EndpointConstraints:
    """Equality constraints ``eta(x0, xT) = 0`` with Jacobians ``(J0, JT)``."""

    dim: int
    value: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray, np.ndarray], tuple]


@dataclass(frozen=True)
class ProblemDef:
    """An optimal control problem affine in every control component.

    Parameters
    ----------
    n, m : int
        State and control dimensions (cost states included in ``n``).
    fields : sequence of VectorField
        ``f_0 .. f_m``; ``f_0`` is the drift.
    cost, cost_grad : callables
        Endpoint cost ``phi(x0, xT)`` and its gradient pair ``(g0, gT)``.
    x0 : array
        Initial state.  Components listed in ``x0_free`` are unknowns and
        their entries here only serve as guesses.
    terminal : dict
        Simple terminal equalities ``xT[i] = value``.
    constraints : EndpointConstraints, optional
        General endpoint constraints whose multipliers become unknowns.
    bounds : array (m, 2), optional
        Control bounds ``[lower, upper]`` per component.
    T : float
        Final time, or the initial guess for it when ``free_time``.
    cost_states : tuple of int
        Indices of integral-cost accumulators (costate pinned to 1).
    singular_control : callable, optional
        Closed-form resolver ``(x, p, active) -> u_active``.
    """

    n: int
    m: int
    fields: tuple
    cost: Callable
    cost_grad: Callable
    x0: np.ndarray
    T: float
    free_time: bool = False
    x0_free: tuple = ()
    terminal: dict = field(default_factory=dict)
    constraints: Optional[EndpointConstraints] = None
    bounds: Optional[np.ndarray] = None
    cost_states: tuple = ()
    singular_control: Optional[Callable] = None
    name: str = "problem"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if self.n < 1 or self.m < 1:
            raise ConfigurationError("n and m must be positive")
        if len(self.fields) != self.m + 1:
            raise ConfigurationError(
                f"expected {self.m + 1} vector fields, got {len(self.fields)}")
        if self.x0.shape != (self.n,):
            raise ConfigurationError("x0 must have shape (n,)")
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            if b.shape != (self.m, 2):
                raise ConfigurationError("bounds must have shape (m, 2)")
            if np.any(b[:, 0] >= b[:, 1]):
                raise ConfigurationError("control bounds need lower < upper")
            object.__setattr__(self, "bounds", b)
        for i in tuple(self.terminal) + tuple(self.x0_free) + tuple(self.cost_states):
            if not 0 <= i < self.n:
                raise ConfigurationError(f"state index {i} out of range")
        if set(self.cost_states) & (set(self.terminal) | set(self.x0_free)):
            raise ConfigurationError("cost states cannot be fixed at T or free at 0")

    @property
    def has_hessians(self):
        return all(f.hess is not None for f in self.fields)

    @property
    def costate_indices(self):
        """Costate components that are not pinned by a cost state."""
        return tuple(i for i in range(self.n) if i not in self.cost_states)

    def full_costate(self, p_free):
        """Insert the pinned cost-state costates into ``p_free``."""
        p_free = np.asarray(p_free, dtype=float)
        p = np.ones(p_free.shape[:-1] + (self.n,))
        p[..., list(self.costate_indices)] = p_free
        return p

    def drift(self, x, u):
        """State velocity ``f_0(x) + sum u_i f_i(x)``."""
        F = field_values(self, x)
        return _combine(F, u)


@dataclass
class PontryaginPoint:
    x: np.ndarray
    p: np.ndarray
    u: np.ndarray
    H: float
    Phi: np.ndarray
    Phi_dot: np.ndarray


def _full_u(u):
    u = np.asarray(u, dtype=float)
    return np.concatenate([np.ones(u.shape[:-1] + (1,)), u], axis=-1)


def _combine(stack, u):
    """``sum_k ubar_k stack[k]`` with ``ubar = (1, u)``; ``stack`` has a leading field axis."""
    u = np.asarray(u, dtype=float)
    shape = u.shape[:-1] + (1,) * (stack.ndim - u.ndim)
    out = stack[0] + u[..., 0].reshape(shape) * stack[1]
    for k in range(2, stack.shape[0]):
        out += u[..., k - 1].reshape(shape) * stack[k]
    return out


def _stack_fields(values, shape):
    out = np.empty((len(values),) + shape)
    for k, v in enumerate(values):
        out[k] = v
    return out


def field_values(prob, x):
    return _stack_fields([fi.f(x) for fi in prob.fields], np.shape(x))


def field_jacobians(prob, x):
    if any(fi.jac is None for fi in prob.fields):
        raise ConfigurationError("vector field Jacobians are required")
    shape = np.shape(x) + (np.shape(x)[-1],)
    return _stack_fields([fi.jac(x) for fi in prob.fields], shape)


def field_hessians(prob, x):
    if not prob.has_hessians:
        raise ConfigurationError("vector field second derivatives are required")
    n = np.shape(x)[-1]
    shape = np.shape(x) + (n, n)
    return _stack_fields([fi.hess(x) for fi in prob.fields], shape)


def _mv(M, v):
    return np.einsum("...ab,...b->...a", M, v)


def _bilinear(H, a, b):
    return np.einsum("...abc,...b,...c->...a", H, a, b)


def eval_matrices(prob, x, u):
    """Return ``(A, B, B1)`` at ``(x, u)``.

    ``A = sum_i ubar_i f_i'(x)``, the columns of ``B`` are ``f_1 .. f_m`` and
    ``B1 = A B - dB/dt`` with ``dB/dt`` column ``i`` equal to ``f_i'(x) xdot``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    F = field_values(prob, x)
    J = field_jacobians(prob, x)
    A = _combine(J, u)
    xdot = _combine(F, u)
    B = np.stack([F[i] for i in range(1, prob.m + 1)], axis=-1)
    dB = np.stack([_mv(J[i], xdot) for i in range(1, prob.m + 1)], axis=-1)
    B1 = A @ B - dB
    return A, B, B1


def hamiltonian(prob, x, p, u):
    return np.einsum("...a,...a->...", p, prob.drift(x, u))


def switching_function(prob, x, p):
    F = field_values(prob, x)
    return np.stack([np.einsum("...a,...a->...", p, F[i])
                     for i in range(1, prob.m + 1)], axis=-1)


def switching_derivative(prob, x, p, u):
    _, _, B1 = eval_matrices(prob, x, u)
    return -np.einsum("...a,...ai->...i", p, B1)


def eval_point(prob, x, p, u):
    """Evaluate H, the switching function and its time derivative."""
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    _, B, B1 = eval_matrices(prob, x, u)
    H = float(np.dot(p, prob.drift(x, u)))
    return PontryaginPoint(x=x, p=p, u=u, H=H, Phi=p @ B, Phi_dot=-(p @ B1))


def phi_ddot(prob, x, p, u, cache=None):
    """Second time derivative of the switching function with ``u`` held fixed.

    For scalar control, and along singular arcs in general, this is affine in
    ``u``.  ``cache`` may hold precomputed ``(F, J, Hs)`` field data.
    """
    F, J, Hs = cache if cache is not None else (
        field_values(prob, x), field_jacobians(prob, x), field_hessians(prob, x))
    ubar = _full_u(u)
    xdot = _combine(F, u)
    A = _combine(J, u)
    out = []
    for i in range(1, prob.m + 1):
        b1 = np.zeros_like(xdot)
        db1 = np.zeros_like(xdot)
        for j in range(prob.m + 1):
            if j == i:
                continue
            w = ubar[..., j, None]
            b1 += w * (_mv(J[j], F[i]) - _mv(J[i], F[j]))
            db1 += w * (_bilinear(Hs[j], F[i], xdot) + _mv(J[j], _mv(J[i], xdot))
                        - _bilinear(Hs[i], F[j], xdot) - _mv(J[i], _mv(J[j], xdot)))
        out.append(np.einsum("...a,...a->...", p, _mv(A, b1) - db1))
    return np.stack(out, axis=-1)


def singular_coefficients(prob, x, p, singular_set, bang_values, cache=None):
    """Affine decomposition ``Phi_ddot_S = c0 + C1 u_S`` over the singular set."""
    S = list(singular_set)
    x = np.asarray(x, dtype=float)
    base = np.broadcast_to(np.asarray(bang_values, dtype=float),
                           x.shape[:-1] + (prob.m,)).copy()
    base[..., S] = 0.0
    if cache is None:
        cache = (field_values(prob, x), field_jacobians(prob, x), field_hessians(prob, x))
    d0 = phi_ddot(prob, x, p, base, cache)
    c0 = d0[..., S]
    cols = []
    for k in S:
        uk = base.copy()
        uk[..., k] = 1.0
        cols.append(phi_ddot(prob, x, p, uk, cache)[..., S] - c0)
    C1 = np.stack(cols, axis=-1)
    return c0, C1


def generic_singular_control(prob, x, p, singular_set, bang_values, cache=None,
                             strict=True):
    """Solve ``Phi_ddot_S = 0`` for the singular components.

    With ``strict`` a :class:`LegendreClebschViolation` is raised when the
    coefficient matrix is (numerically) singular; otherwise NaN is returned
    for the offending batch members.
    """
    c0, C1 = singular_coefficients(prob, x, p, singular_set, bang_values, cache)
    if C1.shape[-1] == 1:
        c1 = C1[..., 0, 0]
        bad = ~(np.abs(c1) > 0) | ~np.isfinite(c1)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (-c0[..., 0] / c1)[..., None]
    else:
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(C1)
        bad = ~(cond <= LC_COND_MAX)
        Csafe = np.where(bad[..., None, None], np.eye(C1.shape[-1]), C1)
        u = np.linalg.solve(Csafe, -c0[..., None])[..., 0]
    if np.any(bad):
        if strict:
            raise LegendreClebschViolation(
                "singular-control coefficient matrix is not invertible")
        u = np.where(bad[..., None], np.nan, u)
    return u


def singular_control(prob, x, p, singular_set, bang_values=None, method="auto",
                     cache=None, strict=True):
    """Controls of the singular components solving ``Phi_ddot = 0``.

    ``method`` is ``"closed"`` (problem-supplied formula), ``"generic"``
    (field second derivatives) or ``"auto"`` (closed form when available).
    """
    singular_set = tuple(singular_set)
    if bang_values is None:
        bang_values = np.zeros(prob.m)
    if method == "auto":
        method = "closed" if prob.singular_control is not None else "generic"
    if method == "closed":
        if prob.singular_control is None:
            raise ConfigurationError("problem has no closed-form singular control")
        u = np.asarray(prob.singular_control(x, p, singular_set), dtype=float)
        if strict and not np.all(np.isfinite(u)):
            raise LegendreClebschViolation("closed-form singular control is not finite")
        return u
    if method != "generic":
        raise ConfigurationError(f"unknown singular-control method {method!r}")
    if not prob.has_hessians:
        raise ConfigurationError(
            "generic singular control needs field second derivatives")
    return generic_singular_control(prob, x, p, singular_set, bang_values, cache, strict)


def legendre_clebsch_matrix(prob, x, p, singular_set, bang_values=None):
    """``R = -d Phi_ddot_S / d u_S``; positive definite under the strengthened condition."""
    if bang_values is None:
        bang_values = np.zeros(prob.m)
    _, C1 = singular_coefficients(prob, x, p, singular_set, bang_values)
    return -C1


def goh_matrix(prob, x, p):
    """``C B`` with ``C`` rows ``p f_i'(x)``; symmetric along optimal singular arcs."""
    F = field_values(prob, x)
    J = field_jacobians(prob, x)
    m = prob.m
    C = np.stack([np.einsum("...a,...ab->...b", p, J[i]) for i in range(1, m + 1)], axis=-2)
    B = np.stack([F[i] for i in range(1, m + 1)], axis=-1)
    return C @ B


def check_jacobians(prob, probes=5, rng=None, scale=1.0, center=None):
    """Compare supplied derivatives with central differences at random points.

    Returns the worst relative mismatch found over Jacobians and, when
    present, second derivatives.  The step is ``1e-6 (1 + |x|)``.
    """
    rng = np.random.default_rng(rng)
    center = prob.x0 if center is None else np.asarray(center, dtype=float)
    worst = 0.0
    for _ in range(probes):
        x = center + scale * rng.uniform(-1.0, 1.0, prob.n) * (0.1 + np.abs(center))
        for fi in prob.fields:
            val = fi.f(x)
            if np.shape(np.broadcast_to(val, x.shape)) != (prob.n,):
                raise ConfigurationError("field output dimension differs from n")
            pairs = [(fi.f, fi.jac)]
            if fi.hess is not None:
                pairs.append((fi.jac, fi.hess))
            for g, dg in pairs:
                if dg is None:
                    continue
                exact = np.asarray(dg(x), dtype=float)
                approx = np.zeros_like(exact)
                for b in range(prob.n):
                    h = 1e-6 * (1.0 + abs(x[b]))
                    e = np.zeros(prob.n)
                    e[b] = h
                    d = (np.asarray(g(x + e), dtype=float) - np.asarray(g(x - e), dtype=float)) / (2 * h)
                    approx[..., b] = np.broadcast_to(d, exact[..., b].shape)
                err = np.max(np.abs(exact - approx)) / (1.0 + np.max(np.abs(exact)))
                worst = max(worst, float(err))
    return worst
