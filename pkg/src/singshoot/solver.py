"""Newton and Gauss-Newton iterations with finite-difference Jacobians.

Both methods take full steps (step length one) without line search, damping
or trust region.  A run is converged when the final residual satisfies
``||S|| <= tol``.  Once the residual is that small the iteration still goes on
until the last step is negligible, ``||d|| <= xtol (1 + ||nu||)``, so that
slowly (linearly) converging systems are polished instead of being stopped
at the first iterate below ``tol``.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import Diverged, JacobianRankDeficient, JacobianSingular, ShootingError

#: bound on the condition number of J^T J (Gauss-Newton) or J (Newton)
KAPPA_MAX = 1e14


@dataclass
class SolverSettings:
    tol: float = 1e-12
    max_iter: int = 1000
    h_rel: float = 1e-7
    kappa_max: float = KAPPA_MAX
    xtol: float = 1e-8
    # Optional early-abandon rules; disabled (None) by default.
    max_norm: Optional[float] = None      # residual norm beyond which the run is abandoned
    max_abs: Optional[float] = None       # |nu|_inf beyond which the run is abandoned
    stall_iter: Optional[int] = None      # iterations without a new best residual

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class SolveReport:
    method: str
    iterates: List[np.ndarray]
    norms: List[float]
    steps: List[float]
    converged: bool
    iterations: int
    nu: np.ndarray
    residual: np.ndarray
    jacobian: Optional[np.ndarray] = None
    singular_values: Optional[np.ndarray] = None
    kappa: Optional[float] = None
    message: str = ""
    elapsed: float = 0.0

    @property
    def final_norm(self):
        return self.norms[-1] if self.norms else float("nan")

    def quadratic_ratios(self, reference=None, floor=1e-11):
        """``e_{k+1} / e_k**2`` with ``e_k = |nu_k - reference|`` above ``floor``."""
        ref = self.nu if reference is None else np.asarray(reference, dtype=float)
        e = [float(np.linalg.norm(v - ref)) for v in self.iterates]
        out = []
        for a, b in zip(e[:-1], e[1:]):
            if a > floor and b > floor:
                out.append(b / a ** 2)
        return out

    def to_text(self):
        lines = [f"# method={self.method} converged={self.converged} "
                 f"iterations={self.iterations} message={self.message}"]
        lines.append("k norm step")
        for k, nrm in enumerate(self.norms):
            step = self.steps[k] if k < len(self.steps) else float("nan")
            lines.append(f"{k} {nrm!r} {step!r}")
        lines.append("nu " + " ".join(repr(float(v)) for v in self.nu))
        if self.singular_values is not None:
            lines.append("sigma " + " ".join(repr(float(s)) for s in self.singular_values))
            lines.append(f"kappa {self.kappa!r}")
        return "\n".join(lines) + "\n"


def _batched(residual_map):
    if hasattr(residual_map, "batch"):
        return residual_map.batch
    return lambda nus: np.array([np.asarray(residual_map(v), dtype=float) for v in nus])


def fd_steps(nu, h_rel=1e-7):
    return h_rel * (1.0 + np.abs(np.asarray(nu, dtype=float)))


def fd_probe_points(nu, h_rel=1e-7):
    """``2r + 1`` points: ``nu`` then ``nu +/- h_j e_j`` for each coordinate."""
    nu = np.asarray(nu, dtype=float)
    r = nu.size
    h = fd_steps(nu, h_rel)
    pts = np.tile(nu, (2 * r + 1, 1))
    idx = np.arange(r)
    pts[1 + idx, idx] += h
    pts[1 + r + idx, idx] -= h
    return pts


def fd_from_values(values, nu, h_rel=1e-7):
    """Split probe-point residuals into ``(S(nu), J)``."""
    r = np.asarray(nu).size
    h = fd_steps(nu, h_rel)
    S = values[0]
    with np.errstate(over="ignore", invalid="ignore"):
        # huge probe residuals overflow here; the caller rejects non-finite J
        J = (values[1:1 + r] - values[1 + r:]).T / (2.0 * h)
    return S, J


def fd_jacobian(residual_map, nu, h_rel=1e-7, with_value=False):
    """Central-difference Jacobian with steps ``h_rel (1 + |nu_j|)``.

    All probe points are evaluated in one batch when the map supports it.
    """
    nu = np.asarray(nu, dtype=float)
    vals = _batched(residual_map)(fd_probe_points(nu, h_rel))
    bad = ~np.all(np.isfinite(vals), axis=1)
    if np.any(bad):
        j = int(np.flatnonzero(bad)[0])
        coord = None if j == 0 else (j - 1) % nu.size
        err = ShootingError(f"residual not finite at FD probe (coordinate {coord})")
        err.coordinate = coord
        raise err
    S, J = fd_from_values(vals, nu, h_rel)
    return (S, J) if with_value else J


def svd_diagnostics(J, check=True):
    """Singular values (descending) and ``kappa = s_1 / s_r`` of a tall matrix."""
    J = np.atleast_2d(np.asarray(J, dtype=float))
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    if check:
        err = np.linalg.norm(J - (U * s) @ Vt)
        if err > 1e-10 * max(s[0], np.finfo(float).tiny):
            raise ShootingError(f"SVD reconstruction error {err:.3e}")
    kappa = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    return s, kappa


def gauss_newton_step(S, J, kappa_max=KAPPA_MAX):
    """Minimum-norm solution of ``J^T J d = -J^T S`` via the SVD of ``J``."""
    U, s, Vt = np.linalg.svd(J, full_matrices=False)
    # (s0/s_min)^2 > kappa_max, written so that it cannot overflow
    if not s[-1] > 0 or s[0] > np.sqrt(kappa_max) * s[-1]:
        with np.errstate(all="ignore"):
            kappa = s[0] / s[-1] if s[-1] > 0 else np.inf
        raise JacobianRankDeficient(f"normal equations too ill-conditioned (kappa(J)={kappa:.3e})")
    return -(Vt.T @ ((U.T @ S) / s))


def newton_step(S, J, kappa_max=KAPPA_MAX):
    if J.shape[0] != J.shape[1]:
        raise JacobianSingular("Newton needs a square system")
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(J)
    if not cond <= kappa_max:
        raise JacobianSingular(f"Jacobian singular (cond={cond:.3e})")
    return np.linalg.solve(J, -S)


def _stop_reason(settings, nrm, since_best, nu, last_step):
    """Why the iteration should stop before taking another step (or None)."""
    if nrm <= settings.tol and (last_step is None
                                or last_step <= settings.xtol * (1.0 + np.linalg.norm(nu))):
        return "converged"
    if settings.max_norm is not None and nrm > settings.max_norm:
        return "abandoned: residual norm too large"
    if settings.max_abs is not None and np.max(np.abs(nu)) > settings.max_abs:
        return "abandoned: iterate too large"
    if settings.stall_iter is not None and since_best >= settings.stall_iter:
        return "abandoned: residual stalled"
    return None


def _iterate(method, step_fn, residual_map, nu0, settings):
    settings = settings or SolverSettings()
    t0 = time.perf_counter()
    nu = np.array(nu0, dtype=float)
    iterates, norms, steps = [nu.copy()], [], []
    message = ""
    S = J = None
    best, since_best = np.inf, 0
    k = 0
    while True:
        try:
            S, J = fd_jacobian(residual_map, nu, settings.h_rel, with_value=True)
        except ShootingError as exc:
            vals = np.asarray(residual_map(nu), dtype=float)
            if not np.all(np.isfinite(vals)):
                S, J = vals, None
                norms.append(float("nan"))
                message = "diverged: residual not finite"
                break
            S, J = vals, None
            message = str(exc)
        nrm = float(np.linalg.norm(S))
        norms.append(nrm)
        if nrm < best:
            best, since_best = nrm, 0
        else:
            since_best += 1
        reason = _stop_reason(settings, nrm, since_best, nu,
                              steps[-1] if steps else None)
        if reason is not None:
            message = reason
            break
        if J is None:
            break
        if k >= settings.max_iter:
            message = "maximum number of iterations reached"
            break
        try:
            d = step_fn(S, J, settings.kappa_max)
        except ShootingError as exc:
            message = str(exc)
            break
        nu = nu + d
        k += 1
        steps.append(float(np.linalg.norm(d)))
        iterates.append(nu.copy())
        if not np.all(np.isfinite(nu)):
            message = "diverged: iterate not finite"
            norms.append(float("nan"))
            break
    final = norms[-1]
    converged = bool(final <= settings.tol)
    if converged and message != "converged":
        message = f"converged ({message})"
    report = SolveReport(method=method, iterates=iterates, norms=norms, steps=steps,
                         converged=converged, iterations=k, nu=nu,
                         residual=S if S is not None else np.array([]),
                         jacobian=J, message=message)
    if J is not None and np.all(np.isfinite(J)):
        report.singular_values, report.kappa = svd_diagnostics(J, check=False)
    report.elapsed = time.perf_counter() - t0
    return report


def gauss_newton(residual_map, nu0, settings=None, raise_on_failure=False):
    """Gauss-Newton on the overdetermined shooting system."""
    rep = _iterate("gauss-newton", gauss_newton_step, residual_map, nu0, settings)
    if raise_on_failure and not rep.converged:
        _raise_for(rep, JacobianRankDeficient)
    return rep


def newton(residual_map, nu0, settings=None, raise_on_failure=False):
    """Plain Newton on a square shooting system."""
    rep = _iterate("newton", newton_step, residual_map, nu0, settings)
    if raise_on_failure and not rep.converged:
        _raise_for(rep, JacobianSingular)
    return rep


def _raise_for(rep, jac_error):
    if rep.message.startswith("diverged"):
        raise Diverged(rep.message)
    if "ill-conditioned" in rep.message or "singular" in rep.message:
        raise jac_error(rep.message)
    raise ShootingError(rep.message)


def solve(residual_map, nu0, settings=None):
    """Newton for the classical (square) formulation, Gauss-Newton otherwise."""
    nu0 = np.asarray(nu0, dtype=float)
    formulation = getattr(residual_map, "formulation", None)
    if formulation == "classical" or (
            formulation is None and getattr(residual_map, "size", None) == nu0.size):
        return newton(residual_map, nu0, settings)
    return gauss_newton(residual_map, nu0, settings)


@dataclass
class PointResult:
    """Outcome of one solve inside :func:`solve_many`."""

    nu: np.ndarray
    converged: bool
    iterations: int
    final_norm: float
    message: str


class _PointState:
    def __init__(self, nu0):
        self.nu = np.array(nu0, dtype=float)
        self.k = 0
        self.best = np.inf
        self.since_best = 0
        self.last_step = None
        self.norm = np.nan
        self.message = ""
        self.done = False


def solve_many(residual_map, starts, settings=None, method="gauss-newton", pool=128):
    """Solve from many starting points, evaluating all live FD probes together.

    Each start follows exactly the iteration of :func:`gauss_newton` (or
    :func:`newton` with ``method="newton"``); only the residual evaluations
    are shared.  At most ``pool`` solves are live at once; a finished solve
    is replaced by the next start in order, so the work done for a given
    list of starts does not depend on anything else.
    """
    settings = settings or SolverSettings()
    step_fn = newton_step if method == "newton" else gauss_newton_step
    batch = _batched(residual_map)
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    P, r = starts.shape
    width = 2 * r + 1
    states = [None] * P
    live = []
    queue = 0
    while live or queue < P:
        while len(live) < pool and queue < P:
            states[queue] = _PointState(starts[queue])
            live.append(queue)
            queue += 1
        probes = np.concatenate([fd_probe_points(states[i].nu, settings.h_rel) for i in live])
        with np.errstate(all="ignore"):
            values = batch(probes)
        still = []
        for j, i in enumerate(live):
            st = states[i]
            vals = values[j * width:(j + 1) * width]
            _advance(st, vals, settings, step_fn)
            if not st.done:
                still.append(i)
        live = still
    return [PointResult(nu=s.nu, converged=bool(s.norm <= settings.tol), iterations=s.k,
                        final_norm=float(s.norm), message=s.message) for s in states]


def _advance(st, vals, settings, step_fn):
    """One iteration of :func:`_iterate` for a single point, given its probe values."""
    S = vals[0]
    J = None
    if not np.all(np.isfinite(S)):
        st.norm = np.nan
        st.message = "diverged: residual not finite"
        st.done = True
        return
    if np.all(np.isfinite(vals)):
        S, J = fd_from_values(vals, st.nu, settings.h_rel)
    else:
        bad = int(np.flatnonzero(~np.all(np.isfinite(vals), axis=1))[0])
        st.message = f"residual not finite at FD probe (coordinate {(bad - 1) % st.nu.size})"
    nrm = float(np.linalg.norm(S))
    st.norm = nrm
    if nrm < st.best:
        st.best, st.since_best = nrm, 0
    else:
        st.since_best += 1
    reason = _stop_reason(settings, nrm, st.since_best, st.nu, st.last_step)
    if reason is not None or J is None:
        st.message = reason or st.message
        st.done = True
        return
    if st.k >= settings.max_iter:
        st.message = "maximum number of iterations reached"
        st.done = True
        return
    try:
        d = step_fn(S, J, settings.kappa_max)
    except ShootingError as exc:
        st.message = str(exc)
        st.done = True
        return
    st.nu = st.nu + d
    st.k += 1
    st.last_step = float(np.linalg.norm(d))
    if not np.all(np.isfinite(st.nu)):
        st.norm = np.nan
        st.message = "diverged: iterate not finite"
        st.done = True
