"""Post-solution checks of the optimality conditions that can be tested numerically.

Every check is evaluated on the samples of a :class:`TrajectoryRecord`
(the RK4 grid), and reports its worst-case value next to the threshold it
was compared with:

* ``goh_symmetry``: ``max |CB - (CB)^T|`` on singular arcs, where ``C`` has
  rows ``p f_i'(x)`` and ``B`` columns ``f_i(x)``;
* ``legendre_clebsch``: smallest eigenvalue of ``R = -d(Phi_ddot)/du`` on
  singular arcs (must be positive);
* ``hamiltonian_constancy``: ``max |H(t) - H(0)|`` over the horizon;
* ``singular_switching``: ``|Phi|`` and ``|Phi_dot|`` of singular components
  on singular arcs, relative to the largest ``|Phi|`` over the horizon;
* ``bang_sign_pattern``: ``Phi_i > 0`` where ``u_i`` sits at its lower bound
  and ``Phi_i < 0`` at its upper bound, on the arc interiors;
* ``bang_bang_switching``: ``|Phi_dot_i|`` bounded away from zero at
  switching times where component ``i`` jumps from one bound to the other.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import ShootingError
from .integrate import LOWER, SINGULAR, UPPER
from .problem import goh_matrix, singular_coefficients

PASS, FAIL, SKIP = "pass", "fail", "skip"


@dataclass
class CheckResult:
    name: str
    status: str
    value: float
    threshold: float
    detail: str = ""

    @property
    def passed(self):
        return self.status != FAIL


@dataclass
class DiagnosticsReport:
    checks: List[CheckResult]
    meta: Dict[str, str] = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self):
        return [c.name for c in self.checks]

    def to_text(self):
        rows = [("check", "status", "value", "threshold", "detail")]
        for c in self.checks:
            rows.append((c.name, c.status.upper(), f"{c.value:.3e}", f"{c.threshold:.3e}", c.detail))
        widths = [max(len(r[j]) for r in rows) for j in range(4)]
        lines = []
        for r in rows:
            lines.append("  ".join(r[j].ljust(widths[j]) for j in range(4)) + "  " + r[4])
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)

    def to_keyvalue(self):
        """``key = value`` lines, one per check attribute, for machine reading."""
        lines = [f"{k} = {v}" for k, v in self.meta.items()]
        for c in self.checks:
            lines.append(f"{c.name}.status = {c.status}")
            lines.append(f"{c.name}.value = {c.value!r}")
            lines.append(f"{c.name}.threshold = {c.threshold!r}")
        lines.append(f"overall = {'pass' if self.passed else 'fail'}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse_keyvalue(text):
        out = {}
        for line in text.splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
        return out


def _interior(n):
    """Indices of the samples strictly inside an arc of ``n`` samples."""
    return slice(1, n - 1) if n > 2 else slice(0, n)


def check_solution(prob, structure, trajectory, h_tol=1e-5, phi_tol=1e-6, goh_tol=1e-8,
                   rate_tol=1e-8):
    """Run all checks on a trajectory; never raises on a failed check.

    Parameters
    ----------
    prob, structure
        The problem and arc structure the trajectory was computed with.
    trajectory : TrajectoryRecord
        Grid samples, typically from :meth:`ResidualMap.trajectory`.
    h_tol
        Relative bound on ``|H(t) - H(0)|``, scaled by ``1 + |H(0)|``.
    phi_tol
        Bound on ``|Phi|`` and ``|Phi_dot|`` along singular arcs, relative
        to the largest ``|Phi|`` over the whole horizon.
    goh_tol
        Bound on the asymmetry of ``CB``.
    rate_tol
        Lower bound on ``|Phi_dot|`` at bang-bang switches, relative to the
        largest ``|Phi_dot|`` over the horizon.
    """
    arcs = trajectory.arcs
    mask = structure.singular_mask()
    bang = structure.bang_values(prob)
    checks = [
        _goh(prob, arcs, mask, goh_tol),
        _legendre_clebsch(prob, arcs, mask, bang),
        _hamiltonian(trajectory, h_tol),
        _singular_switching(trajectory, mask, phi_tol),
        _sign_pattern(structure, arcs),
        _bang_bang(structure, trajectory, rate_tol),
    ]
    return DiagnosticsReport(checks=checks, meta=dict(trajectory.meta))


def _goh(prob, arcs, mask, tol):
    worst = 0.0
    seen = False
    for k, a in enumerate(arcs):
        if not mask[k].any():
            continue
        seen = True
        CB = goh_matrix(prob, a.x, a.p)
        defect = np.abs(CB - np.swapaxes(CB, -1, -2))
        worst = max(worst, float(np.max(defect)))
    if not seen:
        return CheckResult("goh_symmetry", SKIP, 0.0, tol, "no singular arc")
    ok = np.isfinite(worst) and worst <= tol
    return CheckResult("goh_symmetry", PASS if ok else FAIL, worst, tol,
                       "max |CB - (CB)^T| on singular arcs")


def _legendre_clebsch(prob, arcs, mask, bang):
    if not mask.any():
        return CheckResult("legendre_clebsch", SKIP, np.inf, 0.0, "no singular arc")
    if not prob.has_hessians:
        return CheckResult("legendre_clebsch", SKIP, np.nan, 0.0,
                           "field second derivatives unavailable")
    lowest = np.inf
    for k, a in enumerate(arcs):
        S = tuple(np.flatnonzero(mask[k]))
        if not S:
            continue
        base = np.nan_to_num(bang[k], nan=0.0)
        with np.errstate(all="ignore"):
            _, C1 = singular_coefficients(prob, a.x, a.p, S, base)
        R = -np.asarray(C1, dtype=float).reshape(len(a.t), len(S), len(S))
        if not np.all(np.isfinite(R)):
            lowest = -np.inf
            break
        eig = np.linalg.eigvals(R).real
        lowest = min(lowest, float(eig.min()))
    ok = np.isfinite(lowest) and lowest > 0.0
    return CheckResult("legendre_clebsch", PASS if ok else FAIL, lowest, 0.0,
                       "min eigenvalue of R = -dPhi_ddot/du on singular arcs")


def _hamiltonian(traj, tol):
    H = traj.H
    H0 = float(H[0])
    dev = float(np.max(np.abs(H - H0))) if np.all(np.isfinite(H)) else np.inf
    bound = tol * (1.0 + abs(H0))
    return CheckResult("hamiltonian_constancy", PASS if dev <= bound else FAIL, dev, bound,
                       f"max |H(t) - H(0)|, H(0) = {H0:.6e}")


def _singular_switching(traj, mask, tol):
    if not mask.any():
        return CheckResult("singular_switching", SKIP, 0.0, 0.0, "no singular arc")
    scale = float(np.max(np.abs(traj.Phi)))
    worst_phi = worst_dot = 0.0
    for k, a in enumerate(traj.arcs):
        S = np.flatnonzero(mask[k])
        if S.size:
            worst_phi = max(worst_phi, float(np.max(np.abs(a.Phi[:, S]))))
            worst_dot = max(worst_dot, float(np.max(np.abs(a.Phi_dot[:, S]))))
    bound = tol * scale
    value = max(worst_phi, worst_dot)
    ok = np.isfinite(value) and value <= bound
    return CheckResult("singular_switching", PASS if ok else FAIL, value, bound,
                       f"max |Phi| = {worst_phi:.3e}, max |Phi_dot| = {worst_dot:.3e} "
                       f"on singular arcs; scale max |Phi| = {scale:.3e}")


def _sign_pattern(structure, arcs):
    margin = np.inf
    seen = False
    for k, a in enumerate(arcs):
        inner = _interior(len(a.t))
        for i, mode in enumerate(structure.modes[k]):
            if mode == LOWER:
                sign = 1.0
            elif mode == UPPER:
                sign = -1.0
            else:
                continue
            seen = True
            vals = sign * a.Phi[inner, i]
            margin = min(margin, float(np.min(vals)) if np.all(np.isfinite(vals)) else -np.inf)
    if not seen:
        return CheckResult("bang_sign_pattern", SKIP, np.inf, 0.0, "no bang arc")
    return CheckResult("bang_sign_pattern", PASS if margin > 0 else FAIL, margin, 0.0,
                       "min of Phi (lower) and -Phi (upper) over bang-arc interiors")


def _bang_bang(structure, traj, tol):
    scale = float(np.max(np.abs(traj.Phi_dot)))
    lowest = np.inf
    seen = False
    for k in range(1, structure.N):
        for i in structure.switches(k):
            a, b = structure.modes[k - 1][i], structure.modes[k][i]
            if a == SINGULAR or b == SINGULAR:
                continue
            seen = True
            left = traj.arcs[k - 1].Phi_dot[-1, i]
            right = traj.arcs[k].Phi_dot[0, i]
            lowest = min(lowest, float(abs(left)), float(abs(right)))
    if not seen:
        return CheckResult("bang_bang_switching", SKIP, np.inf, 0.0, "no bang-bang switch")
    bound = tol * scale
    return CheckResult("bang_bang_switching", PASS if lowest > bound else FAIL, lowest, bound,
                       "min |Phi_dot| at bang-bang switching times")


# -- residual rows implied by the classical reduction -------------------

def implied_residuals(case, nu):
    """Extended-formulation rows that the classical reduction drops, at ``nu``.

    These are the pre-Hamiltonian jumps at bang/singular junctions; on a
    solution of the extended system they are zero up to the residual level.
    """
    from .shooting import ResidualMap

    R = ResidualMap(case.problem, case.structure, "extended")
    blocks = R.blocks(np.asarray(nu, dtype=float)[None])
    jumps = {b.name: b.values[0] for b in blocks.blocks}.get("hamiltonian_jumps")
    if jumps is None:
        return np.zeros(0)
    index = {k: j for j, k in enumerate(R.jump_indices())}
    return np.array([jumps[index[k]] for k in R.dropped_jumps()])


# -- stability under a perturbation of the cost -------------------------

@dataclass
class PerturbationResult:
    mu: float
    mu_cal: float
    drift: float
    drift_cal: float
    K: float
    bound: float
    converged: bool
    nu0: np.ndarray
    nu_mu: np.ndarray

    @property
    def passed(self):
        return self.converged and self.drift <= self.bound

    def to_text(self):
        return (f"perturbation mu={self.mu:g}: drift |nu(mu) - nu(0)|_inf = {self.drift:.3e}, "
                f"K = {self.K:.3e} (calibrated at mu={self.mu_cal:g}), "
                f"bound K*mu = {self.bound:.3e} -> {'PASS' if self.passed else 'FAIL'}")


def perturbed_solve(factory, nu_start, mu, formulation="extended", settings=None,
                    params: Optional[dict] = None):
    """Re-solve a benchmark whose cost integrand is multiplied by ``1 + mu``."""
    from .shooting import residual_map_for_case
    from .solver import solve

    params = dict(params or {})
    params["cost_scale"] = params.get("cost_scale", 1.0) * (1.0 + mu)
    case = factory(**params)
    R = residual_map_for_case(case, formulation)
    return solve(R, nu_start, settings)


def perturbation_check(factory, nu0, mu=1e-3, mu_cal=1e-4, formulation="extended",
                       settings=None, params=None, safety=1.1, K_max=1e3):
    """Measure the drift of the solution under a cost perturbation.

    The drift constant is calibrated on a smaller perturbation,
    ``K = safety * drift(mu_cal) / mu_cal``; the safety factor absorbs the
    higher-order terms of the expansion in ``mu`` and the solver's own
    accuracy.  The check passes when the re-solve at ``mu`` converges,
    ``drift(mu) <= K mu`` and ``K <= K_max``.
    """
    nu0 = np.asarray(nu0, dtype=float)
    cal = perturbed_solve(factory, nu0, mu_cal, formulation, settings, params)
    rep = perturbed_solve(factory, nu0, mu, formulation, settings, params)
    if not cal.converged:
        raise ShootingError("calibration re-solve did not converge: " + cal.message)
    drift_cal = float(np.max(np.abs(cal.nu - nu0)))
    drift = float(np.max(np.abs(rep.nu - nu0)))
    K = safety * drift_cal / mu_cal
    return PerturbationResult(mu=mu, mu_cal=mu_cal, drift=drift, drift_cal=drift_cal, K=K,
                              bound=K * mu, converged=rep.converged and K <= K_max,
                              nu0=nu0, nu_mu=rep.nu)
