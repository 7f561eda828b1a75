"""Shooting unknowns and residual assembly.

Three formulations are supported:

``extended``
    Endpoint and transversality rows, the switching function and its time
    derivative at every singular entry, the jump of the pre-Hamiltonian at
    every switching time and ``H(T)`` for free final time.  Overdetermined
    in general; solved by Gauss-Newton.
``classical``
    The extended system reduced to a square one: jumps at bang/singular
    junctions are dropped (they are implied by continuity of the costate
    and the entry conditions), and optionally the two entry conditions of a
    singular arc reaching the final time are merged as ``Phi**2 + Phidot**2``.
``full``
    Single fully singular arc on ``[0, T]`` without control bounds; initial
    state, initial costate and endpoint multipliers are all unknowns.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigurationError, NotSquare
from .integrate import SINGULAR, ControlLaw, ControlStructure, integrate_arcs, integrate_batch
from .problem import _combine, field_jacobians, field_values

FORMULATIONS = ("extended", "classical", "full")


@dataclass
class ShootingPoint:
    """Decoded shooting unknowns."""

    x0_free: np.ndarray
    p0: np.ndarray
    beta: np.ndarray
    switch_times: np.ndarray
    T: Optional[float] = None


@dataclass
class ResidualBlock:
    name: str
    tag: str
    values: np.ndarray   # (B, k)


@dataclass
class ResidualVector:
    """Labeled residual blocks; ``flat`` concatenates them in order."""

    blocks: List[ResidualBlock]

    @property
    def flat(self):
        return np.concatenate([b.values for b in self.blocks], axis=-1)

    def __len__(self):
        return sum(b.values.shape[-1] for b in self.blocks)

    def labels(self):
        return [(b.name, b.tag) for b in self.blocks for _ in range(b.values.shape[-1])]

    def report(self, member=0):
        """Text table: block name, tag and values, one block per line."""
        lines = []
        for b in self.blocks:
            vals = " ".join(f"{v: .6e}" for v in np.atleast_2d(b.values)[member])
            lines.append(f"{b.name:24s} {b.tag:28s} {vals}")
        lines.append(f"{'norm':24s} {'':28s} {np.linalg.norm(np.atleast_2d(self.flat)[member]):.6e}")
        return "\n".join(lines)


class ShootingLayout:
    """Codec between :class:`ShootingPoint` and the flat unknown vector.

    Order: free initial states, initial costates (cost states excluded),
    multipliers, switching times, final time.
    """

    def __init__(self, prob, structure, formulation="extended"):
        if formulation not in FORMULATIONS:
            raise ConfigurationError(f"unknown formulation {formulation!r}")
        structure.validate(prob)
        self.prob = prob
        self.structure = structure
        self.formulation = formulation
        pidx = prob.costate_indices
        if formulation == "full":
            if prob.bounds is not None:
                raise ConfigurationError(
                    "the fully singular formulation needs a problem without control bounds")
            if prob.free_time:
                raise ConfigurationError("the fully singular formulation needs a fixed final time")
            if structure.N != 1 or not all(e == SINGULAR for e in structure.modes[0]):
                raise ConfigurationError("the fully singular formulation needs one singular arc")
            self.x0_idx = tuple(i for i in range(prob.n) if i not in prob.cost_states)
            self.fixed0_idx = tuple(i for i in self.x0_idx if i not in prob.x0_free)
            self.n_beta = (len(self.fixed0_idx) + len(prob.terminal)
                           + (prob.constraints.dim if prob.constraints else 0))
        else:
            self.x0_idx = tuple(sorted(prob.x0_free))
            self.fixed0_idx = ()
            self.n_beta = prob.constraints.dim if prob.constraints else 0
        self.p_idx = pidx
        self.n_times = structure.N - 1
        names = [f"x{i + 1}_0" for i in self.x0_idx]
        names += [f"p{i + 1}_0" for i in pidx]
        names += [f"beta{j + 1}" for j in range(self.n_beta)]
        names += list(structure.switch_names)
        if prob.free_time:
            names.append("T")
        self.names = tuple(names)
        self.size = len(names)

    def decode(self, nu):
        """Return ``(x0, p0, beta, bounds)`` batched along the leading axis."""
        nu = np.atleast_2d(np.asarray(nu, dtype=float))
        B = nu.shape[0]
        if nu.shape[1] != self.size:
            raise ConfigurationError(f"expected {self.size} unknowns, got {nu.shape[1]}")
        prob = self.prob
        o = 0
        x0 = np.tile(prob.x0, (B, 1))
        k = len(self.x0_idx)
        x0[:, list(self.x0_idx)] = nu[:, o:o + k]
        o += k
        p0 = prob.full_costate(nu[:, o:o + len(self.p_idx)])
        o += len(self.p_idx)
        beta = nu[:, o:o + self.n_beta]
        o += self.n_beta
        times = nu[:, o:o + self.n_times]
        o += self.n_times
        T = nu[:, o:o + 1] if prob.free_time else np.full((B, 1), prob.T)
        bounds = np.concatenate([np.zeros((B, 1)), times, T], axis=1)
        return x0, p0, beta, bounds

    def to_point(self, nu):
        nu = np.asarray(nu, dtype=float)
        x0, p0, beta, bounds = self.decode(nu)
        return ShootingPoint(
            x0_free=x0[0, list(self.x0_idx)], p0=p0[0, list(self.p_idx)], beta=beta[0],
            switch_times=bounds[0, 1:-1], T=float(bounds[0, -1]) if self.prob.free_time else None)

    def from_point(self, pt):
        parts = [np.ravel(pt.x0_free), np.ravel(pt.p0), np.ravel(pt.beta), np.ravel(pt.switch_times)]
        if self.prob.free_time:
            parts.append([pt.T])
        nu = np.concatenate([np.asarray(a, dtype=float) for a in parts])
        if nu.size != self.size:
            raise ConfigurationError("shooting point does not match the layout")
        return nu


def _dot(a, b):
    return np.einsum("...a,...a->...", a, b)


class ResidualMap:
    """Shooting function for a problem, a structure and a formulation.

    Calling it on a flat vector returns the flat residual; :meth:`batch`
    evaluates many points in one vectorized integration.
    """

    def __init__(self, prob, structure=None, formulation="extended", combine_entry=False,
                 total_steps=500, min_steps=10, method="auto"):
        if structure is None:
            structure = ControlStructure(((SINGULAR,) * prob.m,))
        self.prob = prob
        self.structure = structure
        self.formulation = formulation
        self.combine_entry = combine_entry
        self.layout = ShootingLayout(prob, structure, formulation)
        self.total_steps = total_steps
        self.min_steps = min_steps
        self.method = method
        self.law = ControlLaw(prob, structure, method=method, strict=False)
        self.bang = structure.bang_values(prob)
        self._plan = self._plan_rows()
        self.size = sum(k for _, _, k in self._plan)
        if formulation == "classical" and self.size != self.layout.size:
            surplus = self.size - self.layout.size
            raise NotSquare(
                f"classical system has {self.size} rows for {self.layout.size} unknowns "
                f"({'surplus' if surplus > 0 else 'deficit'} {abs(surplus)}); blocks: "
                + ", ".join(f"{n}[{k}]" for n, _, k in self._plan),
                surplus=surplus, blocks=[n for n, _, _ in self._plan])

    @property
    def n_unknowns(self):
        return self.layout.size

    # -- row planning -------------------------------------------------
    def dropped_jumps(self):
        """Switching indices whose jump row the classical reduction removes."""
        st = self.structure
        out = []
        for k in range(1, st.N):
            sw = st.switches(k)
            if all((st.modes[k - 1][i] == SINGULAR) != (st.modes[k][i] == SINGULAR) for i in sw):
                out.append(k)
        return out

    def jump_indices(self):
        ks = list(range(1, self.structure.N))
        if self.formulation == "classical":
            drop = set(self.dropped_jumps())
            ks = [k for k in ks if k not in drop]
        return ks

    def _plan_rows(self):
        prob = self.prob
        lay = self.layout
        plan = []
        if self.formulation == "full":
            plan.append(("endpoint_constraints", "eta(x0,xT)", lay.n_beta))
            plan.append(("initial_transversality", "p0 + D_x0 l", len(lay.x0_idx)))
            plan.append(("final_transversality", "pT - D_xT l", len(lay.p_idx)))
            plan.append(("final_switching", "pT B(xT)", prob.m))
            plan.append(("initial_switching_rate", "p0 B1(x0,u0)", prob.m))
            return plan
        n_eta = len(prob.terminal) + (prob.constraints.dim if prob.constraints else 0)
        if n_eta:
            plan.append(("endpoint_constraints", "eta(x0,xT)", n_eta))
        if lay.x0_idx:
            plan.append(("initial_transversality", "p0 + D_x0 l", len(lay.x0_idx)))
        n_final = len([i for i in lay.p_idx if i not in prob.terminal])
        if n_final:
            plan.append(("final_transversality", "pT - D_xT l", n_final))
        entries = self.structure.entries()
        if self.formulation == "classical" and self.combine_entry:
            if len(entries) != 1:
                raise ConfigurationError("entry combination needs exactly one singular entry")
            plan.append(("singular_entry_combined", "Phi^2 + Phidot^2 at entry", 1))
        elif entries:
            plan.append(("singular_entry_Phi", "Phi(t_entry)", len(entries)))
            plan.append(("singular_entry_Phidot", "dPhi/dt(t_entry)", len(entries)))
        nj = len(self.jump_indices())
        if nj:
            plan.append(("hamiltonian_jumps", "H(t_k+) - H(t_k-)", nj))
        if prob.free_time:
            plan.append(("free_time_H_T", "H(T)", 1))
        return plan

    # -- evaluation ---------------------------------------------------
    def integrate(self, nu):
        x0, p0, beta, bounds = self.layout.decode(nu)
        ends = integrate_batch(self.prob, self.structure, bounds, x0, p0, law=self.law,
                               total=self.total_steps, min_steps=self.min_steps)
        return ends, beta

    def _u(self, arc, x, p):
        arcv = np.full(x.shape[0], arc)
        return self.law(arcv, x, p)

    def _H(self, arc, x, p):
        u = self._u(arc, x, p)
        return _dot(p, _combine(field_values(self.prob, x), u)), u

    def blocks(self, nu):
        """Evaluate the labeled residual blocks for a batch of unknown vectors."""
        prob = self.prob
        lay = self.layout
        st = self.structure
        with np.errstate(all="ignore"):
            ends, beta = self.integrate(nu)
            x0, p0 = ends.x[:, 0], ends.p[:, 0]
            xT, pT = ends.x[:, -1], ends.p[:, -1]
            g0, gT = prob.cost_grad(x0, xT)
            g0 = np.array(g0, dtype=float)
            gT = np.array(gT, dtype=float)
            eta = []
            bi = 0
            if self.formulation == "full":
                for i in lay.fixed0_idx:
                    eta.append(x0[:, i] - prob.x0[i])
                    g0[:, i] += beta[:, bi]
                    bi += 1
            for i in sorted(prob.terminal):
                eta.append(xT[:, i] - prob.terminal[i])
                if self.formulation == "full":
                    gT[:, i] += beta[:, bi]
                    bi += 1
            if prob.constraints is not None:
                c = prob.constraints
                eta_gen = np.atleast_2d(c.value(x0, xT))
                J0, JT = c.jac(x0, xT)
                bgen = beta[:, bi:bi + c.dim]
                g0 = g0 + np.einsum("bj,bja->ba", bgen, J0)
                gT = gT + np.einsum("bj,bja->ba", bgen, JT)
                eta.extend(eta_gen.T)
            out = []
            values = {}
            if eta:
                values["endpoint_constraints"] = np.stack(eta, axis=-1)
            values["initial_transversality"] = np.stack(
                [p0[:, i] + g0[:, i] for i in lay.x0_idx], axis=-1) if lay.x0_idx else None
            if self.formulation == "full":
                final_idx = list(lay.p_idx)
            else:
                final_idx = [i for i in lay.p_idx if i not in prob.terminal]
            if final_idx:
                values["final_transversality"] = np.stack(
                    [pT[:, i] - gT[:, i] for i in final_idx], axis=-1)
            if self.formulation == "full":
                FT = field_values(prob, xT)
                values["final_switching"] = np.stack(
                    [_dot(pT, FT[i]) for i in range(1, prob.m + 1)], axis=-1)
                u0 = self._u(0, x0, p0)
                values["initial_switching_rate"] = -self._phidot(x0, p0, u0)
            else:
                phis, phids = [], []
                for k, i in st.entries():
                    xk, pk = ends.x[:, k], ends.p[:, k]
                    Fk = field_values(prob, xk)
                    phis.append(_dot(pk, Fk[i + 1]))
                    uk = self._u(k, xk, pk)
                    phids.append(self._phidot(xk, pk, uk)[:, i])
                if phis:
                    if "singular_entry_combined" in [n for n, _, _ in self._plan]:
                        values["singular_entry_combined"] = (phis[0] ** 2 + phids[0] ** 2)[:, None]
                    else:
                        values["singular_entry_Phi"] = np.stack(phis, axis=-1)
                        values["singular_entry_Phidot"] = np.stack(phids, axis=-1)
                jumps = []
                for k in self.jump_indices():
                    xk, pk = ends.x[:, k], ends.p[:, k]
                    Hp, _ = self._H(k, xk, pk)
                    Hm, _ = self._H(k - 1, xk, pk)
                    jumps.append(Hp - Hm)
                if jumps:
                    values["hamiltonian_jumps"] = np.stack(jumps, axis=-1)
                if prob.free_time:
                    HT, _ = self._H(st.N - 1, xT, pT)
                    values["free_time_H_T"] = HT[:, None]
            for name, tag, k in self._plan:
                v = values[name]
                out.append(ResidualBlock(name, tag, v))
        return ResidualVector(out)

    def _phidot(self, x, p, u):
        prob = self.prob
        F = field_values(prob, x)
        J = field_jacobians(prob, x)
        A = _combine(J, u)
        xdot = _combine(F, u)
        cols = []
        for i in range(1, prob.m + 1):
            b1 = np.einsum("bac,bc->ba", A, F[i]) - np.einsum("bac,bc->ba", J[i], xdot)
            cols.append(-_dot(p, b1))
        return np.stack(cols, axis=-1)

    def batch(self, nus):
        """Residuals for a ``(B, r)`` array of unknowns, shape ``(B, q)``."""
        return self.blocks(nus).flat

    def __call__(self, nu):
        return self.batch(np.asarray(nu, dtype=float)[None])[0]

    def objective(self, nu):
        ends, _ = self.integrate(np.asarray(nu, dtype=float)[None])
        return float(np.asarray(self.prob.cost(ends.x[0, 0], ends.x[0, -1])))

    def trajectory(self, nu, check_order=True):
        x0, p0, _, bounds = self.layout.decode(nu)
        return integrate_arcs(self.prob, self.structure, bounds[0, 1:], x0[0], p0[0],
                              total=self.total_steps, min_steps=self.min_steps,
                              check_order=check_order, method=self.method)


def assemble_extended(prob, structure, nu, **kw):
    return ResidualMap(prob, structure, "extended", **kw).blocks(nu)


def assemble_classical(prob, structure, nu, combine_entry=False, **kw):
    return ResidualMap(prob, structure, "classical", combine_entry=combine_entry, **kw).blocks(nu)


def assemble_full_unconstrained(prob, nu, **kw):
    return ResidualMap(prob, None, "full", **kw).blocks(nu)


def is_square_structure(structure):
    """Interior singular arcs only and a single switching component per switch."""
    mask = structure.singular_mask()
    if mask[0].any() or mask[-1].any():
        return False
    return all(len(structure.switches(k)) == 1 for k in range(1, structure.N))


def residual_map_for_case(case, formulation, **kw):
    combine = case.combine_entry and formulation == "classical"
    return ResidualMap(case.problem, case.structure, formulation, combine_entry=combine, **kw)
