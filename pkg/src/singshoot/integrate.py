"""Fixed-step RK4 integration of the state-costate system over bang/singular arcs.

The integrator is vectorized: every routine accepts a batch of independent
shooting points (leading axis ``B``), each with its own arc boundaries.  All
members advance in lockstep over a common step counter; a member whose arcs
are exhausted keeps stepping with ``h = 0``, which leaves it unchanged.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import ConfigurationError, IntegrationDiverged, LegendreClebschViolation
from .problem import (
    _stack_fields,
    field_hessians,
    field_jacobians,
    field_values,
    generic_singular_control,
    hamiltonian,
    switching_derivative,
    switching_function,
)

LOWER = "lower"
UPPER = "upper"
SINGULAR = "singular"

_ALIASES = {"l": LOWER, "lower": LOWER, "min": LOWER,
            "u": UPPER, "upper": UPPER, "max": UPPER,
            "s": SINGULAR, "sing": SINGULAR, "singular": SINGULAR}

TOTAL_STEPS = 500
MIN_ARC_STEPS = 10


def _norm_mode(entry):
    if isinstance(entry, str):
        key = entry.strip().lower()
        if key in _ALIASES:
            return _ALIASES[key]
        try:
            return float(key)
        except ValueError:
            raise ConfigurationError(f"unknown arc mode {entry!r}") from None
    return float(entry)


@dataclass(frozen=True)
class ControlStructure:
    """Arc sequence: ``modes[k][i]`` is the mode of control ``i`` on arc ``k``.

    A mode is ``"lower"``, ``"upper"``, ``"singular"`` or a fixed float value.
    """

    modes: tuple

    def __post_init__(self):
        rows = tuple(tuple(_norm_mode(e) for e in (row if isinstance(row, (tuple, list)) else (row,)))
                     for row in self.modes)
        if not rows:
            raise ConfigurationError("a control structure needs at least one arc")
        if len({len(r) for r in rows}) != 1:
            raise ConfigurationError("all arcs must list the same number of controls")
        object.__setattr__(self, "modes", rows)

    @classmethod
    def parse(cls, text):
        """Parse ``"upper,singular,upper"``; components of one arc are joined by ``/``.

        Named modes may also be chained with dashes, ``"lower-singular"``.
        """
        arcs = [a for a in re.split(r",|(?<=[A-Za-z])-(?=[A-Za-z])", text) if a.strip()]
        return cls(tuple(tuple(c for c in a.split("/")) for a in arcs))

    def __str__(self):
        def fmt(e):
            return e if isinstance(e, str) else repr(e)
        return ",".join("/".join(fmt(e) for e in row) for row in self.modes)

    @property
    def N(self):
        return len(self.modes)

    @property
    def m(self):
        return len(self.modes[0])

    @property
    def switch_names(self):
        return tuple(f"t{k}" for k in range(1, self.N))

    def singular_mask(self):
        return np.array([[e == SINGULAR for e in row] for row in self.modes], dtype=bool)

    def bang_values(self, prob):
        """``(N, m)`` control values on bang arcs, NaN on singular entries."""
        self.validate(prob)
        out = np.full((self.N, self.m), np.nan)
        for k, row in enumerate(self.modes):
            for i, e in enumerate(row):
                if e == LOWER:
                    out[k, i] = prob.bounds[i, 0]
                elif e == UPPER:
                    out[k, i] = prob.bounds[i, 1]
                elif e != SINGULAR:
                    out[k, i] = e
        return out

    def validate(self, prob):
        if self.m != prob.m:
            raise ConfigurationError(
                f"structure has {self.m} controls, problem has {prob.m}")
        uses_bounds = any(e in (LOWER, UPPER) for row in self.modes for e in row)
        if uses_bounds and prob.bounds is None:
            raise ConfigurationError("structure uses bang modes but the problem has no bounds")

    def entries(self):
        """``(arc, component)`` pairs where a component enters a singular arc."""
        mask = self.singular_mask()
        out = []
        for k in range(self.N):
            for i in range(self.m):
                if mask[k, i] and (k == 0 or not mask[k - 1, i]):
                    out.append((k, i))
        return out

    def switches(self, k):
        """Components whose mode changes at the start of arc ``k`` (k >= 1)."""
        return [i for i in range(self.m) if self.modes[k - 1][i] != self.modes[k][i]]


class ControlLaw:
    """Evaluate the control prescribed by a structure on a batch of points."""

    def __init__(self, prob, structure, method="auto", strict=True):
        structure.validate(prob)
        self.prob = prob
        self.bang = structure.bang_values(prob)
        self.base = np.nan_to_num(self.bang, nan=0.0)
        mask = structure.singular_mask()
        if method == "auto":
            method = "closed" if prob.singular_control is not None else "generic"
        if mask.any() and method == "generic" and not prob.has_hessians:
            raise ConfigurationError(
                "singular arcs need a closed-form control or field second derivatives")
        if method not in ("closed", "generic"):
            raise ConfigurationError(f"unknown singular-control method {method!r}")
        if method == "closed" and mask.any() and prob.singular_control is None:
            raise ConfigurationError("problem has no closed-form singular control")
        self.method = method
        self.strict = strict
        groups = {}
        for k in range(structure.N):
            if mask[k].any():
                groups.setdefault(tuple(np.flatnonzero(mask[k])), []).append(k)
        self.groups = []
        for S, arcs in groups.items():
            member = np.zeros(structure.N, dtype=bool)
            member[arcs] = True
            self.groups.append((S, member))
        self.needs_hessians = method == "generic" and bool(self.groups)

    def __call__(self, arc, x, p, F=None, J=None):
        u = self.base[arc]
        for S, arcs in self.groups:
            sel = arcs[arc]
            count = np.count_nonzero(sel)
            if count == 0:
                continue
            if count == sel.size:
                u[:, list(S)] = self._singular(x, p, S, u, F, J)
            elif self.method == "closed" and not self.strict:
                # cheap enough to evaluate everywhere and keep the selected rows
                cols = list(S)
                u[:, cols] = np.where(sel[:, None], self._closed(x, p, S), u[:, cols])
            else:
                idx = np.flatnonzero(sel)
                sub = (lambda a: None if a is None else a[:, idx])
                u[np.ix_(idx, list(S))] = self._singular(
                    x[idx], p[idx], S, u[idx], sub(F), sub(J))
        return u

    def _closed(self, x, p, S):
        us = np.asarray(self.prob.singular_control(x, p, S), dtype=float)
        shape = x.shape[:-1] + (len(S),)
        if us.shape != shape:
            us = np.broadcast_to(us, shape)
        if self.strict and not np.all(np.isfinite(us)):
            raise LegendreClebschViolation("closed-form singular control is not finite")
        return us

    def _singular(self, x, p, S, base, F, J):
        prob = self.prob
        if self.method == "closed":
            return self._closed(x, p, S)
        cache = (field_values(prob, x) if F is None else F,
                 field_jacobians(prob, x) if J is None else J,
                 field_hessians(prob, x))
        return generic_singular_control(prob, x, p, S, base, cache, strict=self.strict)


def allocate_steps(bounds, total=TOTAL_STEPS, min_steps=MIN_ARC_STEPS):
    """Split ``total`` RK4 steps across arcs proportionally to their lengths."""
    bounds = np.asarray(bounds, dtype=float)
    lengths = np.abs(np.diff(bounds, axis=-1))
    span = lengths.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        share = np.where(span > 0, lengths / span, 0.0)
    share = np.nan_to_num(share, nan=0.0, posinf=0.0, neginf=0.0)
    return np.maximum(min_steps, np.rint(total * share)).astype(np.int64)


@dataclass
class ArcEnds:
    """States and costates at every arc boundary of a batch of integrations."""

    bounds: np.ndarray   # (B, N+1) boundary times 0, t1, ..., T
    x: np.ndarray        # (B, N+1, n)
    p: np.ndarray        # (B, N+1, n)
    nsteps: np.ndarray   # (B, N)
    history: Optional[list] = None


def _affine(values, u):
    """``values[0] + sum_k u_k values[k]`` for per-field arrays with a batch axis."""
    lead = (-1,) + (1,) * (np.ndim(values[0]) - 1)
    out = values[0] + u[:, 0].reshape(lead) * values[1]
    for k in range(2, len(values)):
        out += u[:, k - 1].reshape(lead) * values[k]
    return out


def _rhs(prob, law, arc, x, p):
    Fs = [fi.f(x) for fi in prob.fields]
    Js = [fi.jac(x) for fi in prob.fields]
    if law.needs_hessians:
        u = law(arc, x, p, _stack_fields(Fs, x.shape), _stack_fields(Js, x.shape + x.shape[-1:]))
    else:
        u = law(arc, x, p)
    xdot = _affine(Fs, u)
    pdot = -np.einsum("ba,bac->bc", p, _affine(Js, u))
    return xdot, pdot


def integrate_batch(prob, structure, bounds, x0, p0, law=None, total=TOTAL_STEPS,
                    min_steps=MIN_ARC_STEPS, strict=False, record=False):
    """Integrate a batch of state-costate trajectories over their arcs.

    Parameters
    ----------
    bounds : array (B, N+1)
        Arc boundaries ``0, t1, ..., T`` for each member.  Arcs of negative
        length are integrated backward.
    x0, p0 : arrays (B, n)
        Initial state and full costate.
    strict : bool
        Raise on non-finite values instead of letting NaN propagate.
    record : bool
        Keep the state/costate after every step (for trajectory output).
    """
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    x = np.atleast_2d(np.array(x0, dtype=float))
    p = np.atleast_2d(np.array(p0, dtype=float))
    B, N1 = bounds.shape
    N = N1 - 1
    if N != structure.N:
        raise ConfigurationError(f"expected {structure.N + 1} arc boundaries, got {N1}")
    if law is None:
        law = ControlLaw(prob, structure, strict=strict)
    if any(fi.jac is None for fi in prob.fields):
        raise ConfigurationError("vector field Jacobians are required")
    nsteps = allocate_steps(bounds, total, min_steps)
    h_arc = np.diff(bounds, axis=-1) / nsteps
    cum = np.cumsum(nsteps, axis=1)
    start = cum - nsteps
    S_total = int(cum[:, -1].max())
    xb = np.empty((B, N1, prob.n))
    pb = np.empty((B, N1, prob.n))
    xb[:, 0] = x
    pb[:, 0] = p
    rows = np.arange(B)
    history = [(x.copy(), p.copy())] if record else None
    if strict:
        errstate = np.errstate(over="raise", divide="raise", invalid="raise", under="ignore")
    else:
        errstate = np.errstate(all="ignore")
    with errstate:
        steps = np.arange(S_total)
        arc_tab = np.minimum((steps[:, None, None] >= cum[None]).sum(axis=2), N - 1)
        h_tab = np.where(steps[:, None] < cum[None, :, -1], h_arc[rows, arc_tab], 0.0)
        end_tab = cum[rows, arc_tab] == steps[:, None] + 1
        for s in range(S_total):
            arc = arc_tab[s]
            h = h_tab[s][:, None]
            try:
                h2 = 0.5 * h
                k1x, k1p = _rhs(prob, law, arc, x, p)
                k2x, k2p = _rhs(prob, law, arc, x + h2 * k1x, p + h2 * k1p)
                k3x, k3p = _rhs(prob, law, arc, x + h2 * k2x, p + h2 * k2p)
                k4x, k4p = _rhs(prob, law, arc, x + h * k3x, p + h * k3p)
            except FloatingPointError as exc:
                t = bounds[0, arc[0]] + (s - start[0, arc[0]]) * h_arc[0, arc[0]]
                raise IntegrationDiverged(f"floating point failure near t={t:.6g}: {exc}",
                                          time=float(t)) from None
            x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
            p = p + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p)
            if strict and not (np.all(np.isfinite(x)) and np.all(np.isfinite(p))):
                t = bounds[0, arc[0]] + (s + 1 - start[0, arc[0]]) * h_arc[0, arc[0]]
                raise IntegrationDiverged(f"non-finite state at t={t:.6g}", time=float(t))
            done = np.flatnonzero(end_tab[s])
            if done.size:
                xb[done, arc[done] + 1] = x[done]
                pb[done, arc[done] + 1] = p[done]
            if record:
                history.append((x.copy(), p.copy()))
    return ArcEnds(bounds=bounds, x=xb, p=pb, nsteps=nsteps, history=history)


@dataclass
class ArcSamples:
    t: np.ndarray
    x: np.ndarray
    p: np.ndarray
    u: np.ndarray
    Phi: np.ndarray
    Phi_dot: np.ndarray
    H: np.ndarray


@dataclass
class TrajectoryRecord:
    """Grid samples over all arcs; arc ``k`` holds both of its endpoints."""

    structure: ControlStructure
    arcs: List[ArcSamples]
    n: int
    m: int
    meta: dict = field(default_factory=dict)

    @property
    def bounds(self):
        return np.array([a.t[0] for a in self.arcs] + [self.arcs[-1].t[-1]])

    def stacked(self, name):
        return np.concatenate([getattr(a, name) for a in self.arcs])

    @property
    def t(self):
        return self.stacked("t")

    @property
    def x(self):
        return self.stacked("x")

    @property
    def p(self):
        return self.stacked("p")

    @property
    def u(self):
        return self.stacked("u")

    @property
    def Phi(self):
        return self.stacked("Phi")

    @property
    def Phi_dot(self):
        return self.stacked("Phi_dot")

    @property
    def H(self):
        return self.stacked("H")

    def header(self):
        cols = ["arc", "side", "t"]
        cols += [f"x{i + 1}" for i in range(self.n)]
        cols += [f"p{i + 1}" for i in range(self.n)]
        cols += [f"u{i + 1}" for i in range(self.m)]
        cols += [f"Phi{i + 1}" for i in range(self.m)]
        cols += [f"Phidot{i + 1}" for i in range(self.m)]
        cols += ["H"]
        return cols

    def to_csv(self, path):
        """Write one row per sample; arc boundaries appear twice (sides ``-``/``+``)."""
        last = len(self.arcs) - 1
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["# structure", str(self.structure)])
            for key, value in self.meta.items():
                w.writerow(["# meta", key, str(value)])
            w.writerow(self.header())
            for k, a in enumerate(self.arcs):
                for j in range(len(a.t)):
                    side = ""
                    if j == 0 and k > 0:
                        side = "+"
                    elif j == len(a.t) - 1 and k < last:
                        side = "-"
                    vals = [a.t[j], *a.x[j], *a.p[j], *a.u[j], *a.Phi[j], *a.Phi_dot[j], a.H[j]]
                    w.writerow([k, side] + [repr(float(v)) for v in vals])

    @classmethod
    def from_csv(cls, path):
        """Read a file written by :meth:`to_csv`; raises ``ValueError`` on malformed input."""
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 3 or rows[0][:1] != ["# structure"] or len(rows[0]) != 2:
            raise ValueError("not a trajectory file")
        try:
            structure = ControlStructure.parse(rows[0][1])
        except ConfigurationError as exc:
            raise ValueError(f"bad structure line: {exc}") from None
        meta = {}
        rows = rows[1:]
        while rows and rows[0][:1] == ["# meta"]:
            if len(rows[0]) != 3:
                raise ValueError("bad meta line")
            meta[rows[0][1]] = rows[0][2]
            rows = rows[1:]
        rows = [[], *rows]
        if len(rows) < 3:
            raise ValueError("trajectory file has no samples")
        head = rows[1]
        n = sum(1 for c in head if c.startswith("x"))
        m = sum(1 for c in head if c.startswith("u"))
        if head[:3] != ["arc", "side", "t"] or len(head) != 4 + 2 * n + 3 * m:
            raise ValueError("unexpected trajectory columns")
        data = {}
        for r in rows[2:]:
            if len(r) != len(head):
                raise ValueError("ragged trajectory row")
            try:
                data.setdefault(int(r[0]), []).append([float(v) for v in r[2:]])
            except ValueError:
                raise ValueError("non-numeric trajectory entry") from None
        arcs = []
        for k in sorted(data):
            a = np.array(data[k])
            o = 1
            xs = a[:, o:o + n]; o += n
            ps = a[:, o:o + n]; o += n
            us = a[:, o:o + m]; o += m
            ph = a[:, o:o + m]; o += m
            pd = a[:, o:o + m]; o += m
            arcs.append(ArcSamples(t=a[:, 0], x=xs, p=ps, u=us, Phi=ph, Phi_dot=pd, H=a[:, o]))
        if len(arcs) != structure.N or not np.all(np.isfinite(np.concatenate([a.x for a in arcs]))):
            raise ValueError("trajectory file does not match its structure")
        return cls(structure=structure, arcs=arcs, n=n, m=m, meta=meta)


def integrate_arcs(prob, structure, times, x0, p0, total=TOTAL_STEPS,
                   min_steps=MIN_ARC_STEPS, check_order=True, method="auto"):
    """Integrate one trajectory and sample it on the RK4 grid.

    ``times`` lists the switching times followed by the final time, so it has
    ``N`` entries for an ``N``-arc structure.  ``p0`` is the full costate.
    """
    times = np.asarray(times, dtype=float).ravel()
    if times.size != structure.N:
        raise ConfigurationError(
            f"expected {structure.N} times (switches + final), got {times.size}")
    bounds = np.concatenate([[0.0], times])
    if check_order and not np.all(np.diff(bounds) > 0):
        raise ConfigurationError("switching times must increase strictly inside (0, T)")
    law = ControlLaw(prob, structure, method=method, strict=True)
    ends = integrate_batch(prob, structure, bounds[None], np.asarray(x0, float)[None],
                           np.asarray(p0, float)[None], law=law, total=total,
                           min_steps=min_steps, strict=True, record=True)
    xs = np.array([h[0][0] for h in ends.history])
    ps = np.array([h[1][0] for h in ends.history])
    arcs = []
    pos = 0
    for k in range(structure.N):
        nk = int(ends.nsteps[0, k])
        sl = slice(pos, pos + nk + 1)
        t = bounds[k] + (bounds[k + 1] - bounds[k]) * np.arange(nk + 1) / nk
        t[-1] = bounds[k + 1]
        xk, pk = xs[sl], ps[sl]
        arcv = np.full(nk + 1, k)
        uk = law(arcv, xk, pk)
        arcs.append(ArcSamples(
            t=t, x=xk, p=pk, u=uk,
            Phi=switching_function(prob, xk, pk),
            Phi_dot=switching_derivative(prob, xk, pk, uk),
            H=hamiltonian(prob, xk, pk, uk)))
        pos += nk
    return TrajectoryRecord(structure=structure, arcs=arcs, n=prob.n, m=prob.m)
