"""Grid campaigns: one shooting solve from every point of a regular grid.

The grid is cut into chunks of fixed composition (consecutive points in
row-major order).  Chunks are the unit of work handed to worker processes
and the per-point outcomes are reassembled by grid index, so the report
does not depend on the number of workers or on the completion order.
"""

from __future__ import annotations

import csv
import io
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .benchmarks import BenchmarkCase, get_case
from .errors import ConfigurationError
from .shooting import residual_map_for_case
from .solver import SolverSettings, solve_many

REFERENCE = "converged-to-reference"
ELSEWHERE = "converged-elsewhere"
FAILED = "failed"
OUTCOMES = (REFERENCE, ELSEWHERE, FAILED)

#: grid points per unit of work; fixed so that results never depend on workers
CHUNK_SIZE = 1024


@dataclass(frozen=True)
class GridAxis:
    name: str
    lo: float
    hi: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ConfigurationError(f"axis {self.name}: point count must be positive")
        if self.count == 1 and self.lo != self.hi:
            raise ConfigurationError(f"axis {self.name}: a single point needs lo == hi")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.hi < self.lo:
            raise ConfigurationError(f"axis {self.name}: need finite lo <= hi")

    @property
    def values(self):
        if self.count == 1:
            return np.array([self.lo])
        return np.linspace(self.lo, self.hi, self.count)

    @property
    def spacing(self):
        return 0.0 if self.count == 1 else (self.hi - self.lo) / (self.count - 1)


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid over the unknowns, endpoints included, in unknown order."""

    axes: Tuple[GridAxis, ...]

    @classmethod
    def from_case(cls, case: BenchmarkCase):
        return cls(tuple(GridAxis(n, lo, hi, c)
                         for n, (lo, hi, c) in zip(case.unknown_names, case.grid)))

    @classmethod
    def parse(cls, text, names: Optional[Sequence[str]] = None):
        """Parse ``"p1=-10:10:21,p2=-10:10:21,t1=0:5:21"``.

        With ``names`` given the axes must name exactly those unknowns, in
        any order; they are returned in the order of ``names``.
        """
        axes = {}
        for item in [s for s in text.split(",") if s.strip()]:
            try:
                key, rng = item.split("=")
                lo, hi, count = rng.split(":")
                axis = GridAxis(key.strip(), float(lo), float(hi), int(count))
            except ValueError:
                raise ConfigurationError(f"bad grid axis {item!r}; expected name=lo:hi:count") from None
            if axis.name in axes:
                raise ConfigurationError(f"axis {axis.name} given twice")
            axes[axis.name] = axis
        if names is None:
            return cls(tuple(axes.values()))
        if set(axes) != set(names):
            raise ConfigurationError(
                f"grid axes {sorted(axes)} do not match the unknowns {list(names)}")
        return cls(tuple(axes[n] for n in names))

    def __str__(self):
        return ",".join(f"{a.name}={a.lo!r}:{a.hi!r}:{a.count}" for a in self.axes)

    @property
    def shape(self):
        return tuple(a.count for a in self.axes)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def names(self):
        return tuple(a.name for a in self.axes)

    def points(self):
        """All grid points, shape ``(size, dim)``, last axis varying fastest."""
        mesh = np.meshgrid(*[a.values for a in self.axes], indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def multi_index(self, flat):
        return tuple(int(i) for i in np.unravel_index(flat, self.shape))


@dataclass
class PointOutcome:
    index: Tuple[int, ...]
    start: np.ndarray
    outcome: str
    iterations: int
    final_norm: float
    nu: np.ndarray
    message: str = ""


@dataclass
class BatchReport:
    case_name: str
    formulation: str
    grid: GridSpec
    points: List[PointOutcome]
    reference: np.ndarray
    match_tol: float
    wall_time: float
    cpu_time: float
    workers: int
    objective: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def counts(self):
        out = {o: 0 for o in OUTCOMES}
        for p in self.points:
            out[p.outcome] += 1
        return out

    @property
    def success_rate(self):
        return self.counts()[REFERENCE] / len(self.points)

    @property
    def reference_found(self):
        return any(p.outcome == REFERENCE for p in self.points)

    @property
    def best_residual(self):
        """Smallest final residual norm among runs that reached the reference."""
        norms = [p.final_norm for p in self.points if p.outcome == REFERENCE]
        return min(norms) if norms else float("nan")

    def best_point(self):
        hits = [p for p in self.points if p.outcome == REFERENCE]
        return min(hits, key=lambda p: p.final_norm) if hits else None

    def iteration_histogram(self):
        """``{iterations: count}`` over all points."""
        its, cnt = np.unique([p.iterations for p in self.points], return_counts=True)
        return {int(i): int(c) for i, c in zip(its, cnt)}

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        r = len(self.grid.axes)
        w.writerow([f"i_{n}" for n in self.grid.names] + [f"start_{n}" for n in self.grid.names]
                   + ["outcome", "iterations", "final_residual"]
                   + [f"nu_{n}" for n in self.grid.names])
        for p in self.points:
            w.writerow(list(p.index) + [repr(float(v)) for v in p.start]
                       + [p.outcome, p.iterations, repr(float(p.final_norm))]
                       + [repr(float(v)) for v in p.nu[:r]])
        return buf.getvalue()

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.csv_text())

    def summary_line(self):
        """One line with the columns Shooting, CPU, Success, Convergence, Objective."""
        obj = "nan" if self.objective is None else f"{self.objective:.10g}"
        return (f"{self.formulation.capitalize():9s}  CPU {self.cpu_time:8.1f} s  "
                f"Success {100 * self.success_rate:6.2f} %  "
                f"Convergence {self.best_residual:.2E}  Objective {obj}")


def default_settings(case: BenchmarkCase, **changes):
    """Solver settings used for campaigns.

    Runs are abandoned once the residual norm exceeds ``1e10``, an unknown
    exceeds ``1e4`` in magnitude, or ``50`` iterations pass without a new
    best residual.  These cutoffs only end runs that have no prospect of
    converging; they keep a campaign's cost bounded.
    """
    base = SolverSettings(tol=case.tol, max_norm=1e10, max_abs=1e4, stall_iter=50)
    return base.replace(**changes) if changes else base


def default_workers():
    value = os.environ.get("SHOOT_WORKERS", "1")
    try:
        n = int(value)
    except ValueError:
        raise ConfigurationError(f"SHOOT_WORKERS must be an integer, got {value!r}") from None
    if n < 1:
        raise ConfigurationError("SHOOT_WORKERS must be at least 1")
    return n


def _method(formulation):
    return "newton" if formulation == "classical" else "gauss-newton"


def _solve_chunk(case, formulation, settings, starts):
    t0 = time.process_time()
    R = residual_map_for_case(case, formulation)
    results = solve_many(R, starts, settings, method=_method(formulation), pool=len(starts))
    return results, time.process_time() - t0


def _solve_chunk_remote(name, params, formulation, settings, starts):
    return _solve_chunk(get_case(name, params), formulation, settings, starts)


def run_grid(case: BenchmarkCase, formulation="extended", grid: Optional[GridSpec] = None,
             reference=None, match_tol=None, workers=None, settings=None,
             chunk_size=CHUNK_SIZE, progress=None):
    """Solve from every grid point and classify the outcomes.

    Parameters
    ----------
    case
        Benchmark (or any registered family instance).
    formulation
        ``"extended"`` (Gauss-Newton) or ``"classical"`` (Newton).
    grid
        Defaults to the case's published grid.
    reference, match_tol
        A run counts as a success when it converged and
        ``|nu - reference|_inf <= match_tol``; defaults are the published
        solution and ``1e-6 (1 + |reference|_inf)``.
    workers
        Worker processes; ``1`` runs in-process.  Defaults to the
        ``SHOOT_WORKERS`` environment variable, else 1.
    progress
        Optional callable receiving ``(done_chunks, total_chunks)``.
    """
    if formulation not in ("extended", "classical"):
        raise ConfigurationError(f"batch formulation must be extended or classical, not {formulation!r}")
    grid = grid or GridSpec.from_case(case)
    if len(grid.axes) != len(case.unknown_names):
        raise ConfigurationError(
            f"grid has {len(grid.axes)} axes, the problem has {len(case.unknown_names)} unknowns")
    if reference is None:
        reference = case.nu_hat_extended if formulation == "extended" else case.nu_hat
    reference = np.asarray(reference, dtype=float)
    if match_tol is None:
        match_tol = 1e-6 * (1.0 + np.max(np.abs(reference)))
    settings = settings or default_settings(case)
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ConfigurationError("workers must be at least 1")

    starts = grid.points()
    chunks = [starts[i:i + chunk_size] for i in range(0, len(starts), chunk_size)]
    wall0 = time.perf_counter()
    results = [None] * len(chunks)
    cpu = 0.0
    if workers == 1:
        for c, pts in enumerate(chunks):
            results[c], dt = _solve_chunk(case, formulation, settings, pts)
            cpu += dt
            if progress:
                progress(c + 1, len(chunks))
    else:
        get_case(case.name, case.params)  # fail early if workers cannot rebuild the case
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futures = [ex.submit(_solve_chunk_remote, case.name, case.params, formulation,
                                 settings, pts) for pts in chunks]
            for c, fut in enumerate(futures):
                results[c], dt = fut.result()
                cpu += dt
                if progress:
                    progress(c + 1, len(chunks))
    wall = time.perf_counter() - wall0

    points = []
    flat = 0
    for pts, res in zip(chunks, results):
        for start, rr in zip(pts, res):
            if rr.converged and np.max(np.abs(rr.nu - reference)) <= match_tol:
                outcome = REFERENCE
            elif rr.converged:
                outcome = ELSEWHERE
            else:
                outcome = FAILED
            points.append(PointOutcome(index=grid.multi_index(flat), start=start,
                                       outcome=outcome, iterations=rr.iterations,
                                       final_norm=rr.final_norm, nu=rr.nu, message=rr.message))
            flat += 1
    report = BatchReport(case_name=case.name, formulation=formulation, grid=grid,
                         points=points, reference=reference, match_tol=float(match_tol),
                         wall_time=wall, cpu_time=cpu, workers=workers)
    best = report.best_point()
    if best is not None:
        report.objective = residual_map_for_case(case, formulation).objective(best.nu)
    return report
