"""Minimizing-movements driver.

Each step replaces the current set E_k by its signed distance d, solves the
implicit step with data d, and keeps the closed sublevel set {u <= 0}:

    E_{k+1} = {x : u_{k+1}(x) <= 0},   -h div z_{k+1} + u_{k+1} = d_{E_k}.

Empty and full sets are fixed points of the scheme.
"""

from __future__ import annotations

import enum
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .anisotropy import Anisotropy, cell_diameter, eval_polar, window_distance
from .disttransform import cap_value, hausdorff_gap, signed_distance
from .fields import ScalarField, SetMask, VectorField
from .resolvent import SolverParams, implicit_step

logger = logging.getLogger(__name__)


class Termination(str, enum.Enum):
    EXTINCT = "Extinct"
    FULL = "Full"
    TIME_UP = "TimeUp"
    MARGIN_BREACH = "MarginBreach"


@dataclass
class FlowParams:
    """Time step, horizon and the guard band kept free around the set.

    ``margin=None`` resolves to 8 grid cells when the flow starts.
    """

    h: float
    t_max: float
    margin: float | None = None
    record_fields: bool = False

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"h must be positive, got {self.h}")
        if not self.t_max >= 0:
            raise ValueError("t_max must be nonnegative")

    def resolved_margin(self, spacing: float) -> float:
        m = 8 * spacing if self.margin is None else self.margin
        if m < 4 * spacing - 1e-12:
            raise ValueError(f"margin {m} is below 4 grid cells ({4 * spacing})")
        return m

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class StepRecord:
    k: int
    t: float
    mask: SetMask
    u: ScalarField | None = None
    z: VectorField | None = None
    residual: float = 0.0
    gap: float = 0.0
    iters: int = 0
    converged: bool = True

    def diagnostics(self) -> dict:
        return {"k": self.k, "t": self.t, "cells": self.mask.count, "iters": self.iters,
                "residual": self.residual, "gap": self.gap, "converged": self.converged}


@dataclass(eq=False)
class FlowTrace:
    params: FlowParams
    anisotropy: Anisotropy
    steps: list = field(default_factory=list)
    extinction_time: float | None = None
    terminated_reason: Termination = Termination.TIME_UP
    _distances: dict = field(default_factory=dict, repr=False)

    @property
    def grid(self):
        return self.steps[0].mask.grid

    @property
    def h(self) -> float:
        return self.params.h

    def masks(self) -> list:
        return [s.mask for s in self.steps]

    def times(self) -> list:
        return [s.t for s in self.steps]

    def distance(self, k: int) -> ScalarField:
        """Signed distance of the k-th mask (cached)."""
        if k not in self._distances:
            self._distances[k] = signed_distance(self.steps[k].mask, self.anisotropy)
        return self._distances[k]

    def max_residual(self) -> float:
        return max((s.residual for s in self.steps[1:]), default=0.0)


def check_margin(mask: SetMask, wd: np.ndarray, margin: float) -> bool:
    """True when every cell of the mask keeps ``margin`` from the box boundary."""
    if not mask.inside.any():
        return True
    return float(wd[mask.inside].min()) >= margin - 1e-12


def run_flow(E0: SetMask, a: Anisotropy, fp: FlowParams, sp: SolverParams | None = None,
             progress=None) -> FlowTrace:
    """Iterate the scheme from ``E0`` until extinction, a full set, t_max or a margin breach."""
    sp = sp or SolverParams()
    grid = E0.grid
    margin = fp.resolved_margin(grid.spacing)
    wd = window_distance(a, grid)
    if not check_margin(E0, wd, margin):
        raise ValueError("initial set violates the margin to the grid boundary")
    N = grid.dim
    if math.sqrt(fp.h * (N + 1)) < 3 * grid.spacing:
        warnings.warn("time step is small against the grid: the plateau sqrt(h(N+1)) "
                      "is under 3 cells and the front may pin", stacklevel=2)
    cap = cap_value(grid, a)
    trace = FlowTrace(params=fp, anisotropy=a, steps=[StepRecord(0, 0.0, E0)])
    if E0.is_empty():
        trace.extinction_time = 0.0
        trace.terminated_reason = Termination.EXTINCT
        return trace
    if E0.is_full():
        trace.terminated_reason = Termination.FULL
        return trace

    n_steps = int(math.floor(fp.t_max / fp.h + 1e-9))
    mask = E0
    z_prev = None
    for k in range(n_steps):
        d = trace.distance(k)
        sol = implicit_step(d, fp.h, a, sp, z0=z_prev, cap=cap)
        z_prev = sol.z
        mask = SetMask(grid, sol.u.values <= 0.0)
        rec = StepRecord(k + 1, (k + 1) * fp.h, mask, residual=sol.residual, gap=sol.gap,
                         iters=sol.iters, converged=sol.converged)
        if fp.record_fields:
            rec.u, rec.z = sol.u, sol.z
        trace.steps.append(rec)
        if progress is not None:
            progress(rec)
        logger.debug("step %d: %d cells, %d iters, residual %.2e", k + 1, mask.count,
                     sol.iters, sol.residual)
        if mask.is_empty():
            trace.extinction_time = (k + 1) * fp.h
            trace.terminated_reason = Termination.EXTINCT
            return trace
        if mask.is_full():
            trace.terminated_reason = Termination.FULL
            return trace
        if not check_margin(mask, wd, margin):
            trace.terminated_reason = Termination.MARGIN_BREACH
            return trace
    trace.terminated_reason = Termination.TIME_UP
    return trace


def mask_radius(mask: SetMask, a: Anisotropy, center) -> float:
    x = mask.grid.coords()[mask.inside]
    return float(np.max(eval_polar(a, x - np.asarray(center, dtype=float))))


def is_wulff_like(mask: SetMask, a: Anisotropy, center, r: float | None = None) -> bool:
    """Whether the mask contains every cell of W(center, r - 2 cell diameters)."""
    if mask.is_empty():
        return True
    if r is None:
        r = mask_radius(mask, a, center)
    p = eval_polar(a, mask.grid.coords() - np.asarray(center, dtype=float))
    core = p <= r - 2 * cell_diameter(a, mask.grid.spacing)
    return not np.any(core & ~mask.inside)


def radius_trace(tr: FlowTrace, a: Anisotropy, center) -> list:
    """[(t, r)] with r the largest phi_polar(x - center) over mask cells.

    Empty masks end the list. Masks that are not Wulff-like are logged.
    """
    out = []
    for rec in tr.steps:
        if rec.mask.is_empty():
            break
        r = mask_radius(rec.mask, a, center)
        if not is_wulff_like(rec.mask, a, center, r):
            logger.warning("mask at step %d is not a Wulff shape about %s", rec.k, center)
        out.append((rec.t, r))
    return out


def fattening_gap(E0: SetMask, a: Anisotropy, fp: FlowParams, sp: SolverParams | None = None,
                  delta: float = 0.0) -> list:
    """[(t, gap)] between the flows of the delta-outer and delta-inner sets of E0."""
    if delta < 0 or (0 < delta < E0.grid.spacing):
        raise ValueError("delta must be 0 or at least one grid spacing")
    d0 = signed_distance(E0, a).values
    outer = SetMask(E0.grid, d0 <= delta)
    inner = SetMask(E0.grid, d0 <= -delta)
    tr_out = run_flow(outer, a, fp, sp)
    tr_in = tr_out if delta == 0 else run_flow(inner, a, fp, sp)
    out = []
    n = max(len(tr_out.steps), len(tr_in.steps))
    for k in range(n):
        try:
            A = _mask_at(tr_out, k)
            B = _mask_at(tr_in, k)
        except IndexError:
            break
        out.append((k * fp.h, hausdorff_gap(A, B, a)))
    return out


def _mask_at(tr: FlowTrace, k: int) -> SetMask:
    """k-th mask, extending an extinct (or full) trace by its final state."""
    if k < len(tr.steps):
        return tr.steps[k].mask
    if tr.terminated_reason in (Termination.EXTINCT, Termination.FULL):
        return tr.steps[-1].mask
    raise IndexError(k)
