"""Executable checks of the structural inequalities of the scheme.

Each check returns a :class:`CheckReport`. ``worst_violation`` is the largest
amount by which the tested inequality fails (negative when it holds with
room to spare) and the check passes iff it does not exceed
``tolerance_used``. Tolerances are a grid term plus a solver term so that a
failure can be attributed to one or the other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .anisotropy import Anisotropy, eval_phi
from .disttransform import cap_value, set_distance
from .fields import Grid, ScalarField, VectorField, div_array, grad_array
from .flow import FlowTrace, StepRecord, Termination

SAMPLES = 4096
SAMPLE_SEED = 20240607
LIPSCHITZ_SLACK = 0.02


class PreconditionViolation(ValueError):
    """The inputs do not satisfy the hypotheses a check is stated under."""


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst_violation: float
    location: object
    tolerance_used: float

    def to_dict(self) -> dict:
        loc = self.location
        if isinstance(loc, tuple):
            loc = [int(v) if isinstance(v, (int, np.integer)) else v for v in loc]
        elif isinstance(loc, np.integer):
            loc = int(loc)
        worst = self.worst_violation
        return {"name": self.name, "pass": bool(self.passed),
                "worst_violation": None if not math.isfinite(worst) else float(worst),
                "location": loc, "tolerance_used": float(self.tolerance_used)}


def _report(name, worst, location, tol) -> CheckReport:
    return CheckReport(name, bool(worst <= tol), float(worst), location, float(tol))


def _argmax_loc(values: np.ndarray, region: np.ndarray):
    """(max, index tuple) of ``values`` over ``region``; (-inf, None) if empty."""
    if not region.any():
        return -math.inf, None
    masked = np.where(region, values, -np.inf)
    flat = int(np.argmax(masked))
    return float(masked.flat[flat]), tuple(int(i) for i in np.unravel_index(flat, values.shape))


def boundary_band(grid: Grid, h: float) -> np.ndarray:
    """Cells closer than 2 sqrt(h(N+1)) + 4 dx to a face of the box.

    The Neumann closure distorts the resolvent there; the free-space
    inequalities are not expected to hold in this band.
    """
    width = 2.0 * math.sqrt(h * (grid.dim + 1)) + 4 * grid.spacing
    x = grid.coords()
    near = np.minimum((x - grid.lower).min(axis=-1), (grid.upper - x).min(axis=-1))
    return near < width


# -- comparison -------------------------------------------------------------------

def check_comparison(trE: FlowTrace, trF: FlowTrace, a: Anisotropy) -> CheckReport:
    """Nested data stay nested, and their distance does not shrink.

    Passes iff E_k is contained in F_k cellwise at every common step and
    min_k dist(E_k, F_k^c) >= dist(E_0, F_0^c) - 4 dx. An inclusion failure
    is reported as an infinite violation.
    """
    if trE.grid != trF.grid:
        raise PreconditionViolation("traces live on different grids")
    if not math.isclose(trE.h, trF.h, rel_tol=1e-12):
        raise PreconditionViolation("traces use different time steps")
    return compare_masks(trE.masks(), trF.masks(), a, ends=(trE.terminated_reason,
                                                            trF.terminated_reason))


def compare_masks(E: list, F: list, a: Anisotropy, ends=(None, None),
                  name: str = "comparison") -> CheckReport:
    """Body of :func:`check_comparison` on plain mask sequences.

    A sequence that ended by extinction (or a full set) is extended by its
    last mask; otherwise only the common steps are compared.
    """
    if not E or not F:
        raise PreconditionViolation("empty trace")
    if not E[0] <= F[0]:
        raise PreconditionViolation("initial sets are not nested")
    grid = E[0].grid
    tol = 4 * grid.spacing
    delta0 = set_distance(E[0], F[0], a)

    def at(seq, end, k):
        if k < len(seq):
            return seq[k]
        if end in (Termination.EXTINCT, Termination.FULL):
            return seq[-1]
        return None

    worst, where = -math.inf, None
    n = max(len(E), len(F))
    for k in range(n):
        Ek, Fk = at(E, ends[0], k), at(F, ends[1], k)
        if Ek is None or Fk is None:
            break
        if not Ek <= Fk:
            bad = np.argwhere(Ek.inside & ~Fk.inside)[0]
            return CheckReport(name, False, math.inf, (k,) + tuple(int(i) for i in bad), tol)
        if math.isinf(delta0):
            continue
        dk = set_distance(Ek, Fk, a)
        if delta0 - dk > worst:
            worst, where = delta0 - dk, k
    if worst == -math.inf:
        worst = 0.0
    return _report(name, worst, where, tol)


def shifted(tr: FlowTrace, by: int = 1) -> FlowTrace:
    """The trace started ``by`` steps later, re-indexed from 0."""
    steps = [StepRecord(k, k * tr.h, rec.mask, rec.u, rec.z, rec.residual, rec.gap,
                        rec.iters, rec.converged)
             for k, rec in enumerate(tr.steps[by:])]
    if not steps:
        raise PreconditionViolation(f"trace has fewer than {by + 1} steps")
    return FlowTrace(tr.params, tr.anisotropy, steps, None, tr.terminated_reason)


# -- per-step inequalities ----------------------------------------------------------

def check_supersolution_step(d_prev: ScalarField, d_next: ScalarField, z: VectorField,
                             h: float, delta: float, residual: float = 0.0,
                             exclude: np.ndarray | None = None) -> CheckReport:
    """div z <= (d_next - d_prev) / h on {d_next >= delta}.

    Tolerance 4 dx / h + 10 residual / h. ``exclude`` removes cells (for
    example a band along the box) from the test region.
    """
    grid = d_prev.grid
    if delta < 2 * grid.spacing - 1e-12:
        raise PreconditionViolation(f"delta={delta} is below 2 dx")
    tol = 4 * grid.spacing / h + 10 * residual / h
    div = div_array(z.values, grid.spacing)
    excess = div - (d_next.values - d_prev.values) / h
    region = d_next.values >= delta
    if exclude is not None:
        region &= ~exclude
    worst, loc = _argmax_loc(excess, region)
    if loc is None:
        worst = 0.0
    return _report("supersolution", worst, loc, tol)


def check_divz_bounds(z: VectorField, d: ScalarField, h: float, R: float,
                      residual: float = 0.0, exclude: np.ndarray | None = None) -> CheckReport:
    """Two-sided bounds on div z after a step from data d.

    Upper: div z <= (N-1)/R on {d >= R}. Lower: div z >= -(2N / sqrt(N+1)) / sqrt(h)
    on {d > 0}. Tolerance 4 dx^2 / h + 10 residual / h. By default cells in
    :func:`boundary_band` are left out.
    """
    grid = d.grid
    N = grid.dim
    if not (R > 0 and h <= R * R / (N + 1)):
        raise PreconditionViolation(f"need 0 < h <= R^2/(N+1); got h={h}, R={R}")
    tol = 4 * grid.spacing / h * grid.spacing + 10 * residual / h
    if exclude is None:
        exclude = boundary_band(grid, h)
    div = div_array(z.values, grid.spacing)
    keep = ~exclude
    up, up_loc = _argmax_loc(div - (N - 1) / R, keep & (d.values >= R))
    lower = -2.0 * N / math.sqrt(N + 1) / math.sqrt(h)
    lo, lo_loc = _argmax_loc(lower - div, keep & (d.values > 0))
    worst, loc = (up, up_loc) if up >= lo else (lo, lo_loc)
    if loc is None:
        worst = 0.0
    return _report("divz_bounds", worst, loc, tol)


def check_lipschitz(u: ScalarField, a: Anisotropy, exclude: np.ndarray | None = None) -> CheckReport:
    """max over cells of phi(grad u) <= 1 + 0.02 (forward differences)."""
    p = eval_phi(a, grad_array(u.values, u.grid.spacing))
    region = np.ones(u.grid.shape, dtype=bool) if exclude is None else ~exclude
    worst, loc = _argmax_loc(p - 1.0, region)
    if loc is None:
        worst = 0.0
    return _report("lipschitz", worst, loc, LIPSCHITZ_SLACK)


def check_shrink_bound(tr: FlowTrace, a: Anisotropy, samples: int = SAMPLES,
                       seed: int = SAMPLE_SEED) -> CheckReport:
    """d(x, s) >= sqrt(d(x, t)^2 - 4(N-1)(s - t + h)) - 4 dx.

    Tested for sampled (x, t) with d(x, t) > 0 and every later step s with
    s + h - t < d(x, t)^2 / (8(N+1)).
    """
    grid = tr.grid
    N = grid.dim
    h = tr.h
    tol = 4 * grid.spacing
    K = len(tr.steps)
    cap = cap_value(grid, a)
    rng = np.random.default_rng(seed)
    ks = rng.integers(0, K, size=samples)
    cells = rng.integers(0, grid.size, size=samples)
    dists = {}

    def dist(k):
        if k not in dists:
            dists[k] = tr.distance(k).values.ravel()
        return dists[k]

    worst, where = -math.inf, None
    order = np.argsort(ks, kind="stable")
    for i in order:
        k, c = int(ks[i]), int(cells[i])
        dt = dist(k)[c]
        if not 0 < dt < 0.5 * cap:
            continue
        horizon = dt * dt / (8 * (N + 1))
        for j in range(k + 1, K):
            gap = (j - k) * h + h
            if gap >= horizon:
                break
            ds = dist(j)[c]
            bound = math.sqrt(max(dt * dt - 4 * (N - 1) * gap, 0.0))
            if bound - ds > worst:
                worst, where = bound - ds, (k, j, c)
    if worst == -math.inf:
        worst = 0.0
    return _report("shrink_bound", worst, where, tol)


# -- suites -------------------------------------------------------------------------

def step_checks(tr: FlowTrace, a: Anisotropy, delta: float | None = None) -> list:
    """Lipschitz, supersolution and divergence checks on every recorded step.

    Needs ``u`` and ``z`` in the trace records; steps without them are
    skipped. The divergence upper bound uses R = max(sqrt(h(N+1)), 2 delta).
    """
    grid = tr.grid
    h = tr.h
    N = grid.dim
    delta = 2 * grid.spacing if delta is None else delta
    R = max(math.sqrt(h * (N + 1)), 2 * delta)
    band = boundary_band(grid, h)
    reports = []
    for k in range(1, len(tr.steps)):
        rec = tr.steps[k]
        if rec.u is None or rec.z is None:
            continue
        d_prev = tr.distance(k - 1)
        d_next = tr.distance(k)
        for r in (check_lipschitz(rec.u, a, exclude=band),
                  check_supersolution_step(d_prev, d_next, rec.z, h, delta, rec.residual),
                  check_divz_bounds(rec.z, d_prev, h, R, rec.residual, exclude=band)):
            r.location = (k, r.location)
            reports.append(r)
    return reports


def merge(reports: list, name: str) -> CheckReport:
    """Worst of several reports of the same check, judged by its own tolerance."""
    if not reports:
        return CheckReport(name, True, 0.0, None, 0.0)
    margin = [r.worst_violation - r.tolerance_used for r in reports]
    i = int(np.argmax(margin))
    worst = reports[i]
    passed = all(r.passed for r in reports)
    return CheckReport(name, passed, worst.worst_violation, worst.location, worst.tolerance_used)


def self_comparison(tr: FlowTrace, a: Anisotropy) -> CheckReport:
    """Compare the trace with itself one step later.

    When E_1 is inside E_0 the scheme's monotonicity forces E_{k+1} inside
    E_k for all k, with the distance between them not shrinking.
    """
    tol = 4 * tr.grid.spacing
    if len(tr.steps) < 2:
        return CheckReport("comparison", True, 0.0, None, tol)
    if not tr.steps[1].mask <= tr.steps[0].mask:
        # the hypothesis is not met (the set grows somewhere): nothing to test
        return CheckReport("comparison", True, 0.0, "not applicable: E_1 not inside E_0", tol)
    later = shifted(tr, 1)
    return compare_masks(later.masks(), tr.masks(), a,
                         ends=(tr.terminated_reason, tr.terminated_reason))


SUITES = ("comparison", "lipschitz", "supersolution", "divz", "shrink")


def run_suite(tr: FlowTrace, a: Anisotropy, suite: str = "all") -> list:
    """Named check suite on a single trace: one merged report per check."""
    names = SUITES if suite == "all" else (suite,)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise ValueError(f"unknown suite {unknown[0]!r}; choose from all, {', '.join(SUITES)}")
    out = []
    per_step = None
    if {"lipschitz", "supersolution", "divz"} & set(names):
        if not any(rec.u is not None for rec in tr.steps[1:]):
            raise ValueError("trace has no recorded u/z fields; rerun with record_fields")
        per_step = step_checks(tr, a)
    for n in names:
        if n == "comparison":
            out.append(self_comparison(tr, a))
        elif n == "shrink":
            out.append(check_shrink_bound(tr, a))
        else:
            key = {"lipschitz": "lipschitz", "supersolution": "supersolution",
                   "divz": "divz_bounds"}[n]
            out.append(merge([r for r in per_step if r.name == key], key))
    return out


def all_passed(reports: list) -> bool:
    return all(r.passed for r in reports)

