"""One implicit time step: the anisotropic ROF resolvent.

Given data g and step h, find (u, z) with

    -h div z + u = g,      z in the subdifferential of phi at grad u,

i.e. u minimizes h * TV_phi(u) + |u - g|^2 / 2. The saddle-point form

    min_u  max_{phi_polar(z) <= 1}  h <z, grad u> + |u - g|^2 / 2

is solved with fixed-step primal-dual iterations (dual ascent + projection,
primal proximal step, over-relaxation). The loop runs in :mod:`._kernels`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .anisotropy import Anisotropy, DYKSTRA_MAX_SWEEPS, eval_phi, eval_polar
from .fields import ScalarField, VectorField, div_array, grad_array, gradient_norm_bound

logger = logging.getLogger(__name__)


class InvalidStepError(ValueError):
    """Raised for a nonpositive time step."""


@dataclass
class SolverParams:
    """Stopping and step-size controls for :func:`implicit_step`.

    ``tol_residual=None`` means 1e-4 * max(1, |g|_inf). The iteration stops
    once both the equation residual and the complementarity gap are below
    their tolerances. The primal step is min(0.99/(h L), ``tau_max``) with
    L = 2 sqrt(N)/dx, and the dual step makes tau * sigma * h^2 * L^2 = 0.98.
    """

    max_iters: int = 20000
    tol_residual: float | None = None
    check_every: int = 20
    dual_projection_tol: float = 1e-10
    gap_tol: float = 0.02
    tau_max: float = 0.02
    warm_start: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol_residual is not None and not self.tol_residual > 0:
            raise ValueError("tol_residual must be positive")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")
        if not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class StepSolution:
    u: ScalarField
    z: VectorField
    residual: float
    gap: float
    iters: int
    converged: bool = True
    tol_residual: float = 0.0
    projection_failures: int = 0
    frozen: np.ndarray | None = field(default=None, repr=False)

    def diagnostics(self) -> dict:
        return {"iters": self.iters, "residual": self.residual, "gap": self.gap,
                "converged": self.converged, "tol_residual": self.tol_residual,
                "projection_failures": self.projection_failures}


def step_sizes(h: float, spacing: float, dim: int, tau_max: float = 0.02):
    L = 2.0 * np.sqrt(dim) / spacing
    tau = min(0.99 / (h * L), tau_max)
    sigma = 0.98 / (tau * (h * L) ** 2)
    return tau, sigma


def implicit_step(g: ScalarField, h: float, a: Anisotropy,
                  p: SolverParams | None = None, z0: VectorField | None = None,
                  cap: float | None = None) -> StepSolution:
    """Solve -h div z + u = g, z in d phi(grad u) on the grid of ``g``.

    Cells with |g| >= cap/2 are frozen to u = g, z = 0 (they carry the
    empty-side sentinel of the distance transform). ``z0`` seeds the dual
    variable when ``p.warm_start`` is set.
    """
    if not h > 0:
        raise InvalidStepError(f"time step must be positive, got {h}")
    p = p or SolverParams()
    grid = g.grid
    if a.dim != grid.dim:
        raise ValueError("anisotropy and grid dimensions differ")
    gv = np.ascontiguousarray(g.values, dtype=float).ravel()
    if not np.all(np.isfinite(gv)):
        raise ValueError("data g must be finite")
    frozen = np.zeros(gv.shape, dtype=bool)
    if cap is not None:
        frozen = np.abs(gv) >= 0.5 * cap
    active = gv[~frozen]
    scale = float(np.max(np.abs(active))) if active.size else 0.0
    tol = p.tol_residual if p.tol_residual is not None else 1e-4 * max(1.0, scale)

    has_next = grid.has_next()
    strides = grid.strides()
    if frozen.any():
        # decouple frozen cells so the solver stays self-adjoint on the rest
        for k in range(grid.dim):
            nxt = np.zeros_like(frozen)
            nxt[:-strides[k]] = frozen[strides[k]:]
            has_next[k] &= ~frozen & ~nxt

    u = gv.copy()
    z = np.zeros((grid.size, grid.dim))
    if p.warm_start and z0 is not None:
        z = np.ascontiguousarray(z0.values.reshape(grid.size, grid.dim), dtype=float).copy()
    tau, sigma = step_sizes(h, grid.spacing, grid.dim, p.tau_max)
    mode, box, halfspaces, polygon = a.kernel_args()
    euclid, dual_vertices = a.phi_args()
    iters, residual, gap, converged, failures = _kernels.primal_dual(
        gv, frozen, has_next, strides, grid.spacing, h, tau, sigma,
        mode, box, halfspaces, polygon, euclid, dual_vertices,
        u, z, p.max_iters, p.check_every, tol, p.gap_tol,
        DYKSTRA_MAX_SWEEPS, p.dual_projection_tol)
    if not converged:
        logger.warning("implicit step did not converge: residual %.3g, gap %.3g after %d iterations",
                       residual, gap, iters)
    return StepSolution(
        u=ScalarField(grid, u.reshape(grid.shape)),
        z=VectorField(grid, z.reshape(grid.shape + (grid.dim,))),
        residual=float(residual), gap=float(gap), iters=int(iters),
        converged=bool(converged), tol_residual=float(tol),
        projection_failures=int(failures), frozen=frozen.reshape(grid.shape))


@dataclass
class OptimalityReport:
    residual: float
    gap: float
    dual_infeasibility: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def check_optimality(s: StepSolution, g: ScalarField, h: float, a: Anisotropy,
                     tol: float, exclude: np.ndarray | None = None) -> OptimalityReport:
    """Residual of -h div z + u = g, complementarity gap and dual infeasibility.

    ``exclude`` masks cells (e.g. a seam band or the box rim) left out of all
    three maxima; frozen solver cells are always left out.
    """
    u = s.u.values
    z = s.z.values
    dx = g.grid.spacing
    keep = np.ones(g.grid.shape, dtype=bool)
    if exclude is not None:
        keep &= ~exclude
    if s.frozen is not None:
        keep &= ~s.frozen
    res = np.abs(-h * div_array(z, dx) + u - g.values)
    du = grad_array(u, dx)
    gap = eval_phi(a, du) - np.sum(z * du, axis=-1)
    infeas = eval_polar(a, z) - 1.0
    if not keep.any():
        return OptimalityReport(0.0, 0.0, 0.0, tol, True)
    r, gp, inf = (float(np.max(v[keep])) for v in (res, gap, infeas))
    return OptimalityReport(r, gp, inf, tol, max(r, gp, inf) <= tol)
