"""Surface tensions phi, their polars, and the Wulff shapes they generate.

A crystalline anisotropy is stored through the vertex set V of its Frank
diagram {phi <= 1} = conv(V). Both norms then reduce to a max of dot
products:

    phi_polar(z) = max_{v in V} v . z          (support function of conv V)
    phi(x)       = max_{w in V*} w . x          (V* = vertices of the polar body)

V* is obtained once, at construction, from the facet equations of conv(V).
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from . import _kernels
from .fields import Grid, SetMask

EUCLIDEAN = "euclidean"
POLYTOPE = "polytope"

DYKSTRA_MAX_SWEEPS = 200
DYKSTRA_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Anisotropy:
    """An even norm phi on R^N, Euclidean or crystalline.

    Use the constructors :meth:`euclidean`, :meth:`polytope` or
    :func:`catalog` rather than instantiating directly.
    """

    kind: str
    dim: int
    vertices: np.ndarray | None = None
    name: str = ""
    dual_vertices: np.ndarray | None = field(default=None, repr=False)
    projection: int = field(default=_kernels.PROJ_RADIAL, repr=False)
    box: np.ndarray = field(default=None, repr=False)
    polygon: np.ndarray = field(default=None, repr=False)

    @classmethod
    def euclidean(cls, dim: int = 2) -> "Anisotropy":
        if dim < 1:
            raise ValueError("dimension must be positive")
        return cls(kind=EUCLIDEAN, dim=dim, name="euclidean",
                   box=np.zeros(dim), polygon=np.zeros((0, dim)))

    @classmethod
    def polytope(cls, vertices, name: str = "polytope",
                 complete_symmetry: bool = True) -> "Anisotropy":
        """Crystalline anisotropy whose Frank diagram is conv(vertices).

        Missing antipodes are added (with a warning) when
        ``complete_symmetry`` is set, otherwise an asymmetric set is an
        error. Points that are not extreme are dropped.
        """
        pts = np.atleast_2d(np.asarray(vertices, dtype=float))
        dim = pts.shape[1]
        if dim < 2:
            raise ValueError("polytope anisotropies need N >= 2")
        missing = [v for v in pts if not _contains_point(pts, -v)]
        if missing:
            if not complete_symmetry:
                raise ValueError("vertex set is not symmetric under v -> -v")
            warnings.warn(f"added {len(missing)} antipodal vertices to make phi even",
                          stacklevel=2)
            pts = np.vstack([pts, -np.asarray(missing)])
        try:
            hull = ConvexHull(pts)
        except QhullError as exc:
            raise ValueError("vertex hull has empty interior; phi would not be a norm") from exc
        extreme = pts[np.sort(hull.vertices)]
        offsets = hull.equations[:, -1]
        if np.any(offsets >= -1e-12):
            raise ValueError("origin is not interior to the vertex hull")
        dual = hull.equations[:, :-1] / (-offsets[:, None])
        dual = _unique_rows(dual)

        box = np.zeros(dim)
        polygon = np.zeros((0, dim))
        projection = _kernels.PROJ_DYKSTRA
        axis_box = _axis_box(extreme)
        if axis_box is not None:
            projection = _kernels.PROJ_BOX
            box = axis_box
        elif dim == 2:
            projection = _kernels.PROJ_POLYGON
            angles = np.arctan2(dual[:, 1], dual[:, 0])
            polygon = dual[np.argsort(angles)]
        return cls(kind=POLYTOPE, dim=dim, vertices=extreme, name=name,
                   dual_vertices=dual, projection=projection, box=box,
                   polygon=polygon)

    @property
    def is_euclidean(self) -> bool:
        return self.kind == EUCLIDEAN

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        if self.is_euclidean:
            return {"kind": "euclidean", "dim": self.dim}
        return {"kind": "polytope", "name": self.name,
                "vertices": self.vertices.tolist()}

    @classmethod
    def from_dict(cls, spec: dict) -> "Anisotropy":
        kind = spec.get("kind")
        if kind == "euclidean":
            return cls.euclidean(int(spec.get("dim", 2)))
        if kind == "polytope":
            return cls.polytope(spec["vertices"], name=spec.get("name", "polytope"))
        if kind == "catalog":
            params = {k: v for k, v in spec.items() if k not in ("kind", "name")}
            return catalog(spec["name"], **params)
        raise ValueError(f"unknown anisotropy kind {kind!r}")

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Anisotropy":
        return cls.from_dict(json.loads(text))

    # arrays handed to the compiled kernels
    def kernel_args(self):
        if self.is_euclidean:
            empty = np.zeros((0, self.dim))
            return (self.projection, self.box, empty, self.polygon)
        return (self.projection, self.box, self.vertices, self.polygon)

    def phi_args(self):
        if self.is_euclidean:
            return True, np.zeros((0, self.dim))
        return False, self.dual_vertices

    def polar_args(self):
        if self.is_euclidean:
            return True, np.zeros((0, self.dim))
        return False, self.vertices


def _contains_point(pts, v, tol=1e-12):
    return bool(np.any(np.all(np.abs(pts - v) <= tol, axis=1)))


def _unique_rows(a, decimals=12):
    _, idx = np.unique(np.round(a, decimals), axis=0, return_index=True)
    return a[np.sort(idx)]


def _axis_box(vertices):
    """Half-widths b if the dual ball is the box prod [-b_k, b_k], else None.

    That happens exactly when V = {+-c_k e_k}; then b_k = 1/c_k.
    """
    dim = vertices.shape[1]
    if vertices.shape[0] != 2 * dim:
        return None
    widths = np.zeros(dim)
    for v in vertices:
        nz = np.flatnonzero(np.abs(v) > 1e-14)
        if len(nz) != 1:
            return None
        widths[nz[0]] = abs(v[nz[0]])
    if np.any(widths == 0):
        return None
    return 1.0 / widths


# -- catalog -----------------------------------------------------------------

def ell1(dim: int = 2) -> Anisotropy:
    """phi = l1 norm; Wulff shapes are cubes (phi_polar = l-infinity)."""
    eye = np.eye(dim)
    return Anisotropy.polytope(np.vstack([eye, -eye]), name="ell1")


def ellinf(dim: int = 2) -> Anisotropy:
    """phi = l-infinity norm; Wulff shapes are cross-polytopes."""
    corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * dim, indexing="ij")).reshape(dim, -1).T
    return Anisotropy.polytope(corners, name="ellinf")


def regular_polygon(m: int, rotation: float = 0.0) -> Anisotropy:
    """Frank diagram = regular 2m-gon with a vertex at angle ``rotation``."""
    if m < 2:
        raise ValueError("regular 2m-gon needs m >= 2")
    k = np.arange(2 * m)
    theta = rotation + k * np.pi / m
    return Anisotropy.polytope(np.column_stack([np.cos(theta), np.sin(theta)]),
                               name=f"polygon{2 * m}")


def bicone(m: int = 64) -> Anisotropy:
    """phi(v) = |v'| + |v_3| in N = 3, with the circle |v'| = 1 sampled by an m-gon.

    The value is exact for v' along one of the m sampled directions.
    """
    theta = np.arange(m) * 2 * np.pi / m
    ring = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(m)])
    poles = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
    return Anisotropy.polytope(np.vstack([ring, poles]), name="bicone")


CATALOG = {
    "euclidean": lambda dim=2: Anisotropy.euclidean(dim),
    "ell1": ell1,
    "ellinf": ellinf,
    "polygon": regular_polygon,
    "hexagon": lambda: regular_polygon(3),
    "bicone": bicone,
}


def catalog(name: str, **params) -> Anisotropy:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown anisotropy {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)


# -- evaluation ----------------------------------------------------------------

def eval_phi(a: Anisotropy, x) -> np.ndarray | float:
    """phi(x) for x of shape (..., N)."""
    x = np.asarray(x, dtype=float)
    if a.is_euclidean:
        out = np.linalg.norm(x, axis=-1)
    else:
        out = np.max(x @ a.dual_vertices.T, axis=-1)
    return out if np.ndim(out) else float(out)


def eval_polar(a: Anisotropy, z) -> np.ndarray | float:
    """phi_polar(z) = sup_{phi(eta) <= 1} eta . z for z of shape (..., N)."""
    z = np.asarray(z, dtype=float)
    if a.is_euclidean:
        out = np.linalg.norm(z, axis=-1)
    else:
        out = np.max(z @ a.vertices.T, axis=-1)
    return out if np.ndim(out) else float(out)


def project_dual(a: Anisotropy, z, return_failures: bool = False):
    """Euclidean projection onto {phi_polar <= 1}, vectorized over leading axes."""
    z = np.asarray(z, dtype=float)
    flat = np.ascontiguousarray(z.reshape(-1, a.dim))
    mode, box, halfspaces, polygon = a.kernel_args()
    out, failures = _kernels.project_points(flat, mode, box, halfspaces, polygon,
                                            DYKSTRA_MAX_SWEEPS, DYKSTRA_TOL)
    out = out.reshape(z.shape)
    if failures:
        warnings.warn(f"dual projection hit the sweep cap at {failures} points",
                      RuntimeWarning, stacklevel=2)
    return (out, failures) if return_failures else out


def subdiff_contains(a: Anisotropy, eta, xi, tol: float = 1e-9) -> bool:
    """Whether xi lies in the subdifferential of phi at eta (up to ``tol``)."""
    eta = np.asarray(eta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if eval_polar(a, xi) > 1.0 + tol:
        return False
    if not np.any(eta):
        return True
    p = eval_phi(a, eta)
    return abs(float(xi @ eta) - p) <= tol * max(1.0, p)


def subgradient(a: Anisotropy, eta) -> np.ndarray:
    """One element of the subdifferential of phi at eta (ties -> lowest index)."""
    eta = np.asarray(eta, dtype=float)
    if a.is_euclidean:
        n = np.linalg.norm(eta)
        return eta / n if n > 0 else np.zeros_like(eta)
    return a.dual_vertices[int(np.argmax(a.dual_vertices @ eta))]


def lattice_step_lengths(a: Anisotropy, spacing: float) -> np.ndarray:
    """phi_polar of one grid step along each axis."""
    return eval_polar(a, spacing * np.eye(a.dim))


def cell_diameter(a: Anisotropy, spacing: float) -> float:
    """phi_polar-diameter of a grid cell of side ``spacing``."""
    signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * a.dim, indexing="ij")).reshape(a.dim, -1).T
    return float(np.max(eval_polar(a, spacing * signs)))


def window_distance(a: Anisotropy, grid: Grid) -> np.ndarray:
    """phi_polar-distance from each cell center to the outside of the grid box.

    The distance to the halfspace {y_k >= c} is (c - x_k) / phi(e_k).
    """
    x = grid.coords()
    axis_phi = eval_phi(a, np.eye(a.dim))
    lo = (x - grid.lower) / axis_phi
    hi = (grid.upper - x) / axis_phi
    return np.minimum(lo.min(axis=-1), hi.min(axis=-1))


def wulff_mask(a: Anisotropy, grid: Grid, center, R: float, margin: float | None = None) -> SetMask:
    """Cells whose centers lie in W(center, R) = {phi_polar(x - center) <= R}.

    Raises ValueError if the shape comes closer than ``margin`` (default
    4 cells) to the boundary of the grid box.
    """
    if not R > 0:
        raise ValueError("Wulff radius must be positive")
    if a.dim != grid.dim:
        raise ValueError("anisotropy and grid dimensions differ")
    center = np.asarray(center, dtype=float)
    if margin is None:
        margin = 4 * grid.spacing
    axis_phi = eval_phi(a, np.eye(a.dim))
    room = min(np.min((center - grid.lower) / axis_phi), np.min((grid.upper - center) / axis_phi))
    if room - R < margin:
        raise ValueError(f"Wulff shape of radius {R} does not fit inside the grid "
                         f"with margin {margin:.4g} (room {room:.4g})")
    return SetMask(grid, eval_polar(a, grid.coords() - center) <= R)
