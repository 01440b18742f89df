"""Regular grids and the fields sampled on them.

Cell (i_0, ..., i_{N-1}) has its center at ``origin + spacing * i``. Arrays are
stored C-ordered with axis k of the array equal to coordinate axis k; vector
fields carry their components on a trailing axis.

The discrete gradient uses forward differences with a zero last slab per axis
(homogeneous Neumann closure); :func:`divergence` is its exact negative
adjoint, so that <grad u, p> = -<u, div p> holds to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Grid:
    shape: tuple
    spacing: float
    origin: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in self.shape)
        origin = tuple(float(o) for o in self.origin)
        if len(shape) not in (2, 3):
            raise ValueError("grids must be 2- or 3-dimensional")
        if len(origin) != len(shape):
            raise ValueError("origin must have one coordinate per axis")
        if min(shape) < 8:
            raise ValueError("each axis needs at least 8 cells")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))

    @classmethod
    def centered(cls, shape, spacing: float, center=None) -> "Grid":
        """Grid whose cell centers are symmetric about ``center`` (default 0)."""
        shape = tuple(int(n) for n in shape)
        center = np.zeros(len(shape)) if center is None else np.asarray(center, float)
        origin = center - 0.5 * (np.asarray(shape) - 1) * spacing
        return cls(shape, spacing, tuple(origin))

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def lower(self) -> np.ndarray:
        """Lower corner of the box covered by the cells."""
        return np.asarray(self.origin) - 0.5 * self.spacing

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + (np.asarray(self.shape) - 0.5) * self.spacing

    def axes(self):
        return [self.origin[k] + self.spacing * np.arange(n) for k, n in enumerate(self.shape)]

    def coords(self) -> np.ndarray:
        """Cell centers, shape (*shape, N)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def strides(self) -> np.ndarray:
        """Element strides of the flat C-order layout, per axis."""
        st = np.ones(self.dim, dtype=np.int64)
        for k in range(self.dim - 2, -1, -1):
            st[k] = st[k + 1] * self.shape[k + 1]
        return st

    def has_next(self) -> np.ndarray:
        """Boolean (N, ncells): whether the cell has a successor along axis k."""
        idx = np.indices(self.shape).reshape(self.dim, -1)
        return idx < (np.asarray(self.shape)[:, None] - 1)

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "spacing": self.spacing,
                "origin": list(self.origin)}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        if "origin" in d and d["origin"] is not None:
            return cls(tuple(d["shape"]), d["spacing"], tuple(d["origin"]))
        return cls.centered(d["shape"], d["spacing"], d.get("center"))


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape + (self.grid.dim,):
            raise ValueError(f"values shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class SetMask:
    grid: Grid
    inside: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.inside, dtype=bool)
        if m.shape != self.grid.shape:
            raise ValueError(f"mask shape {m.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "inside", m)

    @property
    def count(self) -> int:
        return int(self.inside.sum())

    def is_empty(self) -> bool:
        return not self.inside.any()

    def is_full(self) -> bool:
        return bool(self.inside.all())

    def __eq__(self, other):
        if not isinstance(other, SetMask):
            return NotImplemented
        return self.grid == other.grid and np.array_equal(self.inside, other.inside)

    def __le__(self, other: "SetMask") -> bool:
        """Cellwise inclusion."""
        return not np.any(self.inside & ~other.inside)


def grad_array(u: np.ndarray, spacing: float) -> np.ndarray:
    ndim = u.ndim
    p = np.zeros(u.shape + (ndim,))
    for k in range(ndim):
        lead = [slice(None)] * ndim
        lead[k] = slice(0, -1)
        p[tuple(lead) + (k,)] = np.diff(u, axis=k) / spacing
    return p


def div_array(p: np.ndarray, spacing: float) -> np.ndarray:
    ndim = p.ndim - 1
    out = np.zeros(p.shape[:-1])
    for k in range(ndim):
        pk = p[..., k]
        head = [slice(None)] * ndim
        tail = [slice(None)] * ndim
        # + p[c] where c has a successor, - p[c - e_k] where c has a predecessor
        head[k] = slice(0, -1)
        out[tuple(head)] += pk[tuple(head)]
        tail[k] = slice(1, None)
        out[tuple(tail)] -= pk[tuple(head)]
    return out / spacing


def gradient(u: ScalarField) -> VectorField:
    return VectorField(u.grid, grad_array(u.values, u.grid.spacing))


def divergence(p: VectorField) -> ScalarField:
    return ScalarField(p.grid, div_array(p.values, p.grid.spacing))


def gradient_norm_bound(grid: Grid) -> float:
    """Upper bound 2*sqrt(N)/dx on the operator norm of :func:`gradient`."""
    return 2.0 * np.sqrt(grid.dim) / grid.spacing


def power_iteration_norm(grid: Grid, iters: int = 200, seed: int = 0) -> float:
    """Estimate ||grad|| from the top eigenvalue of -div grad."""
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(grid.shape)
    lam = 0.0
    for _ in range(iters):
        v = -div_array(grad_array(u, grid.spacing), grid.spacing)
        lam = float(np.linalg.norm(v))
        u = v / lam
    return float(np.sqrt(lam))
