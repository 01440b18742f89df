"""Closed-form reference solutions for Wulff-shape data.

Everything here depends on the anisotropy only through phi_polar: with
mobility equal to phi, Wulff shapes shrink self-similarly by the same laws in
every norm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .anisotropy import Anisotropy, eval_polar


class _Extinct:
    """Marker returned when a Wulff shape has disappeared."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Extinct"

    def __bool__(self):
        return False


Extinct = _Extinct()


def is_extinct(value) -> bool:
    return value is Extinct


@dataclass(frozen=True)
class OracleConstants:
    N: int

    @property
    def chi_N(self) -> float:
        return chi(self.N)


def chi(N: int) -> float:
    """Constant of the sqrt(s) lower bound: 4N / sqrt(3(N+1))."""
    return 4.0 * N / math.sqrt(3.0 * (N + 1))


def _dim(a: Anisotropy | None, N: int | None) -> int:
    if N is not None:
        return N
    if a is None:
        raise ValueError("need the dimension N or an anisotropy")
    return a.dim


# -- total variation flow from phi_polar ---------------------------------------

def tv_flow_f(x, t: float, a: Anisotropy) -> np.ndarray | float:
    """Explicit phi-TV flow f(x, t) with f(., 0) = phi_polar."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    N = a.dim
    p = np.asarray(eval_polar(a, x), dtype=float)
    if t == 0:
        out = p
    else:
        r = math.sqrt((N + 1) * t)
        with np.errstate(divide="ignore", invalid="ignore"):
            outer = p + t * (N - 1) / p
        out = np.where(p <= r, r + t * (N - 1) / r, outer)
    return out if out.ndim else float(out)


def tv_flow_zeta(x, t: float, a: Anisotropy) -> np.ndarray:
    """Cahn-Hoffmann field paired with :func:`tv_flow_f`; zero at (0, 0)."""
    x = np.asarray(x, dtype=float)
    N = a.dim
    p = np.asarray(eval_polar(a, x), dtype=float)[..., None]
    r = math.sqrt((N + 1) * t) if t > 0 else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inner = x / r if r > 0 else np.zeros_like(x)
        outer = np.where(p > 0, x / np.where(p > 0, p, 1.0), 0.0)
    return np.where(p <= r, inner, outer)


def tv_flow_dfdt(x, t: float, a: Anisotropy) -> np.ndarray:
    """Time derivative of :func:`tv_flow_f`: N/r(t) on the plateau, (N-1)/phi_polar outside."""
    N = a.dim
    p = np.asarray(eval_polar(a, x), dtype=float)
    r = math.sqrt((N + 1) * t)
    with np.errstate(divide="ignore"):
        return np.where(p <= r, N / r, (N - 1) / p)


# -- one implicit step from a Wulff shape ----------------------------------------

def plateau_radius(h: float, N: int) -> float:
    return math.sqrt(h * (N + 1))


def plateau_value(h: float, N: int) -> float:
    """phi_polar_h on its flat core: 2N sqrt(h) / sqrt(N+1)."""
    return 2.0 * N * math.sqrt(h) / math.sqrt(N + 1)


def polar_h(x, h: float, a: Anisotropy) -> np.ndarray | float:
    """Resolvent of phi_polar for time step h (the ROF solution with data phi_polar)."""
    if not h > 0:
        raise ValueError("h must be positive")
    N = a.dim
    p = np.asarray(eval_polar(a, x), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        outer = p + h * (N - 1) / p
    out = np.where(p <= plateau_radius(h, N), plateau_value(h, N), outer)
    return out if out.ndim else float(out)


def resolvent_wulff(x, h: float, R: float, a: Anisotropy):
    """Solution of the implicit step with data phi_polar - R."""
    return polar_h(x, h, a) - R


def resolvent_wulff_field(x, h: float, a: Anisotropy) -> np.ndarray:
    """Dual field z paired with :func:`resolvent_wulff`.

    Outside the core z = x / phi_polar(x). On the core, z = q(s) x / s with
    s = phi_polar(x) and q(s) = (c s / N - s^2 / (N+1)) / h, c the plateau
    value; q rises from 0 to 1 at the core edge so that -h div z + u = g.
    """
    x = np.asarray(x, dtype=float)
    N = a.dim
    p = np.asarray(eval_polar(a, x), dtype=float)
    rho = plateau_radius(h, N)
    c = plateau_value(h, N)
    # q(s)/s is smooth: c/(N h) - s/((N+1) h)
    inner = (c / (N * h) - p / ((N + 1) * h))[..., None] * x
    with np.errstate(divide="ignore", invalid="ignore"):
        outer = x / np.where(p > 0, p, 1.0)[..., None]
    return np.where((p <= rho)[..., None], inner, outer)


# -- radii ----------------------------------------------------------------------

def extinction_threshold(h: float, N: int) -> float:
    """Radius below which one implicit step empties a Wulff shape.

    The resolvent of phi_polar - r is >= plateau_value(h) - r everywhere, so
    its zero sublevel set is empty exactly when r < plateau_value(h).
    """
    return plateau_value(h, N)


def one_step_radius(R: float, h: float, N: int = 2):
    if R < extinction_threshold(h, N):
        return Extinct
    return 0.5 * (R + math.sqrt(R * R - 4.0 * h * (N - 1)))


def radius_recursion(R: float, h: float, k: int, N: int = 2):
    """Radius of the discrete Wulff evolution after k steps, or Extinct."""
    if not (R > 0 and h > 0 and k >= 0):
        raise ValueError("need R > 0, h > 0, k >= 0")
    r = R
    for _ in range(k):
        r = one_step_radius(r, h, N)
        if r is Extinct:
            return Extinct
    return r


def radius_sequence(R: float, h: float, N: int = 2, k_max: int | None = None) -> list:
    """[r_0, r_1, ...] up to and excluding extinction (or k_max steps)."""
    out = [R]
    r = R
    while k_max is None or len(out) <= k_max:
        r = one_step_radius(r, h, N)
        if r is Extinct:
            break
        out.append(r)
    return out


def discrete_extinction_time(R: float, h: float, N: int = 2) -> float:
    """First h*k with an empty Wulff evolution."""
    return h * len(radius_sequence(R, h, N))


def continuous_radius(R: float, t: float, N: int = 2):
    """sqrt(R^2 - 2(N-1)t) before extinction at R^2 / (2(N-1)), then Extinct."""
    if not (R > 0 and t >= 0):
        raise ValueError("need R > 0, t >= 0")
    if N == 1:
        return R
    left = R * R - 2.0 * (N - 1) * t
    if left <= 0:
        return Extinct
    return math.sqrt(left)


def continuous_extinction_time(R: float, N: int = 2) -> float:
    return R * R / (2.0 * (N - 1))


def radius_lower_bound(R: float, t: float, N: int = 2) -> float:
    """sqrt(R^2 - 4t(N-1)), valid for t <= R^2 / (8(N+1)) and every h."""
    return math.sqrt(max(R * R - 4.0 * t * (N - 1), 0.0))


def comp_wulff_bound(R: float, s: float, N: int = 2) -> float:
    """R - chi_N sqrt(s) on its validity interval [0, R^2 / (16 chi_N^2)]."""
    c = chi(N)
    if s < 0 or s > R * R / (16.0 * c * c):
        raise ValueError(f"s={s} outside [0, R^2/(16 chi_N^2)] = [0, {R * R / (16 * c * c):.6g}]")
    return R - c * math.sqrt(s)


def seam_band(x, r: float, a: Anisotropy, width: float) -> np.ndarray:
    """Points where the closed forms are only Lipschitz, widened by ``width``.

    That is the level {phi_polar = r} (the plateau edge) and, for crystalline
    anisotropies, the rays where the maximizing vertex of phi_polar changes.
    """
    x = np.asarray(x, dtype=float)
    band = np.abs(np.asarray(eval_polar(a, x)) - r) <= width
    if not a.is_euclidean:
        top = np.sort(x @ a.vertices.T, axis=-1)
        band |= top[..., -1] - top[..., -2] <= width
    return band
