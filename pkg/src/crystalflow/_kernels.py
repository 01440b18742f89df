"""Compiled inner loops shared by the anisotropy, resolvent and distance modules.

Fields are handled as flat C-order arrays so one kernel covers N = 2 and 3.
Neighbour structure is passed in as precomputed ``has_next[k, c]`` masks and
element strides, which keeps the loops free of index arithmetic.
"""

import numpy as np
from numba import njit

# projection modes onto the dual ball {phi_polar <= 1}
PROJ_RADIAL = 0
PROJ_BOX = 1
PROJ_POLYGON = 2
PROJ_DYKSTRA = 3


@njit(cache=True, inline="always")
def _project_polygon(y, out, polygon):
    """Nearest point on the boundary of a counter-clockwise convex polygon.

    ``y`` is assumed outside; only edges that y sees from their outer side
    can carry the nearest point.
    """
    p = polygon.shape[0]
    best = np.inf
    bx = 0.0
    by = 0.0
    for i in range(p):
        ax = polygon[i, 0]
        ay = polygon[i, 1]
        j = i + 1 if i + 1 < p else 0
        ex = polygon[j, 0] - ax
        ey = polygon[j, 1] - ay
        if (y[0] - ax) * ey - (y[1] - ay) * ex < 0.0:
            continue
        t = ((y[0] - ax) * ex + (y[1] - ay) * ey) / (ex * ex + ey * ey)
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        cx = ax + t * ex
        cy = ay + t * ey
        d = (y[0] - cx) ** 2 + (y[1] - cy) ** 2
        if d < best:
            best = d
            bx = cx
            by = cy
    out[0] = bx
    out[1] = by


@njit(cache=True, inline="always")
def _inside_halfspaces(y, halfspaces):
    worst = -np.inf
    for j in range(halfspaces.shape[0]):
        s = 0.0
        for k in range(y.shape[0]):
            s += halfspaces[j, k] * y[k]
        if s > worst:
            worst = s
    return worst <= 1.0


@njit(cache=True)
def project_one(y, out, mode, box, halfspaces, polygon, scratch, max_sweeps, tol):
    """Project ``y`` onto the dual ball, writing into ``out``.

    Returns False only when Dykstra's scheme hits its sweep cap.
    """
    n = y.shape[0]
    if mode == PROJ_RADIAL:
        s = 0.0
        for k in range(n):
            s += y[k] * y[k]
        s = np.sqrt(s)
        if s > 1.0:
            for k in range(n):
                out[k] = y[k] / s
        else:
            for k in range(n):
                out[k] = y[k]
        return True

    if mode == PROJ_BOX:
        for k in range(n):
            b = box[k]
            v = y[k]
            if v > b:
                v = b
            elif v < -b:
                v = -b
            out[k] = v
        return True

    m = halfspaces.shape[0]
    worst = -np.inf
    for j in range(m):
        s = 0.0
        for k in range(n):
            s += halfspaces[j, k] * y[k]
        if s > worst:
            worst = s
    if worst <= 1.0:
        for k in range(n):
            out[k] = y[k]
        return True

    if mode == PROJ_POLYGON:
        _project_polygon(y, out, polygon)
        return True

    # Dykstra's cyclic projections onto the halfspaces {a_j . x <= 1}
    for j in range(m):
        for k in range(n):
            scratch[j, k] = 0.0
    x = y.copy()
    w = np.empty(n)
    for _sweep in range(max_sweeps):
        moved = 0.0
        for j in range(m):
            s = 0.0
            aa = 0.0
            for k in range(n):
                w[k] = x[k] + scratch[j, k]
                s += halfspaces[j, k] * w[k]
                aa += halfspaces[j, k] * halfspaces[j, k]
            viol = s - 1.0
            for k in range(n):
                xn = w[k]
                if viol > 0.0:
                    xn -= viol / aa * halfspaces[j, k]
                scratch[j, k] = w[k] - xn
                moved = max(moved, abs(xn - x[k]))
                x[k] = xn
        worst = -np.inf
        for j in range(m):
            s = 0.0
            for k in range(n):
                s += halfspaces[j, k] * x[k]
            if s > worst:
                worst = s
        if worst - 1.0 <= tol and moved <= tol:
            for k in range(n):
                out[k] = x[k]
            return True
    for k in range(n):
        out[k] = x[k]
    return False


@njit(cache=True)
def project_points(points, mode, box, halfspaces, polygon, max_sweeps, tol):
    m, n = points.shape
    out = np.empty_like(points)
    scratch = np.zeros((max(halfspaces.shape[0], 1), n))
    failures = 0
    for i in range(m):
        if not project_one(points[i], out[i], mode, box, halfspaces, polygon,
                           scratch, max_sweeps, tol):
            failures += 1
    return out, failures


@njit(cache=True)
def norm_phi(x, euclidean, dual_vertices):
    """phi(x): Euclidean length, or the max over the dual vertex set."""
    if euclidean:
        s = 0.0
        for k in range(x.shape[0]):
            s += x[k] * x[k]
        return np.sqrt(s)
    best = -np.inf
    for j in range(dual_vertices.shape[0]):
        s = 0.0
        for k in range(x.shape[0]):
            s += dual_vertices[j, k] * x[k]
        if s > best:
            best = s
    return best


@njit(cache=True)
def primal_dual(g, frozen, has_next, strides, dx, h, tau, sigma,
                mode, box, halfspaces, polygon, euclidean, dual_vertices,
                u, z, max_iters, check_every, tol_res, gap_tol,
                max_sweeps, proj_tol):
    """Fixed-step primal-dual iteration for min_u h*TV_phi(u) + |u-g|^2/2.

    ``u`` (n,) and ``z`` (n, N) are updated in place. Returns
    (iterations, residual, gap, converged, projection_failures).
    """
    ncell = g.shape[0]
    ndim = strides.shape[0]
    ubar = u.copy()
    uold = np.empty(ncell)
    y = np.empty(ndim)
    zc = np.empty(ndim)
    grad = np.empty(ndim)
    scratch = np.zeros((max(halfspaces.shape[0], 1), ndim))
    residual = np.inf
    gap = np.inf
    failures = 0
    it = 0
    converged = False
    while it < max_iters:
        it += 1
        check = (it % check_every == 0) or (it == max_iters)
        # dual ascent + projection
        sh = sigma * h / dx
        for c in range(ncell):
            if frozen[c]:
                for k in range(ndim):
                    z[c, k] = 0.0
                continue
            uc = ubar[c]
            for k in range(ndim):
                gk = 0.0
                if has_next[k, c]:
                    gk = ubar[c + strides[k]] - uc
                y[k] = z[c, k] + sh * gk
            if mode == PROJ_RADIAL:
                s2 = 0.0
                for k in range(ndim):
                    s2 += y[k] * y[k]
                if s2 > 1.0:
                    inv = 1.0 / np.sqrt(s2)
                    for k in range(ndim):
                        z[c, k] = y[k] * inv
                else:
                    for k in range(ndim):
                        z[c, k] = y[k]
            elif mode == PROJ_BOX:
                for k in range(ndim):
                    z[c, k] = min(max(y[k], -box[k]), box[k])
            elif mode == PROJ_POLYGON:
                if _inside_halfspaces(y, halfspaces):
                    for k in range(ndim):
                        z[c, k] = y[k]
                else:
                    _project_polygon(y, zc, polygon)
                    for k in range(ndim):
                        z[c, k] = zc[k]
            else:
                if not project_one(y, zc, mode, box, halfspaces, polygon,
                                   scratch, max_sweeps, proj_tol):
                    failures += 1
                for k in range(ndim):
                    z[c, k] = zc[k]
        # primal proximal step
        inv_dx = 1.0 / dx
        res = 0.0
        for c in range(ncell):
            uold[c] = u[c]
            if frozen[c]:
                u[c] = g[c]
                continue
            dv = 0.0
            for k in range(ndim):
                if has_next[k, c]:
                    dv += z[c, k]
                sk = strides[k]
                if c >= sk and has_next[k, c - sk]:
                    dv -= z[c - sk, k]
            dv *= inv_dx
            un = (u[c] + tau * (h * dv + g[c])) / (1.0 + tau)
            r = abs(un - g[c] - h * dv)
            if r > res:
                res = r
            u[c] = un
        for c in range(ncell):
            ubar[c] = 2.0 * u[c] - uold[c]
        if check:
            residual = res
            gap = complementarity_gap(u, z, frozen, has_next, strides, dx,
                                      euclidean, dual_vertices, grad)
            if residual <= tol_res and gap <= gap_tol:
                converged = True
                break
    return it, residual, gap, converged, failures


@njit(cache=True)
def complementarity_gap(u, z, frozen, has_next, strides, dx, euclidean,
                        dual_vertices, grad):
    """max over cells of phi(grad u) - z . grad u."""
    ncell = u.shape[0]
    ndim = strides.shape[0]
    worst = 0.0
    for c in range(ncell):
        if frozen[c]:
            continue
        dot = 0.0
        for k in range(ndim):
            gk = 0.0
            if has_next[k, c]:
                gk = (u[c + strides[k]] - u[c]) / dx
            grad[k] = gk
            dot += gk * z[c, k]
        v = norm_phi(grad, euclidean, dual_vertices) - dot
        if v > worst:
            worst = v
    return worst


@njit(cache=True)
def min_polar_distance(points, targets, euclidean, vertices):
    """For each point, min over targets of phi_polar(point - target)."""
    m, n = points.shape
    t = targets.shape[0]
    out = np.empty(m)
    w = np.empty(n)
    for i in range(m):
        best = np.inf
        for j in range(t):
            for k in range(n):
                w[k] = points[i, k] - targets[j, k]
            if euclidean:
                s = 0.0
                for k in range(n):
                    s += w[k] * w[k]
                d = np.sqrt(s)
            else:
                d = -np.inf
                for v in range(vertices.shape[0]):
                    s = 0.0
                    for k in range(n):
                        s += vertices[v, k] * w[k]
                    if s > d:
                        d = s
            if d < best:
                best = d
        out[i] = best
    return out
