"""Piecewise-linear hat functions on a structured triangulation of the repatom grid.

Each grid cell is split along the diagonal from its lower-left to its
upper-right corner.  With local cell coordinates ``(s, t)`` in ``[0, 1]^2``
the lower-right triangle (``s >= t``) has barycentric weights
``(1 - s, s - t, t)`` at corners ``(0,0), (1,0), (1,1)`` and the upper-left
triangle has ``(1 - t, t - s, s)`` at ``(0,0), (0,1), (1,1)``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyError


def _cells(points, grid, tol=1e-9):
    if grid.shape is None or grid.origin is None:
        raise AssemblyError("linear interpolation needs a regular repatom grid")
    ny, nx = grid.shape
    h = grid.spacing
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    a = (p[:, 0] - grid.origin[0]) / h
    b = (p[:, 1] - grid.origin[1]) / h
    outside = (a < -tol) | (b < -tol) | (a > nx - 1 + tol) | (b > ny - 1 + tol)
    if np.any(outside):
        i = int(np.flatnonzero(outside)[0])
        raise AssemblyError(f"point {i} lies outside the repatom triangulation", atom=i)
    ix = np.clip(np.floor(a + tol).astype(np.int64), 0, nx - 2)
    iy = np.clip(np.floor(b + tol).astype(np.int64), 0, ny - 2)
    s = np.clip(a - ix, 0.0, 1.0)
    t = np.clip(b - iy, 0.0, 1.0)
    return ix, iy, s, t


def triangle_vertices(points, grid):
    """Repatom indices (n, 3) of the triangle containing each point and the barycentric weights."""
    nx = grid.shape[1]
    ix, iy, s, t = _cells(points, grid)
    v00 = iy * nx + ix
    v10 = v00 + 1
    v01 = v00 + nx
    v11 = v01 + 1
    lower = s >= t
    verts = np.where(lower[:, None], np.stack([v00, v10, v11], 1), np.stack([v00, v01, v11], 1))
    w = np.where(lower[:, None], np.stack([1 - s, s - t, t], 1), np.stack([1 - t, t - s, s], 1))
    tri = 2 * (iy * (nx - 1) + ix) + (~lower)
    return verts, w, tri


def hat_matrix(points, grid):
    """Hat-function values (points x repatoms) as CSR."""
    verts, w, _ = triangle_vertices(points, grid)
    n = verts.shape[0]
    rows = np.repeat(np.arange(n), 3)
    M = sp.csr_matrix((w.ravel(), (rows, verts.ravel())), shape=(n, grid.n_rep))
    M.eliminate_zeros()
    return M


def _tri_vertices(tri, nx):
    cell = tri // 2
    ix = cell % (nx - 1)
    iy = cell // (nx - 1)
    v00 = iy * nx + ix
    other = np.where(tri % 2 == 0, v00 + 1, v00 + nx)
    return np.stack([v00, other, v00 + nx + 1], 1)


def cut_element_nodes(points, grid, chi, probe=1e-6):
    """Repatoms that are vertices of triangles crossed by the interface.

    A closed triangle is cut when the atoms it contains carry more than one
    value of ``chi``.  Atoms on shared edges or vertices belong to every
    adjacent triangle; they are found by probing eight directions that hit
    each corner sector of the triangulation once.
    """
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    chi = np.asarray(chi, dtype=float)
    ny, nx = grid.shape
    h = grid.spacing
    lo = np.asarray(grid.origin, dtype=float)
    hi = lo + h * np.array([nx - 1, ny - 1])
    n_tri = 2 * (nx - 1) * (ny - 1)
    cmin = np.full(n_tri, np.inf)
    cmax = np.full(n_tri, -np.inf)
    for k in range(8):
        ang = np.pi / 8 + k * np.pi / 4
        q = np.clip(p + probe * h * np.array([np.cos(ang), np.sin(ang)]), lo, hi)
        _, _, tri = triangle_vertices(q, grid)
        np.minimum.at(cmin, tri, chi)
        np.maximum.at(cmax, tri, chi)
    cut = np.flatnonzero(cmax > cmin)
    return np.unique(_tri_vertices(cut, nx))
