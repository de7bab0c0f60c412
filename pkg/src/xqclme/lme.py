"""Local maximum-entropy (LME) shape functions.

All internal work is nondimensionalised by the repatom spacing ``h``: offsets
``y = (x - x_a) / h``, locality ``gamma = beta * h**2`` and multiplier
``mu = lambda * h``.  Shape functions are evaluated for many points at once;
the atom/repatom pairs are stored point-major (CSR layout) and the Newton
iterations for the Lagrange multiplier run vectorised over all points.

Points lying on the boundary of the repatom bounding box only see repatoms on
the same face(s).  This is the weak Kronecker-delta limit of the LME basis on
a convex boundary, where the multiplier component normal to the face diverges.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import AssemblyError, InvalidGeometryError, LambdaNonConvergenceError

log = logging.getLogger(__name__)

DEFAULT_CUTOFF = 1e-12
_CHUNK_PAIRS = 4_000_000


@dataclass(eq=False)
class RepatomGrid:
    """Repatom positions with spacing ``h``.

    ``shape`` and ``origin`` are set for regular grids (row-major, x fastest)
    and enable the structured neighbor search.
    """

    positions: np.ndarray
    spacing: float
    atom_index: np.ndarray | None = None
    shape: tuple[int, int] | None = None
    origin: tuple[float, float] | None = None
    enriched: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)

    @property
    def n_rep(self):
        return self.positions.shape[0]

    @property
    def n_enriched(self):
        return int(self.enriched.size)

    @classmethod
    def regular(cls, lattice, h):
        ratio = h / lattice.spacing
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise InvalidGeometryError(f"repatom spacing {h} is not a multiple of the lattice spacing")
        step = int(round(ratio))
        if (lattice.n_side - 1) % step:
            raise InvalidGeometryError(
                f"repatom spacing {h} does not divide the domain edge {2 * lattice.half_extent}")
        sel = np.arange(0, lattice.n_side, step)
        IX, IY = np.meshgrid(sel, sel)
        atoms = (IY * lattice.n_side + IX).ravel()
        L = lattice.half_extent
        return cls(lattice.coords0[atoms], float(h), atoms, (sel.size, sel.size), (-L, -L))


@dataclass
class LocalityField:
    """Per-repatom locality parameter, stored dimensionless (``gamma = beta h^2``)."""

    gamma: np.ndarray
    spacing: float
    bounds: tuple[float, float] = (0.3, 4.0)
    mode: str = "uniform"

    def __post_init__(self):
        self.gamma = np.atleast_1d(np.asarray(self.gamma, dtype=float))

    @classmethod
    def uniform(cls, n_rep, gamma, spacing, bounds=(0.3, 4.0)):
        return cls(np.full(n_rep, float(gamma)), spacing, bounds, "uniform")

    @property
    def beta(self):
        return self.gamma / self.spacing**2

    @property
    def beta_bounds(self):
        return (self.bounds[0] / self.spacing**2, self.bounds[1] / self.spacing**2)

    def within_bounds(self, tol=0.0):
        lo, hi = self.bounds
        return bool(np.all(self.gamma >= lo - tol) and np.all(self.gamma <= hi + tol))


@dataclass(eq=False)
class LmeTable:
    """Converged LME evaluation at a set of points (pairs in CSR order)."""

    indptr: np.ndarray
    rep: np.ndarray
    y: np.ndarray
    phi: np.ndarray
    mu: np.ndarray
    jinv: np.ndarray
    iters: np.ndarray
    gamma: np.ndarray
    h: float
    n_rep: int
    residual: np.ndarray

    @property
    def n_points(self):
        return self.indptr.size - 1

    @property
    def n_support(self):
        return np.diff(self.indptr)

    @property
    def point(self):
        return np.repeat(np.arange(self.n_points), self.n_support)

    @property
    def lambda_star(self):
        return self.mu / self.h

    def matrix(self):
        """Scalar interpolation matrix (points x repatoms) as CSR."""
        return sp.csr_matrix((self.phi, self.rep, self.indptr), shape=(self.n_points, self.n_rep))

    def dphi_dgamma(self, b):
        """d phi / d gamma_b for all points as CSR (points x repatoms)."""
        kb = np.flatnonzero(self.rep == b)
        pts = self.point[kb] if kb.size else np.zeros(0, dtype=np.int64)
        if kb.size == 0:
            return sp.csr_matrix((self.n_points, self.n_rep))
        starts = self.indptr[pts]
        counts = self.indptr[pts + 1] - starts
        owner = np.repeat(np.arange(pts.size), counts)
        k = np.repeat(starts - np.cumsum(np.r_[0, counts[:-1]]), counts) + np.arange(counts.sum())
        yb = self.y[kb]
        phib = self.phi[kb]
        Jy = np.einsum("pij,pj->pi", self.jinv[pts], yb)
        quad = np.einsum("ki,ki->k", self.y[k], Jy[owner])
        val = self.phi[k] * (yb[owner] ** 2).sum(1) * (phib[owner] * (quad + 1.0) - (k == kb[owner]))
        return sp.csr_matrix((val, (pts[owner], self.rep[k])), shape=(self.n_points, self.n_rep))

    def vjp_gamma(self, w):
        """Return ``sum_pairs w_k d phi_k / d gamma_b`` for every repatom ``b``.

        ``w`` holds one scalar weight per pair (same layout as ``phi``).
        """
        starts = self.indptr[:-1]
        pw = self.phi * w
        s = np.add.reduceat(pw, starts)
        v0 = np.add.reduceat(pw * self.y[:, 0], starts)
        v1 = np.add.reduceat(pw * self.y[:, 1], starts)
        u0 = self.jinv[:, 0, 0] * v0 + self.jinv[:, 0, 1] * v1
        u1 = self.jinv[:, 1, 0] * v0 + self.jinv[:, 1, 1] * v1
        p = self.point
        y0 = self.y[:, 0]
        y1 = self.y[:, 1]
        c = self.phi * (y0 * y0 + y1 * y1) * (u0[p] * y0 + u1[p] * y1 + s[p] - w)
        return np.bincount(self.rep, c, minlength=self.n_rep)

    def first_order_residual(self):
        """Per point ``|sum_a phi_a (x - x_a)|`` in physical units."""
        starts = self.indptr[:-1]
        r0 = np.add.reduceat(self.phi * self.y[:, 0], starts)
        r1 = np.add.reduceat(self.phi * self.y[:, 1], starts)
        return np.hypot(r0, r1) * self.h

    def write_debug_csv(self, path, atom_ids=None):
        atom_ids = np.arange(self.n_points) if atom_ids is None else atom_ids
        lam = self.lambda_star
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["atom_id", "lambda_x", "lambda_y", "iters", "n_support"])
            for i in range(self.n_points):
                wr.writerow([int(atom_ids[i]), repr(float(lam[i, 0])), repr(float(lam[i, 1])),
                             int(self.iters[i]), int(self.indptr[i + 1] - self.indptr[i])])


def _candidate_pairs_grid(points, grid, radius):
    """Point-major candidate pairs for a regular repatom grid."""
    nx, ny = grid.shape
    ox, oy = grid.origin
    h = grid.spacing
    K = int(np.floor(radius / h + 1e-9))
    off = np.arange(-K, K + 1)
    OY, OX = np.meshgrid(off, off, indexing="ij")
    OX = OX.ravel()
    OY = OY.ravel()
    cx = np.rint((points[:, 0] - ox) / h).astype(np.int64)
    cy = np.rint((points[:, 1] - oy) / h).astype(np.int64)
    chunk = max(1, _CHUNK_PAIRS // OX.size)
    out_p, out_r = [], []
    for s in range(0, points.shape[0], chunk):
        ix = cx[s:s + chunk, None] + OX[None, :]
        iy = cy[s:s + chunk, None] + OY[None, :]
        ok = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
        pp = np.broadcast_to(np.arange(s, s + ix.shape[0])[:, None], ix.shape)[ok]
        rr = (iy * nx + ix)[ok]
        out_p.append(pp)
        out_r.append(rr)
    return np.concatenate(out_p), np.concatenate(out_r)


def _candidate_pairs_tree(points, positions, radius):
    tp = cKDTree(points)
    tr = cKDTree(positions)
    m = tp.sparse_distance_matrix(tr, radius * (1 + 1e-12), output_type="ndarray")
    p = m["i"].astype(np.int64)
    r = m["j"].astype(np.int64)
    # sparse_distance_matrix drops exact zero distances; add coincident pairs back.
    d0, j0 = tr.query(points, distance_upper_bound=1e-12 * max(1.0, radius))
    hit = np.isfinite(d0)
    p = np.concatenate([p, np.flatnonzero(hit)])
    r = np.concatenate([r, j0[hit]])
    key = np.unique(p * positions.shape[0] + r)
    return key // positions.shape[0], key % positions.shape[0]


def _face_flags(xy, lo, hi, tol):
    return np.stack([np.abs(xy[:, 0] - lo[0]) <= tol, np.abs(xy[:, 0] - hi[0]) <= tol,
                     np.abs(xy[:, 1] - lo[1]) <= tol, np.abs(xy[:, 1] - hi[1]) <= tol], axis=1)


def evaluate(points, repatoms, gamma, *, cutoff=DEFAULT_CUTOFF, tol=1e-10, max_iter=100,
             mu0=None, hull_restriction=True):
    """Evaluate LME shape functions at ``points`` (n, 2).

    ``gamma`` is the dimensionless locality per repatom.  Returns an
    :class:`LmeTable`.  ``mu0`` optionally warm-starts the scaled multipliers.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (repatoms.n_rep,)).copy()
    h = float(repatoms.spacing)
    if np.any(gamma <= 0):
        raise InvalidGeometryError("locality parameters must be positive")
    log_cut = -np.log(cutoff)
    radius = np.sqrt(log_cut / gamma.min()) * h

    if repatoms.shape is not None:
        p, r = _candidate_pairs_grid(pts, repatoms, radius)
    else:
        p, r = _candidate_pairs_tree(pts, repatoms.positions, radius)

    y = (pts[p] - repatoms.positions[r]) / h
    d2 = y[:, 0] ** 2 + y[:, 1] ** 2
    keep = gamma[r] * d2 <= log_cut * (1 + 1e-12)

    n = pts.shape[0]
    constrained = np.zeros((n, 2), dtype=bool)
    if hull_restriction:
        lo = repatoms.positions.min(0)
        hi = repatoms.positions.max(0)
        ftol = 1e-9 * h
        fp = _face_flags(pts, lo, hi, ftol)
        fr = _face_flags(repatoms.positions, lo, hi, ftol)
        keep &= ~np.any(fp[p] & ~fr[r], axis=1)
        constrained[:, 0] = fp[:, 0] | fp[:, 1]
        constrained[:, 1] = fp[:, 2] | fp[:, 3]

    p, r, y = p[keep], r[keep], y[keep]
    del d2, keep
    counts = np.bincount(p, minlength=n)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise AssemblyError(f"{empty.size} points have no repatom within the LME cutoff "
                            f"(first: point {empty[0]})", atom=int(empty[0]))
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    g_pair = gamma[r]
    gd2 = g_pair * (y[:, 0] ** 2 + y[:, 1] ** 2)
    del g_pair

    mu = np.zeros((n, 2)) if mu0 is None else np.array(mu0, dtype=float).reshape(n, 2)
    mu[constrained] = 0.0
    iters = np.zeros(n, dtype=np.int64)
    _newton(indptr, y, gd2, mu, constrained, iters, tol, max_iter)

    phi, res, J = _evaluate_all(indptr, y, gd2, mu, constrained)
    jinv = _inv2(J)
    bad = np.flatnonzero(res > tol * 10)
    if bad.size:
        raise LambdaNonConvergenceError(
            f"LME multiplier did not converge at {bad.size} points (max residual {res.max():.3e})",
            residual=float(res.max()), iterations=max_iter, points=bad)
    return LmeTable(indptr, r, y, phi, mu, jinv, iters, gamma, h, repatoms.n_rep, res)


def _segment_stats(indptr, y, gd2, mu, constrained):
    """phi, log Z, residual and Hessian for points described by ``indptr``."""
    starts = indptr[:-1]
    counts = np.diff(indptr)
    pt = np.repeat(np.arange(counts.size), counts)
    f = -gd2 + mu[pt, 0] * y[:, 0] + mu[pt, 1] * y[:, 1]
    fmax = np.maximum.reduceat(f, starts)
    w = np.exp(f - fmax[pt])
    Z = np.add.reduceat(w, starts)
    phi = w / Z[pt]
    py0 = phi * y[:, 0]
    py1 = phi * y[:, 1]
    r0 = np.add.reduceat(py0, starts)
    r1 = np.add.reduceat(py1, starts)
    J00 = np.add.reduceat(py0 * y[:, 0], starts) - r0 * r0
    J01 = np.add.reduceat(py0 * y[:, 1], starts) - r0 * r1
    J11 = np.add.reduceat(py1 * y[:, 1], starts) - r1 * r1
    cx = constrained[:, 0]
    cy = constrained[:, 1]
    r0[cx] = 0.0
    r1[cy] = 0.0
    J00[cx] = 1.0
    J11[cy] = 1.0
    J01[cx | cy] = 0.0
    logZ = fmax + np.log(Z)
    return phi, np.stack([r0, r1], 1), np.stack([J00, J01, J11], 1), logZ


def _evaluate_all(indptr, y, gd2, mu, constrained):
    phi, r, J, _ = _segment_stats(indptr, y, gd2, mu, constrained)
    Jm = np.empty((r.shape[0], 2, 2))
    Jm[:, 0, 0] = J[:, 0]
    Jm[:, 0, 1] = Jm[:, 1, 0] = J[:, 1]
    Jm[:, 1, 1] = J[:, 2]
    return phi, np.hypot(r[:, 0], r[:, 1]), Jm


def _inv2(J):
    det = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    out = np.empty_like(J)
    with np.errstate(divide="ignore", invalid="ignore"):
        out[:, 0, 0] = J[:, 1, 1] / det
        out[:, 1, 1] = J[:, 0, 0] / det
        out[:, 0, 1] = -J[:, 0, 1] / det
        out[:, 1, 0] = -J[:, 1, 0] / det
    # A support that spans no area (a single or collinear repatoms) has a singular J; the
    # offsets y have no component in its null space, so the pseudo-inverse is exact there.
    tr = J[:, 0, 0] + J[:, 1, 1]
    sing = np.flatnonzero(~(np.abs(det) > 1e-14 * tr * tr))
    if sing.size:
        out[sing] = np.linalg.pinv(J[sing], rcond=1e-10)
    return out


def _subset(indptr, sel):
    """Pair indices and new indptr restricted to points ``sel``."""
    starts = indptr[sel]
    counts = indptr[sel + 1] - starts
    new_ptr = np.zeros(sel.size + 1, dtype=np.int64)
    np.cumsum(counts, out=new_ptr[1:])
    k = np.repeat(starts - new_ptr[:-1], counts) + np.arange(new_ptr[-1])
    return k, new_ptr


def _newton(indptr, y, gd2, mu, constrained, iters, tol, max_iter):
    """Regularised Newton iterations on log Z, vectorised over points.

    Steps that increase log Z are halved (log Z is convex in mu, so this
    safeguard never triggers close to the solution).
    """
    active = np.arange(mu.shape[0])
    k_sub, ptr_sub = np.arange(y.shape[0]), indptr
    y_s, g_s = y, gd2
    prev_logz = np.full(mu.shape[0], np.inf)
    prev_mu = mu.copy()
    step = np.zeros_like(mu)
    for it in range(max_iter + 1):
        m = mu[active]
        c = constrained[active]
        _, r, J, logZ = _segment_stats(ptr_sub, y_s, g_s, m, c)
        worse = logZ > prev_logz[active] + 1e-13 * np.maximum(1.0, np.abs(logZ))
        rn = np.hypot(r[:, 0], r[:, 1])
        done = (rn <= tol) & ~worse
        if it == max_iter:
            break
        # Backtrack rejected points, Newton step for the rest.
        a_w = active[worse]
        step[a_w] *= 0.5
        mu[a_w] = prev_mu[a_w] + step[a_w]
        go = ~worse & ~done
        a_g = active[go]
        A00 = J[go, 0] + rn[go]
        A01 = J[go, 1]
        A11 = J[go, 2] + rn[go]
        det = A00 * A11 - A01 * A01
        d0 = -(A11 * r[go, 0] - A01 * r[go, 1]) / det
        d1 = -(-A01 * r[go, 0] + A00 * r[go, 1]) / det
        prev_mu[a_g] = mu[a_g]
        prev_logz[a_g] = logZ[go]
        step[a_g, 0] = d0
        step[a_g, 1] = d1
        mu[a_g] += step[a_g]
        iters[active[~done]] += 1
        still = ~done
        if not still.any():
            return
        if still.sum() < 0.7 * active.size:
            sel = np.flatnonzero(still)
            kk, ptr_sub = _subset(ptr_sub, sel)
            k_sub = k_sub[kk]
            y_s, g_s = y[k_sub], gd2[k_sub]
            active = active[sel]
    log.warning("LME Newton hit max_iter=%d with %d active points", max_iter, active.size)


# ---------------------------------------------------------------------------
# Single-point convenience API.

def _single(eval_point, repatoms, locality, **kw):
    gamma = locality.gamma if isinstance(locality, LocalityField) else locality
    return evaluate(np.asarray(eval_point, dtype=float).reshape(1, 2), repatoms, gamma, **kw)


def solve_lambda(eval_point, repatoms, locality, **kw):
    """Lagrange multiplier, Hessian of log Z at the optimum and iteration count.

    Returned in physical units (``lambda`` in 1/mm, ``J`` in mm^2).
    """
    t = _single(eval_point, repatoms, locality, **kw)
    h = t.h
    J = np.linalg.pinv(t.jinv[0], rcond=1e-10) * h * h
    return t.mu[0] / h, J, int(t.iters[0])


def shape_functions(eval_point, repatoms, locality, **kw):
    """Sparse row (1 x n_rep) of shape-function values at one point."""
    return _single(eval_point, repatoms, locality, **kw).matrix()


def shape_function_beta_derivative(eval_point, repatoms, locality, wrt_repatom, **kw):
    """Sparse row of ``d phi_a / d beta_b`` at one point for ``b = wrt_repatom``."""
    t = _single(eval_point, repatoms, locality, **kw)
    return t.dphi_dgamma(wrt_repatom) * t.h**2
