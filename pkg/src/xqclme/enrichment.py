"""Heaviside enrichment of an interpolation basis and its Gram-Schmidt orthonormalization.

Enriched columns are ``phi_j(x) * (chi(x) - chi(x_j))`` for every enriched
repatom ``j``.  They are orthonormalized with modified Gram-Schmidt in the
given order.  Orthonormalizing the columns ``A`` in order is the thin QR
factorization ``A = Q U`` with positive diagonal, which gives closed forms for
the forward and reverse derivatives of ``Q`` with respect to ``A``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.linalg.blas import dger

from .errors import EnrichmentDegeneracyError

log = logging.getLogger(__name__)

ON_INTERFACE_TOL = 1e-9


@dataclass
class EnrichmentField:
    psi: np.ndarray
    chi: np.ndarray
    kind: str


def sign_values(psi, tol=ON_INTERFACE_TOL):
    chi = 0.5 * np.sign(psi)
    chi[np.abs(psi) <= tol] = 0.0
    return chi


def step_values(psi, tol=ON_INTERFACE_TOL):
    return np.where(np.abs(psi) <= tol, 0.5, 0.0)


def heaviside_values(geometry, points, kind=None):
    """Signed distance and enrichment value for every point.

    ``kind`` defaults to ``"sign"`` for closed interfaces and ``"step"`` for segments.
    """
    kind = kind or ("sign" if geometry.closed else "step")
    psi = np.asarray(geometry.signed_distance(np.asarray(points, dtype=float).reshape(-1, 2)))
    if kind == "sign":
        chi = sign_values(psi)
    elif kind == "step":
        chi = step_values(psi)
    else:
        raise ValueError(f"unknown enrichment kind {kind!r}")
    return EnrichmentField(psi, chi, kind)


def select_enriched_repatoms(psi_rep, radius_multiple, h):
    """Indices of repatoms with ``|psi| <= radius_multiple * h``, ascending."""
    if not radius_multiple > 0:
        raise ValueError("enrichment radius multiple must be positive")
    sel = np.flatnonzero(np.abs(np.asarray(psi_rep)) <= radius_multiple * h * (1 + 1e-12))
    if sel.size == 0:
        warnings.warn("no repatom lies within the enrichment radius; proceeding unenriched",
                      RuntimeWarning, stacklevel=2)
    return sel


def build_enriched_columns(shape_matrix, chi_atoms, chi_repatoms, enriched):
    """Raw enriched columns ``phi_{b_j}(x_a) (chi_a - chi_{b_j})`` as CSC (atoms x n_enriched)."""
    cols = sp.csc_matrix(shape_matrix)[:, enriched].tocoo()
    shift = chi_atoms[cols.row] - chi_repatoms[enriched][cols.col]
    out = sp.csc_matrix((cols.data * shift, (cols.row, cols.col)), shape=cols.shape)
    out.eliminate_zeros()
    return out


@dataclass(eq=False)
class EnrichedBasis:
    """Orthonormal enriched columns stored densely on the rows they touch.

    ``raw[rows][:, kept] = Q @ U`` with ``U`` upper triangular.
    """

    rows: np.ndarray
    Q: np.ndarray
    U: np.ndarray
    order: np.ndarray
    kept: np.ndarray
    dropped: np.ndarray
    n_ato: int

    @property
    def n_columns(self):
        return self.Q.shape[1]

    @property
    def enriched_repatoms(self):
        return self.order[self.kept]

    def to_sparse(self):
        Q = sp.csr_matrix(self.Q)
        P = sp.csr_matrix((np.ones(self.rows.size), (self.rows, np.arange(self.rows.size))),
                          shape=(self.n_ato, self.rows.size))
        return (P @ Q).tocsr()

    def dense_columns(self):
        out = np.zeros((self.n_ato, self.n_columns))
        out[self.rows] = self.Q
        return out

    def raw_rows(self, raw):
        """Kept raw columns restricted to the band rows, dense."""
        return np.asarray(sp.csc_matrix(raw)[self.rows][:, self.kept].todense())

    def forward(self, dA):
        """Derivative of ``Q`` for a perturbation ``dA`` of the kept raw columns (band rows)."""
        Q, U = self.Q, self.U
        QtdA = Q.T @ dA
        C = sla.solve_triangular(U, QtdA.T, trans="T", lower=False).T  # Q^T dA U^{-1}
        L = np.tril(C, -1)
        omega = L - L.T
        resid = dA - Q @ QtdA
        return Q @ omega + sla.solve_triangular(U, resid.T, trans="T", lower=False).T

    def adjoint(self, Qbar):
        """Cotangent on the kept raw columns given the cotangent ``Qbar`` on ``Q``."""
        Q, U = self.Q, self.U
        M = Q.T @ Qbar
        S = np.tril(M - M.T, -1)
        B = Q @ (S - M) + Qbar
        return sla.solve_triangular(U, B.T, lower=False).T  # B U^{-T}


def gram_schmidt_orthonormalize(raw, order=None, drop_tol=1e-8):
    """Modified Gram-Schmidt of the columns of ``raw`` (atoms x n) in ``order``.

    Columns whose residual norm falls below ``drop_tol`` times their original
    norm are dropped with a warning.
    """
    raw = sp.csc_matrix(raw)
    n_ato, n = raw.shape
    order = np.arange(n) if order is None else np.asarray(order)
    if n == 0:
        return EnrichedBasis(np.zeros(0, dtype=np.int64), np.zeros((0, 0)), np.zeros((0, 0)),
                             order, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), n_ato)
    rows = np.unique(raw.indices)
    V = np.asfortranarray(raw[rows].toarray()[:, order] if rows.size else np.zeros((0, n)))
    norms0 = np.linalg.norm(V, axis=0)
    U = np.zeros((n, n))
    keep = np.zeros(n, dtype=bool)
    for j in range(n):
        v = V[:, j]
        nv = np.linalg.norm(v)
        if norms0[j] == 0.0 or nv < drop_tol * norms0[j]:
            continue
        keep[j] = True
        v /= nv
        U[j, j] = nv
        if j + 1 < n:
            tail = V[:, j + 1:]
            c = v @ tail
            U[j, j + 1:] = c
            out = dger(-1.0, v, c, a=tail, overwrite_a=1)
            if out is not tail and not np.shares_memory(out, tail):
                V[:, j + 1:] = out
    kept = np.flatnonzero(keep)
    dropped = np.flatnonzero(~keep)
    if dropped.size:
        warnings.warn(f"Gram-Schmidt dropped {dropped.size} linearly dependent enriched columns",
                      RuntimeWarning, stacklevel=2)
    if kept.size == 0:
        raise EnrichmentDegeneracyError("all enriched columns are degenerate")
    Q = np.ascontiguousarray(V[:, kept])
    Uk = U[np.ix_(kept, kept)]
    return EnrichedBasis(rows, Q, Uk, order, kept, dropped, n_ato)
