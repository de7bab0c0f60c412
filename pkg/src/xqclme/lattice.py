"""X-braced truss lattices: generation, energy assembly and full-resolution equilibrium.

Atoms are numbered row-major (x fastest) on a square grid centred at the
origin.  Positions are kept as flat vectors ``[x0, y0, x1, y1, ...]`` so that
DOF ``2*a + i`` is component ``i`` of atom ``a``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateConfigurationError, InvalidGeometryError, NonConvergenceError

log = logging.getLogger(__name__)

# Boundary labels: 1 bottom, 2 right, 3 top, 4 left.
BOTTOM, RIGHT, TOP, LEFT = 1, 2, 3, 4


@dataclass(frozen=True)
class Interaction:
    alpha: int
    beta: int
    young_modulus: float
    area: float
    rest_length: float


@dataclass
class MaterialRule:
    """Young's modulus assignment for matrix, inclusion and fiber links.

    For a closed interface a link belongs to the inclusion when its midpoint
    lies strictly inside.  For a segment (fiber) a link belongs to the fiber
    when both endpoints lie on the segment.
    """

    matrix_modulus: float = 1.0
    area: float = 1.0
    geometry: object = None
    contrast: float = 1.0
    on_tol: float = 1e-9

    def moduli(self, coords, alpha, beta):
        E = np.full(alpha.shape, float(self.matrix_modulus))
        if self.geometry is None or self.contrast == 1.0:
            return E
        if self.geometry.closed:
            mid = 0.5 * (coords[alpha] + coords[beta])
            mask = self.geometry.signed_distance(mid) < 0.0
        else:
            psi = self.geometry.signed_distance(coords)
            on = psi <= self.on_tol
            mask = on[alpha] & on[beta]
        E[mask] *= self.contrast
        return E


@dataclass(eq=False)
class LatticeModel:
    half_extent: float
    spacing: float
    n_side: int
    positions0: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    young: np.ndarray
    area: np.ndarray
    rest_length: np.ndarray
    boundary_sets: dict = field(default_factory=dict)

    @property
    def n_ato(self):
        return self.n_side * self.n_side

    @property
    def n_int(self):
        return self.alpha.size

    @property
    def n_dof(self):
        return 2 * self.n_ato

    @property
    def coords0(self):
        return self.positions0.reshape(-1, 2)

    @property
    def domain(self):
        L = self.half_extent
        return (-L, -L, L, L)

    def interaction(self, i):
        return Interaction(int(self.alpha[i]), int(self.beta[i]), float(self.young[i]),
                           float(self.area[i]), float(self.rest_length[i]))

    def atom_index(self, ix, iy):
        return iy * self.n_side + ix

    def boundary_atoms(self):
        return np.unique(np.concatenate([self.boundary_sets[k] for k in (BOTTOM, RIGHT, TOP, LEFT)]))

    def neighbor_counts(self):
        return np.bincount(np.concatenate([self.alpha, self.beta]), minlength=self.n_ato)

    @cached_property
    def stiffness(self):
        return self.young * self.area / self.rest_length

    @cached_property
    def _pattern(self):
        # CSR structure of the Hessian and the scatter map for the 16 block entries per link.
        a2 = 2 * self.alpha
        b2 = 2 * self.beta
        nodes = np.stack([a2, a2 + 1, b2, b2 + 1], axis=1)
        rows = np.repeat(nodes, 4, axis=1).ravel()
        cols = np.tile(nodes, (1, 4)).ravel()
        n = self.n_dof
        key = rows.astype(np.int64) * n + cols
        uniq, inverse = np.unique(key, return_inverse=True)
        r = (uniq // n).astype(np.int32)
        c = (uniq % n).astype(np.int32)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n), out=indptr[1:])
        return c, indptr, inverse, uniq.size


def build_lattice(half_extent, spacing, material_rule=None):
    """Build a square X-braced lattice on ``[-half_extent, half_extent]^2``."""
    ratio = half_extent / spacing
    if spacing <= 0 or half_extent <= 0 or abs(ratio - round(ratio)) > 1e-9:
        raise InvalidGeometryError(
            f"half extent {half_extent} must be a positive integer multiple of spacing {spacing}")
    material_rule = material_rule or MaterialRule()
    n = 2 * int(round(ratio)) + 1
    g = -float(half_extent) + float(spacing) * np.arange(n)
    X, Y = np.meshgrid(g, g)
    coords = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange(n * n).reshape(n, n)  # idx[iy, ix]

    pairs = [
        (idx[:, :-1], idx[:, 1:]),      # horizontal
        (idx[:-1, :], idx[1:, :]),      # vertical
        (idx[:-1, :-1], idx[1:, 1:]),   # diagonal
        (idx[:-1, 1:], idx[1:, :-1]),   # anti-diagonal
    ]
    alpha = np.concatenate([p[0].ravel() for p in pairs])
    beta = np.concatenate([p[1].ravel() for p in pairs])
    r0 = np.linalg.norm(coords[beta] - coords[alpha], axis=1)
    E = material_rule.moduli(coords, alpha, beta)
    A = np.full(alpha.shape, float(material_rule.area))

    boundary_sets = {
        BOTTOM: idx[0, :].copy(),
        RIGHT: idx[:, -1].copy(),
        TOP: idx[-1, :].copy(),
        LEFT: idx[:, 0].copy(),
    }
    return LatticeModel(float(half_extent), float(spacing), n, coords.ravel(), alpha, beta,
                        E, A, r0, boundary_sets)


def interaction_energy(positions, interaction):
    """Elastic energy ``E A / (2 r0) (r - r0)^2`` of a single link."""
    if interaction.rest_length <= 0:
        raise InvalidGeometryError("interaction has zero rest length")
    x = np.asarray(positions, dtype=float).reshape(-1, 2)
    r = np.linalg.norm(x[interaction.beta] - x[interaction.alpha])
    k = interaction.young_modulus * interaction.area / interaction.rest_length
    return 0.5 * k * (r - interaction.rest_length) ** 2


def assemble(model, positions, hessian=True, length_floor=1e-12):
    """Total energy, gradient and (optionally) sparse Hessian at ``positions``."""
    x = np.asarray(positions, dtype=float).reshape(-1, 2)
    d = x[model.beta] - x[model.alpha]
    L = np.hypot(d[:, 0], d[:, 1])
    bad = np.flatnonzero(L < length_floor)
    if bad.size:
        raise DegenerateConfigurationError(
            f"{bad.size} interactions shorter than {length_floor:g}", interactions=bad)
    k = model.stiffness
    stretch = L - model.rest_length
    energy = 0.5 * float(np.dot(k, stretch * stretch))
    N = k * stretch
    t = d / L[:, None]
    fb = N[:, None] * t
    g = np.zeros_like(x)
    g[:, 0] = np.bincount(model.beta, fb[:, 0], minlength=model.n_ato) - np.bincount(
        model.alpha, fb[:, 0], minlength=model.n_ato)
    g[:, 1] = np.bincount(model.beta, fb[:, 1], minlength=model.n_ato) - np.bincount(
        model.alpha, fb[:, 1], minlength=model.n_ato)
    if not hessian:
        return energy, g.ravel(), None
    return energy, g.ravel(), _hessian(model, t, k, N / L)


def _hessian(model, t, k, tension_over_length):
    tt00 = t[:, 0] * t[:, 0]
    tt01 = t[:, 0] * t[:, 1]
    tt11 = t[:, 1] * t[:, 1]
    s = tension_over_length
    b00 = k * tt00 + s * (1.0 - tt00)
    b01 = (k - s) * tt01
    b11 = k * tt11 + s * (1.0 - tt11)
    B = np.stack([b00, b01, b01, b11], axis=1).reshape(-1, 2, 2)
    blocks = np.empty((B.shape[0], 4, 4))
    blocks[:, :2, :2] = B
    blocks[:, 2:, 2:] = B
    blocks[:, :2, 2:] = -B
    blocks[:, 2:, :2] = -B
    cols, indptr, inverse, nnz = model._pattern
    data = np.bincount(inverse, weights=blocks.ravel(), minlength=nnz)
    n = model.n_dof
    return sp.csr_matrix((data, cols, indptr), shape=(n, n))


@dataclass
class BoundaryConditions:
    """Prescribed displacements ``values`` on flat DOF indices ``dofs``."""

    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float)
        order = np.argsort(self.dofs, kind="stable")
        self.dofs = self.dofs[order]
        self.values = self.values[order]
        if np.unique(self.dofs).size != self.dofs.size:
            raise InvalidGeometryError("duplicate prescribed DOFs")

    def free_dofs(self, n_dof):
        mask = np.ones(n_dof, dtype=bool)
        mask[self.dofs] = False
        return np.flatnonzero(mask)


def benchmark_bcs(model, u_d):
    """Uniaxial loading: all boundary atoms fixed in X1, -u_d / +u_d in X2 on bottom / top."""
    dofs = {}
    for a in model.boundary_atoms():
        dofs[2 * a] = 0.0
    for a in model.boundary_sets[BOTTOM]:
        dofs[2 * a + 1] = -u_d
    for a in model.boundary_sets[TOP]:
        dofs[2 * a + 1] = u_d
    keys = np.fromiter(dofs.keys(), dtype=np.int64)
    vals = np.fromiter(dofs.values(), dtype=float)
    return BoundaryConditions(keys, vals)


def affine_bcs(model, grad, atoms=None):
    """Prescribe ``u = grad @ x`` in both components on ``atoms`` (default: boundary)."""
    grad = np.asarray(grad, dtype=float)
    atoms = model.boundary_atoms() if atoms is None else np.asarray(atoms)
    u = model.coords0[atoms] @ grad.T
    dofs = np.column_stack([2 * atoms, 2 * atoms + 1]).ravel()
    return BoundaryConditions(dofs, u.ravel())


@dataclass
class EquilibriumState:
    positions: np.ndarray
    energy: float
    internal_force: np.ndarray
    residual_norm: float
    iterations: int

    def displacement(self, positions0):
        return self.positions - positions0


def default_force_tol(model, rel=1e-8):
    return rel * float(np.min(model.young) * np.min(model.area)) / model.spacing


def _solve_spd(K, rhs):
    return spla.spsolve(K.tocsc(), rhs)


def newton_minimize(assemble_fn, x, free, tol, max_iter, label="Newton"):
    """Minimise an energy over the ``free`` entries of ``x`` by Newton-Raphson.

    ``assemble_fn(x) -> (energy, gradient, hessian)``.  The prescribed entries
    of ``x`` are held at their current values.  Returns ``(x, energy, gradient,
    residual, iterations)``.
    """
    for it in range(max_iter + 1):
        energy, g, K = assemble_fn(x)
        res = float(np.max(np.abs(g[free]))) if free.size else 0.0
        log.debug("%s it=%d energy=%.12e residual=%.3e", label, it, energy, res)
        if res <= tol:
            return x, energy, g, res, it
        if it == max_iter:
            break
        Kff = K[free][:, free]
        dx = _solve_spd(Kff, -g[free])
        x = x.copy()
        x[free] += dx
    raise NonConvergenceError(f"{label} did not converge in {max_iter} iterations "
                              f"(residual {res:.3e})", residual=res, iterations=max_iter)


def solve_full(model, bcs, load_steps=1, tol=None, max_iter=50, length_floor=1e-12):
    """Full-resolution equilibrium by pseudo-time stepping and Newton-Raphson."""
    tol = default_force_tol(model) if tol is None else tol
    n = model.n_dof
    free = bcs.free_dofs(n)
    x = model.positions0.copy()
    total_iters = 0

    def fn(y):
        return assemble(model, y, True, length_floor)

    res = 0.0
    for k in range(1, load_steps + 1):
        target = model.positions0[bcs.dofs] + bcs.values * (k / load_steps)
        # Linear predictor from the previous equilibrium keeps the first iterate well shaped.
        _, g, K = fn(x)
        dp = target - x[bcs.dofs]
        if free.size:
            rhs = -g[free] - K[free][:, bcs.dofs] @ dp
            dx = _solve_spd(K[free][:, free], rhs)
            x = x.copy()
            x[free] += dx
        x[bcs.dofs] = target
        x, energy, g, res, its = newton_minimize(fn, x, free, tol, max_iter, "full solve")
        total_iters += its + 1
        log.info("load step %d/%d: %d Newton iterations, residual %.3e", k, load_steps, its + 1, res)
    if load_steps == 0:
        energy, g, _ = assemble(model, x, False, length_floor)
    return EquilibriumState(x, energy, g, res, total_iters)
