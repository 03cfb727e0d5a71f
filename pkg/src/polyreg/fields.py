"""Vector fields on regular grids: Jacobians, quadrature, energies, gradients.

A field u lives on the nodes of a rectangular grid; its discrete Jacobian is
a 2 x 2 matrix per cell, computed from the bilinear (per-cell) interpolant of
the nodal values, which makes it exact for affine fields.  Integral energies

    R(u) = sum over active cells of  |cell| * F(x_c, u_c, all_minors(J_c))

use one-point midpoint quadrature per cell: x_c is the cell center, u_c the
mean of the four corner values, J_c the cell Jacobian.  ``energy_gradient``
returns the exact gradient of this discrete sum with respect to the nodal
values, assembled by pushing integrand gradients through the minors chain
rule and the transpose of the difference stencil.

Non-rectangular domains are handled by a cell mask; inactive cells contribute
nothing to energies, gradients or pairings.  Summation always runs over the
same flat cell order, so results are reproducible bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .minors import MinorsLayout, all_minors, higher_minors, minors_gradient, pull_back


class InfiniteEnergyError(ValueError):
    """Raised when a gradient or distance is requested at infinite energy."""


class UnboundedGradientError(ValueError):
    """Raised when an integrand gradient contains non-finite entries."""


class CellMask:
    """Active-cell indicator over a grid, with optional geometric provenance.

    ``kind`` records what region the mask discretizes: ``"box"`` (the whole
    rectangle), ``"disk"`` (center + radius), or ``"cells"`` for masks loaded
    from data, whose geometry is just the union of their active cells.  The
    provenance matters for admissibility: membership and outside-distance
    queries use the exact shape when one is known, so e.g. rotating a disk
    never counts as leaving it.
    """

    def __init__(self, active, kind="cells", center=None, radius=None):
        self.active = np.asarray(active, dtype=bool)
        if self.active.ndim != 2:
            raise ValueError("cell mask must be a 2-d array")
        self.kind = kind
        self.center = None if center is None else (float(center[0]), float(center[1]))
        self.radius = None if radius is None else float(radius)

    def __eq__(self, other):
        if not isinstance(other, CellMask):
            return NotImplemented
        return (
            self.active.shape == other.active.shape
            and bool(np.all(self.active == other.active))
            and self.kind == other.kind
            and self.center == other.center
            and self.radius == other.radius
        )

    @property
    def n_active(self) -> int:
        return int(np.sum(self.active))

    def is_centered_disk(self, center=(0.0, 0.0), tol=1e-12) -> bool:
        return (
            self.kind == "disk"
            and self.center is not None
            and abs(self.center[0] - center[0]) <= tol
            and abs(self.center[1] - center[1]) <= tol
        )


def full_mask(grid) -> CellMask:
    return CellMask(np.ones(grid.cell_shape, dtype=bool), kind="box")


def disk_mask(grid, center=(0.0, 0.0), radius=1.0) -> CellMask:
    """Mask whose active cells are those with center inside the disk."""
    centers = grid.cell_centers
    r2 = (centers[..., 0] - center[0]) ** 2 + (centers[..., 1] - center[1]) ** 2
    return CellMask(r2 <= radius * radius, kind="disk", center=center, radius=radius)


@dataclass(frozen=True, eq=False)
class Grid:
    """Regular node grid over an axis-aligned rectangle.

    ``bounds`` is ((a1, b1), (a2, b2)); node (i, j) sits at
    (a1 + i * h1, a2 + j * h2).  Node arrays have shape (nx, ny, ...),
    cell arrays (nx - 1, ny - 1, ...).  An optional cell mask restricts the
    integration domain.
    """

    bounds: tuple
    nx: int
    ny: int
    mask: CellMask | None = None

    def __post_init__(self):
        (a1, b1), (a2, b2) = self.bounds
        if not (b1 > a1 and b2 > a2):
            raise ValueError(f"degenerate bounds {self.bounds}")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("need at least two nodes per axis")
        if self.mask is not None and self.mask.active.shape != self.cell_shape:
            raise ValueError(
                f"mask shape {self.mask.active.shape} does not match cells {self.cell_shape}"
            )

    @property
    def spacing(self):
        (a1, b1), (a2, b2) = self.bounds
        return ((b1 - a1) / (self.nx - 1), (b2 - a2) / (self.ny - 1))

    @property
    def node_shape(self):
        return (self.nx, self.ny)

    @property
    def cell_shape(self):
        return (self.nx - 1, self.ny - 1)

    @property
    def cell_area(self) -> float:
        h1, h2 = self.spacing
        return h1 * h2

    @cached_property
    def node_points(self) -> np.ndarray:
        (a1, _), (a2, _) = self.bounds
        h1, h2 = self.spacing
        x = a1 + h1 * np.arange(self.nx)
        y = a2 + h2 * np.arange(self.ny)
        return np.stack(np.meshgrid(x, y, indexing="ij"), axis=-1)

    @cached_property
    def cell_centers(self) -> np.ndarray:
        pts = self.node_points
        return 0.25 * (pts[:-1, :-1] + pts[1:, :-1] + pts[:-1, 1:] + pts[1:, 1:])

    @cached_property
    def active_cells(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.cell_shape, dtype=bool)
        return self.mask.active

    @property
    def domain_measure(self) -> float:
        """Quadrature measure of the (masked) domain."""
        return self.cell_area * float(np.sum(self.active_cells))

    @property
    def diameter(self) -> float:
        if self.mask is not None and self.mask.kind == "disk":
            return 2.0 * self.mask.radius
        (a1, b1), (a2, b2) = self.bounds
        return float(np.hypot(b1 - a1, b2 - a2))

    def with_mask(self, mask) -> "Grid":
        return Grid(self.bounds, self.nx, self.ny, mask)

    @cached_property
    def nodes_in_domain(self) -> np.ndarray:
        """Boolean (nx, ny) marker of nodes belonging to the domain."""
        if self.mask is None or self.mask.kind == "box":
            return np.ones(self.node_shape, dtype=bool)
        if self.mask.kind == "disk":
            pts = self.node_points
            cx, cy = self.mask.center
            r2 = (pts[..., 0] - cx) ** 2 + (pts[..., 1] - cy) ** 2
            return r2 <= self.mask.radius ** 2 * (1.0 + 1e-12)
        inside = np.zeros(self.node_shape, dtype=bool)
        act = self.mask.active
        inside[:-1, :-1] |= act
        inside[1:, :-1] |= act
        inside[:-1, 1:] |= act
        inside[1:, 1:] |= act
        return inside

    def distance_outside(self, points) -> np.ndarray:
        """Euclidean distance from each point to the (masked) closed domain."""
        pts = np.asarray(points, dtype=float)
        if self.mask is not None and self.mask.kind == "disk":
            cx, cy = self.mask.center
            r = np.hypot(pts[..., 0] - cx, pts[..., 1] - cy)
            return np.maximum(r - self.mask.radius, 0.0)
        (a1, b1), (a2, b2) = self.bounds
        dx = np.maximum(np.maximum(a1 - pts[..., 0], pts[..., 0] - b1), 0.0)
        dy = np.maximum(np.maximum(a2 - pts[..., 1], pts[..., 1] - b2), 0.0)
        box_dist = np.hypot(dx, dy)
        if self.mask is None or self.mask.kind == "box":
            return box_dist
        # Generic mask: distance to the union of active closed cells.
        centers = self.cell_centers[self.mask.active]
        h1, h2 = self.spacing
        flat = pts.reshape(-1, 2)
        dx = np.maximum(np.abs(flat[:, None, 0] - centers[None, :, 0]) - 0.5 * h1, 0.0)
        dy = np.maximum(np.abs(flat[:, None, 1] - centers[None, :, 1]) - 0.5 * h2, 0.0)
        return np.hypot(dx, dy).min(axis=1).reshape(pts.shape[:-1])


def cell_center_values(node_values) -> np.ndarray:
    """Mean of the four corner values per cell (bilinear value at the center)."""
    v = np.asarray(node_values, dtype=float)
    return 0.25 * (v[:-1, :-1] + v[1:, :-1] + v[:-1, 1:] + v[1:, 1:])


def scatter_to_corners(cell_values, node_shape) -> np.ndarray:
    """Transpose of ``cell_center_values`` without the 1/4 weight: adds each
    cell value onto its four corner nodes."""
    c = np.asarray(cell_values, dtype=float)
    out = np.zeros(node_shape + c.shape[2:], dtype=float)
    out[:-1, :-1] += c
    out[1:, :-1] += c
    out[:-1, 1:] += c
    out[1:, 1:] += c
    return out


class MatrixField:
    """Deformation field on a grid: one 2-vector per node, with the cell
    Jacobians cached on first use.

    Values are copied on construction and treated as immutable; derive
    modified fields with ``with_values``.
    """

    def __init__(self, grid, values):
        values = np.array(values, dtype=float)
        if values.shape != grid.node_shape + (2,):
            raise ValueError(
                f"values shape {values.shape} does not match grid {grid.node_shape} + (2,)"
            )
        self.grid = grid
        self.values = values

    @cached_property
    def jacobians(self) -> np.ndarray:
        return discrete_jacobian(self)

    def with_values(self, values) -> "MatrixField":
        return MatrixField(self.grid, values)

    def w1p_norm(self, p) -> float:
        """Sobolev-type diagnostic norm over active cells."""
        p = float(p)
        act = self.grid.active_cells
        uc = cell_center_values(self.values)[act]
        jc = self.jacobians[act]
        total = np.sum(np.sum(uc * uc, axis=-1) ** (p / 2.0))
        total += np.sum(np.sum(jc * jc, axis=(-2, -1)) ** (p / 2.0))
        return float((self.grid.cell_area * total) ** (1.0 / p))


def discrete_jacobian(u) -> np.ndarray:
    """Cell-centered Jacobians, shape (nx-1, ny-1, 2, 2).

    Entry [..., a, b] is the derivative of component a along axis b, taken
    as the mean of the two forward differences across the cell; this is the
    gradient of the bilinear interpolant at the cell center, so affine
    fields are reproduced exactly.
    """
    v = u.values
    h1, h2 = u.grid.spacing
    d1 = (v[1:, :-1] - v[:-1, :-1] + v[1:, 1:] - v[:-1, 1:]) / (2.0 * h1)
    d2 = (v[:-1, 1:] - v[:-1, :-1] + v[1:, 1:] - v[1:, :-1]) / (2.0 * h2)
    return np.stack([d1, d2], axis=-1)


@dataclass(frozen=True)
class EnergyValue:
    """Quadrature value of an integral energy plus its per-cell densities.

    ``value`` equals ``cell_area * sum(densities over active cells)`` and is
    ``inf`` whenever any active density is infinite; inactive cells hold 0.
    """

    value: float
    densities: np.ndarray


def _active_cell_data(u):
    grid = u.grid
    act = grid.active_cells
    return (
        act,
        grid.cell_centers[act],
        cell_center_values(u.values)[act],
        u.jacobians[act],
    )


def energy(u, F) -> EnergyValue:
    """Midpoint-rule energy of ``u`` under integrand ``F`` over active cells."""
    _check_layout(F)
    grid = u.grid
    act, xc, uc, jc = _active_cell_data(u)
    with np.errstate(over="ignore"):
        dens = np.asarray(F.value(xc, uc, all_minors(jc)), dtype=float)
    densities = np.zeros(grid.cell_shape)
    densities[act] = dens
    return EnergyValue(value=float(grid.cell_area * np.sum(dens)), densities=densities)


def energy_gradient(u, F) -> np.ndarray:
    """Exact gradient of the discrete energy w.r.t. nodal values.

    Returns an array shaped like ``u.values``.  Per active cell, the
    slot-space gradient of ``F`` is pulled back through the minors Jacobian
    to a matrix-space gradient, which the transposed difference stencil
    distributes onto the four corner nodes; the direct dependence on u
    (integrands with a u argument) is averaged onto the corners.
    """
    return energy_with_gradient(u, F)[1]


def energy_with_gradient(u, F):
    """Energy and its nodal gradient in a single assembly pass."""
    _check_layout(F)
    grid = u.grid
    act, xc, uc, jc = _active_cell_data(u)
    xi = all_minors(jc)
    with np.errstate(over="ignore"):
        dens = np.asarray(F.value(xc, uc, xi), dtype=float)
    total = float(grid.cell_area * np.sum(dens))
    densities = np.zeros(grid.cell_shape)
    densities[act] = dens
    ev = EnergyValue(value=total, densities=densities)
    if not np.isfinite(total):
        raise InfiniteEnergyError("energy is not finite; gradient undefined")

    g_u, g_xi = F.gradient(xc, uc, xi)
    if not (np.all(np.isfinite(g_u)) and np.all(np.isfinite(g_xi))):
        raise UnboundedGradientError("integrand gradient has non-finite entries")
    df_dA = pull_back(minors_gradient(jc), g_xi)

    area = grid.cell_area
    h1, h2 = grid.spacing
    gx = np.zeros(grid.cell_shape + (2,))
    gy = np.zeros(grid.cell_shape + (2,))
    gx[act] = area * df_dA[..., :, 0] / (2.0 * h1)
    gy[act] = area * df_dA[..., :, 1] / (2.0 * h2)

    grad = np.zeros_like(u.values)
    grad[:-1, :-1] += -gx - gy
    grad[1:, :-1] += gx - gy
    grad[:-1, 1:] += -gx + gy
    grad[1:, 1:] += gx + gy

    if np.any(g_u):
        gu_cells = np.zeros(grid.cell_shape + (2,))
        gu_cells[act] = (area / 4.0) * g_u
        grad += scatter_to_corners(gu_cells, grid.node_shape)
    return ev, grad


def pairing(w, u) -> float:
    """Action of a subgradient-like functional on a field.

    Quadrature over active cells of

        u0_c . u_c  +  u1_c : J_c  +  v2_c . higher_minors(J_c)

    where u0 is sampled at cell centers (mean of its four corner values)
    and u_c likewise.  Linear in u through the first two terms; the last is
    polynomial through the higher minors of the Jacobian.
    """
    grid = u.grid
    if w.u0.shape != u.values.shape:
        raise ValueError("node covector shape does not match the field")
    if w.u1.shape[:2] != grid.cell_shape or w.v2.shape[:2] != grid.cell_shape:
        raise ValueError("cell covector shapes do not match the grid")
    act, _, uc, jc = _active_cell_data(u)
    u0c = cell_center_values(w.u0)[act]
    total = np.sum(u0c * uc)
    total += np.sum(w.u1[act] * jc)
    t2 = higher_minors(jc)
    if t2.shape[-1]:
        total += np.sum(w.v2[act] * t2)
    return float(grid.cell_area * total)


def _check_layout(F):
    if F.layout != MinorsLayout(2, 2):
        raise ValueError("grid calculus supports 2 x 2 gradient layouts only")


def identity_field(grid) -> MatrixField:
    return MatrixField(grid, grid.node_points)


def field_from_function(grid, fn) -> MatrixField:
    """Sample a callable ``fn(points) -> (..., 2)`` at the grid nodes."""
    return MatrixField(grid, fn(grid.node_points))


def random_smooth_field(grid, seed=None, rng=None, amplitude=1.0, modes=3) -> MatrixField:
    """Deterministic random field built from a few low-order trig modes.

    Coefficients are drawn from ``rng`` (or a generator seeded with
    ``seed``); the result is scaled so its sup norm equals ``amplitude``.
    Smooth by construction, hence resolution-independent in character.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    (a1, b1), (a2, b2) = grid.bounds
    pts = grid.node_points
    s = (pts[..., 0] - a1) / (b1 - a1)
    t = (pts[..., 1] - a2) / (b2 - a2)
    values = np.zeros(grid.node_shape + (2,))
    for comp in range(2):
        acc = np.zeros(grid.node_shape)
        for kx in range(modes):
            for ky in range(modes):
                c = rng.standard_normal(4)
                acc += c[0] * np.sin(np.pi * (kx + 1) * s) * np.sin(np.pi * (ky + 1) * t)
                acc += c[1] * np.sin(np.pi * (kx + 1) * s) * np.cos(np.pi * ky * t)
                acc += c[2] * np.cos(np.pi * kx * s) * np.sin(np.pi * (ky + 1) * t)
                acc += c[3] * np.cos(np.pi * kx * s) * np.cos(np.pi * ky * t)
        values[..., comp] = acc
    peak = np.max(np.abs(values))
    if peak > 0:
        values *= amplitude / peak
    return MatrixField(grid, values)
