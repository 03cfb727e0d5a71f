"""Image warping forward operator, data misfit, ground truth and noise.

The forward operator sends a deformation u to the deformed reference image,
sampled with bilinear interpolation at the displaced nodes.  Sample points
are clamped to the bounding rectangle, which keeps the objective finite for
arbitrary solver iterates; the hard constraint that the deformation keep the
domain inside itself is enforced separately through ``warp(..., strict=True)``
on final, reported solutions.

Images are plain nodal sample arrays; synthetic test images are sums of a
few Gaussian bumps so that warping stays well resolved on modest grids.
Noise is rescaled after drawing so that its quadrature norm matches the
requested level exactly, and is deterministic in the seed.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .fields import MatrixField, cell_center_values


class DomainViolationError(ValueError):
    """A deformation moved a domain node outside the closed domain."""

    def __init__(self, node, distance, tolerance):
        self.node = node
        self.distance = distance
        self.tolerance = tolerance
        super().__init__(
            f"node {node} maps {distance:.3e} outside the domain "
            f"(tolerance {tolerance:.3e})"
        )


class ScalarImage:
    """Nodal image samples with bilinear interpolation.

    Interpolation clamps query points to the bounding rectangle, reproduces
    node samples exactly, and keeps every value inside the hull of its four
    stencil samples.
    """

    def __init__(self, grid, samples):
        samples = np.array(samples, dtype=float)
        if samples.shape != grid.node_shape:
            raise ValueError(
                f"sample shape {samples.shape} does not match grid {grid.node_shape}"
            )
        self.grid = grid
        self.samples = samples

    @staticmethod
    def _axis_coords(coords, origin, spacing, count):
        # Grid coordinates with near-integer values snapped, so node queries
        # hit nodes exactly despite the (x - a) / h round trip.
        t = (coords - origin) / spacing
        nearest = np.rint(t)
        t = np.where(np.abs(t - nearest) <= 1e-12 * np.maximum(1.0, np.abs(t)), nearest, t)
        inside = (t >= 0.0) & (t <= count - 1.0)
        t = np.clip(t, 0.0, count - 1.0)
        i0 = t.astype(int)
        return i0, np.minimum(i0 + 1, count - 1), t - i0, inside

    def _locate(self, points):
        pts = np.asarray(points, dtype=float)
        i0, i1, f1, in1 = self._axis_coords(
            pts[..., 0], self.grid.bounds[0][0], self.grid.spacing[0], self.grid.nx)
        j0, j1, f2, in2 = self._axis_coords(
            pts[..., 1], self.grid.bounds[1][0], self.grid.spacing[1], self.grid.ny)
        return i0, i1, j0, j1, f1, f2, in1, in2

    def sample(self, points) -> np.ndarray:
        i0, i1, j0, j1, f1, f2, _, _ = self._locate(points)
        s = self.samples
        # nested linear interpolation: exact on node queries and constants
        v0 = s[i0, j0] + f1 * (s[i1, j0] - s[i0, j0])
        v1 = s[i0, j1] + f1 * (s[i1, j1] - s[i0, j1])
        return v0 + f2 * (v1 - v0)

    def sample_with_gradient(self, points):
        """Values and spatial gradient of the clamped interpolant.

        The gradient is taken with respect to the unclamped query point, so
        it vanishes in coordinates that were clamped; on the far boundary it
        is the one-sided derivative.
        """
        i0, i1, j0, j1, f1, f2, in1, in2 = self._locate(points)
        s = self.samples
        v0 = s[i0, j0] + f1 * (s[i1, j0] - s[i0, j0])
        v1 = s[i0, j1] + f1 * (s[i1, j1] - s[i0, j1])
        vals = v0 + f2 * (v1 - v0)
        # derivative stencil anchored one cell in from the far boundary
        gi = np.minimum(i0, self.grid.nx - 2)
        gj = np.minimum(j0, self.grid.ny - 2)
        g1 = f1 + (i0 - gi)
        g2 = f2 + (j0 - gj)
        s00, s10 = s[gi, gj], s[gi + 1, gj]
        s01, s11 = s[gi, gj + 1], s[gi + 1, gj + 1]
        h1, h2 = self.grid.spacing
        gx = (((1 - g2) * (s10 - s00) + g2 * (s11 - s01)) / h1) * in1
        gy = (((1 - g1) * (s01 - s00) + g1 * (s11 - s10)) / h2) * in2
        return vals, np.stack([gx, gy], axis=-1)

    def min_max(self):
        return float(np.min(self.samples)), float(np.max(self.samples))


@dataclass(frozen=True)
class NoisySample:
    """A perturbed image whose quadrature-norm distance to the exact one is
    ``delta`` by construction."""

    image: ScalarImage
    delta: float
    seed: int


def warp(reference, u, strict=False, tol_factor=1e-9) -> ScalarImage:
    """Deformed reference image: sample ``reference`` at the displaced nodes.

    With ``strict=True``, nodes that belong to the domain and land farther
    than ``tol_factor * diameter`` outside the closed domain raise
    ``DomainViolationError`` carrying the worst offender.  Without it,
    samples are clamped to the bounding rectangle, the standard surrogate
    during optimization.
    """
    grid = u.grid
    if strict:
        inside = grid.nodes_in_domain
        dist = grid.distance_outside(u.values[inside])
        tol = tol_factor * grid.diameter
        if dist.size and np.max(dist) > tol:
            flat = int(np.argmax(dist))
            node_idx = tuple(np.argwhere(inside)[flat])
            raise DomainViolationError(node_idx, float(np.max(dist)), tol)
    return ScalarImage(grid, reference.sample(u.values))


def admissibility_gap(u) -> float:
    """Worst distance by which a domain node leaves the closed domain."""
    inside = u.grid.nodes_in_domain
    dist = u.grid.distance_outside(u.values[inside])
    return float(np.max(dist)) if dist.size else 0.0


def _check_same_geometry(a, b):
    ga, gb = a.grid, b.grid
    same = (ga.bounds == gb.bounds and ga.nx == gb.nx and ga.ny == gb.ny
            and np.array_equal(ga.active_cells, gb.active_cells))
    if not same:
        raise ValueError("images live on different grids or masks")


def data_term(warped, target, q) -> float:
    """Misfit ``||warped - target||^q`` by midpoint quadrature over active
    cells (cell value = mean of the four corner samples)."""
    q = float(q)
    if q < 1:
        raise ValueError(f"misfit exponent must be >= 1, got {q}")
    _check_same_geometry(warped, target)
    grid = warped.grid
    diff = cell_center_values(warped.samples - target.samples)[grid.active_cells]
    return float(grid.cell_area * np.sum(np.abs(diff) ** q))


def lq_norm(image, q) -> float:
    """Quadrature norm of an image against zero."""
    grid = image.grid
    vals = cell_center_values(image.samples)[grid.active_cells]
    return float((grid.cell_area * np.sum(np.abs(vals) ** q)) ** (1.0 / q))


def rotation_field(theta, grid) -> MatrixField:
    """Rigid rotation of the plane about the origin, sampled at the nodes.

    Cell Jacobians equal the rotation matrix exactly (the field is affine).
    A warning is recorded when the grid's mask is not an origin-centered
    disk, since only then is the domain guaranteed to stay inside itself.
    """
    if grid.mask is None or not grid.mask.is_centered_disk():
        warnings.warn(
            "rotation field on a domain that is not an origin-centered disk; "
            "admissibility is not guaranteed",
            stacklevel=2,
        )
    pts = grid.node_points
    c, s = np.cos(theta), np.sin(theta)
    values = np.stack(
        [c * pts[..., 0] - s * pts[..., 1], s * pts[..., 0] + c * pts[..., 1]],
        axis=-1,
    )
    return MatrixField(grid, values)


def add_noise(exact, delta, q, seed) -> NoisySample:
    """Perturb an image by rescaled Gaussian node noise.

    Standard normal perturbations are drawn per node and then scaled so the
    quadrature norm of the perturbation equals ``delta`` exactly, making the
    noise level of the returned sample exact rather than an upper bound.
    Deterministic in ``seed``.
    """
    delta = float(delta)
    if delta < 0:
        raise ValueError("noise level must be nonnegative")
    if delta == 0.0:
        return NoisySample(image=exact, delta=0.0, seed=int(seed))
    rng = np.random.default_rng(seed)
    pert = rng.standard_normal(exact.samples.shape)
    scale = delta / lq_norm(ScalarImage(exact.grid, pert), q)
    return NoisySample(
        image=ScalarImage(exact.grid, exact.samples + scale * pert),
        delta=delta,
        seed=int(seed),
    )


def blob_image(grid, blobs) -> ScalarImage:
    """Sum of isotropic Gaussian bumps; rows are (amplitude, cx, cy, width)."""
    pts = grid.node_points
    out = np.zeros(grid.node_shape)
    for amp, cx, cy, width in blobs:
        r2 = (pts[..., 0] - cx) ** 2 + (pts[..., 1] - cy) ** 2
        out += amp * np.exp(-r2 / (2.0 * width * width))
    return ScalarImage(grid, out)


def random_blobs(seed, count=3, spread=0.55, width_range=(0.18, 0.42),
                 amp_range=(0.6, 1.0)):
    """Deterministic bump parameters: centers spread over a disk around the
    origin, widths broad enough to stay resolved on a 64 x 64 grid."""
    rng = np.random.default_rng(seed)
    blobs = []
    for _ in range(count):
        radius = spread * np.sqrt(rng.uniform())
        angle = rng.uniform(0.0, 2.0 * np.pi)
        blobs.append([
            rng.uniform(*amp_range),
            radius * np.cos(angle),
            radius * np.sin(angle),
            rng.uniform(*width_range),
        ])
    return blobs


@dataclass(frozen=True)
class ForwardModel:
    """Bundle of reference image, exact data and misfit exponent, enough to
    evaluate residual norms of candidate deformations."""

    reference: ScalarImage
    exact_data: ScalarImage
    q: float

    def residual_norm(self, u) -> float:
        return data_term(warp(self.reference, u), self.exact_data, self.q) ** (1.0 / self.q)
