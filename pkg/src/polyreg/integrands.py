"""Energy densities on minors coordinates, with exact gradients.

An ``Integrand`` is a nonnegative density ``F(x, u, xi)`` where ``xi`` is a
minors slot vector (see :mod:`polyreg.minors`).  Composing with the minors
map gives the matrix-space density ``f(A) = F(x, u, all_minors(A))``, which
is polyconvex whenever ``F`` is convex in ``xi``.

Three built-in densities are provided:

* ``rotation_energy(p)``   sum of p-th powers of the singular values of the
  order-1 block plus ``p * exp(1 - d)`` on the determinant slot.  Minimal
  exactly on plane rotations, invariant under rotations acting on either
  side, and coercive with constant ``2**(1 - p/2)``.
* ``pq_energy(p, q)``      ``|A|^p / p + |d|^q / q`` (Frobenius norm).
* ``detsq_energy()``       the square of the determinant slot.

All built-ins are autonomous (they ignore ``x`` and ``u``); the interface
still carries both arguments so spatially varying densities fit the same
contract.  ``value`` and ``gradient`` are vectorized over leading axes, and
integrands are immutable after construction, so evaluation is pure and
concurrently callable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .minors import MinorsLayout, all_minors


class Integrand:
    """Density on minors coordinates together with its gradient.

    Parameters
    ----------
    layout : MinorsLayout
        Matrix dimensions the density is defined for.
    name : str
        Identifier used in configs and reports.
    value_fn : callable
        ``value_fn(x, u, xi) -> density``; must be nonnegative wherever
        finite and may return ``inf`` outside the effective domain.
        ``xi`` has shape ``(..., tau)`` and the result shape ``(...)``.
    grad_fn : callable
        ``grad_fn(x, u, xi) -> (g_u, g_xi)`` with shapes ``(..., N)`` and
        ``(..., tau)``; defined wherever ``value_fn`` is finite.
    params : dict, optional
        Dimensionless parameters (exponents etc.) recorded as metadata.
    coercivity_constant : float, optional
        Analytic constant c with ``value(all_minors(A)) >= c * |A|^p``,
        if one is known.
    """

    def __init__(self, layout, name, value_fn, grad_fn, params=None,
                 coercivity_constant=None):
        self.layout = layout
        self.name = str(name)
        self.params = dict(params or {})
        self.coercivity_constant = coercivity_constant
        self._value_fn = value_fn
        self._grad_fn = grad_fn

    def __repr__(self):
        return f"Integrand({self.name!r}, params={self.params})"

    def value(self, x, u, xi):
        xi = np.asarray(xi, dtype=float)
        self._check_slots(xi)
        return self._value_fn(x, u, xi)

    def gradient(self, x, u, xi):
        xi = np.asarray(xi, dtype=float)
        self._check_slots(xi)
        return self._grad_fn(x, u, xi)

    def value_at_matrix(self, a):
        """Composed matrix-space density, ``value`` after the minors map."""
        return self.value(None, None, all_minors(a))

    def _check_slots(self, xi):
        if xi.shape[-1:] != (self.layout.tau,):
            raise ValueError(
                f"slot vector has trailing size {xi.shape[-1:]}, "
                f"expected {self.layout.tau}"
            )


@dataclass(frozen=True)
class SignedSingularValues:
    """Singular values of a 2 x 2 matrix with the determinant's sign attached
    to the larger one: ``|mu1| >= mu2 >= 0`` and ``mu1 * mu2 = det``."""

    mu1: float
    mu2: float


def _singular_values_2x2(a):
    """Both singular values of stacked 2 x 2 matrices, closed form.

    Uses the rotation/reflection split of the entries; exact (to rounding)
    even at repeated singular values, where LAPACK-based routines may lose
    the symmetry.
    """
    half_sum = 0.5 * (a[..., 0, 0] + a[..., 1, 1])
    half_dif = 0.5 * (a[..., 0, 0] - a[..., 1, 1])
    half_skw = 0.5 * (a[..., 1, 0] - a[..., 0, 1])
    half_sym = 0.5 * (a[..., 1, 0] + a[..., 0, 1])
    big = np.hypot(half_sum, half_skw)
    small = np.hypot(half_dif, half_sym)
    return big + small, np.abs(big - small)


def signed_svd(a) -> SignedSingularValues:
    """Signed singular values of a single 2 x 2 matrix."""
    a = np.asarray(a, dtype=float)
    if a.shape != (2, 2):
        raise ValueError(f"expected a 2 x 2 matrix, got shape {a.shape}")
    lam1, lam2 = _singular_values_2x2(a)
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    mu1 = -lam1 if det < 0 else lam1
    return SignedSingularValues(float(mu1), float(lam2))


def _split_order1_det(xi, layout):
    n2 = layout.N * layout.n
    a = xi[..., :n2].reshape(xi.shape[:-1] + (layout.N, layout.n))
    return a, xi[..., -1]


def rotation_energy(p) -> Integrand:
    """Rotation-minimal density for 2 x 2 gradients.

    ``F(xi) = lam1^p + lam2^p + p * exp(1 - d)`` where lam1, lam2 are the
    singular values of the order-1 block of ``xi`` and ``d`` is the
    determinant slot.  Convex in ``xi`` (each term is convex in its own
    variables) and equal to ``2 + p`` exactly when the block is a rotation
    and ``d = 1``.  Requires ``p > 2``.

    The gradient of the singular-value term is assembled from a full SVD as
    ``p * U diag(lam^(p-1)) V^T``, which is well defined at repeated
    singular values for ``p > 2``.
    """
    p = float(p)
    if p <= 2:
        raise ValueError(f"exponent must exceed 2, got p={p}")
    layout = MinorsLayout(2, 2)

    def value_fn(x, u, xi):
        a, d = _split_order1_det(xi, layout)
        lam1, lam2 = _singular_values_2x2(a)
        with np.errstate(over="ignore"):
            return lam1 ** p + lam2 ** p + p * np.exp(1.0 - d)

    def grad_fn(x, u, xi):
        a, d = _split_order1_det(xi, layout)
        uu, lam, vt = np.linalg.svd(a)
        schatten = p * np.einsum("...ik,...k,...kj->...ij", uu, lam ** (p - 1.0), vt)
        g_xi = np.zeros_like(xi)
        g_xi[..., :4] = schatten.reshape(xi.shape[:-1] + (4,))
        with np.errstate(over="ignore"):
            g_xi[..., 4] = -p * np.exp(1.0 - d)
        return np.zeros(xi.shape[:-1] + (2,)), g_xi

    return Integrand(
        layout, "rotation", value_fn, grad_fn,
        params={"p": p},
        coercivity_constant=2.0 ** (1.0 - p / 2.0),
    )


def pq_energy(p, q, n=2) -> Integrand:
    """``|A|^p / p + |d|^q / q`` on square layouts, Frobenius norm on the
    order-1 block and the determinant slot ``d``.  Requires ``p > n`` and
    ``q > 1``; the gradient is ``(|A|^(p-2) A, |d|^(q-2) d)`` and any
    intermediate minor blocks (n = 3) receive zero weight."""
    p, q = float(p), float(q)
    n = int(n)
    if not p > n:
        raise ValueError(f"need p > n, got p={p}, n={n}")
    if not q > 1:
        raise ValueError(f"need q > 1, got q={q}")
    layout = MinorsLayout(n, n)
    n2 = n * n

    def value_fn(x, u, xi):
        a, d = _split_order1_det(xi, layout)
        fro2 = np.sum(a * a, axis=(-2, -1))
        return fro2 ** (p / 2.0) / p + np.abs(d) ** q / q

    def grad_fn(x, u, xi):
        a, d = _split_order1_det(xi, layout)
        fro2 = np.sum(a * a, axis=(-2, -1))
        g_xi = np.zeros_like(xi)
        scale = fro2 ** ((p - 2.0) / 2.0)
        g_xi[..., :n2] = (scale[..., None, None] * a).reshape(xi.shape[:-1] + (n2,))
        g_xi[..., -1] = np.sign(d) * np.abs(d) ** (q - 1.0)
        return np.zeros(xi.shape[:-1] + (n,)), g_xi

    return Integrand(
        layout, "pq", value_fn, grad_fn,
        params={"p": p, "q": q, "n": n},
        coercivity_constant=1.0 / p,
    )


def detsq_energy() -> Integrand:
    """Square of the determinant slot for 2 x 2 gradients."""
    layout = MinorsLayout(2, 2)

    def value_fn(x, u, xi):
        return xi[..., 4] ** 2

    def grad_fn(x, u, xi):
        g_xi = np.zeros_like(xi)
        g_xi[..., 4] = 2.0 * xi[..., 4]
        return np.zeros(xi.shape[:-1] + (2,)), g_xi

    return Integrand(layout, "detsq", value_fn, grad_fn, params={})


@dataclass(frozen=True)
class ConvexityReport:
    samples: int
    violations: int
    worst_gap: float
    tolerance: float


def check_convexity(F, samples, seed, tol=1e-10, box=3.0) -> ConvexityReport:
    """Midpoint-style convexity probe of ``F`` in its slot argument.

    Draws ``samples`` random triples (xi1, xi2, t) with slot entries uniform
    in ``[-box, box]`` and t uniform in (0, 1), and counts how often

        F(t xi1 + (1-t) xi2) > t F(xi1) + (1-t) F(xi2) + tol.

    Slots are sampled freely: no consistency between the order-1 block and
    the higher minors is imposed, since convexity is required in the free
    slot variable.  Triples with a non-finite value are skipped.
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    tau = F.layout.tau
    xi1 = rng.uniform(-box, box, size=(samples, tau))
    xi2 = rng.uniform(-box, box, size=(samples, tau))
    t = rng.uniform(0.0, 1.0, size=samples)
    f1 = F.value(None, None, xi1)
    f2 = F.value(None, None, xi2)
    fm = F.value(None, None, t[:, None] * xi1 + (1.0 - t[:, None]) * xi2)
    gap = fm - (t * f1 + (1.0 - t) * f2)
    usable = np.isfinite(f1) & np.isfinite(f2) & np.isfinite(fm)
    gap = np.where(usable, gap, -np.inf)
    return ConvexityReport(
        samples=samples,
        violations=int(np.sum(gap > tol)),
        worst_gap=float(np.max(gap)),
        tolerance=tol,
    )


@dataclass(frozen=True)
class CoercivityReport:
    samples: int
    c_estimate: float
    c_reference: float | None
    violations_at_c: int


def check_coercivity(F, p, samples, seed, c=None, box=3.0) -> CoercivityReport:
    """Estimate the largest c with ``F(all_minors(A)) >= c |A|^p``.

    Random matrices with entries uniform in ``[-box, box]`` give a sampled
    lower envelope of the ratio ``F / |A|^p``; ``c_estimate`` is its minimum.
    ``violations_at_c`` counts samples falling strictly below the reference
    bound ``c`` (the integrand's declared constant by default).
    """
    if samples < 1:
        raise ValueError("need at least one sample")
    p = float(p)
    rng = np.random.default_rng(seed)
    layout = F.layout
    a = rng.uniform(-box, box, size=(samples, layout.N, layout.n))
    vals = F.value(None, None, all_minors(a))
    norm_p = np.sum(a * a, axis=(-2, -1)) ** (p / 2.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(norm_p > 0, vals / norm_p, np.inf)
    c_ref = F.coercivity_constant if c is None else float(c)
    violations = 0 if c_ref is None else int(np.sum(vals < c_ref * norm_p))
    return CoercivityReport(
        samples=samples,
        c_estimate=float(np.min(ratios)),
        c_reference=c_ref,
        violations_at_c=violations,
    )
