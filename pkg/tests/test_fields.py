import numpy as np
import pytest

from polyreg import (
    EnergyValue,
    Grid,
    InfiniteEnergyError,
    Integrand,
    MatrixField,
    MinorsLayout,
    cell_center_values,
    detsq_energy,
    discrete_jacobian,
    disk_mask,
    energy,
    energy_gradient,
    energy_with_gradient,
    field_from_function,
    identity_field,
    pairing,
    pq_energy,
    random_smooth_field,
    rotation_energy,
)
from polyreg.bregman import PolySubgradient, zero_subgradient


def rotation_matrix(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def constant_covector(grid, u0=None, u1=None, v2=None, base=None, F=None):
    """Subgradient-shaped covector with constant fields, for pairing tests."""
    base = base if base is not None else identity_field(grid)
    F = F if F is not None else detsq_energy()
    w = zero_subgradient(F, base)
    u0_arr = np.zeros(grid.node_shape + (2,)) if u0 is None else np.tile(u0, grid.node_shape + (1,))
    u1_arr = np.zeros(grid.cell_shape + (2, 2)) if u1 is None else np.tile(u1, grid.cell_shape + (1, 1))
    v2_arr = np.zeros(grid.cell_shape + (1,)) if v2 is None else np.tile(v2, grid.cell_shape + (1,))
    return PolySubgradient(u0_arr, u1_arr, v2_arr, base_point=base, base_energy=w.base_energy)


class TestGrid:
    def test_spacing_and_positions(self):
        g = Grid(((0.0, 1.0), (0.0, 2.0)), 5, 3)
        assert g.spacing == (0.25, 1.0)
        assert np.array_equal(g.node_points[2, 1], [0.5, 1.0])
        assert g.cell_area == 0.25

    def test_validation(self):
        with pytest.raises(ValueError):
            Grid(((0.0, 0.0), (0.0, 1.0)), 4, 4)
        with pytest.raises(ValueError):
            Grid(((0.0, 1.0), (0.0, 1.0)), 1, 4)

    def test_disk_mask_measure_close_to_area(self):
        base = Grid(((-1.0, 1.0), (-1.0, 1.0)), 64, 64)
        g = base.with_mask(disk_mask(base, radius=1.0))
        assert abs(g.domain_measure - np.pi) < 0.05

    def test_disk_membership_and_distance(self):
        base = Grid(((-1.0, 1.0), (-1.0, 1.0)), 16, 16)
        g = base.with_mask(disk_mask(base, radius=1.0))
        assert g.distance_outside(np.array([0.5, 0.0])) == 0.0
        assert g.distance_outside(np.array([2.0, 0.0])) == pytest.approx(1.0)
        assert g.diameter == 2.0


class TestDiscreteJacobian:
    def test_identity_field(self, unit_grid):
        u = identity_field(unit_grid)
        assert np.allclose(u.jacobians, np.eye(2), atol=0.0)

    def test_affine_exactness_rotation(self, unit_grid):
        r = rotation_matrix(np.pi / 4)
        u = field_from_function(unit_grid, lambda p: p @ r.T)
        assert np.max(np.abs(u.jacobians - r)) < 1e-14

    def test_quadratic_exact_at_cell_centers(self, unit_grid):
        # forward differences of x^2 average to the exact derivative at centers
        u = field_from_function(
            unit_grid, lambda p: np.stack([p[..., 0] ** 2, np.zeros_like(p[..., 0])], axis=-1)
        )
        centers = unit_grid.cell_centers
        assert np.max(np.abs(u.jacobians[..., 0, 0] - 2 * centers[..., 0])) < 1e-13

    def test_cubic_error_second_order(self):
        # on x^3 the stencil error at centers is h^2 / 4
        errors = []
        for n in (9, 17, 33):
            g = Grid(((0.0, 1.0), (0.0, 1.0)), n, n)
            u = field_from_function(
                g, lambda p: np.stack([p[..., 0] ** 3, np.zeros_like(p[..., 0])], axis=-1)
            )
            exact = 3 * g.cell_centers[..., 0] ** 2
            errors.append(np.max(np.abs(u.jacobians[..., 0, 0] - exact)))
        orders = [np.log2(errors[k] / errors[k + 1]) for k in range(2)]
        assert min(orders) > 1.9

    def test_recompute_is_bit_stable(self, unit_grid, rng):
        u = random_smooth_field(unit_grid, seed=1)
        assert np.array_equal(u.jacobians, discrete_jacobian(u))


class TestEnergy:
    def test_detsq_identity_unit_square(self, unit_grid):
        ev = energy(identity_field(unit_grid), detsq_energy())
        assert ev.value == pytest.approx(1.0, abs=1e-14)
        assert isinstance(ev, EnergyValue)
        assert ev.value == pytest.approx(unit_grid.cell_area * np.sum(ev.densities), abs=1e-15)

    def test_detsq_diagonal_stretch(self, unit_grid):
        u = field_from_function(
            unit_grid, lambda p: np.stack([2.0 * p[..., 0], p[..., 1]], axis=-1)
        )
        assert energy(u, detsq_energy()).value == pytest.approx(4.0, rel=1e-14)

    def test_rotation_energy_on_disk(self, disk_grid):
        from polyreg import rotation_field

        u = rotation_field(0.7, disk_grid)
        ev = energy(u, rotation_energy(4.0))
        assert ev.value == pytest.approx(6.0 * disk_grid.domain_measure, rel=1e-13)

    def test_affine_density_is_exact(self, unit_grid, rng):
        # constant density integrates to density * measure exactly
        a = rng.uniform(-1, 1, (2, 2))
        u = field_from_function(unit_grid, lambda p: p @ a.T)
        F = pq_energy(4.0, 2.0)
        expected = F.value_at_matrix(a) * 1.0
        assert energy(u, F).value == pytest.approx(expected, rel=1e-12)

    def test_infinite_density_propagates(self, unit_grid):
        layout = MinorsLayout(2, 2)
        F = Integrand(
            layout, "wall",
            lambda x, u, xi: np.where(xi[..., 4] > 0, xi[..., 4], np.inf),
            lambda x, u, xi: (np.zeros(xi.shape[:-1] + (2,)), np.zeros_like(xi)),
        )
        u = field_from_function(unit_grid, lambda p: -p)  # det = 1 > 0, fine
        assert np.isfinite(energy(u, F).value)
        flipped = field_from_function(
            unit_grid, lambda p: np.stack([p[..., 1], p[..., 0]], axis=-1)
        )  # det = -1
        assert energy(flipped, F).value == np.inf
        with pytest.raises(InfiniteEnergyError):
            energy_gradient(flipped, F)

    def test_masked_cells_do_not_contribute(self):
        base = Grid(((0.0, 1.0), (0.0, 1.0)), 5, 5)
        half = np.zeros(base.cell_shape, dtype=bool)
        half[:2, :] = True
        from polyreg import CellMask

        g = base.with_mask(CellMask(half))
        ev = energy(identity_field(g), detsq_energy())
        assert ev.value == pytest.approx(g.domain_measure, rel=1e-14)
        assert np.all(ev.densities[2:, :] == 0.0)

    def test_refinement_second_order(self):
        # Richardson order estimate on a fixed smooth non-affine field
        def fn(p):
            return np.stack(
                [np.sin(p[..., 0] + 0.3 * p[..., 1]), p[..., 1] + 0.2 * np.cos(p[..., 0])],
                axis=-1,
            )

        F = detsq_energy()
        values = []
        for n in (9, 17, 33):
            g = Grid(((0.0, 1.0), (0.0, 1.0)), n, n)
            values.append(energy(field_from_function(g, fn), F).value)
        order = np.log2(abs(values[0] - values[1]) / abs(values[1] - values[2]))
        assert order > 1.9


class TestEnergyGradient:
    def test_hand_assembled_3x3_detsq_at_identity(self):
        g = Grid(((0.0, 1.0), (0.0, 1.0)), 3, 3)
        u = identity_field(g)
        grad = energy_gradient(u, detsq_energy())
        # hand assembly: every cell has density gradient 2 * cofactor(I) = 2I
        area = g.cell_area
        h1, h2 = g.spacing
        expected = np.zeros((3, 3, 2))
        for ci in range(2):
            for cj in range(2):
                gx = area * np.array([2.0, 0.0]) / (2 * h1)
                gy = area * np.array([0.0, 2.0]) / (2 * h2)
                expected[ci, cj] += -gx - gy
                expected[ci + 1, cj] += gx - gy
                expected[ci, cj + 1] += -gx + gy
                expected[ci + 1, cj + 1] += gx + gy
        assert np.allclose(grad, expected, atol=1e-15)
        assert np.allclose(grad[1, 1], 0.0)  # interior node cancels

    @pytest.mark.parametrize("make_f", [detsq_energy, lambda: pq_energy(4.0, 2.0),
                                        lambda: rotation_energy(4.0)])
    def test_directional_derivative_matches_fd(self, make_f, rng):
        F = make_f()
        g = Grid(((0.0, 1.0), (0.0, 1.0)), 16, 16)
        h = 1e-5
        for k in range(20):
            u = random_smooth_field(g, seed=[42, k], amplitude=0.7)
            grad = energy_gradient(u, F)
            phi = random_smooth_field(g, seed=[77, k], amplitude=1.0)
            plus = energy(u.with_values(u.values + h * phi.values), F).value
            minus = energy(u.with_values(u.values - h * phi.values), F).value
            fd = (plus - minus) / (2 * h)
            exact = float(np.sum(grad * phi.values))
            assert abs(exact - fd) / max(1.0, abs(fd)) < 1e-6

    def test_rotation_field_is_discrete_critical_point(self, disk_grid):
        from polyreg import rotation_field

        u = rotation_field(np.pi / 5, disk_grid)
        grad = energy_gradient(u, rotation_energy(4.0))
        for k in range(5):
            phi = random_smooth_field(disk_grid, seed=[5, k], amplitude=1.0)
            assert abs(float(np.sum(grad * phi.values))) < 1e-8

    def test_energy_with_gradient_consistent(self, unit_grid):
        u = random_smooth_field(unit_grid, seed=9, amplitude=0.5)
        F = pq_energy(4.0, 2.0)
        ev, grad = energy_with_gradient(u, F)
        assert ev.value == energy(u, F).value
        assert np.array_equal(grad, energy_gradient(u, F))


class TestPairing:
    def test_zero_functional(self, unit_grid, rng):
        w = constant_covector(unit_grid)
        u = random_smooth_field(unit_grid, seed=2)
        assert pairing(w, u) == 0.0

    def test_det_slot_weight(self, unit_grid):
        # v2 = 2 on the det slot against the identity: 2 * integral of det = 2
        w = constant_covector(unit_grid, v2=np.array([2.0]))
        assert pairing(w, identity_field(unit_grid)) == pytest.approx(2.0, rel=1e-14)

    def test_node_covector_integrates_first_component(self, unit_grid):
        # u0 = (1, 0) against the identity integrates x over the unit square
        w = constant_covector(unit_grid, u0=np.array([1.0, 0.0]))
        assert pairing(w, identity_field(unit_grid)) == pytest.approx(0.5, rel=1e-13)

    def test_jacobian_covector(self, unit_grid):
        w = constant_covector(unit_grid, u1=np.eye(2))
        assert pairing(w, identity_field(unit_grid)) == pytest.approx(2.0, rel=1e-14)

    def test_layout_mismatch_raises(self, unit_grid, disk_grid):
        w = constant_covector(unit_grid)
        u = identity_field(disk_grid)
        with pytest.raises(ValueError):
            pairing(w, u)


class TestFieldBasics:
    def test_values_are_copied(self, unit_grid):
        vals = np.zeros(unit_grid.node_shape + (2,))
        u = MatrixField(unit_grid, vals)
        vals[0, 0, 0] = 99.0
        assert u.values[0, 0, 0] == 0.0

    def test_shape_guard(self, unit_grid):
        with pytest.raises(ValueError):
            MatrixField(unit_grid, np.zeros((3, 3, 2)))

    def test_w1p_norm_positive_and_finite(self, unit_grid):
        u = random_smooth_field(unit_grid, seed=4)
        norm = u.w1p_norm(4.0)
        assert np.isfinite(norm) and norm > 0

    def test_random_smooth_field_deterministic(self, unit_grid):
        a = random_smooth_field(unit_grid, seed=123)
        b = random_smooth_field(unit_grid, seed=123)
        assert np.array_equal(a.values, b.values)

    def test_cell_center_values_linear_exact(self, unit_grid):
        vals = unit_grid.node_points[..., 0] * 2.0 + 1.0
        centers = cell_center_values(vals)
        assert np.allclose(centers, unit_grid.cell_centers[..., 0] * 2.0 + 1.0, atol=1e-14)
