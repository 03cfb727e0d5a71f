import numpy as np
import pytest

from polyreg import (
    ForwardModel,
    Integrand,
    InfiniteEnergyError,
    MinorsLayout,
    PolySubgradient,
    SourceConditionParams,
    blob_image,
    bregman_classical,
    bregman_poly,
    detsq_energy,
    energy,
    field_from_function,
    identity_field,
    pairing,
    poly_subgradient,
    pq_energy,
    random_blobs,
    random_smooth_field,
    rotation_energy,
    rotation_field,
    source_condition_residual,
    verify_subgradient,
    warp,
    zero_subgradient,
)


def quadratic_gradient_density():
    """|A|^2 on the order-1 block: convex with a purely classical certificate."""
    layout = MinorsLayout(2, 2)

    def value_fn(x, u, xi):
        return np.sum(xi[..., :4] ** 2, axis=-1)

    def grad_fn(x, u, xi):
        g = np.zeros_like(xi)
        g[..., :4] = 2.0 * xi[..., :4]
        return np.zeros(xi.shape[:-1] + (2,)), g

    return Integrand(layout, "grad-sq", value_fn, grad_fn)


def stretch_field(grid, sx, sy):
    return field_from_function(
        grid, lambda p: np.stack([sx * p[..., 0], sy * p[..., 1]], axis=-1)
    )


class TestPolySubgradient:
    def test_detsq_at_identity(self, unit_grid):
        w = poly_subgradient(detsq_energy(), identity_field(unit_grid))
        assert np.all(w.u0 == 0.0)
        assert np.all(w.u1 == 0.0)
        assert np.allclose(w.v2, 2.0, atol=0.0)  # density slope 2 * det = 2
        assert w.base_energy == pytest.approx(1.0, abs=1e-14)

    def test_pq_at_identity(self, unit_grid):
        w = poly_subgradient(pq_energy(4.0, 2.0), identity_field(unit_grid))
        assert np.allclose(w.u1, 2.0 * np.eye(2), atol=1e-14)
        assert np.allclose(w.v2, 1.0, atol=1e-14)

    def test_classical_flag(self, unit_grid):
        w = poly_subgradient(detsq_energy(), identity_field(unit_grid))
        assert not w.is_classical
        w0 = zero_subgradient(detsq_energy(), identity_field(unit_grid))
        assert w0.is_classical

    def test_callable_matches_pairing(self, unit_grid):
        w = poly_subgradient(pq_energy(4.0, 2.0), identity_field(unit_grid))
        v = random_smooth_field(unit_grid, seed=3)
        assert w(v) == pairing(w, v)

    def test_shape_validation(self, unit_grid):
        base = identity_field(unit_grid)
        with pytest.raises(ValueError):
            PolySubgradient(
                np.zeros((2, 2, 2)), np.zeros(unit_grid.cell_shape + (2, 2)),
                np.zeros(unit_grid.cell_shape + (1,)), base, 0.0,
            )

    def test_unbounded_gradient_rejected(self, unit_grid):
        from polyreg import UnboundedGradientError

        layout = MinorsLayout(2, 2)

        def bad_grad(x, u, xi):
            g = np.zeros_like(xi)
            g[..., 4] = np.inf
            return np.zeros(xi.shape[:-1] + (2,)), g

        F = Integrand(layout, "steep", lambda x, u, xi: xi[..., 4] ** 2, bad_grad)
        with pytest.raises(UnboundedGradientError):
            poly_subgradient(F, identity_field(unit_grid))


class TestBregmanPoly:
    def test_reflexivity(self, unit_grid):
        for make in (detsq_energy, lambda: pq_energy(4.0, 2.0), lambda: rotation_energy(4.0)):
            F = make()
            u = random_smooth_field(unit_grid, seed=8, amplitude=0.5)
            w = poly_subgradient(F, u)
            assert abs(bregman_poly(F, u, u, w)) < 1e-12

    def test_detsq_closed_form(self, unit_grid):
        # base identity, comparison diag(2, 1): 4 - 1 - 2 (2 - 1) = 1
        F = detsq_energy()
        u = identity_field(unit_grid)
        w = poly_subgradient(F, u)
        v = stretch_field(unit_grid, 2.0, 1.0)
        assert bregman_poly(F, v, u, w) == pytest.approx(1.0, rel=1e-12)

    def test_detsq_closed_form_random_pairs(self, unit_grid):
        # D = integral of (det grad v - det grad u)^2 for the det-square density
        F = detsq_energy()
        area = unit_grid.cell_area
        act = unit_grid.active_cells
        for k in range(50):
            u = random_smooth_field(unit_grid, seed=[100, k], amplitude=0.8)
            v = random_smooth_field(unit_grid, seed=[200, k], amplitude=0.8)
            w = poly_subgradient(F, u)
            det_u = u.jacobians[..., 0, 0] * u.jacobians[..., 1, 1] \
                - u.jacobians[..., 0, 1] * u.jacobians[..., 1, 0]
            det_v = v.jacobians[..., 0, 0] * v.jacobians[..., 1, 1] \
                - v.jacobians[..., 0, 1] * v.jacobians[..., 1, 0]
            oracle = area * np.sum(((det_v - det_u)[act]) ** 2)
            got = bregman_poly(F, v, u, w)
            assert abs(got - oracle) <= 1e-10 * max(1.0, abs(oracle))

    def test_nonnegativity_sampled(self, unit_grid):
        F = pq_energy(4.0, 2.0)
        u = random_smooth_field(unit_grid, seed=31, amplitude=0.4)
        w = poly_subgradient(F, u)
        for k in range(200):
            v = random_smooth_field(unit_grid, seed=[300, k], amplitude=1.0)
            assert bregman_poly(F, v, u, w) >= -1e-8

    def test_rotation_zero_certificate(self, disk_grid):
        # at a rotation the zero functional certifies: D = R(v) - R(rotation) >= 0
        F = rotation_energy(4.0)
        u = rotation_field(0.6, disk_grid)
        w0 = zero_subgradient(F, u)
        for k in range(50):
            v = random_smooth_field(disk_grid, seed=[400, k], amplitude=1.0)
            d = bregman_poly(F, v, u, w0)
            assert d >= -1e-10
            assert d == pytest.approx(
                energy(v, F).value - energy(u, F).value, rel=1e-12, abs=1e-12
            )

    def test_infinite_energy_raises(self, unit_grid):
        layout = MinorsLayout(2, 2)
        F = Integrand(
            layout, "wall",
            lambda x, u, xi: np.where(xi[..., 4] > 0, xi[..., 4] ** 2, np.inf),
            lambda x, u, xi: (np.zeros(xi.shape[:-1] + (2,)), np.zeros_like(xi)),
        )
        u = identity_field(unit_grid)
        w = zero_subgradient(F, u)
        flipped = stretch_field(unit_grid, -1.0, 1.0)
        with pytest.raises(InfiniteEnergyError):
            bregman_poly(F, flipped, u, w)


class TestBregmanClassical:
    def test_rejects_nonclassical(self, unit_grid):
        F = detsq_energy()
        w = poly_subgradient(F, identity_field(unit_grid))
        with pytest.raises(ValueError):
            bregman_classical(F, identity_field(unit_grid), identity_field(unit_grid), w)

    def test_quadratic_density_exact_quadratic_distance(self, unit_grid):
        # |A|^2 density: D = integral of |grad v - grad u|^2, exactly
        F = quadratic_gradient_density()
        area = unit_grid.cell_area
        act = unit_grid.active_cells
        for k in range(25):
            u = random_smooth_field(unit_grid, seed=[500, k], amplitude=0.7)
            v = random_smooth_field(unit_grid, seed=[600, k], amplitude=0.7)
            w = poly_subgradient(F, u)
            assert w.is_classical
            oracle = area * np.sum(((v.jacobians - u.jacobians)[act]) ** 2)
            got = bregman_classical(F, v, u, w)
            assert abs(got - oracle) <= 1e-10 * max(1.0, oracle)

    def test_bitwise_reduction_to_poly(self, unit_grid):
        F = quadratic_gradient_density()
        u = random_smooth_field(unit_grid, seed=51, amplitude=0.5)
        v = random_smooth_field(unit_grid, seed=52, amplitude=0.5)
        w = poly_subgradient(F, u)
        assert bregman_classical(F, v, u, w) == bregman_poly(F, v, u, w)

    def test_reflexivity(self, unit_grid):
        F = quadratic_gradient_density()
        u = random_smooth_field(unit_grid, seed=53)
        w = poly_subgradient(F, u)
        assert bregman_classical(F, u, u, w) == 0.0


class TestVerifySubgradient:
    @pytest.mark.parametrize("make_f", [detsq_energy, lambda: pq_energy(4.0, 2.0),
                                        lambda: rotation_energy(4.0)])
    def test_built_in_certificates_pass(self, make_f, unit_grid):
        F = make_f()
        base = random_smooth_field(unit_grid, seed=61, amplitude=0.5)
        w = poly_subgradient(F, base)
        report = verify_subgradient(F, w, trials=300, seed=7, radius=0.5)
        assert report.violations == 0
        assert report.worst_gap >= -1e-8

    def test_perturbed_certificate_fails(self, unit_grid):
        F = detsq_energy()
        w = poly_subgradient(F, identity_field(unit_grid))
        v2 = w.v2.copy()
        v2[3, 4, 0] += 1.0
        broken = PolySubgradient(w.u0, w.u1, v2, w.base_point, w.base_energy)
        report = verify_subgradient(F, broken, trials=300, seed=7, radius=0.5)
        assert report.violations > 0
        assert report.worst_gap < -1e-8

    def test_zero_trials_vacuous(self, unit_grid):
        F = detsq_energy()
        w = poly_subgradient(F, identity_field(unit_grid))
        report = verify_subgradient(F, w, trials=0, seed=7)
        assert report.trials == 0 and report.violations == 0

    def test_deterministic_in_seed(self, unit_grid):
        F = pq_energy(4.0, 2.0)
        w = poly_subgradient(F, identity_field(unit_grid))
        a = verify_subgradient(F, w, trials=64, seed=9)
        b = verify_subgradient(F, w, trials=64, seed=9)
        assert a == b


class TestSourceCondition:
    def setup_problem(self, disk_grid):
        F = rotation_energy(4.0)
        reference = blob_image(disk_grid, random_blobs(7))
        u_dagger = rotation_field(np.pi / 6, disk_grid)
        forward = ForwardModel(reference, warp(reference, u_dagger), 2.0)
        w0 = zero_subgradient(F, u_dagger)
        params = SourceConditionParams(beta1=0.5, beta2=1.0, rho=1e3, alpha_bar=0.05)
        return F, forward, u_dagger, w0, params

    def test_zero_certificate_always_holds(self, disk_grid):
        F, forward, u_dagger, w0, params = self.setup_problem(disk_grid)
        for k in range(50):
            bump = random_smooth_field(disk_grid, seed=[700, k], amplitude=0.04)
            u = u_dagger.with_values(0.95 * u_dagger.values + bump.values)
            resid = source_condition_residual(F, forward, w0, u_dagger, u, params)
            assert resid <= 1e-12

    def test_exact_solution_gives_zero(self, disk_grid):
        F, forward, u_dagger, w0, params = self.setup_problem(disk_grid)
        resid = source_condition_residual(F, forward, w0, u_dagger, u_dagger, params)
        assert resid == 0.0

    def test_params_validation(self):
        with pytest.raises(ValueError):
            SourceConditionParams(beta1=1.0, beta2=1.0, rho=1.0, alpha_bar=1.0)
        with pytest.raises(ValueError):
            SourceConditionParams(beta1=0.5, beta2=-1.0, rho=1.0, alpha_bar=1.0)
        params = SourceConditionParams(beta1=0.5, beta2=1.0, rho=1.0, alpha_bar=1.0)
        with pytest.raises(ValueError):
            params.check_sublevel(2.0)
        params.check_sublevel(0.5)
