import math

import numpy as np
import pytest

from fracflock.fvm1d import relative_drift
from fracflock.fvm2d import (
    ConservedField2D,
    Grid2D,
    apply_nonlocal_2d,
    build_nonlocal_operator_2d,
    fv_rhs_2d,
    godunov_flux_2d_x,
    godunov_flux_2d_y,
    project_initial_2d,
    solve_euler_2d,
    source_2d,
)
from fracflock.kernel import KernelSpec, influence, tail_mass_2d


def rho_example2(x, y):
    return (
        (math.pi / 3.0) ** 2
        * np.cos(math.pi * np.asarray(x) / 1.5)
        * np.cos(math.pi * np.asarray(y) / 1.5)
    )


C2 = 0.5 / math.sqrt(2.0)


def u_example2(x, y):
    return -C2 * np.sin(math.pi * np.asarray(x) / 1.5)


def v_example2(x, y):
    return -C2 * np.sin(math.pi * np.asarray(y) / 1.5)


class TestGodunovFlux2D:
    def test_both_positive_takes_left(self):
        w_l = (2.0, 1.0, 0.6)  # u = 0.5, v = 0.3
        w_r = (1.0, 0.25, 0.1)
        f = godunov_flux_2d_x(w_l, w_r)
        assert f[0] == pytest.approx(1.0)
        assert f[1] == pytest.approx(2.0 * 0.5**2)
        assert f[2] == pytest.approx(2.0 * 0.5 * 0.3)

    def test_rarefaction_gives_zero(self):
        f = godunov_flux_2d_x((2.0, -1.0, 0.5), (1.0, 0.25, 0.1))
        assert f == (0.0, 0.0, 0.0) or all(v == 0.0 for v in f)

    def test_both_nonpositive_takes_right(self):
        f = godunov_flux_2d_x((2.0, -1.0, 0.5), (1.0, -0.5, 0.2))
        assert f[0] == pytest.approx(-0.5)
        assert f[1] == pytest.approx(1.0 * 0.5**2)
        assert f[2] == pytest.approx(-0.5 * 0.2)

    def test_balanced_collision_averages(self):
        f = godunov_flux_2d_x((1.0, 1.0, 0.4), (1.0, -1.0, -0.2))
        assert f[0] == pytest.approx(0.0)
        assert f[1] == pytest.approx(1.0)
        assert f[2] == pytest.approx(0.5 * (1.0 * 0.4 + (-1.0) * (-0.2)))

    def test_y_flux_is_role_swapped_x_flux(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            rho_l, rho_r = rng.uniform(0.0, 2.0, 2)
            m = rng.normal(0, 1, 4)
            w_l = (rho_l, m[0], m[1])
            w_r = (rho_r, m[2], m[3])
            fy = godunov_flux_2d_y(w_l, w_r)
            swapped_l = (rho_l, m[1], m[0])
            swapped_r = (rho_r, m[3], m[2])
            fx = godunov_flux_2d_x(swapped_l, swapped_r)
            assert fy[0] == fx[0]
            assert fy[1] == fx[2]
            assert fy[2] == fx[1]


class TestOperator2D:
    def test_half_offset_corner_weight(self):
        grid = Grid2D(0.0, 1.0, 0.0, 2.0, 8, 8)
        spec = KernelSpec(0.7, 2)
        op = build_nonlocal_operator_2d(grid, spec)
        r11 = math.hypot(grid.dx / 2.0, grid.dy / 2.0)
        assert op.symbol[1, 1] == pytest.approx(
            grid.dx * grid.dy * influence(spec, r11), rel=1e-13
        )

    def test_mixed_offset_weights(self):
        grid = Grid2D(0.0, 1.0, 0.0, 1.0, 8, 8)
        spec = KernelSpec(1.1, 2)
        op = build_nonlocal_operator_2d(grid, spec)
        area = grid.dx * grid.dy
        r31 = math.hypot(3 * grid.dx, grid.dy / 2.0)
        r13 = math.hypot(grid.dx / 2.0, 3 * grid.dy)
        r23 = math.hypot(2 * grid.dx, 3 * grid.dy)
        assert op.symbol[3, 1] == pytest.approx(area * influence(spec, r31), rel=1e-13)
        assert op.symbol[1, 3] == pytest.approx(area * influence(spec, r13), rel=1e-13)
        assert op.symbol[2, 3] == pytest.approx(area * influence(spec, r23), rel=1e-13)

    def test_axis_offsets_uncoupled(self):
        op = build_nonlocal_operator_2d(
            Grid2D(0.0, 1.0, 0.0, 1.0, 8, 8), KernelSpec(0.5, 2)
        )
        assert np.all(op.symbol[1:, 0] == 0.0)
        assert np.all(op.symbol[0, 1:] == 0.0)

    def test_symbol_symmetric_on_square_cells(self):
        op = build_nonlocal_operator_2d(
            Grid2D(0.0, 1.0, 0.0, 1.0, 12, 12), KernelSpec(0.9, 2)
        )
        np.testing.assert_allclose(op.symbol, op.symbol.T, rtol=1e-14)

    def test_diagonal_balances_weights(self):
        grid = Grid2D(0.0, 1.0, 0.0, 1.0, 6, 6)
        spec = KernelSpec(0.8, 2)
        op = build_nonlocal_operator_2d(grid, spec, 3, 3)
        acc = 0.0
        for k in range(1, 4):
            for l in range(1, 4):
                rx = grid.dx / 2.0 if k == 1 else k * grid.dx
                ry = grid.dy / 2.0 if l == 1 else l * grid.dy
                acc += grid.dx * grid.dy * influence(spec, math.hypot(rx, ry))
        tail = tail_mass_2d(spec, (3 * grid.dx, 3 * grid.dy))
        assert op.diagonal == pytest.approx(-4.0 * (acc + tail), rel=1e-12)

    def test_ghost_corner_present_for_small_truncation(self):
        grid = Grid2D(0.0, 1.0, 0.0, 1.0, 8, 8)
        spec = KernelSpec(0.5, 2)
        op = build_nonlocal_operator_2d(grid, spec, 2, 3)
        assert op.symbol[3, 4] == pytest.approx(
            tail_mass_2d(spec, (2 * grid.dx, 3 * grid.dy)), rel=1e-12
        )

    def test_dense_matrix_symmetric(self):
        op = build_nonlocal_operator_2d(
            Grid2D(0.0, 1.0, 0.0, 1.0, 5, 4), KernelSpec(1.3, 2)
        )
        g = op.dense()
        np.testing.assert_array_equal(g, g.T)


class TestApplyNonlocal2D:
    def test_zero_maps_to_zero(self):
        op = build_nonlocal_operator_2d(
            Grid2D(0.0, 1.0, 0.0, 1.0, 8, 8), KernelSpec(0.5, 2)
        )
        assert np.all(apply_nonlocal_2d(op, np.zeros((8, 8))) == 0.0)

    @pytest.mark.parametrize("k,l", [(8, 8), (16, 16), (8, 12)])
    def test_matches_dense_bttb_multiply(self, k, l):
        rng = np.random.default_rng(k + l)
        grid = Grid2D(-0.75, 0.75, -0.75, 0.75, k, l)
        op = build_nonlocal_operator_2d(grid, KernelSpec(1.2, 2))
        field = rng.normal(0, 1, (k, l))
        # dense() uses x-fastest ordering; ravel the field accordingly
        dense = (op.dense() @ field.ravel(order="F")).reshape((l, k)).T
        fast = apply_nonlocal_2d(op, field)
        rel = np.abs(fast - dense).max() / np.abs(dense).max()
        assert rel <= 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(9)
        op = build_nonlocal_operator_2d(
            Grid2D(0.0, 1.0, 0.0, 1.0, 16, 16), KernelSpec(0.6, 2)
        )
        x, y = rng.normal(0, 1, (2, 16, 16))
        lhs = apply_nonlocal_2d(op, 1.5 * x - 2.0 * y)
        rhs = 1.5 * apply_nonlocal_2d(op, x) - 2.0 * apply_nonlocal_2d(op, y)
        assert np.abs(lhs - rhs).max() <= 1e-12 * max(np.abs(lhs).max(), 1.0)


def quadrature_transcription_2d(rho, m, grid, spec, khat, lhat):
    """Quadruple-loop transcription of the 2D kernel quadrature with the
    half-offset first-row/column weights and the corner ghost tail."""
    k, l = grid.k, grid.l
    dx, dy = grid.dx, grid.dy
    tail = tail_mass_2d(spec, (khat * dx, lhat * dy))

    def phi_kl(kk, ll):
        rx = dx / 2.0 if kk == 1 else kk * dx
        ry = dy / 2.0 if ll == 1 else ll * dy
        return influence(spec, math.hypot(rx, ry))

    def cell(arr, i, j):
        return arr[i, j] if 0 <= i < k and 0 <= j < l else 0.0

    out = np.zeros((k, l))
    for i in range(k):
        for j in range(l):
            acc = 0.0
            for kk in range(1, khat + 1):
                for ll in range(1, lhat + 1):
                    mirrors = (
                        cell(m, i + kk, j + ll)
                        + cell(m, i - kk, j + ll)
                        + cell(m, i + kk, j - ll)
                        + cell(m, i - kk, j - ll)
                        - 4.0 * m[i, j]
                    )
                    acc += dx * dx * dy * dy * phi_kl(kk, ll) * mirrors
            ghosts = (
                cell(m, i + khat + 1, j + lhat + 1)
                + cell(m, i - khat - 1, j + lhat + 1)
                + cell(m, i + khat + 1, j - lhat - 1)
                + cell(m, i - khat - 1, j - lhat - 1)
                - 4.0 * m[i, j]
            )
            acc += dx * dy * tail * ghosts
            out[i, j] = rho[i, j] * acc
    return out


class TestSource2D:
    def test_constant_velocity_state_has_zero_source(self):
        grid = Grid2D(0.0, 1.0, 0.0, 1.0, 12, 12)
        op = build_nonlocal_operator_2d(grid, KernelSpec(0.9, 2))
        rng = np.random.default_rng(3)
        rho = rng.uniform(0.5, 2.0, (12, 12))
        state = ConservedField2D(rho, 0.4 * rho, -0.3 * rho)
        s1, s2 = source_2d(state, op)
        scale = grid.dx * grid.dy * np.abs(
            rho * apply_nonlocal_2d(op, state.m1)
        ).max()
        assert np.abs(s1).max() <= 1e-12 * max(scale, 1e-30)
        assert np.abs(s2).max() <= 1e-12 * max(scale, 1e-30)

    def test_sources_sum_to_zero(self):
        grid = Grid2D(-1.0, 1.0, -1.0, 1.0, 16, 16)
        op = build_nonlocal_operator_2d(grid, KernelSpec(1.2, 2))
        rng = np.random.default_rng(4)
        state = ConservedField2D(
            rng.uniform(0.0, 2.0, (16, 16)),
            rng.normal(0, 1, (16, 16)),
            rng.normal(0, 1, (16, 16)),
        )
        s1, s2 = source_2d(state, op)
        scale = grid.dx * grid.dy * np.abs(
            state.rho * apply_nonlocal_2d(op, state.m1)
        ).max()
        assert abs(s1.sum()) <= 1e-12 * max(scale, 1.0) * 256
        assert abs(s2.sum()) <= 1e-12 * max(scale, 1.0) * 256

    @pytest.mark.parametrize("khat,lhat", [(2, 2), (4, 4), (2, 3)])
    def test_matches_quadruple_loop_transcription(self, khat, lhat):
        grid = Grid2D(0.0, 1.0, 0.0, 1.5, 4, 4)
        spec = KernelSpec(0.5, 2)
        op = build_nonlocal_operator_2d(grid, spec, khat, lhat)
        rng = np.random.default_rng(khat * 10 + lhat)
        rho = rng.uniform(0.1, 2.0, (4, 4))
        m1 = rng.normal(0, 1, (4, 4))
        m2 = rng.normal(0, 1, (4, 4))
        state = ConservedField2D(rho, m1, m2)
        s1, s2 = source_2d(state, op)
        oracle1 = quadrature_transcription_2d(rho, m1, grid, spec, khat, lhat)
        oracle1 -= quadrature_transcription_2d(m1, rho, grid, spec, khat, lhat)
        oracle2 = quadrature_transcription_2d(rho, m2, grid, spec, khat, lhat)
        oracle2 -= quadrature_transcription_2d(m2, rho, grid, spec, khat, lhat)
        np.testing.assert_allclose(s1, oracle1, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(s2, oracle2, rtol=1e-12, atol=1e-15)


class TestSolveEuler2D:
    def test_zero_velocity_keeps_density_frozen(self):
        grid = Grid2D(-0.75, 0.75, -0.75, 0.75, 16, 16)
        zero = lambda x, y: np.zeros(np.broadcast(x, y).shape)
        sol = solve_euler_2d(
            rho_example2, zero, zero, grid, KernelSpec(0.5, 2), None, 0.5, [0.0, 0.5]
        )
        np.testing.assert_array_equal(sol.field_at(0.5).rho, sol.field_at(0.0).rho)
        assert np.all(sol.field_at(0.5).m1 == 0.0)

    def test_conservation_mass_and_both_momenta(self):
        grid = Grid2D(-0.75, 0.75, -0.75, 0.75, 32, 32)
        sol = solve_euler_2d(
            rho_example2, u_example2, v_example2, grid, KernelSpec(0.5, 2),
            None, 2.0, [0.5, 1.0, 2.0],
        )
        area = grid.dx * grid.dy
        assert relative_drift(sol.mass_history) <= 1e-12
        mx_scale = float(np.abs(sol.fields[0].m1).sum() * area)
        my_scale = float(np.abs(sol.fields[0].m2).sum() * area)
        assert relative_drift(sol.momentum_x_history, scale=mx_scale) <= 1e-12
        assert relative_drift(sol.momentum_y_history, scale=my_scale) <= 1e-12

    def test_solution_respects_xy_exchange_symmetry(self):
        grid = Grid2D(-0.75, 0.75, -0.75, 0.75, 24, 24)
        sol = solve_euler_2d(
            rho_example2, u_example2, v_example2, grid, KernelSpec(0.8, 2),
            None, 1.0, [0.5, 1.0],
        )
        for t in (0.5, 1.0):
            f = sol.field_at(t)
            np.testing.assert_allclose(f.rho, f.rho.T, rtol=0, atol=1e-10)
            u, v = f.velocity()
            mask = f.rho > 1e-3 * f.rho.max()
            sym = np.abs(u - v.T)[mask & mask.T]
            assert sym.max() <= 1e-10

    def test_non_unit_mass_rejected(self):
        grid = Grid2D(-0.75, 0.75, -0.75, 0.75, 8, 8)
        with pytest.raises(ValueError):
            solve_euler_2d(
                lambda x, y: 3.0 * rho_example2(x, y), u_example2, v_example2,
                grid, KernelSpec(0.5, 2), None, 0.1, [0.1],
            )

    def test_projection_unit_mass(self):
        grid = Grid2D(-0.75, 0.75, -0.75, 0.75, 64, 64)
        state = project_initial_2d(rho_example2, u_example2, v_example2, grid)
        assert state.rho.sum() * grid.dx * grid.dy == pytest.approx(1.0, abs=1e-10)
