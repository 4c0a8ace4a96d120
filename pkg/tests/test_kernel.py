import math

import numpy as np
import pytest
from mpmath import mp
from scipy.integrate import quad

from fracflock.kernel import (
    KernelSpec,
    gamma_lanczos,
    influence,
    normalization_constant,
    tail_mass_1d,
    tail_mass_2d,
)

mp.dps = 30


def constant_oracle(alpha, dim):
    """Normalization constant from an independent high-precision gamma."""
    a = mp.mpf(repr(alpha))
    n = mp.mpf(dim)
    val = a * mp.gamma((n + a) / 2) / (2 * mp.pi ** (a + n / 2) * mp.gamma(1 - a / 2))
    return float(val)


class TestGamma:
    def test_accuracy_on_unit_interval_and_beyond(self):
        # >= 12 significant digits everywhere on (0, 3]
        for x in np.linspace(0.01, 3.0, 400):
            exact = float(mp.gamma(mp.mpf(repr(float(x)))))
            assert gamma_lanczos(float(x)) == pytest.approx(exact, rel=1e-12)

    def test_integer_values(self):
        assert gamma_lanczos(1.0) == pytest.approx(1.0, rel=1e-13)
        assert gamma_lanczos(5.0) == pytest.approx(24.0, rel=1e-13)

    def test_pole_rejected(self):
        with pytest.raises(ValueError):
            gamma_lanczos(0.0)


class TestKernelSpec:
    @pytest.mark.parametrize("alpha", [0.0, -0.3, 2.0, 2.5])
    def test_alpha_out_of_range_rejected(self, alpha):
        with pytest.raises(ValueError):
            KernelSpec(alpha, 1)

    @pytest.mark.parametrize("dim", [0, 3, -1])
    def test_bad_dim_rejected(self, dim):
        with pytest.raises(ValueError):
            KernelSpec(0.5, dim)


class TestNormalizationConstant:
    def test_alpha_one_1d_closed_form(self):
        # alpha=1, dim=1 collapses to 1/(2 pi^2)
        spec = KernelSpec(1.0, 1)
        assert normalization_constant(spec) == pytest.approx(
            1.0 / (2.0 * math.pi**2), rel=1e-13
        )
        assert normalization_constant(spec) == pytest.approx(0.050660592, rel=1e-8)

    def test_alpha_half_1d_against_gamma_oracle(self):
        spec = KernelSpec(0.5, 1)
        assert normalization_constant(spec) == pytest.approx(
            constant_oracle(0.5, 1), rel=1e-12
        )
        # second, independent closed form: Gamma(0.75) cancels, leaving 1/(4 pi)
        assert normalization_constant(spec) == pytest.approx(
            1.0 / (4.0 * math.pi), rel=1e-13
        )

    def test_vanishes_linearly_near_alpha_two(self):
        # Gamma(1 - alpha/2) in the denominator blows up, so the constant
        # vanishes like (2 - alpha); cross-checked against the exact formula.
        for eps in (1e-4, 1e-6, 1e-8):
            spec = KernelSpec(2.0 - eps, 1)
            value = normalization_constant(spec)
            assert 0.0 < value < 10.0 * eps
            assert value == pytest.approx(constant_oracle(2.0 - eps, 1), rel=1e-10)

    @pytest.mark.parametrize("dim", [1, 2])
    def test_continuous_and_positive(self, dim):
        alphas = np.linspace(0.02, 1.98, 50)
        values = [normalization_constant(KernelSpec(float(a), dim)) for a in alphas]
        assert all(v > 0.0 for v in values)
        for a, v in zip(alphas, values):
            assert v == pytest.approx(constant_oracle(float(a), dim), rel=1e-12)


class TestInfluence:
    def test_unit_distance_returns_constant(self):
        spec = KernelSpec(0.7, 1)
        assert influence(spec, 1.0) == normalization_constant(spec)

    def test_value_at_two(self):
        spec = KernelSpec(0.5, 1)
        expected = constant_oracle(0.5, 1) * 2.0**-1.5
        assert influence(spec, 2.0) == pytest.approx(expected, rel=1e-12)
        assert influence(spec, 2.0) == pytest.approx(0.028134884879909565, rel=1e-12)

    def test_strictly_decreasing(self):
        spec = KernelSpec(1.3, 2)
        radii = np.geomspace(1e-3, 1e3, 50)
        vals = [influence(spec, float(r)) for r in radii]
        assert all(a > b > 0.0 for a, b in zip(vals, vals[1:]))

    def test_scaling_law(self):
        rng = np.random.default_rng(7)
        for alpha, dim in [(0.3, 1), (0.5, 2), (1.2, 1), (1.7, 2)]:
            spec = KernelSpec(alpha, dim)
            for _ in range(20):
                r = float(rng.uniform(0.05, 5.0))
                lam = float(rng.uniform(0.1, 10.0))
                expected = lam ** -(dim + alpha) * influence(spec, r)
                assert influence(spec, lam * r) == pytest.approx(expected, rel=1e-13)

    def test_nonpositive_distance_rejected(self):
        spec = KernelSpec(0.5, 1)
        for r in (0.0, -1.0):
            with pytest.raises(ValueError):
                influence(spec, r)


class TestTailMass1D:
    def test_alpha_one_unit_cutoff(self):
        spec = KernelSpec(1.0, 1)
        assert tail_mass_1d(spec, 1.0) == pytest.approx(
            normalization_constant(spec), rel=1e-13
        )

    def test_alpha_half_cutoff_half(self):
        spec = KernelSpec(0.5, 1)
        expected = constant_oracle(0.5, 1) * 0.5**-0.5 / 0.5
        assert tail_mass_1d(spec, 0.5) == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("alpha", [0.3, 0.5, 1.2, 1.7])
    @pytest.mark.parametrize("cutoff", [0.25, 1.0, 3.0])
    def test_matches_numerical_quadrature(self, alpha, cutoff):
        spec = KernelSpec(alpha, 1)
        c = normalization_constant(spec)
        # integrate the kernel itself out to 1e6, add the analytic remainder
        num, _ = quad(
            lambda z: c * z ** -(1.0 + alpha), cutoff, 1e6, epsabs=0.0, epsrel=1e-12,
            limit=400,
        )
        num += c * 1e6**-alpha / alpha
        assert tail_mass_1d(spec, cutoff) == pytest.approx(num, rel=1e-8)

    def test_dimension_guard(self):
        with pytest.raises(ValueError):
            tail_mass_1d(KernelSpec(0.5, 2), 1.0)


def brute_force_tail_2d(spec, wx, wy, radius=1e3, nr=4000, nt=2000):
    """Riemann sum over the truncated quarter disc, minus the box, plus the
    analytic remainder beyond the disc."""
    c = normalization_constant(spec)
    redges = np.geomspace(min(wx, wy) * 0.999, radius, nr + 1)
    rmid = 0.5 * (redges[1:] + redges[:-1])
    dr = np.diff(redges)
    tedges = np.linspace(0.0, math.pi / 2.0, nt + 1)
    tmid = 0.5 * (tedges[1:] + tedges[:-1])
    dt = np.diff(tedges)
    r, t = np.meshgrid(rmid, tmid, indexing="ij")
    x, y = r * np.cos(t), r * np.sin(t)
    inside_box = (x <= wx) & (y <= wy)
    phi = c * r ** -(2.0 + spec.alpha)
    area = (r * dr[:, None]) * dt[None, :]
    total = float(np.sum(np.where(inside_box, 0.0, phi * area)))
    total += (math.pi / 2.0) * c * radius**-spec.alpha / spec.alpha
    return total


class TestTailMass2D:
    def test_symmetric_in_half_widths(self):
        spec = KernelSpec(0.8, 2)
        assert tail_mass_2d(spec, (0.4, 1.1)) == pytest.approx(
            tail_mass_2d(spec, (1.1, 0.4)), rel=1e-12
        )

    def test_monotone_in_box_size(self):
        spec = KernelSpec(0.8, 2)
        small = tail_mass_2d(spec, (0.5, 0.5))
        large = tail_mass_2d(spec, (0.8, 0.8))
        assert large < small

    def test_against_brute_force_summation(self):
        spec = KernelSpec(0.5, 2)
        brute = brute_force_tail_2d(spec, 0.75, 0.75)
        assert tail_mass_2d(spec, (0.75, 0.75)) == pytest.approx(brute, rel=1e-4)

    @pytest.mark.parametrize("alpha,box", [(1.2, (0.6, 1.4)), (1.7, (1.0, 1.0))])
    def test_more_brute_force_cases(self, alpha, box):
        spec = KernelSpec(alpha, 2)
        brute = brute_force_tail_2d(spec, *box)
        assert tail_mass_2d(spec, box) == pytest.approx(brute, rel=1e-4)

    def test_dimension_and_argument_guards(self):
        with pytest.raises(ValueError):
            tail_mass_2d(KernelSpec(0.5, 1), (1.0, 1.0))
        with pytest.raises(ValueError):
            tail_mass_2d(KernelSpec(0.5, 2), (0.0, 1.0))
