"""Peng-Robinson fluid model: frozen oracles, identities, domain guards."""

import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from porogas.eos import (
    EosDomainError,
    FluidEos,
    InvalidParameterError,
    R_GAS,
    RockProps,
    acentric_slope,
    chemical_potential,
    eos_from_critical,
    helmholtz_f,
    mobility,
    pressure_peng,
    stab_coeff,
)

# methane at 330 K
TC, PC, OMEGA, T = 190.56, 45.99e5, 0.011, 330.0


@pytest.fixture(scope="module")
def methane():
    return eos_from_critical(TC, PC, OMEGA, T)


@pytest.fixture(scope="module")
def rock():
    return RockProps(
        alpha=0.3, N=1e11, lame_mu=1e8, lame_lambda=1e11,
        phi_ref=0.1, kappa0=1e-13, visc=1e-5,
    )


# 50-digit-arithmetic reference values, frozen
M_REF = 0.39157219968
B_REF = 0.19164575008585743
BETA_REF = 2.6802920401525772e-05
F100_REF = 1262379.0617654632
MU100_REF = 15355.874632085976
MU150_REF = 16456.795842712625
P100_REF = 273208.40144313447
STAB200_REF = 13.867136740477537


class TestParameters:
    def test_slope_low_branch(self, methane):
        assert methane.m == pytest.approx(M_REF, rel=1e-13)

    def test_slope_high_branch(self):
        # above 0.49 the quartic-fit branch applies
        w = 0.6
        expect = 0.379642 + 1.485030 * w - 0.164423 * w**2 + 0.016666 * w**3
        assert acentric_slope(w) == pytest.approx(expect, rel=1e-14)
        low = 0.37464 + 1.54226 * w - 0.26992 * w**2
        assert acentric_slope(w) != pytest.approx(low, rel=1e-6)

    def test_attraction_and_covolume(self, methane):
        assert methane.b == pytest.approx(B_REF, rel=1e-13)
        assert methane.beta == pytest.approx(BETA_REF, rel=1e-13)

    def test_gas_constant(self):
        assert R_GAS == 8.314462618

    def test_invalid_critical_inputs(self):
        with pytest.raises(InvalidParameterError):
            eos_from_critical(-1.0, PC, OMEGA, T)
        with pytest.raises(InvalidParameterError):
            eos_from_critical(TC, 0.0, OMEGA, T)
        with pytest.raises(InvalidParameterError):
            FluidEos(R=R_GAS, T=T, Tc=TC, Pc=PC, omega=OMEGA, m=0.39, b=0.19, beta=-1.0)


class TestFrozenValues:
    def test_free_energy(self, methane):
        assert helmholtz_f(methane, 100.0) == pytest.approx(F100_REF, rel=1e-13)

    def test_chemical_potential(self, methane):
        assert chemical_potential(methane, 100.0) == pytest.approx(MU100_REF, rel=1e-13)
        assert chemical_potential(methane, 150.0) == pytest.approx(MU150_REF, rel=1e-13)

    def test_pressure(self, methane):
        assert pressure_peng(methane, 100.0) == pytest.approx(P100_REF, rel=1e-13)

    def test_stab_coeff(self, methane):
        assert stab_coeff(methane, 200.0) == pytest.approx(STAB200_REF, rel=1e-13)

    def test_vectorized_matches_scalar(self, methane):
        c = np.array([100.0, 150.0, 200.0])
        for fn in (helmholtz_f, chemical_potential, pressure_peng, stab_coeff):
            vec = fn(methane, c)
            assert vec.shape == (3,)
            for i, ci in enumerate(c):
                assert vec[i] == fn(methane, ci)


class TestIdentities:
    def test_pressure_identity_sampled(self, methane):
        # p = c mu - f across the admissible range
        rng = np.random.default_rng(7)
        c = rng.uniform(1.0, 0.999 / methane.beta, size=1000)
        lhs = pressure_peng(methane, c)
        rhs = c * chemical_potential(methane, c) - helmholtz_f(methane, c)
        assert np.allclose(lhs, rhs, rtol=1e-10, atol=0.0)

    def test_mu_is_derivative_of_f(self, methane):
        # central finite difference of f matches the closed-form mu
        rng = np.random.default_rng(11)
        c = rng.uniform(10.0, 0.99 / methane.beta, size=1000)
        # truncation error grows like the third derivative near 1/beta, so the
        # step shrinks with the distance to the singularity
        h = 1e-4 * np.minimum(c, 1.0 / methane.beta - c)
        fd = (helmholtz_f(methane, c + h) - helmholtz_f(methane, c - h)) / (2.0 * h)
        assert np.allclose(fd, chemical_potential(methane, c), rtol=1e-6, atol=0.0)

    def test_stab_coeff_is_convex_curvature(self, methane):
        # RT/(c(1-beta c)^2) equals d2/dc2 of the ideal+repulsive part
        RT = methane.R * methane.T

        def f_conv(c):
            return c * RT * np.log(c) - c * RT * np.log(1.0 - methane.beta * c)

        for c in (50.0, 200.0, 1000.0):
            h = 1e-3 * c
            fd2 = (f_conv(c + h) - 2.0 * f_conv(c) + f_conv(c - h)) / h**2
            assert stab_coeff(methane, c) == pytest.approx(fd2, rel=1e-5)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=1e-3, max_value=0.999))
    def test_pressure_identity_property(self, methane, frac):
        c = frac / methane.beta
        lhs = pressure_peng(methane, c)
        rhs = c * chemical_potential(methane, c) - helmholtz_f(methane, c)
        scale = max(abs(lhs), abs(rhs), 1.0)
        assert abs(lhs - rhs) <= 1e-10 * scale

    @settings(max_examples=200, deadline=None)
    @given(st.floats(min_value=1e-3, max_value=0.999))
    def test_stab_coeff_positive(self, methane, frac):
        c = frac / methane.beta
        assert stab_coeff(methane, c) > 0.0


class TestDomainGuards:
    @pytest.mark.parametrize("bad", [0.0, -5.0])
    def test_nonpositive_density(self, methane, bad):
        for fn in (helmholtz_f, chemical_potential, pressure_peng, stab_coeff):
            with pytest.raises(EosDomainError):
                fn(methane, bad)

    def test_density_above_covolume_limit(self, methane):
        # note 1/beta itself can round to beta*c < 1 and is then admissible
        for bad in (1.0000001 / methane.beta, 1.5 / methane.beta):
            with pytest.raises(EosDomainError):
                chemical_potential(methane, bad)

    def test_array_with_one_bad_entry(self, methane):
        with pytest.raises(EosDomainError):
            helmholtz_f(methane, np.array([100.0, -1.0, 200.0]))


class TestMobility:
    def test_reference_point(self, rock):
        # at phi = phi_ref the law reduces to kappa0/visc
        assert mobility(rock, 0.1) == pytest.approx(1e-13 / 1e-5, rel=1e-14)

    def test_frozen_value(self, rock):
        # phi = 0.2: (0.2/0.1)^3 (0.9/0.8)^2 * 1e-8 = 1.0125e-7
        assert mobility(rock, 0.2) == pytest.approx(1.0125e-7, rel=1e-13)

    def test_kappa_override_scales_linearly(self, rock):
        base = mobility(rock, 0.2)
        assert mobility(rock, 0.2, kappa0=2e-13) == pytest.approx(2.0 * base, rel=1e-14)

    def test_monotone_in_phi(self, rock):
        phis = np.linspace(0.05, 0.9, 40)
        vals = mobility(rock, phis)
        assert np.all(np.diff(vals) > 0.0)

    def test_porosity_domain(self, rock):
        for bad in (0.0, 1.0, -0.2, 1.3):
            with pytest.raises(EosDomainError):
                mobility(rock, bad)

    def test_invalid_rock(self):
        with pytest.raises(InvalidParameterError):
            RockProps(alpha=0.0, N=1e11, lame_mu=1e8, lame_lambda=1e11,
                      phi_ref=0.1, kappa0=1e-13, visc=1e-5)


def test_identity_suite_runtime(methane):
    # 1e3 random samples through all three functions, well under a second
    rng = np.random.default_rng(3)
    c = rng.uniform(1.0, 0.999 / methane.beta, size=1000)
    t0 = time.perf_counter()
    p = pressure_peng(methane, c)
    mu = chemical_potential(methane, c)
    f = helmholtz_f(methane, c)
    dt = time.perf_counter() - t0
    assert np.allclose(p, c * mu - f, rtol=1e-10)
    assert dt < 1.0
