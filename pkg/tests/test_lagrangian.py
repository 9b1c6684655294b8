import numpy as np
import pytest

from latspin.dynamics import (
    fourier_algebra_field,
    fourier_connection,
    group_field_from_profile,
)
from latspin.fields import ReducedState, gauge_act
from latspin.lagrangian import (
    DensitySpec,
    available_specs,
    delta_l_delta_gamma,
    delta_l_delta_nu,
    fd_gradient_oracle,
    get_spec,
    instantaneous_L,
    reduced_l,
    reduction_identity_gap,
    spin_glass_spec,
)
from latspin.lattice import (
    AlgebraField,
    ConnectionForm,
    Grid,
    GroupField,
    integrate,
    right_log_derivative,
)

FD_TOL = 1e-6
FD_EPS = 1e-5
IDENTITY_TOL = 1e-10


@pytest.fixture(scope="module")
def spec():
    return spin_glass_spec()


def random_state(g, grid, seed, nu_amp=0.6, gamma_amp=0.5):
    nu = fourier_algebra_field(grid, g, 2, nu_amp, seed)
    gamma = fourier_connection(grid, g, 2, gamma_amp, seed + 1)
    return ReducedState(nu, gamma, 0.0)


# -- reduced Lagrangian ----------------------------------------------------------


def test_reduced_l_constant_velocity(spec, g, grid32):
    nu = AlgebraField(grid32, g, np.tile([1.0, 0, 0], (32, 1)))
    s = ReducedState(nu, ConnectionForm.zeros(grid32, g), 0.0)
    assert reduced_l(spec, 0.0, s) == pytest.approx(0.5, abs=1e-14)


def test_reduced_l_constant_connection(spec, g, grid32):
    comps = np.tile([0.6, 0, 0.8], (1, 32, 1))  # |gamma|^2 = 1 at every site
    s = ReducedState(AlgebraField.zeros(grid32, g), ConnectionForm(grid32, g, comps), 0.0)
    assert reduced_l(spec, 0.0, s) == pytest.approx(-0.5, abs=1e-14)


def test_reduced_l_zero_state(spec, g, grid32):
    s = ReducedState(AlgebraField.zeros(grid32, g), ConnectionForm.zeros(grid32, g), 0.0)
    assert reduced_l(spec, 0.0, s) == 0.0


# -- instantaneous Lagrangian -------------------------------------------------------


def test_instantaneous_at_identity_equals_reduced(spec, g, grid32):
    s = random_state(g, grid32, 1)
    val = instantaneous_L(spec, 0.0, GroupField.identity(grid32, g), s.nu, s.gamma)
    assert val == pytest.approx(reduced_l(spec, 0.0, s), rel=1e-13)


def test_instantaneous_direct_assembly(spec, g, grid32):
    # gamma = 0: the value must match (|nu'|^2 - |(D chi) chi^-1|^2)/2 assembled by hand
    chi = group_field_from_profile(grid32, g, 2, 0.7, 2)
    nu_p = fourier_algebra_field(grid32, g, 2, 0.5, 3)
    val = instantaneous_L(spec, 0.0, chi, nu_p, ConnectionForm.zeros(grid32, g))
    rld = right_log_derivative(chi).comps
    density = 0.5 * (
        np.einsum("...a,...a->...", nu_p.values, nu_p.values)
        - np.einsum("i...a,i...a->...", rld, rld)
    )
    assert val == pytest.approx(integrate(grid32, density), rel=1e-13)


def test_reduction_identity_exact(spec, g):
    for grid in (Grid((32,), (1 / 32,)), Grid((16, 16), (1 / 16, 1 / 16))):
        for k in range(5):
            chi = group_field_from_profile(grid, g, 2, 0.6, 40 + k)
            nu_p = fourier_algebra_field(grid, g, 2, 0.6, 50 + k)
            gamma = fourier_connection(grid, g, 2, 0.6, 60 + k)
            assert reduction_identity_gap(spec, 0.0, chi, nu_p, gamma) <= IDENTITY_TOL


def test_gauge_invariance_defect_is_second_order(spec, g):
    # the invariance of the instantaneous Lagrangian under the discrete affine
    # action holds to O(h^2): the centered difference of a pointwise product
    # picks up a product-rule defect that vanishes only under refinement
    devs = []
    for n in (32, 64, 128):
        grid = Grid((n,), (1.0 / n,))
        chi = group_field_from_profile(grid, g, 2, 0.5, 4)
        lam = group_field_from_profile(grid, g, 2, 0.5, 5)
        nu_p = fourier_algebra_field(grid, g, 2, 0.6, 6)
        gamma = fourier_connection(grid, g, 2, 0.6, 7)
        a = instantaneous_L(spec, 0.0, chi, nu_p, gamma)
        b = instantaneous_L(spec, 0.0, chi.compose(lam), nu_p, gauge_act(lam, gamma))
        devs.append(abs(a - b) / abs(a))
    orders = np.log2(np.array(devs[:-1]) / devs[1:])
    assert np.all(orders > 1.7)


def test_gauge_invariance_exact_for_constant_gauge(spec, g, grid32):
    # a spatially constant transformation has no derivative defect
    chi = group_field_from_profile(grid32, g, 2, 0.5, 8)
    nu_p = fourier_algebra_field(grid32, g, 2, 0.6, 9)
    gamma = fourier_connection(grid32, g, 2, 0.6, 10)
    const = g.exp_arr(np.array([0.7, -0.2, 0.4]))
    lam = GroupField(grid32, g, np.tile(const, (32, 1, 1)), validate=False)
    a = instantaneous_L(spec, 0.0, chi, nu_p, gamma)
    b = instantaneous_L(spec, 0.0, chi.compose(lam), nu_p, gauge_act(lam, gamma))
    assert abs(a - b) / abs(a) <= 1e-12


# -- functional derivatives -----------------------------------------------------------


def test_delta_nu_is_flat_nu(spec, g, grid32):
    s = random_state(g, grid32, 11)
    out = delta_l_delta_nu(spec, 0.0, s)
    assert np.array_equal(out.values, s.nu.values)


def test_delta_nu_zero(spec, g, grid32):
    s = ReducedState(
        AlgebraField.zeros(grid32, g), fourier_connection(grid32, g, 2, 0.5, 12), 0.0
    )
    assert np.max(np.abs(delta_l_delta_nu(spec, 0.0, s).values)) == 0.0


def test_delta_gamma_zero(spec, g, grid32):
    s = ReducedState(
        fourier_algebra_field(grid32, g, 2, 0.5, 13), ConnectionForm.zeros(grid32, g), 0.0
    )
    assert np.max(np.abs(delta_l_delta_gamma(spec, 0.0, s).comps)) == 0.0


def test_delta_gamma_linear(spec, g, grid32):
    s1 = random_state(g, grid32, 14)
    s2 = ReducedState(
        s1.nu, ConnectionForm(grid32, g, 2.0 * s1.gamma.comps), 0.0
    )
    assert np.allclose(
        delta_l_delta_gamma(spec, 0.0, s2).comps,
        2.0 * delta_l_delta_gamma(spec, 0.0, s1).comps,
        atol=1e-14,
    )


def test_fd_oracle_pins_delta_nu_sign(spec, g, grid32):
    s = random_state(g, grid32, 15)
    oracle = fd_gradient_oracle(
        lambda f: reduced_l(spec, 0.0, ReducedState(f, s.gamma, 0.0)), s.nu, FD_EPS
    )
    analytic = delta_l_delta_nu(spec, 0.0, s)
    scale = max(np.max(np.abs(oracle.values)), 1e-30)
    assert np.max(np.abs(analytic.values - oracle.values)) / scale <= FD_TOL


def test_fd_oracle_pins_delta_gamma_sign(spec, g, grid32):
    # the binding sign check: for the quadratic density the oracle yields
    # -flat(gamma) per axis and the analytic derivative must match it
    s = random_state(g, grid32, 16)
    oracle = fd_gradient_oracle(
        lambda f: reduced_l(spec, 0.0, ReducedState(s.nu, f, 0.0)), s.gamma, FD_EPS
    )
    analytic = delta_l_delta_gamma(spec, 0.0, s)
    scale = max(np.max(np.abs(oracle.comps)), 1e-30)
    assert np.max(np.abs(analytic.comps - oracle.comps)) / scale <= FD_TOL
    assert np.allclose(oracle.comps, -s.gamma.comps, atol=1e-9)


def test_fd_oracle_exact_for_linear_functionals(spec, g, grid32):
    probe = fourier_algebra_field(grid32, g, 2, 0.8, 17)
    target = fourier_algebra_field(grid32, g, 2, 0.7, 18)

    def linear(f):
        return integrate(grid32, np.einsum("...a,...a->...", target.values, f.values))

    oracle = fd_gradient_oracle(linear, probe, FD_EPS)
    assert np.allclose(oracle.values, target.values, atol=1e-9)


def test_fd_oracle_richardson_ratio(spec, g):
    # second-order stencil: halving eps shrinks the cubic-term error by ~4
    grid = Grid((4,), (0.25,))
    base = AlgebraField(grid, g, np.tile([0.9, 0.0, 0.0], (4, 1)))

    def cubic(f):
        return integrate(grid, f.values[..., 0] ** 3)

    exact = 3.0 * base.values[..., 0] ** 2
    err = []
    for eps in (1e-3, 5e-4):
        out = fd_gradient_oracle(cubic, base, eps)
        err.append(np.max(np.abs(out.values[..., 0] - exact)))
    assert err[0] / err[1] == pytest.approx(4.0, rel=0.05)


def test_fd_oracle_rejects_bad_eps(spec, g, grid32):
    with pytest.raises(ValueError):
        fd_gradient_oracle(lambda f: 0.0, AlgebraField.zeros(grid32, g), 1.0)


def test_fd_oracle_rejects_nonfinite_functional(spec, g):
    grid = Grid((4,), (0.25,))
    with pytest.raises(ValueError):
        fd_gradient_oracle(lambda f: np.nan, AlgebraField.zeros(grid, g), FD_EPS)


# -- density spec registry -------------------------------------------------------------


def test_registry_lookup():
    assert "spin_glass" in available_specs()
    assert get_spec("spin_glass").name == "spin_glass"
    with pytest.raises(KeyError):
        get_spec("nope")


def test_spec_self_test_passes(spec):
    assert spec.self_test(dim=2, algebra_dim=3) <= FD_TOL


def test_spec_self_test_catches_sign_error():
    spec = spin_glass_spec()
    good = spec.d_sigma2
    spec.d_sigma2 = lambda t, s1, s2: -good(t, s1, s2)
    with pytest.raises(ValueError):
        spec.self_test(dim=1, algebra_dim=3)


def test_generic_kinetic_inversion():
    # a rescaled kinetic map exercises the probing-based inverse
    def value(t, s1, s2):
        return 2.0 * np.einsum("...a,...a->...", s1, s1) / 2.0 - 0.5 * np.einsum(
            "i...a,i...a->...", s2, s2
        )

    spec = DensitySpec(
        "scaled", value,
        d_sigma1=lambda t, s1, s2: 2.0 * np.asarray(s1, float),
        d_sigma2=lambda t, s1, s2: -np.asarray(s2, float),
        kinetic_invertible=True,
    )
    rho = np.array([[2.0, 4.0, -6.0]])
    out = spec.invert_kinetic(rho, dim=2)
    assert np.allclose(out, rho / 2.0, atol=1e-14)


def test_non_invertible_kinetic_rejected():
    spec = DensitySpec(
        "static", lambda t, s1, s2: 0.0,
        d_sigma1=lambda t, s1, s2: np.zeros_like(s1),
        d_sigma2=lambda t, s1, s2: np.zeros_like(s2),
        kinetic_invertible=False,
    )
    with pytest.raises(ValueError):
        spec.invert_kinetic(np.zeros((4, 3)))
