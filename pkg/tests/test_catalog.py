import math

import numpy as np
import pytest

from mixedcurv import catalog
from mixedcurv.errors import InitialValueOutOfRange, NotCodimOne, SubstitutionDomainError
from mixedcurv.extrinsic import Codim1Data
from mixedcurv.sampling import map_pairs, sample_points
from mixedcurv.variation import make_domain, mean_value


def test_tau1_closed_form_solves_riccati():
    t = np.linspace(-3, 3, 601)
    tau = catalog.tau1_closed_form(-1.0, 0.0, t)
    assert np.allclose(tau, -np.tanh(t), atol=1e-14)
    h = 1e-4
    for C, tau0 in [(-1.0, 0.0), (-4.0, 1.5), (-0.25, -0.5), (-2.0, math.sqrt(2))]:
        f = lambda s: catalog.tau1_closed_form(C, tau0, s)
        # fourth-order central difference
        d = (8 * (f(t + h) - f(t - h)) - (f(t + 2 * h) - f(t - 2 * h))) / (12 * h)
        assert np.max(np.abs(d - f(t) ** 2 - C)) < 1e-9, (C, tau0)
        assert f(np.array(0.0)) == pytest.approx(tau0, abs=1e-15)


def test_tau1_closed_form_degenerate_and_invalid():
    assert np.all(catalog.tau1_closed_form(0.0, 0.0, np.linspace(0, 1, 5)) == 0.0)
    with pytest.raises(InitialValueOutOfRange):
        catalog.tau1_closed_form(1.0, 0.0, 0.5)
    with pytest.raises(InitialValueOutOfRange):
        catalog.tau1_closed_form(-1.0, 1.5, 0.5)


@pytest.mark.parametrize("n", [1, 2, 3])
def test_harmonic_exponent_is_one_for_p2(n):
    assert catalog.harmonic_exponent(n, 2) == 1.0


def test_harmonic_exponent_values():
    assert catalog.harmonic_exponent(2, 3) == pytest.approx(1.5)
    assert catalog.harmonic_exponent(1, 4) == pytest.approx((4 - 2) / 2)


def test_twisted_critical_conditions():
    geo = catalog.twisted_critical()
    pts = sample_points(geo, 16, seed=1)
    assert catalog.twisted_conditions(geo, pts) == {
        "f1_independent_of_second_factor": True,
        "leafwise_harmonic": True,
        "r_conformal": True,
    }


def test_double_twisted_is_not_critical():
    geo = catalog.double_twisted()
    cond = catalog.twisted_conditions(geo, sample_points(geo, 16, seed=1))
    assert not cond["f1_independent_of_second_factor"]


@pytest.mark.parametrize("n, p", [(1, 2), (2, 2), (2, 3)])
def test_conformal_harmonic_checks(n, p):
    geo = catalog.conformal_harmonic(n, p)
    res = catalog.conformal_submersion_checks(geo, sample_points(geo, 12, seed=2))
    for k in ("h_tilde", "H_tilde", "S_mix", "fiber_harmonic"):
        assert res[k].max() < 1e-11, k
    assert ("critical" in geo.flags) == (p == 2)


def test_generic_conformal_submersion_not_harmonic():
    geo = catalog.conformal_submersion()
    res = catalog.conformal_submersion_checks(geo, sample_points(geo, 12))
    assert res["S_mix"].max() < 1e-12
    assert res["fiber_harmonic"].max() > 1e-3


def test_codim1_critical_mean_ricci():
    geo = catalog.codim1_critical()
    assert geo.params["a"] == pytest.approx(2.0573157360859, abs=1e-10)
    ric = mean_value(geo, make_domain(geo), lambda pair: Codim1Data(pair, normal_axis=0).Ric_N)
    assert ric == pytest.approx(-1.5, abs=1e-6)
    tau = map_pairs(geo, sample_points(geo, 8), lambda pair: Codim1Data(pair, normal_axis=0).value(Codim1Data(pair, normal_axis=0).tau1), order=1)
    assert np.allclose(tau, 1.0, atol=1e-12)


def test_codim1_critical_rejects_nonnegative_constant():
    with pytest.raises(InitialValueOutOfRange):
        catalog.codim1_critical(C=0.0)


def test_codim1_ansatz_riccati():
    geo = catalog.codim1_ansatz("1 + 0.2*x1^2", ["1", "exp(x2)"], ["0.3", "0.1*x1"], -1.0, [[-0.4, 0.4], [-1, 1], [-1, 1]])

    def fn(pair):
        c = Codim1Data(pair, normal_axis=0)
        return c.value(c.N_tau1) - c.value(c.tau1) ** 2

    assert np.allclose(map_pairs(geo, sample_points(geo, 4), fn, order=3), -1.0, atol=1e-8)


def test_poisson_harmonic_case_has_constant_divergence():
    geo = catalog.poisson_construction(Z0=0.0)
    res = geo.z0_residual
    assert res["slice"] < 1e-10 and res["box"] < 1e-10
    assert res["grid"] == 5


def test_poisson_nonzero_constant_is_reported():
    res = catalog.poisson_construction(Z0=0.5).z0_residual
    assert res["box"] > 1e-3


def test_poisson_rejects_non_harmonic_and_nonpositive_u():
    with pytest.raises(SubstitutionDomainError):
        catalog.poisson_construction(u0="x1^2")
    with pytest.raises(SubstitutionDomainError):
        catalog.poisson_construction(offset=-5.0)


def test_isoparametric_check():
    warped = catalog.warped_line()
    out = catalog.isoparametric_check(warped, "x0", sample_points(warped, 5))
    assert out["isoparametric"] and out["riemannian_tau_constant"] and out["equivalence_holds"]
    geo = catalog.codim1_biregular()
    out = catalog.isoparametric_check(geo, "x0", sample_points(geo, 5))
    assert not out["isoparametric"] and not out["riemannian_tau_constant"]
    assert out["equivalence_holds"]
    with pytest.raises(NotCodimOne):
        catalog.isoparametric_check(catalog.heisenberg_flow(), "x0", [[0.0, 0.0, 0.0]])


def test_registry():
    assert set(catalog.CATALOG) == set(catalog.BUILTINS) | set(catalog.CONSTRUCTIONS)
    assert [n for n, _ in catalog.builtin_geometries()] == list(catalog.BUILTINS)
    with pytest.raises(KeyError):
        catalog.get("klein_bottle")
    assert catalog.get("flat_product", n=2, p=1).n == 2
