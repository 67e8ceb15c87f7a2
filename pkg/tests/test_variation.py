import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedcurv import catalog
from mixedcurv.errors import ConfigError, HypothesisViolated
from mixedcurv.sampling import sample_points
from mixedcurv.variation import (
    KINDS,
    VariationFamily,
    action_derivative_check,
    action_value,
    biconformal_pairing_check,
    el_residual,
    fd_derivative,
    first_variation_check,
    make_domain,
    mean_value,
    phi_prime_check,
    random_family,
    sstar_specializations,
    umbilicity_preservation_check,
    volume,
)

WARPED = catalog.warped_line()
HEIS = catalog.heisenberg_flow()


@pytest.mark.parametrize(
    "kwargs, pointer",
    [
        ({"box": [[0, 1]]}, "/domain"),
        ({"box": [[1, 0], [0, 1]]}, "/domain"),
        ({"box": [[-0.5, 1], [0, 1]]}, "/domain"),
        ({"quad": 0}, "/quad_points"),
        ({"bump": "gauss"}, "/bump"),
    ],
)
def test_domain_validation(kwargs, pointer):
    with pytest.raises(ConfigError) as err:
        make_domain(WARPED, **kwargs)
    assert err.value.pointer == pointer


def test_default_domain_is_shrunk_box():
    d = make_domain(WARPED)
    assert d.box == ((-0.3, 1.3), (-0.3, 1.3))


def test_grid_weights_sum_to_box_volume():
    d = make_domain(HEIS, quad=5, bump_quad=7)
    pts, w = d.grid()
    assert pts.shape == (125, 3)
    assert w.sum() == pytest.approx(1.6**3, rel=1e-14)
    _, wb = d.grid("bump")
    assert wb.sum() == pytest.approx(1.6**3, rel=1e-14)
    exp_dom = make_domain(HEIS, bump="exp", bump_quad=20)
    _, we = exp_dom.grid("bump")
    # the tanh-mapped rule stops at |s| = 2.6, where bump integrands are already negligible
    assert we.sum() == pytest.approx((1.6 * math.tanh(2.6)) ** 3, rel=1e-7)


def test_bump_values():
    d = make_domain(WARPED)
    vals = d.bump_values([d.center, d.lo, d.hi + 1.0, d.center + 0.5 * d.half])
    assert vals[0] == 1.0
    assert vals[1] == 0.0 and vals[2] == 0.0
    assert vals[3] == pytest.approx(0.75**8, rel=1e-14)
    e = make_domain(WARPED, bump="exp").bump_values([d.center + 0.5 * d.half])
    assert e[0] == pytest.approx(math.exp(2 * (1 - 1 / 0.75)), rel=1e-14)


def test_fd_derivative_orders():
    f = lambda t: math.sin(1 + t)
    exact = math.cos(1)
    assert abs(fd_derivative(f, 1e-2, 0) - exact) > 1e-7
    assert fd_derivative(f, 1e-2, 2) == pytest.approx(exact, abs=1e-12)
    out = fd_derivative(lambda t: {"a": np.array([t**2, math.exp(t)])}, 1e-3, 1)
    assert np.allclose(out["a"], [0.0, 1.0], atol=1e-12)


def test_action_on_sphere_strip():
    geo = catalog.sphere_theta_foliation()
    d = make_domain(geo, box=[[math.pi / 4, 3 * math.pi / 4], [0.0, 1.0]])
    res = action_value(geo, d, "mix")
    assert res.converged
    assert res.value == pytest.approx(math.sqrt(2), abs=1e-12)


def test_action_and_volume_on_warped_box():
    d = make_domain(WARPED, box=[[0.0, 1.0], [0.0, 1.0]])
    assert action_value(WARPED, d, "mix").value == pytest.approx(1 - math.e, abs=1e-12)
    assert volume(WARPED, d) == pytest.approx(math.e - 1, abs=1e-12)
    # S_ex = σ₂(h̃) terms vanish for a rank-one leaf block
    ex = action_value(WARPED, d, "ex")
    assert ex.value == pytest.approx(0.0, abs=1e-12)


def test_mean_value_of_constant():
    d = make_domain(HEIS, quad=4)
    assert mean_value(HEIS, d, lambda pair: pair.S_mix) == pytest.approx(0.5, abs=1e-13)


def test_random_family_is_seeded_and_symmetric():
    d = make_domain(HEIS, quad=6, bump_quad=6)
    a, b = random_family(HEIS, d, seed=4), random_family(HEIS, d, seed=4)
    assert [str(e) for row in a.profile for e in row] == [str(e) for row in b.profile for e in row]
    c = random_family(HEIS, d, seed=5)
    assert [str(e) for row in a.profile for e in row] != [str(e) for row in c.profile for e in row]
    assert all(str(a.profile[i][j]) == str(a.profile[j][i]) for i in range(3) for j in range(3))


def test_family_validation():
    d = make_domain(WARPED)
    with pytest.raises(ConfigError):
        VariationFamily(WARPED, d, "X", scalar="1")
    with pytest.raises(ConfigError):
        VariationFamily(WARPED, d, "D")
    with pytest.raises(ConfigError):
        VariationFamily(WARPED, d, "D", profile=(("1", "0"), ("0", "1")), scalar="1")
    with pytest.raises(ConfigError) as err:
        VariationFamily(WARPED, d, "D", profile=(("1", "0"),))
    assert err.value.pointer == "/family/profile"


@pytest.mark.parametrize("kind", KINDS)
def test_first_variation_formulas_warped(kind):
    fam = random_family(WARPED, make_domain(WARPED, quad=8, bump_quad=8), seed=1, kind=kind)
    res = first_variation_check(fam, points=12)
    assert len(res) == 9
    assert all(r.passed for r in res), [(r.name, r.residual) for r in res if not r.passed]


def test_first_variation_formulas_heisenberg():
    fam = random_family(HEIS, make_domain(HEIS, quad=6, bump_quad=6), seed=2, kind="D")
    res = first_variation_check(fam, points=8)
    assert all(r.passed for r in res), [(r.name, r.residual) for r in res if not r.passed]


def test_first_variation_needs_plain_family():
    fam = random_family(WARPED, make_domain(WARPED, quad=4, bump_quad=4), normalized=True)
    with pytest.raises(HypothesisViolated):
        first_variation_check(fam)


def test_phi_prime_and_volume_preservation():
    fam = random_family(WARPED, make_domain(WARPED, quad=8, bump_quad=10), seed=3, kind="Dtilde")
    out = phi_prime_check(fam)
    assert out["phi_prime_residual"] < 1e-8
    assert abs(out["dvol_dt"]) < 1e-8


@pytest.mark.parametrize("which", ["mix", "ex"])
def test_action_derivative_warped(which):
    fam = random_family(WARPED, make_domain(WARPED, quad=8, bump_quad=8), seed=7, kind="D")
    res = action_derivative_check(fam, which)
    assert [r.name for r in res] == [f"dJ_{which}_plain", f"dJ_{which}_normalized"]
    assert all(r.passed for r in res), [(r.name, r.residual) for r in res]


def test_action_derivative_heisenberg_plain_only():
    fam = random_family(HEIS, make_domain(HEIS, quad=6, bump_quad=6), seed=8, kind="Dtilde")
    res = action_derivative_check(fam, "mix", normalized=False)
    assert len(res) == 1 and res[0].passed, res[0].residual


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(KINDS))
def test_biconformal_pairing_is_riesz_representative(seed, kind):
    geo = catalog.conformal_submersion()
    rng = np.random.default_rng(seed)
    a = [float(x) for x in rng.uniform(-1, 1, size=geo.dim + 1)]
    s = f"{a[0]!r} + " + " + ".join(f"({a[k + 1]!r})*x{k}" for k in range(geo.dim))
    # the divergence terms drop out only once the bump rule resolves them
    fam = VariationFamily(geo, make_domain(geo, quad=6, bump_quad=10), kind, scalar=s)
    res = biconformal_pairing_check(fam)
    assert res.residual < 1e-7, res.details


def test_biconformal_pairing_rejects_profiles():
    fam = random_family(WARPED, make_domain(WARPED, quad=4, bump_quad=4))
    with pytest.raises(HypothesisViolated):
        biconformal_pairing_check(fam)


def test_umbilicity_preservation_warped():
    d = make_domain(WARPED, quad=8, bump_quad=8)
    out = umbilicity_preservation_check(random_family(WARPED, d, seed=0, kind="D"), points=12)
    assert out["umbilical"]["initial"] and out["umbilical"]["defect_after"] < 1e-12
    assert not out["geodesic"]["initial"]
    assert all(v["preserved"] for v in out.values())


def test_el_unknown_system_and_hypotheses():
    pts = sample_points(HEIS, 4)
    with pytest.raises(ConfigError) as err:
        el_residual(HEIS, pts, "nope")
    assert err.value.pointer == "/system"
    with pytest.raises(HypothesisViolated):
        el_residual(HEIS, pts, "codim1-perp")
    with pytest.raises(HypothesisViolated):
        el_residual(WARPED, sample_points(WARPED, 4), "ex-perp")
    # the structural hypotheses are checked at the points
    with pytest.raises(HypothesisViolated):
        el_residual(catalog.double_twisted(), sample_points(catalog.double_twisted(), 4), "geodesic-riemannian")


def test_el_flat_product_is_critical():
    geo = catalog.flat_product()
    pts = sample_points(geo, 12)
    for system in ("mix-perp", "mix-tangent"):
        assert el_residual(geo, pts, system).max() == 0.0


def test_el_heisenberg_needs_volume_constraint():
    pts = sample_points(HEIS, 12)
    plain = el_residual(HEIS, pts, "mix-perp")
    assert plain.sstar == 0.0
    assert plain.max() == pytest.approx(1 / 6, abs=1e-12)
    vp = el_residual(HEIS, pts, "mix-perp", domain=make_domain(HEIS, quad=6), volume_preserving=True)
    # S* = S_mix − (2/p)(S_ex + 2⟨T̃,T̃⟩ − ⟨T,T⟩ + div H) = 1/2 − 1
    assert vp.sstar == pytest.approx(-0.5, abs=1e-12)
    assert vp.max() < 1e-12 and vp.max("hopf") < 1e-12


@pytest.mark.parametrize("name", ["heisenberg_flow", "codim1_biregular", "warped_line", "conformal_submersion"])
def test_sstar_specializations(name):
    geo = catalog.get(name)
    out = sstar_specializations(geo, sample_points(geo, 10, seed=6))
    assert out
    for k, v in out.items():
        assert v.max() < 1e-9, k
