import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedcurv import catalog
from mixedcurv.calculus import (
    christoffel,
    covariant_derivative,
    divergences,
    lie_bracket,
    riemann,
    scalar_operators,
    sectional_curvature,
)
from mixedcurv.chart import make_geometry
from mixedcurv.errors import DegeneratePlane

SPHERE = catalog.sphere_theta_foliation()
HYPERBOLIC = make_geometry("h2", 1, 1, [[-1, 1], [0.5, 2]], [["1/x1^2", "0"], ["0", "1/x1^2"]], [["1", "0"]])
FLAT3 = catalog.flat_product()
SPHERE3 = make_geometry(
    "s3", 1, 2, [[0.3, 2.8], [0.3, 2.8], [-1, 1]],
    [["4", "0", "0"], ["0", "4*sin(x0)^2", "0"], ["0", "0", "4*sin(x0)^2*sin(x1)^2"]], [["1", "0", "0"]],
)


def test_sphere_christoffel_symbols():
    th = 1.1
    G = christoffel(SPHERE, [th, 0.3])
    want = np.zeros((2, 2, 2))
    want[0, 1, 1] = -math.sin(th) * math.cos(th)
    want[1, 0, 1] = want[1, 1, 0] = math.cos(th) / math.sin(th)
    assert np.allclose(G, want, atol=1e-14)


def test_sphere_riemann_component():
    th = 0.8
    R = riemann(SPHERE, [th, 0.0])
    # R(X,Y) = ∇_Y∇_X − ∇_X∇_Y + ∇_[X,Y], so R(∂θ, ∂φ)∂φ = −sin²θ ∂θ for K = 1
    assert R[0, 1, 1, 0] == pytest.approx(-math.sin(th) ** 2, abs=1e-14)
    assert R[0, 1, 0, 1] == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize(
    "geo, x, K",
    [
        (SPHERE, [0.9, 0.2], 1.0),
        (HYPERBOLIC, [0.1, 1.3], -1.0),
        (SPHERE3, [1.0, 1.2, 0.0], 0.25),
        (FLAT3, [0.1, 0.2, 0.3], 0.0),
    ],
)
def test_constant_curvature(geo, x, K):
    m = geo.dim
    rng = np.random.default_rng(0)
    for _ in range(3):
        X, Y = rng.normal(size=m), rng.normal(size=m)
        assert sectional_curvature(geo, x, X, Y) == pytest.approx(K, abs=1e-12)


def test_degenerate_plane():
    with pytest.raises(DegeneratePlane):
        sectional_curvature(SPHERE, [1.0, 0.0], [1.0, 2.0], [2.0, 4.0])


def test_lie_bracket():
    br = lie_bracket(FLAT3, ["1", "0", "0"], ["0", "x0", "x1^2"], [0.3, 0.5, 0.0])
    assert np.allclose(br, [0.0, 1.0, 0.0], atol=1e-15)
    br = lie_bracket(FLAT3, ["0", "x0", "0"], ["x1", "0", "0"], [0.3, 0.5, 0.0])
    assert np.allclose(br, [0.3, -0.5, 0.0], atol=1e-15)


def test_divergences():
    d = divergences(FLAT3, [0.2, 0.1, -0.4], ["x0", "x1", "x2"])
    assert d["div"] == pytest.approx(3.0)
    # 𝒟̃ = span ∂x0 on the flat product
    assert d["div_tilde"] == pytest.approx(1.0)
    assert d["div_perp"] == pytest.approx(2.0)
    th = 1.2
    d = divergences(SPHERE, [th, 0.0], ["1", "0"])
    assert d["div"] == pytest.approx(math.cos(th) / math.sin(th), abs=1e-14)


def test_sphere_laplacian_eigenfunction():
    th = 0.7
    ops = scalar_operators(SPHERE, [th, 0.4], "cos(x0)")
    assert float(ops["laplacian"]) == pytest.approx(-2 * math.cos(th), abs=1e-14)
    assert np.allclose(ops["grad"], [-math.sin(th), 0.0], atol=1e-15)
    # 𝒟̃ = span ∂θ, so the θ-gradient is all of it
    assert np.allclose(ops["grad_perp"], 0.0, atol=1e-15)


def test_killing_field_has_antisymmetric_derivative():
    th = 1.0
    nab = covariant_derivative(SPHERE, ["0", "1"], "u", [th, 0.0])
    g = SPHERE.metric_at([[th, 0.0]])[0]
    low = nab.lower(g, slot=1)
    assert low.variance == "dd"
    assert np.allclose(low.components, -low.components.T, atol=1e-14)
    assert abs(low.components[0, 1]) == pytest.approx(math.sin(th) * math.cos(th), abs=1e-14)


_coef = st.floats(-0.15, 0.15)


@settings(max_examples=25, deadline=None)
@given(st.lists(_coef, min_size=9, max_size=9))
def test_riemann_symmetries(c):
    terms = [
        f"1 + {c[0]}*x1^2 + {c[1]}*sin(x2)",
        f"{c[2]}*x0*x2",
        f"{c[3]}*x1",
        f"1 + {c[4]}*x0^2 + {c[5]}*x2",
        f"{c[6]}*cos(x0)",
        f"1 + {c[7]}*x0*x1 + {c[8]}*x2^2",
    ]
    M = [[terms[0], terms[1], terms[2]], [terms[1], terms[3], terms[4]], [terms[2], terms[4], terms[5]]]
    geo = make_geometry("r", 1, 2, [[-0.5, 0.5]] * 3, M, [["1", "0", "0"]])
    x = [0.2, -0.1, 0.3]
    R = riemann(geo, x)
    g = geo.metric_at([x])[0]
    Rl = np.einsum("abcd,de->abce", R, g)
    assert np.allclose(R, -R.transpose(1, 0, 2, 3), atol=1e-12)
    assert np.allclose(Rl, -Rl.transpose(0, 1, 3, 2), atol=1e-12)
    assert np.allclose(Rl, Rl.transpose(2, 3, 0, 1), atol=1e-12)
    bianchi = R + R.transpose(1, 2, 0, 3) + R.transpose(2, 0, 1, 3)
    assert np.allclose(bianchi, 0.0, atol=1e-12)
