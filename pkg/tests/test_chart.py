import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixedcurv import catalog
from mixedcurv.chart import (
    CHART_SCHEMA,
    adapted_frame,
    check_signature,
    dtilde_projector,
    geometry_from_json,
    gram_schmidt,
    load_chart,
    make_geometry,
    orthogonal_complement,
)
from mixedcurv.errors import (
    ConfigError,
    DegenerateDistribution,
    GramSchmidtBreakdown,
    SignatureMismatch,
)
from mixedcurv.sampling import sample_points

WARPED = {
    "n": 1,
    "p": 1,
    "box": [[-0.5, 1.5], [-0.5, 1.5]],
    "signature_q": 0,
    "metric": [["1", 0], [0, "exp(2*x0)"]],
    "dtilde_frame": [["0", "1"]],
}


def test_json_chart_values():
    geo = geometry_from_json(WARPED)
    G = geo.metric_at([[0.5, 0.2]])[0]
    assert np.allclose(G, [[1.0, 0.0], [0.0, np.exp(1.0)]], rtol=0, atol=1e-15)
    assert geo.n == 1 and geo.p == 1 and geo.dim == 2


@pytest.mark.parametrize("name", [n for n in catalog.BUILTINS])
def test_builtin_round_trip(name):
    geo = catalog.get(name)
    data = json.loads(json.dumps(geo.to_json()))
    back = geometry_from_json(data, name)
    pts = sample_points(geo, 7, seed=1)
    assert np.array_equal(geo.metric_at(pts), back.metric_at(pts))
    assert np.array_equal(geo.frame_at(pts), back.frame_at(pts))
    assert back.metric.q == geo.metric.q


def test_numeric_geometry_has_no_json_form():
    with pytest.raises(ConfigError) as err:
        catalog.poisson_construction().to_json()
    assert err.value.pointer == "/metric"


def test_closed_form_construction_round_trips():
    geo = catalog.codim1_critical()
    back = geometry_from_json(geo.to_json())
    pts = sample_points(geo, 5)
    assert np.array_equal(geo.metric_at(pts), back.metric_at(pts))


@pytest.mark.parametrize(
    "patch, pointer",
    [
        ({"metric": [["1", 0], [0, "exp(2*x0"]]}, "/metric/1/1"),
        ({"metric": [["1", 0]]}, "/metric"),
        ({"metric": [["1", "x0"], ["0", "1"]]}, "/metric/1/0"),
        ({"box": [[0, 1]]}, "/box"),
        ({"box": [[0, 1], [1, 1]]}, "/box/1"),
        ({"dtilde_frame": [["0", "1", "0"]]}, "/dtilde_frame/0"),
        ({"params": {"a": "x"}}, "/params/a"),
        ({"colour": 3}, "/colour"),
        ({"metric": [["1", 0], [0, "y7"]]}, "/metric/1/1"),
    ],
)
def test_config_errors_carry_pointers(patch, pointer):
    data = {**WARPED, **patch}
    with pytest.raises(ConfigError) as err:
        geometry_from_json(data, pointer="")
    assert err.value.pointer == pointer


def test_missing_key_pointer():
    data = dict(WARPED)
    del data["signature_q"]
    with pytest.raises(ConfigError) as err:
        geometry_from_json(data, pointer="/geometry")
    assert err.value.pointer == "/geometry/signature_q"


def test_params_are_bound():
    data = {**WARPED, "metric": [["1", 0], [0, "exp(a*x0)"]], "params": {"a": 2.0}}
    G = geometry_from_json(data).metric_at([[0.5, 0.0]])[0]
    assert G[1, 1] == pytest.approx(np.e, rel=1e-15)


def test_load_chart_and_schema_keys():
    geo = load_chart(json.dumps(WARPED), name="w")
    assert geo.name == "w"
    assert set(CHART_SCHEMA["required"]) <= set(CHART_SCHEMA["properties"])
    assert set(geo.to_json()) == set(CHART_SCHEMA["properties"])


def test_signature_checks():
    lor = catalog.lorentz_product()
    check_signature(lor, sample_points(lor, 20))
    wrong = make_geometry("w", 1, 1, [[0, 1], [0, 1]], [["-1", "0"], ["0", "1"]], [["1", "0"]], q=0)
    with pytest.raises(SignatureMismatch):
        check_signature(wrong, [[0.5, 0.5]])
    with pytest.raises(SignatureMismatch):
        adapted_frame(wrong, [0.5, 0.5])
    degenerate = make_geometry("d", 1, 1, [[-1, 1], [-1, 1]], [["1", "0"], ["0", "x0"]], [["1", "0"]])
    with pytest.raises(SignatureMismatch):
        check_signature(degenerate, [[0.0, 0.0]])


def test_null_distribution_is_degenerate():
    geo = make_geometry("null", 1, 1, [[0, 1], [0, 1]], [["0", "1"], ["1", "0"]], [["1", "0"]], q=1)
    with pytest.raises(DegenerateDistribution):
        orthogonal_complement(geo, [0.5, 0.5])


def test_gram_schmidt_breakdown_on_isotropic_span():
    G = np.array([[0.0, 1.0], [1.0, 0.0]])
    with pytest.raises(GramSchmidtBreakdown):
        gram_schmidt(G, np.array([[1.0, 0.0]]))


def test_heisenberg_complement_is_horizontal():
    geo = catalog.heisenberg_flow()
    x = np.array([0.4, -0.2, 0.1])
    W = orthogonal_complement(geo, x)
    G = geo.metric_at(x)[0]
    assert np.allclose(W @ G @ np.array([0.0, 0.0, 1.0]), 0.0, atol=1e-14)
    assert W.shape == (2, 3)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.9, 0.9), min_size=4, max_size=4))
def test_adapted_frame_is_pseudo_orthonormal(x):
    geo = catalog.lorentz_product()
    fr = adapted_frame(geo, x)
    G = geo.metric_at(x)[0]
    gram = fr.vectors @ G @ fr.vectors.T
    assert np.allclose(gram, np.diag(fr.signs), atol=1e-12)
    assert int(np.sum(fr.signs < 0)) == 1
    P = dtilde_projector(G, geo.frame_at(x)[0])
    assert np.allclose(P @ P, P, atol=1e-12)
    assert np.allclose(P @ fr.F.T, 0.0, atol=1e-12)
