"""The ten acceptance criteria, one test each.

Every test prints a single "criterion N: PASS|FAIL (...)" line; the lines are
also repeated in the pytest terminal summary.  Run directly with
`python tests/test_acceptance.py` for just the ten lines.
"""

import math
import subprocess
import sys
import time
from contextlib import contextmanager

import numpy as np
from hypothesis import HealthCheck, assume, given, settings
from hypothesis import strategies as st

from mixedcurv import catalog
from mixedcurv.dual import derivative
from mixedcurv.errors import DomainError
from mixedcurv.exprlang import evaluate, parse, to_source
from mixedcurv.extrinsic import Codim1Data, scalar_invariants
from mixedcurv.identities import run_identities
from mixedcurv.sampling import map_pairs, residual, sample_points
from mixedcurv.variation import (
    action_derivative,
    action_derivative_check,
    action_value,
    el_residual,
    first_variation_check,
    make_domain,
    mean_value,
    phi_prime_check,
    random_family,
)
from strategies import smooth_trees, syntax_trees

LIMIT = 60.0
RESULTS: list[str] = []


@contextmanager
def criterion(number: int, label: str):
    """Time the block, print its pass/fail line and enforce the time limit."""
    start = time.perf_counter()
    notes: list[str] = []
    ok = False
    try:
        yield notes
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        ok = ok and elapsed < LIMIT
        extra = "; ".join(notes)
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {label} ({elapsed:.1f} s{'; ' + extra if extra else ''})"
        RESULTS.append(line)
        print(line)
    assert elapsed < LIMIT, f"criterion {number} took {elapsed:.1f} s"


def test_criterion_01_identity_suite():
    with criterion(1, "identity suite on the builtin geometries") as notes:
        worst = 0.0
        for name in catalog.BUILTINS:
            res = run_identities(catalog.get(name), points=200, tol=1e-8)
            names = {r.check_name for r in res}
            assert {"partial_ricci", "d_H", "smix_decomposition"} <= names, name
            assert sum(1 for r in res if r.check_name.startswith("trace_")) == 14, name
            bad = [(r.check_name, r.max_residual) for r in res if not r.passed]
            assert not bad, (name, bad)
            worst = max(worst, max(r.max_residual for r in res))
        notes.append(f"max residual {worst:.1e}")


def test_criterion_02_sectional_specializations():
    with criterion(2, "S_mix and r_D specializations") as notes:
        for name, want in [("sphere_theta_foliation", 1.0), ("warped_line", -1.0), ("heisenberg_flow", 0.5)]:
            geo = catalog.get(name)
            for x in sample_points(geo, 20, seed=5):
                inv = scalar_invariants(geo, x)
                assert abs(inv.S_mix - want) < 1e-9, (name, inv.S_mix)
                if name == "heisenberg_flow":
                    assert abs(inv.TT_tilde - 0.5) < 1e-9
        geo = catalog.heisenberg_flow()

        def fn(pair):
            v = pair.stage.value
            return residual(v(pair.dt.r), -v(pair.d.flat(pair.d.tcasorati)))

        r = float(map_pairs(geo, sample_points(geo, 200), fn, 2).max())
        assert r < 1e-9
        notes.append(f"r_D residual {r:.1e}")


def test_criterion_03_first_variation():
    with criterion(3, "first-variation formulas, 5 families on 2 geometries") as notes:
        worst_pt = worst_int = 0.0
        for name in ("warped_line", "heisenberg_flow"):
            geo = catalog.get(name)
            dom = make_domain(geo)
            for seed in range(5):
                res = first_variation_check(random_family(geo, dom, seed=seed, kind="D"), points=16, tol_point=1e-6, tol_int=1e-5)
                bad = [(r.name, r.residual) for r in res if not r.passed]
                assert not bad, (name, seed, bad)
                worst_pt = max(worst_pt, max(r.residual for r in res if r.mode == "point"))
                worst_int = max(worst_int, max(r.residual for r in res if r.mode == "integrated"))
        notes.append(f"pointwise {worst_pt:.1e}, integrated {worst_int:.1e}")


def test_criterion_04_volume_normalization():
    with criterion(4, "volume-normalized variations") as notes:
        geo = catalog.heisenberg_flow()
        dom = make_domain(geo)
        worst = 0.0
        for seed in range(3):
            fam = random_family(geo, dom, seed=seed, kind="D")
            phi = phi_prime_check(fam)
            assert abs(phi["dvol_dt"]) < 1e-8
            assert phi["phi_prime_residual"] < 1e-6
            res = action_derivative_check(fam, "mix", tol=1e-5)
            assert [r.name for r in res] == ["dJ_mix_plain", "dJ_mix_normalized"]
            assert all(r.passed for r in res), [(r.name, r.residual) for r in res]
            worst = max(worst, res[1].residual)
        notes.append(f"normalized relation {worst:.1e}")


def test_criterion_05_el_cross_consistency():
    with criterion(5, "Euler-Lagrange cross-consistency") as notes:
        worst = 0.0
        geos = [(n, catalog.get(n)) for n in catalog.BUILTINS] + [("twisted_critical", catalog.twisted_critical())]
        for name, geo in geos:
            pts = sample_points(geo, 24, seed=9)
            for system in ("mix-perp", "mix-tangent"):
                # the two forms of the equation, compared tensor by tensor
                res = el_residual(geo, pts, system)
                worst = max(worst, res.max("consistency"))
                assert res.max("consistency") < 1e-9, (name, system)
        grav = 0.0
        for geo in (catalog.warped_line(), catalog.codim1_biregular(), catalog.codim1_critical()):
            pts = sample_points(geo, 24, seed=9)
            grav = max(grav, el_residual(geo, pts, "codim1-perp").max("gravity_NN"))
            grav = max(grav, el_residual(geo, pts, "codim1-tangent").max("gravity_leaf"))
        assert grav < 1e-8
        notes.append(f"main vs raw {worst:.1e}, gravity forms {grav:.1e}")


def test_criterion_06_critical_constructions():
    with criterion(6, "critical constructions") as notes:
        # (a) codimension one, n = 2
        geo = catalog.codim1_critical(C=-1.0)
        dom = make_domain(geo)
        pts = sample_points(geo, 32, seed=2)
        ra = max(el_residual(geo, pts, s, domain=dom, volume_preserving=True).max() for s in ("codim1-tangent", "codim1-perp"))
        ric = mean_value(geo, dom, lambda pair: Codim1Data(pair, normal_axis=0).Ric_N)
        assert ra < 1e-7 and abs(ric + 1.5) < 1e-6
        # (b) τ₁ closed form
        t = np.linspace(-3, 3, 601)
        tau = catalog.tau1_closed_form(-1.0, 0.0, t)
        assert np.max(np.abs(tau + np.tanh(t))) < 1e-12
        h = 1e-4
        f = lambda s: catalog.tau1_closed_form(-1.0, 0.0, s)
        dtau = (8 * (f(t + h) - f(t - h)) - (f(t + 2 * h) - f(t - 2 * h))) / (12 * h)
        rb = float(np.max(np.abs(dtau - tau**2 + 1.0)))
        assert rb < 1e-9
        # (c) twisted product
        tw = catalog.twisted_critical()
        rc = el_residual(tw, sample_points(tw, 32, seed=2), "mix-perp").max()
        fam = random_family(tw, make_domain(tw, quad=8, bump_quad=8), seed=0, kind="D")
        dj = abs(action_derivative(fam, "mix", levels=0))
        assert rc < 1e-7 and dj < 1e-6
        notes.append(f"(a) {ra:.1e}, Ric_N mean {ric:.9f}; (b) {rb:.1e}; (c) EL {rc:.1e}, dJ {dj:.1e}")


def test_criterion_07_conformal_submersion():
    with criterion(7, "conformal submersions") as notes:
        assert all(catalog.harmonic_exponent(n, 2) == 1.0 for n in (1, 2, 3))
        worst = harm = 0.0
        for n in (1, 2, 3):
            geo = catalog.conformal_harmonic(n, 2)
            res = catalog.conformal_submersion_checks(geo, sample_points(geo, 40, seed=4))
            worst = max(worst, *(res[k].max() for k in ("h_tilde", "H_tilde", "S_mix")))
            harm = max(harm, res["fiber_harmonic"].max())
        assert worst < 1e-9 and harm < 1e-6
        notes.append(f"formulas {worst:.1e}, fiberwise Laplacian {harm:.1e}")


def test_criterion_08_action_quadrature():
    with criterion(8, "action quadrature") as notes:
        sph = catalog.sphere_theta_foliation()
        a = action_value(sph, make_domain(sph, box=[[math.pi / 4, 3 * math.pi / 4], [0.0, 1.0]])).value
        warped = catalog.warped_line()
        b = action_value(warped, make_domain(warped, box=[[0.0, 1.0], [0.0, 1.0]])).value
        assert abs(a - math.sqrt(2)) < 1e-6 and abs(b - (1 - math.e)) < 1e-6
        notes.append(f"errors {abs(a - math.sqrt(2)):.1e}, {abs(b - 1 + math.e):.1e}")


def test_criterion_09_parser():
    counts = {"round_trip": 0, "ad_fd": 0}

    @settings(max_examples=1000, deadline=None, database=None, suppress_health_check=list(HealthCheck))
    @given(syntax_trees())
    def round_trip(tree):
        src = to_source(tree)
        assert parse(src) == tree
        assert to_source(parse(src)) == src
        counts["round_trip"] += 1

    @settings(max_examples=200, deadline=None, database=None, suppress_health_check=list(HealthCheck))
    @given(smooth_trees(), st.lists(st.floats(-0.9, 0.9), min_size=3, max_size=3), st.integers(0, 2))
    def ad_fd(tree, point, axis):
        def f(x):
            pt = list(point)
            pt[axis] = x
            return evaluate(tree, pt)

        x0 = point[axis]
        try:
            value, ad = f(x0), derivative(f, x0)
        except (DomainError, OverflowError):
            assume(False)
        assume(math.isfinite(value) and abs(value) < 1e6 and math.isfinite(ad))
        central = lambda hh: (f(x0 + hh) - f(x0 - hh)) / (2 * hh)
        fd = (4 * central(5e-4) - central(1e-3)) / 3
        assert abs(ad - fd) <= 1e-7 * max(1.0, abs(ad))
        counts["ad_fd"] += 1

    with criterion(9, "expression parser properties") as notes:
        round_trip()
        ad_fd()
        assert counts["round_trip"] >= 1000 and counts["ad_fd"] >= 200
        notes.append(f"{counts['round_trip']} round trips, {counts['ad_fd']} derivative cases")


def test_criterion_10_determinism():
    runs = [
        ["identities", "--geometry", "double_twisted", "--points", "40", "--seed", "11"],
        ["el", "--geometry", "twisted_critical", "--system", "mix-perp", "--points", "20", "--seed", "11"],
        ["action", "--geometry", "heisenberg_flow", "--quad", "6"],
    ]
    with criterion(10, "byte-identical CLI reports") as notes:
        for argv in runs:
            cmd = [sys.executable, "-m", "mixedcurv", *argv]
            a = subprocess.run(cmd, capture_output=True, timeout=LIMIT)
            b = subprocess.run(cmd, capture_output=True, timeout=LIMIT)
            assert a.returncode == 0, a.stderr.decode()
            assert a.stdout == b.stdout and a.returncode == b.returncode
        notes.append(f"{len(runs)} commands run twice")


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                pass
