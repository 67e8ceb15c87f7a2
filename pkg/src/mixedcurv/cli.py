"""Command-line front end: load a config, run checks, write a versioned JSON report."""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field

import numpy as np

from . import catalog, identities, variation
from .chart import CHART_SCHEMA, geometry_from_json
from .errors import ConfigError, HypothesisViolated, MixedCurvError
from .sampling import sample_points

REPORT_VERSION = 1
COMMANDS = ("identities", "variation", "el", "action", "catalog", "schema")
CSV_FIELDS = ("check", "geometry", "n_points", "max_residual", "tol", "pass")

# config key -> accepted python types; flags of the same name override them
CONFIG_KEYS = {
    "geometry": (str, dict),
    "system": (str,),
    "points": (int,),
    "quad": (int,),
    "quad_points": (int,),
    "tol": (int, float),
    "fd_step": (int, float),
    "richardson_levels": (int,),
    "volume_preserving": (bool,),
    "seed": (int,),
    "out": (str,),
    "csv": (str,),
    "params": (dict,),
    "domain": (list,),
}

DEFAULT_TOL = {"identities": identities.TOL, "el": 1e-7, "action": 1e-6, "catalog": 1e-7}


@dataclass
class Settings:
    geometry: str | dict | None = None
    system: str | None = None
    points: int | None = None
    quad: int | None = None
    tol: float | None = None
    fd_step: float = variation.FD_STEP
    richardson_levels: int = 1
    volume_preserving: bool = False
    seed: int = 0
    out: str | None = None
    csv: str | None = None
    params: dict = field(default_factory=dict)
    domain: list | None = None


# reports -------------------------------------------------------------------


def check_record(check: str, geometry: str, n_points: int, max_residual, tol: float, mode: str = "point", **extra) -> dict:
    """One report row, keys in the documented order."""
    r = float(max_residual)
    finite = math.isfinite(r)
    rec = {
        "check": check,
        "geometry": geometry,
        "mode": mode,
        "n_points": int(n_points),
        "max_residual": r if finite else None,
        "tol": float(tol),
        "pass": bool(finite and r < tol),
    }
    for k, v in extra.items():
        rec[k] = _plain(v)
    return rec


def _plain(v):
    """JSON-safe copy with python scalars and None for non-finite floats."""
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def emit_report(checks: list[dict], csv_path: str | None = None) -> str:
    """Serialize the report; optionally also write the CSV rows."""
    text = json.dumps({"report_version": REPORT_VERSION, "checks": checks}, indent=2, allow_nan=False) + "\n"
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            fh.write(report_csv(checks))
    return text


def report_csv(checks: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for c in checks:
        w.writerow(["" if c[k] is None else (str(c[k]).lower() if isinstance(c[k], bool) else c[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def exit_code(checks: list[dict]) -> int:
    return 0 if all(c["pass"] for c in checks) else 1


# settings --------------------------------------------------------------------


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("", f"cannot read config {path!r}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"config is not valid JSON (line {exc.lineno}): {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError("", "config must be a JSON object")
    for key, value in data.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"/{key}", "unknown key")
        types = CONFIG_KEYS[key]
        ok = isinstance(value, types) and not (isinstance(value, bool) and bool not in types)
        if not ok:
            raise ConfigError(f"/{key}", f"expected {' or '.join(t.__name__ for t in types)}")
    if "quad" in data and "quad_points" in data:
        raise ConfigError("/quad_points", "give quad or quad_points, not both")
    if "quad_points" in data:
        data["quad"] = data.pop("quad_points")
    return data


def _parse_params(items) -> dict:
    out = {}
    for i, item in enumerate(items or []):
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"/params/{i}", f"expected k=v, got {item!r}")
        try:
            out[key] = float(value)
        except ValueError:
            out[key] = value
    return out


def resolve(args: argparse.Namespace) -> Settings:
    """Defaults, then the config file, then explicit flags."""
    s = Settings()
    if getattr(args, "config", None):
        for key, value in load_config(args.config).items():
            setattr(s, key, float(value) if key in ("tol", "fd_step") else value)
    for key in ("geometry", "system", "points", "quad", "tol", "fd_step", "seed", "out", "csv"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(s, key, value)
    if getattr(args, "volume_preserving", False):
        s.volume_preserving = True
    if getattr(args, "params", None):
        s.params = {**s.params, **_parse_params(args.params)}
    for key in ("points", "quad", "richardson_levels"):
        value = getattr(s, key)
        if value is not None and value < (0 if key == "richardson_levels" else 1):
            raise ConfigError(f"/{key}", "out of range")
    for key in ("tol", "fd_step"):
        value = getattr(s, key)
        if value is not None and not value > 0:
            raise ConfigError(f"/{key}", "must be positive")
    return s


def build_geometry(s: Settings):
    if s.geometry is None:
        raise ConfigError("/geometry", "no geometry given")
    if isinstance(s.geometry, dict):
        return geometry_from_json(s.geometry, "custom", "/geometry")
    if s.geometry not in catalog.CATALOG:
        raise ConfigError("/geometry", f"unknown geometry {s.geometry!r}; see `catalog list`")
    try:
        return catalog.get(s.geometry, **s.params)
    except (TypeError, ValueError) as exc:
        raise ConfigError("/params", str(exc)) from None


def build_domain(s: Settings, geo):
    quad = s.quad or (12 if geo.dim <= 3 else 8)
    return variation.make_domain(geo, box=s.domain, quad=quad, bump_quad=quad)


# subcommands -------------------------------------------------------------------


def run_identities(s: Settings) -> list[dict]:
    geo = build_geometry(s)
    tol = s.tol or DEFAULT_TOL["identities"]
    res = identities.run_identities(geo, points=s.points or 200, seed=s.seed, tol=tol)
    return [check_record(r.check_name, geo.name, r.n_points, r.max_residual, tol) for r in res]


def _el_records(geo, s: Settings, systems, tol, strict: bool, volume_preserving: bool) -> list[dict]:
    domain = build_domain(s, geo)
    pts = sample_points(geo, s.points or 200, seed=s.seed, box=domain.box)
    out = []
    for system in systems:
        try:
            r = variation.el_residual(geo, pts, system, domain=domain, volume_preserving=volume_preserving)
        except HypothesisViolated as exc:
            if strict:
                raise ConfigError("/system", f"{system} does not apply to {geo.name}: {exc}") from None
            continue
        cross = {k: r.max(k) for k in r.fields if k != "main" and not k.startswith("structure:")}
        out.append(check_record(f"el:{system}", geo.name, len(pts), r.max(), tol, "point",
                                sstar=r.sstar, volume_preserving=volume_preserving, cross_checks=cross))
    return out


def run_el(s: Settings) -> list[dict]:
    geo = build_geometry(s)
    systems = [s.system] if s.system else list(variation.SYSTEMS)
    if s.system and s.system not in variation.SYSTEMS:
        raise ConfigError("/system", f"unknown system {s.system!r}; expected one of {variation.SYSTEMS}")
    return _el_records(geo, s, systems, s.tol or DEFAULT_TOL["el"], strict=bool(s.system), volume_preserving=s.volume_preserving)


def run_variation(s: Settings) -> list[dict]:
    """First-variation lemmas and action derivatives for one random family per block."""
    geo = build_geometry(s)
    domain = build_domain(s, geo)
    step, levels = s.fd_step, s.richardson_levels
    out = []
    for i, kind in enumerate(variation.KINDS):
        fam = variation.random_family(geo, domain, seed=s.seed + i, kind=kind)
        tag = f"{kind}:"
        checks = variation.first_variation_check(fam, points=s.points or 32, seed=s.seed, step=step, levels=levels,
                                                 tol_point=s.tol or 1e-6, tol_int=s.tol or 1e-5)
        for which in variation.ACTIONS:
            checks += variation.action_derivative_check(fam, which, step, levels, tol=s.tol or 1e-5, normalized=s.volume_preserving)
        for c in checks:
            out.append(check_record(tag + c.name, geo.name, c.n_points, c.residual, c.tol, c.mode, **({"details": c.details} if c.details else {})))
        if s.volume_preserving:
            phi = variation.phi_prime_check(fam, step, levels)
            out.append(check_record(tag + "phi_prime", geo.name, 0, phi["phi_prime_residual"], s.tol or 1e-6, "integrated",
                                    details={"fd": phi["phi_prime_fd"], "closed_form": phi["phi_prime_closed"]}))
            out.append(check_record(tag + "dt_normalized_volume", geo.name, 0, abs(phi["dvol_dt"]), s.tol or 1e-8, "integrated"))
    return out


def run_action(s: Settings) -> list[dict]:
    """J_mix and J_ex over Ω; the residual is the relative change when the quadrature order doubles."""
    geo = build_geometry(s)
    domain = build_domain(s, geo)
    tol = s.tol or DEFAULT_TOL["action"]
    pts, _ = domain.grid("plain")
    out = []
    for which in variation.ACTIONS:
        r = variation.action_value(geo, domain, which, tol=tol)
        out.append(check_record(f"J_{which}", geo.name, len(pts), r.rel_change, tol, "integrated", value=r.value, refined=r.refined))
    return out


def run_catalog(s: Settings, name: str) -> list[dict]:
    """Identities, the expected critical systems and construction-specific checks of one catalog entry."""
    if name not in catalog.CATALOG:
        raise ConfigError("/geometry", f"unknown geometry {name!r}; see `catalog list`")
    s.geometry = name
    geo = build_geometry(s)
    out = run_identities(s)
    tol = s.tol or DEFAULT_TOL["catalog"]
    systems = geo.flags.get("critical", [])
    out += _el_records(geo, s, systems, tol, strict=True, volume_preserving=bool(geo.flags.get("volume_preserving")))
    pts = sample_points(geo, min(s.points or 200, 64), seed=s.seed)
    if getattr(geo, "twist", None) is not None:
        res = catalog.twisted_checks(geo, pts)
        keys = ["h", "H", "h_tilde", "H_tilde"]
        if "mix-perp" in systems:
            keys += ["f1_along_second_factor", "leafwise_harmonic", "r_conformal"]
        out += [check_record(f"twisted:{k}", geo.name, len(pts), res[k].max(), tol) for k in keys]
    if geo.flags.get("conformal_submersion"):
        res = catalog.conformal_submersion_checks(geo, pts)
        keys = ["h_tilde", "H_tilde", "S_mix"] + (["fiber_harmonic"] if systems else [])
        out += [check_record(f"conformal_submersion:{k}", geo.name, len(pts), res[k].max(), tol) for k in keys]
    if getattr(geo, "poisson", None) is not None:
        res = geo.z0_residual
        counts = {"slice": res["grid"] ** 2, "box": res["grid"] ** 3}
        out += [check_record(f"poisson:div_H_tilde_minus_Z0:{k}", geo.name, counts[k], res[k], tol, "grid") for k in counts]
    return out


def catalog_listing() -> list[dict]:
    rows = []
    for name, fn in catalog.CATALOG.items():
        geo = fn()
        rows.append({
            "name": name,
            "kind": "builtin" if name in catalog.BUILTINS else "construction",
            "n": geo.n,
            "p": geo.p,
            "signature_q": geo.metric.q,
            "flags": _plain(geo.flags),
            "params": _plain(geo.params),
        })
    return rows


# entry point -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="JSON config; keys mirror the flags")
    p.add_argument("--geometry", metavar="NAME", help="catalog name (a chart object is accepted in the config)")
    p.add_argument("--system", metavar="NAME", help="Euler-Lagrange system, see docs")
    p.add_argument("--points", type=int, metavar="N", help="number of sample points")
    p.add_argument("--quad", type=int, metavar="N", help="Gauss-Legendre points per axis")
    p.add_argument("--tol", type=float, metavar="X", help="pass threshold on the residual")
    p.add_argument("--fd-step", dest="fd_step", type=float, metavar="X", help="finite-difference step in t")
    p.add_argument("--volume-preserving", action="store_true", help="use volume-normalized variations")
    p.add_argument("--seed", type=int, metavar="N", help="sampling and family seed")
    p.add_argument("--out", metavar="PATH", help="write the JSON report here instead of stdout")
    p.add_argument("--csv", metavar="PATH", help="also write CSV rows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixedcurv", description="Identity, variation and Euler-Lagrange checks on almost-product charts.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("identities", "pointwise curvature identities"),
        ("variation", "first-variation formulas and action derivatives by finite differences"),
        ("el", "Euler-Lagrange residuals"),
        ("action", "action values by quadrature"),
    ]:
        _common(sub.add_parser(name, help=help_))
    cat = sub.add_parser("catalog", help="list or run the example geometries")
    cat_sub = cat.add_subparsers(dest="catalog_command", required=True)
    cat_sub.add_parser("list", help="names, ranks and flags")
    run = cat_sub.add_parser("run", help="run the checks attached to one entry")
    run.add_argument("name")
    run.add_argument("--params", nargs="*", metavar="K=V", help="constructor parameters")
    _common(run)
    sub.add_parser("schema", help="print the chart JSON schema")
    return parser


def _write(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "schema":
            _write(json.dumps(CHART_SCHEMA, indent=2) + "\n", None)
            return 0
        if args.command == "catalog" and args.catalog_command == "list":
            _write(json.dumps({"report_version": REPORT_VERSION, "geometries": catalog_listing()}, indent=2) + "\n", None)
            return 0
        s = resolve(args)
        if args.command == "catalog":
            checks = run_catalog(s, args.name)
        else:
            checks = {"identities": run_identities, "variation": run_variation, "el": run_el, "action": run_action}[args.command](s)
        _write(emit_report(checks, s.csv), s.out)
        return exit_code(checks)
    except ConfigError as exc:
        print(f"config error at {exc.pointer or '/'}: {str(exc).split(': ', 1)[-1]}", file=sys.stderr)
        return 2
    except MixedCurvError as exc:
        # the chart or parameters do not admit the computation
        print(f"config error at /geometry: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
