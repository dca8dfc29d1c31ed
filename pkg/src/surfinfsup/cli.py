"""Command-line front end.

Exit status: 0 success, 1 a check failed (bound, order or solver diagnosis),
2 usage or configuration error.  Failures print a JSON error record on stderr.

Settings may come from a flat ``key = value`` file given with ``--config``;
flags on the command line override it.  Grammar::

    file    := { line "\\n" }
    line    := blank | "#" text | key "=" value [ "#" text ]
    key     := option name, "-" and "_" interchangeable (e.g. level, min_order)
    value   := '"' text '"' | number | "true" | "false" | item { "," item }
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import assemble
from .errors import (BoundViolation, CapacityError, ConfigurationError, GeometryError,
                     ParameterError, SolverError, SurfInfSupError)
from .geometry import compute_geometry
from .infsup import InfSupProblem, h_sweep, infsup_constant
from .mesh import SURFACE_KINDS, generate_surface, refine
from .meshio import load_mesh, save_mesh
from .mixed import (FORMULATIONS, MixedProblem, ibp_residual, normal_load, smooth_tension,
                    solve_mixed, tension_load, translation_load, write_vtk)
from .oracle import (check_bounds, estimate_regularity_constant, proof_constants,
                     random_pairs)

PRNG = "numpy.random.PCG64"
COMMANDS = ("mesh", "geometry", "infsup", "stabilized", "oracle", "solve", "ibp-check", "sweep")

DEFAULTS = {
    "surface": "sphere",
    "params": None,
    "path": None,
    "level": 3,
    "levels": "2,3,4",
    "ell": "auto",
    "delta": None,
    "norm": None,
    "form": None,
    "formulation": "inextensible",
    "load": "tension",
    "direction": "1,0,0",
    "out": None,
    "vtk": None,
    "seed": 0,
    "samples": 100,
    "tol": 0.25,
    "min_order": 1.0,
    "allow_unstable": False,
    "json": False,
}


class UsageError(SurfInfSupError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ------------------------------------------------------------------ config

_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_-]*$")


def parse_config(text: str) -> dict:
    """Parse the flat key-value format; unknown keys are an error."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not _KEY.match(key):
            raise ConfigurationError(f"config line {lineno}: bad key {key!r}")
        if key not in DEFAULTS:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        if key in out:
            raise ConfigurationError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = _parse_value(value, lineno)
    return out


def _parse_value(value: str, lineno: int):
    if value.startswith('"'):
        end = value.find('"', 1)
        if end < 0:
            raise ConfigurationError(f"config line {lineno}: unterminated string")
        rest = value[end + 1:].strip()
        if rest and not rest.startswith("#"):
            raise ConfigurationError(f"config line {lineno}: trailing text after string")
        return value[1:end]
    value = value.split("#", 1)[0].strip()
    if not value:
        raise ConfigurationError(f"config line {lineno}: empty value")
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    # numbers and lists stay strings; the option parser converts them
    return value


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("surface")
    g.add_argument("--config", help="key = value settings file")
    g.add_argument("--surface", choices=SURFACE_KINDS)
    g.add_argument("--params", "--axes", "--radii", dest="params",
                   help="comma-separated surface parameters (radius | axes | R,r)")
    g.add_argument("--path", help="OFF/OBJ mesh for --surface file")
    g.add_argument("--level", type=int)
    g.add_argument("--levels", help="comma-separated refinement levels")
    g.add_argument("--ell", help="length scale: auto or a positive number")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output file (default: stdout)")
    g.add_argument("--json", action="store_const", const=True, help="JSON instead of CSV")

    p = _Parser(prog="surfinfsup", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"surfinfsup {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sub.add_parser("mesh", parents=[common], help="generate or refine a mesh")
    sub.add_parser("geometry", parents=[common], help="normals, curvature and derived scalars")
    for name, helptext in (("infsup", "discrete inf-sup constant"),
                           ("stabilized", "stabilized (modified) inf-sup constant"),
                           ("sweep", "inf-sup constant over refinement levels")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--form", choices=("tangential", "b-only", "c-full"))
        s.add_argument("--norm", choices=("plain", "lemma"))
        s.add_argument("--delta", type=float)
    s = sub.add_parser("oracle", parents=[common], help="proof constants and bound checks")
    s.add_argument("--samples", type=int)
    s.add_argument("--tol", type=float)
    s = sub.add_parser("solve", parents=[common], help="stabilized mixed solve")
    s.add_argument("--formulation", choices=FORMULATIONS)
    s.add_argument("--load", choices=("translation", "tension", "normal"))
    s.add_argument("--direction", help="translation load vector c as x,y,z")
    s.add_argument("--delta", type=float)
    s.add_argument("--allow-unstable", action="store_const", const=True,
                   help="permit delta = 0 with the equal-order pair")
    s.add_argument("--vtk", help="write the solution as legacy VTK")
    s = sub.add_parser("ibp-check", parents=[common], help="integration-by-parts residual study")
    s.add_argument("--samples", type=int)
    s.add_argument("--min-order", type=float)
    return p


def resolve(argv) -> argparse.Namespace:
    args = build_parser().parse_args(argv)
    values = {k: v for k, v in vars(args).items() if v is not None}
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from exc
        for k, v in parse_config(text).items():
            values.setdefault(k, v)
    merged = {**DEFAULTS, **values}
    ns = argparse.Namespace(**merged)
    ns.level = _as_int(ns.level, "level")
    ns.seed = _as_int(ns.seed, "seed")
    ns.samples = _as_int(ns.samples, "samples")
    ns.levels = [_as_int(x, "levels") for x in _as_list(ns.levels)]
    ns.params = None if ns.params is None else tuple(_as_float(x, "params") for x in _as_list(ns.params))
    ns.direction = tuple(_as_float(x, "direction") for x in _as_list(ns.direction))
    if ns.ell is None or str(ns.ell).lower() == "auto":
        ns.ell = None
    else:
        ns.ell = _as_float(ns.ell, "ell")
        if not ns.ell > 0:
            raise ConfigurationError("ell must be positive")
    for key in ("delta", "tol", "min_order"):
        if getattr(ns, key) is not None:
            setattr(ns, key, _as_float(getattr(ns, key), key))
    if ns.surface not in SURFACE_KINDS:
        raise ConfigurationError(f"unknown surface {ns.surface!r}")
    return ns


def _as_list(value):
    if isinstance(value, (list, tuple)):
        return list(value)
    return [s for s in str(value).split(",") if s.strip()]


def _as_int(value, name):
    try:
        return int(str(value))
    except ValueError as exc:
        raise ConfigurationError(f"{name}: expected an integer, got {value!r}") from exc


def _as_float(value, name):
    try:
        x = float(str(value))
    except ValueError as exc:
        raise ConfigurationError(f"{name}: expected a number, got {value!r}") from exc
    if not math.isfinite(x):
        raise ConfigurationError(f"{name}: must be finite")
    return x


# ------------------------------------------------------------------ helpers

def load_surface(ns, level=None):
    level = ns.level if level is None else level
    if ns.surface == "file":
        if not ns.path:
            raise ConfigurationError("--surface file needs --path")
        mesh = load_mesh(ns.path)
        for _ in range(level):
            mesh = refine(mesh)
        return mesh
    return generate_surface(ns.surface, ns.params, level)


def provenance(ns, **extra) -> dict:
    head = {
        "tool": "surfinfsup",
        "version": __version__,
        "command": ns.command,
        "surface": ns.surface,
        "params": list(ns.params) if ns.params else "default",
        "ell": "auto" if ns.ell is None else ns.ell,
        "prng": PRNG,
        "seed": ns.seed,
    }
    if ns.surface == "file":
        head["path"] = str(ns.path)
    head.update(extra)
    return head


def _dump(payload) -> str:
    return json.dumps({"schema": 1, **payload}, indent=2, sort_keys=True,
                      default=_json_default, allow_nan=True) + "\n"


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, tuple):
        return list(x)
    raise TypeError(f"not serializable: {type(x)}")


def _emit(ns, text: str, stdout) -> None:
    if ns.out and ns.command != "mesh":
        Path(ns.out).write_text(text)
    else:
        stdout.write(text)


def _problem(ns, stabilized: bool) -> InfSupProblem:
    form = ns.form or ("c-full" if stabilized else "b-only")
    delta = ns.delta if ns.delta is not None else (1.0 if stabilized else 0.0)
    norm = ns.norm or ("lemma" if form == "c-full" else "plain")
    if form == "tangential":
        return InfSupProblem.preset("tangential", stabilization_weight=delta)
    return InfSupProblem(form=form, multiplier_norm=norm, stabilization_weight=delta)


def _setup(ns, level=None):
    mesh = load_surface(ns, level)
    geom = compute_geometry(mesh, ns.ell)
    ops = assemble(mesh, geom, ns.ell)
    return mesh, geom, ops


def _orders(h, values):
    out = [None]
    for i in range(1, len(values)):
        a, b = values[i - 1], values[i]
        if a > 0 and b > 0 and h[i] != h[i - 1]:
            out.append(math.log(a / b) / math.log(h[i - 1] / h[i]))
        else:
            out.append(None)
    return out


# ------------------------------------------------------------------ commands

def cmd_mesh(ns, stdout):
    mesh = load_surface(ns)
    mesh.validate()
    if ns.out:
        save_mesh(mesh, ns.out)
    info = {"vertices": mesh.n_vertices, "faces": mesh.n_faces, "edges": mesh.n_edges,
            "euler_characteristic": mesh.euler_characteristic(), "h": mesh.h,
            "area": mesh.area(), "volume": mesh.volume(), "file": ns.out}
    stdout.write(_dump({"provenance": provenance(ns, level=ns.level), "mesh": info}))
    return 0


def cmd_geometry(ns, stdout):
    mesh, geom, _ = _setup(ns)
    _emit(ns, _dump({"provenance": provenance(ns, level=ns.level),
                     "geometry": geom.summary()}), stdout)
    return 0


def cmd_infsup(ns, stdout, stabilized=False):
    problem = _problem(ns, stabilized)
    mesh, geom, ops = _setup(ns)
    res = infsup_constant(problem, ops, geom)
    head = provenance(ns, level=ns.level, form=problem.form,
                      velocity=problem.velocity_constraint, delta=problem.stabilization_weight,
                      norm=problem.multiplier_norm)
    _emit(ns, _dump({"provenance": head, "spectrum": res.summary()}), stdout)
    return 0


def cmd_sweep(ns, stdout):
    if ns.surface == "file":
        raise ConfigurationError("sweep needs an analytic surface")
    problem = _problem(ns, stabilized=bool(ns.delta))
    head = provenance(ns, levels=" ".join(map(str, ns.levels)), form=problem.form,
                      velocity=problem.velocity_constraint, delta=problem.stabilization_weight,
                      norm=problem.multiplier_norm)
    table = h_sweep(problem, ns.surface, ns.params, ns.levels, ns.ell, header=head)
    _emit(ns, table.to_json() + "\n" if ns.json else table.to_csv(), stdout)
    return 0 if all(r["status"] == "ok" for r in table.rows) else 1


def cmd_oracle(ns, stdout):
    mesh, geom, ops = _setup(ns)
    c_r = estimate_regularity_constant(ops, samples=32, seed=ns.seed)
    cert = proof_constants(geom, ns.ell, c_r_est=c_r)
    pairs = random_pairs(ops, ns.samples, seed=ns.seed + 1)
    report = check_bounds(pairs, mesh, geom, ops, cert, tol=ns.tol)
    head = provenance(ns, level=ns.level, samples=ns.samples, tol=ns.tol, norm="lemma")
    _emit(ns, _dump({"provenance": head, "certificate": cert.to_dict(),
                     "bounds": report.to_dict()}), stdout)
    if not report.passed:
        raise BoundViolation(f"{len(report.failures())} of {ns.samples} samples violate a bound")
    return 0


def cmd_solve(ns, stdout):
    mesh, geom, ops = _setup(ns)
    if ns.load == "translation":
        if len(ns.direction) != 3:
            raise ConfigurationError("direction needs three components")
        f = translation_load(ops, ns.direction)
    elif ns.load == "tension":
        f = tension_load(ops, smooth_tension(mesh, ops))
    else:
        f = normal_load(ops)
    delta = 1.0 if ns.delta is None else ns.delta
    problem = MixedProblem(ns.formulation, f, mesh, geom, ops, stabilization_weight=delta,
                           allow_unstable=bool(ns.allow_unstable))
    sol = solve_mixed(problem)
    if ns.vtk:
        write_vtk(ns.vtk, mesh, sol, geom)
    head = provenance(ns, level=ns.level, formulation=ns.formulation, load=ns.load, delta=delta)
    _emit(ns, _dump({"provenance": head, "solution": sol.summary()}), stdout)
    return 0


def cmd_ibp(ns, stdout):
    """Residual of the integration-by-parts identity for smooth sigma, v and random v."""
    rng = np.random.default_rng(ns.seed)
    coeffs = rng.standard_normal((max(ns.samples, 1), 3, 3))
    rows = []
    for level in ns.levels:
        mesh, geom, ops = _setup(ns, level)
        x = mesh.vertices
        sigma = x[:, 0] * x[:, 1] + x[:, 2]
        v = np.stack([np.sin(x[:, 1]), x[:, 2] ** 2, x[:, 0]], axis=1)
        smooth = abs(ibp_residual(sigma, v, mesh, geom, ops))
        # random smooth fields: v_c = sum_k a_ck sin(x_k + b)
        worst = 0.0
        for a in coeffs:
            vr = np.sin(x @ a.T + 0.3)
            worst = max(worst, abs(ibp_residual(sigma, vr, mesh, geom, ops)))
        rows.append({"level": level, "h": mesh.h, "residual": smooth, "random_max": worst})
    h = [r["h"] for r in rows]
    for key in ("residual", "random_max"):
        for r, o in zip(rows, _orders(h, [r[key] for r in rows])):
            r[f"order_{key}"] = o
    observed = [r["order_residual"] for r in rows[1:]]
    ok = all(o is not None and o >= ns.min_order for o in observed)
    head = provenance(ns, levels=" ".join(map(str, ns.levels)), samples=ns.samples,
                      min_order=ns.min_order)
    if ns.json:
        text = _dump({"provenance": head, "rows": rows, "passed": ok})
    else:
        buf = io.StringIO()
        for k, v in head.items():
            buf.write(f"# {k}: {v}\n")
        cols = ["level", "h", "residual", "order_residual", "random_max", "order_random_max"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c])
                        for c in cols])
        text = buf.getvalue()
    _emit(ns, text, stdout)
    if not ok:
        raise BoundViolation(f"observed order below {ns.min_order}")
    return 0


HANDLERS = {
    "mesh": cmd_mesh,
    "geometry": cmd_geometry,
    "infsup": cmd_infsup,
    "stabilized": lambda ns, out: cmd_infsup(ns, out, stabilized=True),
    "oracle": cmd_oracle,
    "solve": cmd_solve,
    "ibp-check": cmd_ibp,
    "sweep": cmd_sweep,
}

USAGE_ERRORS = (UsageError, ConfigurationError, ParameterError, CapacityError, GeometryError)


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        ns = resolve(sys.argv[1:] if argv is None else list(argv))
        return HANDLERS[ns.command](ns, stdout)
    except USAGE_ERRORS as exc:
        stderr.write(_dump(exc.record()))
        return 2
    except (SolverError, BoundViolation, SurfInfSupError) as exc:
        stderr.write(_dump(exc.record()))
        return 1
    except OSError as exc:
        stderr.write(_dump({"error": "io", "message": str(exc)}))
        return 2
    except Exception as exc:  # keep the machine-readable contract for unexpected faults
        stderr.write(_dump({"error": "internal", "message": f"{type(exc).__name__}: {exc}"}))
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
