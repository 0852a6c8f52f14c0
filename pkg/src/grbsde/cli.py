"""Scenario-driven command line: ``grbsde run | list-generators | version``.

A scenario is a TOML file::

    name = "picard-constant"
    seed = 0
    regime = "picard"              # auto | zero | picard | concatenated | general
    harness = ["ladder-study"]     # transform-check, comparison, dynkin-oracle, ladder-study

    [grid]
    T = 1.0
    N = 100
    jump_marks = [0.5]

    [backend]
    kind = "tree"                  # tree | lsmc
    degree = 3
    M = 10000

    [coefficients]
    xi = { name = "constant", value = 0.0 }
    L = { name = "constant", value = -1.0 }
    U = { name = "constant", value = 0.0 }
    f = { name = "constant", value = -0.5 }

Outputs (``solution.csv``, ``diagnostics.json``, ``manifest.json`` and,
for the ladder study, ``ladder.csv``) are byte-identical for identical
scenario and seed, whatever the thread count.  Exit codes: 0 pass,
1 input error, 2 property violation.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .approx import first_passage_mark
from .core import AdmissibilityError, CoefficientSet, GridError, build_grid, simulate_ensemble
from .generators import catalog, make
from .reflection import FixedPointError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

__all__ = ["main", "run", "load_scenario", "build_coefficients", "list_generators"]

OUT_ENV = "GRBSDE_OUT"
HARNESSES = ("transform-check", "comparison", "dynkin-oracle", "ladder-study")
REGIMES = ("auto", "zero", "picard", "concatenated", "general")
IDENTITY_TOL = 1e-10
SANDWICH_TOL = 1e-12


class InputError(Exception):
    """Malformed or inadmissible scenario (exit code 1)."""


# ---------------------------------------------------------------------------
# scenario parsing
# ---------------------------------------------------------------------------


def load_scenario(path) -> dict:
    try:
        with open(path, "rb") as fh:
            sc = tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"cannot read scenario {path}: {exc}") from None
    sc.setdefault("name", Path(path).stem)
    sc.setdefault("seed", 0)
    sc.setdefault("regime", "auto")
    sc.setdefault("harness", [])
    if isinstance(sc["harness"], str):
        sc["harness"] = [sc["harness"]]
    if sc["regime"] not in REGIMES:
        raise InputError(f"unknown regime {sc['regime']!r}; choose from {', '.join(REGIMES)}")
    for h in sc["harness"]:
        if h not in HARNESSES:
            raise InputError(f"unknown harness {h!r}; choose from {', '.join(HARNESSES)}")
    if "grid" not in sc or "coefficients" not in sc:
        raise InputError("a scenario needs [grid] and [coefficients] sections")
    return sc


def _entry(spec, default="zero"):
    if spec is None:
        return default, {}
    if isinstance(spec, str):
        return spec, {}
    if isinstance(spec, (int, float)):
        return "constant", {"value": float(spec)}
    spec = dict(spec)
    name = spec.pop("name", None)
    if name is None:
        raise InputError(f"generator entry {spec} lacks a name")
    return name, spec


def _make(kind, spec, ens, default="zero"):
    name, params = _entry(spec, default)
    try:
        return make(kind, name, ens, **params)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def build_coefficients(ens, spec: dict, name: str = "") -> CoefficientSet:
    """Coefficient set from a ``[coefficients]`` table."""
    known = {"xi", "L", "U", "f", "g", "h", "A", "R", "S", "eta", "C", "beta", "l", "lipschitz", "marks"}
    unknown = set(spec) - known
    if unknown:
        raise InputError(f"unknown coefficient entries {sorted(unknown)}")
    xi = _make("terminal", spec.get("xi", 0.0), ens, "constant")
    L = _make("barrier", spec.get("L", {"name": "constant", "value": -1.0}), ens, "constant")
    U = _make("barrier", spec.get("U", {"name": "constant", "value": 1.0}), ens, "constant")
    f = _make("f", spec.get("f"), ens)
    g = _make("g", spec.get("g"), ens)
    h = _make("h", spec.get("h"), ens)
    A = _make("integrator", spec.get("A"), ens)
    R = _make("forcing", spec.get("R"), ens)
    S = _make("witness", spec.get("S", "none"), ens, "none")
    eta, C = getattr(f, "growth", (0.0, 0.0))
    lip = spec.get("lipschitz")
    if lip is None:
        consts = [getattr(fn, "lipschitz", None) if not getattr(fn, "is_zero", False) else 0.0
                  for fn in (f, g)]
        lip = None if any(x is None for x in consts) else float(max(consts))
    marks = spec.get("marks")
    if isinstance(marks, dict) and "first_passage" in marks:
        if ens.is_tree:
            raise InputError("first-passage marks need a monte_carlo ensemble")
        marks = first_passage_mark(ens, float(marks["first_passage"]))
    elif marks is not None:
        marks = [ens.grid.index_of(float(t), tol=1e-9 * ens.grid.T) for t in marks]
    kw = S if isinstance(S, dict) else {}
    return CoefficientSet.build(ens, xi=xi, L=L, U=U, f=f, g=g, h=h, A=A, R=R,
                                eta=spec.get("eta", eta), C=spec.get("C", C), beta=spec.get("beta", 0.0),
                                l=spec.get("l", 0.0), marks=marks, lipschitz=lip, name=name, **kw)


def _ensemble(sc: dict, threads: int):
    gs = sc["grid"]
    grid = build_grid(float(gs.get("T", 1.0)), int(gs.get("N", 16)), tuple(gs.get("jump_marks", ())))
    bs = sc.get("backend", {})
    kind = bs.get("kind", "tree")
    mode = "tree" if kind == "tree" else "monte_carlo"
    M = bs.get("M", 10_000) if mode == "monte_carlo" else None
    return simulate_ensemble(grid, mode, M, int(sc["seed"]), threads)


def _backend_spec(sc: dict):
    from .solver import BackendSpec

    bs = sc.get("backend", {})
    kind = bs.get("kind", "tree")
    M = bs.get("M", 10_000) if kind == "lsmc" else None
    return BackendSpec(kind, int(bs.get("degree", 3)), M)


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------


def _solve(c: CoefficientSet, regime: str, raw: bool, backend, opts: dict):
    """Solve, rescaling into the admissible box first unless ``raw``."""
    from .solver import rescale_to_box, solve

    rescale = None
    target = c
    if not raw and not c.in_box:
        try:
            target, rescale = rescale_to_box(c)
        except AdmissibilityError as exc:
            raise InputError(f"{exc}; pass --raw to solve on the original scale") from None
    if regime == "general":
        opts = {"raw": raw or rescale is not None, **opts}
    rep = solve(target, backend, regime, **opts)
    sol = rep.solution if rescale is None else rescale.undo(rep.solution)
    return rep, sol, rescale


def _regime_options(sc: dict, regime: str) -> dict:
    so = dict(sc.get("solver", {}))
    allowed = {
        "zero": set(),
        "picard": {"max_iter", "tol", "implicit"},
        "concatenated": {"method", "tol", "max_iter", "implicit"},
        "general": {"N_max", "tol", "enforce_order", "min_levels", "mono_tol", "grid_points", "method"},
        "auto": set(),
    }[regime]
    return {k: v for k, v in so.items() if k in allowed}


def _resolve_regime(c: CoefficientSet, regime: str) -> str:
    from .core import is_zero

    if regime != "auto":
        return regime
    if is_zero(c.f) and is_zero(c.g) and is_zero(c.h):
        return "zero"
    if c.lipschitz is not None:
        return "picard" if is_zero(c.h) else "concatenated"
    return "general"


def _violations(diag: dict) -> list[str]:
    out = []
    if not diag.get("minimality_ok", True):
        out.append("minimality residual above 10 dt (total K mass)")
    if diag.get("singularity_max", 0.0) > 0.0:
        out.append("simultaneous pushes (min(dK+, dK-) > 0)")
    if diag.get("sandwich_violation", 0.0) > SANDWICH_TOL:
        out.append("barrier sandwich violated")
    if diag.get("step_identity_residual", 0.0) > IDENTITY_TOL:
        out.append("projection identity residual")
    if diag.get("jump_identity_residual", 0.0) > IDENTITY_TOL:
        out.append("jump identity residual")
    return out


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    return "%.17g" % x


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return obj


def _dump_json(path: Path, obj):
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def _solution_csv(sol, c: CoefficientSet, max_paths: int) -> tuple[str, int]:
    ens = sol.ensemble
    grid = ens.grid
    N = grid.N
    marks = set(grid.jump_marks)
    if not isinstance(c.marks, np.ndarray):
        marks |= set(c.marks)
    cols = range(ens.width) if ens.is_tree else range(min(max_paths, ens.width))
    Kp = np.zeros((N + 1, ens.width))
    Km = np.zeros((N + 1, ens.width))
    Kp[1:] = np.cumsum(sol.Kplus.continuous, axis=0)
    Km[1:] = np.cumsum(sol.Kminus.continuous, axis=0)
    Kp += np.cumsum(sol.Kplus.jumps, axis=0)
    Km += np.cumsum(sol.Kminus.jumps, axis=0)
    buf = io.StringIO()
    buf.write("t,node,path,Y,Z,Kplus_cum,Kminus_cum,left_Y_at_marks\n")
    rows = 0
    for i in range(N + 1):
        t = _fmt(grid.nodes[i])
        for k in cols:
            if ens.is_tree and k > i:
                break
            z = _fmt(sol.Z[i, k]) if i < N else ""
            left = _fmt(sol.Y.left[i, k]) if i in marks else ""
            buf.write(f"{t},{i},{k},{_fmt(sol.Y.right[i, k])},{z},{_fmt(Kp[i, k])},{_fmt(Km[i, k])},{left}\n")
            rows += 1
    return buf.getvalue(), rows


def _out_dir(args_out, sc: dict) -> Path:
    if args_out:
        return Path(args_out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    return Path(sc.get("output_dir", Path("out") / sc["name"]))


def _config_hash(sc: dict) -> str:
    canon = json.dumps(_clean(sc), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


# ---------------------------------------------------------------------------
# harnesses
# ---------------------------------------------------------------------------


def _harness_transform(sc, c, sol) -> dict:
    from .transform import build_m, forward_map_solution, forward_transform, inverse_transform, verify_bounds

    opts = sc.get("transform", {})
    try:
        ctx = build_m(c)
    except ValueError as exc:
        raise InputError(f"transform-check: {exc}") from None
    try:
        ts = forward_transform(c, ctx)
    except (AdmissibilityError, ValueError) as exc:
        raise InputError(f"transform-check: {exc}") from None
    rep = verify_bounds(ts, samples=int(opts.get("samples", 10_000)), seed=int(sc["seed"]))
    back = inverse_transform(forward_map_solution(sol, ctx), ctx)
    v = c.ensemble.valid
    err = max(float(np.max(np.abs(np.where(v, back.Y.right - sol.Y.right, 0.0)))),
              float(np.max(np.abs(np.where(v, back.Y.left - sol.Y.left, 0.0)))))
    ok = rep.passed and err <= float(opts.get("round_trip_tol", 1e-10))
    return {"bounds": rep.as_dict(), "round_trip_error": err, "passed": ok}


def _harness_comparison(sc, c, sol, backend, ens) -> dict:
    from .comparison import ComparisonCase, check_comparison

    cs = sc.get("comparison", {})
    other = {**sc["coefficients"], **cs.get("coefficients", {})}
    c2 = build_coefficients(ens, other, sc["name"] + ":2")
    role = cs.get("role", "second")
    c1, c2 = (c, c2) if role == "second" else (c2, c)
    case = ComparisonCase(c1, c2, cs.get("hypotheses", "appendix"))
    rep = check_comparison(case, backend)
    out = rep.as_dict()
    if not rep.hypotheses.passed:
        raise InputError(f"comparison hypotheses fail: {', '.join(rep.hypotheses.failed)}")
    return out


def _harness_dynkin(c, Y0) -> dict:
    from .core import is_zero
    from .solver import dynkin_value_bruteforce

    if not c.ensemble.is_tree or not (is_zero(c.f) and is_zero(c.g) and is_zero(c.h)):
        raise InputError("dynkin-oracle needs a tree backend and zero generators")
    try:
        value = dynkin_value_bruteforce(c)
    except ValueError as exc:
        raise InputError(f"dynkin-oracle: {exc}") from None
    return {"game_value": value, "solver_Y0": Y0, "difference": abs(value - Y0),
            "passed": abs(value - Y0) <= 1e-12}


# ---------------------------------------------------------------------------
# entry points
# ---------------------------------------------------------------------------


def run(scenario, out=None, seed=None, raw=False, threads=1, stream=None) -> int:
    """Run a scenario; returns the exit code."""
    from .solver import ConvergenceError, MonotonicityError, RankDeficiency

    stream = stream or sys.stderr
    try:
        sc = load_scenario(scenario)
        if seed is not None:
            sc["seed"] = int(seed) & (2**64 - 1)
        raw = bool(raw or sc.get("raw", False))
        ens = _ensemble(sc, max(1, int(threads)))
        backend = _backend_spec(sc)
        c = build_coefficients(ens, sc["coefficients"], sc["name"])
        regime = sc["regime"]
        if "ladder-study" in sc["harness"]:
            regime = "general"
        regime = _resolve_regime(c, regime)
        rep, sol, rescale = _solve(c, regime, raw, backend, _regime_options(sc, regime))
        diag = {
            "scenario": sc["name"],
            "regime": regime,
            "raw": raw,
            "rescale_kappa": None if rescale is None else rescale.kappa,
            "Y0": sol.Y0,
            "checks": rep.diagnostics,
            "history": rep.history,
            "counters": rep.counters,
            "harness": {},
        }
        violations = _violations(rep.diagnostics)
        files = {}
        outdir = _out_dir(out, sc)
        outdir.mkdir(parents=True, exist_ok=True)
        for h in sc["harness"]:
            if h == "transform-check":
                res = _harness_transform(sc, c, sol)
            elif h == "comparison":
                res = _harness_comparison(sc, c, sol, backend, ens)
            elif h == "dynkin-oracle":
                res = _harness_dynkin(c, sol.Y0)
            else:
                rows = ["n,Y0,sup_gap,monotone,max_increase"]
                for r in rep.history:
                    gap = "" if r["sup_gap"] is None else _fmt(r["sup_gap"])
                    rows.append(f"{r['n']},{_fmt(r['Y0'])},{gap},{int(r['monotone'])},{_fmt(r['max_increase'])}")
                (outdir / "ladder.csv").write_text("\n".join(rows) + "\n")
                files["ladder.csv"] = len(rows) - 1
                res = {"levels": len(rep.history), "passed": bool(rep.diagnostics.get("ladder_monotone", True))}
            diag["harness"][h] = res
            if not res.get("passed", True):
                violations.append(f"{h} failed")
        diag["violations"] = violations
        max_paths = int(sc.get("output", {}).get("paths", 256))
        text, nrows = _solution_csv(sol, c, max_paths)
        (outdir / "solution.csv").write_text(text)
        files["solution.csv"] = nrows
        _dump_json(outdir / "diagnostics.json", diag)
        files["diagnostics.json"] = None
        manifest = {
            "scenario": sc["name"],
            "seed": sc["seed"],
            "config_sha256": _config_hash(sc),
            "versions": {"grbsde": __version__, "numpy": np.__version__,
                         "scipy": __import__("scipy").__version__, "python": platform.python_version()},
            "grid": {"T": ens.grid.T, "N": ens.grid.N},
            "ensemble": {"mode": ens.mode, "width": ens.width,
                         "csv_paths": ens.width if ens.is_tree else min(max_paths, ens.width)},
            "rows": files,
        }
        _dump_json(outdir / "manifest.json", manifest)
    except (InputError, AdmissibilityError, GridError, FixedPointError) as exc:
        print(f"input error: {exc}", file=stream)
        return 1
    except (MonotonicityError, ConvergenceError, RankDeficiency) as exc:
        print(f"property violation: {exc}", file=stream)
        return 2
    except (ValueError, KeyError, TypeError) as exc:
        print(f"input error: {exc}", file=stream)
        return 1
    if violations:
        print("property violation: " + "; ".join(violations), file=stream)
        return 2
    return 0


def list_generators(stream=None) -> list[str]:
    stream = stream or sys.stdout
    lines = []
    for fam in catalog():
        params = ", ".join(f"{k}={v!r}" for k, v in fam.params.items())
        lines.append(f"{fam.kind:<10} {fam.name:<15} {params}  # {fam.doc}".rstrip())
    for line in lines:
        print(line, file=stream)
    return lines


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="grbsde", description="Reflected BSDE numerical laboratory")
    sub = p.add_subparsers(dest="verb", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("--scenario", required=True, help="TOML scenario path")
    r.add_argument("--out", help=f"output directory (else ${OUT_ENV}, else out/<name>)")
    r.add_argument("--seed", type=int, help="override the scenario seed")
    r.add_argument("--raw", action="store_true", help="accept barriers outside the [-1, 1] box")
    r.add_argument("--threads", type=int, default=1, help="worker threads (never changes results)")
    sub.add_parser("list-generators", help="print the built-in coefficient families")
    sub.add_parser("version", help="print the version")
    args = p.parse_args(argv)
    if args.verb == "run":
        return run(args.scenario, args.out, args.seed, args.raw, args.threads)
    if args.verb == "list-generators":
        list_generators()
        return 0
    print(f"grbsde {__version__}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
