"""Command line interface: simulate, check, rate, moments, burgers, report.

Configuration is a JSON document validated against a strict schema (unknown
keys rejected); polynomial fields use the expression mini-grammar.  Exit
codes: 0 success, 1 at least one check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .algebra import ticks
from .checks import CheckContext, CheckReport, run_suite
from .expressions import ExpressionError, parse_poly
from .moments import burgers_residual, semicircle_density, ubm_moment
from .oracles import EmpiricalOracle, Sigma0FrBMOracle, x_moments_from_matrices
from .rate import DriftSpec, rate_of_potential, rate_term
from .sim import DriftConfig, SimConfig, XSpec, save_ensemble, simulate_paths

__all__ = ["main", "run", "load_config", "emit_report", "ConfigError"]


class ConfigError(ValueError):
    """Invalid run configuration (maps to exit code 2)."""


CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["sim"],
    "properties": {
        "sim": {
            "type": "object",
            "additionalProperties": False,
            "required": ["N", "T", "dt", "samples", "seed"],
            "properties": {
                "N": {"type": "integer", "minimum": 1},
                "n": {"type": "integer", "minimum": 1},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "dt": {"type": "number", "exclusiveMinimum": 0},
                "snapshot_times": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "b_grid": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "b_components": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "samples": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "R": {"type": "number", "exclusiveMinimum": 0},
                "x_spec": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["diagonal", "zero", "file"]},
                        "path": {"type": ["string", "null"]},
                    },
                },
                "threads": {"type": ["integer", "null"], "minimum": 1},
                "max_bytes": {"type": "integer", "minimum": 1},
            },
        },
        "drift": {
            "type": "object",
            "additionalProperties": False,
            "required": ["potential"],
            "properties": {
                "potential": {"type": "string"},
                "mode": {"enum": ["symbolic", "mc"]},
                "inner_samples": {"type": "integer", "minimum": 1},
            },
        },
        "checks": {"type": "array", "items": {"type": "string"}},
        "rate": {
            "type": "object",
            "additionalProperties": False,
            "required": ["a", "T"],
            "properties": {
                "a": {"type": "string"},
                "T": {"type": "number", "exclusiveMinimum": 0},
                "grid_points": {"type": "integer", "minimum": 2},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "formats": {"type": "array", "items": {"enum": ["json", "csv"]}},
            },
        },
    },
}


def load_config(path: str) -> dict:
    """Read and validate a run configuration; raises ConfigError."""
    import jsonschema

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {e.message}")
    return doc


def build_sim_config(doc: dict) -> SimConfig:
    sim = doc["sim"]
    drift = None
    if "drift" in doc:
        try:
            potential = parse_poly(doc["drift"]["potential"])
        except ExpressionError as exc:
            raise ConfigError(f"drift potential: {exc}") from exc
        drift = DriftConfig(
            potential=potential,
            mode=doc["drift"].get("mode", "symbolic"),
            inner_samples=doc["drift"].get("inner_samples", 8),
        )
    xs = sim.get("x_spec", {})
    try:
        return SimConfig(
            N=sim["N"],
            n=sim.get("n", 1),
            T=sim["T"],
            dt=sim["dt"],
            snapshot_times=tuple(sim.get("snapshot_times", ())),
            b_grid=tuple(sim.get("b_grid", ())),
            b_components=tuple(sim.get("b_components", (1,))),
            samples=sim["samples"],
            seed=sim["seed"],
            R=sim.get("R", 1.0),
            x_spec=XSpec(kind=xs.get("kind", "diagonal"), path=xs.get("path")),
            drift=drift,
            threads=sim.get("threads"),
            max_bytes=sim.get("max_bytes", 6 * 1024**3),
        )
    except (ValueError, MemoryError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _num(z) -> object:
    z = complex(z)
    if z.imag == 0:
        return z.real
    return {"re": z.real, "im": z.imag}


def report_dict(r: CheckReport) -> dict:
    return {
        "name": r.name,
        "observed": _num(r.observed),
        "expected": _num(r.expected),
        "tolerance": r.tolerance,
        "stderr": r.stderr,
        "pass": r.passed,
        "params": _jsonable(r.params),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return _num(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def render_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "observed", "expected", "tol", "stderr", "pass"])
    for r in reports:
        w.writerow(
            [
                r.name,
                _fmt_complex(r.observed),
                _fmt_complex(r.expected),
                f"{r.tolerance:.12g}",
                f"{r.stderr:.12g}",
                str(r.passed).lower(),
            ]
        )
    return buf.getvalue()


def _fmt_complex(z) -> str:
    z = complex(z)
    if z.imag == 0:
        return f"{z.real:.12g}"
    return f"{z.real:.12g}{z.imag:+.12g}i"


def emit_report(reports, out_dir: str, formats=("json", "csv"), extras=None) -> list:
    """Write report files (and any extra plot-ready data files); returns paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    if "json" in formats:
        path = os.path.join(out_dir, "report.json")
        doc = {"version": __version__, "reports": [report_dict(r) for r in reports]}
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    if "csv" in formats:
        path = os.path.join(out_dir, "report.csv")
        with open(path, "w") as fh:
            fh.write(render_csv(reports))
        written.append(path)
    for name, rows in (extras or {}).items():
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            for row in rows:
                fh.write(" ".join(f"{v:.12g}" for v in row) + "\n")
        written.append(path)
    return written


def histogram_columns(eigenvalues, t: float, bins: int = 61):
    """Plot-ready columns (x, empirical density, theoretical density)."""
    edge = 2.0 * (t**0.5)
    hist, edges = np.histogram(
        np.asarray(eigenvalues).ravel(), bins=bins, range=(-edge - 0.5, edge + 0.5), density=True
    )
    centers = 0.5 * (edges[:-1] + edges[1:])
    return [
        (float(c), float(h), semicircle_density(t, float(c)))
        for c, h in zip(centers, hist)
    ]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_moments(args) -> int:
    rows = ["n,t,m"]
    for n in args.n:
        for t in args.t:
            m = ubm_moment(n, t)
            if abs(m) < 1e-12:
                m = 0.0  # integrator dust below the moment tolerance
            rows.append(f"{n},{t:g},{m:.12g}")
    text = "\n".join(rows) + "\n"
    _write_text(args.out, text)
    return 0


def _cmd_burgers(args) -> int:
    rows = ["t,re_z,im_z,residual"]
    for t in args.t:
        for z in args.z:
            z = complex(z.replace("i", "j"))
            rows.append(f"{t:g},{z.real:g},{z.imag:g},{burgers_residual(t, z):.12g}")
    text = "\n".join(rows) + "\n"
    _write_text(args.out, text)
    return 0


def _write_text(out, text):
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_simulate(args) -> int:
    doc = load_config(args.config)
    cfg = build_sim_config(doc)
    if args.seed is not None:
        cfg = _replace_cfg(cfg, seed=args.seed)
    if args.samples is not None:
        cfg = _replace_cfg(cfg, samples=args.samples)
    if args.threads is not None:
        cfg = _replace_cfg(cfg, threads=args.threads)
    ensemble = simulate_paths(cfg)
    save_ensemble(ensemble, args.out)
    print(f"wrote {args.out} ({cfg.samples} samples, N={cfg.N}, n={cfg.n})")
    return 0


def _replace_cfg(cfg: SimConfig, **kw) -> SimConfig:
    from dataclasses import replace

    return replace(cfg, **kw)


def _cmd_check(args) -> int:
    doc = load_config(args.config)
    cfg = build_sim_config(doc)
    names = args.suite.split(",") if args.suite and args.suite != "all" else "all"
    if names == "all" and doc.get("checks"):
        names = doc["checks"]
    ctx = CheckContext(cfg)
    try:
        reports = run_suite(names, ctx)
    except KeyError as exc:
        raise ConfigError(str(exc)) from exc
    out_dir = args.report or doc.get("output", {}).get("dir", ".")
    formats = tuple(doc.get("output", {}).get("formats", ("json", "csv")))
    extras = {}
    if any(r.name.startswith("lemma4_10") for r in reports):
        try:
            ens = ctx.ensemble()
            b = ens.b_stack(1, ticks(1.0))
            herm = 0.5 * (b + b.conj().transpose(0, 2, 1))
            extras["semicircle_hist.dat"] = histogram_columns(
                np.linalg.eigvalsh(herm), 1.0
            )
        except Exception:
            pass  # histogram is best-effort; the reports already carry the check
    emit_report(reports, out_dir, formats, extras)
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        print(f"{status:4s} {r.name}: observed={_fmt_complex(r.observed)} "
              f"expected={_fmt_complex(r.expected)} tol={r.tolerance:.3g}")
    return 0 if all(r.passed for r in reports) else 1


def _cmd_rate(args) -> int:
    doc = load_config(args.config)
    if "rate" not in doc:
        raise ConfigError("config has no rate section")
    cfg = build_sim_config(doc)
    try:
        a = parse_poly(doc["rate"]["a"])
    except ExpressionError as exc:
        raise ConfigError(f"rate.a: {exc}") from exc
    T = doc["rate"]["T"]
    pts = doc["rate"].get("grid_points", 33)
    grid = [k * T / (pts - 1) for k in range(pts)]
    ensemble = simulate_paths(cfg)
    oracle = EmpiricalOracle(ensemble)
    reference = Sigma0FrBMOracle(
        x_moments_from_matrices({j: ensemble.X(j) for j in _x_indices(a)} or {1: ensemble.X(1)})
    )
    value = rate_term(oracle, reference, a, T, grid, cfg.n)
    result = {"rate_term": value}
    if cfg.drift is not None:
        spec = DriftSpec(cfg.drift.potential, cfg.n)
        result["rate_of_potential"] = rate_of_potential(oracle, cfg.drift.potential, grid, cfg.n)
        result["drift_support_end"] = max(
            (k for k in spec.letter_ticks), default=0
        ) * 1e-6
    _write_text(args.out, json.dumps(result, indent=2, sort_keys=True) + "\n")
    return 0


def _x_indices(p):
    return sorted({l[2] for l in p.letters() if l[0] == "x"})


def _cmd_report(args) -> int:
    with open(args.input) as fh:
        doc = json.load(fh)
    reports = doc["reports"] if isinstance(doc, dict) else doc
    rows = ["name,observed,expected,tol,stderr,pass"]
    for r in reports:
        obs = r["observed"]
        obs = obs if not isinstance(obs, dict) else f"{obs['re']:.12g}{obs['im']:+.12g}i"
        exp = r["expected"]
        exp = exp if not isinstance(exp, dict) else f"{exp['re']:.12g}{exp['im']:+.12g}i"
        rows.append(f"{r['name']},{obs},{exp},{r['tolerance']},{r['stderr']},{str(r['pass']).lower()}")
    _write_text(args.out, "\n".join(rows) + "\n")
    return 0


def _float_list(text: str):
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liblab", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run an ensemble and write a path store")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True, help="path store output file")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--samples", type=int)
    sim.add_argument("--threads", type=int)
    sim.set_defaults(fn=_cmd_simulate)

    chk = sub.add_parser("check", help="run named verification checks")
    chk.add_argument("--suite", default="all", help="comma separated names or 'all'")
    chk.add_argument("--config", required=True)
    chk.add_argument("--report", help="report output directory")
    chk.set_defaults(fn=_cmd_check)

    rate = sub.add_parser("rate", help="evaluate the rate functional")
    rate.add_argument("--config", required=True)
    rate.add_argument("--out")
    rate.set_defaults(fn=_cmd_rate)

    mom = sub.add_parser("moments", help="free unitary BM moments as CSV")
    mom.add_argument("--n", type=lambda s: [int(v) for v in s.split(",")], required=True)
    mom.add_argument("--t", type=_float_list, required=True)
    mom.add_argument("--out")
    mom.set_defaults(fn=_cmd_moments)

    bur = sub.add_parser("burgers", help="characteristic-line residuals as CSV")
    bur.add_argument("--t", type=_float_list, required=True)
    bur.add_argument("--z", type=lambda s: s.split(","), required=True)
    bur.add_argument("--out")
    bur.set_defaults(fn=_cmd_burgers)

    rep = sub.add_parser("report", help="convert a JSON report to CSV")
    rep.add_argument("--input", required=True)
    rep.add_argument("--out")
    rep.set_defaults(fn=_cmd_report)
    return ap


def run(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
