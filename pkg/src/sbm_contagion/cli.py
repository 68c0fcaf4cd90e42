"""Command-line front end: ``sbm-contagion <command> --spec FILE [options]``.

Commands
--------
validate     check a specification and print its diagnostics
analyze      resilience verdict, joint roots and limiting default fractions
simulate     Monte Carlo cascades on sampled finite networks
rootset      zero curves of the reduced functions (CSV + PNG)
convergence  simulated fractions across network sizes against the theory (CSV + PNG)

Exit status: 0 success, 1 invalid input, 2 unresolved analysis (the report
is still written).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, analytic, bundled
from .model import SpecError, apply_shock, format_coordinates, parse_coordinates
from .montecarlo import (
    ExperimentConfig,
    analytic_candidates,
    convergence_experiment,
    run_trials,
    write_trials_csv,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_INCONCLUSIVE = 2


class UsageError(Exception):
    """Bad flags or a missing specification; reported with exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# -- helpers ----------------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else ("inf" if x > 0 else "-inf" if x < 0 else "nan")
    return x


def _write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=False) + "\n")


def _provenance(args, spec, extra: dict | None = None) -> dict:
    out = {
        "tool": "sbm-contagion",
        "version": __version__,
        "command": args.command,
        "spec": str(args.spec),
        "spec_sha256": spec.digest(),
        "seed": args.seed,
        "tol": args.tol,
        "eps_floor": args.eps_floor,
    }
    out.update(extra or {})
    return out


def _header_lines(prov: dict) -> list:
    return [f"{k}: {v}" for k, v in _jsonable(prov).items()]


def _load(args):
    try:
        doc = bundled.load_document(args.spec)
    except FileNotFoundError as exc:
        raise UsageError(f"spec file not found: {args.spec}") from exc
    except json.JSONDecodeError as exc:
        raise SpecError(f"{args.spec}: not valid JSON ({exc})") from exc
    return doc, bundled.spec_of(doc)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _shock_sets(args, spec) -> list:
    sets = []
    for text in args.shock_set or []:
        try:
            sets.append(parse_coordinates(text, spec.R, spec.T))
        except ValueError as exc:
            raise UsageError(f"--shock-set {text!r}: {exc}") from exc
    return sets


def _n_grid(args, doc) -> list:
    if args.n_grid:
        try:
            return [int(v) for v in args.n_grid.replace(";", ",").split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"--n-grid must be a comma separated list of integers, got {args.n_grid!r}") from exc
    return list(doc.get("experiment", {}).get("n_grid", [1000]))


def _trials(args, doc) -> int:
    return args.trials if args.trials is not None else int(doc.get("experiment", {}).get("trials", 100))


# -- commands ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    """Check a specification and print its diagnostics."""
    doc, spec = _load(args)
    info = {
        "provenance": _provenance(args, spec),
        "R": spec.R,
        "T": spec.T,
        "atoms": len(spec.atoms),
        "total_mass": spec.total_mass,
        "c_max": spec.c_max,
        "initial_default_mass": spec.initial_default_mass(),
        "initial_default_mass_after_shocks": apply_shock(spec).initial_default_mass(),
        "type_mass": {b + 1: spec.type_mass(b + 1) for b in range(spec.T)},
        "support": format_coordinates(sorted(analytic.support(spec))),
        "zeta": analytic.zeta(spec),
        "description": doc.get("description"),
    }
    if args.out:
        _write_json(_out_dir(args) / "validation.json", info)
    print(f"valid: R={spec.R} T={spec.T} atoms={len(spec.atoms)} c_max={spec.c_max} support={info['support']}")
    return EXIT_OK


def _shocked_analysis(spec, args) -> dict:
    """Joint roots of the system with shocks applied and the bracket they give."""
    shocked = apply_shock(spec)
    sys_ = analytic.System(shocked)
    lo = analytic.least_fixed_point(sys_, tol=args.tol, raise_on_fail=False)
    st = analytic.z_star(sys_, tol=args.tol, eps_min=args.eps_floor, gap_tol=args.resolve_tol)
    hi = analytic.greatest_fixed_point(sys_, tol=args.tol)
    gap = float(np.max(np.abs(st.z - lo.z), initial=0.0))
    determined = lo.converged and st.converged and gap <= args.resolve_tol
    cert = analytic.find_certificate(sys_, lo.z, residual_tol=max(1e-8, 10 * lo.residual))
    integral = analytic.check_root_is_zstar(
        sys_, lo.z, cert.v, "integral", residual_tol=max(1e-8, 10 * lo.residual)
    )

    def gvals(z):
        return {
            "count": sys_.g(z),
            "importance": sys_.g(z, "importance"),
            "per_type": {b + 1: sys_.g(z, vtype=b + 1) for b in range(spec.T)},
        }

    return {
        "initial_default_mass": shocked.initial_default_mass(),
        "z_hat": lo.as_dict(),
        "z_star": st.as_dict(),
        "z_largest": hi.as_dict(),
        "g_z_hat": gvals(lo.z),
        "g_z_star": gvals(st.z),
        "g_z_largest": gvals(hi.z),
        "bracket_sup_norm": gap,
        "certificate_at_z_hat": {"derivative": cert.as_dict(), "integral": integral.as_dict()},
        "status": "determined" if determined else "bracketed",
    }


def cmd_analyze(args) -> int:
    """Resilience verdict, joint roots and limiting default fractions."""
    _, spec = _load(args)
    out = _out_dir(args)
    report = {"provenance": _provenance(args, spec, {"resolve_tol": args.resolve_tol})}
    inconclusive = False
    base = spec.without_shock()
    if base.initial_default_mass() > 0:
        report["resilience"] = {"verdict": "not applicable", "reason": "capital-0 atoms in the unshocked system"}
    else:
        rep = analytic.classify_resilience(
            base, args.tol, _shock_sets(args, spec), resolve_tol=args.resolve_tol, eps_min=args.eps_floor
        )
        report["resilience"] = rep.as_dict()
        inconclusive |= rep.verdict == analytic.INCONCLUSIVE
        print(f"resilience: {rep.verdict} (sup z* = {np.max(rep.z_star, initial=0.0):.6g}, g(z*) = {rep.g_star:.6g})")
    if apply_shock(spec).initial_default_mass() > 0:
        sh = _shocked_analysis(spec, args)
        report["shocked"] = sh
        inconclusive |= sh["status"] != "determined"
        print(
            f"shocked: g(z_hat) = {sh['g_z_hat']['count']:.6g}, g(z*) = {sh['g_z_star']['count']:.6g}, "
            f"|z* - z_hat| = {sh['bracket_sup_norm']:.3g} ({sh['status']})"
        )
    report["status"] = "inconclusive" if inconclusive else "ok"
    _write_json(out / "report.json", report)
    print(f"wrote {out / 'report.json'}")
    return EXIT_INCONCLUSIVE if inconclusive else EXIT_OK


def _config(args, doc, spec) -> ExperimentConfig:
    try:
        return ExperimentConfig(
            spec=spec,
            n_grid=_n_grid(args, doc),
            trials=_trials(args, doc),
            seed=args.seed,
            mode=args.mode,
            threshold=args.threshold,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_simulate(args) -> int:
    """Monte Carlo cascades on sampled finite networks."""
    doc, spec = _load(args)
    out = _out_dir(args)
    cfg = _config(args, doc, spec)
    res = run_trials(cfg)
    prov = _provenance(args, spec, {"mode": cfg.mode, "n_grid": cfg.n_grid, "trials": cfg.trials, "threshold": cfg.threshold})
    write_trials_csv(res.records, spec.T, out / "trials.csv", _header_lines(prov))
    _write_json(out / "summary.json", {"provenance": prov, "per_n": [s.as_dict() for s in res.summary]})
    for s in res.summary:
        print(f"n={s.n}: mean={s.mean:.4f} min={s.min:.4f} max={s.max:.4f} below {cfg.threshold}: {s.below_threshold:.2%}")
    print(f"wrote {out / 'trials.csv'}")
    return EXIT_OK


def _axis_map(doc, spec):
    if "rootset" in doc:
        rs = doc["rootset"]
        return analytic.axis_map_from_dict(rs, spec.R, spec.T), rs
    coords = sorted(analytic.support(spec))
    if not 1 <= len(coords) <= 2:
        raise UsageError("spec has no 'rootset' section and more than two active coordinates; add axes to the spec file")
    shape = (spec.R, spec.T, spec.T)
    dirs = [analytic.tie(shape, {c: 1.0}) for c in coords]
    funcs = [(f"f{i + 1}", c) for i, c in enumerate(coords)]
    hi = float(np.max(analytic.zeta(spec))) * 1.1
    return analytic.AxisMap(dirs, funcs), {"lo": 0.0, "hi": hi}


def _project(axis_map, z) -> list:
    A = np.stack([np.asarray(d).ravel() for d in axis_map.directions], axis=1)
    t, *_ = np.linalg.lstsq(A, np.asarray(z).ravel(), rcond=None)
    return [float(v) for v in t] + [0.0] * (2 - len(t))


def cmd_rootset(args) -> int:
    """Zero curves of the reduced functions (CSV + PNG)."""
    from .plotting import plot_rootsets

    doc, spec = _load(args)
    out = _out_dir(args)
    axis_map, rs = _axis_map(doc, spec)
    resolution = args.resolution or rs.get("resolution", 201)
    lo, hi = rs.get("lo", 0.0), rs.get("hi", 1.0)
    variants = {"unshocked": spec.without_shock()}
    shocked = apply_shock(spec)
    if shocked.initial_default_mass() > 0:
        variants["shocked"] = shocked
    prov = _provenance(args, spec, {"lo": lo, "hi": hi, "resolution": resolution})
    lines = {}
    for name, sp in variants.items():
        try:
            lines[name] = analytic.rootset_scan(sp, axis_map, lo, hi, resolution)
        except analytic.GridTooCoarse as exc:
            raise UsageError(f"{name}: {exc}") from exc
        analytic.write_contours_csv(lines[name], out / f"rootset_{name}.csv", _header_lines({**prov, "variant": name}))
    points = {}
    last = variants.get("shocked", variants["unshocked"])
    sys_ = analytic.System(last)
    lfp = analytic.least_fixed_point(sys_, tol=args.tol, raise_on_fail=False)
    points["smallest root"] = _project(axis_map, lfp.z)
    if args.with_zstar:
        points["z*"] = _project(axis_map, analytic.z_star(sys_, tol=args.tol, eps_min=args.eps_floor).z)
    labels = [lab for lab, _ in axis_map.functions]
    plot_rootsets(lines, out / "rootset.png", points, title=", ".join(labels) + " = 0")
    print(f"wrote {', '.join(str(out / f'rootset_{n}.csv') for n in lines)} and {out / 'rootset.png'}")
    return EXIT_OK


def cmd_convergence(args) -> int:
    """Simulated fractions across sizes against the theory (CSV + PNG)."""
    from .plotting import plot_convergence

    doc, spec = _load(args)
    out = _out_dir(args)
    cfg = _config(args, doc, spec)
    cand = analytic_candidates(spec, tol=args.tol)
    others = [v for k, v in cand.items() if k != "smallest"]
    res = convergence_experiment(cfg, cand["smallest"], others)
    prov = _provenance(args, spec, {"mode": cfg.mode, "n_grid": cfg.n_grid, "trials": cfg.trials})
    write_trials_csv(res.trials.records, spec.T, out / "convergence.csv", _header_lines(prov))
    _write_json(
        out / "convergence_summary.json",
        {
            "provenance": prov,
            "theory": res.theory,
            "root_fractions": cand,
            "cluster_edges": res.edges,
            "per_n": [r.as_dict() for r in res.rows],
        },
    )
    plot_convergence(
        [r.n for r in res.trials.records],
        [r.fraction for r in res.trials.records],
        res.theory,
        out / "convergence.png",
        {"stable root": cand["stable"], "largest root": cand["largest"], "initial defaults": cand["initial"]},
    )
    for r in res.rows:
        print(f"n={r.n}: majority {r.majority_share:.0%} around {r.majority_center:.4f}, max |dev| = {r.max_deviation:.4f}")
    print(f"wrote {out / 'convergence.csv'} and {out / 'convergence.png'}")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "analyze": cmd_analyze,
    "simulate": cmd_simulate,
    "rootset": cmd_rootset,
    "convergence": cmd_convergence,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--spec", required=True, help="spec JSON file, or the name of a bundled spec")
    common.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    common.add_argument("--out", default=None, help="output directory (default ./out; validate writes nothing unless given)")
    common.add_argument("--tol", type=float, default=analytic.DEFAULT_TOL, help="fixed-point increment tolerance")
    common.add_argument("--eps-floor", type=float, default=analytic.EPS_MIN, help="smallest shift of the epsilon schedule")
    common.add_argument("--resolve-tol", type=float, default=analytic.RESOLVE_TOL, help="sup-norm below which roots are identified")
    common.add_argument("--trials", type=int, default=None, help="trials per network size")
    common.add_argument("--n-grid", default=None, help="comma separated network sizes")
    common.add_argument("--shock-set", action="append", help='coordinates "r,a,b;r,a,b" (1-based); repeatable')
    common.add_argument("--mode", default="deterministic_rounding", choices=["deterministic_rounding", "iid_sample"])
    common.add_argument("--threshold", type=float, default=0.03, help="fractions below this count as resilient outcomes")
    common.add_argument("--resolution", type=int, default=None, help="grid points per axis for rootset")
    common.add_argument("--with-zstar", action="store_true", help="rootset: also mark z* (may be slow near touching roots)")

    parser = _Parser(prog="sbm-contagion", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).strip().split("\n")[0])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.out is None and args.command != "validate":
            args.out = "out"
        if not args.tol > 0 or not args.eps_floor > 0:
            raise UsageError("--tol and --eps-floor must be positive")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SpecError as exc:
        print(f"invalid spec: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except analytic.SolverError as exc:
        print(f"solver did not resolve: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE


if __name__ == "__main__":
    sys.exit(main())
