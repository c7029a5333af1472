"""Command-line entry point: ``spide {suite,solve,kernel,norms,zakai}``.

Exit codes: 0 when every check passes, 1 when one fails, 2 on a bad config.
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, SpideError
from .filterlab import (CRITERIA, Criterion, ExperimentConfig, emit_results, kernel_report,
                        recipe_field, run_suite, zakai_demo)
from .grid import Field
from .noise import dump_events
from .norms import CSV_HEADER, NormSpec, besov_norm, equivalent_H_norm, mc_norm, sobolev_norm, sobolev_slices
from .norms import besov_slices, equivalent_H_slices, integrate_time
from .propagator import path_for, solve_mild, time_mesh

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    common.add_argument("--paths", type=int, help="Monte Carlo path count")
    common.add_argument("--threads", type=int, help="worker threads (default: $SPIDE_THREADS or all cores)")
    common.add_argument("--eps-cut", type=float, dest="eps_cut", help="large-jump cut-off")

    p = argparse.ArgumentParser(prog="spide", description="Spectral solver and checks for jump-driven SPDEs.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("suite", parents=[common], help="run the acceptance criteria")
    s.add_argument("--only", action="append", choices=sorted(CRITERIA), help="run only these criteria")
    sub.add_parser("solve", parents=[common], help="solve the equation along sampled paths")
    sub.add_parser("kernel", parents=[common], help="fundamental-solution report across alpha")
    sub.add_parser("norms", parents=[common], help="norms of the configured input fields")
    sub.add_parser("zakai", parents=[common], help="filtering demo against the exact conditional law")
    return p


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for name in ("out", "seed", "paths", "threads", "eps_cut"):
        v = getattr(args, name, None)
        if v is not None:
            setattr(cfg, name, str(v) if name == "out" else v)
    if cfg.seed >= 2**64:
        raise ConfigurationError("seed", "seed must fit in 64 bits")
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigurationError("threads", f"must be >= 1, got {cfg.threads}")
    cfg.check()
    return cfg


def _line(c: Criterion) -> str:
    mark = "PASS" if c.passed else "FAIL"
    return f"[{mark}] {c.name:<22} value={c.value:.6g} tol={c.tol:.6g}  {c.detail}"


def cmd_suite(cfg, args) -> int:
    rep = run_suite(cfg, only=args.only, progress=lambda c: print(_line(c), flush=True))
    emit_results(rep, cfg.out)
    failed = [c.name for c in rep.criteria if not c.passed]
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"all {len(rep.criteria)} criteria passed; results in {cfg.out}")
    return EXIT_PASS


def _inputs(cfg, grid, mesh):
    """Materialise the configured input recipes; space-time f is time-constant here."""
    out = {}
    for name, spec in cfg.inputs.items():
        if name in ("u0", "f"):
            out[name] = Field(grid, recipe_field(grid, spec))
        elif name == "h":
            modes = spec if isinstance(spec, list) else [spec]
            out[name] = Field(grid, np.stack([recipe_field(grid, m) for m in modes]))
        elif name == "Phi":
            modes = spec if isinstance(spec, list) else [spec]
            if len(modes) != len(cfg.mark_measure()):
                raise ConfigurationError("inputs", "Phi needs one recipe per mark")
            out[name] = Field(grid, np.stack([recipe_field(grid, m) for m in modes]))
        elif name == "g":
            base = recipe_field(grid, spec)
            scale = float(spec.get("jump_scale", 1.0))
            out[name] = (lambda t, ys, b=base, s=scale:
                         np.stack([b * math.exp(-float(y @ y) / s**2) for y in np.atleast_2d(ys)]))
    if "u0" not in out:
        out["u0"] = Field(grid, recipe_field(grid, {"shape": "gaussian"}))
    return out


def _slice_norms(field, spec):
    if spec.family in ("H", "L"):
        return sobolev_slices(field, spec.beta if spec.family == "H" else 0.0, spec.p)
    if spec.family == "B":
        return besov_slices(field, spec.beta, spec.p)
    if spec.family == "Htilde":
        return equivalent_H_slices(field, spec.beta, spec.p)
    raise ConfigurationError("norms", f"family {spec.family!r} is not a solution norm")


def _norm_specs(cfg):
    return [NormSpec(s.get("family", "H"), float(s.get("beta", 0.0)), float(s.get("p", 2.0)), s.get("r"))
            for s in cfg.norms]


def _write_rows(path, rows):
    import csv

    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for r in rows:
            w.writerow(r)


def cmd_solve(cfg, args) -> int:
    grid = cfg.grid()
    c = cfg.coefficients()
    mesh = time_mesh(cfg.T, cfg.steps)
    inp = _inputs(cfg, grid, mesh)
    marks = cfg.mark_measure() if "Phi" in inp else None
    M = inp["h"].values.shape[0] if "h" in inp else 0
    out = Path(cfg.out)
    specs = _norm_specs(cfg)
    per_path = {i: [] for i in range(len(specs))}
    ids = list(range(cfg.paths))
    for pid in ids:
        path = path_for(c, T=cfg.T, steps=cfg.steps, seed=cfg.seed, path_id=pid, eps_cut=cfg.eps_cut,
                        marks=marks, M=M)
        b = solve_mild(c, inp["u0"], f=inp.get("f"), g=inp.get("g"), Phi=inp.get("Phi"), h=inp.get("h"), path=path)
        um = b.on_mesh()
        for i, s in enumerate(specs):
            per_path[i].append(integrate_time(_slice_norms(um, s), um, s.p))
        if pid == 0:
            from .grid import write_snapshot

            (out / "fields").mkdir(parents=True, exist_ok=True)
            write_snapshot(out / "fields" / "u_final.sfld", b.final)
            write_snapshot(out / "fields" / "u_mesh.sfld", um)
            (out / "tables").mkdir(parents=True, exist_ok=True)
            with open(out / "tables" / "events.csv", "w", newline="") as fh:
                dump_events(path, fh)
    rows = [CSV_HEADER]
    for i, s in enumerate(specs):
        v = mc_norm(per_path[i], NormSpec(s.family, s.beta, s.p, s.r, domain="spacetime"), ids)
        rows.append(v.csv_row())
    _write_rows(out / "tables" / "norms.csv", rows)
    print(f"solved {cfg.paths} path(s); results in {out}")
    return EXIT_PASS


def cmd_kernel(cfg, args) -> int:
    rows, worst, fields = kernel_report(cfg)
    out = Path(cfg.out)
    _write_rows(out / "tables" / "kernel.csv", rows)
    from .grid import write_snapshot

    (out / "fields").mkdir(parents=True, exist_ok=True)
    for name in sorted(fields):
        write_snapshot(out / "fields" / f"{name}.sfld", fields[name])
    ok = worst["mass"] <= 1e-6 and worst["min"] >= -1e-8 and worst["lp"] <= 0.9
    for r in rows[1:]:
        print("alpha={:<4g} t={:<4g} N={:<6d} mass_err={:.2e} min={:.2e} lp_ratio={:.3f}".format(
            r[0], r[1], r[2], r[3], r[4], float(r[6])))
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_norms(cfg, args) -> int:
    grid = cfg.grid()
    inp = _inputs(cfg, grid, time_mesh(cfg.T, cfg.steps))
    rows = [["input"] + CSV_HEADER]
    for name in ("u0", "f"):
        if name not in inp:
            continue
        for s in _norm_specs(cfg):
            if s.family in ("H", "L"):
                v = sobolev_norm(inp[name], s.beta if s.family == "H" else 0.0, s.p)
            elif s.family == "B":
                v = besov_norm(inp[name], s.beta, s.p)
            elif s.family == "Htilde":
                v = equivalent_H_norm(inp[name], s.beta, s.p)
            else:
                continue
            rows.append([name] + v.csv_row())
    _write_rows(Path(cfg.out) / "tables" / "norms.csv", rows)
    for r in rows[1:]:
        print(",".join(str(x) for x in r))
    return EXIT_PASS


def cmd_zakai(cfg, args) -> int:
    res, fields, path = zakai_demo(cfg)
    out = Path(cfg.out)
    _write_rows(out / "tables" / "zakai.csv", [["quantity", "value"]] + [[k, v] for k, v in res.items()])
    (out / "tables").mkdir(parents=True, exist_ok=True)
    with open(out / "tables" / "events.csv", "w", newline="") as fh:
        dump_events(path, fh)
    from .grid import write_snapshot

    (out / "fields").mkdir(parents=True, exist_ok=True)
    for name in sorted(fields):
        write_snapshot(out / "fields" / f"{name}.sfld", fields[name])
    for k, v in res.items():
        print(f"{k:<22} {v}")
    ok = (max(res["sup_truncated_oracle"], res["sup_full_oracle"]) <= 1e-3 and res["mass_error"] <= 1e-6
          and res["min"] >= -1e-6)
    return EXIT_PASS if ok else EXIT_FAIL


COMMANDS = {"suite": cmd_suite, "solve": cmd_solve, "kernel": cmd_kernel, "norms": cmd_norms, "zakai": cmd_zakai}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"spide: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SpideError as exc:
        print(f"spide: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
