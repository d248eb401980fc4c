"""Command-line entry point: run scenarios, compare runs, sweep a parameter.

Exit codes: 0 all enabled checks pass, 1 a check failed, 2 configuration
error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import analysis, plotting
from .config import ConfigError, ScenarioConfig, emit, parse_config, parse_config_dict
from .evolution import EvolutionTrace, StepError, run
from .mesh import CrackSet, Mesh, crack_edge_path_json
from .solver import SolverError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
CHECKS = ("balance", "minimality", "griffith")
N_RANDOM_PAIRS = 20
N_MINIMALITY_PROBES = 5


# -------------------------------------------------------------- trace I/O
def trace_csv(trace: EvolutionTrace) -> str:
    buf = io.StringIO()
    for key, value in trace.header.items():
        buf.write(f"# {key}: {value}\n")
    rows = trace.rows()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def read_trace_csv(path) -> tuple[dict, list[dict]]:
    header, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
        else:
            body.append(line)
    rows = []
    for r in csv.DictReader(body):
        rows.append({k: (int(v) if k in ("i", "n_crack_edges", "n_components",
                                         "candidates_evaluated") else float(v))
                     for k, v in r.items()})
    return header, rows


def write_trace(trace: EvolutionTrace, out: Path, svg: bool = False) -> None:
    mesh = trace.mesh
    (out / "trace.csv").write_text(trace_csv(trace))
    (out / "mesh.json").write_text(mesh.to_json())
    cracks = out / "cracks"
    cracks.mkdir(exist_ok=True)
    for rec in trace.records:
        doc = {"step": rec.index, "t": rec.time, **crack_edge_path_json(mesh, rec.crack)}
        (cracks / f"step_{rec.index:04d}.json").write_text(json.dumps(doc))
    np.savez_compressed(out / "fields.npz",
                        **{f"u_{r.index:04d}": r.field.values for r in trace.records},
                        **{f"corner_dofs_{r.index:04d}": r.field.dofmap.corner_dofs
                           for r in trace.records})
    plotting.plot_energies(trace.rows(), out / "energies.png", title=f"lambda = {trace.lam:g}")
    if svg:
        # frames are best effort and never change the exit status
        try:
            frames = out / "frames"
            frames.mkdir(exist_ok=True)
            for rec in trace.records:
                plotting.plot_frame(mesh, rec.crack, rec.field,
                                    frames / f"step_{rec.index:04d}.svg", title=f"t = {rec.time:.3f}")
        except Exception as exc:  # pragma: no cover - defensive
            print(f"warning: SVG frames skipped: {exc}", file=sys.stderr)


# ------------------------------------------------------------------ checks
def run_checks(trace: EvolutionTrace, checks, seed: int = 0) -> list[analysis.Report]:
    reports = []
    n = len(trace.records)
    if "balance" in checks and n > 1:
        pairs = analysis._pairs_or_consecutive(trace, None)
        pairs += analysis.random_pairs(trace, N_RANDOM_PAIRS, seed)
        reports.append(analysis.energy_balance_check(trace, pairs=pairs))
        reports.append(analysis.discrete_energy_check(trace, pairs=pairs))
    if "minimality" in checks and n > 1:
        merged = analysis.Report("minimality")
        for i in range(1, n):
            merged.rows += analysis.minimality_check(trace, i, N_MINIMALITY_PROBES, seed + i).rows
        reports.append(merged)
    if "griffith" in checks:
        reports.append(analysis.griffith_check(trace))
    reports.append(analysis.jump_report(trace))
    return reports


def _reports_pass(reports) -> bool:
    return all(r.passed for r in reports if r.applicable)


def _fail(out: Path | None, code: int, kind: str, message: str) -> int:
    doc = {"status": "error", "exit_code": code, "kind": kind, "message": message}
    print(json.dumps(doc), file=sys.stderr)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "failure.json").write_text(json.dumps(doc, indent=2))
    return code


def run_scenario(config: ScenarioConfig, out=None, checks=CHECKS, svg: bool = False,
                 quiet: bool = True) -> int:
    """Run one configured scenario, write its artifacts and return the exit code."""
    out = Path(out or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(emit(config), indent=2))
    try:
        mesh = config.build_mesh()
        sc = config.scenario(mesh)
        progress = None if quiet else (lambda r: print(f"step {r.index} t={r.time:.4f} "
                                                       f"edges={len(r.crack)} E={r.energies.total:.6g}"))
        trace = run(mesh, sc.initial_crack, sc.program, config.schedule, config.lam, config.m,
                    config.policy, progress=progress)
    except (SolverError, StepError) as exc:
        return _fail(out, EXIT_SOLVER, "solver", str(exc))
    write_trace(trace, out, svg)
    try:
        reports = run_checks(trace, checks, config.seed)
    except (SolverError, StepError) as exc:
        return _fail(out, EXIT_SOLVER, "solver", str(exc))
    summary = analysis.write_reports(reports, out / "reports")
    for rep in reports:
        if rep.name == "griffith" and rep.rows:
            plotting.plot_release_rates([r for r in rep.rows if math.isfinite(r["G"])],
                                        out / "release_rate.png")
    ok = _reports_pass(reports)
    summary["status"] = "pass" if ok else "fail"
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return EXIT_OK if ok else EXIT_CHECK


# ----------------------------------------------------------------- compare
@dataclass
class Comparison:
    rows: list[dict] = field(default_factory=list)
    first_divergence: float | None = None
    first_energy_divergence: float | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=["t", "d_H", "d_total", "d_bulk", "d_length"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()


def _load_run(directory: Path):
    mesh = Mesh.from_json((directory / "mesh.json").read_text())
    _, rows = read_trace_csv(directory / "trace.csv")
    cracks = []
    for r in rows:
        doc = json.loads((directory / "cracks" / f"step_{r['i']:04d}.json").read_text())
        cracks.append(doc["edge_ids"])
    return mesh, rows, cracks


def compare_runs(dir_a, dir_b, energy_tol: float = 1e-12) -> Comparison:
    """Per-time crack distance and energy differences between two output dirs.

    Times are those of the first run; the second run is sampled with its own
    right-open step interpolant.
    """
    mesh_a, rows_a, cracks_a = _load_run(Path(dir_a))
    mesh_b, rows_b, cracks_b = _load_run(Path(dir_b))
    if mesh_a.fingerprint != mesh_b.fingerprint:
        raise ValueError("runs were computed on different meshes")
    times_b = np.array([r["t"] for r in rows_b])
    scale = 1.0 + max(abs(r["total"]) for r in rows_a + rows_b)
    cmp = Comparison()
    for ra, ca in zip(rows_a, cracks_a):
        j = max(int(np.searchsorted(times_b, ra["t"] + 1e-12, side="right")) - 1, 0)
        rb, cb = rows_b[j], cracks_b[j]
        dh = analysis.hausdorff_distance(mesh_a, CrackSet.from_edges(mesh_a, ca),
                                         CrackSet.from_edges(mesh_a, cb))
        row = {"t": ra["t"], "d_H": dh, "d_total": rb["total"] - ra["total"],
               "d_bulk": rb["bulk"] - ra["bulk"], "d_length": rb["crack_length"] - ra["crack_length"]}
        cmp.rows.append(row)
        if cmp.first_divergence is None and dh > 0:
            cmp.first_divergence = ra["t"]
        if cmp.first_energy_divergence is None and abs(row["d_total"]) > energy_tol * scale:
            cmp.first_energy_divergence = ra["t"]
    return cmp


# ------------------------------------------------------------------- sweep
SWEEP_PARAMS = {"lambda": ("lam", float), "m": ("m", int), "delta": ("delta", float),
                "T": ("T", float), "seed": ("seed", int)}


def sweep(config: ScenarioConfig, param: str, values, out=None, checks=CHECKS,
          svg: bool = False) -> dict:
    """Run ``config`` once per value of ``param``, one subdirectory each."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(param, f"cannot sweep; choose one of {sorted(SWEEP_PARAMS)}")
    attr, cast = SWEEP_PARAMS[param]
    root = Path(out or config.output_dir)
    codes = {}
    for v in values:
        cfg = replace(config, **{attr: cast(v)})
        # re-validate the modified document so sweeps obey the same schema
        cfg = parse_config_dict(emit(cfg))
        sub = root / f"{param}={cast(v):g}"
        codes[str(sub)] = run_scenario(cfg, sub, checks, svg)
    return codes


# --------------------------------------------------------------------- CLI
def _parse_checks(text: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [n for n in names if n not in CHECKS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown checks {bad}; choose from {list(CHECKS)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsfracture", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (default: the config's output_dir)")
    r.add_argument("--checks", type=_parse_checks, default=CHECKS,
                   help="comma-separated subset of balance,minimality,griffith")
    r.add_argument("--svg", action="store_true", help="write one SVG frame per step")
    r.add_argument("-v", "--verbose", action="store_true")

    c = sub.add_parser("compare", help="compare two completed runs")
    c.add_argument("dir_a")
    c.add_argument("dir_b")
    c.add_argument("--out", help="write the comparison CSV here")

    s = sub.add_parser("sweep", help="run a scenario for several values of one parameter")
    s.add_argument("config")
    s.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    s.add_argument("--values", required=True, nargs="+")
    s.add_argument("--out")
    s.add_argument("--checks", type=_parse_checks, default=CHECKS)
    s.add_argument("--svg", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "compare":
        try:
            cmp = compare_runs(args.dir_a, args.dir_b)
        except (OSError, ValueError, KeyError) as exc:
            return _fail(None, EXIT_CONFIG, "compare", str(exc))
        text = cmp.to_csv()
        if args.out:
            Path(args.out).write_text(text)
        sys.stdout.write(text)
        print(json.dumps({"first_divergence": cmp.first_divergence,
                          "first_energy_divergence": cmp.first_energy_divergence}))
        return EXIT_OK

    try:
        cfg = parse_config(args.config)
    except ConfigError as exc:
        return _fail(None, EXIT_CONFIG, "config", str(exc))
    if args.command == "run":
        code = run_scenario(cfg, args.out, args.checks, args.svg, quiet=not args.verbose)
        out = Path(args.out or cfg.output_dir)
        if (out / "summary.json").exists():
            print((out / "summary.json").read_text())
        return code
    try:
        codes = sweep(cfg, args.param, args.values, args.out, args.checks, args.svg)
    except (ConfigError, ValueError) as exc:
        return _fail(None, EXIT_CONFIG, "config", str(exc))
    print(json.dumps(codes, indent=2))
    return max(codes.values(), default=EXIT_OK)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
