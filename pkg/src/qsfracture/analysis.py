"""Post-hoc diagnostics on evolution traces.

Everything here is a pure function of a finished trace: the Hausdorff metric
on crack sets, minimality probes, energy-balance inequalities, finite
difference energy release rates and the Griffith complementarity check.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .evolution import (BoundaryProgram, EvolutionTrace, Scenario, interpolate, record_index,
                        rho, work_integral)
from .mesh import (CrackSet, Mesh, admissible_extensions, build_dofmap, components_after_adding,
                   splits_dofs)
from .solver import (harmonic_energy, penalized_energy, solve_penalized_with_energy,
                     transfer_field)

# ----------------------------------------------------------------- Hausdorff


def _piece_quadratics(a0, da, b0, db):
    """Squared distance from ``a0 + s da`` to segment ``[b0, b0 + db]`` as
    up to three quadratic pieces ``(lo, hi, c2, c1, c0)`` in ``s``."""
    L = float(db @ db)
    r0 = a0 - b0
    t0 = float(r0 @ db) / L
    t1 = float(da @ db) / L

    def point_quad(p):
        q = a0 - p
        return float(da @ da), 2.0 * float(q @ da), float(q @ q)

    near = point_quad(b0)
    far = point_quad(b0 + db)
    # perpendicular part: |r|^2 - (r.db)^2 / L
    A, B, C = near
    perp = (A - L * t1 * t1, B - 2.0 * L * t0 * t1, C - L * t0 * t0)
    if abs(t1) < 1e-15:
        if t0 < 0:
            return [(0.0, 1.0, *near)]
        if t0 > 1:
            return [(0.0, 1.0, *far)]
        return [(0.0, 1.0, *perp)]
    s_a, s_b = (0.0 - t0) / t1, (1.0 - t0) / t1
    lo_cut, hi_cut = min(s_a, s_b), max(s_a, s_b)
    below, above = (near, far) if t1 > 0 else (far, near)
    pieces = []
    for lo, hi, q in ((-math.inf, lo_cut, below), (lo_cut, hi_cut, perp), (hi_cut, math.inf, above)):
        lo, hi = max(lo, 0.0), min(hi, 1.0)
        if hi > lo or (hi == lo and 0.0 <= lo <= 1.0):
            pieces.append((lo, hi, *q))
    return pieces


def _point_segments_sq(P: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Squared distances between points ``P`` (n, 2) and segments ``S`` (k, 2, 2)."""
    a = S[None, :, 0, :]
    d = S[None, :, 1, :] - a
    r = P[:, None, :] - a
    t = np.clip((r * d).sum(-1) / (d * d).sum(-1), 0.0, 1.0)
    diff = r - t[..., None] * d
    return (diff * diff).sum(-1)


def directed_hausdorff_segments(A: np.ndarray, B: np.ndarray) -> float:
    """``sup_{x in A} dist(x, B)`` for unions of closed segments."""
    worst = 0.0
    for a0, a1 in A:
        da = a1 - a0
        pieces = []
        for b0, b1 in B:
            pieces.extend(_piece_quadratics(a0, da, b0, b1 - b0))
        pc = np.array(pieces)
        cand = [0.0, 1.0, *pc[:, 0].tolist(), *pc[:, 1].tolist()]
        # switch points of the lower envelope are crossings of two pieces
        i, j = np.triu_indices(len(pc), 1)
        lo = np.maximum(pc[i, 0], pc[j, 0])
        hi = np.minimum(pc[i, 1], pc[j, 1])
        ok = hi >= lo
        i, j, lo, hi = i[ok], j[ok], lo[ok], hi[ok]
        c2 = pc[i, 2] - pc[j, 2]
        c1 = pc[i, 3] - pc[j, 3]
        c0 = pc[i, 4] - pc[j, 4]
        lin = np.abs(c2) < 1e-14
        with np.errstate(divide="ignore", invalid="ignore"):
            r_lin = np.where(lin & (np.abs(c1) > 1e-14), -c0 / c1, np.nan)
            disc = c1 * c1 - 4.0 * c2 * c0
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            r1 = np.where(~lin, (-c1 + sq) / (2.0 * c2), np.nan)
            r2 = np.where(~lin, (-c1 - sq) / (2.0 * c2), np.nan)
        for r in (r_lin, r1, r2):
            good = np.isfinite(r) & (r >= lo) & (r <= hi)
            cand.extend(r[good].tolist())
        s = np.clip(np.unique(np.array(cand)), 0.0, 1.0)
        pts = a0[None, :] + s[:, None] * da[None, :]
        env = _point_segments_sq(pts, B).min(axis=1)
        worst = max(worst, float(env.max()))
    return math.sqrt(max(worst, 0.0))


def hausdorff_distance(mesh: Mesh, K1: CrackSet, K2: CrackSet) -> float:
    """Hausdorff distance between two edge cracks seen as closed point sets.

    The empty set is at distance ``diam(domain)`` from any nonempty crack.
    """
    if len(K1) == 0 and len(K2) == 0:
        return 0.0
    if len(K1) == 0 or len(K2) == 0:
        return mesh.diameter
    if K1.edge_set == K2.edge_set:
        return 0.0
    A = mesh.edge_segments(K1.edge_ids)
    B = mesh.edge_segments(K2.edge_ids)
    return max(directed_hausdorff_segments(A, B), directed_hausdorff_segments(B, A))


# ----------------------------------------------------------------- reports
@dataclass
class Report:
    """Rows of one diagnostic plus pass/fail bookkeeping."""

    name: str
    rows: list[dict] = field(default_factory=list)
    applicable: bool = True
    note: str = ""

    @property
    def checks(self) -> int:
        return sum(1 for r in self.rows if "passed" in r)

    @property
    def passes(self) -> int:
        return sum(1 for r in self.rows if r.get("passed"))

    @property
    def passed(self) -> bool:
        return self.passes == self.checks

    @property
    def worst_slack(self) -> float | None:
        vals = [r["slack"] for r in self.rows if "slack" in r and r["slack"] is not None
                and math.isfinite(r["slack"])]
        return min(vals) if vals else None

    def summary(self) -> dict:
        return {"name": self.name, "applicable": self.applicable, "checks": self.checks,
                "passes": self.passes, "worst_slack": self.worst_slack, "note": self.note}

    def to_csv(self) -> str:
        buf = io.StringIO()
        if not self.rows:
            return ""
        keys = list(self.rows[0])
        for r in self.rows[1:]:
            keys += [k for k in r if k not in keys]
        w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


BalanceReport = Report
GriffithReport = Report


def _energy_scale(trace: EvolutionTrace) -> float:
    return max(abs(r.energies.total) for r in trace.records)


# -------------------------------------------------------------- minimality
def _random_probe(mesh: Mesh, crack: CrackSet, rng: np.random.Generator) -> list[int]:
    """1-3 new interior edges forming a walk from a crack vertex or a random vertex."""
    verts = sorted(crack.vertex_degrees(mesh))
    if verts and rng.random() < 0.75:
        v = int(verts[rng.integers(len(verts))])
    else:
        k = int(mesh.interior_edges[rng.integers(len(mesh.interior_edges))])
        v = int(mesh.edges[k, rng.integers(2)])
    added: list[int] = []
    for _ in range(int(rng.integers(1, 4))):
        options = [k for k in mesh.vertex_edges[v] if not mesh.is_boundary_edge[k]
                   and k not in crack.edge_set and k not in added]
        if not options:
            break
        k = int(options[rng.integers(len(options))])
        added.append(k)
        a, b = mesh.edges[k]
        v = int(b if a == v else a)
    return added


def minimality_check(trace: EvolutionTrace, i: int, n_probes: int = 10, seed: int = 0,
                     program: BoundaryProgram | None = None, single_edges: bool = False,
                     tol: float = 1e-9, anchor_allowance: bool = True) -> Report:
    """Probe ``E_lam(g_i, K_i, u_i) <= E_lam(g_i, K, u_i)`` for supersets ``K``.

    Probes: ``K_i`` itself, every single-edge tip extension (every admissible
    single-edge superset with ``single_edges=True``) and ``n_probes`` random
    supersets adding a walk of 1-3 edges, all within the component budget.
    The penalty is anchored at the accepted field ``u_i``.

    The step itself minimized with the anchor ``u_{i-1}``.  Expanding the
    penalty around ``u_i`` shows that any candidate the step searched obeys
    the inequality up to ``2 lam |(v - u_i | u_i - u_{i-1})|``, with ``v`` the
    probe's minimizer.  That anchor-shift allowance is reported per probe and
    added to ``tol * (1 + |E|)`` unless ``anchor_allowance=False``.
    """
    if i < 1:
        raise ValueError("minimality is checked from step 1 on")
    program = program or trace.program
    mesh = trace.mesh
    rec = trace.records[i]
    prev = trace.records[i - 1]
    g = program(rec.time)
    lam = trace.lam
    ref_e = penalized_energy(mesh, build_dofmap(mesh, rec.crack), g, rec.field, lam)
    ref = ref_e.total
    probes: list[CrackSet] = [rec.crack]
    kind = "TIP+NUCLEATE" if single_edges else "TIP"
    probes += admissible_extensions(mesh, rec.crack, trace.m, (kind, 1))
    rng = np.random.default_rng(seed)
    seen = {K.edge_ids for K in probes}
    tries = 0
    while n_probes > 0 and tries < 50 * n_probes:
        tries += 1
        extra = _random_probe(mesh, rec.crack, rng)
        if not extra or components_after_adding(mesh, rec.crack, extra) > trace.m:
            continue
        K = rec.crack.union(mesh, extra)
        if K.edge_ids not in seen:
            seen.add(K.edge_ids)
            probes.append(K)
            n_probes -= 1

    report = Report("minimality")
    scale = 1.0 + abs(ref)
    for K in probes:
        added = K.edge_set - rec.crack.edge_set
        shift = 0.0
        if not added or not splits_dofs(mesh, rec.crack, added):
            # identical DOF space: the minimizer is u_i's partner and only length is added
            e = ref_e.bulk + ref_e.penalty + K.total_length
        else:
            dm = build_dofmap(mesh, K)
            v, eK = solve_penalized_with_energy(dm, g, rec.field, lam)
            e = eK.total
            if lam > 0:
                ui = transfer_field(rec.field, dm).values
                up = transfer_field(prev.field, dm).values
                shift = 2.0 * lam * abs(float((dm.lumped_mass * (v.values - ui) * (ui - up)).sum()))
        slack = e - ref
        allowed = tol * scale + (shift if anchor_allowance else 0.0)
        report.rows.append({"step": i, "t": rec.time, "probe_edges": len(added),
                            "probe": " ".join(map(str, sorted(added))),
                            "reference": ref, "probe_energy": e, "slack": slack,
                            "anchor_shift": shift, "passed": bool(slack >= -allowed)})
    return report


# ---------------------------------------------------------- energy balance
def _pairs_or_consecutive(trace, pairs):
    if pairs is None:
        times = [r.time for r in trace.records]
        return list(zip(times[:-1], times[1:]))
    return [(float(s), float(t)) for s, t in pairs]


def random_pairs(trace: EvolutionTrace, n: int, seed: int = 0) -> list[tuple[float, float]]:
    rng = np.random.default_rng(seed)
    n_rec = len(trace.records)
    out = []
    while len(out) < n and n_rec > 1:
        i, j = sorted(rng.choice(n_rec, size=2, replace=False).tolist())
        out.append((trace.records[i].time, trace.records[j].time))
    return out


def energy_balance_check(trace: EvolutionTrace, program: BoundaryProgram | None = None,
                         pairs=None, tol: float = 1e-8) -> Report:
    """``E(g(t), K(t)) - E(g(s), K(s)) <= work(s, t) + rho`` with fresh harmonic solves."""
    program = program or trace.program
    mesh = trace.mesh
    r = rho(mesh, program, trace.schedule, trace.lam)
    cache: dict = {}

    def reduced(t):
        _, K = interpolate(trace, t)
        key = (t, K.edge_ids)
        if key not in cache:
            cache[key] = harmonic_energy(mesh, build_dofmap(mesh, K), program(t)).total
        return cache[key]

    report = Report("energy_balance")
    scale = 1.0 + _energy_scale(trace)
    for s, t in _pairs_or_consecutive(trace, pairs):
        if not s < t:
            raise ValueError("pairs must satisfy s < t")
        lhs = reduced(t) - reduced(s)
        work = work_integral(trace, program, s, t)
        slack = work + r - lhs
        report.rows.append({"s": s, "t": t, "lhs": lhs, "work": work, "rho": r,
                            "slack": slack, "passed": bool(slack >= -tol * scale)})
    return report


def discrete_energy_check(trace: EvolutionTrace, program: BoundaryProgram | None = None,
                          pairs=None, tol: float = 1e-8) -> Report:
    """The step-level estimate on the trace itself, for index pairs ``i < j``:

    ``bulk_j + surf_j + lam sum ||u_h - u_{h-1}||^2 <= bulk_i + surf_i + work + rho``.
    """
    program = program or trace.program
    mesh = trace.mesh
    r = rho(mesh, program, trace.schedule, trace.lam)
    recs = trace.records
    inc = np.concatenate([[0.0], np.cumsum([rec.increment_norm**2 for rec in recs[1:]])])
    report = Report("discrete_energy_estimate")
    scale = 1.0 + _energy_scale(trace)
    for s, t in _pairs_or_consecutive(trace, pairs):
        i, j = record_index(trace, s), record_index(trace, t)
        if not i < j:
            raise ValueError("pairs must map to increasing step indices")
        ri, rj = recs[i], recs[j]
        lhs = rj.energies.bulk + rj.energies.surface + trace.lam * (inc[j] - inc[i])
        work = work_integral(trace, program, ri.time, rj.time)
        rhs = ri.energies.bulk + ri.energies.surface + work + r
        slack = rhs - lhs
        report.rows.append({"i": i, "j": j, "lhs": lhs, "rhs": rhs, "rho": r, "slack": slack,
                            "passed": bool(slack >= -tol * scale)})
    return report


# ------------------------------------------------------------ release rate
def release_rate(mesh: Mesh, crack: CrackSet, g, edge: int) -> float:
    """Finite-difference energy release rate for cracking one more edge.

    ``(bulk(K) - bulk(K + e)) / |e|`` with harmonic bulk energies.  The edge
    must touch the crack.
    """
    edge = int(edge)
    verts = set(crack.vertex_degrees(mesh))
    if edge in crack.edge_set or not (set(mesh.edges[edge].tolist()) & verts):
        raise ValueError(f"edge {edge} does not extend the crack")
    before = harmonic_energy(mesh, build_dofmap(mesh, crack), g).bulk
    after = harmonic_energy(mesh, build_dofmap(mesh, crack.union(mesh, [edge])), g).bulk
    return (before - after) / float(mesh.edge_lengths[edge])


def tip_extensions(mesh: Mesh, crack: CrackSet, tip: int) -> list[int]:
    return [k for k in mesh.vertex_edges[tip]
            if not mesh.is_boundary_edge[k] and k not in crack.edge_set]


def max_tip_release(mesh: Mesh, crack: CrackSet, g, tip: int) -> tuple[float, int]:
    best = (-math.inf, -1)
    for k in tip_extensions(mesh, crack, tip):
        best = max(best, (release_rate(mesh, crack, g, k), k))
    return best


# ---------------------------------------------------------------- Griffith
def _tip_paths(trace: EvolutionTrace):
    """Map each step to ``{initial tip: (current tip, path length)}``.

    Returns ``None`` when growth is not a set of simple paths hanging off the
    tips of the initial crack (the structure the Griffith check assumes).
    """
    mesh = trace.mesh
    K0 = trace.records[0].crack
    tips0 = K0.tips(mesh)
    out = []
    for rec in trace.records:
        grown = rec.crack.edge_set - K0.edge_set
        cur = {tp: (tp, 0.0) for tp in tips0}
        remaining = set(grown)
        for tp in tips0:
            v, length = tp, 0.0
            while True:
                nxt = [k for k in mesh.vertex_edges[v] if k in remaining]
                if not nxt:
                    break
                if len(nxt) > 1:
                    return None
                k = nxt[0]
                remaining.discard(k)
                a, b = mesh.edges[k]
                v = int(b if a == v else a)
                length += float(mesh.edge_lengths[k])
            cur[tp] = (v, length)
        if remaining:
            return None
        out.append(cur)
    return out


def griffith_check(trace: EvolutionTrace, program: BoundaryProgram | None = None,
                   tol_G: float = 0.2) -> Report:
    """Discrete Griffith conditions at every tip of a path-like crack growth.

    Per step and tip: the advance ``d_sigma`` (must be >= 0), the largest
    release rate ``G`` over single-edge extensions at the current tip, and
    the residual ``(1 - G) d_sigma / delta``.  A stationary tip needs
    ``G <= 1 + tol_G``; an advancing tip needs ``|1 - G| <= tol_G``.
    """
    program = program or trace.program
    mesh = trace.mesh
    report = Report("griffith")
    if all(len(r.crack) == 0 for r in trace.records):
        report.note = "no crack: vacuous"
        return report
    paths = _tip_paths(trace)
    if paths is None or not trace.records[0].crack.tips(mesh):
        report.applicable = False
        report.note = "NOT-APPLICABLE: growth is not a union of tip paths"
        return report
    delta = trace.schedule.delta
    for i, rec in enumerate(trace.records):
        if i == 0:
            continue
        g = program(rec.time)
        for tip0, (tip, length) in paths[i].items():
            prev_len = paths[i - 1][tip0][1]
            ds = length - prev_len
            row = {"step": i, "t": rec.time, "tip0": tip0, "tip": tip, "sigma": length,
                   "d_sigma": ds}
            if mesh.is_boundary_vertex[tip] or tip in _interior_crack_vertices(mesh, rec.crack, tip):
                row.update({"G": float("nan"), "slack": None, "residual": None,
                            "advancing": ds > 0, "passed": bool(ds >= 0),
                            "note": "tip left the interior"})
                report.rows.append(row)
                continue
            G, edge = max_tip_release(mesh, rec.crack, g, tip)
            advancing = ds > 0
            ok = ds >= 0 and (abs(1.0 - G) <= tol_G if advancing else G <= 1.0 + tol_G)
            row.update({"G": G, "edge": edge, "slack": 1.0 - G,
                        "residual": (1.0 - G) * ds / delta, "advancing": advancing,
                        "passed": bool(ok)})
            report.rows.append(row)
    return report


def _interior_crack_vertices(mesh: Mesh, crack: CrackSet, tip: int) -> set:
    # a tip that merged into another branch has crack degree > 1
    deg = crack.vertex_degrees(mesh).get(tip, 0)
    return {tip} if deg > 1 else set()


def worst_griffith_residual(report: Report) -> float:
    """Largest violation ``max(|1 - G|)`` over advancing rows and ``max(G - 1, 0)``
    over stationary rows."""
    worst = 0.0
    for r in report.rows:
        G = r.get("G")
        if G is None or not math.isfinite(G):
            continue
        worst = max(worst, abs(1.0 - G) if r["advancing"] else max(G - 1.0, 0.0))
    return worst


# ------------------------------------------------------------- slopes, jumps
def derivative_slope_check(trace: EvolutionTrace, program: BoundaryProgram | None = None,
                           tol_slope: float = 1e-8, lags: Sequence[int] = (1, 2)) -> Report:
    """Left difference quotients of ``s -> E(g(t_j), K(s))`` at ``s = t_j``.

    Reports ``[E(g(t_j), K(t_{j-l})) - E(g(t_j), K(t_j))] / (t_{j-l} - t_j)``;
    a check passes if it is at most ``tol_slope * (1 + E(g(t_j), K(t_j)))``.
    """
    program = program or trace.program
    mesh = trace.mesh
    if len(trace.records) < 3:
        raise ValueError("need at least three steps")
    report = Report("derivative_slope")
    for j in range(2, len(trace.records)):
        rj = trace.records[j]
        g = program(rj.time)
        e_t = None
        for lag in lags:
            rs = trace.records[j - lag]
            if rs.crack.edge_set == rj.crack.edge_set:
                slope = 0.0
                e_ref = e_t if e_t is not None else math.nan
            else:
                if e_t is None:
                    e_t = harmonic_energy(mesh, build_dofmap(mesh, rj.crack), g).total
                e_s = harmonic_energy(mesh, build_dofmap(mesh, rs.crack), g).total
                slope = (e_s - e_t) / (rs.time - rj.time)
                e_ref = e_t
            bound = tol_slope * (1.0 + (abs(e_ref) if math.isfinite(e_ref) else 0.0))
            report.rows.append({"j": j, "t": rj.time, "lag": lag, "slope": slope,
                                "slack": bound - slope, "passed": bool(slope <= bound)})
    return report


def max_slope(report: Report) -> float:
    return max((r["slope"] for r in report.rows), default=0.0)


def jump_report(trace: EvolutionTrace) -> Report:
    """Descriptive list of crack jumps (steps where the crack grew)."""
    report = Report("jumps", note="descriptive only")
    for a, b in zip(trace.records, trace.records[1:]):
        if b.crack.edge_set != a.crack.edge_set:
            report.rows.append({"step": b.index, "t": b.time,
                                "added_edges": len(b.crack) - len(a.crack),
                                "added_length": b.crack.total_length - a.crack.total_length,
                                "d_H": hausdorff_distance(trace.mesh, a.crack, b.crack)})
    return report


# -------------------------------------------------------- delta refinement
def delta_convergence_study(mesh: Mesh, scenario: Scenario, deltas: Sequence[float],
                            n_samples: int = 11) -> list[dict]:
    """Run ``scenario`` for each time step and compare with the finest run.

    Rows hold ``delta``, sample time, ``d_H(K_delta(t), K_finest(t))`` and the
    final-time total energy difference.
    """
    deltas = [float(d) for d in deltas]
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly decreasing")
    if scenario.mesh is not mesh:
        scenario = Scenario(mesh, scenario.initial_crack, scenario.program, scenario.T,
                            scenario.lam, scenario.m, scenario.policy)
    traces = [scenario.run(d) for d in deltas]
    finest = traces[-1]
    times = np.linspace(0.0, scenario.T, n_samples)
    rows = []
    e_fine = finest.records[-1].energies.total
    for d, tr in zip(deltas, traces):
        e_final = tr.records[-1].energies.total
        for t in times:
            _, K = interpolate(tr, float(t))
            _, Kf = interpolate(finest, float(t))
            rows.append({"delta": d, "t": float(t), "d_H": hausdorff_distance(mesh, K, Kf),
                         "final_energy_diff": e_final - e_fine})
    return rows


def write_reports(reports: Iterable[Report], directory) -> dict:
    """Write ``<name>.csv`` per report and return the combined JSON summary."""
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    summary = {}
    for rep in reports:
        (directory / f"{rep.name}.csv").write_text(rep.to_csv())
        summary[rep.name] = rep.summary()
    total = {"checks": sum(s["checks"] for s in summary.values()),
             "passes": sum(s["passes"] for s in summary.values())}
    slacks = [s["worst_slack"] for s in summary.values() if s["worst_slack"] is not None]
    total["worst_slack"] = min(slacks) if slacks else None
    out = {**total, "reports": summary}
    (directory / "summary.json").write_text(json.dumps(out, indent=2))
    return out
