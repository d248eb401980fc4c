"""Time-discrete penalized crack evolution.

At every time ``t_i = i * delta`` the crack is extended by iterated greedy
descent on ``E_lam(g(t_i), K, u_{i-1})`` over a policy-restricted family of
supersets of the previous crack, and ``u_i`` is the penalized minimizer on the
accepted crack.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .mesh import (CrackSet, Mesh, admissible_extensions, build_dofmap, parse_policy,
                   splits_dofs)
from .solver import (EnergyBreakdown, Field, SolverError, energy, l2_norm_sq, lift,
                     solve_harmonic, solve_penalized_with_energy, transfer_field,
                     vertex_dirichlet_norm_sq, vertex_l2_norm_sq)

REL_TOL = 1e-10

SEARCH_NOTE = ("crack minimization restricted to the policy candidate family "
               "(iterated greedy descent); not a global minimum over all admissible cracks")


class StepError(RuntimeError):
    """A candidate solve failed inside an evolution step."""

    def __init__(self, message: str, candidate: tuple[int, ...]):
        super().__init__(message)
        self.candidate = candidate


# ---------------------------------------------------------------- loading
@dataclass(frozen=True)
class TimeProfile:
    """Continuous piecewise-linear function of time, constant beyond its knots."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.times) == 0 or len(self.times) != len(self.values):
            raise ValueError("profile needs matching, nonempty times and values")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("profile knot times must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs) -> "TimeProfile":
        ts, vs = zip(*[(float(t), float(v)) for t, v in pairs])
        return cls(tuple(ts), tuple(vs))

    def __call__(self, t: float) -> float:
        return float(np.interp(t, self.times, self.values))

    def rate(self, t: float) -> float:
        """Right derivative at ``t``."""
        ts = self.times
        k = int(np.searchsorted(ts, t, side="right")) - 1
        if k < 0 or k >= len(ts) - 1:
            return 0.0
        return (self.values[k + 1] - self.values[k]) / (ts[k + 1] - ts[k])


@dataclass
class BoundaryProgram:
    """Boundary displacement ``g(t) = sum_k s_k(t) * phi_k`` with nodal ``phi_k``."""

    modes: list[tuple[TimeProfile, np.ndarray]]
    _gram: dict = field(default_factory=dict, repr=False, compare=False)

    def __call__(self, t: float) -> np.ndarray:
        out = np.zeros_like(self.modes[0][1], dtype=float)
        for s, phi in self.modes:
            out = out + s(t) * phi
        return out

    def rate(self, t: float) -> np.ndarray:
        out = np.zeros_like(self.modes[0][1], dtype=float)
        for s, phi in self.modes:
            out = out + s.rate(t) * phi
        return out

    def knots(self) -> np.ndarray:
        return np.unique(np.concatenate([s.times for s, _ in self.modes]))

    @property
    def sup_norm(self) -> float:
        """``sup_t ||g(t)||_inf``; attained at a knot since g is piecewise linear."""
        return max(float(np.abs(self(t)).max()) for t in self.knots())

    def is_static(self) -> bool:
        return all(len(set(s.values)) <= 1 for s, _ in self.modes)

    def _grams(self, mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
        key = mesh.fingerprint
        if key not in self._gram:
            phis = [phi for _, phi in self.modes]
            n = len(phis)
            G = np.empty((n, n))
            M = np.empty((n, n))
            for a in range(n):
                for b in range(a, n):
                    G[a, b] = G[b, a] = 0.25 * (vertex_dirichlet_norm_sq(mesh, phis[a] + phis[b])
                                                - vertex_dirichlet_norm_sq(mesh, phis[a] - phis[b]))
                    M[a, b] = M[b, a] = 0.25 * (vertex_l2_norm_sq(mesh, phis[a] + phis[b])
                                                - vertex_l2_norm_sq(mesh, phis[a] - phis[b]))
            self._gram[key] = (G, M)
        return self._gram[key]

    def rate_norm_integrals(self, mesh: Mesh, a: float, b: float) -> tuple[float, float]:
        """``(int_a^b ||grad g'||, int_a^b ||g'||)`` computed exactly."""
        if b <= a:
            return 0.0, 0.0
        G, M = self._grams(mesh)
        pts = self.knots()
        pts = np.unique(np.concatenate([[a, b], pts[(pts > a) & (pts < b)]]))
        ig = il = 0.0
        for lo, hi in zip(pts[:-1], pts[1:]):
            c = np.array([s.rate(lo) for s, _ in self.modes])
            ig += (hi - lo) * math.sqrt(max(c @ G @ c, 0.0))
            il += (hi - lo) * math.sqrt(max(c @ M @ c, 0.0))
        return ig, il


# ----------------------------------------------------------------- records
@dataclass(frozen=True)
class Schedule:
    T: float
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.T <= 0:
            raise ValueError("T must be positive")

    @property
    def steps(self) -> int:
        # guard against T / delta landing just below an integer
        return int(math.floor(self.T / self.delta + 1e-9))

    def time(self, i: int) -> float:
        return i * self.delta

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.delta


@dataclass(frozen=True)
class StepRecord:
    index: int
    time: float
    crack: CrackSet
    field: Field
    energies: EnergyBreakdown
    increment_norm: float = 0.0
    candidates_evaluated: int = 0
    min_evaluated_total: float = math.inf
    rounds: int = 0

    def row(self) -> dict:
        return {
            "i": self.index,
            "t": self.time,
            "n_crack_edges": len(self.crack),
            "crack_length": self.crack.total_length,
            "n_components": self.crack.n_components,
            **self.energies.as_row(),
            "increment_norm": self.increment_norm,
            "candidates_evaluated": self.candidates_evaluated,
        }


@dataclass
class EvolutionTrace:
    mesh: Mesh
    schedule: Schedule
    lam: float
    m: int
    policy: tuple[str, int]
    initial_crack: CrackSet
    records: list[StepRecord] = field(default_factory=list)
    program: BoundaryProgram | None = None

    @property
    def header(self) -> dict:
        return {
            "mesh": self.mesh.fingerprint,
            "lambda": self.lam,
            "m": self.m,
            "policy": f"{self.policy[0]}:{self.policy[1]}",
            "T": self.schedule.T,
            "delta": self.schedule.delta,
            "search": SEARCH_NOTE,
        }

    def rows(self) -> list[dict]:
        return [r.row() for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("QC_THREADS", "1")))
    except ValueError:
        return 1


# -------------------------------------------------------------------- step
def step(mesh: Mesh, prev: StepRecord, g_i, lam: float, m: int, policy="TIP+NUCLEATE", *,
         time: float | None = None, rel_tol: float = REL_TOL, max_rounds: int | None = None,
         threads: int | None = None) -> StepRecord:
    """One incremental minimization step.

    Starting from ``prev.crack``, repeatedly evaluates every policy candidate
    with the penalty anchored at ``prev.field`` and accepts the one with the
    lowest total if it improves by more than ``rel_tol`` (relative).  Ties go
    to fewer added edges, then to the lexicographically smallest edge set.
    ``max_rounds=0`` disables crack growth entirely.
    """
    policy = parse_policy(policy)
    anchor = prev.field
    cache: dict[tuple, tuple[Field, EnergyBreakdown]] = {}

    base: list = []

    def evaluate(K: CrackSet):
        key = K.edge_ids
        if key not in cache:
            if base:
                u0, e0 = base
                K0 = u0.dofmap.crack
                if K0.issubset(K) and not splits_dofs(mesh, K0, K.edge_set - K0.edge_set):
                    # same DOF partition as the current crack: only the length changes
                    cache[key] = (None, EnergyBreakdown(e0.bulk, K.total_length, e0.penalty))
                    return cache[key]
            try:
                cache[key] = solve_penalized_with_energy(build_dofmap(mesh, K), g_i, anchor, lam)
            except SolverError as exc:
                raise StepError(f"solve failed for candidate {key}: {exc}", key) from exc
        return cache[key]

    def accept(K: CrackSet):
        u, e = evaluate(K)
        if u is None:
            u = Field(base[0].values, build_dofmap(mesh, K), base[0].residual)
            cache[K.edge_ids] = (u, e)
        base[:] = [u, e]
        return u, e

    n_threads = threads or _threads()
    pool = ThreadPoolExecutor(n_threads) if n_threads > 1 else None
    try:
        current = prev.crack
        u, e = accept(current)
        evaluated = 0
        min_total = e.total
        rounds = 0
        while max_rounds is None or rounds < max_rounds:
            cands = admissible_extensions(mesh, current, m, policy)
            if not cands:
                break
            results = list(pool.map(evaluate, cands)) if pool else [evaluate(K) for K in cands]
            evaluated += len(cands)
            rounds += 1
            best = None
            for K, (_, eK) in zip(cands, results):
                min_total = min(min_total, eK.total)
                key = (eK.total, len(K) - len(current), K.edge_ids)
                if best is None or key < best[0]:
                    best = (key, K)
            threshold = e.total - rel_tol * max(1.0, abs(e.total))
            if best is None or best[0][0] >= threshold:
                break
            current = best[1]
            u, e = accept(current)
    finally:
        if pool:
            pool.shutdown()

    inc = math.sqrt(l2_norm_sq(u.dofmap, u.values - transfer_field(anchor, u.dofmap).values))
    return StepRecord(
        index=prev.index + 1,
        time=prev.time if time is None else time,
        crack=current,
        field=u,
        energies=e,
        increment_norm=inc,
        candidates_evaluated=evaluated,
        min_evaluated_total=min_total,
        rounds=rounds,
    )


def initial_record(mesh: Mesh, K0: CrackSet, g0) -> StepRecord:
    u0 = solve_harmonic(mesh, K0, g0)
    return StepRecord(0, 0.0, K0, u0, energy(mesh, K0, u0))


def run(mesh: Mesh, K0: CrackSet, program: BoundaryProgram, schedule: Schedule, lam: float,
        m: int = 1, policy="TIP+NUCLEATE", *, max_rounds: int | None = None,
        progress: Callable[[StepRecord], None] | None = None) -> EvolutionTrace:
    """Run the discrete scheme on ``t_i = i * delta`` for ``t_i <= T``."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if K0.n_components > m:
        raise ValueError("initial crack has more than m components")
    policy = parse_policy(policy)
    trace = EvolutionTrace(mesh, schedule, float(lam), int(m), policy, K0, program=program)
    rec = initial_record(mesh, K0, program(0.0))
    trace.records.append(rec)
    for i in range(1, schedule.steps + 1):
        t = schedule.time(i)
        rec = step(mesh, rec, program(t), lam, m, policy, time=t, max_rounds=max_rounds)
        trace.records.append(rec)
        if progress:
            progress(rec)
    return trace


@dataclass
class Scenario:
    """Everything but the time step needed to run an evolution."""

    mesh: Mesh
    initial_crack: CrackSet
    program: BoundaryProgram
    T: float
    lam: float
    m: int = 1
    policy: object = "TIP+NUCLEATE"

    def run(self, delta: float, **kw) -> EvolutionTrace:
        return run(self.mesh, self.initial_crack, self.program, Schedule(self.T, delta),
                   self.lam, self.m, self.policy, **kw)


# ------------------------------------------------------------ interpolation
def record_index(trace: EvolutionTrace, t: float) -> int:
    T = trace.schedule.T
    if t < 0 or t > T + 1e-12:
        raise ValueError(f"time {t} outside [0, {T}]")
    i = int(math.floor(t / trace.schedule.delta + 1e-9))
    return min(i, len(trace.records) - 1)


def interpolate(trace: EvolutionTrace, t: float) -> tuple[Field, CrackSet]:
    """Right-open piecewise-constant interpolant of the trace."""
    rec = trace.records[record_index(trace, t)]
    return rec.field, rec.crack


def _gradient_pairing(u: Field, dg_vertex: np.ndarray) -> float:
    mesh = u.dofmap.mesh
    gu = u.gradients()
    gg = np.einsum("tk,tkc->tc", dg_vertex[mesh.triangles], mesh.basis_gradients)
    return float(((gu * gg).sum(1) * mesh.areas).sum())


def work_integral(trace: EvolutionTrace, program: BoundaryProgram, s: float, t: float) -> float:
    """``2 int_s^t (grad u(tau) | grad g'(tau)) dtau`` for the step interpolant ``u``.

    On each piece ``[a, b]`` where ``u`` equals ``u_r`` the integral is exactly
    ``(grad u_r | grad (g(b) - g(a)))`` because ``g`` is absolutely continuous.
    """
    if t <= s:
        return 0.0
    delta = trace.schedule.delta
    n = len(trace.records) - 1
    total = 0.0
    a = s
    while a < t - 1e-15:
        r = min(int(math.floor(a / delta + 1e-9)), n)
        b = t if r == n else min(t, (r + 1) * delta)
        if b <= a:
            break
        total += _gradient_pairing(trace.records[r].field, program(b) - program(a))
        a = b
    return 2.0 * total


def rho(mesh: Mesh, program: BoundaryProgram, schedule: Schedule, lam: float) -> float:
    """Remainder of the discrete energy estimate, from the loading alone.

    ``sigma * int_0^T (||grad g'|| + lam ||g'||)`` where ``sigma`` is the
    largest per-step integral of ``||grad g'|| + ||g'||``.
    """
    sigma = 0.0
    for r in range(schedule.steps):
        ig, il = program.rate_norm_integrals(mesh, schedule.time(r), schedule.time(r + 1))
        sigma = max(sigma, ig + il)
    ig, il = program.rate_norm_integrals(mesh, 0.0, schedule.T)
    return sigma * (ig + lam * il)


def a_priori_bound(mesh: Mesh, K0: CrackSet, u0: Field, program: BoundaryProgram,
                   schedule: Schedule, lam: float) -> dict:
    """Explicit bounds on bulk energy, crack length and summed increments.

    Bulk: ``||grad g_i||^2 + lam ||g_i - u_{i-1}||^2`` with the sup-norm bound
    ``||u|| <= M_g``.  Length and increments: the discrete energy estimate with
    the work term bounded by Cauchy-Schwarz.
    """
    Mg = program.sup_norm
    area = float(mesh.areas.sum())
    bulk_g = max(vertex_dirichlet_norm_sq(mesh, program(t))
                 for t in np.concatenate([program.knots(), schedule.times]) if t <= schedule.T)
    bulk_bound = bulk_g + lam * (2.0 * Mg) ** 2 * area
    e0 = energy(mesh, K0, u0)
    ig, _ = program.rate_norm_integrals(mesh, 0.0, schedule.T)
    work = 2.0 * math.sqrt(bulk_bound) * ig
    chain = e0.bulk + e0.surface + work + rho(mesh, program, schedule, lam)
    return {
        "bulk": max(bulk_bound, e0.bulk),
        "surface": chain,
        "increments": chain / lam if lam > 0 else math.inf,
        "sup_norm": Mg,
    }


def nodal_sup(field_: Field) -> float:
    return float(np.abs(field_.values).max()) if len(field_.values) else 0.0


__all__ = [
    "BoundaryProgram", "EvolutionTrace", "Scenario", "Schedule", "StepError", "StepRecord",
    "TimeProfile", "a_priori_bound", "initial_record", "interpolate", "lift", "record_index",
    "rho", "run", "step", "work_integral",
]
