import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qsfracture.analysis import (Report, delta_convergence_study, derivative_slope_check,
                                 directed_hausdorff_segments, discrete_energy_check,
                                 energy_balance_check, griffith_check, hausdorff_distance,
                                 jump_report, max_slope, minimality_check, release_rate,
                                 write_reports)
from qsfracture.evolution import (BoundaryProgram, Scenario, Schedule, StepRecord, TimeProfile,
                                  run, step)
from qsfracture.mesh import CrackSet, build_rect_mesh
from qsfracture.solver import EnergyBreakdown, harmonic_energy, solve_harmonic

# extrapolated release rate of a centered horizontal slit of length 1/4 under g = y
CENTER_SLIT_RELEASE = 0.3726


def vid(n, i, j):
    return j * (n + 1) + i


def hline(m, n, j, i0, i1):
    return [m.edge_id(vid(n, i, j), vid(n, i + 1, j)) for i in range(i0, i1)]


def vline(m, n, i, j0, j1):
    return [m.edge_id(vid(n, i, j), vid(n, i, j + 1)) for j in range(j0, j1)]


def sampled_hausdorff(A, B, per_segment=400):
    """Brute-force lower estimate from dense point samples of both sets."""
    s = np.linspace(0, 1, per_segment)

    def pts(S):
        return (S[:, None, 0, :] + s[None, :, None] * (S[:, None, 1, :] - S[:, None, 0, :])).reshape(-1, 2)

    def point_dist(P, S):
        a, d = S[:, 0], S[:, 1] - S[:, 0]
        r = P[:, None, :] - a[None]
        t = np.clip((r * d).sum(-1) / (d * d).sum(-1), 0, 1)
        return np.linalg.norm(r - t[..., None] * d, axis=-1).min(1)

    return max(point_dist(pts(A), B).max(), point_dist(pts(B), A).max())


def linear_program(phi, amplitude):
    return BoundaryProgram([(TimeProfile.from_pairs([(0, 0), (1, amplitude)]), phi)])


class TestHausdorff:
    def setup_method(self):
        self.n = 8
        self.m = build_rect_mesh(1, 1, 8, 8)

    def K(self, edges):
        return CrackSet.from_edges(self.m, edges)

    def test_empty_conventions(self):
        K = self.K(hline(self.m, 8, 4, 2, 4))
        assert hausdorff_distance(self.m, CrackSet.empty(), CrackSet.empty()) == 0.0
        assert hausdorff_distance(self.m, CrackSet.empty(), K) == self.m.diameter
        assert hausdorff_distance(self.m, K, CrackSet.empty()) == self.m.diameter

    def test_parallel_offset_segments(self):
        a = self.K(hline(self.m, 8, 2, 1, 7))
        b = self.K(hline(self.m, 8, 5, 1, 7))
        assert hausdorff_distance(self.m, a, b) == pytest.approx(3 / 8, abs=1e-15)

    def test_collinear_extension(self):
        a = self.K(hline(self.m, 8, 4, 1, 3))
        b = self.K(hline(self.m, 8, 4, 1, 6))
        assert hausdorff_distance(self.m, a, b) == pytest.approx(3 / 8, abs=1e-15)

    def test_interior_maximum_found(self):
        # the farthest point of the long segment from two short end pieces is its midpoint
        A = np.array([[[0.0, 0.0], [1.0, 0.0]]])
        B = np.array([[[0.0, 0.2], [0.1, 0.2]], [[0.9, 0.2], [1.0, 0.2]]])
        expected = math.hypot(0.4, 0.2)
        assert directed_hausdorff_segments(A, B) == pytest.approx(expected, abs=1e-14)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.integers(0, 10_000), min_size=1, max_size=5),
           st.lists(st.integers(0, 10_000), min_size=1, max_size=5))
    def test_matches_dense_sampling(self, pa, pb):
        ie = self.m.interior_edges
        a = self.K([int(ie[p % len(ie)]) for p in pa])
        b = self.K([int(ie[p % len(ie)]) for p in pb])
        exact = hausdorff_distance(self.m, a, b)
        approx = sampled_hausdorff(self.m.edge_segments(a.edge_ids),
                                   self.m.edge_segments(b.edge_ids))
        assert approx <= exact + 1e-12
        assert exact - approx <= 1.0 / 8 / 399 + 1e-12

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.integers(0, 10_000), max_size=4), min_size=3, max_size=3))
    def test_metric_axioms(self, picks):
        ie = self.m.interior_edges
        a, b, c = (self.K([int(ie[p % len(ie)]) for p in ps]) for ps in picks)
        d = lambda x, y: hausdorff_distance(self.m, x, y)  # noqa: E731
        assert d(a, b) == d(b, a)
        assert d(a, a) == 0.0
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
        if a.edge_set != b.edge_set:
            assert d(a, b) > 0


class TestReleaseRate:
    def test_constant_data_releases_nothing(self):
        m = build_rect_mesh(1, 1, 8, 8)
        K = CrackSet.from_edges(m, vline(m, 8, 4, 0, 3))
        e = m.edge_id(vid(8, 4, 3), vid(8, 4, 4))
        assert release_rate(m, K, np.full(m.n_vertices, 2.0), e) == pytest.approx(0, abs=1e-12)

    def test_unsplit_extension_releases_nothing(self):
        # an interior slit extended inside the domain: the tip vertex stays whole
        m = build_rect_mesh(1, 1, 8, 8)
        _, y = m.vertices.T
        K = CrackSet.from_edges(m, vline(m, 8, 4, 2, 3))
        e = m.edge_id(vid(8, 4, 3), vid(8, 4, 4))
        assert abs(release_rate(m, K, y, e)) <= 1e-8

    def test_not_incident_rejected(self):
        m = build_rect_mesh(1, 1, 8, 8)
        K = CrackSet.from_edges(m, vline(m, 8, 4, 0, 2))
        far = m.edge_id(vid(8, 1, 5), vid(8, 1, 6))
        with pytest.raises(ValueError):
            release_rate(m, K, np.zeros(m.n_vertices), far)
        with pytest.raises(ValueError):
            release_rate(m, K, np.zeros(m.n_vertices), K.edge_ids[0])

    def test_nonnegative_for_all_candidates(self):
        m = build_rect_mesh(1, 1, 8, 8, ("left", "bottom"))
        x, y = m.vertices.T
        g = np.sin(4 * x) + y**2
        K = CrackSet.from_edges(m, vline(m, 8, 4, 0, 3))
        verts = set(K.vertex_degrees(m))
        for e in m.interior_edges:
            if e not in K.edge_set and set(m.edges[e].tolist()) & verts:
                assert release_rate(m, K, g, e) >= -1e-10

    def test_center_slit_refinement(self):
        rates = []
        for n in (16, 32, 64):
            m = build_rect_mesh(1, 1, n, n)
            _, y = m.vertices.T
            j, i0, i1 = n // 2, 3 * n // 8, 5 * n // 8
            K = CrackSet.from_edges(m, hline(m, n, j, i0, i1))
            e = m.edge_id(vid(n, i1, j), vid(n, i1 + 1, j))
            rates.append(release_rate(m, K, y, e))
        d1, d2 = rates[1] - rates[0], rates[2] - rates[1]
        assert d1 > 0 and d2 > 0 and 1.5 <= d1 / d2 <= 3.0
        assert rates[2] + d2 == pytest.approx(CENTER_SLIT_RELEASE, abs=1e-3)


@pytest.fixture(scope="module")
def slit_trace():
    n = 16
    m = build_rect_mesh(1, 1, n, n, ("bottom",))
    x, _ = m.vertices.T
    K0 = CrackSet.from_edges(m, vline(m, n, n // 2, 0, n // 4))
    return run(m, K0, linear_program(x - 0.5, 3.2), Schedule(1, 0.05), 1.0, 1, ("TIP", 1))


@pytest.fixture(scope="module")
def uncracked_trace():
    m = build_rect_mesh(1, 1, 8, 8)
    x, y = m.vertices.T
    return run(m, CrackSet.empty(), linear_program(x + 0.5 * y, 2.0), Schedule(1, 0.1), 50.0)


class TestMinimality:
    def test_self_probe_is_equality(self, slit_trace):
        rep = minimality_check(slit_trace, 3, n_probes=0)
        self_row = rep.rows[0]
        assert self_row["probe_edges"] == 0 and self_row["slack"] == 0.0

    def test_trace_passes(self, slit_trace):
        for i in (5, 15, len(slit_trace) - 1):
            assert minimality_check(slit_trace, i, n_probes=5, seed=i, single_edges=True).passed

    def test_forced_non_minimal_crack_fails(self):
        m = build_rect_mesh(1, 1, 6, 6, ("left", "right"))
        x, _ = m.vertices.T
        prog = linear_program(x - 0.5, 30.0)
        tr = run(m, CrackSet.empty(), prog, Schedule(1, 0.5), 0.0, max_rounds=0)
        rep = minimality_check(tr, 2, n_probes=20, seed=1, single_edges=True)
        assert not rep.passed

    def test_step_zero_rejected(self, slit_trace):
        with pytest.raises(ValueError):
            minimality_check(slit_trace, 0)


class TestEnergyBalance:
    def test_static_program(self):
        m = build_rect_mesh(1, 1, 4, 4)
        x, _ = m.vertices.T
        prog = BoundaryProgram([(TimeProfile.from_pairs([(0, 1), (1, 1)]), x)])
        tr = run(m, CrackSet.empty(), prog, Schedule(1, 0.25), 1.0)
        rep = energy_balance_check(tr)
        assert rep.passed
        assert all(r["lhs"] == pytest.approx(0, abs=1e-14) and r["work"] == 0 for r in rep.rows)

    def test_uncracked_closed_form(self, uncracked_trace):
        tr = uncracked_trace
        x, y = tr.mesh.vertices.T
        bulk_phi = harmonic_energy(tr.mesh, None, x + 0.5 * y).bulk
        rep = energy_balance_check(tr, pairs=[(0.1, 0.7), (0.3, 1.0)])
        for r in rep.rows:
            assert r["lhs"] == pytest.approx(4.0 * (r["t"] ** 2 - r["s"] ** 2) * bulk_phi)
        assert rep.passed

    def test_slack_shrinks_with_delta(self):
        m = build_rect_mesh(1, 1, 6, 6)
        x, y = m.vertices.T
        prog = linear_program(x + 0.5 * y, 2.0)
        worst = []
        for delta in (0.1, 0.05):
            tr = run(m, CrackSet.empty(), prog, Schedule(1, delta), 10.0)
            rep = energy_balance_check(tr, pairs=[(0.0, 1.0)])
            worst.append(rep.rows[0]["slack"])
        assert worst[1] < worst[0]

    def test_growing_trace_passes(self, slit_trace):
        assert energy_balance_check(slit_trace).passed
        assert discrete_energy_check(slit_trace).passed

    def test_pairs_must_be_ordered(self, slit_trace):
        with pytest.raises(ValueError):
            energy_balance_check(slit_trace, pairs=[(0.5, 0.2)])


class TestGriffith:
    def test_no_crack_is_vacuous(self, uncracked_trace):
        rep = griffith_check(uncracked_trace)
        assert rep.passed and rep.checks == 0

    def test_subcritical_stationary(self):
        n = 16
        m = build_rect_mesh(1, 1, n, n, ("bottom",))
        x, _ = m.vertices.T
        K0 = CrackSet.from_edges(m, vline(m, n, n // 2, 0, n // 4))
        tr = run(m, K0, linear_program(x - 0.5, 1.5), Schedule(1, 0.1), 1.0, 1, ("TIP", 1))
        rep = griffith_check(tr)
        assert rep.passed
        assert all(r["d_sigma"] == 0 and r["G"] < 1 for r in rep.rows)

    def test_growth_through_criticality(self, slit_trace):
        rep = griffith_check(slit_trace)
        assert rep.applicable and rep.passed
        adv = [r for r in rep.rows if r["advancing"]]
        assert adv and abs(1 - adv[0]["G"]) <= 0.2
        assert all(r["d_sigma"] >= 0 for r in rep.rows)

    def test_branching_growth_not_applicable(self, slit_trace):
        m = slit_trace.mesh
        rec = slit_trace.records[-1]
        branch = [k for k in m.vertex_edges[vid(16, 8, 2)]
                  if k not in rec.crack.edge_set and not m.is_boundary_edge[k]][0]
        K = rec.crack.union(m, [branch])
        fake = StepRecord(rec.index + 1, rec.time, K, solve_harmonic(m, K, np.zeros(m.n_vertices)),
                          EnergyBreakdown(0, K.total_length))
        tr = run(m, slit_trace.initial_crack, slit_trace.program, Schedule(0.1, 0.05), 1.0, 1,
                 ("TIP", 1))
        tr.records.append(fake)
        rep = griffith_check(tr)
        assert not rep.applicable and "NOT-APPLICABLE" in rep.note


class TestStudies:
    def test_static_delta_study(self):
        m = build_rect_mesh(1, 1, 4, 4)
        x, _ = m.vertices.T
        prog = BoundaryProgram([(TimeProfile.from_pairs([(0, 0.5), (1, 0.5)]), x)])
        sc = Scenario(m, CrackSet.empty(), prog, 1.0, 1.0)
        rows = delta_convergence_study(m, sc, [0.5, 0.25, 0.125], n_samples=5)
        assert all(r["d_H"] == 0 for r in rows)

    def test_deltas_must_decrease(self):
        m = build_rect_mesh(1, 1, 2, 2)
        sc = Scenario(m, CrackSet.empty(), linear_program(np.zeros(9), 1), 1.0, 1.0)
        with pytest.raises(ValueError):
            delta_convergence_study(m, sc, [0.1, 0.2])

    def test_slope_check_no_crack(self, uncracked_trace):
        rep = derivative_slope_check(uncracked_trace)
        assert rep.passed and max_slope(rep) == 0.0

    def test_slope_check_on_growth(self, slit_trace):
        rep = derivative_slope_check(slit_trace)
        assert rep.passed

    def test_slope_check_needs_three_steps(self):
        m = build_rect_mesh(1, 1, 2, 2)
        tr = run(m, CrackSet.empty(), linear_program(np.zeros(9), 1), Schedule(1, 1.0), 1.0)
        with pytest.raises(ValueError):
            derivative_slope_check(tr)

    def test_jump_report_is_descriptive(self, slit_trace):
        rep = jump_report(slit_trace)
        assert rep.rows and rep.checks == 0
        assert all(r["added_edges"] > 0 for r in rep.rows)


class TestReportIO:
    def test_csv_and_summary(self, tmp_path):
        rep = Report("demo", rows=[{"a": 1, "slack": 0.5, "passed": True},
                                   {"a": 2, "slack": -0.1, "passed": False}])
        out = write_reports([rep], tmp_path)
        assert out["checks"] == 2 and out["passes"] == 1 and out["worst_slack"] == -0.1
        assert (tmp_path / "demo.csv").read_text().splitlines()[0] == "a,slack,passed"
