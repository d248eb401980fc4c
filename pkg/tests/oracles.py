"""Independent reference computations for the test-suite.

Nothing here imports the package's assembly, DOF or search code.  The
penalized crack energy is recomputed from raw vertices and triangles with a
hand-written P1 assembly, a breadth-first corner grouping for the crack
split and a plain dense solve.
"""

from __future__ import annotations

import itertools
from collections import defaultdict

import numpy as np


def _edge_key(a, b):
    return (min(a, b), max(a, b))


class BruteForce:
    """Enumerate every admissible superset adding at most ``k`` edges."""

    def __init__(self, vertices, triangles, dirichlet_pairs):
        self.X = np.asarray(vertices, dtype=float)
        self.T = np.asarray(triangles, dtype=int)
        tri_of_edge = defaultdict(list)
        for t, tri in enumerate(self.T):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                tri_of_edge[_edge_key(a, b)].append(t)
        self.tri_of_edge = dict(tri_of_edge)
        self.interior = sorted(e for e, ts in tri_of_edge.items() if len(ts) == 2)
        self.dirichlet = {_edge_key(*p) for p in dirichlet_pairs}
        self.area = np.empty(len(self.T))
        self.local = np.empty((len(self.T), 3, 3))
        for t, tri in enumerate(self.T):
            P = np.column_stack([np.ones(3), self.X[tri]])
            coef = np.linalg.inv(P)  # columns: basis functions a + b x + c y
            grads = coef[1:, :].T
            self.area[t] = 0.5 * abs(np.linalg.det(P))
            self.local[t] = self.area[t] * grads @ grads.T

    # ------------------------------------------------------------ topology
    def dof_groups(self, crack):
        """Union triangle corners around each vertex across uncracked edges."""
        crack = {_edge_key(*e) for e in crack}
        parent = {}

        def find(c):
            while parent[c] != c:
                parent[c] = parent[parent[c]]
                c = parent[c]
            return c

        for t, tri in enumerate(self.T):
            for k in range(3):
                parent[(t, k)] = (t, k)
        for e, ts in self.tri_of_edge.items():
            if len(ts) != 2 or e in crack:
                continue
            t1, t2 = ts
            for v in e:
                c1 = (t1, list(self.T[t1]).index(v))
                c2 = (t2, list(self.T[t2]).index(v))
                parent[find(c1)] = find(c2)
        roots = sorted({find(c) for c in parent})
        index = {r: i for i, r in enumerate(roots)}
        corner = np.empty((len(self.T), 3), dtype=int)
        for (t, k) in parent:
            corner[t, k] = index[find((t, k))]
        return corner, len(roots)

    def components(self, edges):
        adj = defaultdict(set)
        for a, b in edges:
            adj[a].add(b)
            adj[b].add(a)
        seen, count = set(), 0
        for v in adj:
            if v in seen:
                continue
            count += 1
            stack = [v]
            while stack:
                x = stack.pop()
                if x in seen:
                    continue
                seen.add(x)
                stack.extend(adj[x] - seen)
        return count

    # -------------------------------------------------------------- energy
    def energy(self, crack, g, anchor_corners, lam):
        """Penalized energy minimum; ``anchor_corners`` has shape (nt, 3)."""
        corner, n = self.dof_groups(crack)
        K = np.zeros((n, n))
        mass = np.zeros(n)
        w = np.zeros(n)
        for t in range(len(self.T)):
            for a in range(3):
                mass[corner[t, a]] += self.area[t] / 3.0
                w[corner[t, a]] = anchor_corners[t, a]
                for b in range(3):
                    K[corner[t, a], corner[t, b]] += self.local[t, a, b]
        fixed = np.zeros(n, dtype=bool)
        u = np.zeros(n)
        for e in self.dirichlet:
            (t,) = self.tri_of_edge[e]
            for v in e:
                d = corner[t, list(self.T[t]).index(v)]
                fixed[d] = True
                u[d] = g[v]
        A = K + lam * np.diag(mass)
        free = ~fixed
        rhs = lam * mass * w - A @ u
        u[free] = np.linalg.solve(A[np.ix_(free, free)], rhs[free])
        length = sum(np.linalg.norm(self.X[a] - self.X[b]) for a, b in crack)
        bulk = float(u @ K @ u)
        pen = lam * float((mass * (u - w) ** 2).sum())
        return bulk + length + pen

    def argmin(self, prev, g, anchor_corners, lam, m, k=2, rel_tol=1e-10):
        """Lowest energy over ``prev`` and its admissible supersets.

        Ties go to fewer added edges, then to the smallest sorted edge list;
        ``prev`` wins unless beaten by more than ``rel_tol`` (relative).
        """
        prev = sorted(_edge_key(*e) for e in prev)
        free = [e for e in self.interior if e not in prev]
        e_prev = self.energy(prev, g, anchor_corners, lam)
        best = None
        for r in range(1, k + 1):
            for extra in itertools.combinations(free, r):
                K = prev + list(extra)
                if self.components(K) > m:
                    continue
                e = self.energy(K, g, anchor_corners, lam)
                key = (e, r, sorted(extra))
                if best is None or key < best[0]:
                    best = (key, sorted(K))
        if best is None or best[0][0] >= e_prev - rel_tol * max(1.0, abs(e_prev)):
            return prev, e_prev
        return best[1], best[0][0]
