"""Triangulated rectangular domains, edge-based crack sets and their DOF maps.

Cracks are unions of interior mesh edges.  A field on the cracked domain is
piecewise linear per triangle, with one degree of freedom (DOF) per class of
triangle corners that can be reached from one another around a vertex without
crossing a crack edge.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

DIRICHLET = "D"
NEUMANN = "N"
SIDES = ("left", "right", "bottom", "top")

POLICIES = ("TIP", "TIP+NUCLEATE", "EXHAUSTIVE")


class Mesh:
    """Immutable triangulation with Dirichlet/Neumann boundary tags.

    Parameters
    ----------
    vertices : (nv, 2) array
    triangles : (nt, 3) int array, positively oriented
    dirichlet_edges : iterable of (a, b) vertex pairs on the boundary that
        carry the Dirichlet condition.  Every other boundary edge is Neumann.
    """

    def __init__(self, vertices, triangles, dirichlet_edges: Iterable[Sequence[int]] = ()):
        self.vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        self.triangles = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

        corners = self.vertices[self.triangles]
        d1 = corners[:, 1] - corners[:, 0]
        d2 = corners[:, 2] - corners[:, 0]
        self.areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(self.areas <= 0):
            raise ValueError("triangles must have positive signed area")

        # local edge k of a triangle is opposite corner k
        local = self.triangles[:, [[1, 2], [2, 0], [0, 1]]]
        pairs = np.sort(local.reshape(-1, 2), axis=1)
        self.edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        self.edges.setflags(write=False)
        self.triangle_edges = inverse.reshape(-1, 3)
        ne = len(self.edges)

        counts = np.bincount(inverse, minlength=ne)
        if np.any(counts > 2):
            raise ValueError("non-manifold edge")
        self.edge_triangles = np.full((ne, 2), -1, dtype=np.int64)
        order = np.argsort(inverse, kind="stable")
        tri_of = order // 3
        starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
        self.edge_triangles[:, 0] = tri_of[starts]
        two = counts == 2
        self.edge_triangles[two, 1] = tri_of[starts[two] + 1]
        self.is_boundary_edge = counts == 1
        self.interior_edges = np.flatnonzero(~self.is_boundary_edge)

        seg = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        self.edge_lengths = np.hypot(seg[:, 0], seg[:, 1])

        self._edge_index = {(int(a), int(b)): k for k, (a, b) in enumerate(self.edges)}
        self.boundary_tags: dict[int, str] = {
            int(k): NEUMANN for k in np.flatnonzero(self.is_boundary_edge)
        }
        for a, b in dirichlet_edges:
            k = self.edge_id(a, b)
            if not self.is_boundary_edge[k]:
                raise ValueError(f"edge ({a}, {b}) is not a boundary edge")
            self.boundary_tags[k] = DIRICHLET
        self.dirichlet_edges = np.array(
            sorted(k for k, tag in self.boundary_tags.items() if tag == DIRICHLET), dtype=np.int64
        )
        self.is_boundary_vertex = np.zeros(len(self.vertices), dtype=bool)
        self.is_boundary_vertex[self.edges[self.is_boundary_edge].ravel()] = True

        bv = self.vertices[self.is_boundary_vertex]
        diff = bv[:, None, :] - bv[None, :, :]
        self.diameter = float(np.sqrt((diff**2).sum(-1)).max()) if len(bv) else 0.0

        # P1 basis gradients: grad phi_k = J^{-T} grad hat-phi_k
        inv = np.empty((len(self.triangles), 2, 2))
        det = 2.0 * self.areas
        inv[:, 0, 0] = d2[:, 1] / det
        inv[:, 0, 1] = -d2[:, 0] / det
        inv[:, 1, 0] = -d1[:, 1] / det
        inv[:, 1, 1] = d1[:, 0] / det
        ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        # inv is (J^{-1}); rows of grad = ref @ J^{-1}
        self.basis_gradients = np.einsum("kr,trc->tkc", ref, inv)
        self.local_stiffness = self.areas[:, None, None] * np.einsum(
            "tic,tjc->tij", self.basis_gradients, self.basis_gradients
        )
        self._corner_pairs = self._interior_corner_pairs()
        self._dirichlet_corners = self._boundary_corners(self.dirichlet_edges)

    # ------------------------------------------------------------------ queries
    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def edge_id(self, a: int, b: int) -> int:
        key = (min(int(a), int(b)), max(int(a), int(b)))
        try:
            return self._edge_index[key]
        except KeyError:
            raise KeyError(f"no edge between vertices {a} and {b}") from None

    def edge_segments(self, edge_ids) -> np.ndarray:
        """Endpoint coordinates, shape (k, 2, 2)."""
        ids = np.asarray(list(edge_ids), dtype=np.int64)
        return self.vertices[self.edges[ids]]

    @cached_property
    def vertex_edges(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for k, (a, b) in enumerate(self.edges):
            adj[a].append(k)
            adj[b].append(k)
        return adj

    @cached_property
    def vertex_fans(self) -> list[tuple[list[int], list[tuple[int, int, int]]]]:
        """Per vertex: its flat corners and the (corner, corner, edge) links
        contributed by incident interior edges."""
        fans: list = [([], []) for _ in range(self.n_vertices)]
        for c, v in enumerate(self.triangles.ravel().tolist()):
            fans[v][0].append(c)
        for j, k in enumerate(self.interior_edges.tolist()):
            for e, v in enumerate(self.edges[k].tolist()):
                a, b = self._corner_pairs[j, e].tolist()
                fans[v][1].append((a, b, k))
        return fans

    def fan_pieces(self, v: int, cut) -> int:
        """Number of corner groups around ``v`` when edges in ``cut`` are cracked."""
        corners, links = self.vertex_fans[v]
        parent = {c: c for c in corners}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        n = len(corners)
        for a, b, k in links:
            if k in cut:
                continue
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[ra] = rb
                n -= 1
        return n

    @cached_property
    def is_obtuse(self) -> np.ndarray:
        c = self.vertices[self.triangles]
        out = np.zeros(self.n_triangles, dtype=bool)
        for k in range(3):
            u = c[:, (k + 1) % 3] - c[:, k]
            v = c[:, (k + 2) % 3] - c[:, k]
            out |= (u * v).sum(1) < -1e-12 * (np.hypot(*u.T) * np.hypot(*v.T))
        return out

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.sha1()
        h.update(np.ascontiguousarray(self.vertices).tobytes())
        h.update(np.ascontiguousarray(self.triangles).tobytes())
        h.update(self.dirichlet_edges.tobytes())
        return h.hexdigest()[:16]

    def _interior_corner_pairs(self) -> np.ndarray:
        """For every interior edge, the two corner pairs it glues together.

        Returns an (n_interior, 2, 2) array of flat corner indices
        (3 * triangle + local corner) for the edge's two endpoints.
        """
        out = np.empty((len(self.interior_edges), 2, 2), dtype=np.int64)
        for j, k in enumerate(self.interior_edges):
            t0, t1 = self.edge_triangles[k]
            for e, v in enumerate(self.edges[k]):
                c0 = int(np.flatnonzero(self.triangles[t0] == v)[0])
                c1 = int(np.flatnonzero(self.triangles[t1] == v)[0])
                out[j, e] = (3 * t0 + c0, 3 * t1 + c1)
        return out

    def _boundary_corners(self, edge_ids) -> np.ndarray:
        out = []
        for k in edge_ids:
            t = self.edge_triangles[k, 0]
            for v in self.edges[k]:
                out.append(3 * t + int(np.flatnonzero(self.triangles[t] == v)[0]))
        return np.asarray(out, dtype=np.int64)

    # ------------------------------------------------------------ serialization
    def to_dict(self) -> dict:
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "edges": self.edges.tolist(),
            "dirichlet_edges": self.edges[self.dirichlet_edges].tolist(),
            "diameter": self.diameter,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mesh":
        return cls(data["vertices"], data["triangles"], data.get("dirichlet_edges", ()))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Mesh":
        return cls.from_dict(json.loads(text))


def build_rect_mesh(width: float, height: float, nx: int, ny: int,
                    dirichlet_sides: Iterable[str] = SIDES) -> Mesh:
    """Structured right-triangle mesh of ``[0, width] x [0, height]``.

    Every cell is split along its (lower-left, upper-right) diagonal.  With
    square cells all triangles are right isosceles, hence nonobtuse.
    """
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be >= 1")
    sides = set(dirichlet_sides)
    if not sides:
        raise ValueError("dirichlet_sides must not be empty")
    unknown = sides - set(SIDES)
    if unknown:
        raise ValueError(f"unknown sides: {sorted(unknown)}")

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            tris.append((v00, v10, v11))
            tris.append((v00, v11, v01))

    dirichlet = []
    if "bottom" in sides:
        dirichlet += [(vid(i, 0), vid(i + 1, 0)) for i in range(nx)]
    if "top" in sides:
        dirichlet += [(vid(i, ny), vid(i + 1, ny)) for i in range(nx)]
    if "left" in sides:
        dirichlet += [(vid(0, j), vid(0, j + 1)) for j in range(ny)]
    if "right" in sides:
        dirichlet += [(vid(nx, j), vid(nx, j + 1)) for j in range(ny)]
    return Mesh(vertices, tris, dirichlet)


# ---------------------------------------------------------------- crack sets
def _check_interior(mesh: Mesh, ids) -> np.ndarray:
    ids = np.unique(np.asarray(list(ids), dtype=np.int64))
    if len(ids) and (ids.min() < 0 or ids.max() >= mesh.n_edges):
        raise ValueError("edge id out of range")
    if np.any(mesh.is_boundary_edge[ids]):
        bad = ids[mesh.is_boundary_edge[ids]].tolist()
        raise ValueError(f"boundary edges cannot belong to a crack: {bad}")
    return ids


def _component_labels(mesh: Mesh, ids: np.ndarray) -> tuple[int, dict[int, int]]:
    parent: dict[int, int] = {}

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in mesh.edges[ids].tolist():
        parent.setdefault(a, a)
        parent.setdefault(b, b)
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = sorted({find(v) for v in parent})
    index = {r: i for i, r in enumerate(roots)}
    return len(roots), {v: index[find(v)] for v in parent}


def crack_components(mesh: Mesh, edges) -> int:
    """Number of connected components of the graph spanned by ``edges``."""
    ids = _check_interior(mesh, edges)
    return _component_labels(mesh, ids)[0]


@dataclass(frozen=True)
class CrackSet:
    """A set of interior edges.  Build with :meth:`CrackSet.from_edges`."""

    edge_ids: tuple[int, ...]
    n_components: int
    total_length: float
    _labels: dict = field(default_factory=dict, compare=False, hash=False, repr=False)

    @classmethod
    def from_edges(cls, mesh: Mesh, edges=()) -> "CrackSet":
        ids = _check_interior(mesh, edges)
        n, labels = _component_labels(mesh, ids)
        length = float(mesh.edge_lengths[ids].sum()) if len(ids) else 0.0
        return cls(tuple(int(k) for k in ids), n, length, labels)

    @classmethod
    def empty(cls) -> "CrackSet":
        return cls((), 0, 0.0, {})

    def __len__(self) -> int:
        return len(self.edge_ids)

    def __contains__(self, edge) -> bool:
        return edge in self.edge_set

    @cached_property
    def edge_set(self) -> frozenset:
        return frozenset(self.edge_ids)

    def issubset(self, other: "CrackSet") -> bool:
        return self.edge_set <= other.edge_set

    def union(self, mesh: Mesh, edges) -> "CrackSet":
        return CrackSet.from_edges(mesh, self.edge_set | set(int(e) for e in edges))

    def vertex_degrees(self, mesh: Mesh) -> dict[int, int]:
        deg: dict[int, int] = {}
        for k in self.edge_ids:
            for v in mesh.edges[k]:
                deg[int(v)] = deg.get(int(v), 0) + 1
        return deg

    def tips(self, mesh: Mesh) -> list[int]:
        """Degree-one crack vertices away from the outer boundary."""
        return sorted(v for v, d in self.vertex_degrees(mesh).items()
                      if d == 1 and not mesh.is_boundary_vertex[v])

    def to_list(self) -> list[int]:
        return list(self.edge_ids)


def crack_length(mesh: Mesh, crack: CrackSet) -> float:
    return float(mesh.edge_lengths[list(crack.edge_ids)].sum()) if len(crack) else 0.0


def components_after_adding(mesh: Mesh, crack: CrackSet, added) -> int:
    """Component count of ``crack`` united with ``added`` without a rebuild."""
    parent: dict = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    n = crack.n_components
    nodes = set()
    for k in added:
        a, b = (int(v) for v in mesh.edges[k])
        keys = []
        for v in (a, b):
            lab = crack._labels.get(v)
            keys.append(("c", lab) if lab is not None else ("v", v))
        for key in keys:
            if key not in nodes:
                nodes.add(key)
                if key[0] == "v":
                    n += 1
        ra, rb = find(keys[0]), find(keys[1])
        if ra != rb:
            parent[ra] = rb
            n -= 1
    return n


def splits_dofs(mesh: Mesh, crack: CrackSet, added) -> bool:
    """True if cracking ``added`` on top of ``crack`` separates any DOF."""
    added = set(int(k) for k in added)
    cut = crack.edge_set | added
    verts = {int(v) for k in added for v in mesh.edges[k]}
    return any(mesh.fan_pieces(v, cut) != mesh.fan_pieces(v, crack.edge_set) for v in verts)


def crack_edge_path_json(mesh: Mesh, crack: CrackSet) -> dict:
    return {
        "edge_ids": crack.to_list(),
        "segments": mesh.edge_segments(crack.edge_ids).tolist() if len(crack) else [],
        "length": crack.total_length,
        "n_components": crack.n_components,
    }


# ---------------------------------------------------------- candidate search
def parse_policy(policy) -> tuple[str, int]:
    """Accept ``"TIP"``, ``("TIP", 3)``, ``"EXHAUSTIVE-2"`` or a dict."""
    if isinstance(policy, dict):
        kind, budget = policy.get("kind"), policy.get("budget")
    elif isinstance(policy, (tuple, list)):
        kind, budget = policy
    else:
        kind, budget = str(policy), None
        if kind.startswith("EXHAUSTIVE-"):
            kind, budget = "EXHAUSTIVE", int(kind.split("-", 1)[1])
    kind = str(kind).upper()
    if kind not in POLICIES:
        raise ValueError(f"unknown extension policy {policy!r}")
    if budget is None:
        budget = 1 if kind == "EXHAUSTIVE" else 3
    budget = int(budget)
    if budget < 1:
        raise ValueError("policy budget must be >= 1")
    return kind, budget


def _tip_paths(mesh: Mesh, crack: CrackSet, budget: int) -> set[frozenset]:
    crack_vertices = set(crack.vertex_degrees(mesh))
    adj = mesh.vertex_edges
    found: set[frozenset] = set()

    def grow(v, path, visited):
        for k in adj[v]:
            if mesh.is_boundary_edge[k] or k in crack.edge_set or k in path:
                continue
            a, b = mesh.edges[k]
            w = int(b if a == v else a)
            if w in visited:
                continue
            new = path | {k}
            found.add(frozenset(new))
            # a path stops once it reaches the existing crack or the boundary
            if len(new) < budget and w not in crack_vertices and not mesh.is_boundary_vertex[w]:
                grow(w, new, visited | {w})

    for tip in crack.tips(mesh):
        grow(tip, frozenset(), {tip})
    return found


def admissible_extensions(mesh: Mesh, crack: CrackSet, m: int, policy="TIP") -> list[CrackSet]:
    """Candidate supersets of ``crack`` searched by one evolution step.

    ``TIP``: simple edge paths of 1..budget edges grown from each crack tip.
    ``TIP+NUCLEATE``: additionally every single interior edge not in the crack.
    ``EXHAUSTIVE``: every superset adding 1..budget interior edges.

    Candidates with more than ``m`` components are dropped.  The result is
    ordered by number of added edges, then by sorted added edge ids.
    """
    kind, budget = parse_policy(policy)
    free = [int(k) for k in mesh.interior_edges if int(k) not in crack.edge_set]
    added: set[frozenset] = set()
    if kind in ("TIP", "TIP+NUCLEATE"):
        added |= _tip_paths(mesh, crack, budget)
    if kind == "TIP+NUCLEATE":
        added |= {frozenset((k,)) for k in free}
    if kind == "EXHAUSTIVE":
        for r in range(1, budget + 1):
            added |= {frozenset(c) for c in itertools.combinations(free, r)}

    out = []
    for extra in sorted(added, key=lambda s: (len(s), sorted(s))):
        if components_after_adding(mesh, crack, extra) <= m:
            out.append(crack.union(mesh, extra))
    return out


# ------------------------------------------------------------------ DOF maps
class DofMap:
    """Degrees of freedom of piecewise-linear fields on a cracked mesh.

    ``corner_dofs[t, k]`` is the global DOF of corner ``k`` of triangle ``t``.
    DOFs are numbered by (vertex, smallest corner index), so the numbering is
    a deterministic function of ``(mesh, crack)``.
    """

    def __init__(self, mesh: Mesh, crack: CrackSet):
        self.mesh = mesh
        self.crack = crack
        keep = ~np.isin(mesh.interior_edges, np.asarray(crack.edge_ids, dtype=np.int64))
        pairs = mesh._corner_pairs[keep].reshape(-1, 2)
        nc = 3 * mesh.n_triangles
        g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(nc, nc))
        _, labels = connected_components(g, directed=False)
        corner_vertex = mesh.triangles.ravel()
        # renumber: classes sorted by (vertex, first corner)
        first = np.full(labels.max() + 1, nc, dtype=np.int64)
        np.minimum.at(first, labels, np.arange(nc))
        order = np.lexsort((first, corner_vertex[first]))
        rank = np.empty_like(order)
        rank[order] = np.arange(len(order))
        self.corner_dofs = rank[labels].reshape(-1, 3)
        self.corner_dofs.setflags(write=False)
        self.n_dofs = len(order)
        self.dof_vertex = corner_vertex[first[order]]

        self.dirichlet = np.unique(self.corner_dofs.ravel()[mesh._dirichlet_corners])
        self.is_dirichlet = np.zeros(self.n_dofs, dtype=bool)
        self.is_dirichlet[self.dirichlet] = True

    @cached_property
    def lumped_mass(self) -> np.ndarray:
        w = np.repeat(self.mesh.areas / 3.0, 3)
        return np.bincount(self.corner_dofs.ravel(), weights=w, minlength=self.n_dofs)

    @cached_property
    def components(self) -> tuple[int, np.ndarray]:
        """Connected pieces of the cracked domain, as DOF labels."""
        cd = self.corner_dofs
        rows = np.concatenate([cd[:, 0], cd[:, 1]])
        cols = np.concatenate([cd[:, 1], cd[:, 2]])
        g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(self.n_dofs,) * 2)
        return connected_components(g, directed=False)

    @cached_property
    def floating(self) -> np.ndarray:
        """Mask of DOFs on pieces that touch no Dirichlet DOF."""
        _, labels = self.components
        anchored = np.zeros(labels.max() + 1, dtype=bool)
        anchored[labels[self.dirichlet]] = True
        return ~anchored[labels]

    @cached_property
    def hash(self) -> str:
        h = hashlib.sha1()
        h.update(self.mesh.fingerprint.encode())
        h.update(np.ascontiguousarray(self.corner_dofs).tobytes())
        return h.hexdigest()[:16]

    def classes(self) -> list[frozenset]:
        """DOF equivalence classes as sets of flat corner indices."""
        flat = self.corner_dofs.ravel()
        groups: dict[int, set] = {}
        for c, d in enumerate(flat.tolist()):
            groups.setdefault(d, set()).add(c)
        return [frozenset(groups[d]) for d in range(self.n_dofs)]


def build_dofmap(mesh: Mesh, crack: CrackSet) -> DofMap:
    return DofMap(mesh, crack)
