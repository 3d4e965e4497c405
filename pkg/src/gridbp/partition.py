"""Spectral bisection of the grid connectivity graph.

Recursive two-way splits along the eigenvector of the second-smallest
Laplacian eigenvalue; disconnected halves are re-emitted as separate
sections so every section induces a connected subgraph.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConnectivityError, NumericalError, SchemaError

DENSE_EIGEN_LIMIT = 64
EIGEN_TOL = 1e-10
SIGN_TIE = 1e-12


@dataclass(frozen=True)
class ConnectivityGraph:
    """Undirected simple graph on nodes ``0..n-1``."""

    n: int
    edges: tuple[tuple[int, int], ...]
    coords: Optional[np.ndarray] = None

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]], coords=None) -> "ConnectivityGraph":
        n = int(n)
        if n < 1:
            raise ValueError("graph needs at least one node")
        cleaned = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                continue  # self-loops dropped
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a},{b}) references a node outside 0..{n-1}")
            cleaned.add((min(a, b), max(a, b)))
        return cls(n=n, edges=tuple(sorted(cleaned)), coords=coords)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def neighbors(self) -> list[list[int]]:
        nb: list[list[int]] = [[] for _ in range(self.n)]
        for i, j in self.edges:
            nb[i].append(j)
            nb[j].append(i)
        return nb

    def connected_components(self) -> list[list[int]]:
        nb = self.neighbors()
        seen = np.zeros(self.n, dtype=bool)
        components = []
        for start in range(self.n):
            if seen[start]:
                continue
            comp = [start]
            seen[start] = True
            queue = [start]
            while queue:
                u = queue.pop()
                for w in nb[u]:
                    if not seen[w]:
                        seen[w] = True
                        comp.append(w)
                        queue.append(w)
            components.append(sorted(comp))
        return components

    def induced(self, nodes: Sequence[int]) -> tuple["ConnectivityGraph", list[int]]:
        """Subgraph on ``nodes`` with relabelled indices; returns the label map."""
        nodes = sorted(int(v) for v in nodes)
        index = {v: i for i, v in enumerate(nodes)}
        edges = [
            (index[a], index[b]) for a, b in self.edges if a in index and b in index
        ]
        return ConnectivityGraph.from_edges(len(nodes), edges), nodes


def laplacian(graph: ConnectivityGraph) -> np.ndarray:
    """Combinatorial Laplacian L = D - A (rows sum to zero, PSD)."""
    a = graph.adjacency()
    return np.diag(a.sum(axis=1)) - a


def _fiedler_dense(L: np.ndarray):
    w, v = np.linalg.eigh(L)
    if w[1] <= EIGEN_TOL * max(1.0, abs(w[-1])):
        raise ConnectivityError("algebraic connectivity is zero; graph is disconnected")
    return float(w[1]), v[:, 1].copy()


def _fiedler_power(L: np.ndarray):
    """Inverse power iteration with the constant vector deflated away."""
    n = L.shape[0]
    ones = np.ones(n) / np.sqrt(n)
    shift = 2.0 * L.diagonal().max() + 1.0
    B = L + shift * np.outer(ones, ones)
    try:
        B_inv = np.linalg.inv(B)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("shifted Laplacian is singular") from exc
    rng = np.random.default_rng(0x5EED)
    x = rng.standard_normal(n)
    x -= x @ ones * ones
    x /= np.linalg.norm(x)
    lam = float(x @ L @ x)
    for _ in range(10 * n):
        y = B_inv @ x
        y -= y @ ones * ones
        norm = np.linalg.norm(y)
        if norm == 0.0:
            raise NumericalError("inverse iteration collapsed to zero")
        y /= norm
        if y @ x < 0:
            y = -y
        change = np.linalg.norm(y - x)
        x = y
        lam = float(x @ L @ x)
        if change < EIGEN_TOL:
            break
    if lam <= EIGEN_TOL * max(1.0, abs(L.diagonal().max())):
        raise ConnectivityError("algebraic connectivity is zero; graph is disconnected")
    # Rayleigh-shift polish toward an eigen-residual at solver precision
    for _ in range(5):
        residual = np.abs(L @ x - lam * x).max()
        if residual < 1e-10 * max(1.0, lam):
            break
        try:
            y = np.linalg.solve(B - lam * np.eye(n), x)
        except np.linalg.LinAlgError:
            break
        y -= y @ ones * ones
        norm = np.linalg.norm(y)
        if norm == 0.0 or not np.all(np.isfinite(y)):
            break
        y /= norm
        if y @ x < 0:
            y = -y
        x = y
        lam = float(x @ L @ x)
    return lam, x


def fiedler_vector(L) -> tuple[float, np.ndarray]:
    """Second-smallest eigenpair of a graph Laplacian.

    Returns ``(lambda_2, v)`` with ``v`` unit length and orthogonal to the
    constant vector; a disconnected graph raises :class:`ConnectivityError`.
    Dense decomposition is used up to 64 nodes, shifted inverse iteration
    beyond that.
    """
    L = np.asarray(L, dtype=float)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ValueError(f"Laplacian must be square, got {L.shape}")
    n = L.shape[0]
    if n < 2:
        raise ValueError("need at least two nodes for a Fiedler vector")
    if n <= DENSE_EIGEN_LIMIT:
        lam, v = _fiedler_dense(L)
    else:
        lam, v = _fiedler_power(L)
    v = v / np.linalg.norm(v)
    v = v - v.mean()  # exact deflation of roundoff along the constant vector
    v = v / np.linalg.norm(v)
    return lam, v


def bisect(graph: ConnectivityGraph) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Split a connected graph by the sign pattern of its Fiedler vector.

    Near-zero entries (|v| < 1e-12) land on the non-positive side; the global
    sign is fixed so the lowest-index decisive node is positive, which makes
    the split deterministic.
    """
    if graph.n < 2:
        raise ValueError("cannot bisect a graph with fewer than two nodes")
    _, v = fiedler_vector(laplacian(graph))
    decisive = np.flatnonzero(np.abs(v) >= SIGN_TIE)
    if decisive.size == 0:
        raise NumericalError("Fiedler vector is numerically zero")
    if v[decisive[0]] < 0:
        v = -v
    side_a = np.flatnonzero(v >= SIGN_TIE)
    side_b = np.flatnonzero(v < SIGN_TIE)
    if side_b.size == 0:  # all mass on one side only through ties; force a split
        side_b = side_a[-1:]
        side_a = side_a[:-1]
    return tuple(int(i) for i in side_a), tuple(int(i) for i in side_b)


@dataclass(frozen=True)
class PartitionResult:
    """Disjoint covering of the nodes plus inter-section edge counts."""

    assignment: np.ndarray  # node -> section id
    sections: tuple[tuple[int, ...], ...]
    section_adjacency: tuple[tuple[int, int, int], ...]  # (a, b, crossing edges)

    @property
    def n_sections(self) -> int:
        return len(self.sections)


def partition(graph: ConnectivityGraph, depth: int, *, min_size: int = 2) -> PartitionResult:
    """Recursively bisect each connected component up to ``depth`` rounds.

    Sections smaller than ``min_size`` (never below 2) stop early, and any
    disconnected half produced by a split is re-emitted as separate sections.
    """
    if depth < 0:
        raise ValueError("depth must be >= 0")
    sections: list[list[int]] = graph.connected_components()
    stop_below = max(2, int(min_size))
    for _ in range(int(depth)):
        next_sections: list[list[int]] = []
        for sec in sections:
            if len(sec) < stop_below:
                next_sections.append(sec)
                continue
            sub, labels = graph.induced(sec)
            side_a, side_b = bisect(sub)
            for side in (side_a, side_b):
                part, part_labels = sub.induced(side)
                for comp in part.connected_components():
                    next_sections.append(sorted(labels[part_labels[i]] for i in comp))
        sections = next_sections

    sections.sort(key=lambda s: s[0])
    assignment = np.full(graph.n, -1, dtype=int)
    for sid, sec in enumerate(sections):
        for node in sec:
            assignment[node] = sid
    crossing: dict[tuple[int, int], int] = {}
    for a, b in graph.edges:
        sa, sb = int(assignment[a]), int(assignment[b])
        if sa == sb:
            continue
        key = (min(sa, sb), max(sa, sb))
        crossing[key] = crossing.get(key, 0) + 1
    adjacency = tuple((a, b, c) for (a, b), c in sorted(crossing.items()))
    return PartitionResult(
        assignment=assignment,
        sections=tuple(tuple(s) for s in sections),
        section_adjacency=adjacency,
    )


# ---------------------------------------------------------------------------
# CSV interfaces


def load_edges_csv(path) -> ConnectivityGraph:
    """Read an edge list with header ``from,to``."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["from", "to"]:
            raise SchemaError(f"{path}: expected header 'from,to', got {header}")
        edges = []
        max_node = -1
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise SchemaError(f"{path}:{lineno}: expected two columns")
            try:
                a, b = int(row[0]), int(row[1])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: non-integer node id") from exc
            edges.append((a, b))
            max_node = max(max_node, a, b)
    if max_node < 0:
        raise SchemaError(f"{path}: no edges found")
    return ConnectivityGraph.from_edges(max_node + 1, edges)


def save_edges_csv(graph: ConnectivityGraph, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("from,to\n")
        for a, b in graph.edges:
            fh.write(f"{a},{b}\n")


def save_partition_csv(result: PartitionResult, nodes_path, adjacency_path) -> None:
    """Write node assignments and the section adjacency table."""
    with open(nodes_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("node,section\n")
        for node, sid in enumerate(result.assignment):
            fh.write(f"{node},{int(sid)}\n")
    with open(adjacency_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("section_a,section_b,crossing_edges\n")
        for a, b, c in result.section_adjacency:
            fh.write(f"{a},{b},{c}\n")


def load_partition_csv(nodes_path, adjacency_path) -> PartitionResult:
    with open(nodes_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["node", "section"]:
            raise SchemaError(f"{nodes_path}: expected header 'node,section'")
        pairs = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                pairs.append((int(row[0]), int(row[1])))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{nodes_path}:{lineno}: malformed row") from exc
    if not pairs:
        raise SchemaError(f"{nodes_path}: empty partition")
    n = max(node for node, _ in pairs) + 1
    assignment = np.full(n, -1, dtype=int)
    for node, sid in pairs:
        assignment[node] = sid
    n_sections = int(assignment.max()) + 1
    grouped: list[list[int]] = [[] for _ in range(n_sections)]
    for node, sid in enumerate(assignment):
        if sid < 0:
            raise SchemaError(f"{nodes_path}: node {node} has no section")
        grouped[sid].append(node)
    with open(adjacency_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["section_a", "section_b", "crossing_edges"]
        if header is None or [c.strip() for c in header[:3]] != expected:
            raise SchemaError(f"{adjacency_path}: expected header {','.join(expected)}")
        adjacency = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                adjacency.append((int(row[0]), int(row[1]), int(row[2])))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{adjacency_path}:{lineno}: malformed row") from exc
    return PartitionResult(
        assignment=assignment,
        sections=tuple(tuple(sorted(g)) for g in grouped),
        section_adjacency=tuple(sorted(adjacency)),
    )
