"""Triangle meshes, midpoint subdivision, graph adjacency, and OBJ I/O."""

from __future__ import annotations

import numpy as np

from .errors import DataFormatError, DimensionError, EmptyInputError

NORMALIZATION_MODES = ("sym", "row", "none")


class TriangleMesh:
    """Immutable triangle mesh: vertices (V, 3) float64, faces (F, 3) int64.

    Edges are the deduplicated face edges stored as (min, max) index pairs in
    lexicographic order. Subdivision, unpooling, and checkpointing rely on
    this ordering being reproducible, so it is part of the class contract.
    """

    def __init__(self, vertices, faces):
        vertices = np.array(vertices, dtype=np.float64)
        faces = np.array(faces, dtype=np.int64)
        if faces.size == 0:
            faces = faces.reshape(0, 3)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise DimensionError(f"vertices must have shape (V, 3), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise DimensionError(f"faces must have shape (F, 3), got {faces.shape}")
        if faces.size:
            if faces.min() < 0 or faces.max() >= len(vertices):
                raise ValueError("face index out of range")
            degenerate = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 2] == faces[:, 0])
            )
            if degenerate.any():
                raise ValueError(f"degenerate face at index {int(np.argmax(degenerate))}")
        vertices.setflags(write=False)
        faces.setflags(write=False)
        self.vertices = vertices
        self.faces = faces
        self._edges = None
        self._neighbors = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as (min, max) pairs, lexicographically sorted."""
        if self._edges is None:
            if self.n_faces == 0:
                e = np.empty((0, 2), dtype=np.int64)
            else:
                e = np.concatenate(
                    [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
                )
                e.sort(axis=1)
                e = np.unique(e, axis=0)
            e.setflags(write=False)
            self._edges = e
        return self._edges

    def neighbor_lists(self) -> list[np.ndarray]:
        """Per-vertex sorted arrays of adjacent vertex indices."""
        if self._neighbors is None:
            lists: list[list[int]] = [[] for _ in range(self.n_vertices)]
            for a, b in self.edges:
                lists[a].append(int(b))
                lists[b].append(int(a))
            self._neighbors = [np.array(sorted(l), dtype=np.int64) for l in lists]
        return self._neighbors

    def neighbors(self, p: int) -> np.ndarray:
        return self.neighbor_lists()[p]

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - self.n_edges + self.n_faces

    def is_closed(self) -> bool:
        """True when every edge is shared by exactly two faces."""
        if self.n_faces == 0:
            return False
        e = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool((counts == 2).all())

    def replace_vertices(self, vertices) -> "TriangleMesh":
        """New mesh with the same topology and different vertex positions."""
        out = TriangleMesh(vertices, self.faces)
        out._edges = self._edges
        out._neighbors = self._neighbors
        return out

    def __repr__(self) -> str:
        return f"TriangleMesh(V={self.n_vertices}, F={self.n_faces})"


def subdivide_topology(faces: np.ndarray, edges: np.ndarray, n_vertices: int) -> np.ndarray:
    """Faces of the 1-to-4 midpoint split.

    The midpoint of edge rank r (in the lex-sorted edge order) becomes vertex
    n_vertices + r. Each face (i, j, k) is replaced by three corner triangles
    and one center triangle, preserving orientation.
    """
    rank = {(int(a), int(b)): n_vertices + r for r, (a, b) in enumerate(edges)}

    def mid(a, b):
        return rank[(a, b) if a < b else (b, a)]

    out = np.empty((4 * len(faces), 3), dtype=np.int64)
    for t, (i, j, k) in enumerate(faces):
        i, j, k = int(i), int(j), int(k)
        mij, mjk, mki = mid(i, j), mid(j, k), mid(k, i)
        out[4 * t + 0] = (i, mij, mki)
        out[4 * t + 1] = (j, mjk, mij)
        out[4 * t + 2] = (k, mki, mjk)
        out[4 * t + 3] = (mij, mjk, mki)
    return out


def midpoint_subdivide(mesh: TriangleMesh) -> TriangleMesh:
    """One round of edge-midpoint subdivision: V' = V + E, F' = 4F."""
    edges = mesh.edges
    mid = (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]) * 0.5
    vertices = np.concatenate([mesh.vertices, mid])
    return TriangleMesh(vertices, subdivide_topology(mesh.faces, edges, mesh.n_vertices))


class AdjacencyOperator:
    """Dense powers of a (normalized) mesh adjacency matrix.

    Modes:
      "sym"  -- D^(-1/2) (A + I) D^(-1/2); bounded spectrum (|lambda| <= 1),
                the default for deep stacks.
      "row"  -- D^(-1) (A + I); every row sums to exactly 1.
      "none" -- raw 0/1 adjacency, no self-loops; kept for ablations.

    Powers 1..hops are precomputed by repeated matrix products.
    """

    def __init__(self, matrix: np.ndarray, hops: int, mode: str):
        self._powers = [matrix]
        for _ in range(hops - 1):
            self._powers.append(self._powers[-1] @ matrix)
        for p in self._powers:
            p.setflags(write=False)
        self.hops = hops
        self.mode = mode

    @classmethod
    def from_edges(cls, n_vertices: int, edges: np.ndarray, hops: int = 2,
                   mode: str = "sym") -> "AdjacencyOperator":
        if n_vertices == 0:
            raise EmptyInputError("cannot build adjacency for a mesh with zero vertices")
        if hops < 1:
            raise ValueError(f"hops must be >= 1, got {hops}")
        if mode not in NORMALIZATION_MODES:
            raise ValueError(f"unknown normalization {mode!r}; choose from {NORMALIZATION_MODES}")
        a = np.zeros((n_vertices, n_vertices), dtype=np.float64)
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        a[edges[:, 0], edges[:, 1]] = 1.0
        a[edges[:, 1], edges[:, 0]] = 1.0
        if mode == "none":
            m = a
        else:
            ah = a + np.eye(n_vertices)
            deg = ah.sum(axis=1)
            if mode == "sym":
                inv_sqrt = 1.0 / np.sqrt(deg)
                m = ah * inv_sqrt[:, None] * inv_sqrt[None, :]
            else:
                m = ah / deg[:, None]
        return cls(m, hops, mode)

    @property
    def n(self) -> int:
        return self._powers[0].shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self._powers[0]

    def power(self, k: int) -> np.ndarray:
        """A-bar to the k-th power, 1 <= k <= hops."""
        if not 1 <= k <= self.hops:
            raise ValueError(f"power {k} outside precomputed range 1..{self.hops}")
        return self._powers[k - 1]


def build_adjacency(mesh: TriangleMesh, hops: int = 2, mode: str = "sym") -> AdjacencyOperator:
    return AdjacencyOperator.from_edges(mesh.n_vertices, mesh.edges, hops=hops, mode=mode)


def format_obj(mesh: TriangleMesh) -> str:
    """ASCII OBJ text with 9-significant-digit coordinates and 1-based faces."""
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in mesh.faces]
    return "\n".join(lines) + "\n"


def write_obj(mesh: TriangleMesh, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_obj(mesh))


def parse_obj(text: str) -> TriangleMesh:
    """Parse `v` and `f` directives; everything else is ignored."""
    vertices = []
    faces = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if tokens[0] == "v":
            if len(tokens) < 4:
                raise DataFormatError(f"line {lineno}: vertex needs 3 coordinates")
            try:
                vertices.append([float(t) for t in tokens[1:4]])
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: bad vertex coordinate") from exc
        elif tokens[0] == "f":
            if len(tokens) != 4:
                raise DataFormatError(f"line {lineno}: only triangular faces are supported")
            try:
                idx = [int(t.split("/")[0]) for t in tokens[1:]]
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: bad face index") from exc
            if any(i <= 0 for i in idx):
                raise DataFormatError(f"line {lineno}: face indices must be positive (1-based)")
            faces.append([i - 1 for i in idx])
    try:
        return TriangleMesh(np.array(vertices, dtype=np.float64).reshape(-1, 3), faces)
    except ValueError as exc:
        raise DataFormatError(str(exc)) from exc


def read_obj(path) -> TriangleMesh:
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        return parse_obj(fh.read())
