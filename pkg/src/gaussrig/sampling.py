"""Anchor selection and resolution normalization.

Farthest point sampling places bone anchors; midpoint subdivision and
FPS-based downsampling bring arbitrary-resolution inputs to a fixed vertex
budget while keeping a usable surface connectivity (a proxy graph over the
selected vertices) for geodesic computations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .exceptions import InvalidInputError, InvalidParameterError
from .geometry import MeshSequence, TriMesh, edge_graph, graph_from_edges

DEFAULT_TARGET_VERTICES = 5000
DOWNSAMPLE_THRESHOLD = 20000


@dataclass(frozen=True)
class AnchorSet:
    """Bone anchor vertices: indices into a vertex array plus their coords."""

    indices: np.ndarray  # (K,) int64, distinct
    coords: np.ndarray  # (K, 3) float64, positions of those vertices

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1)
        coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        if len(idx) != len(coords):
            raise InvalidInputError("anchor indices and coords length mismatch")
        if len(np.unique(idx)) != len(idx):
            raise InvalidInputError("anchor indices must be distinct")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class ResampleMap:
    """How a sequence was brought to its processed vertex set.

    ``selected`` indexes into the source vertex array *after* any midpoint
    subdivision rounds (``rounds`` of them, 0 when the input was already
    large enough). ``proxy_graph`` connects the selected vertices with
    geodesic edge weights so that surface-distance computations remain
    possible after faces are discarded.
    """

    selected: np.ndarray  # (target_n,) int64
    proxy_graph: csr_matrix  # (target_n, target_n) symmetric
    n_source: int  # vertex count of the (possibly subdivided) source
    rounds: int  # midpoint subdivision rounds applied

    def __post_init__(self):
        object.__setattr__(
            self, "selected", np.asarray(self.selected, dtype=np.int64).reshape(-1)
        )


def farthest_point_sample(points, k: int) -> AnchorSet:
    """Greedy max-min farthest point sampling over mesh vertices.

    ``points`` is a TriMesh or an ``(N, 3)`` array. The seed is the vertex
    farthest from the vertex centroid (ties broken by lowest index), which
    makes the selection deterministic without a RNG.
    """
    if isinstance(points, TriMesh):
        points = points.vertices
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(pts)
    if not 1 <= k <= n:
        raise InvalidParameterError(f"k must be in [1, {n}], got {k}")

    centroid = pts.mean(axis=0)
    seed = int(np.argmax(np.linalg.norm(pts - centroid, axis=1)))
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = seed
    min_d = np.linalg.norm(pts - pts[seed], axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_d))
        chosen[i] = nxt
        np.minimum(min_d, np.linalg.norm(pts - pts[nxt], axis=1), out=min_d)
    return AnchorSet(chosen, pts[chosen])


def subdivide_topology(faces: np.ndarray, n_vertices: int):
    """One midpoint-subdivision round on connectivity only.

    Returns ``(new_faces, edges)`` where ``edges`` is the unique edge list
    ``(E, 2)``; the midpoint of edge ``e`` becomes vertex ``n_vertices + e``.
    Positions for the new vertices are frame-dependent and are produced by
    :func:`subdivide_positions` with the same edge list.
    """
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size == 0:
        raise InvalidInputError("cannot subdivide a mesh with no faces")
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    edges, inverse = np.unique(e, axis=0, return_inverse=True)
    mid = n_vertices + inverse.reshape(3, -1)  # rows: ab, bc, ca per face
    a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
    mab, mbc, mca = mid[0], mid[1], mid[2]
    new_faces = np.concatenate(
        [
            np.stack([a, mab, mca], axis=1),
            np.stack([mab, b, mbc], axis=1),
            np.stack([mca, mbc, c], axis=1),
            np.stack([mab, mbc, mca], axis=1),
        ]
    )
    return new_faces, edges


def subdivide_positions(positions: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Append edge midpoints to ``(..., N, 3)`` positions."""
    mids = 0.5 * (positions[..., edges[:, 0], :] + positions[..., edges[:, 1], :])
    return np.concatenate([positions, mids], axis=-2)


def midpoint_subdivide(mesh: TriMesh) -> TriMesh:
    """Split every face into four via edge midpoints; geometry is unchanged."""
    new_faces, edges = subdivide_topology(mesh.faces, mesh.n_vertices)
    return TriMesh(subdivide_positions(mesh.vertices, edges), new_faces)


def rebuild_connectivity(mesh: TriMesh, selected) -> csr_matrix:
    """Proxy connectivity over a selected vertex subset.

    Every mesh vertex is assigned to its geodesically nearest selected
    vertex (multi-source Dijkstra over the edge graph). Two selected
    vertices are connected iff their assignment regions share at least one
    original edge; the edge weight is the geodesic distance between the two
    selected vertices on the full mesh.
    """
    selected = np.asarray(selected, dtype=np.int64).reshape(-1)
    if len(np.unique(selected)) != len(selected):
        raise InvalidInputError("selected indices must be distinct")
    if selected.size and (selected.min() < 0 or selected.max() >= mesh.n_vertices):
        raise InvalidInputError("selected index out of range")
    k = len(selected)
    graph = edge_graph(mesh)

    if mesh.faces.size == 0 or k == 0:
        return csr_matrix((k, k))

    dist, _, sources = dijkstra(
        graph, directed=False, indices=selected, min_only=True, return_predecessors=True
    )
    # map source vertex id -> position in `selected`; -9999 marks vertices in
    # components with no sample
    src_pos = np.full(mesh.n_vertices, -1, dtype=np.int64)
    src_pos[selected] = np.arange(k)
    assign = np.where(sources >= 0, src_pos[np.maximum(sources, 0)], -1)

    e = mesh.edges()
    pa, pb = assign[e[:, 0]], assign[e[:, 1]]
    cross = (pa != pb) & (pa >= 0) & (pb >= 0)
    pairs = np.stack([pa[cross], pb[cross]], axis=1)
    if pairs.size == 0:
        return csr_matrix((k, k))
    pairs.sort(axis=1)
    pairs = np.unique(pairs, axis=0)

    # Exact geodesic distance between adjacent selected vertices. Any such
    # pair is within 2*max_region_radius + max_edge_length, so Dijkstra can
    # be range-limited (small margin against rounding); sources are
    # processed in chunks to bound memory.
    finite = dist[np.isfinite(dist)]
    limit = 2.0 * (finite.max() if finite.size else 0.0) + float(
        np.max(graph.data) if graph.nnz else 0.0
    )
    limit = limit * (1.0 + 1e-9) + 1e-300
    order = np.argsort(pairs[:, 0], kind="stable")
    bounds = np.searchsorted(pairs[order, 0], np.arange(k + 1))
    weights = np.empty(len(pairs))
    chunk = 256
    for start in range(0, k, chunk):
        rows = [i for i in range(start, min(start + chunk, k)) if bounds[i] < bounds[i + 1]]
        if not rows:
            continue
        d = dijkstra(graph, directed=False, indices=selected[rows], limit=limit)
        for row, i in enumerate(rows):
            sel = order[bounds[i] : bounds[i + 1]]
            weights[sel] = d[row, selected[pairs[sel, 1]]]
    return graph_from_edges(k, pairs, weights)


def normalize_resolution(seq: MeshSequence, target_n: int = DEFAULT_TARGET_VERTICES):
    """Bring a sequence to exactly ``target_n`` vertices per frame.

    Meshes below the target are midpoint-subdivided (all frames with the
    same index scheme) until they meet it; the result is then reduced to
    exactly ``target_n`` vertices by FPS on frame-0 geometry, applied to
    every frame identically. Returns ``(resampled_sequence, map)`` where the
    resampled sequence carries no faces and ``map.proxy_graph`` provides the
    surviving connectivity.
    """
    if target_n < 4:
        raise InvalidParameterError("target_n must be at least 4")
    frames = seq.frames
    faces = seq.faces
    rounds = 0
    while frames.shape[1] < target_n:
        if faces.size == 0:
            raise InvalidInputError(
                "sequence has fewer vertices than target_n and no faces to subdivide"
            )
        faces, edges = subdivide_topology(faces, frames.shape[1])
        frames = subdivide_positions(frames, edges)
        rounds += 1

    source_mesh = TriMesh(frames[0], faces)
    if frames.shape[1] == target_n and faces.size:
        selected = np.arange(target_n, dtype=np.int64)
    else:
        selected = farthest_point_sample(frames[0], target_n).indices

    proxy = rebuild_connectivity(source_mesh, selected)
    out = MeshSequence(frames[:, selected, :], np.empty((0, 3), dtype=np.int64))
    return out, ResampleMap(selected, proxy, frames.shape[1], rounds)
