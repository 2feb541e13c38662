"""Core geometric value types: quaternions, rigid transforms, meshes.

Conventions
-----------
- Quaternions are scalar-first ``(w, x, y, z)`` everywhere, including on
  disk. Rotation-consuming operations normalize their input internally, so
  raw (unnormalized) 4-vectors coming out of an optimizer are accepted.
- A :class:`RigidTransform` is stored as quaternion + translation, never as
  a 4x4 matrix; ``to_matrix`` exists mainly so tests can check composition
  against plain homogeneous matrix products.
- Vectors and vertex buffers are plain float64 numpy arrays: ``(3,)`` for a
  point, ``(N, 3)`` for a vertex set, ``(T, N, 3)`` for a frame stack.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix

from .exceptions import InvalidInputError, InvalidParameterError

_QUAT_ZERO_TOL = 0.0  # any strictly positive norm is renormalizable


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return ``q / |q|`` for one quaternion or a batch ``(..., 4)``.

    Raises
    ------
    InvalidParameterError
        If any quaternion in the batch has zero norm.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm <= _QUAT_ZERO_TOL) or not np.all(np.isfinite(norm)):
        raise InvalidParameterError("quaternion with zero or non-finite norm")
    return q / norm


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, scalar-first, batched over leading dims."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a quaternion, ``(..., 4) -> (..., 3, 3)``.

    The input is normalized internally; a zero quaternion raises
    :class:`InvalidParameterError`.
    """
    q = quat_normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    out = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    out[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    out[..., 0, 1] = 2.0 * (xy - wz)
    out[..., 0, 2] = 2.0 * (xz + wy)
    out[..., 1, 0] = 2.0 * (xy + wz)
    out[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    out[..., 1, 2] = 2.0 * (yz - wx)
    out[..., 2, 0] = 2.0 * (xz - wy)
    out[..., 2, 1] = 2.0 * (yz + wx)
    out[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors by a quaternion without building the matrix."""
    q = quat_normalize(q)
    v = np.asarray(v, dtype=np.float64)
    u = q[..., 1:]
    w = q[..., 0:1]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise InvalidParameterError("rotation axis must be nonzero")
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class RigidTransform:
    """Element of SE(3): rotation quaternion (w, x, y, z) plus translation."""

    rotation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(
            self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(4)
        )
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3)
        )

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """Return self ∘ inner, i.e. apply ``inner`` first, then ``self``."""
        q = quat_multiply(quat_normalize(self.rotation), quat_normalize(inner.rotation))
        t = self.apply(inner.translation)
        return RigidTransform(q, t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """R @ p + t for one point ``(3,)`` or a batch ``(N, 3)``."""
        return quat_rotate(self.rotation, points) + self.translation

    def inverse(self) -> "RigidTransform":
        qc = quat_conjugate(quat_normalize(self.rotation))
        return RigidTransform(qc, -quat_rotate(qc, self.translation))

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_rotmat(self.rotation)
        m[:3, 3] = self.translation
        return m


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh: ``vertices (N, 3)`` float64 and ``faces (F, 3)`` int.

    Faces are 0-based and must be non-degenerate (three distinct indices).
    A face count of zero is allowed; that is how resampled point frames are
    carried around.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        f = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if v.ndim != 2 or v.shape[1] != 3:
            raise InvalidInputError(f"vertices must be (N, 3), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("vertices contain non-finite values")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise InvalidInputError("face index out of range")
            degenerate = (
                (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            )
            if degenerate.any():
                raise InvalidInputError(
                    f"{int(degenerate.sum())} degenerate face(s) (repeated vertex index)"
                )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an ``(E, 2)`` array with e[:,0] < e[:,1]."""
        return unique_edges(self.faces)

    def bbox_diagonal(self) -> float:
        if len(self.vertices) == 0:
            return 0.0
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return float(np.linalg.norm(ext))


def unique_edges(faces: np.ndarray) -> np.ndarray:
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if faces.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def edge_graph(mesh: TriMesh) -> csr_matrix:
    """Weighted undirected vertex graph of a mesh.

    One node per vertex, one edge per unique face edge, weighted by the
    Euclidean edge length in the mesh's (canonical) vertex positions. The
    returned matrix is symmetric with identical weights in both triangles.
    """
    e = mesh.edges()
    w = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    return graph_from_edges(mesh.n_vertices, e, w)


def graph_from_edges(n_nodes: int, edges: np.ndarray, weights: np.ndarray) -> csr_matrix:
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    vals = np.concatenate([weights, weights])
    return csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))


@dataclass(frozen=True)
class MeshSequence:
    """T frames of vertex positions over one fixed triangle topology.

    Frame 0 is the canonical (rest) geometry. Vertex correspondence across
    frames is positional: index i is the same material point in every frame.
    """

    frames: np.ndarray  # (T, N, 3)
    faces: np.ndarray  # (F, 3), shared by all frames

    def __post_init__(self):
        fr = np.asarray(self.frames, dtype=np.float64)
        if fr.ndim != 3 or fr.shape[2] != 3:
            raise InvalidInputError(f"frames must be (T, N, 3), got {fr.shape}")
        if fr.shape[0] < 2:
            raise InvalidInputError("a mesh sequence needs at least 2 frames")
        if not np.all(np.isfinite(fr)):
            raise InvalidInputError("frames contain non-finite values")
        object.__setattr__(self, "frames", fr)
        # TriMesh construction validates the face list against N
        mesh = TriMesh(fr[0], self.faces)
        object.__setattr__(self, "faces", mesh.faces)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.frames.shape[1]

    def canonical(self) -> TriMesh:
        return TriMesh(self.frames[0], self.faces)

    def frame_mesh(self, t: int) -> TriMesh:
        return TriMesh(self.frames[t], self.faces)

    def bbox_diagonal(self) -> float:
        return self.canonical().bbox_diagonal()


def bbox_diagonal(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) == 0:
        return 0.0
    return float(np.linalg.norm(points.max(axis=0) - points.min(axis=0)))
