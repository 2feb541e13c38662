"""Gaussian-bone skinning: soft weights, topological refinement, LBS.

A bone is a 3D Gaussian ellipsoid (center, anisotropic scale, orientation).
Vertex-to-bone influence is a softmax over negative halved squared
Mahalanobis distances measured in each bone's own rotated, axis-scaled
frame. Influence is then gated by the geodesic coherence mask,
renormalized, and finally truncated to the strongest ``top_k`` bones per
vertex. Deformation is linear blend skinning with one hierarchical rigid
transform per bone (root composed with the bone's local transform).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import InvalidInputError, InvalidParameterError
from .geodesic import CoherenceMask, GeodesicField
from .geometry import RigidTransform, quat_to_rotmat

REFINE_EPS = 1e-8
DEFAULT_TOP_K = 4


@dataclass(frozen=True)
class GaussianBone:
    """One soft bone: anchor it hangs off, center offset, scale, orientation.

    The effective center is ``anchor_coord + delta_center``; storing the
    offset rather than an absolute position bounds center drift during
    fitting and keeps the bone attached to its anchor region.
    """

    anchor_index: int
    delta_center: np.ndarray  # (3,)
    scale: np.ndarray  # (3,) strictly positive
    orientation: np.ndarray  # (4,) quaternion, scalar-first

    def __post_init__(self):
        dc = np.asarray(self.delta_center, dtype=np.float64).reshape(3)
        s = np.asarray(self.scale, dtype=np.float64).reshape(3)
        q = np.asarray(self.orientation, dtype=np.float64).reshape(4)
        if not np.all(s > 0):
            raise InvalidParameterError("bone scale components must be positive")
        if not (np.all(np.isfinite(dc)) and np.all(np.isfinite(s)) and np.all(np.isfinite(q))):
            raise InvalidParameterError("bone parameters must be finite")
        object.__setattr__(self, "anchor_index", int(self.anchor_index))
        object.__setattr__(self, "delta_center", dc)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "orientation", q)


@dataclass(frozen=True)
class BoneTransforms:
    """Per-frame motion state: one root transform plus one local per bone."""

    root: RigidTransform
    local: Sequence[RigidTransform]
    frame_index: int = 0

    def combined(self) -> list[RigidTransform]:
        """Hierarchical transforms root ∘ local_k, one per bone."""
        return [self.root.compose(lk) for lk in self.local]


class SkinningWeights:
    """Row-stochastic sparse vertex-to-bone weights (CSR layout).

    Each row holds the surviving bone indices and weights for one vertex;
    rows sum to 1 and never carry more than the configured ``top_k``
    entries after sparsification.
    """

    def __init__(self, indptr, indices, values, n_bones: int):
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.indices = np.asarray(indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self.n_bones = int(n_bones)
        if self.indptr[0] != 0 or self.indptr[-1] != len(self.indices):
            raise InvalidInputError("malformed CSR index pointers")
        if len(self.indices) != len(self.values):
            raise InvalidInputError("CSR indices/values length mismatch")

    @property
    def n_vertices(self) -> int:
        return len(self.indptr) - 1

    @property
    def max_row_support(self) -> int:
        return int(np.max(np.diff(self.indptr))) if self.n_vertices else 0

    def row(self, i: int):
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.indices[lo:hi], self.values[lo:hi]

    def row_sums(self) -> np.ndarray:
        return np.add.reduceat(
            np.append(self.values, 0.0), self.indptr[:-1]
        ) * (np.diff(self.indptr) > 0)

    def mean_support(self) -> float:
        """Average number of influencing bones per vertex."""
        return float(np.mean(np.diff(self.indptr))) if self.n_vertices else 0.0

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_vertices, self.n_bones))
        rows = np.repeat(np.arange(self.n_vertices), np.diff(self.indptr))
        out[rows, self.indices] = self.values
        return out

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SkinningWeights":
        dense = np.asarray(dense, dtype=np.float64)
        mask = dense != 0.0
        counts = mask.sum(axis=1)
        indptr = np.concatenate([[0], np.cumsum(counts)])
        indices = np.nonzero(mask)[1]
        values = dense[mask]
        return cls(indptr, indices, values, dense.shape[1])

    def argmax_bone(self) -> np.ndarray:
        """Strongest bone per vertex (used for influence-region coloring)."""
        out = np.zeros(self.n_vertices, dtype=np.int64)
        for i in range(self.n_vertices):
            idx, val = self.row(i)
            if len(idx):
                out[i] = idx[np.argmax(val)]
        return out


def bone_arrays(bones: Sequence[GaussianBone]):
    """Stack a bone list into (anchor_idx, delta, scale, quat) arrays."""
    anchor_idx = np.array([b.anchor_index for b in bones], dtype=np.int64)
    delta = np.stack([b.delta_center for b in bones])
    scale = np.stack([b.scale for b in bones])
    quat = np.stack([b.orientation for b in bones])
    return anchor_idx, delta, scale, quat


def mahalanobis_sq(vertices: np.ndarray, centers: np.ndarray, scales: np.ndarray,
                   orientations: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distance of every vertex to every bone, (N, K).

    Distance is measured in the bone's own coordinate system: the offset is
    rotated by the bone orientation's inverse and divided componentwise by
    the anisotropic scale.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    scales = np.asarray(scales, dtype=np.float64).reshape(-1, 3)
    if not np.all(scales > 0):
        raise InvalidParameterError("bone scales must be strictly positive")
    rot = quat_to_rotmat(orientations)  # (K, 3, 3)
    y = vertices[:, None, :] - centers[None, :, :]  # (N, K, 3)
    # u_m = (R^T y)_m / s_m
    u = np.einsum("kam,nka->nkm", rot, y) / scales[None, :, :]
    return np.einsum("nkm,nkm->nk", u, u)


def raw_weights(vertices: np.ndarray, centers: np.ndarray, scales: np.ndarray,
                orientations: np.ndarray) -> np.ndarray:
    """Softmax bone weights from Gaussian ellipsoid proximity, (N, K).

    Rows sum to 1; the softmax is evaluated with per-row max subtraction so
    vertices far from every bone do not underflow the whole row.
    """
    m2 = mahalanobis_sq(vertices, centers, scales, orientations)
    logits = -0.5 * m2
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def refine_weights(raw: np.ndarray, mask: CoherenceMask | np.ndarray,
                   field: GeodesicField | np.ndarray | None = None,
                   eps: float = REFINE_EPS) -> np.ndarray:
    """Gate raw weights by the coherence mask and renormalize.

    Rows left with no reachable bone are assigned a one-hot weight on their
    geodesically nearest bone (ties to the lowest bone index), which is why
    ``field`` is required whenever the mask can zero out a full row.
    """
    if eps <= 0:
        raise InvalidParameterError("eps must be positive")
    m = mask.mask if isinstance(mask, CoherenceMask) else np.asarray(mask, dtype=np.float64)
    raw = np.asarray(raw, dtype=np.float64)
    if m.shape != raw.shape:
        raise InvalidInputError(f"mask shape {m.shape} != weights shape {raw.shape}")
    gated = raw * m
    denom = gated.sum(axis=1) + eps
    out = gated / denom[:, None]
    dead = gated.sum(axis=1) == 0.0
    if np.any(dead):
        if field is None:
            raise InvalidInputError(
                "mask removed all bones for some vertices but no geodesic "
                "field was given for the nearest-bone fallback"
            )
        dist = field.dist if isinstance(field, GeodesicField) else np.asarray(field)
        nearest = np.argmin(dist[dead], axis=1)
        out[dead] = 0.0
        out[np.flatnonzero(dead), nearest] = 1.0
    return out


def sparsify_weights(weights: np.ndarray, top_k: int = DEFAULT_TOP_K) -> np.ndarray:
    """Keep the ``top_k`` largest weights per row and renormalize to sum 1.

    Ties are broken toward the lower bone index. Rows that already have at
    most ``top_k`` nonzeros only see the renormalization.
    """
    if top_k < 1:
        raise InvalidParameterError("top_k must be at least 1")
    w = np.asarray(weights, dtype=np.float64)
    n, k = w.shape
    if top_k >= k:
        kept = w.copy()
    else:
        # stable sort on negated values -> among ties, lower index wins
        order = np.argsort(-w, axis=1, kind="stable")[:, :top_k]
        kept = np.zeros_like(w)
        rows = np.repeat(np.arange(n), top_k)
        kept[rows, order.reshape(-1)] = w[rows, order.reshape(-1)]
    sums = kept.sum(axis=1, keepdims=True)
    if np.any(sums <= 0):
        raise InvalidInputError("cannot renormalize a row with no positive weight")
    return kept / sums


def support_pattern(weights: np.ndarray, top_k: int) -> np.ndarray:
    """Boolean (N, K) pattern of the entries sparsification keeps."""
    w = np.asarray(weights)
    n, k = w.shape
    if top_k >= k:
        return np.ones_like(w, dtype=bool)
    order = np.argsort(-w, axis=1, kind="stable")[:, :top_k]
    pat = np.zeros((n, k), dtype=bool)
    pat[np.repeat(np.arange(n), top_k), order.reshape(-1)] = True
    return pat


def lbs_deform(rest: np.ndarray, weights, transforms: BoneTransforms) -> np.ndarray:
    """Linear blend skinning of the rest vertices, (N, 3) -> (N, 3).

    Every vertex goes to the weight-blended sum of its rest position pushed
    through each bone's hierarchical transform (root composed with local).
    The blend is evaluated as rest plus weighted displacements, which is the
    same sum when weight rows total 1 but keeps identity transforms exact in
    floating point.
    """
    rest = np.asarray(rest, dtype=np.float64).reshape(-1, 3)
    if isinstance(weights, SkinningWeights):
        w = weights.to_dense()
    else:
        w = np.asarray(weights, dtype=np.float64)
    if w.shape[0] != len(rest):
        raise InvalidInputError(
            f"weights rows ({w.shape[0]}) != vertex count ({len(rest)})"
        )
    combined = transforms.combined()
    if w.shape[1] != len(combined):
        raise InvalidInputError(
            f"weights columns ({w.shape[1]}) != bone count ({len(combined)})"
        )
    rot = np.stack([quat_to_rotmat(t.rotation) for t in combined])  # (K, 3, 3)
    trans = np.stack([t.translation for t in combined])  # (K, 3)
    moved = np.einsum("kab,nb->nka", rot, rest) + trans[None, :, :]
    disp = moved - rest[:, None, :]
    return rest + np.einsum("nk,nka->na", w, disp)
