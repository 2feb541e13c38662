"""Procedural test shapes with motions produced by the package's own forward model.

Every generator builds a small hidden rig by hand, drives it with explicit
per-frame angles, and renders frames through :func:`gaussrig.fitting.forward`.
Fitting such a sequence is therefore a self-consistency exercise: the data
lies exactly in the model family.

Two shapes are provided. The bending cylinder is the easy case. The hairpin
is two parallel tubes joined by a semicircular bend whose tips sit a few
millimeters apart in space but a full two limb lengths apart on the surface;
it exists to show what geodesic gating buys over plain spatial proximity.
"""

from __future__ import annotations

import math

import numpy as np

from .fitting import MotionParams, RigParams, forward
from .geodesic import geodesic_distances
from .geometry import MeshSequence, TriMesh, edge_graph, quat_from_axis_angle
from .sampling import AnchorSet


def tube_mesh(centerline: np.ndarray, radius: float, n_segments: int) -> TriMesh:
    """Open triangulated tube around a polyline of ring centers.

    Cross-sections are circles of ``radius`` in the plane normal to the
    (finite-difference) tangent; ring frames use a fixed up-vector, so the
    centerline must not run parallel to both candidate up axes at once.
    """
    path = np.asarray(centerline, dtype=np.float64)
    n_rings = len(path)
    tangents = np.empty_like(path)
    tangents[1:-1] = path[2:] - path[:-2]
    tangents[0] = path[1] - path[0]
    tangents[-1] = path[-1] - path[-2]
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)

    verts = np.empty((n_rings * n_segments, 3))
    alphas = 2.0 * np.pi * np.arange(n_segments) / n_segments
    for i, (p, t) in enumerate(zip(path, tangents)):
        up = np.array([0.0, 0.0, 1.0])
        if abs(t @ up) > 0.9:
            up = np.array([1.0, 0.0, 0.0])
        normal = np.cross(up, t)
        normal /= np.linalg.norm(normal)
        binormal = np.cross(t, normal)
        ring = p + radius * (
            np.outer(np.cos(alphas), normal) + np.outer(np.sin(alphas), binormal)
        )
        verts[i * n_segments : (i + 1) * n_segments] = ring

    faces = []
    for i in range(n_rings - 1):
        for j in range(n_segments):
            a = i * n_segments + j
            b = i * n_segments + (j + 1) % n_segments
            c = a + n_segments
            d = b + n_segments
            faces.append((a, b, d))
            faces.append((a, d, c))
    return TriMesh(verts, np.array(faces, dtype=np.int64))


def _anchor_set(mesh: TriMesh, points: np.ndarray) -> AnchorSet:
    """Nearest mesh vertex to each requested point, as an anchor set."""
    d = np.linalg.norm(mesh.vertices[None, :, :] - points[:, None, :], axis=2)
    idx = np.argmin(d, axis=1).astype(np.int64)
    return AnchorSet(idx, mesh.vertices[idx])


def _axis_angle_motion(axis, angles: np.ndarray, n_bones: int) -> MotionParams:
    """Identity roots, per-bone rotations about one axis, pivoting at centers."""
    angles = np.asarray(angles, dtype=np.float64)
    motion = MotionParams.identity(angles.shape[0], n_bones)
    for t in range(angles.shape[0]):
        for k in range(n_bones):
            motion.local_quat[t, k] = quat_from_axis_angle(axis, angles[t, k])
    return motion


# ---------------------------------------------------------------------------
# bending cylinder


def cylinder_mesh(n_rings: int = 20, n_segments: int = 30, radius: float = 0.25,
                  length: float = 2.0) -> TriMesh:
    """Straight open cylinder along z, centered at the origin."""
    z = np.linspace(-0.5 * length, 0.5 * length, n_rings)
    centerline = np.column_stack([np.zeros(n_rings), np.zeros(n_rings), z])
    return tube_mesh(centerline, radius, n_segments)


def cylinder_rig(mesh: TriMesh, length: float = 2.0, radius: float = 0.25,
                 top_k: int = 4) -> RigParams:
    """Hidden two-bone rig: one Gaussian per cylinder half, no geodesic gate."""
    targets = np.array([[0.0, 0.0, -0.25 * length], [0.0, 0.0, 0.25 * length]])
    anchors = _anchor_set(mesh, targets)
    scale = np.tile([1.4 * radius, 1.4 * radius, 0.225 * length], (2, 1))
    quat = np.zeros((2, 4))
    quat[:, 0] = 1.0
    return RigParams(
        anchors=anchors,
        delta_center=targets - anchors.coords,
        scale=scale,
        orientation=quat,
        tau=math.inf,
        top_k=top_k,
    )


def cylinder_sequence(n_frames: int = 8, max_angle: float = 0.5,
                      n_rings: int = 20, n_segments: int = 30,
                      radius: float = 0.25, length: float = 2.0,
                      angles: np.ndarray | None = None):
    """Bending-cylinder sequence; returns ``(seq, rig, motion)``.

    Default motion bends the two halves in opposite directions about x with
    linearly increasing angle. Pass ``angles`` of shape (n_frames-1, 2) to
    override (used for generating independent motions of the same object).
    """
    mesh = cylinder_mesh(n_rings, n_segments, radius, length)
    rig = cylinder_rig(mesh, length, radius)
    if angles is None:
        ramp = max_angle * np.arange(1, n_frames) / (n_frames - 1)
        angles = np.column_stack([-ramp, ramp])
    motion = _axis_angle_motion([1.0, 0.0, 0.0], angles, 2)
    deformed = forward(rig, motion, mesh.vertices)
    frames = np.concatenate([mesh.vertices[None], deformed])
    return MeshSequence(frames, mesh.faces), rig, motion


# ---------------------------------------------------------------------------
# hairpin (two nearly touching limbs, geodesically far apart)


def hairpin_mesh(limb_length: float = 1.5, gap: float = 0.24,
                 radius: float = 0.1, rings_per_limb: int = 12,
                 arc_rings: int = 8, n_segments: int = 10) -> TriMesh:
    """U-shaped tube in the xy-plane: two limbs along x joined by a bend.

    The limb tips at x = limb_length face each other across ``gap`` between
    centerlines (surface gap = gap - 2*radius) while their surface geodesic
    separation is about two limb lengths.
    """
    half = 0.5 * gap
    xs = np.linspace(limb_length, 0.0, rings_per_limb)
    limb_a = np.column_stack([xs, np.full_like(xs, half), np.zeros_like(xs)])
    theta = np.linspace(0.5 * np.pi, 1.5 * np.pi, arc_rings + 2)[1:-1]
    arc = np.column_stack([half * np.cos(theta), half * np.sin(theta), np.zeros_like(theta)])
    limb_b = np.column_stack([xs[::-1], np.full_like(xs, -half), np.zeros_like(xs)])
    centerline = np.concatenate([limb_a, arc, limb_b])
    return tube_mesh(centerline, radius, n_segments)


def hairpin_rig(mesh: TriMesh, limb_length: float = 1.5, gap: float = 0.24,
                radius: float = 0.1, top_k: int = 4) -> RigParams:
    """Hidden two-bone rig, one Gaussian per limb, geodesically gated.

    tau equals the limb length: each bone covers its own limb and part of
    the bend, never the opposite tip.
    """
    half = 0.5 * gap
    targets = np.array(
        [[0.5 * limb_length, half, 0.0], [0.5 * limb_length, -half, 0.0]]
    )
    anchors = _anchor_set(mesh, targets)
    scale = np.tile([0.4 * limb_length, 2.0 * radius, 2.0 * radius], (2, 1))
    quat = np.zeros((2, 4))
    quat[:, 0] = 1.0
    return RigParams(
        anchors=anchors,
        delta_center=targets - anchors.coords,
        scale=scale,
        orientation=quat,
        tau=float(limb_length),
        top_k=top_k,
    )


def hairpin_sequence(angles_a: np.ndarray, angles_b: np.ndarray,
                     limb_length: float = 1.5, gap: float = 0.24,
                     radius: float = 0.1, rings_per_limb: int = 12,
                     arc_rings: int = 8, n_segments: int = 10):
    """Hairpin frames with per-limb out-of-plane bends about y.

    ``angles_a`` and ``angles_b`` give one angle per generated frame for the
    upper and lower limb bones. Returns ``(seq, rig, motion, graph)``; the
    connectivity graph is returned since geodesic generation already paid
    for it.
    """
    angles_a = np.atleast_1d(np.asarray(angles_a, dtype=np.float64))
    angles_b = np.atleast_1d(np.asarray(angles_b, dtype=np.float64))
    if angles_a.shape != angles_b.shape:
        raise ValueError("per-limb angle arrays must have equal length")
    mesh = hairpin_mesh(limb_length, gap, radius, rings_per_limb, arc_rings, n_segments)
    rig = hairpin_rig(mesh, limb_length, gap, radius)
    motion = _axis_angle_motion(
        [0.0, 1.0, 0.0], np.column_stack([angles_a, angles_b]), 2
    )
    graph = edge_graph(mesh)
    field = geodesic_distances(graph, rig.anchors)
    deformed = forward(rig, motion, mesh.vertices, field)
    frames = np.concatenate([mesh.vertices[None], deformed])
    return MeshSequence(frames, mesh.faces), rig, motion, graph


def random_rig(mesh: TriMesh, n_bones: int, rng: np.random.Generator,
               tau: float = math.inf, top_k: int = 4) -> RigParams:
    """A rig drawn blind: random anchors, scales, and orientations.

    Serves as the mismatched-rig control in transfer experiments.
    """
    idx = rng.choice(len(mesh.vertices), size=n_bones, replace=False).astype(np.int64)
    anchors = AnchorSet(idx, mesh.vertices[idx])
    diag = mesh.bbox_diagonal()
    scale = np.exp(rng.normal(math.log(0.15 * diag), 0.3, size=(n_bones, 3)))
    quat = rng.normal(size=(n_bones, 4))
    return RigParams(
        anchors=anchors,
        delta_center=np.zeros((n_bones, 3)),
        scale=scale,
        orientation=quat,
        tau=tau,
        top_k=top_k,
    )
