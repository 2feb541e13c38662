"""Shared fixtures: small meshes and sequences reused across suites."""

from __future__ import annotations

import numpy as np
import pytest

from gaussrig.geometry import MeshSequence, TriMesh
from gaussrig.synthetic import cylinder_sequence


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def quad_mesh():
    """Two triangles sharing an edge, the smallest non-trivial mesh."""
    vertices = np.array([
        [0.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.0, 1.0, 0.0],
    ])
    faces = np.array([[0, 1, 2], [0, 2, 3]])
    return TriMesh(vertices, faces)


@pytest.fixture(scope="session")
def small_cylinder():
    """Short bending-cylinder sequence with its generating rig and motion."""
    return cylinder_sequence(n_frames=4, n_rings=8, n_segments=10)


@pytest.fixture
def tiny_sequence(quad_mesh, rng):
    """Three frames of the quad with small random jitter after frame 0."""
    frames = np.stack([
        quad_mesh.vertices,
        quad_mesh.vertices + 0.01 * rng.standard_normal((4, 3)),
        quad_mesh.vertices + 0.02 * rng.standard_normal((4, 3)),
    ])
    return MeshSequence(frames, quad_mesh.faces)
