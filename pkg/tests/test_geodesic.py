"""Geodesic distance fields and the coherence mask.

Shortest-path results are checked against exhaustive simple-path
enumeration, which is tractable on the small random graphs used here.
"""

from __future__ import annotations

import itertools

import numpy as np
import pytest

from gaussrig.exceptions import InvalidParameterError
from gaussrig.geodesic import (
    coherence_mask,
    default_tau,
    geodesic_distances,
)
from gaussrig.geometry import TriMesh, edge_graph, graph_from_edges
from gaussrig.sampling import AnchorSet


def enumerate_shortest(n, edge_list, source):
    """Min cost over all simple paths from ``source`` to every node."""
    adj = {i: [] for i in range(n)}
    for (a, b), w in edge_list:
        adj[a].append((b, w))
        adj[b].append((a, w))
    best = np.full(n, np.inf)
    best[source] = 0.0

    def walk(node, cost, visited):
        for nxt, w in adj[node]:
            if nxt in visited:
                continue
            c = cost + w
            if c < best[nxt]:
                best[nxt] = c
            walk(nxt, c, visited | {nxt})

    walk(source, 0.0, {source})
    return best


def random_graph(rng, n):
    """Random weighted graph over n nodes; roughly half of all pairs."""
    pairs = list(itertools.combinations(range(n), 2))
    keep = [p for p in pairs if rng.random() < 0.5]
    if not keep:
        keep = [tuple(rng.choice(n, size=2, replace=False))]
    edges = np.array(keep)
    weights = rng.uniform(0.1, 2.0, size=len(keep))
    return graph_from_edges(n, edges, weights), list(zip(keep, weights))


class TestGeodesicDistances:
    def test_matches_path_enumeration(self, rng):
        for _ in range(50):
            n = int(rng.integers(3, 7))
            graph, edge_list = random_graph(rng, n)
            anchors = rng.choice(n, size=int(rng.integers(1, n)), replace=False)
            field = geodesic_distances(graph, anchors)
            for j, a in enumerate(anchors):
                want = enumerate_shortest(n, edge_list, int(a))
                np.testing.assert_allclose(field.dist[:, j], want, atol=1e-12)

    def test_line_graph_hand_check(self):
        graph = graph_from_edges(
            4, np.array([[0, 1], [1, 2], [2, 3]]), np.array([1.0, 2.0, 4.0]))
        field = geodesic_distances(graph, [0])
        np.testing.assert_allclose(field.dist[:, 0], [0.0, 1.0, 3.0, 7.0])

    def test_disconnected_is_inf(self):
        graph = graph_from_edges(4, np.array([[0, 1]]), np.array([1.0]))
        field = geodesic_distances(graph, [0])
        assert np.isinf(field.dist[2, 0]) and np.isinf(field.dist[3, 0])

    def test_zero_at_anchors(self, rng):
        graph, _ = random_graph(rng, 6)
        field = geodesic_distances(graph, [2, 4])
        assert field.dist[2, 0] == 0.0 and field.dist[4, 1] == 0.0

    def test_accepts_anchor_set(self, quad_mesh):
        anchors = AnchorSet(np.array([0, 2]), quad_mesh.vertices[[0, 2]])
        field = geodesic_distances(edge_graph(quad_mesh), anchors)
        assert field.dist.shape == (4, 2)
        np.testing.assert_array_equal(field.anchor_indices, [0, 2])

    def test_mesh_distances_follow_surface(self):
        # unit-spaced path: 0-1-2 along x, no 0-2 shortcut edge
        v = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [1, 1, 0]])
        f = np.array([[0, 1, 3], [1, 2, 3]])
        field = geodesic_distances(edge_graph(TriMesh(v, f)), [0])
        np.testing.assert_allclose(field.dist[2, 0], 2.0)


class TestCoherenceMask:
    def test_strict_threshold(self):
        graph = graph_from_edges(
            3, np.array([[0, 1], [1, 2]]), np.array([1.0, 1.0]))
        field = geodesic_distances(graph, [0])
        mask = coherence_mask(field, 1.0)
        # d=1.0 is NOT within tau=1.0
        np.testing.assert_array_equal(mask.mask[:, 0], [1.0, 0.0, 0.0])

    def test_infinite_tau_keeps_reachable_only(self):
        graph = graph_from_edges(4, np.array([[0, 1], [1, 2]]), np.ones(2))
        field = geodesic_distances(graph, [0])
        mask = coherence_mask(field, np.inf)
        np.testing.assert_array_equal(mask.mask[:, 0], [1.0, 1.0, 1.0, 0.0])

    def test_rejects_nonpositive_tau(self, quad_mesh):
        field = geodesic_distances(edge_graph(quad_mesh), [0])
        with pytest.raises(InvalidParameterError):
            coherence_mask(field, 0.0)
        with pytest.raises(InvalidParameterError):
            coherence_mask(field, -1.0)

    def test_mask_values_are_binary(self, rng, quad_mesh):
        field = geodesic_distances(edge_graph(quad_mesh), [0, 3])
        mask = coherence_mask(field, 1.2)
        assert set(np.unique(mask.mask)) <= {0.0, 1.0}


def test_default_tau_fraction():
    assert default_tau(10.0) == pytest.approx(4.0)
