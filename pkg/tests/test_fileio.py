"""On-disk formats: mesh files, rig/motion JSON, reports, sidecars.

Round-trips are checked bitwise where the format guarantees it (floats are
written in shortest-round-trip form), and every validation branch gets a
malformed file built by mutating a known-good one.
"""

from __future__ import annotations

import json

import numpy as np
import pytest

from gaussrig import fileio
from gaussrig.exceptions import (
    FileFormatError,
    FingerprintMismatchError,
    InvalidInputError,
    TopologyMismatchError,
)
from gaussrig.fileio import (
    FORMAT_VERSION,
    PROXY_GRAPH_NAME,
    export_weights_visualization,
    fingerprint_matches,
    load_config,
    load_frames,
    load_motion,
    load_obj,
    load_proxy_graph,
    load_report,
    load_rig,
    load_sequence,
    mesh_fingerprint,
    read_json,
    require_fingerprint,
    save_eval_report,
    save_fit_report,
    save_motion,
    save_obj,
    save_proxy_graph,
    save_rig,
    save_sequence,
    sequence_graph,
    write_json,
)
from gaussrig.fitting import (
    FitConfig,
    deform_frames,
    fit_rig_and_motion,
    frame_transforms,
    rig_weights_for_mesh,
)
from gaussrig.geometry import TriMesh
from gaussrig.metrics import EvalReport
from gaussrig.sampling import normalize_resolution
from gaussrig.skinning import SkinningWeights, lbs_deform


def mutate_json(path, fn):
    """Load a JSON file, apply an in-place edit, and write it back raw."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    fn(data)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)
    return path


@pytest.fixture
def rig_bundle(small_cylinder):
    """A generator rig plus the dense weights it induces on its own mesh."""
    seq, rig, _ = small_cylinder
    mesh = TriMesh(seq.frames[0], seq.faces)
    w = rig_weights_for_mesh(rig, mesh)
    return rig, SkinningWeights.from_dense(w), mesh_fingerprint(mesh.vertices, mesh.faces)


class TestCanonicalJson:
    def test_sorted_keys_one_space_indent_trailing_newline(self, tmp_path):
        p = tmp_path / "doc.json"
        write_json(p, {"zebra": 1, "apple": {"inner_b": 2, "inner_a": 3}})
        text = p.read_text()
        assert text.index('"apple"') < text.index('"zebra"')
        assert text.index('"inner_a"') < text.index('"inner_b"')
        assert text.endswith("}\n")
        assert '\n "apple"' in text
        assert json.loads(text) == {"zebra": 1, "apple": {"inner_b": 2, "inner_a": 3}}

    def test_same_data_same_bytes(self, tmp_path):
        data = {"b": [1.5, 2.25], "a": {"x": -0.125}}
        write_json(tmp_path / "one.json", data)
        write_json(tmp_path / "two.json", data)
        assert (tmp_path / "one.json").read_bytes() == (tmp_path / "two.json").read_bytes()

    def test_malformed_reports_line_and_column(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text('{\n "a": ]\n}\n')
        with pytest.raises(FileFormatError, match=r"broken\.json:2:"):
            read_json(p)

    def test_top_level_must_be_object(self, tmp_path):
        p = tmp_path / "list.json"
        p.write_text("[1, 2]\n")
        with pytest.raises(FileFormatError, match="object"):
            read_json(p)


class TestObjFormat:
    def test_roundtrip_is_bitwise(self, tmp_path, rng):
        verts = rng.standard_normal((7, 3))
        faces = np.array([[0, 1, 2], [2, 3, 4], [4, 5, 6]])
        p = tmp_path / "mesh.obj"
        save_obj(p, verts, faces)
        mesh = load_obj(p)
        np.testing.assert_array_equal(mesh.vertices, verts)
        np.testing.assert_array_equal(mesh.faces, faces)

    def test_vertices_only(self, tmp_path, rng):
        p = tmp_path / "cloud.obj"
        save_obj(p, rng.standard_normal((5, 3)))
        mesh = load_obj(p)
        assert mesh.n_vertices == 5 and len(mesh.faces) == 0

    def test_quad_faces_fan_triangulate(self, tmp_path):
        p = tmp_path / "quad.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
        mesh = load_obj(p)
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2], [0, 2, 3]])

    def test_ignores_comments_and_other_attributes(self, tmp_path):
        p = tmp_path / "noisy.obj"
        p.write_text(
            "# exported\no thing\nvn 0 0 1\nvt 0.5 0.5\ns off\nusemtl default\n"
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2/2/1 3/3/1\n"
        )
        mesh = load_obj(p)
        assert mesh.n_vertices == 3
        np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])

    @pytest.mark.parametrize(
        "body, lineno, pattern",
        [
            ("v 0 0\n", 1, "3 coordinates"),
            ("v 0 zero 0\n", 1, "bad coordinate"),
            ("v 0 0 0\nv 1 0 0\nf 1 2\n", 3, "3 corners"),
            ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 0\n", 4, "positive"),
            ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 -3\n", 4, "positive"),
            ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 x\n", 4, "bad face index"),
            ("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 2\n", 4, "degenerate"),
        ],
    )
    def test_malformed_lines_name_their_line(self, tmp_path, body, lineno, pattern):
        p = tmp_path / "bad.obj"
        p.write_text(body)
        with pytest.raises(FileFormatError, match=rf"bad\.obj:{lineno}.*{pattern}"):
            load_obj(p)

    def test_face_index_past_vertex_count(self, tmp_path):
        p = tmp_path / "dangling.obj"
        p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n")
        with pytest.raises(FileFormatError, match=r"dangling\.obj:4.*vertex 4.*3 vertices"):
            load_obj(p)

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.obj"
        p.write_text("# nothing here\n")
        with pytest.raises(FileFormatError, match="no vertices"):
            load_obj(p)


class TestSequenceIO:
    def test_roundtrip_is_bitwise(self, tmp_path, rng):
        frames = rng.standard_normal((3, 5, 3))
        faces = np.array([[0, 1, 2], [2, 3, 4]])
        paths = save_sequence(tmp_path / "frames", frames, faces)
        assert [p.name for p in paths] == ["frame_0000.obj", "frame_0001.obj", "frame_0002.obj"]
        seq = load_sequence(tmp_path / "frames")
        np.testing.assert_array_equal(seq.frames, frames)
        np.testing.assert_array_equal(seq.faces, faces)

    def test_start_offset_and_stem(self, tmp_path, rng):
        paths = save_sequence(tmp_path / "d", rng.standard_normal((2, 4, 3)),
                              stem="pred", start=1)
        assert [p.name for p in paths] == ["pred_0001.obj", "pred_0002.obj"]

    def test_single_frame_input_promoted(self, tmp_path, rng):
        paths = save_sequence(tmp_path / "d", rng.standard_normal((4, 3)))
        assert [p.name for p in paths] == ["frame_0000.obj"]

    def test_frames_load_in_name_order(self, tmp_path):
        save_obj(tmp_path / "b.obj", np.ones((3, 3)))
        save_obj(tmp_path / "a.obj", np.zeros((3, 3)))
        meshes = load_frames(tmp_path)
        np.testing.assert_array_equal(meshes[0].vertices, np.zeros((3, 3)))
        np.testing.assert_array_equal(meshes[1].vertices, np.ones((3, 3)))

    def test_sequence_needs_two_frames(self, tmp_path, rng):
        save_sequence(tmp_path / "d", rng.standard_normal((1, 4, 3)))
        with pytest.raises(InvalidInputError, match="at least 2"):
            load_sequence(tmp_path / "d")

    def test_vertex_count_mismatch_names_the_file(self, tmp_path, rng):
        save_obj(tmp_path / "frame_0000.obj", rng.standard_normal((5, 3)))
        save_obj(tmp_path / "frame_0001.obj", rng.standard_normal((4, 3)))
        with pytest.raises(TopologyMismatchError, match=r"frame_0001\.obj"):
            load_sequence(tmp_path)

    def test_face_list_mismatch_rejected(self, tmp_path, rng):
        verts = rng.standard_normal((4, 3))
        save_obj(tmp_path / "frame_0000.obj", verts, np.array([[0, 1, 2]]))
        save_obj(tmp_path / "frame_0001.obj", verts, np.array([[0, 2, 3]]))
        with pytest.raises(TopologyMismatchError, match="face list"):
            load_sequence(tmp_path)

    def test_missing_or_empty_directory(self, tmp_path):
        with pytest.raises(InvalidInputError, match="not a directory"):
            load_frames(tmp_path / "absent")
        (tmp_path / "hollow").mkdir()
        with pytest.raises(InvalidInputError, match="no .obj files"):
            load_frames(tmp_path / "hollow")


class TestFingerprints:
    def test_records_counts_and_hash(self, quad_mesh):
        fp = mesh_fingerprint(quad_mesh.vertices, quad_mesh.faces)
        assert fp["n_vertices"] == 4 and fp["n_faces"] == 2
        assert len(fp["sha256"]) == 64

    def test_sensitive_to_any_buffer_change(self, quad_mesh):
        base = mesh_fingerprint(quad_mesh.vertices, quad_mesh.faces)
        moved = quad_mesh.vertices.copy()
        moved[0, 0] += 1e-12
        assert mesh_fingerprint(moved, quad_mesh.faces)["sha256"] != base["sha256"]
        refaced = quad_mesh.faces.copy()
        refaced[0] = refaced[0][[1, 0, 2]]
        assert mesh_fingerprint(quad_mesh.vertices, refaced)["sha256"] != base["sha256"]
        assert mesh_fingerprint(quad_mesh.vertices, None)["sha256"] != base["sha256"]

    def test_match_and_require(self, quad_mesh):
        fp = mesh_fingerprint(quad_mesh.vertices, quad_mesh.faces)
        assert fingerprint_matches(fp, quad_mesh.vertices, quad_mesh.faces)
        require_fingerprint(fp, quad_mesh.vertices, quad_mesh.faces, "mesh")
        other = quad_mesh.vertices + 0.5
        assert not fingerprint_matches(fp, other, quad_mesh.faces)
        with pytest.raises(FingerprintMismatchError, match="force"):
            require_fingerprint(fp, other, quad_mesh.faces, "mesh")
        require_fingerprint(fp, other, quad_mesh.faces, "mesh", force=True)


class TestRigFile:
    def test_roundtrip_is_exact(self, tmp_path, rig_bundle):
        rig, weights, fp = rig_bundle
        p = tmp_path / "rig.json"
        save_rig(p, rig, weights, fp)
        loaded_rig, loaded_w, loaded_fp = load_rig(p)
        np.testing.assert_array_equal(loaded_rig.anchors.indices, rig.anchors.indices)
        np.testing.assert_array_equal(loaded_rig.anchors.coords, rig.anchors.coords)
        np.testing.assert_array_equal(loaded_rig.delta_center, rig.delta_center)
        np.testing.assert_array_equal(loaded_rig.scale, rig.scale)
        np.testing.assert_array_equal(loaded_rig.orientation, rig.orientation)
        assert loaded_rig.tau == rig.tau and loaded_rig.top_k == rig.top_k
        np.testing.assert_array_equal(loaded_w.to_dense(), weights.to_dense())
        assert loaded_fp == fp

    def test_save_load_save_is_byte_stable(self, tmp_path, rig_bundle):
        rig, weights, fp = rig_bundle
        first = tmp_path / "rig.json"
        save_rig(first, rig, weights, fp)
        again = tmp_path / "resaved.json"
        save_rig(again, *load_rig(first))
        assert first.read_bytes() == again.read_bytes()

    def test_infinite_tau_survives_serialization(self, tmp_path, rig_bundle):
        rig, weights, fp = rig_bundle
        p = tmp_path / "rig.json"
        save_rig(p, rig, weights, fp)
        assert "Infinity" in p.read_text()
        assert np.isinf(load_rig(p)[0].tau)

    def test_finite_tau_roundtrip(self, tmp_path, rig_bundle):
        import dataclasses

        rig, weights, fp = rig_bundle
        finite = dataclasses.replace(rig, tau=0.8125)
        p = tmp_path / "rig.json"
        save_rig(p, finite, weights, fp)
        assert load_rig(p)[0].tau == 0.8125

    def test_unknown_fields_are_ignored(self, tmp_path, rig_bundle):
        rig, weights, fp = rig_bundle
        p = tmp_path / "rig.json"
        save_rig(p, rig, weights, fp)

        def add_extras(data):
            data["authoring_tool"] = "someday"
            data["bones"][0]["display_color"] = [1, 2, 3]

        mutate_json(p, add_extras)
        loaded_rig, _, _ = load_rig(p)
        assert loaded_rig.n_bones == rig.n_bones

    def test_header_validation(self, tmp_path, rig_bundle):
        rig, weights, fp = rig_bundle
        p = tmp_path / "rig.json"
        save_rig(p, rig, weights, fp)
        mutate_json(p, lambda d: d.update(kind="motion"))
        with pytest.raises(FileFormatError, match="expected kind 'rig'"):
            load_rig(p)
        save_rig(p, rig, weights, fp)
        mutate_json(p, lambda d: d.update(format_version="2.0"))
        with pytest.raises(FileFormatError, match="not supported"):
            load_rig(p)
        save_rig(p, rig, weights, fp)
        mutate_json(p, lambda d: d.update(format_version=None))
        with pytest.raises(FileFormatError, match="format_version"):
            load_rig(p)

    def test_minor_version_bump_accepted(self, tmp_path, rig_bundle):
        rig, weights, fp = rig_bundle
        p = tmp_path / "rig.json"
        save_rig(p, rig, weights, fp)
        mutate_json(p, lambda d: d.update(format_version="1.7"))
        assert load_rig(p)[0].n_bones == rig.n_bones

    @pytest.mark.parametrize(
        "edit, pattern",
        [
            (lambda d: d.pop("bones"), "missing field 'bones'"),
            (lambda d: d["anchors"]["indices"].pop(), "anchor count"),
            (lambda d: d["bones"].pop(), "expected 2 bones"),
            (lambda d: d["bones"][0].update(anchor_index=999), "anchor_index"),
            (lambda d: d["bones"][0]["scale"].__setitem__(0, 0.0), "strictly positive"),
            (lambda d: d["bones"][0].update(quaternion=[2.0, 0, 0, 0]), "not unit"),
            (lambda d: d["weights"]["values"][0].__setitem__(0, 0.5), "sums to"),
            (lambda d: d["weights"]["bone_indices"][0].__setitem__(0, 99), "out of range"),
            (lambda d: d["weights"]["values"][3].pop(), "length mismatch"),
            (lambda d: d["weights"].update(values=None), "malformed weights"),
            (lambda d: d.update(tau=-1.0), "out of range"),
        ],
    )
    def test_body_validation(self, tmp_path, rig_bundle, edit, pattern):
        rig, weights, fp = rig_bundle
        p = tmp_path / "rig.json"
        save_rig(p, rig, weights, fp)
        mutate_json(p, edit)
        with pytest.raises(FileFormatError, match=pattern):
            load_rig(p)

    def test_zero_quaternion_cannot_be_saved(self, tmp_path, rig_bundle):
        import dataclasses

        rig, weights, fp = rig_bundle
        broken = dataclasses.replace(rig, orientation=np.zeros((rig.n_bones, 4)))
        with pytest.raises(InvalidInputError, match="zero-norm"):
            save_rig(tmp_path / "rig.json", broken, weights, fp)


class TestMotionFile:
    def test_roundtrip_matches_frame_transforms(self, tmp_path, small_cylinder):
        seq, rig, motion = small_cylinder
        p = tmp_path / "motion.json"
        save_motion(p, motion, rig)
        loaded = load_motion(p)
        assert len(loaded) == motion.n_frames
        for t, bt in enumerate(loaded):
            ref = frame_transforms(rig, motion, t)
            assert bt.frame_index == t + 1
            np.testing.assert_array_equal(bt.root.rotation, ref.root.rotation)
            np.testing.assert_array_equal(bt.root.translation, ref.root.translation)
            for got, want in zip(bt.local, ref.local):
                np.testing.assert_array_equal(got.rotation, want.rotation)
                np.testing.assert_array_equal(got.translation, want.translation)

    def test_loaded_transforms_deform_like_the_fit(self, tmp_path, small_cylinder):
        seq, rig, motion = small_cylinder
        mesh = TriMesh(seq.frames[0], seq.faces)
        w = rig_weights_for_mesh(rig, mesh)
        p = tmp_path / "motion.json"
        save_motion(p, motion, rig)
        reference = deform_frames(seq.frames[0], w, motion, rig.centers())
        for t, bt in enumerate(load_motion(p)):
            np.testing.assert_allclose(
                lbs_deform(seq.frames[0], w, bt), reference[t], atol=1e-12
            )

    def test_save_is_deterministic(self, tmp_path, small_cylinder):
        _, rig, motion = small_cylinder
        save_motion(tmp_path / "one.json", motion, rig)
        save_motion(tmp_path / "two.json", motion, rig)
        assert (tmp_path / "one.json").read_bytes() == (tmp_path / "two.json").read_bytes()

    @pytest.mark.parametrize(
        "edit, pattern",
        [
            (lambda d: d.update(n_frames=5), "claims 5 frames"),
            (lambda d: d["frames"][0]["bones"].pop(), "expected 2"),
            (lambda d: d["frames"][1]["root"].update(quaternion=[1, 1, 0, 0]), "not unit"),
            (lambda d: d.update(kind="rig"), "expected kind 'motion'"),
        ],
    )
    def test_body_validation(self, tmp_path, small_cylinder, edit, pattern):
        _, rig, motion = small_cylinder
        p = tmp_path / "motion.json"
        save_motion(p, motion, rig)
        mutate_json(p, edit)
        with pytest.raises(FileFormatError, match=pattern):
            load_motion(p)


class TestReports:
    def test_fit_report_roundtrip(self, tmp_path, tiny_sequence):
        cfg = FitConfig(n_bones=2, iterations=2, top_k=2, seed=0)
        _, _, _, report = fit_rig_and_motion(tiny_sequence, cfg)
        p = tmp_path / "fit_report.json"
        save_fit_report(p, report)
        data = load_report(p, "fit_report")
        assert data["format_version"] == FORMAT_VERSION
        assert data["final_loss"] == report.final_loss
        assert data["loss_history"] == report.loss_history.tolist()
        assert data["config"] == report.config

    def test_eval_report_roundtrip(self, tmp_path):
        report = EvalReport(
            splits=[{"final_loss": 0.5, "mean_cd_l1": 0.25}],
            aggregates={"final_loss": {"mean": 0.5, "std": 0.0}},
            config={"splits": 1},
        )
        p = tmp_path / "eval_report.json"
        save_eval_report(p, report)
        data = load_report(p, "eval_report")
        assert data["splits"] == report.splits
        assert data["aggregates"] == report.aggregates

    def test_kind_is_enforced(self, tmp_path):
        save_eval_report(tmp_path / "r.json", EvalReport())
        with pytest.raises(FileFormatError, match="expected kind 'fit_report'"):
            load_report(tmp_path / "r.json", "fit_report")


class TestConfigFile:
    def test_flat_scalars_pass_through(self, tmp_path):
        p = tmp_path / "config.json"
        write_json(p, {"bones": 12, "tau": 0.5, "force": True, "report": "out.json"})
        assert load_config(p) == {"bones": 12, "tau": 0.5, "force": True, "report": "out.json"}

    def test_nested_values_rejected(self, tmp_path):
        p = tmp_path / "config.json"
        write_json(p, {"fit": {"bones": 12}})
        with pytest.raises(FileFormatError, match="'fit' must be a scalar"):
            load_config(p)
        write_json(p, {"bones": [1, 2]})
        with pytest.raises(FileFormatError, match="'bones' must be a scalar"):
            load_config(p)


class TestWeightsVisualization:
    def test_ply_layout_and_colors(self, tmp_path, quad_mesh):
        dense = np.array([
            [1.0, 0.0],
            [0.0, 1.0],
            [0.4, 0.6],
            [0.9, 0.1],
        ])
        p = tmp_path / "weights.ply"
        export_weights_visualization(p, quad_mesh.vertices, SkinningWeights.from_dense(dense))
        lines = p.read_text().splitlines()
        assert lines[0] == "ply" and lines[1] == "format ascii 1.0"
        assert "element vertex 4" in lines
        body = lines[lines.index("end_header") + 1:]
        assert len(body) == 4
        # hue 0, saturation 0.9, value 0.95 is the bone-0 palette entry
        assert body[0].split()[3:] == ["242", "24", "24"]
        assert body[0].split()[3:] != body[1].split()[3:]
        assert body[1].split()[3:] == body[2].split()[3:]
        assert body[0].split()[3:] == body[3].split()[3:]

    def test_export_is_deterministic(self, tmp_path, quad_mesh, rng):
        dense = rng.dirichlet(np.ones(3), size=4)
        w = SkinningWeights.from_dense(dense)
        export_weights_visualization(tmp_path / "one.ply", quad_mesh.vertices, w)
        export_weights_visualization(tmp_path / "two.ply", quad_mesh.vertices, w)
        assert (tmp_path / "one.ply").read_bytes() == (tmp_path / "two.ply").read_bytes()

    def test_vertex_count_must_match(self, quad_mesh, tmp_path):
        w = SkinningWeights.from_dense(np.eye(3))
        with pytest.raises(InvalidInputError, match="vertex count"):
            export_weights_visualization(tmp_path / "w.ply", quad_mesh.vertices, w)


class TestProxyGraph:
    @pytest.fixture
    def resampled(self, small_cylinder):
        seq, _, _ = small_cylinder
        return normalize_resolution(seq, 40)

    def test_roundtrip(self, tmp_path, resampled):
        _, rmap = resampled
        p = tmp_path / PROXY_GRAPH_NAME
        save_proxy_graph(p, rmap)
        graph, selected, meta = load_proxy_graph(p)
        np.testing.assert_array_equal(graph.toarray(), rmap.proxy_graph.toarray())
        np.testing.assert_array_equal(selected, rmap.selected)
        assert meta == {"n_source": rmap.n_source, "rounds": rmap.rounds}

    def test_sequence_graph_sidecar_detection(self, tmp_path, resampled):
        out_seq, rmap = resampled
        frames_dir = tmp_path / "frames"
        save_sequence(frames_dir, out_seq.frames)
        assert sequence_graph(frames_dir) is None
        save_proxy_graph(frames_dir / PROXY_GRAPH_NAME, rmap)
        graph = sequence_graph(frames_dir)
        np.testing.assert_array_equal(graph.toarray(), rmap.proxy_graph.toarray())

    @pytest.mark.parametrize(
        "edit, pattern",
        [
            (lambda d: d["edges"]["rows"].__setitem__(0, 999), "out of range"),
            (lambda d: d["edges"]["weights"].__setitem__(0, -1.0), "negative edge"),
            (lambda d: d["edges"]["cols"].pop(), "unequal lengths"),
        ],
    )
    def test_body_validation(self, tmp_path, resampled, edit, pattern):
        _, rmap = resampled
        p = tmp_path / "graph.json"
        save_proxy_graph(p, rmap)
        mutate_json(p, edit)
        with pytest.raises(FileFormatError, match=pattern):
            load_proxy_graph(p)
