"""File formats: mesh sequences, rig/motion/report files, visualization export.

Mesh frames travel as ASCII Wavefront-style files (``v``/``f`` lines only on
output; unknown attributes ignored on input). Rigs, motions, and reports are
versioned JSON documents written canonically: sorted keys, shortest
round-trip float encoding, trailing newline, atomic replace. Writing the
same in-memory object twice therefore produces byte-identical files, and a
load followed by a save is byte-stable as well.

A rig file embeds a fingerprint (vertex/face counts plus a SHA-256 over the
raw buffers) of the canonical mesh it was fitted on; consumers refuse to
apply a rig to a different mesh unless explicitly overridden.
"""

from __future__ import annotations

import colorsys
import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .exceptions import (
    FileFormatError,
    FingerprintMismatchError,
    InvalidInputError,
    TopologyMismatchError,
)
from .fitting import FitReport, MotionParams, RigParams, frame_transforms
from .geometry import (
    MeshSequence,
    RigidTransform,
    TriMesh,
    graph_from_edges,
    quat_normalize,
)
from .sampling import AnchorSet, ResampleMap
from .skinning import BoneTransforms, SkinningWeights

FORMAT_VERSION = "1.0"
_FORMAT_MAJOR = 1
PROXY_GRAPH_NAME = "proxy_graph.json"


# ---------------------------------------------------------------------------
# atomic canonical writing


def _write_text_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, data: dict) -> None:
    _write_text_atomic(path, json.dumps(data, sort_keys=True, indent=1) + "\n")


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise FileFormatError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    if not isinstance(data, dict):
        raise FileFormatError(f"{path}: top-level value must be an object")
    return data


def _check_header(data: dict, kind: str, path) -> None:
    got_kind = data.get("kind")
    if got_kind != kind:
        raise FileFormatError(f"{path}: expected kind '{kind}', found '{got_kind}'")
    version = data.get("format_version")
    try:
        major = int(str(version).split(".")[0])
    except (ValueError, AttributeError) as e:
        raise FileFormatError(f"{path}: unreadable format_version '{version}'") from e
    if major != _FORMAT_MAJOR:
        raise FileFormatError(
            f"{path}: format_version {version} not supported (need major {_FORMAT_MAJOR})"
        )


def _field(data: dict, key: str, path):
    if key not in data:
        raise FileFormatError(f"{path}: missing field '{key}'")
    return data[key]


# ---------------------------------------------------------------------------
# meshes


def load_obj(path) -> TriMesh:
    """Parse an ASCII mesh file: ``v`` positions and ``f`` faces.

    Faces with more than three corners are fan-triangulated around their
    first vertex. Texture/normal references and any other line types are
    ignored. Indices are 1-based and must be positive.
    """
    verts: list = []
    tris: list = []
    tri_lines: list = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise FileFormatError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as e:
                    raise FileFormatError(f"{path}:{lineno}: bad coordinate") from e
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise FileFormatError(f"{path}:{lineno}: face needs >= 3 corners")
                idx = []
                for token in parts[1:]:
                    head = token.split("/")[0]
                    try:
                        value = int(head)
                    except ValueError as e:
                        raise FileFormatError(f"{path}:{lineno}: bad face index '{token}'") from e
                    if value < 1:
                        raise FileFormatError(
                            f"{path}:{lineno}: face indices must be positive, got {value}"
                        )
                    idx.append(value - 1)
                for i in range(1, len(idx) - 1):
                    tri = (idx[0], idx[i], idx[i + 1])
                    if len(set(tri)) != 3:
                        raise FileFormatError(f"{path}:{lineno}: degenerate face corner set")
                    tris.append(tri)
                    tri_lines.append(lineno)
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    if f.size and f.max() >= len(v):
        bad = int(np.argmax(f.max(axis=1) >= len(v)))
        raise FileFormatError(
            f"{path}:{tri_lines[bad]}: face references vertex {int(f[bad].max()) + 1} "
            f"but only {len(v)} vertices exist"
        )
    if len(v) == 0:
        raise FileFormatError(f"{path}: no vertices found")
    return TriMesh(v, f)


def save_obj(path, vertices: np.ndarray, faces: np.ndarray | None = None) -> None:
    """Write vertices (and optional triangles, 1-based on disk)."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    lines = [f"v {float(x)!r} {float(y)!r} {float(z)!r}" for x, y, z in vertices]
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        lines.extend(f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces)
    _write_text_atomic(path, "\n".join(lines) + "\n")


def load_frames(path) -> list[TriMesh]:
    """All ``.obj`` meshes in a directory, lexicographic by filename."""
    directory = Path(path)
    if not directory.is_dir():
        raise InvalidInputError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.obj"), key=lambda p: p.name)
    if not files:
        raise InvalidInputError(f"no .obj files in {directory}")
    return [load_obj(f) for f in files]


def load_sequence(path) -> MeshSequence:
    """Load a frame directory as one sequence over a shared topology."""
    directory = Path(path)
    if not directory.is_dir():
        raise InvalidInputError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.obj"), key=lambda p: p.name)
    if len(files) < 2:
        raise InvalidInputError(
            f"{directory}: a sequence needs at least 2 frames, found {len(files)}"
        )
    meshes = [load_obj(f) for f in files]
    ref = meshes[0]
    for f, m in zip(files[1:], meshes[1:]):
        if m.n_vertices != ref.n_vertices:
            raise TopologyMismatchError(
                f"{f.name}: {m.n_vertices} vertices, expected {ref.n_vertices}"
            )
        if not np.array_equal(m.faces, ref.faces):
            raise TopologyMismatchError(f"{f.name}: face list differs from first frame")
    frames = np.stack([m.vertices for m in meshes])
    return MeshSequence(frames, ref.faces)


def save_sequence(path, frames: np.ndarray, faces: np.ndarray | None = None,
                  stem: str = "frame", start: int = 0) -> list[Path]:
    """Write frames as ``<stem>_NNNN.obj``; returns the written paths."""
    directory = Path(path)
    directory.mkdir(parents=True, exist_ok=True)
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim == 2:
        frames = frames[None]
    out = []
    for i, frame in enumerate(frames):
        p = directory / f"{stem}_{start + i:04d}.obj"
        save_obj(p, frame, faces if faces is not None and np.size(faces) else None)
        out.append(p)
    return out


# ---------------------------------------------------------------------------
# fingerprints


def mesh_fingerprint(vertices: np.ndarray, faces: np.ndarray | None = None) -> dict:
    """Content hash of the raw vertex/face buffers plus their counts."""
    v = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64).reshape(-1, 3))
    f = (
        np.ascontiguousarray(np.asarray(faces, dtype=np.int64).reshape(-1, 3))
        if faces is not None
        else np.empty((0, 3), dtype=np.int64)
    )
    h = hashlib.sha256()
    h.update(len(v).to_bytes(8, "little"))
    h.update(len(f).to_bytes(8, "little"))
    h.update(v.tobytes())
    h.update(f.tobytes())
    return {"n_vertices": len(v), "n_faces": len(f), "sha256": h.hexdigest()}


def fingerprint_matches(stored: dict, vertices: np.ndarray,
                        faces: np.ndarray | None = None) -> bool:
    return mesh_fingerprint(vertices, faces) == {
        "n_vertices": int(stored.get("n_vertices", -1)),
        "n_faces": int(stored.get("n_faces", -1)),
        "sha256": stored.get("sha256"),
    }


def require_fingerprint(stored: dict, vertices: np.ndarray,
                        faces: np.ndarray | None, what: str,
                        force: bool = False) -> None:
    if force or fingerprint_matches(stored, vertices, faces):
        return
    raise FingerprintMismatchError(
        f"{what} does not match the mesh this rig was fitted on "
        f"(expected {stored.get('n_vertices')} vertices / {stored.get('n_faces')} faces, "
        f"hash {str(stored.get('sha256'))[:12]}...); pass force to override"
    )


# ---------------------------------------------------------------------------
# rig files


def _unit_quats(q: np.ndarray) -> np.ndarray:
    """Normalize rows, leaving already-unit rows byte-untouched."""
    q = np.asarray(q, dtype=np.float64)
    norms = np.linalg.norm(q, axis=-1)
    if np.any(norms == 0):
        raise InvalidInputError("zero-norm quaternion cannot be serialized")
    out = q.copy()
    off = np.abs(norms - 1.0) > 1e-9
    if np.any(off):
        out[off] = q[off] / norms[off, None]
    return out


def save_rig(path, rig: RigParams, weights: SkinningWeights,
             fingerprint: dict) -> None:
    quats = _unit_quats(rig.orientation)
    rows_idx = []
    rows_val = []
    for i in range(weights.n_vertices):
        idx, val = weights.row(i)
        rows_idx.append(idx.tolist())
        rows_val.append(val.tolist())
    data = {
        "format_version": FORMAT_VERSION,
        "kind": "rig",
        "n_bones": rig.n_bones,
        "tau": float(rig.tau),
        "top_k": int(rig.top_k),
        "anchors": {
            "indices": rig.anchors.indices.tolist(),
            "coords": rig.anchors.coords.tolist(),
        },
        "bones": [
            {
                "anchor_index": int(rig.anchors.indices[k]),
                "delta_center": rig.delta_center[k].tolist(),
                "scale": rig.scale[k].tolist(),
                "quaternion": quats[k].tolist(),
            }
            for k in range(rig.n_bones)
        ],
        "weights": {"bone_indices": rows_idx, "values": rows_val},
        "fingerprint": dict(fingerprint),
    }
    write_json(path, data)


def load_rig(path):
    """Read and validate a rig file; returns ``(rig, weights, fingerprint)``."""
    data = read_json(path)
    _check_header(data, "rig", path)
    k = int(_field(data, "n_bones", path))
    tau = float(_field(data, "tau", path))
    top_k = int(_field(data, "top_k", path))
    if k < 1 or top_k < 1 or not tau > 0:
        raise FileFormatError(f"{path}: n_bones/top_k/tau out of range")

    anchors_raw = _field(data, "anchors", path)
    idx = np.asarray(anchors_raw.get("indices"), dtype=np.int64).reshape(-1)
    coords = np.asarray(anchors_raw.get("coords"), dtype=np.float64).reshape(-1, 3)
    if len(idx) != k or len(coords) != k:
        raise FileFormatError(f"{path}: anchor count does not match n_bones")

    bones = _field(data, "bones", path)
    if len(bones) != k:
        raise FileFormatError(f"{path}: expected {k} bones, found {len(bones)}")
    delta = np.zeros((k, 3))
    scale = np.zeros((k, 3))
    quat = np.zeros((k, 4))
    for j, b in enumerate(bones):
        delta[j] = np.asarray(b.get("delta_center"), dtype=np.float64).reshape(3)
        scale[j] = np.asarray(b.get("scale"), dtype=np.float64).reshape(3)
        quat[j] = np.asarray(b.get("quaternion"), dtype=np.float64).reshape(4)
        if int(b.get("anchor_index", -1)) != int(idx[j]):
            raise FileFormatError(f"{path}: bone {j} anchor_index disagrees with anchors")
    if not np.all(scale > 0):
        raise FileFormatError(f"{path}: bone scales must be strictly positive")
    norms = np.linalg.norm(quat, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise FileFormatError(
            f"{path}: bone {worst} quaternion norm {norms[worst]:.9f} is not unit"
        )

    wraw = _field(data, "weights", path)
    rows_idx = wraw.get("bone_indices")
    rows_val = wraw.get("values")
    if not isinstance(rows_idx, list) or not isinstance(rows_val, list) or len(
        rows_idx
    ) != len(rows_val):
        raise FileFormatError(f"{path}: malformed weights block")
    counts = []
    for i, (ri, rv) in enumerate(zip(rows_idx, rows_val)):
        if len(ri) != len(rv):
            raise FileFormatError(f"{path}: weights row {i} index/value length mismatch")
        s = float(sum(rv))
        if abs(s - 1.0) > 1e-5:
            raise FileFormatError(f"{path}: weights row {i} sums to {s!r}, expected 1")
        if ri and (min(ri) < 0 or max(ri) >= k):
            raise FileFormatError(f"{path}: weights row {i} references a bone out of range")
        counts.append(len(ri))
    indptr = np.concatenate([[0], np.cumsum(np.asarray(counts, dtype=np.int64))])
    indices = np.asarray([j for row in rows_idx for j in row], dtype=np.int64)
    values = np.asarray([x for row in rows_val for x in row], dtype=np.float64)
    weights = SkinningWeights(indptr, indices, values, k)

    fingerprint = dict(_field(data, "fingerprint", path))
    rig = RigParams(AnchorSet(idx, coords), delta, scale, quat, tau, top_k)
    return rig, weights, fingerprint


# ---------------------------------------------------------------------------
# motion files


def save_motion(path, motion: MotionParams, rig: RigParams) -> None:
    """Serialize per-frame transforms with the pivot already folded in.

    Each stored local transform is a plain rigid transform; root composed
    with local reproduces the fitted deformation without knowing the bone
    centers.
    """
    frames = []
    for t in range(motion.n_frames):
        bt = frame_transforms(rig, motion, t)
        root_q = _unit_quats(bt.root.rotation[None])[0]
        bones = []
        for lk in bt.local:
            bones.append(
                {
                    "quaternion": _unit_quats(lk.rotation[None])[0].tolist(),
                    "translation": lk.translation.tolist(),
                }
            )
        frames.append(
            {
                "root": {
                    "quaternion": root_q.tolist(),
                    "translation": bt.root.translation.tolist(),
                },
                "bones": bones,
            }
        )
    data = {
        "format_version": FORMAT_VERSION,
        "kind": "motion",
        "n_bones": motion.n_bones,
        "n_frames": motion.n_frames,
        "frames": frames,
    }
    write_json(path, data)


def _load_rigid(node: dict, path, what: str) -> RigidTransform:
    q = np.asarray(node.get("quaternion"), dtype=np.float64).reshape(4)
    t = np.asarray(node.get("translation"), dtype=np.float64).reshape(3)
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > 1e-6:
        raise FileFormatError(f"{path}: {what} quaternion norm {norm:.9f} is not unit")
    return RigidTransform(q, t)


def load_motion(path) -> list[BoneTransforms]:
    """Read a motion file as one BoneTransforms per frame (frames 1..T-1)."""
    data = read_json(path)
    _check_header(data, "motion", path)
    k = int(_field(data, "n_bones", path))
    n_frames = int(_field(data, "n_frames", path))
    frames_raw = _field(data, "frames", path)
    if len(frames_raw) != n_frames:
        raise FileFormatError(
            f"{path}: header claims {n_frames} frames, found {len(frames_raw)}"
        )
    out = []
    for t, node in enumerate(frames_raw):
        bones_raw = node.get("bones", [])
        if len(bones_raw) != k:
            raise FileFormatError(f"{path}: frame {t} has {len(bones_raw)} bones, expected {k}")
        root = _load_rigid(_field(node, "root", path), path, f"frame {t} root")
        local = [
            _load_rigid(b, path, f"frame {t} bone {j}") for j, b in enumerate(bones_raw)
        ]
        out.append(BoneTransforms(root=root, local=local, frame_index=t + 1))
    return out


# ---------------------------------------------------------------------------
# reports


def save_fit_report(path, report: FitReport) -> None:
    data = {"format_version": FORMAT_VERSION, "kind": "fit_report", **report.to_dict()}
    write_json(path, data)


def save_eval_report(path, report) -> None:
    data = {"format_version": FORMAT_VERSION, "kind": "eval_report", **report.to_dict()}
    write_json(path, data)


def load_report(path, kind: str) -> dict:
    data = read_json(path)
    _check_header(data, kind, path)
    return data


def load_config(path) -> dict:
    """A config file is a flat JSON object of CLI option values."""
    data = read_json(path)
    for key, value in data.items():
        if isinstance(value, (dict, list)):
            raise FileFormatError(f"{path}: config entry '{key}' must be a scalar")
    return data


# ---------------------------------------------------------------------------
# weight visualization

# 64 visually spread colors: golden-angle hue walk over two saturation and
# two value tiers; fixed at import, identical across runs and platforms.
_PALETTE = np.array(
    [
        [
            int(round(255 * c))
            for c in colorsys.hsv_to_rgb(
                (i * 137.50776405003785 / 360.0) % 1.0,
                0.9 if i % 2 == 0 else 0.55,
                0.95 if i % 4 < 2 else 0.65,
            )
        ]
        for i in range(64)
    ],
    dtype=np.uint8,
)


def export_weights_visualization(path, vertices: np.ndarray,
                                 weights: SkinningWeights) -> None:
    """Colored ASCII point cloud: each vertex takes its argmax bone's color.

    Colors come from the fixed 64-entry palette, indexed by bone modulo 64.
    """
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    if len(vertices) != weights.n_vertices:
        raise InvalidInputError(
            f"vertex count {len(vertices)} != weight rows {weights.n_vertices}"
        )
    colors = _PALETTE[weights.argmax_bone() % 64]
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(vertices)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for (x, y, z), (r, g, b) in zip(vertices, colors):
        lines.append(f"{float(x)!r} {float(y)!r} {float(z)!r} {r} {g} {b}")
    _write_text_atomic(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# resampling sidecar


def save_proxy_graph(path, rmap: ResampleMap) -> None:
    """Persist a resampler's connectivity next to the resampled frames."""
    coo = rmap.proxy_graph.tocoo()
    keep = coo.row < coo.col
    data = {
        "format_version": FORMAT_VERSION,
        "kind": "proxy_graph",
        "n_vertices": int(rmap.proxy_graph.shape[0]),
        "n_source": int(rmap.n_source),
        "rounds": int(rmap.rounds),
        "selected": rmap.selected.tolist(),
        "edges": {
            "rows": coo.row[keep].tolist(),
            "cols": coo.col[keep].tolist(),
            "weights": coo.data[keep].tolist(),
        },
    }
    write_json(path, data)


def load_proxy_graph(path):
    """Returns ``(graph, selected, meta)`` for a saved proxy graph."""
    data = read_json(path)
    _check_header(data, "proxy_graph", path)
    n = int(_field(data, "n_vertices", path))
    edges_raw = _field(data, "edges", path)
    rows = np.asarray(edges_raw.get("rows"), dtype=np.int64)
    cols = np.asarray(edges_raw.get("cols"), dtype=np.int64)
    weights = np.asarray(edges_raw.get("weights"), dtype=np.float64)
    if not (len(rows) == len(cols) == len(weights)):
        raise FileFormatError(f"{path}: edge arrays have unequal lengths")
    if len(rows) and (rows.min() < 0 or cols.min() < 0 or max(rows.max(), cols.max()) >= n):
        raise FileFormatError(f"{path}: edge endpoint out of range")
    if len(weights) and weights.min() < 0:
        raise FileFormatError(f"{path}: negative edge weight")
    graph = graph_from_edges(n, np.column_stack([rows, cols]), weights)
    selected = np.asarray(_field(data, "selected", path), dtype=np.int64)
    meta = {
        "n_source": int(_field(data, "n_source", path)),
        "rounds": int(_field(data, "rounds", path)),
    }
    return graph, selected, meta


def sequence_graph(path):
    """The geodesic graph for a frame directory, if a sidecar is present."""
    sidecar = Path(path) / PROXY_GRAPH_NAME
    if sidecar.exists():
        graph, _, _ = load_proxy_graph(sidecar)
        return graph
    return None
