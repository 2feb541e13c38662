"""Command-line surface: fit, transfer, deform, eval, resample, export-weights.

Every option can also come from a ``--config FILE`` (a flat JSON object
keyed by option name with dashes as underscores); explicit flags win over
config values, config values win over built-in defaults. Exit codes: 0 on
success, 1 on runtime failure (diagnostic on stderr), 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .exceptions import GaussRigError, InvalidInputError, TopologyMismatchError
from .fitting import (
    FitConfig,
    fit_motion_only,
    fit_rig_and_motion,
    rig_weights_for_mesh,
)
from .geometry import TriMesh
from .metrics import frame_metrics, run_protocol
from .sampling import DEFAULT_TARGET_VERTICES, DOWNSAMPLE_THRESHOLD, normalize_resolution
from .skinning import SkinningWeights, lbs_deform


def _add_config_flag(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE",
                   help="JSON file of option defaults (flags take precedence)")


def _add_fit_options(p: argparse.ArgumentParser, with_rig_options: bool) -> None:
    p.add_argument("--iters", type=int, default=2000, help="Adam iterations")
    p.add_argument("--seed", type=int, default=0, help="base random seed")
    p.add_argument("--motion-lr", type=float, default=1e-2)
    p.add_argument("--clip-norm", type=float, default=1.0)
    if with_rig_options:
        p.add_argument("--bones", type=int, default=48, help="number of Gaussian bones")
        p.add_argument("--tau", type=float, default=None,
                       help="geodesic gate radius; 'inf' disables masking "
                            "(default: 0.4 x bbox diagonal)")
        p.add_argument("--top-k", type=int, default=4,
                       help="max influencing bones per vertex")
        p.add_argument("--rig-lr", type=float, default=1e-3)
        p.add_argument("--jitter", type=float, default=0.0,
                       help="relative stddev of random rig-init perturbation")


def build_parser():
    top = argparse.ArgumentParser(
        prog="gaussrig",
        description="Gaussian-bone rigs: fit them to mesh sequences, transfer "
                    "motion, deform, evaluate, resample.",
    )
    sub = top.add_subparsers(dest="command", required=True, metavar="COMMAND")
    commands = {}

    p = sub.add_parser("fit", help="fit rig and motion to a frame directory")
    p.add_argument("--frames", required=True, metavar="DIR")
    p.add_argument("--out-rig", required=True, metavar="PATH")
    p.add_argument("--out-motion", required=True, metavar="PATH")
    p.add_argument("--report", metavar="PATH", help="write the fit report here")
    _add_fit_options(p, with_rig_options=True)
    _add_config_flag(p)
    commands["fit"] = p

    p = sub.add_parser("transfer", help="fit motion only, with a frozen rig")
    p.add_argument("--rig", required=True, metavar="PATH")
    p.add_argument("--frames", required=True, metavar="DIR")
    p.add_argument("--out-motion", required=True, metavar="PATH")
    p.add_argument("--report", metavar="PATH")
    p.add_argument("--force", action="store_true",
                   help="apply the rig even if the mesh fingerprint differs")
    _add_fit_options(p, with_rig_options=False)
    _add_config_flag(p)
    commands["transfer"] = p

    p = sub.add_parser("deform", help="apply a rig and motion to a canonical mesh")
    p.add_argument("--rig", required=True, metavar="PATH")
    p.add_argument("--motion", required=True, metavar="PATH")
    p.add_argument("--canonical", required=True, metavar="FILE")
    p.add_argument("--out-dir", required=True, metavar="DIR")
    p.add_argument("--include-rest", action="store_true",
                   help="also write the canonical mesh as frame 0")
    p.add_argument("--force", action="store_true",
                   help="apply the rig even if the mesh fingerprint differs "
                        "(weights are recomputed from bone positions)")
    _add_config_flag(p)
    commands["deform"] = p

    p = sub.add_parser("eval", help="score predictions, or run the split protocol")
    p.add_argument("--pred", metavar="DIR", help="predicted frames")
    p.add_argument("--target", metavar="DIR", help="ground-truth frames")
    p.add_argument("--train", metavar="DIR", help="protocol: training sequence")
    p.add_argument("--test", metavar="DIR", help="protocol: held-out sequence")
    p.add_argument("--splits", type=int, default=100,
                   help="independent seeded splits in protocol mode")
    p.add_argument("--report", metavar="PATH")
    _add_fit_options(p, with_rig_options=True)
    _add_config_flag(p)
    commands["eval"] = p

    p = sub.add_parser("resample", help="normalize a sequence's resolution")
    p.add_argument("--frames", required=True, metavar="DIR")
    p.add_argument("--target-n", type=int, default=DEFAULT_TARGET_VERTICES)
    p.add_argument("--out-dir", required=True, metavar="DIR")
    _add_config_flag(p)
    commands["resample"] = p

    p = sub.add_parser("export-weights", help="write an argmax-bone colored point cloud")
    p.add_argument("--rig", required=True, metavar="PATH")
    p.add_argument("--canonical", required=True, metavar="FILE")
    p.add_argument("--out", required=True, metavar="FILE")
    p.add_argument("--force", action="store_true")
    _add_config_flag(p)
    commands["export-weights"] = p

    return top, commands


def _fit_config(args, n_bones: int | None = None) -> FitConfig:
    return FitConfig(
        n_bones=n_bones if n_bones is not None else args.bones,
        iterations=args.iters,
        rig_lr=getattr(args, "rig_lr", 1e-3),
        motion_lr=args.motion_lr,
        tau=None if getattr(args, "tau", None) is None else float(args.tau),
        top_k=getattr(args, "top_k", 4),
        clip_norm=args.clip_norm,
        seed=args.seed,
        init_jitter=getattr(args, "jitter", 0.0),
    )


def _load_sized_sequence(path):
    seq = fileio.load_sequence(path)
    if seq.n_vertices > DOWNSAMPLE_THRESHOLD:
        raise InvalidInputError(
            f"{path}: {seq.n_vertices} vertices exceeds the direct-fit limit "
            f"({DOWNSAMPLE_THRESHOLD}); run 'gaussrig resample' first"
        )
    return seq, fileio.sequence_graph(path)


def _cmd_fit(args) -> int:
    seq, graph = _load_sized_sequence(args.frames)
    cfg = _fit_config(args)
    rig, motion, weights, report = fit_rig_and_motion(seq, cfg, graph=graph)
    fingerprint = fileio.mesh_fingerprint(seq.frames[0], seq.faces)
    fileio.save_rig(args.out_rig, rig, weights, fingerprint)
    fileio.save_motion(args.out_motion, motion, rig)
    if args.report:
        fileio.save_fit_report(args.report, report)
    print(
        f"fit: {seq.n_frames} frames x {seq.n_vertices} vertices, "
        f"K={cfg.n_bones}, final loss {report.final_loss:.6e} "
        f"({report.wall_time_s:.1f}s)"
    )
    return 0


def _cmd_transfer(args) -> int:
    rig, weights, fingerprint = fileio.load_rig(args.rig)
    seq, graph = _load_sized_sequence(args.frames)
    matches = fileio.fingerprint_matches(fingerprint, seq.frames[0], seq.faces)
    if not matches:
        fileio.require_fingerprint(
            fingerprint, seq.frames[0], seq.faces,
            "canonical frame of --frames", force=args.force,
        )
    cfg = _fit_config(args, n_bones=rig.n_bones)
    # same mesh: reuse the stored weights; otherwise derive them from the
    # bone positions, which transfer to any resolution
    if matches:
        w = weights.to_dense()
    else:
        mesh = TriMesh(seq.frames[0], seq.faces)
        w = rig_weights_for_mesh(rig, mesh, graph=graph)
    motion, report = fit_motion_only(rig, seq, cfg, graph=graph, weights=w)
    fileio.save_motion(args.out_motion, motion, rig)
    if args.report:
        fileio.save_fit_report(args.report, report)
    print(
        f"transfer: {seq.n_frames - 1} frames refit on frozen rig, "
        f"final loss {report.final_loss:.6e}"
    )
    return 0


def _cmd_deform(args) -> int:
    rig, weights, fingerprint = fileio.load_rig(args.rig)
    mesh = fileio.load_obj(args.canonical)
    matches = fileio.fingerprint_matches(fingerprint, mesh.vertices, mesh.faces)
    if not matches:
        fileio.require_fingerprint(
            fingerprint, mesh.vertices, mesh.faces, "--canonical mesh",
            force=args.force,
        )
        weights = SkinningWeights.from_dense(rig_weights_for_mesh(rig, mesh))
    transforms = fileio.load_motion(args.motion)
    if transforms and len(transforms[0].local) != rig.n_bones:
        raise InvalidInputError(
            f"motion file has {len(transforms[0].local)} bones, rig has {rig.n_bones}"
        )
    dense = weights.to_dense()
    frames = np.stack([lbs_deform(mesh.vertices, dense, bt) for bt in transforms])
    out_dir = Path(args.out_dir)
    if args.include_rest:
        fileio.save_sequence(out_dir, mesh.vertices[None], mesh.faces, start=0)
    fileio.save_sequence(out_dir, frames, mesh.faces, start=1)
    print(f"deform: wrote {len(frames)} frames to {out_dir}")
    return 0


def _stack_frames(meshes, what: str) -> np.ndarray:
    counts = {m.n_vertices for m in meshes}
    if len(counts) != 1:
        raise TopologyMismatchError(f"{what}: vertex counts differ across frames: {sorted(counts)}")
    return np.stack([m.vertices for m in meshes])


def _cmd_eval(args) -> int:
    direct = args.pred is not None or args.target is not None
    protocol = args.train is not None or args.test is not None
    if direct == protocol:
        print(
            "error: eval needs either --pred/--target or --train/--test",
            file=sys.stderr,
        )
        return 2
    if direct:
        if args.pred is None or args.target is None:
            print("error: --pred and --target go together", file=sys.stderr)
            return 2
        pred = _stack_frames(fileio.load_frames(args.pred), "--pred")
        target = _stack_frames(fileio.load_frames(args.target), "--target")
        metrics = frame_metrics(pred, target)
        if args.report:
            fileio.write_json(
                args.report,
                {
                    "format_version": fileio.FORMAT_VERSION,
                    "kind": "eval_report",
                    "mode": "frames",
                    "metrics": metrics,
                },
            )
        print(
            f"eval: {pred.shape[0]} frames, CD-L1 {metrics['mean_cd_l1']:.6e}, "
            f"CD-L2 {metrics['mean_cd_l2']:.6e}, "
            f"vertex MSE {metrics['mean_vertex_mse']:.6e}"
        )
        return 0
    if args.train is None or args.test is None:
        print("error: --train and --test go together", file=sys.stderr)
        return 2
    train_seq, train_graph = _load_sized_sequence(args.train)
    test_seq, test_graph = _load_sized_sequence(args.test)
    cfg = _fit_config(args)
    report = run_protocol(
        train_seq, test_seq, cfg, splits=args.splits,
        train_graph=train_graph, test_graph=test_graph,
    )
    if args.report:
        fileio.save_eval_report(args.report, report)
    agg = report.aggregates
    print(
        f"protocol: {args.splits} splits | train CD-L1 "
        f"{agg['train']['mean_cd_l1']['mean']:.6e} "
        f"+/- {agg['train']['mean_cd_l1']['std']:.2e} | transfer CD-L1 "
        f"{agg['transfer']['mean_cd_l1']['mean']:.6e} "
        f"+/- {agg['transfer']['mean_cd_l1']['std']:.2e}"
    )
    return 0


def _cmd_resample(args) -> int:
    seq = fileio.load_sequence(args.frames)
    resampled, rmap = normalize_resolution(seq, args.target_n)
    out_dir = Path(args.out_dir)
    fileio.save_sequence(out_dir, resampled.frames, faces=None)
    fileio.save_proxy_graph(out_dir / fileio.PROXY_GRAPH_NAME, rmap)
    print(
        f"resample: {seq.n_vertices} -> {resampled.n_vertices} vertices "
        f"({rmap.rounds} subdivision rounds), frames in {out_dir}"
    )
    return 0


def _cmd_export_weights(args) -> int:
    rig, weights, fingerprint = fileio.load_rig(args.rig)
    mesh = fileio.load_obj(args.canonical)
    matches = fileio.fingerprint_matches(fingerprint, mesh.vertices, mesh.faces)
    if not matches:
        fileio.require_fingerprint(
            fingerprint, mesh.vertices, mesh.faces, "--canonical mesh",
            force=args.force,
        )
        weights = SkinningWeights.from_dense(rig_weights_for_mesh(rig, mesh))
    fileio.export_weights_visualization(args.out, mesh.vertices, weights)
    print(f"export-weights: wrote {mesh.n_vertices} colored points to {args.out}")
    return 0


_HANDLERS = {
    "fit": _cmd_fit,
    "transfer": _cmd_transfer,
    "deform": _cmd_deform,
    "eval": _cmd_eval,
    "resample": _cmd_resample,
    "export-weights": _cmd_export_weights,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    top, commands = build_parser()
    try:
        args = top.parse_args(argv)
        if getattr(args, "config", None):
            overrides = fileio.load_config(args.config)
            sub = commands[args.command]
            known = {a.dest for a in sub._actions}
            unknown = sorted(set(overrides) - known)
            if unknown:
                print(
                    f"error: unknown config option(s): {', '.join(unknown)}",
                    file=sys.stderr,
                )
                return 2
            sub.set_defaults(**overrides)
            args = top.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    except (GaussRigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    try:
        return _HANDLERS[args.command](args)
    except (GaussRigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
