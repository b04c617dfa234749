"""Command-line pipelines: synth, refine, decode, eval, roundtrip and suite.

Every subcommand is deterministic given its flags. Output directories are
assembled in a staging directory next to ``--out`` and moved into place once
complete. Exit codes: 0 success, 1 operational error (including a failed
``--min-pck`` gate), 2 argument error.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Sequence

from pydantic import ValidationError

from app.core.gmap import read_map_set, write_gmap, write_map_set
from app.core.maps import DataMapSet, TensorMap
from app.core.skeleton import load_skeleton, write_skeleton
from app.decoding.pipeline import DecodeResult, decode_image
from app.decoding.records import read_poses, write_detections, write_poses
from app.decoding.sdar import SdarWeights, load_weights, sdar_apply
from app.eval.report import check_thresholds, evaluate, format_report, format_suite
from app.eval.suite import SuiteSettings, run_occlusion_suite
from app.shared.contracts import (
    IDENTITY_WEIGHTS,
    CorruptionParams,
    DecodeConfig,
    GraphMode,
    MetricReport,
    RunConfig,
    SkeletonConfig,
    Subcommand,
)
from app.shared.errors import PoseDecodingError
from app.synth.corrupt import corrupt_maps
from app.synth.render import render_maps
from app.synth.scene import Scene, generate_scene, read_scene, write_scene

logger = logging.getLogger(__name__)

SUITE_OCCLUSION = 0.3
FAILURES_HEADER = "# failures v1"


def parse_size(text: str) -> tuple[int, int]:
    height, sep, width = text.lower().partition("x")
    if not sep:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}")
    try:
        return int(height), int(width)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--skeleton", type=Path, help="Skeleton file; defaults to the built-in 15-joint skeleton")
    common.add_argument("--graph", choices=[g.value for g in GraphMode], default=GraphMode.DGR.value)
    common.add_argument("--threshold", type=float, default=0.5, help="Heat peak threshold")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--seeds", type=int, default=20, help="Number of scenes for suite")
    common.add_argument("--persons", type=int, help="Persons per scene (suite cycles 2-4 when omitted)")
    common.add_argument("--size", type=parse_size, default=(128, 128), help="Image size as HxW")
    common.add_argument("--occlusion", type=float, help="Per-joint occlusion probability")
    common.add_argument("--crowding", type=float, help="0 spreads persons out, 1 packs them together")
    common.add_argument("--suppress-centers", action="store_true", help="Suppress every body-center peak")
    common.add_argument("--weights", default=IDENTITY_WEIGHTS, help="Refinement weights file, or 'identity'")
    common.add_argument("--in", dest="in_dir", type=Path, help="Input map directory")
    common.add_argument("--out", type=Path, help="Output directory")
    common.add_argument("--scene", type=Path, help="Ground-truth scene file")
    common.add_argument("--poses", type=Path, help="Decoded poses file")
    common.add_argument("--min-pck", type=float, help="Fail when PCK_rel falls below this percentage")
    common.add_argument("--dump-graphs", action="store_true", help="Write per-person path-weight matrices")
    common.add_argument("--workers", type=int, default=1, help="Worker processes for suite")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="posegraph", description="Decode multi-person 3D poses from synthetic dense maps."
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    descriptions = {
        Subcommand.SYNTH: "Render a seeded scene into a map directory.",
        Subcommand.REFINE: "Apply refinement weights to a map directory.",
        Subcommand.DECODE: "Decode poses from a map directory.",
        Subcommand.EVAL: "Score decoded poses against a scene.",
        Subcommand.ROUNDTRIP: "Synthesize, decode and score in one step.",
        Subcommand.SUITE: "Compare decoders over a seeded range of occluded scenes.",
    }
    for command, text in descriptions.items():
        sub.add_parser(command.value, parents=[common], help=text, description=text)
    return parser


def to_run_config(args: argparse.Namespace) -> RunConfig:
    subcommand = Subcommand(args.subcommand)
    values = {
        "subcommand": subcommand,
        "in_dir": args.in_dir,
        "out": args.out,
        "scene_path": args.scene,
        "poses_path": args.poses,
        "skeleton_path": args.skeleton,
        "graph": args.graph,
        "threshold": args.threshold,
        "seed": args.seed,
        "seeds": args.seeds,
        "height": args.size[0],
        "width": args.size[1],
        "suppress_centers": args.suppress_centers,
        "weights": args.weights,
        "min_pck": args.min_pck,
        "dump_graphs": args.dump_graphs,
        "workers": args.workers,
    }
    for name in ("persons", "crowding"):
        if getattr(args, name) is not None:
            values[name] = getattr(args, name)
    if args.occlusion is not None:
        values["occlusion"] = args.occlusion
    elif subcommand is Subcommand.SUITE:
        values["occlusion"] = SUITE_OCCLUSION
    return RunConfig(**values)


@contextmanager
def staged_directory(out: Path) -> Iterator[Path]:
    """Yield a staging directory that replaces ``out`` as a whole only on success."""
    out = Path(out)
    if out.exists() and not out.is_dir():
        raise NotADirectoryError(f"output path is not a directory: {out}")
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield staging
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    if not out.exists():
        os.replace(staging, out)
        return
    retired = Path(tempfile.mkdtemp(prefix=f".{out.name}.old.", dir=out.parent))
    os.replace(out, retired / out.name)
    try:
        os.replace(staging, out)
    except OSError:
        os.replace(retired / out.name, out)
        shutil.rmtree(staging, ignore_errors=True)
        raise
    finally:
        shutil.rmtree(retired, ignore_errors=True)


def resolve_skeleton(config: RunConfig) -> SkeletonConfig:
    if config.skeleton_path is None and config.in_dir is not None:
        bundled = config.in_dir / "skeleton.txt"
        if bundled.exists():
            return load_skeleton(bundled)
    return load_skeleton(config.skeleton_path)


def corruption_for(config: RunConfig) -> CorruptionParams:
    return CorruptionParams(suppress_centers=config.suppress_centers)


def synthesize(config: RunConfig, skeleton: SkeletonConfig) -> tuple[Scene, DataMapSet]:
    scene = generate_scene(
        skeleton, config.persons, (config.height, config.width), config.seed, config.crowding
    )
    maps = render_maps(scene, skeleton)
    if config.occlusion > 0 or config.suppress_centers:
        maps = corrupt_maps(maps, scene, skeleton, config.occlusion, config.seed, corruption_for(config))
    return scene, maps


def decode_config(config: RunConfig, scene: Scene | None) -> DecodeConfig:
    values = {"graph": config.graph, "threshold": config.threshold, "keep_graphs": config.dump_graphs}
    if scene is not None:
        values["mm_per_unit"] = scene.mm_per_unit
    return DecodeConfig(**values)


def format_failures(result: DecodeResult) -> str:
    lines = [FAILURES_HEADER, f"graph: {result.graph.value}", f"count: {len(result.failures)}"]
    lines.extend(f"person {pid}: {message}" for pid, message in sorted(result.failures.items()))
    return "\n".join(lines) + "\n"


def write_decode_outputs(directory: Path, result: DecodeResult) -> None:
    write_detections(directory / "detections.txt", result.detections)
    write_poses(directory / "poses.txt", result.poses, result.graph.value)
    (directory / "failures.txt").write_text(format_failures(result), encoding="utf-8")
    for person_id, graph in sorted(result.graphs.items()):
        write_gmap(directory / f"graph_{person_id}.gmap", TensorMap(graph.weights[None, :, :]))


def write_synth_outputs(directory: Path, scene: Scene, maps: DataMapSet, skeleton: SkeletonConfig) -> None:
    write_scene(directory / "scene.txt", scene)
    write_skeleton(directory / "skeleton.txt", skeleton)
    write_map_set(directory, maps)


def gate(report: MetricReport, config: RunConfig) -> int:
    violations = check_thresholds(report, config.min_pck)
    for violation in violations:
        print(f"error: {violation}", file=sys.stderr)
    return 1 if violations else 0


def cmd_synth(config: RunConfig, skeleton: SkeletonConfig) -> int:
    scene, maps = synthesize(config, skeleton)
    with staged_directory(config.out) as staging:
        write_synth_outputs(staging, scene, maps, skeleton)
    print(f"Wrote scene with {scene.person_count} person(s) to {config.out}")
    return 0


def cmd_refine(config: RunConfig, skeleton: SkeletonConfig) -> int:
    maps = read_map_set(config.in_dir)
    if maps.feature is None:
        raise FileNotFoundError(f"missing map file: {config.in_dir / 'feature.gmap'}")
    if config.weights == IDENTITY_WEIGHTS:
        weights = SdarWeights.zeros(maps.joint_count, maps.feature.channels)
    else:
        weights = load_weights(Path(config.weights))
    refined = sdar_apply(maps, weights)
    with staged_directory(config.out) as staging:
        write_map_set(staging, refined)
        for name in ("scene.txt", "skeleton.txt"):
            source = config.in_dir / name
            if source.exists():
                shutil.copyfile(source, staging / name)
    print(f"Refined maps written to {config.out}")
    return 0


def cmd_decode(config: RunConfig, skeleton: SkeletonConfig) -> int:
    maps = read_map_set(config.in_dir)
    scene_path = config.scene_path or config.in_dir / "scene.txt"
    scene = read_scene(scene_path) if scene_path.exists() else None
    result = decode_image(maps, skeleton, decode_config(config, scene))
    report = None
    if scene is not None:
        report = evaluate(result.poses, scene, skeleton, result.graph.value, len(result.failures))
    with staged_directory(config.out) as staging:
        write_decode_outputs(staging, result)
        if report is not None:
            (staging / "report.txt").write_text(format_report(report), encoding="utf-8")
    print(
        f"Decoded {len(result.poses)} person(s) with {result.graph.value} graph, "
        f"{len(result.failures)} decode failure(s)"
    )
    if report is None:
        return 0
    sys.stdout.write(format_report(report))
    return gate(report, config)


def cmd_eval(config: RunConfig, skeleton: SkeletonConfig) -> int:
    scene = read_scene(config.scene_path)
    poses, graph = read_poses(config.poses_path)
    report = evaluate(poses, scene, skeleton, graph)
    text = format_report(report)
    if config.out is not None:
        with staged_directory(config.out) as staging:
            (staging / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return gate(report, config)


def cmd_roundtrip(config: RunConfig, skeleton: SkeletonConfig) -> int:
    scene, maps = synthesize(config, skeleton)
    result = decode_image(maps, skeleton, decode_config(config, scene))
    report = evaluate(result.poses, scene, skeleton, result.graph.value, len(result.failures))
    text = format_report(report)
    with staged_directory(config.out) as staging:
        write_synth_outputs(staging, scene, maps, skeleton)
        write_decode_outputs(staging, result)
        (staging / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return gate(report, config)


def cmd_suite(config: RunConfig, skeleton: SkeletonConfig, persons: int | None, crowding: float | None) -> int:
    settings = SuiteSettings(
        skeleton=skeleton,
        occlusion_prob=config.occlusion,
        image_size=(config.height, config.width),
        persons=persons,
        crowding=crowding,
        threshold=config.threshold,
        corruption=corruption_for(config),
    )
    seeds = range(config.seed, config.seed + config.seeds)
    report = run_occlusion_suite(seeds, settings, config.workers)
    text = format_suite(report)
    if config.out is not None:
        with staged_directory(config.out) as staging:
            (staging / "suite.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 0

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = to_run_config(args)
    except ValidationError as exc:
        print(f"error: invalid arguments\n{exc}", file=sys.stderr)
        return 2
    missing = config.missing_inputs()
    if missing:
        for path in missing:
            print(f"error: missing input: {path}", file=sys.stderr)
        return 1

    try:
        skeleton = resolve_skeleton(config)
        if config.subcommand is Subcommand.SYNTH:
            return cmd_synth(config, skeleton)
        if config.subcommand is Subcommand.REFINE:
            return cmd_refine(config, skeleton)
        if config.subcommand is Subcommand.DECODE:
            return cmd_decode(config, skeleton)
        if config.subcommand is Subcommand.EVAL:
            return cmd_eval(config, skeleton)
        if config.subcommand is Subcommand.ROUNDTRIP:
            return cmd_roundtrip(config, skeleton)
        return cmd_suite(config, skeleton, args.persons, args.crowding)
    except (PoseDecodingError, OSError, ValueError) as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> int:
    return run(sys.argv[1:])


if __name__ == "__main__":
    raise SystemExit(main())
