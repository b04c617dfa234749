from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

from app.decoding.records import Pose3D
from app.eval.metrics import (
    AUC_THRESHOLDS_MM,
    PCK_THRESHOLD_MM,
    PckMode,
    as_pose,
    auc_from_errors,
    joint_errors,
    match_persons,
    mpjpe,
    pa_mpjpe,
    pck_from_errors,
)
from app.shared.contracts import JointMetric, MetricReport, SkeletonConfig, SuiteReport
from app.shared.errors import AlignmentError, MetricError
from app.synth.scene import Scene

logger = logging.getLogger(__name__)


def evaluate(
    preds: Sequence[Pose3D],
    scene: Scene,
    skeleton: SkeletonConfig,
    graph: str | None = None,
    decode_failures: int = 0,
    threshold_mm: float = PCK_THRESHOLD_MM,
    thresholds: Sequence[float] = AUC_THRESHOLDS_MM,
) -> MetricReport:
    gts = [as_pose(p) for p in scene.persons]
    root = skeleton.mid_hip_index
    unit = scene.mm_per_unit
    pairs = match_persons(preds, gts, root)
    rel = joint_errors(preds, gts, PckMode.REL, root, unit, pairs)
    absolute = joint_errors(preds, gts, PckMode.ABS, root, unit, pairs)

    notes: list[str] = []
    person_mpjpe: list[float] = []
    person_pa: list[float] = []
    for g, p in pairs:
        try:
            error = mpjpe(preds[p], gts[g], align_root=True, root_index=root, unit_mm=unit)
        except MetricError as exc:
            notes.append(f"gt {g}: MPJPE skipped ({exc})")
            continue
        try:
            aligned = pa_mpjpe(preds[p], gts[g], unit_mm=unit)
        except AlignmentError as exc:
            notes.append(f"gt {g}: Procrustes alignment degenerate ({exc}), PA-MPJPE uses MPJPE")
            aligned = error
        person_mpjpe.append(error)
        person_pa.append(aligned)
    unmatched = len(gts) - len(pairs)
    if unmatched:
        notes.append(f"{unmatched} ground-truth person(s) without a prediction")

    per_joint = []
    for j, name in enumerate(skeleton.joint_names):
        column = rel[:, j : j + 1]
        if np.isnan(column).all():
            continue
        finite = column[np.isfinite(column)]
        per_joint.append(
            JointMetric(
                index=j,
                name=name,
                pck_rel=pck_from_errors(column, threshold_mm),
                mpjpe=float(finite.mean()) if finite.size else None,
            )
        )

    return MetricReport(
        graph=graph,
        persons_gt=len(gts),
        persons_pred=sum(1 for pose in preds if pose.valid.any()),
        decode_failures=decode_failures,
        threshold_mm=threshold_mm,
        pck_rel=pck_from_errors(rel, threshold_mm),
        pck_abs=pck_from_errors(absolute, threshold_mm),
        auc_rel=min(max(auc_from_errors(rel, thresholds), 0.0), 1.0),
        mpjpe=float(np.mean(person_mpjpe)) if person_mpjpe else None,
        pa_mpjpe=float(np.mean(person_pa)) if person_pa else None,
        pairing=pairs,
        per_joint=per_joint,
        notes=notes,
    )


def _fmt(value: float | None, digits: int = 6) -> str:
    return "-" if value is None else f"{value:.{digits}f}"


def format_report(report: MetricReport) -> str:
    lines = [
        "# metric report v1",
        f"graph: {report.graph or '-'}",
        f"persons_gt: {report.persons_gt}",
        f"persons_pred: {report.persons_pred}",
        f"decode_failures: {report.decode_failures}",
        f"threshold_mm: {_fmt(report.threshold_mm, 1)}",
        f"pck_rel: {_fmt(report.pck_rel)}",
        f"pck_abs: {_fmt(report.pck_abs)}",
        f"auc_rel: {_fmt(report.auc_rel)}",
        f"mpjpe_mm: {_fmt(report.mpjpe)}",
        f"pa_mpjpe_mm: {_fmt(report.pa_mpjpe)}",
        "pairing: " + (" ".join(f"{g}->{p}" for g, p in report.pairing) or "-"),
        "joints:",
    ]
    for joint in report.per_joint:
        lines.append(f"  {joint.index:>3} {joint.name:<14} pck_rel={_fmt(joint.pck_rel)} mpjpe_mm={_fmt(joint.mpjpe)}")
    lines.append(f"notes: {len(report.notes)}")
    lines.extend(f"  - {note}" for note in report.notes)
    return "\n".join(lines) + "\n"


def format_suite(report: SuiteReport) -> str:
    lines = [
        "# suite report v1",
        f"scenes: {report.scenes}",
        f"occlusion_prob: {report.occlusion_prob:.3f}",
    ]
    for graph in sorted(report.mean_pck_rel):
        lines.append(
            f"mean_pck_rel.{graph}: {report.mean_pck_rel[graph]:.6f} "
            f"(failures {report.decode_failures.get(graph, 0)})"
        )
    lines.append(f"relative_gain.dgr_over_star: {report.relative_gain:.6f}")
    lines.append("crowd_bins:")
    for crowd in report.crowd_bins:
        advantage = crowd.advantage
        lines.append(
            f"  >{crowd.lower:.1f} persons={crowd.persons} dgr={_fmt(crowd.pck_dgr)} "
            f"star={_fmt(crowd.pck_star)} advantage={_fmt(advantage)}"
        )
    return "\n".join(lines) + "\n"


def check_thresholds(report: MetricReport, min_pck: float | None) -> list[str]:
    violations = []
    if min_pck is not None and report.pck_rel < min_pck:
        violations.append(f"pck_rel {report.pck_rel:.3f} below required {min_pck:.3f}")
    return violations
