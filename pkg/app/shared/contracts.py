from __future__ import annotations

from enum import Enum
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

IDENTITY_WEIGHTS = "identity"


class GraphMode(str, Enum):
    STAR = "star"
    TREE = "tree"
    DGR = "dgr"


class DepthEncoding(str, Enum):
    RAW = "raw"
    DELTA_INVERSE = "delta_inverse"


class GateSource(str, Enum):
    REFINED = "refined"
    RESIDUAL = "residual"


class Subcommand(str, Enum):
    SYNTH = "synth"
    REFINE = "refine"
    DECODE = "decode"
    EVAL = "eval"
    ROUNDTRIP = "roundtrip"
    SUITE = "suite"


class SkeletonConfig(BaseModel):
    joint_count: int = Field(ge=1, le=256)
    joint_names: list[str]
    bone_prior: list[list[float]]
    head_top_index: int = Field(ge=0)
    mid_hip_index: int = Field(ge=0)
    tree_parents: list[int]
    center_definition: tuple[int, int]

    @field_validator("joint_names")
    @classmethod
    def validate_names(cls, v: list[str]) -> list[str]:
        for name in v:
            if not name or any(ch.isspace() for ch in name):
                raise ValueError(f"joint name {name!r} must be a non-empty token")
        if len(set(v)) != len(v):
            raise ValueError("joint names must be unique")
        return v

    @model_validator(mode="after")
    def validate_structure(self) -> SkeletonConfig:
        k = self.joint_count
        if len(self.joint_names) != k:
            raise ValueError(f"expected {k} joint names, got {len(self.joint_names)}")
        if len(self.tree_parents) != k:
            raise ValueError(f"expected {k} tree parents, got {len(self.tree_parents)}")
        prior = np.asarray(self.bone_prior, dtype=np.float64)
        if prior.shape != (k, k):
            raise ValueError(f"bone_prior must be {k}x{k}, got {prior.shape}")
        if not np.all(np.isfinite(prior)) or np.any(prior < 0):
            raise ValueError("bone_prior entries must be finite and non-negative")
        if not np.array_equal(prior, prior.T):
            raise ValueError("bone_prior must be symmetric")
        if np.any(np.diag(prior) != 0):
            raise ValueError("bone_prior diagonal must be zero")
        for index in (self.head_top_index, self.mid_hip_index, *self.center_definition):
            if not 0 <= index < k:
                raise ValueError(f"joint index {index} outside [0, {k})")
        if prior[self.head_top_index, self.mid_hip_index] <= 0:
            raise ValueError("prior head-top to mid-hip length must be positive")

        roots = [j for j, parent in enumerate(self.tree_parents) if parent == -1]
        if len(roots) != 1:
            raise ValueError(f"tree_parents must have exactly one root, found {len(roots)}")
        for j, parent in enumerate(self.tree_parents):
            if parent != -1 and not 0 <= parent < k:
                raise ValueError(f"parent {parent} of joint {j} is not a joint index")
        for j in range(k):
            seen = {j}
            node = self.tree_parents[j]
            while node != -1:
                if node in seen:
                    raise ValueError(f"tree_parents has a cycle through joint {j}")
                seen.add(node)
                node = self.tree_parents[node]
        return self

    @property
    def prior(self) -> np.ndarray:
        return np.asarray(self.bone_prior, dtype=np.float64)

    @property
    def tree_root(self) -> int:
        return self.tree_parents.index(-1)

    @property
    def head_hip_prior(self) -> float:
        return float(self.bone_prior[self.head_top_index][self.mid_hip_index])

    def children(self, joint: int) -> list[int]:
        return [j for j, parent in enumerate(self.tree_parents) if parent == joint]

    def traversal_order(self) -> list[int]:
        order = [self.tree_root]
        for joint in order:
            order.extend(self.children(joint))
        return order


class RenderParams(BaseModel):
    gaussian_sigma: float = Field(default=2.0, gt=0)
    offset_radius: float = Field(default=3.0, ge=1)
    depth_encoding: DepthEncoding = DepthEncoding.DELTA_INVERSE
    feature_channels: int = Field(default=8, ge=0, le=512)


class SceneConfig(BaseModel):
    mm_per_unit: float = Field(default=30.0, gt=0)
    bone_jitter: float = Field(default=0.05, ge=0, le=0.1)
    pose_variation: float = Field(default=0.3, ge=0)
    min_depth: float = Field(default=100.0, gt=0)
    max_depth: float = Field(default=200.0, gt=0)
    min_root_distance: float = Field(default=4.0, ge=0)
    spread: float = Field(default=0.6, ge=0)
    max_retries: int = Field(default=200, ge=1)

    @model_validator(mode="after")
    def validate_depth_range(self) -> SceneConfig:
        if self.max_depth < self.min_depth:
            raise ValueError("max_depth must not be below min_depth")
        return self


class CorruptionParams(BaseModel):
    suppress_centers: bool = False
    suppressed_amplitude: float = Field(default=0.2, ge=0, lt=1)
    crowd_occlusion: bool = True
    crowd_center_scale: float = Field(default=0.35, gt=0)
    offset_noise: float = Field(default=0.1, ge=0)


class SdarConfig(BaseModel):
    gate_source: GateSource = GateSource.REFINED


class DecodeConfig(BaseModel):
    graph: GraphMode = GraphMode.DGR
    threshold: float = Field(default=0.5, gt=0, lt=1)
    apply_delta: bool = True
    max_center_distance: float = Field(default=2.0, gt=0)
    virtual_centers: bool = True
    virtual_center_radius: float = Field(default=0.75, gt=0)
    min_virtual_support: int = Field(default=1, ge=1)
    mm_per_unit: float = Field(default=30.0, gt=0)
    eps: float = Field(default=1e-6, gt=0)
    keep_graphs: bool = False


class JointMetric(BaseModel):
    index: int
    name: str
    pck_rel: float = Field(ge=0, le=100)
    mpjpe: float | None = Field(default=None, ge=0)


class MetricReport(BaseModel):
    graph: str | None = None
    persons_gt: int = Field(ge=0)
    persons_pred: int = Field(ge=0)
    decode_failures: int = Field(default=0, ge=0)
    threshold_mm: float = Field(gt=0)
    pck_rel: float = Field(ge=0, le=100)
    pck_abs: float = Field(ge=0, le=100)
    auc_rel: float = Field(ge=0, le=1)
    mpjpe: float | None = Field(default=None, ge=0)
    pa_mpjpe: float | None = Field(default=None, ge=0)
    pairing: list[tuple[int, int]] = Field(default_factory=list)
    per_joint: list[JointMetric] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)


class CrowdBin(BaseModel):
    lower: float = Field(ge=0, lt=1)
    persons: int = Field(ge=0)
    pck_dgr: float | None = None
    pck_star: float | None = None

    @property
    def advantage(self) -> float | None:
        if self.pck_dgr is None or self.pck_star is None:
            return None
        return self.pck_dgr - self.pck_star


class SuiteReport(BaseModel):
    scenes: int = Field(ge=0)
    occlusion_prob: float = Field(ge=0, le=1)
    mean_pck_rel: dict[str, float] = Field(default_factory=dict)
    decode_failures: dict[str, int] = Field(default_factory=dict)
    crowd_bins: list[CrowdBin] = Field(default_factory=list)

    @property
    def relative_gain(self) -> float:
        star = self.mean_pck_rel.get(GraphMode.STAR.value, 0.0)
        dgr = self.mean_pck_rel.get(GraphMode.DGR.value, 0.0)
        if star <= 0:
            return float("inf") if dgr > 0 else 0.0
        return (dgr - star) / star


class RunConfig(BaseModel):
    subcommand: Subcommand
    in_dir: Path | None = None
    out: Path | None = None
    scene_path: Path | None = None
    poses_path: Path | None = None
    skeleton_path: Path | None = None
    graph: GraphMode = GraphMode.DGR
    threshold: float = Field(default=0.5, gt=0, lt=1)
    seed: int = Field(default=0, ge=0)
    seeds: int = Field(default=20, ge=1)
    persons: int = Field(default=3, ge=1, le=32)
    height: int = Field(default=128, ge=32, le=4096)
    width: int = Field(default=128, ge=32, le=4096)
    occlusion: float = Field(default=0.0, ge=0, le=1)
    crowding: float = Field(default=0.5, ge=0, le=1)
    suppress_centers: bool = False
    weights: str = IDENTITY_WEIGHTS
    min_pck: float | None = Field(default=None, ge=0, le=100)
    dump_graphs: bool = False
    workers: int = Field(default=1, ge=1, le=64)

    @model_validator(mode="after")
    def validate_paths(self) -> RunConfig:
        needs_out = {Subcommand.SYNTH, Subcommand.REFINE, Subcommand.DECODE, Subcommand.ROUNDTRIP}
        if self.subcommand in needs_out and self.out is None:
            raise ValueError(f"{self.subcommand.value} requires --out")
        if self.subcommand in {Subcommand.REFINE, Subcommand.DECODE} and self.in_dir is None:
            raise ValueError(f"{self.subcommand.value} requires --in")
        if self.subcommand is Subcommand.EVAL and (self.scene_path is None or self.poses_path is None):
            raise ValueError("eval requires --scene and --poses")
        return self

    def missing_inputs(self) -> list[Path]:
        candidates = [self.in_dir, self.scene_path, self.poses_path, self.skeleton_path]
        if self.weights != IDENTITY_WEIGHTS:
            candidates.append(Path(self.weights))
        return [path for path in candidates if path is not None and not path.exists()]
