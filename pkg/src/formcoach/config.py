"""Per-exercise configuration: targeted joints, angle tables, phase and
scoring parameters, and the correction rule table.

Everything the assessment pipeline treats as exercise knowledge lives here so
tests (and users) can pin every constant.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

from .kinematics import DEFAULT_KEY_JOINT_THRESHOLD_DEG
from .alignment import DEFAULT_MIN_ECCENTRIC_RATIO
from .skeleton import (DEFAULT_OCCLUSION_THRESHOLD, JointId, ValidationError,
                       joint_from_name, write_json_atomic)

BODY_CLASSES = ("Upper", "Lower", "Both")

# Threshold on per-joint deviation above which a local maximum becomes a
# mistake flag.
DEFAULT_MISTAKE_THRESHOLD = 0.25

# Anatomical ROM defaults (configuration values, not claims); override per
# exercise.
DEFAULT_ROM_LIMITS: Dict[JointId, Tuple[float, float]] = {
    JointId.LEFT_KNEE: (0.0, 160.0),
    JointId.RIGHT_KNEE: (0.0, 160.0),
    JointId.LEFT_ELBOW: (0.0, 160.0),
    JointId.RIGHT_ELBOW: (0.0, 160.0),
    JointId.LEFT_HIP: (0.0, 130.0),
    JointId.RIGHT_HIP: (0.0, 130.0),
}


@dataclass(frozen=True)
class PhaseConfig:
    """How to segment the repetition and judge its tempo."""

    primary_joint: JointId
    eccentric_direction: str = "decreasing"   # "decreasing" | "increasing"
    min_ratio: float = DEFAULT_MIN_ECCENTRIC_RATIO

    def __post_init__(self):
        object.__setattr__(self, "primary_joint", JointId(self.primary_joint))
        if self.eccentric_direction not in ("decreasing", "increasing"):
            raise ValidationError(
                f"eccentric_direction must be decreasing/increasing, "
                f"got {self.eccentric_direction!r}"
            )
        if self.min_ratio <= 0:
            raise ValidationError("min_ratio must be positive")


@dataclass(frozen=True)
class CorrectionRule:
    """Maps a (joint, deviation pattern) to a coaching message.

    Predicate fields are optional; all provided ones must hold. ``phase``
    restricts the rule to flags raised inside that phase.
    """

    joint: JointId
    message: str
    angle_above: Optional[float] = None
    angle_below: Optional[float] = None
    deviation_above: Optional[float] = None
    phase: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "joint", JointId(self.joint))

    def matches(self, joint: JointId, deviation: float,
                angle: Optional[float], phase: str) -> bool:
        if joint != self.joint:
            return False
        if self.phase is not None and phase != self.phase:
            return False
        if self.deviation_above is not None and not deviation > self.deviation_above:
            return False
        if self.angle_above is not None:
            if angle is None or not angle > self.angle_above:
                return False
        if self.angle_below is not None:
            if angle is None or not angle < self.angle_below:
                return False
        return True


@dataclass
class ExerciseConfig:
    """All per-exercise knowledge the pipeline consumes."""

    exercise_id: str
    body_class: str                                         # Upper | Lower | Both
    phase: PhaseConfig
    targeted_joints: Optional[Tuple[JointId, ...]] = None   # None -> auto-select
    reference_angles: Dict[JointId, Tuple[float, float]] = field(default_factory=dict)
    rom_limits: Dict[JointId, Tuple[float, float]] = field(default_factory=dict)
    key_joint_threshold_deg: float = DEFAULT_KEY_JOINT_THRESHOLD_DEG
    mistake_threshold: float = DEFAULT_MISTAKE_THRESHOLD
    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
    pace_ratio_weight: float = 0.5
    rules: Tuple[CorrectionRule, ...] = ()

    def __post_init__(self):
        if self.body_class not in BODY_CLASSES:
            raise ValidationError(
                f"class must be one of {BODY_CLASSES}, got {self.body_class!r}"
            )
        if self.targeted_joints is not None:
            self.targeted_joints = tuple(JointId(j) for j in self.targeted_joints)
        self.reference_angles = {JointId(j): (float(a), float(b))
                                 for j, (a, b) in self.reference_angles.items()}
        self.rom_limits = {JointId(j): (float(a), float(b))
                           for j, (a, b) in self.rom_limits.items()}
        for thr_name in ("key_joint_threshold_deg", "mistake_threshold",
                         "occlusion_threshold"):
            if getattr(self, thr_name) < 0:
                raise ValidationError(f"{thr_name} must be non-negative")
        if not 0.0 <= self.pace_ratio_weight <= 1.0:
            raise ValidationError("pace_ratio_weight must be in [0, 1]")
        self.rules = tuple(self.rules)


def _angles_to_json(table: Dict[JointId, Tuple[float, float]]) -> dict:
    return {j.name.lower(): [lo, hi] for j, (lo, hi) in table.items()}


def _angles_from_json(obj: dict) -> Dict[JointId, Tuple[float, float]]:
    return {joint_from_name(n): (float(v[0]), float(v[1])) for n, v in obj.items()}


def config_to_dict(cfg: ExerciseConfig) -> dict:
    return {
        "exercise_id": cfg.exercise_id,
        "class": cfg.body_class,
        "targeted_joints": None if cfg.targeted_joints is None else
                           [j.name.lower() for j in cfg.targeted_joints],
        "reference_angles": _angles_to_json(cfg.reference_angles),
        "rom_limits": _angles_to_json(cfg.rom_limits),
        "key_joint_threshold_deg": cfg.key_joint_threshold_deg,
        "mistake_threshold": cfg.mistake_threshold,
        "occlusion_threshold": cfg.occlusion_threshold,
        "pace_ratio_weight": cfg.pace_ratio_weight,
        "phase": {
            "primary_joint": cfg.phase.primary_joint.name.lower(),
            "eccentric_direction": cfg.phase.eccentric_direction,
            "min_ratio": cfg.phase.min_ratio,
        },
        "rules": [
            {
                "joint": r.joint.name.lower(),
                "message": r.message,
                "angle_above": r.angle_above,
                "angle_below": r.angle_below,
                "deviation_above": r.deviation_above,
                "phase": r.phase,
            }
            for r in cfg.rules
        ],
    }


def save_exercise_config(cfg: ExerciseConfig, path: os.PathLike | str) -> None:
    write_json_atomic(path, config_to_dict(cfg))


def load_exercise_config(path: os.PathLike | str) -> ExerciseConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, dict) or "exercise_id" not in doc or "phase" not in doc:
        raise ValidationError(f"{path}: not an exercise config file")
    ph = doc["phase"]
    targeted = doc.get("targeted_joints")
    return ExerciseConfig(
        exercise_id=str(doc["exercise_id"]),
        body_class=str(doc.get("class", "Both")),
        phase=PhaseConfig(
            primary_joint=joint_from_name(ph["primary_joint"]),
            eccentric_direction=ph.get("eccentric_direction", "decreasing"),
            min_ratio=float(ph.get("min_ratio", DEFAULT_MIN_ECCENTRIC_RATIO)),
        ),
        targeted_joints=None if targeted is None else
                        tuple(joint_from_name(n) for n in targeted),
        reference_angles=_angles_from_json(doc.get("reference_angles", {})),
        rom_limits=_angles_from_json(doc.get("rom_limits", {})),
        key_joint_threshold_deg=float(doc.get("key_joint_threshold_deg",
                                              DEFAULT_KEY_JOINT_THRESHOLD_DEG)),
        mistake_threshold=float(doc.get("mistake_threshold", DEFAULT_MISTAKE_THRESHOLD)),
        occlusion_threshold=float(doc.get("occlusion_threshold",
                                          DEFAULT_OCCLUSION_THRESHOLD)),
        pace_ratio_weight=float(doc.get("pace_ratio_weight", 0.5)),
        rules=tuple(
            CorrectionRule(
                joint=joint_from_name(r["joint"]),
                message=str(r["message"]),
                angle_above=r.get("angle_above"),
                angle_below=r.get("angle_below"),
                deviation_above=r.get("deviation_above"),
                phase=r.get("phase"),
            )
            for r in doc.get("rules", [])
        ),
    )
