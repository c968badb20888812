"""Core skeleton data types and file I/O.

A recorded performance is a :class:`Sequence` of :class:`Frame` objects, each
holding the 17 COCO keypoints in pixel coordinates with per-joint confidence.
Keypoint files are JSON produced upstream by a pose estimator; this module
validates them on load and writes them back losslessly (floats keep full
decimal precision, so ``load(save(x)) == x`` exactly).

Low-confidence joints are treated as occluded and skipped by downstream
geometry instead of being interpolated.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence as Seq, Tuple

import numpy as np

N_JOINTS = 17

# Below this confidence a joint is considered occluded and excluded from
# geometric computations.
DEFAULT_OCCLUSION_THRESHOLD = 0.05

CLASS_LABELS = ("groundtruth", "correct", "wrong")


class JointId(IntEnum):
    """The 17 COCO keypoints, integer codes 0-16 in standard COCO order."""

    NOSE = 0
    LEFT_EYE = 1
    RIGHT_EYE = 2
    LEFT_EAR = 3
    RIGHT_EAR = 4
    LEFT_SHOULDER = 5
    RIGHT_SHOULDER = 6
    LEFT_ELBOW = 7
    RIGHT_ELBOW = 8
    LEFT_WRIST = 9
    RIGHT_WRIST = 10
    LEFT_HIP = 11
    RIGHT_HIP = 12
    LEFT_KNEE = 13
    RIGHT_KNEE = 14
    LEFT_ANKLE = 15
    RIGHT_ANKLE = 16


JOINT_NAMES = tuple(j.name.lower() for j in JointId)
_NAME_TO_JOINT = {name: JointId(i) for i, name in enumerate(JOINT_NAMES)}


def joint_from_name(name: str) -> JointId:
    try:
        return _NAME_TO_JOINT[name.lower()]
    except KeyError:
        raise ValidationError(f"unknown joint name {name!r}") from None


class ValidationError(ValueError):
    """Malformed or inconsistent keypoint / annotation / report data."""


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Frame:
    """One video frame: 17 keypoints (pixels), confidences and a timestamp."""

    frame_id: str
    timestamp: float
    points: np.ndarray      # (17, 2) float64, read-only
    confidence: np.ndarray  # (17,) float64 in [0, 1], read-only

    def __post_init__(self):
        pts = _as_readonly(self.points)
        conf = _as_readonly(self.confidence)
        if pts.shape != (N_JOINTS, 2):
            raise ValidationError(
                f"frame {self.frame_id!r}: points must be (17, 2), got {pts.shape}"
            )
        if conf.shape != (N_JOINTS,):
            raise ValidationError(
                f"frame {self.frame_id!r}: confidence must be (17,), got {conf.shape}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValidationError(f"frame {self.frame_id!r}: non-finite coordinates")
        if not np.all(np.isfinite(conf)) or conf.min() < 0.0 or conf.max() > 1.0:
            raise ValidationError(f"frame {self.frame_id!r}: confidence outside [0, 1]")
        if not np.isfinite(self.timestamp) or self.timestamp < 0.0:
            raise ValidationError(f"frame {self.frame_id!r}: invalid timestamp")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)

    def occlusion_mask(self, threshold: float = DEFAULT_OCCLUSION_THRESHOLD) -> np.ndarray:
        """Boolean (17,) mask, True where the joint is considered occluded."""
        return self.confidence < threshold

    def __eq__(self, other) -> bool:
        if not isinstance(other, Frame):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.timestamp == other.timestamp
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.confidence, other.confidence)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class Sequence:
    """An ordered, timestamped keypoint sequence for one performance."""

    exercise_id: str
    class_label: str
    frames: Tuple[Frame, ...]
    fps_hint: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.class_label not in CLASS_LABELS:
            raise ValidationError(
                f"class must be one of {CLASS_LABELS}, got {self.class_label!r}"
            )
        if len(self.frames) < 2:
            raise ValidationError("a sequence needs at least 2 frames")
        ts = [f.timestamp for f in self.frames]
        for i in range(1, len(ts)):
            if ts[i] <= ts[i - 1]:
                raise ValidationError(
                    f"timestamps must be strictly increasing: frame {i} "
                    f"({self.frames[i].frame_id!r}) has t={ts[i]} after t={ts[i-1]}"
                )
        if self.fps_hint is not None and self.fps_hint <= 0:
            raise ValidationError("fps_hint must be positive")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([f.timestamp for f in self.frames])

    @property
    def duration(self) -> float:
        return self.frames[-1].timestamp - self.frames[0].timestamp

    def points_array(self) -> np.ndarray:
        """Stack all frame points into a (T, 17, 2) array."""
        return np.stack([f.points for f in self.frames])


@dataclass
class Annotation:
    """Per-exercise ground truth: targeted joints, angle ranges, mistakes."""

    exercise_id: str
    targeted_joints: Tuple[JointId, ...] = ()
    reference_angles: dict = field(default_factory=dict)   # JointId -> (min_deg, max_deg)
    rom_limits: dict = field(default_factory=dict)         # JointId -> (min_deg, max_deg)
    per_frame_mistakes: Tuple[Tuple[str, JointId, str], ...] = ()
    scores: Optional[Tuple[float, float, float]] = None    # (joint, pace, range) 0-100

    def __post_init__(self):
        self.targeted_joints = tuple(JointId(j) for j in self.targeted_joints)
        self.reference_angles = {JointId(j): (float(a), float(b))
                                 for j, (a, b) in self.reference_angles.items()}
        self.rom_limits = {JointId(j): (float(a), float(b))
                           for j, (a, b) in self.rom_limits.items()}
        for table_name, table in (("reference_angles", self.reference_angles),
                                  ("rom_limits", self.rom_limits)):
            for j, (lo, hi) in table.items():
                if lo > hi:
                    raise ValidationError(
                        f"{table_name}[{j.name.lower()}]: min {lo} > max {hi}"
                    )
        self.per_frame_mistakes = tuple(
            (str(fid), JointId(j), str(note)) for fid, j, note in self.per_frame_mistakes
        )
        if self.scores is not None:
            self.scores = tuple(float(s) for s in self.scores)  # type: ignore[assignment]
            if len(self.scores) != 3 or any(not (0.0 <= s <= 100.0) for s in self.scores):
                raise ValidationError("scores must be three values in [0, 100]")


# ---------------------------------------------------------------------------
# Atomic writing (no partial files on failure)
# ---------------------------------------------------------------------------

def write_text_atomic(path: os.PathLike | str, text: str) -> None:
    """Write text via a temp file + rename so readers never see partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_json_atomic(path: os.PathLike | str, obj) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=False) + "\n")


# ---------------------------------------------------------------------------
# Keypoint file I/O
#
# Schema (JSON, one object per sequence):
#   {"exercise_id": str, "class": str, "fps": float|null,
#    "frames": [{"id": str, "t": float, "keypoints": <kp>}, ...]}
# where <kp> is either a list of 17 [x, y, conf] rows in COCO order, or a
# mapping {joint_name: [x, y, conf]} in any order (reordered on load).
# "t" may be omitted when "fps" is given; it is synthesized as index / fps.
# ---------------------------------------------------------------------------

def _parse_keypoints(kp, frame_idx: int) -> Tuple[np.ndarray, np.ndarray]:
    points = np.zeros((N_JOINTS, 2))
    conf = np.zeros(N_JOINTS)
    if isinstance(kp, Mapping):
        seen = set()
        for name, row in kp.items():
            j = joint_from_name(name)
            if j in seen:
                raise ValidationError(f"frame {frame_idx}: duplicate joint {name!r}")
            seen.add(j)
            if not isinstance(row, (list, tuple)) or len(row) != 3:
                raise ValidationError(
                    f"frame {frame_idx}: keypoint {name!r} must be [x, y, conf]"
                )
            points[j] = (float(row[0]), float(row[1]))
            conf[j] = float(row[2])
        missing = [n for n in JOINT_NAMES if _NAME_TO_JOINT[n] not in seen]
        if missing:
            raise ValidationError(
                f"frame {frame_idx}: missing joint(s) {', '.join(missing)}"
            )
    elif isinstance(kp, (list, tuple)):
        if len(kp) != N_JOINTS:
            raise ValidationError(
                f"frame {frame_idx}: expected 17 keypoints, got {len(kp)}"
            )
        for j, row in enumerate(kp):
            if not isinstance(row, (list, tuple)) or len(row) != 3:
                raise ValidationError(
                    f"frame {frame_idx}: keypoint {j} must be [x, y, conf]"
                )
            points[j] = (float(row[0]), float(row[1]))
            conf[j] = float(row[2])
    else:
        raise ValidationError(f"frame {frame_idx}: keypoints must be a list or mapping")
    return points, conf


def load_sequence(path: os.PathLike | str) -> Sequence:
    """Load and validate a keypoint file.

    Raises :class:`ValidationError` with the offending frame index on
    malformed input, missing joints or non-monotone timestamps.
    """
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, Mapping):
        raise ValidationError(f"{path}: top level must be an object")
    for key in ("exercise_id", "class", "frames"):
        if key not in doc:
            raise ValidationError(f"{path}: missing required key {key!r}")
    fps = doc.get("fps")
    if fps is not None:
        fps = float(fps)
    frames = []
    raw_frames = doc["frames"]
    if not isinstance(raw_frames, list):
        raise ValidationError(f"{path}: 'frames' must be a list")
    for i, rf in enumerate(raw_frames):
        if not isinstance(rf, Mapping) or "keypoints" not in rf:
            raise ValidationError(f"frame {i}: must be an object with 'keypoints'")
        points, conf = _parse_keypoints(rf["keypoints"], i)
        if "t" in rf and rf["t"] is not None:
            t = float(rf["t"])
        elif fps:
            t = i / fps
        else:
            raise ValidationError(
                f"frame {i}: no timestamp and no fps to synthesize one from"
            )
        frame_id = str(rf.get("id", f"f{i:04d}"))
        frames.append(Frame(frame_id=frame_id, timestamp=t, points=points, confidence=conf))
    # Re-check monotonicity here to report the frame index before Sequence
    # construction aggregates the error.
    for i in range(1, len(frames)):
        if frames[i].timestamp <= frames[i - 1].timestamp:
            raise ValidationError(
                f"frame {i}: timestamp {frames[i].timestamp} is not greater "
                f"than previous {frames[i - 1].timestamp}"
            )
    return Sequence(
        exercise_id=str(doc["exercise_id"]),
        class_label=str(doc["class"]),
        frames=tuple(frames),
        fps_hint=fps,
    )


def sequence_to_dict(seq: Sequence) -> dict:
    return {
        "exercise_id": seq.exercise_id,
        "class": seq.class_label,
        "fps": seq.fps_hint,
        "frames": [
            {
                "id": f.frame_id,
                "t": f.timestamp,
                "keypoints": [
                    [float(f.points[j, 0]), float(f.points[j, 1]), float(f.confidence[j])]
                    for j in range(N_JOINTS)
                ],
            }
            for f in seq.frames
        ],
    }


def save_sequence(seq: Sequence, path: os.PathLike | str) -> None:
    """Write a keypoint file; ``load_sequence(save_sequence(s)) == s`` exactly."""
    write_json_atomic(path, sequence_to_dict(seq))


# ---------------------------------------------------------------------------
# Annotation file I/O (JSON mirroring the Annotation type)
# ---------------------------------------------------------------------------

def annotation_to_dict(ann: Annotation) -> dict:
    return {
        "exercise_id": ann.exercise_id,
        "targeted_joints": [j.name.lower() for j in ann.targeted_joints],
        "reference_angles": {j.name.lower(): [lo, hi]
                             for j, (lo, hi) in ann.reference_angles.items()},
        "rom_limits": {j.name.lower(): [lo, hi]
                       for j, (lo, hi) in ann.rom_limits.items()},
        "per_frame_mistakes": [
            {"frame_id": fid, "joint": j.name.lower(), "note": note}
            for fid, j, note in ann.per_frame_mistakes
        ],
        "scores": None if ann.scores is None else
                  {"joint": ann.scores[0], "pace": ann.scores[1], "range": ann.scores[2]},
    }


def save_annotation(ann: Annotation, path: os.PathLike | str) -> None:
    write_json_atomic(path, annotation_to_dict(ann))


def load_annotation(path: os.PathLike | str) -> Annotation:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(doc, Mapping) or "exercise_id" not in doc:
        raise ValidationError(f"{path}: not an annotation file")
    scores = doc.get("scores")
    if scores is not None:
        scores = (float(scores["joint"]), float(scores["pace"]), float(scores["range"]))
    return Annotation(
        exercise_id=str(doc["exercise_id"]),
        targeted_joints=tuple(joint_from_name(n) for n in doc.get("targeted_joints", [])),
        reference_angles={joint_from_name(n): (v[0], v[1])
                          for n, v in doc.get("reference_angles", {}).items()},
        rom_limits={joint_from_name(n): (v[0], v[1])
                    for n, v in doc.get("rom_limits", {}).items()},
        per_frame_mistakes=tuple(
            (m["frame_id"], joint_from_name(m["joint"]), m.get("note", ""))
            for m in doc.get("per_frame_mistakes", [])
        ),
        scores=scores,
    )
