"""Rule-based scoring: joint alignment, pace, range of motion, mistake flags
and textual corrections, assembled into a serializable report.

Score definitions (identity scores 100; each column depends on one criterion):

* joint: ``100 * mean over aligned frame pairs and vector pairs of
  (cos_sim + 1) / 2`` over the targeted-joint direction descriptors.
* pace: ``100 * (w * max(0, 1 - |log2(duration_ratio)|) + (1 - w) *
  (1 - warp_deviation))`` with ``w = 0.5`` by default.
* range: ``100 * mean over targeted joints of clamp(achieved / reference, 0, 1)``
  where a joint's achieved range is the max-min span of its interior angle
  over the repetition. Not applicable (serialized "/") when the exercise
  config provides no reference ranges.

Mistake localization uses per-joint deviations in [0, 1]: for angle-bearing
joints the normalized interior-angle difference ``|a_cand - a_ref| / 180``
against the aligned reference frame, otherwise the mean direction-vector
dissimilarity ``(1 - cos) / 2`` of the joint's outgoing descriptor vectors.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence as Seq, Tuple

import numpy as np

from .alignment import PaceProfile, WarpPath, dtw_align, pace_profile
from .config import CorrectionRule, ExerciseConfig
from .kinematics import (ANGLE_NEIGHBORS, JointVectorField, joint_angle,
                         joint_vectors, select_key_joints)
from .normalize import CanonicalSkeleton, normalize_global
from .skeleton import (Annotation, JointId, Sequence, ValidationError,
                       joint_from_name, write_json_atomic)

RANGE_NOT_APPLICABLE = "/"

_CLASS_TAGS = {"groundtruth": "GT", "correct": "C", "wrong": "W"}


@dataclass(frozen=True)
class FrameDeviation:
    """Per-joint deviation of one aligned candidate frame."""

    frame_index: int
    frame_id: str
    deviations: Dict[JointId, float]
    transform: Optional[Tuple[float, float, float, float, float, float]] = None


@dataclass(frozen=True)
class MistakeFlag:
    """A localized mistake: a deviation peak for one joint in one phase."""

    frame_index: int
    frame_id: str
    joint: JointId
    deviation: float
    phase: str = "full"


@dataclass(frozen=True)
class Correction:
    text: str
    joint: JointId
    frame_ids: Tuple[str, ...]

    def __post_init__(self):
        if not self.frame_ids:
            raise ValidationError("a correction must cite at least one key frame")
        object.__setattr__(self, "frame_ids", tuple(self.frame_ids))
        object.__setattr__(self, "joint", JointId(self.joint))


@dataclass
class AssessmentReport:
    """One report row (plus per-frame detail): the serialized output."""

    name: str
    body_class: str
    joint_score: float
    pace_score: float
    range_score: Optional[float]        # None = not applicable
    corrections: Tuple[Correction, ...] = ()
    frame_detail: Tuple[FrameDeviation, ...] = ()
    aux_scores: Optional[Dict[str, float]] = None

    def __post_init__(self):
        for label, value in (("joint", self.joint_score), ("pace", self.pace_score)):
            if not 0.0 <= value <= 100.0:
                raise ValidationError(f"{label} score {value} outside [0, 100]")
        if self.range_score is not None and not 0.0 <= self.range_score <= 100.0:
            raise ValidationError(f"range score {self.range_score} outside [0, 100]")
        self.corrections = tuple(self.corrections)
        self.frame_detail = tuple(self.frame_detail)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

def _global_skeletons(seq: Sequence, occlusion_threshold: float):
    return [normalize_global(f, occlusion_threshold) for f in seq.frames]


def _descriptor_fields(skels, frames, targeted):
    return [joint_vectors(s, targeted, f.frame_id) for s, f in zip(skels, frames)]


def _score_from_fields(cand_fields: Seq[JointVectorField],
                       ref_fields: Seq[JointVectorField],
                       path: WarpPath) -> float:
    total = 0.0
    count = 0
    for i, j in path.pairs:
        fc, fr = cand_fields[i], ref_fields[j]
        if fc.pairs == fr.pairs:
            dots = np.einsum("ij,ij->i", fc.vectors, fr.vectors)
        else:
            rm = fr.vector_map()
            dots = np.array([float(fc.vectors[k] @ rm[p])
                             for k, p in enumerate(fc.pairs) if p in rm])
        dots = np.clip(dots, -1.0, 1.0)
        total += float(((dots + 1.0) * 0.5).sum())
        count += dots.size
    if count == 0:
        raise ValidationError("no usable targeted joint pairs to score")
    return 100.0 * total / count


def joint_score(cand: Sequence, ref: Sequence, targeted: Seq[JointId],
                path: WarpPath, occlusion_threshold: float = 0.05) -> float:
    """Joint-alignment score in [0, 100] over an existing warp path."""
    cs = _global_skeletons(cand, occlusion_threshold)
    rs = _global_skeletons(ref, occlusion_threshold)
    return _score_from_fields(_descriptor_fields(cs, cand.frames, targeted),
                              _descriptor_fields(rs, ref.frames, targeted),
                              path)


def pace_score(profile: PaceProfile, ratio_weight: float = 0.5) -> float:
    """Pace score in [0, 100] from duration ratio and warp deviation."""
    ratio_term = max(0.0, 1.0 - abs(math.log2(profile.duration_ratio)))
    shape_term = 1.0 - profile.warp_deviation
    return 100.0 * (ratio_weight * ratio_term + (1.0 - ratio_weight) * shape_term)


def range_score(cand: Sequence, annotation: Annotation,
                occlusion_threshold: float = 0.05) -> Optional[float]:
    """Range-of-motion score, or None when no reference ranges are configured."""
    from .kinematics import angle_at

    joints = [j for j in annotation.targeted_joints
              if j in annotation.reference_angles and j in ANGLE_NEIGHBORS]
    if not joints:
        return None
    ratios = []
    for j in joints:
        angles = []
        for frame in cand.frames:
            occ = frame.occlusion_mask(occlusion_threshold)
            try:
                angles.append(angle_at(frame.points, j, occ))
            except ValueError:
                continue
        if len(angles) < 2:
            continue
        lo, hi = annotation.reference_angles[j]
        ref_span = hi - lo
        achieved = max(angles) - min(angles)
        ratios.append(1.0 if ref_span <= 0 else min(1.0, max(0.0, achieved / ref_span)))
    if not ratios:
        return None
    return 100.0 * float(np.mean(ratios))


# ---------------------------------------------------------------------------
# Frame detail and mistake flags
# ---------------------------------------------------------------------------

def frame_deviations(cand_skels: Seq[CanonicalSkeleton],
                     ref_skels: Seq[CanonicalSkeleton],
                     cand_fields: Seq[JointVectorField],
                     ref_fields: Seq[JointVectorField],
                     targeted: Seq[JointId],
                     path: WarpPath,
                     frame_ids: Seq[str]) -> Tuple[FrameDeviation, ...]:
    """Per-candidate-frame, per-targeted-joint deviations in [0, 1].

    When several path pairs touch one candidate frame, deviations are averaged.
    """
    targeted = sorted(JointId(j) for j in targeted)
    sums: Dict[int, Dict[JointId, List[float]]] = {}
    ref_maps = [f.vector_map() for f in ref_fields]
    ref_lens = [f.length_map() for f in ref_fields]
    cand_maps = [f.vector_map() for f in cand_fields]
    for i, j in path.pairs:
        per_joint = sums.setdefault(i, {})
        for joint in targeted:
            dev = _joint_deviation(cand_skels[i], ref_skels[j], cand_maps[i],
                                   ref_maps[j], ref_lens[j], joint)
            if dev is not None:
                per_joint.setdefault(joint, []).append(dev)
    detail = []
    for i in sorted(sums):
        devs = {j: float(np.mean(vals)) for j, vals in sorted(sums[i].items())}
        detail.append(FrameDeviation(
            frame_index=i,
            frame_id=frame_ids[i],
            deviations=devs,
            transform=cand_skels[i].transform.as_tuple(),
        ))
    return tuple(detail)


def _joint_deviation(cs: CanonicalSkeleton, rs: CanonicalSkeleton,
                     cand_map, ref_map, ref_len, joint: JointId
                     ) -> Optional[float]:
    if joint in ANGLE_NEIGHBORS:
        try:
            return abs(joint_angle(cs, joint) - joint_angle(rs, joint)) / 180.0
        except ValueError:
            pass
    # Directions of short segments are ill-conditioned, so weight each
    # outgoing pair by its reference segment length.
    dots, weights = [], []
    for p, v in cand_map.items():
        if p[0] != joint or p not in ref_map:
            continue
        dots.append(float(np.dot(v, ref_map[p])))
        weights.append(ref_len[p])
    if not dots or sum(weights) <= 0.0:
        return None
    dots = np.clip(np.array(dots), -1.0, 1.0)
    return float(np.average((1.0 - dots) * 0.5, weights=np.array(weights)))


def flag_mistakes(frame_detail: Seq[FrameDeviation],
                  threshold: float = 0.25,
                  phases: Optional[Seq[Tuple[str, Tuple[int, int]]]] = None
                  ) -> List[MistakeFlag]:
    """Local deviation maxima above threshold, at most one per joint per phase.

    ``phases`` is a list of (name, (start_index, end_index)) candidate frame
    ranges; defaults to a single phase spanning everything.
    """
    if not frame_detail:
        return []
    detail = sorted(frame_detail, key=lambda d: d.frame_index)
    if phases is None:
        phases = [("full", (detail[0].frame_index, detail[-1].frame_index))]
    joints = sorted({j for d in detail for j in d.deviations})
    flags: List[MistakeFlag] = []
    for joint in joints:
        series = [(d.frame_index, d.frame_id, d.deviations.get(joint))
                  for d in detail if d.deviations.get(joint) is not None]
        values = [v for _, _, v in series]
        for name, (lo, hi) in phases:
            best = None
            for k, (idx, fid, v) in enumerate(series):
                if not (lo <= idx <= hi) or v <= threshold:
                    continue
                left_ok = k == 0 or values[k - 1] <= v
                right_ok = k == len(values) - 1 or values[k + 1] <= v
                if left_ok and right_ok and (best is None or v > best.deviation):
                    best = MistakeFlag(frame_index=idx, frame_id=fid, joint=joint,
                                       deviation=v, phase=name)
            if best is not None:
                flags.append(best)
    flags.sort(key=lambda f: (f.frame_index, f.joint))
    return flags


def textual_feedback(flags: Seq[MistakeFlag],
                     rules: Seq[CorrectionRule],
                     angles: Optional[Mapping[Tuple[int, JointId], float]] = None
                     ) -> List[Correction]:
    """Deterministic correction texts for a set of flags.

    The first matching rule wins; a flag with no rule yields a generic
    message naming the joint. Flags sharing (joint, message) are merged into
    one correction citing all their key frames.
    """
    angles = angles or {}
    grouped: Dict[Tuple[JointId, str], List[str]] = {}
    for flag in flags:
        angle = angles.get((flag.frame_index, flag.joint))
        message = None
        for rule in rules:
            if rule.matches(flag.joint, flag.deviation, angle, flag.phase):
                message = rule.message
                break
        if message is None:
            message = f"adjust {flag.joint.name.lower()} toward reference"
        grouped.setdefault((flag.joint, message), []).append(flag.frame_id)
    return [Correction(text=message, joint=joint, frame_ids=tuple(fids))
            for (joint, message), fids in grouped.items()]


# ---------------------------------------------------------------------------
# Pipeline orchestration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AssessmentResult:
    """Report plus the intermediates later stages (aids, CLI) need."""

    report: AssessmentReport
    targeted: Tuple[JointId, ...]
    path: WarpPath
    profile: PaceProfile
    flags: Tuple[MistakeFlag, ...]
    cand_skels: Tuple[CanonicalSkeleton, ...]
    ref_skels: Tuple[CanonicalSkeleton, ...]


def assess_pair(cand: Sequence, ref: Sequence,
                config: ExerciseConfig) -> AssessmentResult:
    """Run the full rule-based pipeline for one candidate/reference pair."""
    occl = config.occlusion_threshold
    cand_skels = _global_skeletons(cand, occl)
    ref_skels = _global_skeletons(ref, occl)

    if config.targeted_joints:
        targeted = tuple(sorted(config.targeted_joints))
    else:
        targeted = tuple(sorted(select_key_joints(
            ref, config.key_joint_threshold_deg, occl)))

    cand_fields = _descriptor_fields(cand_skels, cand.frames, targeted)
    ref_fields = _descriptor_fields(ref_skels, ref.frames, targeted)
    path = dtw_align(cand_fields, ref_fields)
    profile = pace_profile(cand, ref, path, config.phase.primary_joint,
                           config.phase.eccentric_direction,
                           occlusion_threshold=occl)

    jscore = _score_from_fields(cand_fields, ref_fields, path)
    pscore = pace_score(profile, config.pace_ratio_weight)
    annotation = Annotation(exercise_id=config.exercise_id,
                            targeted_joints=targeted,
                            reference_angles=dict(config.reference_angles))
    rscore = range_score(cand, annotation, occl)

    frame_ids = [f.frame_id for f in cand.frames]
    detail = frame_deviations(cand_skels, ref_skels, cand_fields, ref_fields,
                              targeted, path, frame_ids)
    phase_ranges = [(p.name, p.cand_range) for p in profile.phases]
    flags = flag_mistakes(detail, config.mistake_threshold, phase_ranges)

    angle_ctx: Dict[Tuple[int, JointId], float] = {}
    for flag in flags:
        try:
            angle_ctx[(flag.frame_index, flag.joint)] = joint_angle(
                cand_skels[flag.frame_index], flag.joint)
        except ValueError:
            pass
    corrections = textual_feedback(flags, config.rules, angle_ctx)

    tag = _CLASS_TAGS.get(cand.class_label, cand.class_label)
    report = AssessmentReport(
        name=f"{cand.exercise_id}({tag})",
        body_class=config.body_class,
        joint_score=jscore,
        pace_score=pscore,
        range_score=rscore,
        corrections=tuple(corrections),
        frame_detail=detail,
    )
    return AssessmentResult(report=report, targeted=targeted, path=path,
                            profile=profile, flags=tuple(flags),
                            cand_skels=tuple(cand_skels),
                            ref_skels=tuple(ref_skels))


# ---------------------------------------------------------------------------
# Report I/O (Table columns: name, class, joint, pace, range, correction)
# ---------------------------------------------------------------------------

def report_to_dict(report: AssessmentReport) -> dict:
    return {
        "name": report.name,
        "class": report.body_class,
        "joint": report.joint_score,
        "pace": report.pace_score,
        "range": RANGE_NOT_APPLICABLE if report.range_score is None
                 else report.range_score,
        "correction": "; ".join(c.text for c in report.corrections),
        "corrections": [
            {"text": c.text, "joint": c.joint.name.lower(), "frames": list(c.frame_ids)}
            for c in report.corrections
        ],
        "frame_detail": [
            {
                "frame_index": d.frame_index,
                "frame_id": d.frame_id,
                "deviations": {j.name.lower(): v for j, v in d.deviations.items()},
                "transform": None if d.transform is None else list(d.transform),
            }
            for d in report.frame_detail
        ],
        "aux_scores": report.aux_scores,
    }


def save_report(report: AssessmentReport, path: os.PathLike | str) -> None:
    """Serialize a report; ``load_report(save_report(r)) == r``."""
    write_json_atomic(path, report_to_dict(report))


def load_report(path: os.PathLike | str) -> AssessmentReport:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"{path}: not valid JSON ({e})") from e
    required = ("name", "class", "joint", "pace", "range", "correction")
    for key in required:
        if key not in doc:
            raise ValidationError(f"{path}: report missing column {key!r}")
    rng = doc["range"]
    return AssessmentReport(
        name=doc["name"],
        body_class=doc["class"],
        joint_score=float(doc["joint"]),
        pace_score=float(doc["pace"]),
        range_score=None if rng == RANGE_NOT_APPLICABLE else float(rng),
        corrections=tuple(
            Correction(text=c["text"], joint=joint_from_name(c["joint"]),
                       frame_ids=tuple(c["frames"]))
            for c in doc.get("corrections", [])
        ),
        frame_detail=tuple(
            FrameDeviation(
                frame_index=int(d["frame_index"]),
                frame_id=d["frame_id"],
                deviations={joint_from_name(n): float(v)
                            for n, v in d["deviations"].items()},
                transform=None if d.get("transform") is None
                          else tuple(float(x) for x in d["transform"]),
            )
            for d in doc.get("frame_detail", [])
        ),
        aux_scores=doc.get("aux_scores"),
    )
