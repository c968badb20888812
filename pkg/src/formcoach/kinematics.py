"""Joint angles, direction-vector descriptors and key-joint selection.

The per-frame descriptor is the set of unit direction vectors between every
ordered pair of targeted joints (N*(N-1) vectors for N joints). Comparing two
frames reduces to the mean cosine similarity over corresponding vectors.

Interior angles use a fixed bone topology: each angle-bearing joint has two
neighbors (elbow: shoulder/wrist, knee: hip/ankle, shoulder: elbow/same-side
hip, hip: same-side shoulder/knee). Angles are degrees in [0, 180] and are
invariant under similarity transforms of the input.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence as Seq, Tuple

import numpy as np

from .normalize import CanonicalSkeleton, normalize_global
from .skeleton import DEFAULT_OCCLUSION_THRESHOLD, Frame, JointId, Sequence

logger = logging.getLogger(__name__)

# Joint -> (neighbor_a, neighbor_b); the interior angle at the joint is the
# angle between the two bones joint->neighbor.
ANGLE_NEIGHBORS: Dict[JointId, Tuple[JointId, JointId]] = {
    JointId.LEFT_ELBOW: (JointId.LEFT_SHOULDER, JointId.LEFT_WRIST),
    JointId.RIGHT_ELBOW: (JointId.RIGHT_SHOULDER, JointId.RIGHT_WRIST),
    JointId.LEFT_KNEE: (JointId.LEFT_HIP, JointId.LEFT_ANKLE),
    JointId.RIGHT_KNEE: (JointId.RIGHT_HIP, JointId.RIGHT_ANKLE),
    JointId.LEFT_SHOULDER: (JointId.LEFT_ELBOW, JointId.LEFT_HIP),
    JointId.RIGHT_SHOULDER: (JointId.RIGHT_ELBOW, JointId.RIGHT_HIP),
    JointId.LEFT_HIP: (JointId.LEFT_SHOULDER, JointId.LEFT_KNEE),
    JointId.RIGHT_HIP: (JointId.RIGHT_SHOULDER, JointId.RIGHT_KNEE),
}

ANGLE_JOINTS = tuple(ANGLE_NEIGHBORS)

# Default key-joint selection threshold: below typical estimator noise
# accumulated over a repetition.
DEFAULT_KEY_JOINT_THRESHOLD_DEG = 15.0

# Two joints closer than this (in the coordinate units of the skeleton) do
# not define a direction.
COINCIDENT_EPS = 1e-9


class UndefinedAngleError(ValueError):
    """The joint has no interior angle in the bone topology."""


class DescriptorError(ValueError):
    """Joint-vector descriptor could not be built or compared."""


def angle_at(points: np.ndarray, joint: JointId,
             occluded: np.ndarray | None = None) -> float:
    """Interior angle (degrees) at ``joint`` for a (17, 2) point array."""
    joint = JointId(joint)
    if joint not in ANGLE_NEIGHBORS:
        raise UndefinedAngleError(f"{joint.name.lower()} has no interior angle")
    a, b = ANGLE_NEIGHBORS[joint]
    if occluded is not None and (occluded[joint] or occluded[a] or occluded[b]):
        from .normalize import OccludedJointError
        raise OccludedJointError(
            f"angle at {joint.name.lower()} needs {a.name.lower()} and "
            f"{b.name.lower()} visible"
        )
    va = points[a] - points[joint]
    vb = points[b] - points[joint]
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na < COINCIDENT_EPS or nb < COINCIDENT_EPS:
        raise UndefinedAngleError(
            f"degenerate bone at {joint.name.lower()} (zero length)"
        )
    cos = float(np.dot(va, vb) / (na * nb))
    return math.degrees(math.acos(max(-1.0, min(1.0, cos))))


def joint_angle(skel: CanonicalSkeleton, joint: JointId) -> float:
    """Interior angle (degrees in [0, 180]) at a joint of a canonical skeleton."""
    return angle_at(skel.points, joint, skel.occluded)


@dataclass(frozen=True)
class JointVectorField:
    """Unit direction vectors between ordered pairs of targeted joints.

    ``lengths`` keeps the pre-normalization segment lengths; short segments
    have ill-conditioned directions and downstream consumers may weight by
    them.
    """

    frame_id: str
    targeted: Tuple[JointId, ...]                    # as requested (sorted)
    pairs: Tuple[Tuple[JointId, JointId], ...]       # pairs actually present
    vectors: np.ndarray                              # (len(pairs), 2), unit
    lengths: np.ndarray = None                       # (len(pairs),)
    skipped: Tuple[Tuple[JointId, JointId], ...] = ()  # degenerate pairs

    def __post_init__(self):
        vec = np.array(self.vectors, dtype=np.float64)
        vec = vec.reshape(len(self.pairs), 2)
        vec.flags.writeable = False
        object.__setattr__(self, "vectors", vec)
        if self.lengths is None:
            lengths = np.ones(len(self.pairs))
        else:
            lengths = np.array(self.lengths, dtype=np.float64).reshape(len(self.pairs))
        lengths.flags.writeable = False
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "targeted", tuple(sorted(JointId(j) for j in self.targeted)))
        object.__setattr__(self, "pairs",
                           tuple((JointId(a), JointId(b)) for a, b in self.pairs))

    def vector_map(self) -> Dict[Tuple[JointId, JointId], np.ndarray]:
        return {p: self.vectors[i] for i, p in enumerate(self.pairs)}

    def length_map(self) -> Dict[Tuple[JointId, JointId], float]:
        return {p: float(self.lengths[i]) for i, p in enumerate(self.pairs)}


def joint_vectors(skel: CanonicalSkeleton, targeted: Iterable[JointId],
                  frame_id: str = "") -> JointVectorField:
    """Build the N*(N-1) ordered-pair direction descriptor for one frame.

    Occluded targeted joints are dropped (reducing N) and coincident pairs
    are skipped; both are reported, the former via a log warning.
    """
    requested = tuple(sorted({JointId(j) for j in targeted}))
    if len(requested) < 2:
        raise DescriptorError("need at least 2 targeted joints")
    usable = [j for j in requested if not skel.occluded[j]]
    dropped = [j for j in requested if skel.occluded[j]]
    if dropped:
        logger.warning("frame %s: dropping occluded targeted joints: %s",
                       frame_id, ", ".join(j.name.lower() for j in dropped))
    if len(usable) < 2:
        raise DescriptorError("fewer than 2 usable targeted joints")
    pairs: List[Tuple[JointId, JointId]] = []
    vecs: List[np.ndarray] = []
    lengths: List[float] = []
    skipped: List[Tuple[JointId, JointId]] = []
    for a in usable:
        for b in usable:
            if a == b:
                continue
            v = skel.points[b] - skel.points[a]
            n = np.linalg.norm(v)
            if n < COINCIDENT_EPS:
                skipped.append((a, b))
                continue
            pairs.append((a, b))
            vecs.append(v / n)
            lengths.append(float(n))
    if not pairs:
        raise DescriptorError("all targeted joint pairs are degenerate")
    return JointVectorField(
        frame_id=frame_id,
        targeted=requested,
        pairs=tuple(pairs),
        vectors=np.array(vecs),
        lengths=np.array(lengths),
        skipped=tuple(skipped),
    )


def frame_cosine(a: JointVectorField, b: JointVectorField) -> float:
    """Mean cosine similarity over corresponding direction vectors, in [-1, 1].

    Both fields must target the same joint set; pairs skipped as degenerate
    on either side are excluded from the mean.
    """
    if a.targeted != b.targeted:
        raise DescriptorError(
            f"mismatched targeted joints: {a.targeted} vs {b.targeted}"
        )
    if a.pairs == b.pairs:
        dots = np.einsum("ij,ij->i", a.vectors, b.vectors)
    else:
        bm = b.vector_map()
        common = [i for i, p in enumerate(a.pairs) if p in bm]
        if not common:
            raise DescriptorError("no common usable joint pairs")
        dots = np.array([float(a.vectors[i] @ bm[a.pairs[i]]) for i in common])
    return float(np.clip(dots, -1.0, 1.0).mean())


def select_key_joints(seq: Sequence,
                      threshold_deg: float = DEFAULT_KEY_JOINT_THRESHOLD_DEG,
                      occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
                      ) -> List[JointId]:
    """Joints whose interior angle deviates >= threshold between the first
    and last frame, sorted by descending deviation."""
    first = normalize_global(seq.frames[0], occlusion_threshold)
    last = normalize_global(seq.frames[-1], occlusion_threshold)
    deviations = []
    for j in ANGLE_JOINTS:
        try:
            d = abs(joint_angle(last, j) - joint_angle(first, j))
        except ValueError:
            continue
        deviations.append((d, j))
    if not deviations:
        raise DescriptorError("no joint angle computable in first/last frame")
    deviations.sort(key=lambda t: (-t[0], t[1]))
    return [j for d, j in deviations if d >= threshold_deg]


def rom_check(seq: Sequence,
              limits: Mapping[JointId, Tuple[float, float]],
              occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
              ) -> List[Tuple[str, JointId, float]]:
    """Flag every (frame, joint) whose interior angle leaves its ROM interval.

    Occluded joints are skipped. An empty result means every checked angle
    stayed inside its limits.
    """
    flagged = []
    for frame in seq.frames:
        occ = frame.occlusion_mask(occlusion_threshold)
        for j, (lo, hi) in limits.items():
            j = JointId(j)
            try:
                ang = angle_at(frame.points, j, occ)
            except ValueError:
                continue
            if ang < lo or ang > hi:
                flagged.append((frame.frame_id, j, ang))
    return flagged
