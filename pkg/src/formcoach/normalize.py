"""Skeleton normalization into a canonical comparison space.

Global normalization rotates the torso upright (+y), scales to unit torso
length and moves the body center to the origin; local normalization keeps the
same rotation and scale but anchors a chosen root joint at the origin so limb
positions are comparable across recordings.

The per-frame transform is an invertible similarity map

    canonical = s * R(theta) @ (pixel - center) + d

Image y points down, canonical y points up; the rotation maps the
hip-midpoint -> shoulder-midpoint vector onto +y directly, which absorbs the
axis flip. The body center is the intersection of the diagonals of the
bounding box computed in the torso-aligned (rotated) frame over non-occluded
joints: computing the box after rotation is what makes the result exactly
invariant under similarity transforms of the input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .skeleton import DEFAULT_OCCLUSION_THRESHOLD, Frame, JointId, N_JOINTS

# Minimum usable torso length in pixels.
TORSO_EPS = 1e-6
# Tolerance for geometric assertions (headroom over rounding of a few
# composed 64-bit transforms).
GEOM_TOL = 1e-9


class DegenerateSkeletonError(ValueError):
    """Frame unusable for normalization (collapsed torso or too few joints)."""


class OccludedJointError(ValueError):
    """A joint required by the operation is occluded."""


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    theta = math.fmod(theta, 2.0 * math.pi)
    if theta <= -math.pi:
        theta += 2.0 * math.pi
    elif theta > math.pi:
        theta -= 2.0 * math.pi
    return theta


@dataclass(frozen=True)
class NormalizationTransform:
    """Similarity map from pixel space to canonical space.

    ``apply(p) = scale * R(theta) @ (p - center) + translation``.
    """

    theta: float                        # radians in (-pi, pi]
    scale: float                        # 1 / torso length in pixels
    center: Tuple[float, float]         # pixels
    translation: Tuple[float, float] = (0.0, 0.0)  # canonical units

    def __post_init__(self):
        if not (self.scale > 0.0) or not math.isfinite(self.scale):
            raise ValueError(f"scale must be positive and finite, got {self.scale}")
        object.__setattr__(self, "theta", _wrap_angle(float(self.theta)))
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        object.__setattr__(
            self, "translation", (float(self.translation[0]), float(self.translation[1]))
        )

    @staticmethod
    def identity() -> "NormalizationTransform":
        return NormalizationTransform(theta=0.0, scale=1.0, center=(0.0, 0.0))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map pixel points (.., 2) into canonical space."""
        pts = np.asarray(points, dtype=np.float64)
        out = (pts - np.array(self.center)) @ _rot(self.theta).T * self.scale
        return out + np.array(self.translation)

    def invert(self, points: np.ndarray) -> np.ndarray:
        """Map canonical points (.., 2) back to pixels."""
        pts = np.asarray(points, dtype=np.float64)
        out = (pts - np.array(self.translation)) / self.scale
        return out @ _rot(-self.theta).T + np.array(self.center)

    def matrix(self) -> np.ndarray:
        """The 3x3 homogeneous matrix equal to the factored transform chain."""
        M = (
            _translation_matrix(self.translation)
            @ _scale_matrix(self.scale)
            @ _rotation_matrix(self.theta)
            @ _translation_matrix((-self.center[0], -self.center[1]))
        )
        return M

    def as_tuple(self) -> Tuple[float, float, float, float, float, float]:
        """(theta, dx, dy, s, cx, cy) — the report serialization order."""
        return (self.theta, self.translation[0], self.translation[1],
                self.scale, self.center[0], self.center[1])


def _translation_matrix(d) -> np.ndarray:
    M = np.eye(3)
    M[0, 2], M[1, 2] = d[0], d[1]
    return M


def _rotation_matrix(theta: float) -> np.ndarray:
    M = np.eye(3)
    M[:2, :2] = _rot(theta)
    return M


def _scale_matrix(s: float) -> np.ndarray:
    M = np.eye(3)
    M[0, 0] = M[1, 1] = s
    return M


def invert(transform: NormalizationTransform, point) -> np.ndarray:
    """Map a canonical point back into pixel space (module-level convenience)."""
    return transform.invert(np.asarray(point, dtype=np.float64))


@dataclass(frozen=True)
class CanonicalSkeleton:
    """A frame's joints expressed in canonical space, with occlusion flags."""

    points: np.ndarray        # (17, 2) canonical units
    occluded: np.ndarray      # (17,) bool
    transform: NormalizationTransform

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64)
        occ = np.array(self.occluded, dtype=bool)
        if pts.shape != (N_JOINTS, 2) or occ.shape != (N_JOINTS,):
            raise ValueError("canonical skeleton must hold 17 joints")
        pts.flags.writeable = False
        occ.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "occluded", occ)


def _midpoints(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    shoulder_mid = 0.5 * (points[JointId.LEFT_SHOULDER] + points[JointId.RIGHT_SHOULDER])
    hip_mid = 0.5 * (points[JointId.LEFT_HIP] + points[JointId.RIGHT_HIP])
    return shoulder_mid, hip_mid


_TORSO_JOINTS = (JointId.LEFT_SHOULDER, JointId.RIGHT_SHOULDER,
                 JointId.LEFT_HIP, JointId.RIGHT_HIP)


def torso_length(frame: Frame,
                 occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD) -> float:
    """Pixel distance between the shoulder midpoint and the hip midpoint."""
    occ = frame.occlusion_mask(occlusion_threshold)
    hidden = [j.name.lower() for j in _TORSO_JOINTS if occ[j]]
    if hidden:
        raise OccludedJointError(
            f"frame {frame.frame_id!r}: torso joints occluded: {', '.join(hidden)}"
        )
    shoulder_mid, hip_mid = _midpoints(frame.points)
    length = float(np.linalg.norm(shoulder_mid - hip_mid))
    if length < TORSO_EPS:
        raise DegenerateSkeletonError(
            f"frame {frame.frame_id!r}: torso length {length:.3g} px is degenerate"
        )
    return length


def _upright_theta(points: np.ndarray) -> float:
    """Rotation that maps the hip->shoulder vector onto canonical +y."""
    shoulder_mid, hip_mid = _midpoints(points)
    u = shoulder_mid - hip_mid
    return _wrap_angle(0.5 * math.pi - math.atan2(u[1], u[0]))


def _base_transform(frame: Frame, occlusion_threshold: float):
    """Shared rotation/scale step; returns (theta, scale, occlusion mask)."""
    occ = frame.occlusion_mask(occlusion_threshold)
    length = torso_length(frame, occlusion_threshold)
    theta = _upright_theta(frame.points)
    return theta, 1.0 / length, occ


def normalize_global(frame: Frame,
                     occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
                     ) -> CanonicalSkeleton:
    """Center, upright and unit-torso-scale a frame.

    The body center is the diagonal intersection of the bounding box over
    non-occluded joints, taken in the torso-aligned frame.
    """
    theta, scale, occ = _base_transform(frame, occlusion_threshold)
    visible = frame.points[~occ]
    if visible.shape[0] < 3:
        raise DegenerateSkeletonError(
            f"frame {frame.frame_id!r}: fewer than 3 non-occluded joints"
        )
    rotated = visible @ _rot(theta).T
    box_center_rot = 0.5 * (rotated.min(axis=0) + rotated.max(axis=0))
    center = box_center_rot @ _rot(-theta).T
    transform = NormalizationTransform(theta=theta, scale=scale,
                                       center=(center[0], center[1]))
    return CanonicalSkeleton(points=transform.apply(frame.points),
                             occluded=occ, transform=transform)


def normalize_local(frame: Frame, root: JointId,
                    occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
                    ) -> CanonicalSkeleton:
    """As :func:`normalize_global` but anchor ``root`` at the origin."""
    theta, scale, occ = _base_transform(frame, occlusion_threshold)
    root = JointId(root)
    if occ[root]:
        raise OccludedJointError(
            f"frame {frame.frame_id!r}: root joint {root.name.lower()} is occluded"
        )
    center = frame.points[root]
    transform = NormalizationTransform(theta=theta, scale=scale,
                                       center=(center[0], center[1]))
    return CanonicalSkeleton(points=transform.apply(frame.points),
                             occluded=occ, transform=transform)
