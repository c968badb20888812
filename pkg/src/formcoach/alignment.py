"""Temporal alignment and pace analysis.

Candidate and reference sequences are aligned with dynamic time warping over
the per-frame direction-vector descriptors; the step cost between a candidate
frame and a reference frame is ``1 - frame_cosine``. Pace is summarized by
the raw duration ratio, the mean deviation of the warp path from the
diagonal, and per-phase durations, where phases are segmented at extrema of
the exercise's primary joint angle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence as Seq, Tuple

import numpy as np

from .kinematics import JointVectorField, angle_at, frame_cosine
from .skeleton import DEFAULT_OCCLUSION_THRESHOLD, JointId, Sequence

# Moving-average window (frames) used to suppress jitter before locating
# phase extrema.
PHASE_SMOOTH_WINDOW = 5

DEFAULT_MIN_ECCENTRIC_RATIO = 0.6


class AlignmentError(ValueError):
    """Sequences cannot be aligned (empty input or mismatched descriptors)."""


@dataclass(frozen=True)
class WarpPath:
    """Monotone frame alignment between candidate and reference."""

    pairs: Tuple[Tuple[int, int], ...]
    cost: float

    def __post_init__(self):
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if not pairs:
            raise AlignmentError("warp path must not be empty")
        if pairs[0] != (0, 0):
            raise AlignmentError(f"warp path must start at (0, 0), got {pairs[0]}")
        for k in range(1, len(pairs)):
            di = pairs[k][0] - pairs[k - 1][0]
            dj = pairs[k][1] - pairs[k - 1][1]
            if (di, dj) not in ((1, 0), (0, 1), (1, 1)):
                raise AlignmentError(
                    f"invalid warp step {pairs[k - 1]} -> {pairs[k]}"
                )
        if self.cost < 0:
            raise AlignmentError("warp cost must be non-negative")

    def __len__(self) -> int:
        return len(self.pairs)

    def candidate_for_reference(self, ref_index: int) -> int:
        """First candidate index aligned with the given reference index."""
        for i, j in self.pairs:
            if j == ref_index:
                return i
        raise IndexError(f"reference index {ref_index} not on path")

    def transpose(self) -> "WarpPath":
        return WarpPath(pairs=tuple((j, i) for i, j in self.pairs), cost=self.cost)


def descriptor_cost(a: JointVectorField, b: JointVectorField) -> float:
    """DTW step cost between two frames: 1 - mean cosine similarity."""
    return 1.0 - frame_cosine(a, b)


def dtw_align(cand: Seq[JointVectorField], ref: Seq[JointVectorField]) -> WarpPath:
    """Minimal-cost monotone alignment of two descriptor sequences.

    Ties are broken deterministically: diagonal step first, then candidate
    advance, then reference advance.
    """
    if not cand or not ref:
        raise AlignmentError("cannot align empty sequences")
    m, n = len(cand), len(ref)
    cost = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            cost[i, j] = descriptor_cost(cand[i], ref[j])

    acc = np.full((m, n), np.inf)
    # step[i, j]: 0 = diagonal, 1 = candidate advance (from i-1, j),
    # 2 = reference advance (from i, j-1), -1 = origin
    step = np.full((m, n), -1, dtype=np.int8)
    acc[0, 0] = cost[0, 0]
    for i in range(m):
        for j in range(n):
            if i == 0 and j == 0:
                continue
            best = math.inf
            chosen = -1
            if i > 0 and j > 0 and acc[i - 1, j - 1] < best:
                best, chosen = acc[i - 1, j - 1], 0
            if i > 0 and acc[i - 1, j] < best:
                best, chosen = acc[i - 1, j], 1
            if j > 0 and acc[i, j - 1] < best:
                best, chosen = acc[i, j - 1], 2
            acc[i, j] = best + cost[i, j]
            step[i, j] = chosen

    pairs = [(m - 1, n - 1)]
    i, j = m - 1, n - 1
    while (i, j) != (0, 0):
        s = step[i, j]
        if s == 0:
            i, j = i - 1, j - 1
        elif s == 1:
            i -= 1
        else:
            j -= 1
        pairs.append((i, j))
    pairs.reverse()
    return WarpPath(pairs=tuple(pairs), cost=float(acc[m - 1, n - 1]))


@dataclass(frozen=True)
class Phase:
    """One contiguous segment of the repetition on both timelines."""

    name: str
    cand_range: Tuple[int, int]   # candidate frame indices [start, end]
    ref_range: Tuple[int, int]
    cand_seconds: float
    ref_seconds: float

    @property
    def duration_ratio(self) -> float:
        if self.ref_seconds <= 0.0:
            return math.inf
        return self.cand_seconds / self.ref_seconds


@dataclass(frozen=True)
class PaceProfile:
    """Tempo summary of a candidate relative to its reference."""

    duration_ratio: float     # candidate duration / reference duration
    warp_deviation: float     # in [0, 1]; 0 = perfectly diagonal path
    phases: Tuple[Phase, ...]

    @property
    def phase_durations(self) -> List[Tuple[str, float, float]]:
        return [(p.name, p.cand_seconds, p.ref_seconds) for p in self.phases]


def moving_average(values: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average with edge windows shrunk to the valid range."""
    x = np.asarray(values, dtype=np.float64)
    if window <= 1 or x.size <= 2:
        return x.copy()
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    out = np.empty_like(x)
    for i in range(x.size):
        lo = max(0, i - half)
        hi = min(x.size, i + half + 1)
        out[i] = (csum[hi] - csum[lo]) / (hi - lo)
    return out


def primary_angle_series(seq: Sequence, primary_joint: JointId,
                         occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
                         ) -> np.ndarray:
    """Interior angle of the primary joint per frame; NaN where not computable."""
    out = np.full(len(seq.frames), np.nan)
    for i, frame in enumerate(seq.frames):
        occ = frame.occlusion_mask(occlusion_threshold)
        try:
            out[i] = angle_at(frame.points, primary_joint, occ)
        except ValueError:
            pass
    return out


def _segment_boundaries(angles: np.ndarray, window: int) -> List[int]:
    """Interior extrema indices of the smoothed angle series.

    Plateaus are tolerated: an extremum whose neighborhood ties exactly (e.g.
    a symmetric trajectory sampled on an even grid) is placed at the plateau
    midpoint.
    """
    smoothed = moving_average(angles, window)
    diffs = np.diff(smoothed)
    nonzero = np.nonzero(np.sign(diffs))[0]
    boundaries = []
    for a, b in zip(nonzero[:-1], nonzero[1:]):
        if np.sign(diffs[a]) != np.sign(diffs[b]):
            # the extremum lies in frames [a+1, b]
            boundaries.append(int((a + 1 + b) // 2))
    return boundaries


def _phase_name(direction: float, eccentric_direction: str) -> str:
    if direction == 0.0:
        return "hold"
    decreasing = direction < 0
    if eccentric_direction == "decreasing":
        return "eccentric" if decreasing else "concentric"
    return "eccentric" if not decreasing else "concentric"


def pace_profile(cand: Sequence, ref: Sequence, path: WarpPath,
                 primary_joint: JointId,
                 eccentric_direction: str = "decreasing",
                 smooth_window: int = PHASE_SMOOTH_WINDOW,
                 occlusion_threshold: float = DEFAULT_OCCLUSION_THRESHOLD
                 ) -> PaceProfile:
    """Pace summary of ``cand`` against ``ref`` under a given warp path.

    Phases are segmented on the reference's primary-angle extrema and mapped
    onto the candidate through the path; if the angle is monotone (or not
    computable) the whole repetition is a single "full" phase.
    """
    tc, tr = len(cand.frames), len(ref.frames)
    if path.pairs[-1] != (tc - 1, tr - 1):
        raise AlignmentError("warp path does not span both sequences")
    duration_ratio = cand.duration / ref.duration

    denom_c = max(tc - 1, 1)
    denom_r = max(tr - 1, 1)
    dev = np.mean([abs(i / denom_c - j / denom_r) for i, j in path.pairs])
    warp_deviation = float(min(1.0, 2.0 * dev))

    angles = primary_angle_series(ref, primary_joint, occlusion_threshold)
    if np.isnan(angles).any():
        interior = []
    else:
        interior = _segment_boundaries(angles, smooth_window)

    if not interior:
        phases = (Phase(name="full", cand_range=(0, tc - 1), ref_range=(0, tr - 1),
                        cand_seconds=cand.duration, ref_seconds=ref.duration),)
        return PaceProfile(duration_ratio=float(duration_ratio),
                           warp_deviation=warp_deviation, phases=phases)

    smoothed = moving_average(angles, smooth_window)
    bounds = [0] + interior + [tr - 1]
    phases = []
    name_counts: dict = {}
    ct = cand.timestamps
    rt = ref.timestamps
    for k in range(len(bounds) - 1):
        r0, r1 = bounds[k], bounds[k + 1]
        direction = float(np.sign(smoothed[r1] - smoothed[r0]))
        name = _phase_name(direction, eccentric_direction)
        name_counts[name] = name_counts.get(name, 0) + 1
        if name_counts[name] > 1:
            name = f"{name}_{name_counts[name]}"
        c0 = path.candidate_for_reference(r0)
        c1 = path.candidate_for_reference(r1)
        phases.append(Phase(
            name=name,
            cand_range=(c0, c1),
            ref_range=(r0, r1),
            cand_seconds=float(ct[c1] - ct[c0]),
            ref_seconds=float(rt[r1] - rt[r0]),
        ))
    return PaceProfile(duration_ratio=float(duration_ratio),
                       warp_deviation=warp_deviation, phases=tuple(phases))


def detect_fast_eccentric(profile: PaceProfile,
                          min_ratio: float = DEFAULT_MIN_ECCENTRIC_RATIO
                          ) -> List[str]:
    """Names of phases performed faster than ``min_ratio`` of reference time."""
    return [p.name for p in profile.phases if p.duration_ratio < min_ratio]
