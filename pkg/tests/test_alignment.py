import math

import numpy as np
import pytest

from formcoach.alignment import (AlignmentError, WarpPath, detect_fast_eccentric,
                                 dtw_align, moving_average, pace_profile)
from formcoach.assessment import pace_score
from formcoach.kinematics import JointVectorField, joint_vectors
from formcoach.normalize import normalize_global
from formcoach.skeleton import JointId, Sequence
from formcoach.synth import InjectedError, MotionSpec, generate

from test_normalize import random_frame


def random_fields(rng, n, joints=(JointId.LEFT_WRIST, JointId.RIGHT_WRIST,
                                  JointId.NOSE)):
    fields = []
    for i in range(n):
        skel = normalize_global(random_frame(rng))
        fields.append(joint_vectors(skel, joints, frame_id=f"f{i}"))
    return fields


def brute_force_cost(cost):
    """Exhaustively enumerate every monotone path, summing costs forward."""
    m, n = cost.shape
    best = [math.inf]

    def walk(i, j, acc):
        acc = acc + cost[i, j]
        if i == m - 1 and j == n - 1:
            if acc < best[0]:
                best[0] = acc
            return
        if i + 1 < m and j + 1 < n:
            walk(i + 1, j + 1, acc)
        if i + 1 < m:
            walk(i + 1, j, acc)
        if j + 1 < n:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return best[0]


def cost_matrix(cand, ref):
    from formcoach.alignment import descriptor_cost
    return np.array([[descriptor_cost(c, r) for r in ref] for c in cand])


class TestWarpPathInvariants:
    def test_must_start_at_origin(self):
        with pytest.raises(AlignmentError):
            WarpPath(pairs=((1, 0), (2, 1)), cost=0.0)

    def test_rejects_jumps(self):
        with pytest.raises(AlignmentError):
            WarpPath(pairs=((0, 0), (2, 1)), cost=0.0)

    def test_rejects_backward_steps(self):
        with pytest.raises(AlignmentError):
            WarpPath(pairs=((0, 0), (1, 1), (0, 1)), cost=0.0)


class TestDtwAlign:
    def test_identical_sequences_diagonal(self):
        fields = random_fields(np.random.default_rng(0), 6)
        path = dtw_align(fields, fields)
        assert path.pairs == tuple((i, i) for i in range(6))
        assert path.cost == pytest.approx(0.0, abs=1e-12)

    def test_empty_input(self):
        fields = random_fields(np.random.default_rng(1), 3)
        with pytest.raises(AlignmentError):
            dtw_align([], fields)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(60):
            m, n = rng.integers(2, 9, 2)
            cand = random_fields(rng, int(m))
            ref = random_fields(rng, int(n))
            path = dtw_align(cand, ref)
            assert path.pairs[-1] == (m - 1, n - 1)
            assert path.cost == brute_force_cost(cost_matrix(cand, ref))

    def test_duplicated_frames_visit_each_ref_twice(self):
        fields = random_fields(np.random.default_rng(3), 4)
        doubled = [f for f in fields for _ in range(2)]
        path = dtw_align(doubled, fields)
        assert path.cost == pytest.approx(0.0, abs=1e-12)
        visits = {}
        for i, j in path.pairs:
            visits[j] = visits.get(j, 0) + 1
        assert all(v == 2 for v in visits.values())

    def test_cost_symmetry_and_path_transpose(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            cand = random_fields(rng, int(rng.integers(2, 7)))
            ref = random_fields(rng, int(rng.integers(2, 7)))
            fwd = dtw_align(cand, ref)
            rev = dtw_align(ref, cand)
            assert fwd.cost == pytest.approx(rev.cost, abs=1e-12)
            assert rev.transpose().pairs == fwd.pairs


class TestMovingAverage:
    def test_window_one_is_identity(self):
        x = np.array([3.0, 1.0, 4.0])
        assert np.array_equal(moving_average(x, 1), x)

    def test_constant_preserved(self):
        assert np.allclose(moving_average(np.full(10, 7.0), 5), 7.0)

    def test_matches_direct_mean(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=20)
        out = moving_average(x, 5)
        for i in range(20):
            lo, hi = max(0, i - 2), min(20, i + 3)
            assert out[i] == pytest.approx(x[lo:hi].mean())


class TestPaceProfile:
    def test_identity(self):
        seq, _ = generate(MotionSpec(template="squat", n_frames=20), seed=0)
        skels = [normalize_global(f) for f in seq.frames]
        fields = [joint_vectors(s, [JointId.LEFT_KNEE, JointId.LEFT_ANKLE,
                                    JointId.LEFT_HIP]) for s in skels]
        path = dtw_align(fields, fields)
        profile = pace_profile(seq, seq, path, JointId.LEFT_KNEE)
        assert profile.duration_ratio == 1.0
        assert profile.warp_deviation == 0.0
        for p in profile.phases:
            assert p.cand_seconds == pytest.approx(p.ref_seconds)

    def test_double_speed_candidate(self):
        ref, _ = generate(MotionSpec(template="squat", n_frames=24), seed=1)
        fast_spec = MotionSpec(template="squat", n_frames=24,
                               injected_errors=(InjectedError(
                                   kind="speed_factor", magnitude=2.0),),
                               class_label="correct")
        cand, _ = generate(fast_spec, seed=1)
        skels = [normalize_global(f) for f in ref.frames]
        fields = [joint_vectors(s, [JointId.LEFT_KNEE, JointId.LEFT_ANKLE])
                  for s in skels]
        path = dtw_align(fields, fields)
        profile = pace_profile(cand, ref, path, JointId.LEFT_KNEE)
        assert profile.duration_ratio == 0.5
        assert profile.warp_deviation == 0.0
        assert pace_score(profile) == 50.0

    def test_monotone_angle_single_full_phase(self):
        seq, _ = generate(MotionSpec(template="squat", n_frames=20), seed=2)
        half = Sequence(exercise_id="s", class_label="correct",
                        frames=seq.frames[:10])
        skels = [normalize_global(f) for f in half.frames]
        fields = [joint_vectors(s, [JointId.LEFT_KNEE, JointId.LEFT_ANKLE])
                  for s in skels]
        path = dtw_align(fields, fields)
        profile = pace_profile(half, half, path, JointId.LEFT_KNEE)
        assert [p.name for p in profile.phases] == ["full"]

    def test_fast_eccentric_phase_duration(self):
        ref, rann = generate(MotionSpec(template="squat", n_frames=48), seed=3)
        spec = MotionSpec(template="squat", n_frames=48,
                          injected_errors=(InjectedError(
                              kind="speed_factor", magnitude=2.0,
                              phase="eccentric"),),
                          class_label="wrong")
        cand, _ = generate(spec, seed=3)
        skels = [normalize_global(f) for f in ref.frames]
        fields = [joint_vectors(s, [JointId.LEFT_KNEE, JointId.LEFT_ANKLE,
                                    JointId.LEFT_HIP]) for s in skels]
        path = dtw_align(fields, fields)
        profile = pace_profile(cand, ref, path, JointId.LEFT_KNEE)
        ecc = next(p for p in profile.phases if p.name == "eccentric")
        assert ecc.duration_ratio == pytest.approx(0.5, abs=0.05)


class TestDetectFastEccentric:
    def test_all_normal(self):
        seq, _ = generate(MotionSpec(template="press", n_frames=24), seed=4)
        skels = [normalize_global(f) for f in seq.frames]
        fields = [joint_vectors(s, [JointId.LEFT_ELBOW, JointId.LEFT_WRIST])
                  for s in skels]
        path = dtw_align(fields, fields)
        profile = pace_profile(seq, seq, path, JointId.LEFT_ELBOW)
        assert detect_fast_eccentric(profile) == []

    def test_threshold_logic(self):
        from formcoach.alignment import PaceProfile, Phase
        phases = (
            Phase(name="eccentric", cand_range=(0, 5), ref_range=(0, 5),
                  cand_seconds=0.4, ref_seconds=1.0),
            Phase(name="concentric", cand_range=(5, 10), ref_range=(5, 10),
                  cand_seconds=1.0, ref_seconds=1.0),
        )
        profile = PaceProfile(duration_ratio=0.7, warp_deviation=0.0,
                              phases=phases)
        assert detect_fast_eccentric(profile, min_ratio=0.6) == ["eccentric"]

    def test_matches_direct_filter(self):
        from formcoach.alignment import PaceProfile, Phase
        rng = np.random.default_rng(6)
        for _ in range(50):
            phases = tuple(
                Phase(name=f"p{k}", cand_range=(k, k + 1), ref_range=(k, k + 1),
                      cand_seconds=float(rng.uniform(0.1, 2)),
                      ref_seconds=float(rng.uniform(0.1, 2)))
                for k in range(int(rng.integers(1, 6))))
            profile = PaceProfile(duration_ratio=1.0, warp_deviation=0.0,
                                  phases=phases)
            expected = [p.name for p in phases
                        if p.cand_seconds / p.ref_seconds < 0.6]
            assert detect_fast_eccentric(profile, 0.6) == expected
