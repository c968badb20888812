import numpy as np
import pytest

from formcoach.correction import (Arrow, LIMBS, VisualAid, build_aid,
                                  local_root_for, render_svg)
from formcoach.normalize import (NormalizationTransform, normalize_local)
from formcoach.skeleton import Frame, JointId

from test_normalize import frame_from_points, random_frame

J = JointId


class TestLocalRoot:
    def test_upper_exercise_uses_same_side_shoulder(self):
        assert local_root_for(J.LEFT_ELBOW, "Upper") == J.LEFT_SHOULDER
        assert local_root_for(J.RIGHT_WRIST, "Upper") == J.RIGHT_SHOULDER
        assert local_root_for(J.RIGHT_KNEE, "Upper") == J.RIGHT_SHOULDER

    def test_lower_exercise_uses_same_side_hip(self):
        assert local_root_for(J.LEFT_KNEE, "Lower") == J.LEFT_HIP
        assert local_root_for(J.RIGHT_ANKLE, "Lower") == J.RIGHT_HIP

    def test_both_follows_joint(self):
        assert local_root_for(J.LEFT_WRIST, "Both") == J.LEFT_SHOULDER
        assert local_root_for(J.RIGHT_KNEE, "Both") == J.RIGHT_HIP


class TestBuildAid:
    def test_identity_pair_no_arrows(self):
        f = random_frame(np.random.default_rng(0))
        skel = normalize_local(f, J.LEFT_SHOULDER)
        aid = build_aid(f, skel.transform, skel, [J.LEFT_ELBOW, J.LEFT_WRIST])
        assert aid.arrows == ()

    def test_identity_transform_arrow_endpoints(self):
        pts = np.zeros((17, 2))
        pts[J.LEFT_SHOULDER] = (0.0, 0.0)
        pts[J.RIGHT_SHOULDER] = (1.0, 0.0)
        pts[J.LEFT_HIP] = (0.0, 1.0)
        pts[J.RIGHT_HIP] = (1.0, 1.0)
        pts[J.LEFT_ELBOW] = (4.0, 4.0)
        cand = frame_from_points(pts)
        ref_pts = pts.copy()
        ref_pts[J.LEFT_ELBOW] = (10.0, 10.0)
        from formcoach.normalize import CanonicalSkeleton
        ref = CanonicalSkeleton(points=ref_pts, occluded=np.zeros(17, bool),
                                transform=NormalizationTransform.identity())
        aid = build_aid(cand, NormalizationTransform.identity(), ref,
                        [J.LEFT_ELBOW])
        assert len(aid.arrows) == 1
        assert aid.arrows[0].tail == (4.0, 4.0)
        assert aid.arrows[0].head == (10.0, 10.0)

    def test_known_canonical_offset_maps_through_inverse(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            f = random_frame(rng)
            cand_local = normalize_local(f, J.LEFT_SHOULDER)
            v = rng.uniform(-0.5, 0.5, 2)
            ref_pts = cand_local.points.copy()
            ref_pts[J.LEFT_ELBOW] += v
            from formcoach.normalize import CanonicalSkeleton
            ref = CanonicalSkeleton(points=ref_pts, occluded=np.zeros(17, bool),
                                    transform=cand_local.transform)
            aid = build_aid(f, cand_local.transform, ref, [J.LEFT_ELBOW],
                            min_arrow_px=0.0)
            arrow = aid.arrows[0]
            got = np.array(arrow.head) - np.array(arrow.tail)
            tr = cand_local.transform
            expected = (tr.invert(cand_local.points[J.LEFT_ELBOW] + v)
                        - tr.invert(cand_local.points[J.LEFT_ELBOW]))
            assert np.abs(got - expected).max() < 1e-6

    def test_short_arrows_suppressed(self):
        f = random_frame(np.random.default_rng(2))
        skel = normalize_local(f, J.LEFT_SHOULDER)
        ref_pts = skel.points.copy()
        # one pixel equals transform.scale canonical units
        ref_pts[J.LEFT_ELBOW] += np.array([1.0, 0.0]) * skel.transform.scale
        from formcoach.normalize import CanonicalSkeleton
        ref = CanonicalSkeleton(points=ref_pts, occluded=np.zeros(17, bool),
                                transform=skel.transform)
        aid = build_aid(f, skel.transform, ref, [J.LEFT_ELBOW], min_arrow_px=2.0)
        assert aid.arrows == ()

    def test_occluded_flagged_joint_skipped(self):
        f = random_frame(np.random.default_rng(3))
        conf = np.ones(17)
        conf[J.LEFT_ELBOW] = 0.0
        cand = frame_from_points(f.points, conf)
        skel = normalize_local(cand, J.LEFT_SHOULDER)
        ref_pts = skel.points.copy()
        ref_pts[J.LEFT_ELBOW] += 1.0
        from formcoach.normalize import CanonicalSkeleton
        ref = CanonicalSkeleton(points=ref_pts, occluded=np.zeros(17, bool),
                                transform=skel.transform)
        aid = build_aid(cand, skel.transform, ref, [J.LEFT_ELBOW])
        assert aid.arrows == ()

    def test_captions_joined(self):
        f = random_frame(np.random.default_rng(4))
        skel = normalize_local(f, J.LEFT_SHOULDER)
        ref_pts = skel.points.copy()
        ref_pts[J.LEFT_ELBOW] += 0.5
        ref_pts[J.LEFT_WRIST] -= 0.5
        from formcoach.normalize import CanonicalSkeleton
        ref = CanonicalSkeleton(points=ref_pts, occluded=np.zeros(17, bool),
                                transform=skel.transform)
        aid = build_aid(f, skel.transform, ref, [J.LEFT_WRIST, J.LEFT_ELBOW],
                        captions={J.LEFT_ELBOW: "raise elbow",
                                  J.LEFT_WRIST: "drop wrist"})
        assert aid.caption == "raise elbow; drop wrist"  # sorted by joint


class TestRenderSvg:
    def aid_with_arrows(self, n):
        arrows = tuple(
            Arrow(joint=JointId(5 + k), tail=(10.0 * k, 5.0), head=(10.0 * k, 50.0))
            for k in range(n))
        return VisualAid(frame_id="f0001", arrows=arrows, caption="fix it")

    def test_well_formed_and_parsable(self):
        import xml.etree.ElementTree as ET
        f = random_frame(np.random.default_rng(5))
        svg = render_svg(self.aid_with_arrows(2), f)
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")

    def test_empty_aid_has_skeleton_only(self):
        f = random_frame(np.random.default_rng(6))
        svg = render_svg(VisualAid(frame_id="x", arrows=()), f)
        assert svg.count("marker-end") == 0
        assert svg.count("<line") == len(LIMBS)
        assert svg.count("<circle") == 17

    def test_arrow_count(self):
        f = random_frame(np.random.default_rng(7))
        svg = render_svg(self.aid_with_arrows(2), f)
        assert svg.count("marker-end") == 2

    def test_byte_stable(self):
        f = random_frame(np.random.default_rng(8))
        aid = self.aid_with_arrows(3)
        assert render_svg(aid, f) == render_svg(aid, f)

    def test_caption_escaped(self):
        f = random_frame(np.random.default_rng(9))
        aid = VisualAid(frame_id="x", arrows=(), caption="a < b & c")
        svg = render_svg(aid, f)
        assert "a &lt; b &amp; c" in svg

    def test_occluded_joints_not_drawn(self):
        f = random_frame(np.random.default_rng(10))
        conf = np.ones(17)
        conf[J.NOSE] = 0.0
        cand = frame_from_points(f.points, conf)
        svg = render_svg(VisualAid(frame_id="x", arrows=()), cand)
        assert svg.count("<circle") == 16
