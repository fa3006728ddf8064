import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from neurovio.exceptions import DegenerateQuaternionError, DimensionError, EmptyInputError
from neurovio.geometry import (Pose, Trajectory, interpolate_pose, quat_normalize, rmse, rotation_error,
                               translation_error)

finite = st.floats(-100, 100, allow_nan=False, allow_infinity=False)
quats = st.lists(finite, min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 1e-3)
vec3 = st.lists(finite, min_size=3, max_size=3)


class TestQuatNormalize:
    @pytest.mark.parametrize("q, expected", [
        ((1, 0, 0, 0), (1, 0, 0, 0)),
        ((-2, 0, 0, 0), (1, 0, 0, 0)),
        ((0, 3, 4, 0), (0, 0.6, 0.8, 0)),
        ((0, -3, 4, 0), (0, 0.6, -0.8, 0)),
    ])
    def test_examples(self, q, expected):
        np.testing.assert_allclose(quat_normalize(q), expected, atol=1e-15)

    @pytest.mark.parametrize("q", [(0, 0, 0, 0), (1e-13, 0, 0, 0), (np.nan, 0, 0, 1)])
    def test_degenerate_raises(self, q):
        with pytest.raises(DegenerateQuaternionError):
            quat_normalize(q)

    @given(quats)
    def test_idempotent_unit_canonical(self, q):
        n = quat_normalize(q)
        assert abs(np.linalg.norm(n) - 1.0) < 1e-9
        assert n[0] >= 0
        assert np.array_equal(quat_normalize(n), n)


class TestPose:
    def test_canonical_orientation(self):
        p = Pose([0, 0, 0], [-1, 0, 0, 0])
        np.testing.assert_array_equal(p.orientation, [1, 0, 0, 0])

    def test_rejects_bad_position(self):
        with pytest.raises(DimensionError):
            Pose([1, 2])

    def test_rejects_negative_time(self):
        with pytest.raises(ValueError):
            Pose([0, 0, 0], timestamp=-1.0)

    def test_immutable_arrays(self):
        p = Pose([1, 2, 3])
        with pytest.raises(ValueError):
            p.position[0] = 5.0

    def test_vector_round_trip(self):
        p = Pose([1, 2, 3], [0.5, 0.5, 0.5, 0.5], 2.0)
        assert Pose.from_vector(p.as_vector(), 2.0) == p


class TestErrors:
    def test_identical(self):
        p = Pose([1, 2, 3], [0.5, 0.5, 0.5, 0.5])
        assert translation_error(p, p) == 0.0
        assert rotation_error(p, p) == 0.0

    def test_122_triple(self):
        assert translation_error(Pose([0, 0, 0]), Pose([1, 2, 2])) == pytest.approx(3.0, abs=1e-15)

    def test_quarter_turn_matches_matrix_angle(self):
        q = (math.sqrt(2) / 2, 0, 0, math.sqrt(2) / 2)
        angle = rotation_error(Pose([0, 0, 0]), Pose([0, 0, 0], q))
        # angle from the rotation matrix trace, independent of the quaternion formula
        R = Rotation.from_quat([q[1], q[2], q[3], q[0]]).as_matrix()
        oracle = math.acos((np.trace(R) - 1) / 2)
        assert angle == pytest.approx(math.pi / 2, abs=1e-12)
        assert angle == pytest.approx(oracle, abs=1e-12)

    @given(quats, quats)
    def test_rotation_error_symmetric_and_sign_invariant(self, a, b):
        pa, pb = Pose([0, 0, 0], a), Pose([0, 0, 0], b)
        e = rotation_error(pa, pb)
        assert 0.0 <= e <= math.pi
        assert rotation_error(pb, pa) == pytest.approx(e, abs=1e-12)
        neg = Pose([0, 0, 0], -np.asarray(a))
        assert rotation_error(neg, pb) == pytest.approx(e, abs=1e-12)

    @given(vec3, vec3, vec3)
    def test_triangle_inequality(self, a, b, c):
        pa, pb, pc = Pose(a), Pose(b), Pose(c)
        assert translation_error(pa, pc) <= translation_error(pa, pb) + translation_error(pb, pc) + 1e-9


class TestRmse:
    def test_identical_is_zero(self):
        y = np.random.default_rng(0).normal(size=(5, 3))
        assert rmse(y, y) == 0.0

    def test_scalar(self):
        assert rmse([[1.0]], [[3.0]]) == 2.0

    def test_per_sample_norm_convention(self):
        pred = [(0, 0), (0, 0)]
        act = [(3, 4), (0, 0)]
        total = 0.0
        for p, a in zip(pred, act):
            total += sum((pi - ai) ** 2 for pi, ai in zip(p, a))
        assert rmse(pred, act) == pytest.approx(math.sqrt(total / 2), abs=1e-15)
        assert rmse(pred, act) == pytest.approx(math.sqrt(25 / 2), abs=1e-15)

    def test_errors(self):
        with pytest.raises(DimensionError):
            rmse([[1, 2]], [[1, 2], [3, 4]])
        with pytest.raises(EmptyInputError):
            rmse(np.zeros((0, 3)), np.zeros((0, 3)))

    @given(st.lists(vec3, min_size=1, max_size=6), st.floats(-10, 10, allow_nan=False))
    def test_scales_linearly(self, rows, c):
        y = np.asarray(rows)
        yh = y + 1.0
        assert rmse(c * yh, c * y) == pytest.approx(abs(c) * rmse(yh, y), rel=1e-9, abs=1e-12)

    @given(st.lists(vec3, min_size=1, max_size=6), st.lists(vec3, min_size=1, max_size=6))
    def test_zero_iff_equal(self, a, b):
        n = min(len(a), len(b))
        a, b = np.asarray(a[:n]), np.asarray(b[:n])
        assert (rmse(a, b) == 0.0) == np.array_equal(a, b)


class TestTrajectory:
    def _traj(self):
        return Trajectory([Pose([0, 0, 0], timestamp=0.0),
                           Pose([2, 0, 0], [math.cos(0.5), 0, 0, math.sin(0.5)], 1.0),
                           Pose([2, 2, 0], timestamp=2.0)])

    def test_strictly_increasing(self):
        with pytest.raises(ValueError):
            Trajectory([Pose([0, 0, 0], timestamp=1.0), Pose([0, 0, 0], timestamp=1.0)])

    def test_interpolation_reproduces_samples(self):
        traj = self._traj()
        for p in traj:
            assert traj.interpolate(p.timestamp) == p

    def test_interpolation_midpoint(self):
        mid = self._traj().interpolate(0.5)
        np.testing.assert_allclose(mid.position, [1, 0, 0])
        assert rotation_error(mid, Pose([0, 0, 0], [math.cos(0.25), 0, 0, math.sin(0.25)])) < 1e-12

    def test_interpolate_pose_rejects_bad_bracket(self):
        with pytest.raises(ValueError):
            interpolate_pose(Pose([0, 0, 0], timestamp=1.0), Pose([0, 0, 0], timestamp=1.0), 1.0)

    def test_bbox_diagonal(self):
        assert self._traj().bounding_box_diagonal() == pytest.approx(math.sqrt(8))

    def test_csv_round_trip(self, tmp_path):
        traj = self._traj()
        traj.to_csv(tmp_path / "t.csv")
        assert (tmp_path / "t.csv").read_text().splitlines()[0] == "timestamp_s,px,py,pz,qw,qx,qy,qz"
        back = Trajectory.from_csv(tmp_path / "t.csv")
        assert list(back) == list(traj)
