import csv

import numpy as np
import pytest
from scipy.integrate import cumulative_simpson
from scipy.spatial.transform import Rotation

from neurovio.dataio import (Dataset, FlightSpec, Frame, WorldSpec, corrupt_frames, generate_synthetic,
                             load_euroc_layout, render_frame, save_euroc_layout, split)
from neurovio.dataio.euroc import write_pgm
from neurovio.dataio.render import pixel_ground_points
from neurovio.dataio.synthetic import ground_truth_at_imu_rate, plan_trajectory
from neurovio.exceptions import DegenerateViewError, MalformedDatasetError
from neurovio.geometry import Pose

from conftest import smoke_dataset


def write_layout(root, imu_rate, cam_rate, duration, gt=True, imu_ns=None):
    """Hand-written layout with constant readings; returns the directory."""
    (root / "images").mkdir(parents=True)
    n_frames = int(round(duration * cam_rate)) + 1
    frame_ns = [k * 10**9 // cam_rate for k in range(n_frames)]
    if imu_ns is None:
        imu_ns = list(range(0, frame_ns[-1], 10**9 // imu_rate))
    with open(root / "imu.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_ns", "wx", "wy", "wz", "ax", "ay", "az"])
        for ns in imu_ns:
            w.writerow([ns, 0, 0, 0, 0, 0, 9.81])
    with open(root / "frames.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_ns", "filename"])
        for ns in frame_ns:
            write_pgm(root / "images" / f"{ns}.pgm", np.full((4, 6), 0.5))
            w.writerow([ns, f"{ns}.pgm"])
    with open(root / "groundtruth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_ns", "px", "py", "pz", "qw", "qx", "qy", "qz"])
        if gt:
            for ns in frame_ns:
                w.writerow([ns, ns / 1e9, 0, 1, 1, 0, 0, 0])
    return root


class TestEurocLayout:
    @pytest.mark.parametrize("imu_rate, cam_rate", [(200, 20), (100, 10)])
    def test_window_sizes(self, tmp_path, imu_rate, cam_rate):
        ds = load_euroc_layout(write_layout(tmp_path, imu_rate, cam_rate, 1.0))
        assert len(ds) == cam_rate
        assert all(len(o.imu) == 10 for o in ds)

    def test_single_frame_gives_empty_dataset(self, tmp_path):
        ds = load_euroc_layout(write_layout(tmp_path, 100, 10, 0.0, imu_ns=[]))
        assert len(ds) == 0

    def test_missing_file(self, tmp_path):
        root = write_layout(tmp_path, 100, 10, 0.5)
        (root / "imu.csv").unlink()
        with pytest.raises(FileNotFoundError):
            load_euroc_layout(root)

    def test_empty_window_names_timestamp(self, tmp_path):
        root = write_layout(tmp_path, 100, 10, 0.3, imu_ns=[0, 10**7, 2 * 10**8 + 10**7])
        with pytest.raises(MalformedDatasetError, match="200000000"):
            load_euroc_layout(root)

    def test_unordered_frames(self, tmp_path):
        root = write_layout(tmp_path, 100, 10, 0.3)
        lines = (root / "frames.csv").read_text().splitlines()
        lines[1], lines[2] = lines[2], lines[1]
        (root / "frames.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(MalformedDatasetError):
            load_euroc_layout(root)

    def test_interpolated_ground_truth(self, tmp_path):
        ds = load_euroc_layout(write_layout(tmp_path, 100, 10, 0.5))
        for o in ds:
            assert o.ground_truth.position[0] == pytest.approx(o.timestamp, abs=1e-12)

    def test_round_trip(self, tmp_path):
        ds = corrupt_frames(smoke_dataset(), 0.25, 1)
        back = load_euroc_layout(save_euroc_layout(ds, tmp_path / "d"))
        assert len(back) == len(ds)
        assert back.initial_pose == ds.initial_pose
        for a, b in zip(ds, back):
            assert a.timestamp == b.timestamp
            assert a.frame.corrupted == b.frame.corrupted
            np.testing.assert_array_equal(a.frame.pixels, b.frame.pixels)
            np.testing.assert_array_equal(a.imu.accel, b.imu.accel)
            np.testing.assert_array_equal(a.imu.gyro, b.imu.gyro)
            np.testing.assert_allclose(a.ground_truth.position, b.ground_truth.position, atol=1e-12)


class TestSynthetic:
    def test_deterministic(self):
        a, b = smoke_dataset(seed=3), smoke_dataset(seed=3)
        for x, y in zip(a, b):
            assert np.array_equal(x.frame.pixels, y.frame.pixels)
            assert np.array_equal(x.imu.accel, y.imu.accel)
            assert x.ground_truth == y.ground_truth

    def test_hover_statics(self):
        flight = FlightSpec(duration=2.0, waypoints=((2.5, 2.0, 3.0),), image_shape=(8, 8, 1)).noiseless()
        ds = generate_synthetic(WorldSpec(), flight, 0)
        for o in ds:
            np.testing.assert_allclose(o.imu.accel, np.tile([0, 0, 9.81], (len(o.imu), 1)), atol=1e-12)
            np.testing.assert_allclose(o.imu.gyro, 0.0, atol=1e-12)

    def test_cruise_segment_reads_gravity_only(self):
        # 10 m leg at 1 m/s with 1 s ramps: cruise between t = 2 s and t = 11 s
        flight = FlightSpec(duration=12.0, waypoints=((12.5, 2.0, 3.0),), cruise_speed=1.0,
                            image_shape=(8, 8, 1)).noiseless()
        ds = generate_synthetic(WorldSpec(), flight, 0)
        cruise = [o for o in ds if 2.2 <= o.imu.t_start and o.imu.t_end <= 10.8]
        assert cruise
        for o in cruise:
            np.testing.assert_allclose(o.imu.accel, np.tile([0, 0, 9.81], (len(o.imu), 1)), atol=1e-9)

    def test_windows_tile_imu_stream(self):
        ds = smoke_dataset(20)
        stamps = np.concatenate([o.imu.timestamps for o in ds])
        assert np.all(np.diff(stamps) > 0)
        np.testing.assert_allclose(np.diff(stamps), 0.01, atol=1e-12)
        assert stamps[0] == ds.initial_pose.timestamp
        for o in ds:
            assert o.imu.t_end == pytest.approx(o.timestamp, abs=0.01)
            assert o.imu.t_start <= o.imu.timestamps[0] and o.imu.timestamps[-1] < o.imu.t_end

    def test_imu_integrates_to_trajectory(self):
        """Double integration of noiseless world-frame accelerations tracks the true position."""
        world = WorldSpec()
        flight = FlightSpec(duration=10.0, image_shape=(8, 8, 1)).noiseless()
        ds = generate_synthetic(world, flight, 0)
        truth = ground_truth_at_imu_rate(world, flight, 0)
        accel = np.vstack([o.imu.accel for o in ds])
        rot = Rotation.from_quat([truth[k].orientation for k in range(len(accel))], scalar_first=True)
        acc_w = rot.apply(accel) - np.array([0.0, 0.0, 9.81])

        traj = plan_trajectory(world, flight, 0)
        stamps = np.concatenate([o.imu.timestamps for o in ds])
        np.testing.assert_allclose(acc_w, [traj.state(t)[2] for t in stamps], atol=1e-9)

        # Simpson's rule: the ramp profile has jerk jumps that cost the trapezoid rule about 1 mm
        vel = cumulative_simpson(acc_w, dx=0.01, axis=0, initial=0.0)
        pos = truth[0].position + cumulative_simpson(vel, dx=0.01, axis=0, initial=0.0)
        assert np.linalg.norm(pos[-1] - truth[len(accel) - 1].position) < 1e-3

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            generate_synthetic(WorldSpec(), FlightSpec(imu_rate=0), 0)
        with pytest.raises(ValueError):
            generate_synthetic(WorldSpec(), FlightSpec(imu_rate=100, camera_rate=30), 0)
        with pytest.raises(ValueError):
            generate_synthetic(WorldSpec(), FlightSpec(waypoints=()), 0)


class TestRender:
    def test_deterministic(self):
        pose = Pose([1.0, 2.0, 3.0])
        assert np.array_equal(render_frame(WorldSpec(), pose).pixels, render_frame(WorldSpec(), pose).pixels)

    def test_texture_period(self):
        world = WorldSpec()
        a = render_frame(world, Pose([100.0, 100.0, 3.0]))
        b = render_frame(world, Pose([100.0 + world.texture_period, 100.0, 3.0]))
        c = render_frame(world, Pose([100.0, 100.0 - world.texture_period, 3.0]))
        assert np.array_equal(a.pixels, b.pixels)
        assert np.array_equal(a.pixels, c.pixels)
        assert not np.array_equal(a.pixels, render_frame(world, Pose([101.0, 100.0, 3.0])).pixels)

    def test_altitude_doubles_footprint(self):
        world, shape = WorldSpec(), (72, 128, 1)
        low, high = Pose([0.0, 0.0, 2.0]), Pose([0.0, 0.0, 4.0])
        xl, _ = pixel_ground_points(world, low, shape)
        xh, _ = pixel_ground_points(world, high, shape)
        assert np.ptp(xh) == pytest.approx(2 * np.ptp(xl), rel=1e-12)

        def marker_width(pose):
            px = render_frame(world, pose, shape).pixels[..., 0]
            cols = np.where(((px == 1.0) | (px == 0.0)).any(axis=0))[0]
            return cols.max() - cols.min() + 1

        wl, wh = marker_width(low), marker_width(high)
        gsd = world.ground_sample_distance(2.0, shape[1])
        assert abs(wl - 0.6 / gsd) <= 1.0
        assert abs(wl - 2 * wh) <= 2.0

    def test_pixels_in_unit_range(self):
        px = render_frame(WorldSpec(), Pose([5.0, 4.0, 0.5])).pixels
        assert px.min() >= 0.0 and px.max() <= 1.0

    @pytest.mark.parametrize("z", [0.0, -1.0])
    def test_degenerate_view(self, z):
        with pytest.raises(DegenerateViewError):
            render_frame(WorldSpec(), Pose([0.0, 0.0, z]))


class TestCorruptAndSplit:
    def test_corrupt_zero_is_identity(self, smoke):
        assert corrupt_frames(smoke, 0.0, 0) is smoke

    def test_corrupt_all(self, smoke):
        ds = corrupt_frames(smoke, 1.0, 0)
        assert all(o.frame.corrupted and not o.frame.pixels.any() for o in ds)

    def test_corrupt_exact_count(self):
        ds = smoke_dataset(100, shape=(4, 4, 1))
        bad = corrupt_frames(ds, 0.2, 5)
        assert bad.corrupted_mask.sum() == 20
        assert np.array_equal(bad.corrupted_mask, corrupt_frames(ds, 0.2, 5).corrupted_mask)

    def test_corrupt_rejects_fraction(self, smoke):
        with pytest.raises(ValueError):
            corrupt_frames(smoke, 1.5, 0)

    @pytest.mark.parametrize("n, frac, expected", [(10, 0.8, (8, 2)), (2, 0.5, (1, 1))])
    def test_split_sizes(self, n, frac, expected):
        ds = smoke_dataset(n, shape=(4, 4, 1))
        a, b = split(ds, frac)
        assert (len(a), len(b)) == expected
        assert len(a) + len(b) == len(ds)
        assert b.initial_pose == a[-1].ground_truth
        assert a[-1].timestamp < b[0].timestamp

    def test_split_too_small(self):
        with pytest.raises(MalformedDatasetError):
            split(smoke_dataset(1, shape=(4, 4, 1)), 0.5)

    def test_frame_range_check(self):
        with pytest.raises(ValueError):
            Frame(np.full((2, 2), 1.5), 0.0)
        Frame(np.full((2, 2), 1.5), 0.0, corrupted=True)

    def test_dataset_order(self, smoke):
        with pytest.raises(MalformedDatasetError):
            Dataset([smoke[1], smoke[0]])
