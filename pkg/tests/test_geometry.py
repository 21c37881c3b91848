import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazealign.errors import DegenerateRay, GimbalLockWarning, OutOfFrustum
from gazealign.geometry import (
    EulerRot,
    Extrinsics,
    angular_error,
    euler_to_rotation,
    euler_to_rotation_batch,
    gaze_direction,
    is_rotation,
    polar_to_vector,
    rotation_to_euler,
    screen_to_camera,
    vector_to_polar,
    wrap_degrees,
)

angles = st.floats(-179.0, 179.0, allow_nan=False)
small_angles = st.floats(-80.0, 80.0, allow_nan=False)


def _rot_oracle(axis, deg):
    """Rodrigues formula, independent of the Euler helpers."""
    k = np.asarray(axis, float) / np.linalg.norm(axis)
    a = math.radians(deg)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(a) * kx + (1 - math.cos(a)) * kx @ kx


class TestGazeDirection:
    def test_axis_aligned(self):
        np.testing.assert_allclose(gaze_direction([0, 0, 60], [0, 0, 0]), [0, 0, -1])

    def test_forty_five_degrees(self):
        s = 1 / math.sqrt(2)
        np.testing.assert_allclose(gaze_direction([0, 0, 60], [60, 0, 0]), [s, 0, -s], atol=1e-15)

    def test_zero_length_ray(self):
        with pytest.raises(DegenerateRay):
            gaze_direction([0, 0, 60], [0, 0, 60])

    @given(st.lists(st.floats(-100, 100), min_size=6, max_size=6))
    def test_unit_norm(self, xs):
        o, t = np.array(xs[:3]), np.array(xs[3:])
        if np.linalg.norm(t - o) <= 1e-3:
            return
        assert abs(np.linalg.norm(gaze_direction(o, t)) - 1) < 1e-9


class TestAngularError:
    def test_identity(self):
        g = np.array([0.3, -0.2, -0.9])
        assert angular_error(g, g) == 0

    def test_known_values(self):
        s = 1 / math.sqrt(2)
        assert angular_error([0, 0, -1], [0, s, -s]) == pytest.approx(45.0, abs=1e-12)
        assert angular_error([0, 0, -1], [0, 0, 1]) == pytest.approx(180.0, abs=1e-12)

    def test_tiny_angles_resolved(self):
        a = math.radians(1e-6)
        assert angular_error([0, 0, -1], [math.sin(a), 0, -math.cos(a)]) == pytest.approx(1e-6, rel=1e-6)

    def test_symmetric_nonnegative(self, rng):
        from conftest import random_unit

        a, b = random_unit(rng, 500), random_unit(rng, 500)
        e = angular_error(a, b)
        np.testing.assert_array_equal(e, angular_error(b, a))
        assert np.all(e >= 0)
        assert np.all(e[np.any(a != b, axis=1)] > 0)

    def test_rotation_invariance(self, rng):
        from conftest import random_unit

        a, b = random_unit(rng, 50), random_unit(rng, 50)
        base = angular_error(a, b)
        for _ in range(100):
            r = euler_to_rotation(*rng.uniform(-180, 180, 3))
            np.testing.assert_allclose(angular_error(a @ r.T, b @ r.T), base, atol=1e-6)


class TestScreenToCamera:
    def test_identity_embeds(self):
        np.testing.assert_array_equal(screen_to_camera((5, -3), np.eye(3), np.zeros(3)), [5, -3, 0])

    def test_pure_translation(self):
        np.testing.assert_array_equal(screen_to_camera((0, 0), np.eye(3), [1, 2, 3]), [1, 2, 3])

    def test_yaw_ninety_matches_hand_multiply(self):
        # yaw 90 about +y: x -> -z
        r = euler_to_rotation(0, 90, 0)
        expected = np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0]], float) @ np.array([1, 0, 0])
        np.testing.assert_allclose(screen_to_camera((1, 0), r, np.zeros(3)), expected, atol=1e-15)

    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_identity_exact(self, u, v):
        out = screen_to_camera((u, v), np.eye(3), np.zeros(3))
        assert out[0] == u and out[1] == v and out[2] == 0


class TestEuler:
    def test_zero_is_identity(self):
        np.testing.assert_array_equal(euler_to_rotation(0, 0, 0), np.eye(3))

    def test_yaw_ninety_maps_z_to_x(self):
        np.testing.assert_allclose(euler_to_rotation(0, 90, 0) @ [0, 0, 1], [1, 0, 0], atol=1e-15)
        np.testing.assert_allclose(euler_to_rotation(0, 90, 0), _rot_oracle([0, 1, 0], 90), atol=1e-15)

    def test_composition_oracle(self, rng):
        for p, y, r in rng.uniform(-90, 90, (20, 3)):
            oracle = _rot_oracle([0, 0, 1], r) @ _rot_oracle([0, 1, 0], y) @ _rot_oracle([1, 0, 0], p)
            np.testing.assert_allclose(euler_to_rotation(p, y, r), oracle, atol=1e-14)

    def test_round_trip_example(self):
        e = rotation_to_euler(euler_to_rotation(10, -20, 5))
        np.testing.assert_allclose(e.as_array(), [10, -20, 5], atol=1e-9)

    @given(small_angles, small_angles, small_angles)
    def test_round_trip(self, p, y, r):
        e = rotation_to_euler(euler_to_rotation(p, y, r))
        np.testing.assert_allclose(e.as_array(), [p, y, r], atol=1e-9)

    @given(angles, angles, angles)
    def test_orthonormal_det_one(self, p, y, r):
        m = euler_to_rotation(p, y, r)
        assert is_rotation(m, 1e-9)
        assert abs(np.linalg.det(m) - 1) < 1e-9
        np.testing.assert_allclose(m @ euler_to_rotation(0, 0, 0), m)

    def test_batch_matches_scalar(self, rng):
        a = rng.uniform(-180, 180, (30, 3))
        batch = euler_to_rotation_batch(a)
        for row, m in zip(a, batch):
            np.testing.assert_allclose(m, euler_to_rotation(*row), atol=1e-15)

    def test_gimbal_warning(self):
        with pytest.warns(GimbalLockWarning):
            e = rotation_to_euler(euler_to_rotation(10, 90, 0))
        # Only pitch - roll is observable there; the matrix must still round-trip.
        np.testing.assert_allclose(e.matrix(), euler_to_rotation(10, 90, 0), atol=1e-9)

    def test_accepts_eulerrot(self):
        np.testing.assert_array_equal(euler_to_rotation(EulerRot(1, 2, 3)), euler_to_rotation(1, 2, 3))

    def test_extrinsics_round_trip(self):
        ex = Extrinsics(euler_to_rotation(1, 2, 3), np.array([1.0, -2.0, 0.5]))
        back = Extrinsics.from_dict(ex.to_dict())
        np.testing.assert_array_equal(back.rotation, ex.rotation)
        np.testing.assert_array_equal(back.translation, ex.translation)


class TestPolar:
    def test_anchor(self):
        np.testing.assert_allclose(vector_to_polar([0, 0, -1]), [0, 0], atol=0)

    def test_pitch_fifteen(self):
        s = math.radians(15)
        np.testing.assert_allclose(vector_to_polar([0, -math.sin(s), -math.cos(s)]), [15, 0], atol=1e-12)

    def test_round_trip_example(self):
        back = vector_to_polar(polar_to_vector([7.3, -22.1]))
        np.testing.assert_allclose(back, [7.3, -22.1], atol=1e-9)

    def test_round_trip_bulk(self, rng):
        v = rng.standard_normal((10_000, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        v = v[v[:, 2] < -0.01]
        err = angular_error(polar_to_vector(vector_to_polar(v)), v)
        assert err.max() < 1e-7

    def test_behind_camera(self):
        with pytest.raises(OutOfFrustum):
            vector_to_polar([0, 0, 1])

    def test_wrap(self):
        np.testing.assert_allclose(wrap_degrees([180, -180, 190, -190, 0]), [180, 180, -170, 170, 0])
