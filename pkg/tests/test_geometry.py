import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import orthogonal_procrustes

from tridiff.body import build_body_model
from tridiff.geometry import (
    HumanParams,
    ObjectParams,
    Pose6DoF,
    interpolate_keyframes,
    mirror_sample,
    parts_in_contact,
    place_object,
    procrustes_align,
    skin_body,
    threshold_contacts,
    vertex_distances,
)
from tridiff.rotations import axis_angle_to_matrix, matrix_to_rot6d


@pytest.fixture(scope="module")
def model():
    return build_body_model()


def brute_force_distances(a, b):
    """Oracle: exhaustive double loop over the textbook formula."""
    import math

    out = np.empty(len(a))
    for j, p in enumerate(a):
        best = np.inf
        for q in b:
            dx, dy, dz = p[0] - q[0], p[1] - q[1], p[2] - q[2]
            best = min(best, math.sqrt(dx * dx + dy * dy + dz * dz))
        out[j] = best
    return out


class TestVertexDistances:
    def test_single_point(self):
        a = np.zeros((1, 3))
        assert np.allclose(vertex_distances(a, np.array([[0.0, 0.0, 1.0]])), [1.0])

    def test_coincident(self):
        pts = np.array([[1.0, 2.0, 3.0]])
        assert vertex_distances(pts, np.vstack([pts, [[5, 5, 5]]]))[0] == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.normal(size=(rng.integers(1, 50), 3))
            b = rng.normal(size=(rng.integers(1, 80), 3))
            assert np.array_equal(vertex_distances(a, b), brute_force_distances(a, b))

    def test_empty_object_errors(self):
        with pytest.raises(ValueError):
            vertex_distances(np.zeros((3, 3)), np.zeros((0, 3)))


class TestContacts:
    def test_threshold(self):
        assert np.array_equal(threshold_contacts([0.01, 0.05], 0.02), [1.0, 0.0])

    def test_all_above(self):
        assert threshold_contacts(np.full(10, 0.5), 0.02).sum() == 0

    def test_boundary_inclusive(self):
        assert threshold_contacts([0.02], 0.02)[0] == 1.0

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            threshold_contacts([0.1], 0.0)

    def test_parts_empty(self, model):
        assert parts_in_contact(np.zeros(690), model) == set()

    def test_parts_single_vertex(self, model):
        c = np.zeros(690)
        c[model.vertices_of_part("left_hand")[0]] = 1.0
        assert parts_in_contact(c, model) == {"left_hand"}

    def test_parts_full_map(self, model):
        assert parts_in_contact(np.ones(690), model) == set(model.part_names)


class TestPlaceObject:
    def test_identity(self):
        pts = np.random.default_rng(1).normal(size=(10, 3))
        assert np.allclose(place_object(pts, ObjectParams()), pts, atol=1e-12)

    def test_translation(self):
        pts = np.random.default_rng(2).normal(size=(10, 3))
        o = ObjectParams(Pose6DoF(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0, 0, 0, 1, 0])))
        assert np.allclose(place_object(pts, o), pts + [1, 2, 3], atol=1e-12)

    def test_180_about_z(self):
        pts = np.random.default_rng(3).normal(size=(10, 3))
        o = ObjectParams(Pose6DoF(np.zeros(3), np.array([-1.0, 0, 0, 0, -1.0, 0])))
        expected = pts * np.array([-1.0, -1.0, 1.0])
        assert np.allclose(place_object(pts, o), expected, atol=1e-12)


class TestMirrorSample:
    def _random_sample(self, rng):
        h = HumanParams(rng.normal(0, 0.3, (51, 3)), rng.normal(0, 0.5, 10),
                        Pose6DoF(rng.normal(size=3), rng.normal(size=6)))
        o = ObjectParams(Pose6DoF(rng.normal(size=3), rng.normal(size=6)))
        c = (rng.uniform(size=690) < 0.05).astype(np.float64)
        return h, o, c

    def test_involution_bit_exact(self, model):
        rng = np.random.default_rng(4)
        for _ in range(25):
            h, o, c = self._random_sample(rng)
            h2, o2, c2 = mirror_sample(*mirror_sample(h, o, c, model), model)
            assert np.array_equal(h2.theta, h.theta)
            assert np.array_equal(h2.beta, h.beta)
            assert np.array_equal(h2.g_h.as_vector(), h.g_h.as_vector())
            assert np.array_equal(o2.g_o.as_vector(), o.g_o.as_vector())
            assert np.array_equal(c2, c)

    def test_translation_flips_x(self, model):
        h = HumanParams(np.zeros((51, 3)), np.zeros(10),
                        Pose6DoF(np.array([1.0, 2.0, 3.0]), np.array([1.0, 0, 0, 0, 1, 0])))
        hm, _, _ = mirror_sample(h, ObjectParams(), np.zeros(690), model)
        assert np.array_equal(hm.g_h.translation, [-1.0, 2.0, 3.0])

    def test_left_contact_becomes_right(self, model):
        c = np.zeros(690)
        c[model.vertices_of_part("left_hand")] = 1.0
        _, _, cm = mirror_sample(HumanParams.rest(), ObjectParams(), c, model)
        assert parts_in_contact(cm, model) == {"right_hand"}
        assert cm.sum() == c.sum()

    def test_mirrored_skin_is_reflection(self, model):
        rng = np.random.default_rng(5)
        h, o, c = self._random_sample(rng)
        hm, _, _ = mirror_sample(h, o, c, model)
        v = skin_body(model, h)
        vm = skin_body(model, hm)
        assert np.array_equal(vm, (v * np.array([-1.0, 1.0, 1.0]))[model.mirror_map])


def oracle_procrustes(a, b):
    """Independent closed-form similarity alignment via scipy's orthogonal
    Procrustes on centered data plus explicit scale/translation recovery."""
    mu_a, mu_b = a.mean(0), b.mean(0)
    a0, b0 = a - mu_a, b - mu_b
    rot_t, _ = orthogonal_procrustes(a0, b0)
    if np.linalg.det(rot_t) < 0:  # force a proper rotation
        u, s, vt = np.linalg.svd(b0.T @ a0)
        d = np.eye(3)
        d[2, 2] = -1.0
        rot = u @ d @ vt
    else:
        rot = rot_t.T
    num = np.trace(rot @ (b0.T @ a0).T)
    scale = num / (a0**2).sum()
    return scale * a @ rot.T + (mu_b - scale * rot @ mu_a)


class TestProcrustes:
    def test_recovers_rigid_copy(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(8, 3))
        rot = axis_angle_to_matrix(np.array([0.3, -0.2, 0.9]))
        b = a @ rot.T + np.array([1.0, -2.0, 0.5])
        assert np.linalg.norm(procrustes_align(a, b) - b) < 1e-9

    def test_absorbs_scale(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(6, 3))
        assert np.linalg.norm(procrustes_align(a, 2.0 * a) - 2.0 * a) < 1e-9

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            a = rng.normal(size=(5, 3))
            b = rng.normal(size=(5, 3))
            got = procrustes_align(a, b)
            expected = oracle_procrustes(a, b)
            assert np.allclose(got, expected, atol=1e-8)

    def test_residual_invariant_to_pre_similarity(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(10, 3))
        b = rng.normal(size=(10, 3))
        base = np.linalg.norm(procrustes_align(a, b) - b)
        rot = axis_angle_to_matrix(np.array([0.1, 0.7, -0.4]))
        a2 = 1.7 * a @ rot.T + np.array([3.0, 1.0, -2.0])
        assert abs(np.linalg.norm(procrustes_align(a2, b) - b) - base) < 1e-6

    def test_collinear_errors(self):
        a = np.outer(np.arange(5.0), np.array([1.0, 1.0, 0.0]))
        b = np.random.default_rng(10).normal(size=(5, 3))
        with pytest.raises(ValueError, match="degenerate"):
            procrustes_align(a, b)

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            procrustes_align(np.zeros((2, 3)), np.zeros((2, 3)))


class TestKeyframes:
    def _keys(self):
        poses = [
            Pose6DoF(np.zeros(3), np.array([1.0, 0, 0, 0, 1, 0])),
            Pose6DoF(np.array([2.0, 0.0, 0.0]),
                     matrix_to_rot6d(axis_angle_to_matrix(np.array([0, 0, np.pi / 2])))),
            Pose6DoF(np.array([2.0, 2.0, 0.0]),
                     matrix_to_rot6d(axis_angle_to_matrix(np.array([0, 0, np.pi / 2])))),
        ]
        return poses, np.array([0.0, 1.0, 3.0])

    def test_exact_at_keys(self):
        poses, times = self._keys()
        for k, t in enumerate(times):
            got = interpolate_keyframes(poses, times, t)
            assert np.array_equal(got.as_vector(), poses[k].as_vector())

    def test_midpoint_rotation_is_half_angle(self):
        poses, times = self._keys()
        got = interpolate_keyframes(poses, times, 0.5)
        expected = axis_angle_to_matrix(np.array([0, 0, np.pi / 4]))
        assert np.allclose(got.matrix(), expected, atol=1e-9)

    def test_midpoint_translation_linear(self):
        poses, times = self._keys()
        got = interpolate_keyframes(poses, times, 0.5)
        assert np.allclose(got.translation, [1.0, 0.0, 0.0], atol=1e-12)

    def test_out_of_range(self):
        poses, times = self._keys()
        with pytest.raises(ValueError, match="outside"):
            interpolate_keyframes(poses, times, -0.1)
        with pytest.raises(ValueError, match="outside"):
            interpolate_keyframes(poses, times, 3.1)

    def test_duplicate_timestamps(self):
        poses, _ = self._keys()
        with pytest.raises(ValueError, match="strictly increasing"):
            interpolate_keyframes(poses, np.array([0.0, 0.0, 1.0]), 0.5)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_distances_nonnegative_and_tight(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(7, 3))
    b = rng.normal(size=(5, 3))
    d = vertex_distances(a, b)
    assert np.all(d >= 0)
    assert np.allclose(d, brute_force_distances(a, b))
