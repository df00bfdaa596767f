import numpy as np
import pytest

from tridiff.convex import ConvexProxy, signed_distance
from tridiff.metrics import (
    FeatureSet,
    MetricReport,
    acc_contact,
    cov,
    diversity,
    e_center,
    e_v2v,
    human_features,
    mmd,
    mpjpe,
    mpjpe_pa,
    multimodality,
    nn_baseline,
    object_features,
    one_nna,
    penetration_report,
)


def fs(x, kind="object"):
    return FeatureSet(kind, np.atleast_2d(np.asarray(x, dtype=float)))


# ---------- independent brute-force oracles ----------

def oracle_cov(gen, ref):
    matched = set()
    for g in gen:
        best, best_d = None, np.inf
        for k, r in enumerate(ref):
            d = np.linalg.norm(g - r)
            if d < best_d:
                best, best_d = k, d
        matched.add(best)
    return 100.0 * len(matched) / len(ref)


def oracle_mmd(gen, ref):
    total = 0.0
    for r in ref:
        total += min(np.linalg.norm(g - r) for g in gen)
    return total / len(ref)


def oracle_one_nna(gen, ref):
    union = [(g, "g") for g in gen] + [(r, "r") for r in ref]
    correct = 0
    for idx, (x, tag) in enumerate(union):
        best, best_d = None, np.inf
        for jdx, (y, tag2) in enumerate(union):
            if jdx == idx:
                continue
            d = np.linalg.norm(x - y)
            if d < best_d:
                best, best_d = tag2, d
        correct += best == tag
    return 100.0 * correct / len(union)


class TestCov:
    def test_identical_sets(self):
        x = np.random.default_rng(0).normal(size=(20, 4))
        assert cov(fs(x), fs(x)) == 100.0

    def test_hand_case(self):
        assert cov(fs([[1.0]]), fs([[0.0], [10.0]])) == 50.0

    def test_pigeonhole_floor(self):
        gen = np.zeros((7, 2))
        ref = np.vstack([np.zeros(2), np.full((9, 2), 50.0)])
        assert cov(fs(gen), fs(ref)) == pytest.approx(100.0 / 10)

    def test_matches_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            gen = rng.normal(size=(rng.integers(2, 30), 3))
            ref = rng.normal(size=(rng.integers(2, 30), 3))
            assert cov(fs(gen), fs(ref)) == pytest.approx(oracle_cov(gen, ref))

    def test_kind_mismatch(self):
        with pytest.raises(ValueError, match="kind"):
            cov(fs([[1.0]], "human"), fs([[1.0]], "object"))


class TestMmd:
    def test_identical_sets_zero(self):
        x = np.random.default_rng(2).normal(size=(15, 3))
        assert mmd(fs(x), fs(x)) == 0.0

    def test_hand_case(self):
        assert mmd(fs([[1.0]]), fs([[0.0], [2.0]])) == pytest.approx(1.0)

    def test_duplicate_best_leaves_value(self):
        gen = np.array([[0.0], [5.0]])
        ref = np.array([[0.1], [4.9]])
        base = mmd(fs(gen), fs(ref))
        dup = mmd(fs(np.vstack([gen, gen[:1]])), fs(ref))
        assert base == pytest.approx(dup)

    def test_matches_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            gen = rng.normal(size=(rng.integers(2, 25), 4))
            ref = rng.normal(size=(rng.integers(2, 25), 4))
            assert mmd(fs(gen), fs(ref)) == pytest.approx(oracle_mmd(gen, ref), rel=1e-12)


class TestOneNNA:
    def test_separable_sets(self):
        assert one_nna(fs([[0.0], [1.0]]), fs([[100.0], [101.0]])) == 100.0

    def test_single_pair(self):
        assert one_nna(fs([[0.0]]), fs([[100.0]])) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        gen = rng.normal(size=(12, 3))
        ref = rng.normal(size=(12, 3))
        assert one_nna(fs(gen), fs(ref)) == one_nna(fs(ref), fs(gen))

    def test_same_distribution_near_50(self):
        rng = np.random.default_rng(5)
        gen = rng.normal(size=(500, 2))
        ref = rng.normal(size=(500, 2))
        assert abs(one_nna(fs(gen), fs(ref)) - 50.0) <= 5.0

    def test_matches_oracle(self):
        rng = np.random.default_rng(6)
        for _ in range(8):
            n = int(rng.integers(2, 15))
            gen = rng.normal(size=(n, 3))
            ref = rng.normal(size=(n, 3))
            assert one_nna(fs(gen), fs(ref)) == pytest.approx(oracle_one_nna(gen, ref))

    def test_size_mismatch(self):
        with pytest.raises(ValueError):
            one_nna(fs([[0.0], [1.0]]), fs([[0.0]]))


class TestDiversity:
    def test_identical_samples_zero(self):
        x = np.ones((20, 3))
        assert diversity(fs(x), np.random.default_rng(0), subset_size=5) == 0.0

    def test_two_point_set(self):
        a, b = np.array([0.0, 0.0]), np.array([3.0, 4.0])
        val = diversity(fs([a, b]), np.random.default_rng(1), subset_size=1)
        assert val == pytest.approx(5.0)

    def test_insufficient(self):
        with pytest.raises(ValueError, match="insufficient"):
            diversity(fs(np.zeros((5, 2))), np.random.default_rng(0), subset_size=3)

    def test_single_class_mmod_equals_div(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(30, 3))
        div = diversity(fs(x), np.random.default_rng(42), subset_size=10)
        mmod = multimodality(fs(x), np.zeros(30), np.random.default_rng(42),
                             subset_size=10)
        assert div == pytest.approx(mmod)

    def test_mmod_averages_classes(self):
        rng = np.random.default_rng(8)
        x = np.vstack([rng.normal(size=(20, 2)), 10 + rng.normal(size=(20, 2))])
        labels = np.array([0] * 20 + [1] * 20)
        val = multimodality(fs(x), labels, np.random.default_rng(0), subset_size=5)
        assert 0 < val < 10  # within-class scale, not the 10-unit class gap


class TestPoseErrors:
    def test_identity_zero(self):
        j = np.random.default_rng(9).normal(size=(52, 3))
        assert mpjpe(j, j) == 0.0
        assert mpjpe_pa(j, j) == pytest.approx(0.0, abs=1e-9)

    def test_rigid_rotation_removed_by_pa(self):
        from tridiff.rotations import axis_angle_to_matrix

        j = np.random.default_rng(10).normal(size=(30, 3))
        rot = axis_angle_to_matrix(np.array([0.4, -0.1, 0.8]))
        rotated = j @ rot.T + np.array([0.3, 0.0, -0.2])
        assert mpjpe(rotated, j) > 1.0
        assert mpjpe_pa(rotated, j) == pytest.approx(0.0, abs=1e-6)

    def test_uniform_offset_one_cm(self):
        j = np.random.default_rng(11).normal(size=(10, 3))
        assert mpjpe(j + [0.01, 0.0, 0.0], j) == pytest.approx(1.0)

    def test_pa_never_worse(self):
        rng = np.random.default_rng(12)
        for _ in range(20):
            a = rng.normal(size=(8, 3))
            b = rng.normal(size=(8, 3))
            assert mpjpe_pa(a, b) <= mpjpe(a, b) + 1e-9


class TestObjectErrors:
    def test_identical(self):
        v = np.random.default_rng(13).normal(size=(40, 3))
        assert e_v2v(v, v) == 0.0
        assert e_center(v, v) == 0.0

    def test_translation_pythagoras(self):
        v = np.random.default_rng(14).normal(size=(25, 3))
        moved = v + np.array([0.03, 0.04, 0.0])
        assert e_v2v(moved, v) == pytest.approx(5.0)
        assert e_center(moved, v) == pytest.approx(5.0)

    def test_rotation_about_centroid(self):
        from tridiff.rotations import axis_angle_to_matrix

        rng = np.random.default_rng(15)
        v = rng.normal(size=(30, 3))
        center = v.mean(0)
        rot = axis_angle_to_matrix(np.array([0.0, 0.5, 0.0]))
        spun = (v - center) @ rot.T + center
        assert e_center(spun, v) == pytest.approx(0.0, abs=1e-9)
        assert e_v2v(spun, v) > 0.1

    def test_count_mismatch(self):
        with pytest.raises(ValueError):
            e_v2v(np.zeros((5, 3)), np.zeros((6, 3)))


class TestAccContact:
    def test_identical(self):
        c = (np.random.default_rng(16).uniform(size=690) < 0.1).astype(float)
        assert acc_contact(c, c) == 100.0

    def test_complement(self):
        c = np.zeros(690)
        c[:100] = 1.0
        assert acc_contact(1.0 - c, c) == 0.0

    def test_half_flipped(self):
        c = np.zeros(690)
        flipped = c.copy()
        flipped[:345] = 1.0
        assert acc_contact(flipped, c) == 50.0

    def test_probabilities_thresholded(self):
        gt = np.array([1.0, 0.0, 1.0, 0.0])
        probs = np.array([0.9, 0.2, 0.51, 0.49])
        assert acc_contact(probs, gt) == 100.0


class TestNNBaseline:
    def test_query_in_set(self):
        x = np.random.default_rng(17).normal(size=(50, 6))
        assert nn_baseline(x[17], fs(x)) == 17

    def test_tie_lowest_index(self):
        train = fs([[1.0], [1.0], [3.0]])
        assert nn_baseline(np.array([1.0]), train) == 0

    def test_matches_linear_scan(self):
        rng = np.random.default_rng(18)
        train = rng.normal(size=(100, 5))
        for _ in range(10):
            q = rng.normal(size=5)
            expected = min(range(100), key=lambda k: float(np.linalg.norm(train[k] - q)))
            assert nn_baseline(q, fs(train)) == expected

    def test_empty(self):
        with pytest.raises(ValueError):
            nn_baseline(np.zeros(3), FeatureSet("object", np.zeros((0, 3))))


CUBE = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5)
                 for z in (-0.5, 0.5)])


class TestSignedDistance:
    def test_outside_face(self):
        proxy = ConvexProxy.from_points(CUBE)
        sd = signed_distance(np.array([[1.0, 0.0, 0.0]]), proxy)
        assert sd[0] == pytest.approx(0.5, abs=1e-12)

    def test_outside_corner_exact(self):
        proxy = ConvexProxy.from_points(CUBE)
        sd = signed_distance(np.array([[1.0, 1.0, 1.0]]), proxy)
        assert sd[0] == pytest.approx(np.sqrt(3) * 0.5, abs=1e-9)

    def test_inside_negative(self):
        proxy = ConvexProxy.from_points(CUBE)
        sd = signed_distance(np.array([[0.0, 0.0, 0.0], [0.4, 0.0, 0.0]]), proxy)
        assert sd[0] == pytest.approx(-0.5, abs=1e-12)
        assert sd[1] == pytest.approx(-0.1, abs=1e-9)

    def test_on_surface_zero(self):
        proxy = ConvexProxy.from_points(CUBE)
        sd = signed_distance(np.array([[0.5, 0.0, 0.0]]), proxy)
        assert abs(sd[0]) < 1e-12

    def test_degenerate_hull(self):
        flat = np.random.default_rng(19).normal(size=(10, 2))
        coplanar = np.hstack([flat, np.zeros((10, 1))])
        with pytest.raises(ValueError, match="degenerate hull"):
            ConvexProxy.from_points(coplanar)


class TestPenetrationReport:
    def test_far_human_no_contact(self):
        v = np.full((10, 3), 5.0)
        rep = penetration_report([(v, CUBE)])
        assert rep.contact_pct == 0.0
        assert rep.depth_cm == 0.0
        assert rep.score_cm == 0.0
        assert rep.min_distance_cm > 100.0

    def test_vertex_one_cm_inside(self):
        v = np.array([[0.49, 0.0, 0.0], [3.0, 0.0, 0.0]])
        rep = penetration_report([(v, CUBE)])
        assert rep.depth_cm == pytest.approx(1.0, abs=1e-6)
        assert rep.contact_pct == 100.0
        assert rep.score_cm == pytest.approx(100.0 * 0.01 / 2, abs=1e-6)

    def test_vertex_on_surface(self):
        v = np.array([[0.5, 0.0, 0.0]])
        rep = penetration_report([(v, CUBE)])
        assert rep.min_distance_cm == pytest.approx(0.0, abs=1e-9)
        assert rep.depth_cm == pytest.approx(0.0, abs=1e-9)


class TestFeatures:
    def test_human_features_root_centered(self):
        from tridiff.body import build_body_model
        from tridiff.geometry import HumanParams, Pose6DoF, skin_body

        model = build_body_model()
        base = skin_body(model, HumanParams.rest())
        moved = skin_body(model, HumanParams(
            np.zeros((51, 3)), np.zeros(10),
            Pose6DoF(np.array([2.0, 0.0, 0.0]), np.array([1.0, 0, 0, 0, 1, 0]))))
        f = human_features(model, np.stack([base, moved]))
        assert f.kind == "human"
        assert np.allclose(f.x[0], f.x[1], atol=1e-9)  # translation invariant

    def test_object_features_are_pose(self):
        g = np.random.default_rng(20).normal(size=(4, 9))
        f = object_features(g)
        assert f.kind == "object"
        assert np.array_equal(f.x, g)


def test_metric_report_render():
    report = MetricReport()
    report.add("cov", [47.0, 49.0, 48.0], samples=200)
    report.add("mmd", 0.5, samples=200)
    text = report.render_text()
    assert "cov" in text and "runs=3" in text
    kv = report.to_kv()
    assert kv["cov"] == pytest.approx(48.0)
    assert kv["cov_runs"] == 3
    assert "mmd_std" not in kv
