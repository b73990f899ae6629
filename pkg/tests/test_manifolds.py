import numpy as np
import pytest

from riemflow.exceptions import (
    AntipodalPairError,
    DimensionMismatchError,
    NotPositiveDefiniteError,
    ShapeMismatchError,
)
from riemflow.manifolds import (
    IDENTITY_QUATERNION,
    SpdChart,
    align_hemisphere,
    check_spd,
    check_unit_quaternion,
    led_distance,
    lqd_distance,
    mandel_unvec,
    mandel_vec,
    quat_conjugate,
    quat_multiply,
    spd_exp,
    spd_log,
    uq_exp,
    uq_log,
)

from helpers import random_spd, random_symmetric, random_unit_quaternion


class TestSpdMaps:
    def test_log_at_anchor_is_zero(self):
        g = np.diag([100.0, 100.0])
        np.testing.assert_allclose(spd_log(g, g), np.zeros((2, 2)), atol=1e-12)

    def test_log_at_identity_reduces_to_logm(self):
        np.testing.assert_allclose(
            spd_log(np.eye(2), np.diag([np.e, np.e])), np.eye(2), atol=1e-12
        )

    def test_log_commuting_diagonal_oracle(self):
        # g = diag(4,4): g^(-1/2) p g^(-1/2) = diag(8/4, 2/4), and the outer
        # g^(1/2) factors multiply the log by 4.
        t = spd_log(np.diag([4.0, 4.0]), np.diag([8.0, 2.0]))
        np.testing.assert_allclose(t, np.diag([4.0 * np.log(2.0), -4.0 * np.log(2.0)]), atol=1e-12)

    def test_exp_of_zero_is_anchor(self):
        g = random_spd(np.random.default_rng(3), 3, scale=5.0)
        np.testing.assert_allclose(spd_exp(g, np.zeros((3, 3))), g, atol=1e-10)

    def test_exp_at_identity_reduces_to_expm(self):
        np.testing.assert_allclose(
            spd_exp(np.eye(2), np.eye(2)), np.diag([np.e, np.e]), atol=1e-12
        )

    def test_round_trip(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            d = int(rng.integers(2, 4))
            g = random_spd(rng, d, cond_max=100.0, scale=50.0)
            p = random_spd(rng, d, cond_max=100.0, scale=50.0)
            back = spd_exp(g, spd_log(g, p))
            assert np.linalg.norm(back - p) < 1e-8

    def test_chart_matches_one_shot(self):
        rng = np.random.default_rng(7)
        g = random_spd(rng, 2, scale=100.0)
        p = random_spd(rng, 2, scale=100.0)
        chart = SpdChart(g)
        np.testing.assert_array_equal(chart.log(p), spd_log(g, p))
        t = random_symmetric(rng, 2)
        np.testing.assert_array_equal(chart.exp(t), spd_exp(g, t))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            spd_log(np.eye(2), np.eye(3))

    def test_rejects_non_spd(self):
        with pytest.raises(NotPositiveDefiniteError):
            spd_log(np.eye(2), np.diag([1.0, -1.0]))
        with pytest.raises(NotPositiveDefiniteError):
            check_spd(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestQuaternionAlgebra:
    def test_multiply_identity(self):
        q = random_unit_quaternion(np.random.default_rng(1))
        np.testing.assert_array_equal(quat_multiply(q, IDENTITY_QUATERNION), q)

    def test_i_times_j_is_k(self):
        i = np.array([0.0, 1.0, 0.0, 0.0])
        j = np.array([0.0, 0.0, 1.0, 0.0])
        k = np.array([0.0, 0.0, 0.0, 1.0])
        np.testing.assert_array_equal(quat_multiply(i, j), k)

    def test_conjugate_gives_inverse(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            q = random_unit_quaternion(rng)
            np.testing.assert_allclose(
                quat_multiply(q, quat_conjugate(q)), IDENTITY_QUATERNION, atol=1e-14
            )

    def test_product_stays_unit(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            a = random_unit_quaternion(rng)
            b = random_unit_quaternion(rng)
            assert abs(np.linalg.norm(quat_multiply(a, b)) - 1.0) < 1e-12

    def test_check_renormalizes(self):
        q = check_unit_quaternion(np.array([2.0, 0.0, 0.0, 0.0]))
        np.testing.assert_array_equal(q, IDENTITY_QUATERNION)
        with pytest.raises(ShapeMismatchError):
            check_unit_quaternion(np.zeros(4))


class TestQuaternionMaps:
    def test_log_at_anchor_is_zero(self):
        q = random_unit_quaternion(np.random.default_rng(4))
        np.testing.assert_array_equal(uq_log(q, q), np.zeros(3))

    def test_log_quarter_turn_oracle(self):
        p = np.array([np.cos(np.pi / 4), np.sin(np.pi / 4), 0.0, 0.0])
        np.testing.assert_allclose(uq_log(IDENTITY_QUATERNION, p), [np.pi / 4, 0.0, 0.0], atol=1e-15)

    def test_exp_of_zero_is_anchor(self):
        g = random_unit_quaternion(np.random.default_rng(5))
        np.testing.assert_allclose(uq_exp(g, np.zeros(3)), g, atol=1e-15)

    def test_exp_half_turn_oracle(self):
        q = uq_exp(IDENTITY_QUATERNION, np.array([np.pi / 2, 0.0, 0.0]))
        np.testing.assert_allclose(q, [0.0, 1.0, 0.0, 0.0], atol=1e-15)

    def test_exp_always_unit(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            g = random_unit_quaternion(rng)
            t = rng.standard_normal(3)
            n = np.linalg.norm(t)
            if n >= np.pi:
                t *= rng.uniform(0.0, np.pi) / n
            assert abs(np.linalg.norm(uq_exp(g, t)) - 1.0) < 1e-15

    def test_round_trip(self):
        rng = np.random.default_rng(8)
        for _ in range(500):
            g = random_unit_quaternion(rng)
            p = random_unit_quaternion(rng)
            if np.dot(g, p) < 0.0:
                p = -p
            back = uq_exp(g, uq_log(g, p))
            assert min(np.linalg.norm(back - p), np.linalg.norm(back + p)) < 1e-10


class TestMandel:
    def test_diagonal(self):
        np.testing.assert_array_equal(
            mandel_vec(np.array([[1.0, 0.0], [0.0, 2.0]])), [1.0, 2.0, 0.0]
        )

    def test_offdiagonal_factor(self):
        v = mandel_vec(np.array([[0.0, 1.0], [1.0, 0.0]]))
        np.testing.assert_allclose(v, [0.0, 0.0, np.sqrt(2.0)], atol=0.0)

    def test_isometry(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            d = int(rng.integers(2, 5))
            t = random_symmetric(rng, d, scale=3.0)
            assert abs(np.linalg.norm(mandel_vec(t)) - np.linalg.norm(t)) < 1e-12

    def test_round_trip(self):
        # The sqrt(2) scale-then-unscale can move off-diagonals by 1 ulp,
        # so bitwise equality is not attainable; diagonals are untouched.
        rng = np.random.default_rng(10)
        for _ in range(50):
            d = int(rng.integers(2, 5))
            t = random_symmetric(rng, d)
            back = mandel_unvec(mandel_vec(t), d)
            np.testing.assert_array_equal(np.diag(back), np.diag(t))
            np.testing.assert_allclose(back, t, rtol=1e-15, atol=0.0)

    def test_wrong_length_rejected(self):
        with pytest.raises(ShapeMismatchError):
            mandel_unvec(np.zeros(4), 2)


class TestAlignHemisphere:
    def test_aligned_unchanged(self):
        rng = np.random.default_rng(11)
        q = random_unit_quaternion(rng)
        seq = np.stack([q, q, q])
        np.testing.assert_array_equal(align_hemisphere(seq), seq)

    def test_single_flip(self):
        rng = np.random.default_rng(12)
        q = random_unit_quaternion(rng)
        r = uq_exp(IDENTITY_QUATERNION, np.array([0.1, 0.0, 0.0]))
        qr = quat_multiply(q, r)
        if np.dot(q, qr) < 0.0:
            qr = -qr
        out = align_hemisphere(np.stack([q, -qr]))
        np.testing.assert_array_equal(out, np.stack([q, qr]))

    def test_property_on_corrupted_sequences(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            g = random_unit_quaternion(rng)
            steps = rng.standard_normal((30, 3)) * 0.05
            seq = [g]
            for s in steps:
                seq.append(uq_exp(seq[-1], s))
            seq = np.asarray(seq)
            signs = rng.choice([-1.0, 1.0], size=(len(seq), 1))
            corrupted = seq * signs
            out = align_hemisphere(corrupted)
            dots = np.sum(out[:-1] * out[1:], axis=1)
            assert np.all(dots > 0.0)
            # each element kept or negated, nothing else
            same = np.all(out == corrupted, axis=1)
            flipped = np.all(out == -corrupted, axis=1)
            assert np.all(same | flipped)

    def test_orthogonal_pair_rejected(self):
        seq = np.stack([IDENTITY_QUATERNION, np.array([0.0, 1.0, 0.0, 0.0])])
        with pytest.raises(AntipodalPairError):
            align_hemisphere(seq)


class TestDistances:
    def test_led_zero_on_equal(self):
        a = random_spd(np.random.default_rng(14), 2, scale=10.0)
        assert led_distance(a, a) == 0.0

    def test_led_oracle(self):
        assert abs(led_distance(np.eye(2), np.diag([np.e, np.e])) - np.sqrt(2.0)) < 1e-12

    def test_led_symmetry(self):
        rng = np.random.default_rng(15)
        for _ in range(20):
            a = random_spd(rng, 2, scale=10.0)
            b = random_spd(rng, 2, scale=10.0)
            assert abs(led_distance(a, b) - led_distance(b, a)) < 1e-10

    def test_lqd_zero_on_equal_and_negated(self):
        rng = np.random.default_rng(16)
        q = random_unit_quaternion(rng)
        assert lqd_distance(q, q) == 0.0
        assert lqd_distance(q, -q) == 0.0

    def test_lqd_oracle(self):
        i = np.array([0.0, 1.0, 0.0, 0.0])
        assert abs(lqd_distance(IDENTITY_QUATERNION, i) - np.pi) < 1e-12

    def test_lqd_range(self):
        rng = np.random.default_rng(17)
        for _ in range(100):
            d = lqd_distance(random_unit_quaternion(rng), random_unit_quaternion(rng))
            assert 0.0 <= d <= 2.0 * np.pi
