"""
评价指标测试
"""
import math
import numpy as np
import pytest
from scipy import stats
from app.layers.eval_metrics import (
    aligned_segment_corrs, bonferroni_alpha, clip_for_average, cohens_d_prime,
    paired_t_test, pearson, segment_classify, z_average
)
from app.storage.models import TimeSeriesMatrix
from app.utils.errors import (
    BoundaryError, ConfigError, DegenerateVarianceError, InputError, ShapeError
)


class TestPearson:
    """Pearson 相关测试"""

    def test_hand_oracle(self):
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(0.98198, abs=1e-5)

    def test_trivial(self):
        a = np.random.default_rng(0).standard_normal(50)
        assert pearson(a, a) == pytest.approx(1.0)
        assert pearson(a, -a) == pytest.approx(-1.0)

    def test_affine_invariance(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal(100), rng.standard_normal(100)
        assert pearson(3.0 * a + 5.0, 0.5 * b - 2.0) == pytest.approx(pearson(a, b), abs=1e-12)

    def test_errors(self):
        with pytest.raises(DegenerateVarianceError):
            pearson([1, 1, 1], [1, 2, 3])
        with pytest.raises(ShapeError):
            pearson([1, 2], [1, 2, 3])
        with pytest.raises(InputError):
            pearson([1], [1])


class TestZAverage:
    """Fisher z 平均测试"""

    def test_hand_oracle(self):
        assert z_average([0.9, 0.1]) == pytest.approx(0.65657, abs=1e-4)

    def test_idempotent_and_antisymmetric(self):
        assert z_average([0.3, 0.3, 0.3]) == pytest.approx(0.3, abs=1e-15)
        assert z_average([0.4, -0.4]) == 0.0

    def test_order_invariance(self):
        rng = np.random.default_rng(2)
        r = rng.uniform(-0.9, 0.9, 37)
        assert z_average(rng.permutation(r)) == z_average(r)

    def test_boundary(self):
        with pytest.raises(BoundaryError):
            z_average([1.0, 0.2])
        with pytest.raises(InputError):
            z_average([])

    def test_clip_for_average(self):
        clipped = clip_for_average([1.0, -1.0, 0.5])
        assert clipped[0] < 1.0 and clipped[1] > -1.0
        assert clipped[2] == 0.5
        assert math.isfinite(z_average(clipped))


class TestDPrime:
    """d′ 与片段分类测试"""

    def test_unit_case(self):
        a = np.array([0.0, 2.0])
        b = np.array([-1.0, 1.0])
        assert cohens_d_prime(a, b) == pytest.approx(1.0 / math.sqrt(2.0))
        assert cohens_d_prime([0.0, 2.0], [-1.0, 1.0]) == cohens_d_prime([-1.0, 1.0], [0.0, 2.0])

    def test_identical_distributions(self):
        a = np.random.default_rng(3).standard_normal(30)
        assert cohens_d_prime(a, a) == 0.0

    def test_shift_and_scale_invariance(self):
        rng = np.random.default_rng(4)
        a, b = rng.standard_normal(40) + 1.0, rng.standard_normal(40)
        base = cohens_d_prime(a, b)
        assert cohens_d_prime(a + 7.0, b + 7.0) == pytest.approx(base, abs=1e-10)
        assert cohens_d_prime(2.5 * a, 2.5 * b) == pytest.approx(base, abs=1e-10)

    def test_degenerate(self):
        with pytest.raises(DegenerateVarianceError):
            cohens_d_prime([1.0, 1.0], [0.0, 0.0])
        with pytest.raises(InputError):
            cohens_d_prime([1.0], [0.0, 1.0])

    def test_aligned_corrs(self):
        x = np.random.default_rng(5).standard_normal(200)
        corrs = aligned_segment_corrs(x, 2.0 * x, [0, 50, 100], 40)
        np.testing.assert_allclose(corrs, 1.0)

    def test_null_response(self):
        """响应为独立噪声时 d′ ≤ 0.3"""
        rng = np.random.default_rng(6)
        stim = TimeSeriesMatrix(rng.standard_normal(100000), 64.0)
        resp = TimeSeriesMatrix(rng.standard_normal(100000), 64.0)
        res = segment_classify(stim, resp, 5.0, n_segments=200, rng_seed=1)
        assert res.aligned_corrs.shape == (200,)
        assert res.d_prime <= 0.3

    def test_increases_with_segment_length(self):
        """相关响应：片段越长 d′ 越大，30 s 时 d′ > 1"""
        rng = np.random.default_rng(7)
        s = rng.standard_normal(64 * 600)
        stim = TimeSeriesMatrix(s, 64.0)
        resp = TimeSeriesMatrix(s + 3.0 * rng.standard_normal(s.size), 64.0)
        values = [segment_classify(stim, resp, sec, rng_seed=2).d_prime for sec in (1.0, 5.0, 30.0)]
        assert values[0] < values[1] < values[2]
        assert values[2] > 1.0

    def test_misaligned_offsets(self):
        """错位片段的两个起点相距至少一个片段长度"""
        rng = np.random.default_rng(8)
        x = np.cumsum(rng.standard_normal(2000))
        res = segment_classify(x, x, 2.0, n_segments=50, fs_hz=64.0)
        np.testing.assert_allclose(res.aligned_corrs, 1.0)
        assert np.all(res.misaligned_corrs < 1.0 - 1e-9)

    def test_seeded(self):
        rng = np.random.default_rng(9)
        x, y = rng.standard_normal(3000), rng.standard_normal(3000)
        a = segment_classify(x, y, 2.0, rng_seed=5, fs_hz=64.0)
        b = segment_classify(x, y, 2.0, rng_seed=5, fs_hz=64.0)
        assert a.d_prime == b.d_prime

    def test_errors(self):
        x = np.random.default_rng(10).standard_normal(100)
        with pytest.raises(InputError):
            segment_classify(x, x, 1.0, fs_hz=64.0)
        with pytest.raises(ConfigError):
            segment_classify(x, x, 0.1)
        with pytest.raises(ShapeError):
            segment_classify(x, x[:90], 0.1, fs_hz=64.0)


class TestPairedTTest:
    """配对 t 检验测试"""

    def test_large_effect(self):
        jitter = np.array([1e-3, -2e-3, 1.5e-3, -0.5e-3])
        res = paired_t_test(np.ones(4) + jitter, np.zeros(4))
        assert res.p < 0.01
        assert res.t > 0
        assert res.n == 4

    def test_matches_scipy(self):
        rng = np.random.default_rng(11)
        a, b = rng.standard_normal(15) + 0.3, rng.standard_normal(15)
        res = paired_t_test(a, b)
        ref = stats.ttest_rel(a, b, alternative="greater")
        assert res.t == pytest.approx(ref.statistic, rel=1e-10)
        assert res.p == pytest.approx(ref.pvalue, rel=1e-10)
        less = paired_t_test(a, b, alternative="less")
        assert less.p == pytest.approx(1.0 - res.p, abs=1e-12)

    def test_null_calibration(self):
        """零假设下 p 值服从均匀分布（KS 距离 < 0.1）"""
        rng = np.random.default_rng(12)
        p = [paired_t_test(rng.standard_normal(20), rng.standard_normal(20)).p for _ in range(500)]
        assert stats.kstest(p, "uniform").statistic < 0.1

    def test_degenerate(self):
        with pytest.raises(DegenerateVarianceError):
            paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        with pytest.raises(ConfigError):
            paired_t_test([1.0, 2.0], [0.0, 0.5], alternative="two-sided")

    def test_bonferroni(self):
        assert bonferroni_alpha(0.05, 2) == 0.025
        res = paired_t_test([0.3, 0.31, 0.35], [0.2, 0.25, 0.22])
        assert res.significant(bonferroni_alpha(0.05, 2)) == (res.p < 0.025)
        with pytest.raises(ConfigError):
            bonferroni_alpha(0.05, 0)
