#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "ot_oracle.hpp"
#include "support.hpp"

using namespace bams;
using namespace bams::hoa;

namespace {

std::vector<double> random_histogram(std::size_t K, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> h(K);
    double s = 0.0;
    for (double& v : h) s += (v = u(rng) < 0.3 ? 0.0 : u(rng));
    if (s == 0.0) {
        h[0] = 1.0;
        s = 1.0;
    }
    for (double& v : h) v /= s;
    return h;
}

BinningSpec unit_bins(std::size_t K, std::size_t channels, double lo, double hi) {
    BinningSpec b;
    b.bins = K;
    b.lo.assign(channels, lo);
    b.hi.assign(channels, hi);
    return b;
}

}  // namespace

TEST(Binning, UniformSamplesGiveOuterQuantiles) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(20001);
    for (double& x : v) x = u(rng);
    const auto spec = fit_binning({v}, 32);
    // oracle: sorted order statistics with linear interpolation
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    const double pos_lo = 0.01 * (s.size() - 1), pos_hi = 0.99 * (s.size() - 1);
    EXPECT_DOUBLE_EQ(spec.lo[0], s[static_cast<std::size_t>(pos_lo)]);  // integral positions
    EXPECT_DOUBLE_EQ(spec.hi[0], s[static_cast<std::size_t>(pos_hi)]);
    EXPECT_NEAR(spec.lo[0], 0.01, 0.005);
    EXPECT_NEAR(spec.hi[0], 0.99, 0.005);
    EXPECT_EQ(spec.bins, 32u);
}

TEST(Binning, QuantileInterpolatesBetweenOrderStatistics) {
    EXPECT_DOUBLE_EQ(empirical_quantile({4, 1, 3, 2}, 0.5), 2.5);
    EXPECT_DOUBLE_EQ(empirical_quantile({10, 0}, 0.25), 2.5);
}

TEST(Binning, ConstantChannelIsWidened) {
    const auto spec = fit_binning({std::vector<double>(50, 2.0)}, 4);
    EXPECT_LT(spec.lo[0], 2.0);
    EXPECT_GT(spec.hi[0], 2.0);
    EXPECT_GT(spec.width(0), 0.0);
}

TEST(Binning, RejectsBadInputs) {
    EXPECT_THROW(fit_binning({{1.0, 2.0}}, 1), ConfigError);
    EXPECT_THROW(fit_binning({{}}, 4), NumericError);
    EXPECT_THROW(fit_binning({{1.0, 2.0}}, 4, 0.9, 0.1), ConfigError);
}

TEST(Histogram, HandCounts) {
    const auto spec = unit_bins(4, 1, 0.0, 4.0);
    const std::vector<double> y{0.5, 1.5, 1.5, 3.5};
    const auto h = action_histogram(y, spec, 0);
    const std::vector<double> want{0.25, 0.5, 0.0, 0.25};
    for (std::size_t k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(h[k], want[k]);
}

TEST(Histogram, OneHotAndClipping) {
    const auto spec = unit_bins(8, 1, 0.0, 8.0);
    const auto h = action_histogram(std::vector<double>(30, 3.2), spec, 0);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(h[k], k == 3 ? 1.0 : 0.0);
    const auto low = action_histogram(std::vector<double>{-5.0, 100.0}, spec, 0);
    EXPECT_DOUBLE_EQ(low[0], 0.5);
    EXPECT_DOUBLE_EQ(low[7], 0.5);
}

TEST(Histogram, ValidMaskAndOrderInvariance) {
    const auto spec = unit_bins(5, 1, 0.0, 1.0);
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-0.2, 1.2);
    std::vector<double> y(30);
    for (double& v : y) v = u(rng);
    const auto h = action_histogram(y, spec, 0);
    double s = 0.0;
    for (double v : h) s += v;
    EXPECT_NEAR(s, 1.0, 1e-15);
    auto shuffled = y;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    EXPECT_EQ(h, action_histogram(shuffled, spec, 0));

    std::vector<unsigned char> valid(30, 1);
    valid[0] = 0;
    const auto hv = action_histogram(y, spec, 0, valid);
    const auto hd = action_histogram(std::span(y).subspan(1), spec, 0);
    for (std::size_t k = 0; k < 5; ++k) EXPECT_DOUBLE_EQ(hv[k], hd[k]);
    EXPECT_THROW(action_histogram(y, spec, 0, std::vector<unsigned char>(30, 0)), NumericError);
}

TEST(Emd2, HandFixtures) {
    EXPECT_DOUBLE_EQ(emd2(std::vector<double>{1, 0, 0}, std::vector<double>{0, 0, 1}), 2.0);
    EXPECT_DOUBLE_EQ(emd2(std::vector<double>{1, 0, 0}, std::vector<double>{0, 1, 0}), 1.0);
    const std::vector<double> h{0.2, 0.3, 0.5};
    EXPECT_EQ(emd2(h, h), 0.0);
    EXPECT_THROW(emd2(h, std::vector<double>{1.0}), ShapeError);
}

TEST(Emd2, SymmetricNonnegativeAndZeroOnlyForEqualCdfs) {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const std::size_t K = 2 + i % 7;
        const auto a = random_histogram(K, rng), b = random_histogram(K, rng);
        const double ab = emd2(a, b);
        EXPECT_EQ(ab, emd2(b, a));
        EXPECT_GE(ab, 0.0);
        double ca = 0, cb = 0, direct = 0;
        for (std::size_t k = 0; k < K; ++k) {
            ca += a[k];
            cb += b[k];
            direct += (ca - cb) * (ca - cb);
        }
        EXPECT_NEAR(ab, direct, 1e-15);
        if (a != b) {
            EXPECT_GT(ab, 0.0);
        }
    }
}

TEST(Wasserstein1, ShiftedOneHotCostsTheShift) {
    for (std::size_t K = 2; K <= 8; ++K)
        for (std::size_t m = 0; m < K; ++m) {
            std::vector<double> a(K, 0.0), b(K, 0.0);
            a[0] = 1.0;
            b[m] = 1.0;
            EXPECT_DOUBLE_EQ(wasserstein1(a, b), static_cast<double>(m));
            EXPECT_NEAR(bams::testing::transport_cost(a, b), static_cast<double>(m), 1e-12);
        }
}

TEST(Wasserstein1, EqualsBruteForceTransport) {
    std::mt19937_64 rng(4);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const std::size_t K = 2 + static_cast<std::size_t>(i) % 7;
        const auto a = random_histogram(K, rng), b = random_histogram(K, rng);
        worst = std::max(worst, std::abs(wasserstein1(a, b) - bams::testing::transport_cost(a, b)));
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(HoaLoss, PerfectPredictionIsZero) {
    std::mt19937_64 rng(5);
    std::vector<double> t;
    for (int r = 0; r < 6; ++r) {
        const auto h = random_histogram(4, rng);
        t.insert(t.end(), h.begin(), h.end());
    }
    const auto pred = Tensor::from({3, 2, 4}, t);
    const std::vector<unsigned char> mask(3, 1);
    EXPECT_NEAR(hoa_loss(pred, t, mask).item(), 0.0, 1e-30);
}

TEST(HoaLoss, SumsOverChannels) {
    // channel 0: emd2 = 2, channel 1: emd2 = 1
    const std::vector<double> target{1, 0, 0, 1, 0, 0};
    const auto pred = Tensor::from({1, 2, 3}, {0, 0, 1, 0, 1, 0});
    EXPECT_DOUBLE_EQ(hoa_loss(pred, target, std::vector<unsigned char>{1}).item(), 3.0);
}

TEST(HoaLoss, MaskedAnchorContributesNothing) {
    std::mt19937_64 rng(6);
    std::vector<double> t, p;
    for (int r = 0; r < 4; ++r) {
        auto a = random_histogram(5, rng), b = random_histogram(5, rng);
        t.insert(t.end(), a.begin(), a.end());
        p.insert(p.end(), b.begin(), b.end());
    }
    const std::vector<unsigned char> mask{1, 0};
    const double base = hoa_loss(Tensor::from({2, 2, 5}, p), t, mask).item();
    for (std::size_t i = 10; i < 20; ++i) p[i] = i % 5 == 0 ? 1.0 : 0.0;
    EXPECT_EQ(hoa_loss(Tensor::from({2, 2, 5}, p), t, mask).item(), base);

    std::size_t empty = 0;
    EXPECT_EQ(hoa_loss(Tensor::from({2, 2, 5}, p), t, std::vector<unsigned char>{0, 0}, &empty).item(), 0.0);
    EXPECT_EQ(empty, 1u);
}

TEST(HoaLoss, LastTargetCdfIsPinnedToOne) {
    // target mass slightly short of 1; the pinned CDF makes the last term vanish
    const std::vector<double> target{0.5, 0.5 - 1e-9};
    const auto pred = Tensor::from({1, 1, 2}, {0.5, 0.5});
    EXPECT_NEAR(hoa_loss(pred, target, std::vector<unsigned char>{1}).item(), 0.0, 1e-30);
}

TEST(HoaLoss, GradientThroughSoftmaxMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    auto logits = bams::testing::random_tensor({3, 2, 6}, rng);
    std::vector<double> t;
    for (int r = 0; r < 6; ++r) {
        const auto h = random_histogram(6, rng);
        t.insert(t.end(), h.begin(), h.end());
    }
    const std::vector<unsigned char> mask{1, 0, 1};
    auto fn = [&] { return hoa_loss(ops::softmax_rows(logits), t, mask); };
    EXPECT_LT(grad_check(fn, {logits}).max_rel_error, 1e-4);
}

TEST(HoaLoss, ShapeErrors) {
    EXPECT_THROW(hoa_loss(Tensor::zeros({2, 3}), std::vector<double>(6), std::vector<unsigned char>(2)), ShapeError);
    EXPECT_THROW(hoa_loss(Tensor::zeros({1, 1, 3}), std::vector<double>(2), std::vector<unsigned char>(1)), ShapeError);
}
