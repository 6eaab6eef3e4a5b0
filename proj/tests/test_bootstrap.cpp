#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <random>

#include "support.hpp"

using namespace bams;
using namespace bams::bootstrap;
using bams::testing::random_tensor;

TEST(Positives, ShortOffsetsAreUniform) {
    std::mt19937_64 rng(1);
    const std::vector<unsigned char> valid(200, 1);
    const std::vector<std::size_t> anchors(11000, 100);
    const auto plan = sample_positives(rng, valid, anchors, 5);
    std::map<long, double> counts;
    for (const auto& e : plan.entries) counts[e.offset()] += 1.0;
    ASSERT_EQ(counts.size(), 11u);
    EXPECT_EQ(counts.begin()->first, -5);
    EXPECT_EQ(counts.rbegin()->first, 5);
    double chi2 = 0.0;
    for (const auto& [d, c] : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
    EXPECT_LT(chi2, 29.59);  // df 10, p = 0.001
}

TEST(Positives, EdgeAnchorsStayInBounds) {
    std::mt19937_64 rng(2);
    const std::vector<unsigned char> valid(50, 1);
    const auto plan = sample_positives(rng, valid, std::vector<std::size_t>(500, 0), 3);
    std::map<std::size_t, int> seen;
    for (const auto& e : plan.entries) ++seen[e.short_target];
    EXPECT_EQ(seen.size(), 4u);
    EXPECT_EQ(seen.begin()->first, 0u);
    EXPECT_EQ(seen.rbegin()->first, 3u);
    const auto end = sample_positives(rng, valid, std::vector<std::size_t>(500, 49), 3);
    for (const auto& e : end.entries) EXPECT_GE(e.short_target, 46u);
}

TEST(Positives, LongTargetsCoverValidFrames) {
    std::mt19937_64 rng(3);
    std::vector<unsigned char> valid(40, 1);
    valid[7] = valid[8] = 0;
    const auto plan = sample_positives(rng, valid, std::vector<std::size_t>(4000, 20), 2);
    std::map<std::size_t, int> seen;
    for (const auto& e : plan.entries) ++seen[e.long_target];
    EXPECT_EQ(seen.size(), 38u);
    EXPECT_EQ(seen.count(7), 0u);
    EXPECT_EQ(seen.count(8), 0u);
    for (const auto& [t, c] : seen) EXPECT_NEAR(c, 4000.0 / 38.0, 40.0);
}

TEST(Positives, InvalidAnchorsAreDroppedAndInvalidTargetsAvoided) {
    std::mt19937_64 rng(4);
    std::vector<unsigned char> valid(30, 1);
    valid[10] = valid[11] = 0;
    const auto plan = sample_positives(rng, valid, std::vector<std::size_t>{10, 12, 12, 12, 99}, 2);
    EXPECT_EQ(plan.dropped, 2u);
    EXPECT_EQ(plan.entries.size(), 3u);
    for (const auto& e : plan.entries) {
        EXPECT_TRUE(valid[e.short_target]);
        EXPECT_TRUE(valid[e.long_target]);
    }
    EXPECT_THROW(sample_positives(rng, valid, std::vector<std::size_t>{3}, 0), ConfigError);
}

TEST(Positives, Deterministic) {
    const std::vector<unsigned char> valid(100, 1);
    const std::vector<std::size_t> anchors{5, 50, 95};
    std::mt19937_64 a(7), b(7);
    const auto pa = sample_positives(a, valid, anchors, 4), pb = sample_positives(b, valid, anchors, 4);
    EXPECT_EQ(pa.short_targets(), pb.short_targets());
    EXPECT_EQ(pa.long_targets(), pb.long_targets());
}

TEST(LatentLoss, HandValues) {
    const std::vector<double> x{1.0, 0.0}, same{3.0, 0.0}, opposite{-2.0, 0.0}, orth{0.0, 5.0};
    EXPECT_DOUBLE_EQ(latent_predictive_loss(x, same), 0.0);
    EXPECT_DOUBLE_EQ(latent_predictive_loss(x, opposite), 4.0);
    EXPECT_DOUBLE_EQ(latent_predictive_loss(x, orth), 2.0);
    // zero prediction: the guarded norm keeps it finite, distance to a unit vector is 1
    EXPECT_DOUBLE_EQ(latent_predictive_loss(std::vector<double>{0.0, 0.0}, x), 1.0);
    EXPECT_THROW(latent_predictive_loss(x, std::vector<double>{1.0}), ShapeError);
}

TEST(LatentLoss, BoundedAndScaleInvariant) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    for (int i = 0; i < 500; ++i) {
        std::vector<double> a(6), b(6);
        for (auto& v : a) v = n(rng);
        for (auto& v : b) v = n(rng);
        const double l = latent_predictive_loss(a, b);
        EXPECT_GE(l, 0.0);
        EXPECT_LE(l, 4.0 + 1e-12);
        auto a2 = a;
        for (auto& v : a2) v *= 7.5;
        EXPECT_NEAR(latent_predictive_loss(a2, b), l, 1e-12);
    }
}

TEST(LatentLoss, TensorVersionMatchesScalarMean) {
    std::mt19937_64 rng(6);
    const auto p = random_tensor({4, 5}, rng), t = random_tensor({4, 5}, rng, false);
    double mean = 0.0;
    for (std::size_t r = 0; r < 4; ++r)
        mean += latent_predictive_loss(p.data().subspan(r * 5, 5), t.data().subspan(r * 5, 5)) / 4.0;
    EXPECT_NEAR(latent_predictive_loss(p, t).item(), mean, 1e-14);
    std::size_t empty = 0;
    EXPECT_EQ(latent_predictive_loss(Tensor::zeros({0, 5}), Tensor::zeros({0, 5}), &empty).item(), 0.0);
    EXPECT_EQ(empty, 1u);
}

TEST(LatentLoss, GradientMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    const auto p = random_tensor({3, 4}, rng), t = random_tensor({3, 4}, rng, false);
    EXPECT_LT(grad_check([&] { return latent_predictive_loss(p, t); }, {p}).max_rel_error, 1e-4);
}

TEST(LatentLoss, TargetsReceiveNoGradient) {
    BamsModel model(bams::testing::tiny_model_config(3, 1));
    std::mt19937_64 rng(8);
    BamsModel::Encoded enc{random_tensor({8, 30}, rng), random_tensor({8, 30}, rng)};
    PositivePlan plan;
    plan.window = 5;
    plan.entries = {{2, 20, 25}, {3, 21, 26}};
    const auto l = bootstrap_losses(model, enc, plan);
    ops::add(l.short_term, l.long_term).backward();
    for (const auto* z : {&enc.z_short, &enc.z_long}) {
        const auto g = z->grad();
        for (std::size_t d = 0; d < 8; ++d)
            for (std::size_t t = 0; t < 30; ++t) {
                if (t == 2 || t == 3) continue;
                EXPECT_EQ(g[d * 30 + t], 0.0) << "d=" << d << " t=" << t;
            }
        double anchor_mass = 0.0;
        for (std::size_t d = 0; d < 8; ++d) anchor_mass += std::abs(g[d * 30 + 2]);
        EXPECT_GT(anchor_mass, 0.0);
    }
}

TEST(LatentLoss, EachTimescaleReadsOnlyItsOwnEmbedding) {
    BamsModel model(bams::testing::tiny_model_config(3, 1));
    std::mt19937_64 rng(9);
    BamsModel::Encoded enc{random_tensor({8, 30}, rng, false), random_tensor({8, 30}, rng, false)};
    std::mt19937_64 prng(10);
    const auto plan = sample_positives(prng, std::vector<unsigned char>(30, 1), std::vector<std::size_t>{4, 9, 17, 28}, 5);
    const auto a = bootstrap_losses(model, enc, plan);
    BamsModel::Encoded other{enc.z_short, random_tensor({8, 30}, rng, false)};
    const auto b = bootstrap_losses(model, other, plan);
    EXPECT_EQ(a.short_term.item(), b.short_term.item());
    EXPECT_NE(a.long_term.item(), b.long_term.item());
    BamsModel::Encoded third{random_tensor({8, 30}, rng, false), enc.z_long};
    const auto c = bootstrap_losses(model, third, plan);
    EXPECT_NE(a.short_term.item(), c.short_term.item());
    EXPECT_EQ(a.long_term.item(), c.long_term.item());
}

TEST(LatentLoss, PredictorOnlyTrainingDecreasesTheLoss) {
    BamsModel model(bams::testing::tiny_model_config(3, 1));
    std::mt19937_64 rng(11);
    BamsModel::Encoded enc{random_tensor({8, 40}, rng, false), random_tensor({8, 40}, rng, false)};
    std::mt19937_64 prng(12);
    std::vector<std::size_t> anchors(40);
    std::iota(anchors.begin(), anchors.end(), 0);
    const auto plan = sample_positives(prng, std::vector<unsigned char>(40, 1), anchors, 3);
    Adam adam;
    double prev = 1e9, first = 0.0;
    for (int it = 0; it < 60; ++it) {
        model.parameters().zero_grad();
        const auto l = bootstrap_losses(model, enc, plan);
        const double v = l.short_term.item();
        if (it == 0) first = v;
        EXPECT_LE(v, prev + 1e-9) << "step " << it;
        prev = v;
        l.short_term.backward();
        adam.step(model.parameters(), 1e-3);
    }
    EXPECT_LT(prev, first);
}
