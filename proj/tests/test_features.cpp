#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support.hpp"

using namespace bams;

namespace {

/// A plausible 12-point body with a random wiggle per frame.
KeypointSequence random_walker(std::size_t T, std::uint64_t seed) {
    KeypointSequence s(1, 12, T, 30.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 0.05);
    const double base[12][2] = {{2.0, 0.0},   {1.6, 0.3},  {1.6, -0.3}, {1.2, 0.0},  {0.9, 0.5},  {0.9, -0.5},
                                {0.0, 0.0},   {-0.9, 0.5}, {-0.9, -0.5}, {-1.2, 0.0}, {-2.0, 0.2}, {-2.8, 0.5}};
    double x = 0.0, y = 0.0, th = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
        th += 0.05 * std::sin(0.1 * static_cast<double>(t));
        x += 0.1 * std::cos(th);
        y += 0.1 * std::sin(th);
        for (std::size_t p = 0; p < 12; ++p) {
            const double bx = base[p][0] + n(rng), by = base[p][1] + n(rng);
            s.coord(0, p, 0, t) = x + std::cos(th) * bx - std::sin(th) * by;
            s.coord(0, p, 1, t) = y + std::sin(th) * bx + std::cos(th) * by;
        }
    }
    return s;
}

}  // namespace

TEST(Features, DeclaredLayout) {
    const auto l = keypoint_feature_layout();
    l.validate();
    const auto f = extract_agent_features(random_walker(20, 1), 0);
    EXPECT_EQ(f.channels, l.size());
    std::size_t validity_named = 0;
    for (const auto& n : l.names) validity_named += n == "valid";
    EXPECT_EQ(validity_named, 1u);
}

TEST(Features, StationaryAgentHasZeroVelocities) {
    auto s = random_walker(10, 2);
    for (std::size_t p = 0; p < 12; ++p)
        for (std::size_t xy = 0; xy < 2; ++xy)
            for (std::size_t t = 1; t < 10; ++t) s.coord(0, p, xy, t) = s.coord(0, p, xy, 0);
    const auto f = extract_agent_features(s, 0);
    const auto l = keypoint_feature_layout();
    for (std::size_t t = 1; t < 10; ++t)
        for (auto c : l.action_channels) EXPECT_EQ(f.at(c, t), 0.0) << l.names[c] << " t=" << t;
}

TEST(Features, RigidTranslationHasConstantSpeedAndNoRotation) {
    auto s = random_walker(1, 3);
    KeypointSequence moving(1, 12, 15, 30.0);
    const double vx = 0.3, vy = -0.4;  // units per frame, |v| = 0.5
    for (std::size_t t = 0; t < 15; ++t)
        for (std::size_t p = 0; p < 12; ++p) {
            moving.coord(0, p, 0, t) = s.coord(0, p, 0, 0) + vx * static_cast<double>(t);
            moving.coord(0, p, 1, t) = s.coord(0, p, 1, 0) + vy * static_cast<double>(t);
        }
    const auto f = extract_agent_features(moving, 0);
    for (std::size_t t = 1; t < 15; ++t) {
        EXPECT_NEAR(f.at(4, t), 0.5 * 30.0, 1e-9);  // body speed
        EXPECT_NEAR(f.at(0, t), 0.5 * 30.0, 1e-9);  // head speed
        EXPECT_NEAR(f.at(3, t), 0.0, 1e-12);
        EXPECT_NEAR(f.at(7, t), 0.0, 1e-12);
        for (std::size_t c = 8; c <= 16; ++c) EXPECT_NEAR(f.at(c, t), 0.0, 1e-9);
    }
}

TEST(Features, InvalidFrameIsZeroedAndFrameZeroIsInvalid) {
    auto s = random_walker(12, 4);
    s.frame_validity[5] = 0;
    const auto f = extract_agent_features(s, 0);
    const auto l = keypoint_feature_layout();
    const auto v = f.validity(l);
    EXPECT_EQ(v[0], 0);
    EXPECT_EQ(v[5], 0);
    EXPECT_EQ(v[6], 0);  // backward difference needs frame 5
    EXPECT_EQ(v[7], 1);
    for (std::size_t c = 0; c < f.channels; ++c) {
        EXPECT_EQ(f.at(c, 5), 0.0);
        EXPECT_EQ(f.at(c, 0), 0.0);
    }
}

TEST(Features, TranslationInvariance) {
    const auto s = random_walker(40, 5);
    auto shifted = s;
    for (std::size_t p = 0; p < 12; ++p)
        for (std::size_t t = 0; t < 40; ++t) {
            shifted.coord(0, p, 0, t) += 123.4;
            shifted.coord(0, p, 1, t) -= 56.7;
        }
    const auto a = extract_agent_features(s, 0), b = extract_agent_features(shifted, 0);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-8);
}

TEST(Features, GlobalRotationInvariance) {
    const auto s = random_walker(40, 6);
    auto rotated = s;
    const double th = 1.1;
    for (std::size_t p = 0; p < 12; ++p)
        for (std::size_t t = 0; t < 40; ++t) {
            const double x = s.coord(0, p, 0, t), y = s.coord(0, p, 1, t);
            rotated.coord(0, p, 0, t) = std::cos(th) * x - std::sin(th) * y;
            rotated.coord(0, p, 1, t) = std::sin(th) * x + std::cos(th) * y;
        }
    const auto a = extract_agent_features(s, 0), b = extract_agent_features(rotated, 0);
    for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-8);
}

TEST(Features, AnglePairsLieOnTheUnitCircle) {
    const auto f = extract_agent_features(random_walker(60, 7), 0);
    const auto l = keypoint_feature_layout();
    const auto v = f.validity(l);
    for (std::size_t t = 0; t < 60; ++t) {
        if (!v[t]) continue;
        for (std::size_t i = 0; i < l.angle_channels.size(); i += 2) {
            const double s = f.at(l.angle_channels[i], t), c = f.at(l.angle_channels[i + 1], t);
            EXPECT_NEAR(s * s + c * c, 1.0, 1e-9);
        }
    }
}

TEST(Features, CausalBackwardDifferences) {
    const auto s = random_walker(30, 8);
    auto changed = s;
    for (std::size_t p = 0; p < 12; ++p) changed.coord(0, p, 0, 20) += 1.0;
    const auto a = extract_agent_features(s, 0), b = extract_agent_features(changed, 0);
    for (std::size_t c = 0; c < a.channels; ++c)
        for (std::size_t t = 0; t < 20; ++t) EXPECT_EQ(a.at(c, t), b.at(c, t));
}

namespace {

ChannelLayout two_channel_layout() {
    ChannelLayout l;
    l.names = {"x", "angle_sin", "valid"};
    l.action_channels = {0};
    l.angle_channels = {1};
    l.validity_channel = 2;
    return l;
}

}  // namespace

TEST(Normalization, ZScoreExamples) {
    const auto l = two_channel_layout();
    FeatureSequence f(3, 4);
    const double xs[4] = {3, 7, 3, 7};  // mean 5, population std 2
    for (std::size_t t = 0; t < 4; ++t) {
        f.at(0, t) = xs[t];
        f.at(1, t) = 0.5;
        f.at(2, t) = 1.0;
    }
    const FeatureSequence* ds[] = {&f};
    const auto stats = fit_normalization(ds, l);
    EXPECT_DOUBLE_EQ(stats.mean[0], 5.0);
    EXPECT_DOUBLE_EQ(stats.std[0], 2.0);
    const auto n = apply_normalization(f, stats, l);
    EXPECT_DOUBLE_EQ(n.at(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(n.at(1, 1), 0.5);  // angle channels pass through
    EXPECT_DOUBLE_EQ(n.at(2, 1), 1.0);

    FeatureSequence probe(3, 1);
    probe.at(0, 0) = 7.0;
    probe.at(2, 0) = 1.0;
    EXPECT_DOUBLE_EQ(apply_normalization(probe, stats, l).at(0, 0), 1.0);
    // not idempotent
    EXPECT_NE(apply_normalization(apply_normalization(probe, stats, l), stats, l).at(0, 0), 1.0);
}

TEST(Normalization, ConstantChannelMapsToZero) {
    const auto l = two_channel_layout();
    FeatureSequence f(3, 5);
    for (std::size_t t = 0; t < 5; ++t) {
        f.at(0, t) = 4.2;
        f.at(2, t) = 1.0;
    }
    const FeatureSequence* ds[] = {&f};
    const auto stats = fit_normalization(ds, l);
    EXPECT_EQ(stats.std[0], kStdFloor);
    const auto n = apply_normalization(f, stats, l);
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(n.at(0, t), 0.0);
}

TEST(Normalization, InvalidFramesAreIgnoredAndStayZero) {
    const auto l = two_channel_layout();
    FeatureSequence f(3, 3);
    f.at(0, 0) = 1.0;
    f.at(2, 0) = 1.0;
    f.at(0, 1) = 3.0;
    f.at(2, 1) = 1.0;
    f.at(0, 2) = 1000.0;  // invalid frame with a stray value
    const FeatureSequence* ds[] = {&f};
    const auto stats = fit_normalization(ds, l);
    EXPECT_DOUBLE_EQ(stats.mean[0], 2.0);
    EXPECT_EQ(apply_normalization(f, stats, l).at(0, 2), 0.0);
}

TEST(ValidWindow, Threshold) {
    std::vector<unsigned char> v(100, 1);
    EXPECT_TRUE(valid_prediction_window(v, 10, 30));
    for (std::size_t i = 11; i < 17; ++i) v[i] = 0;  // 24 of 30 valid
    EXPECT_TRUE(valid_prediction_window(v, 10, 30));
    v[17] = 0;  // 23 of 30
    EXPECT_FALSE(valid_prediction_window(v, 10, 30));
    std::vector<unsigned char> all(50, 1);
    EXPECT_FALSE(valid_prediction_window(all, 30, 30));
    EXPECT_TRUE(valid_prediction_window(all, 19, 30));
    EXPECT_FALSE(valid_prediction_window(all, 20, 30));
}
