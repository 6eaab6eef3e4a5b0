#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace bams;
using namespace bams::synth;

TEST(Synth, SameSeedIsBitIdentical) {
    SynthConfig c;
    c.seq_len = 300;
    const auto a = generate_sequence(42, c), b = generate_sequence(42, c);
    EXPECT_EQ(a.agents[0].values, b.agents[0].values);
    EXPECT_EQ(a.regime, b.regime);
    EXPECT_EQ(a.difficulty, b.difficulty);
    EXPECT_NE(a.agents[0].values, generate_sequence(43, c).agents[0].values);
}

TEST(Synth, RegimeOccupancyMatchesStationaryDistribution) {
    SynthConfig c;
    c.seq_len = 6000;
    c.n_actions = 2;
    // oracle: power iteration on the transition matrix
    std::array<double, kRegimes> pi{0.25, 0.25, 0.25, 0.25};
    for (int it = 0; it < 10000; ++it) {
        std::array<double, kRegimes> next{};
        for (std::size_t i = 0; i < kRegimes; ++i)
            for (std::size_t j = 0; j < kRegimes; ++j) next[j] += pi[i] * c.transitions[i][j];
        pi = next;
    }
    const auto solved = stationary_distribution(c.transitions);
    for (std::size_t r = 0; r < kRegimes; ++r) EXPECT_NEAR(solved[r], pi[r], 1e-12);

    std::array<double, kRegimes> occ{};
    for (std::uint64_t s = 0; s < 100; ++s) {
        const auto ls = generate_sequence(1000 + s, c);
        for (int r : ls.regime) occ[static_cast<std::size_t>(r)] += 1.0;
    }
    for (std::size_t r = 0; r < kRegimes; ++r) EXPECT_NEAR(occ[r] / (100.0 * 6000.0), pi[r], 0.03) << "regime " << r;
}

TEST(Synth, WalkFrequencyDiffersBetweenClasses) {
    SynthConfig c;
    c.seq_len = 1000;
    std::vector<double> rate[2];
    for (std::uint64_t s = 0; s < 200; ++s) {
        const auto ls = generate_sequence(5000 + s, c);
        const auto& f = ls.agents[0];
        // zero crossings of channel 0 inside walk runs, per walk frame
        double crossings = 0.0, frames = 0.0;
        for (std::size_t t = 1; t < c.seq_len; ++t) {
            if (ls.regime[t] != walk || ls.regime[t - 1] != walk) continue;
            frames += 1.0;
            if ((f.at(0, t) >= 0) != (f.at(0, t - 1) >= 0)) crossings += 1.0;
        }
        if (frames > 100) rate[ls.factors.agent_class].push_back(crossings / frames);
    }
    ASSERT_GT(rate[0].size(), 30u);
    ASSERT_GT(rate[1].size(), 30u);
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
    auto var = [&](const std::vector<double>& v) {
        const double m = mean(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return s / static_cast<double>(v.size() - 1);
    };
    const double t = (mean(rate[1]) - mean(rate[0])) / std::sqrt(var(rate[0]) / rate[0].size() + var(rate[1]) / rate[1].size());
    EXPECT_GT(t, 3.0);
}

TEST(Synth, LabelsAndBounds) {
    SynthConfig c;
    c.seq_len = 900;
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto ls = generate_sequence(s, c);
        ASSERT_EQ(ls.regime.size(), c.seq_len);
        ASSERT_EQ(ls.difficulty.size(), c.seq_len);
        EXPECT_GE(ls.factors.target_speed, 0.3);
        EXPECT_LE(ls.factors.target_speed, 1.5);
        EXPECT_GE(ls.factors.gain, 0.7);
        EXPECT_LE(ls.factors.gain, 1.3);
        for (std::size_t t = 1; t < c.seq_len; ++t)
            if (ls.regime[t] != ls.regime[t - 1]) {
                EXPECT_EQ(t % c.dwell_min, 0u);
            }
        for (double d : ls.difficulty) EXPECT_TRUE(std::isfinite(d));
        const auto layout = synthetic_layout(c.n_actions);
        for (std::size_t ch : layout.action_channels)
            for (std::size_t t = 0; t < c.seq_len; ++t) EXPECT_LE(std::abs(ls.agents[0].at(ch, t)), c.max_amplitude);
        for (auto v : ls.agents[0].validity(layout)) EXPECT_EQ(v, 1);
    }
}

TEST(Synth, RegimesAreLinearlySeparableFromShortWindows) {
    SynthConfig c;
    c.seq_len = 1200;
    const std::size_t W = 30, N = c.n_actions;
    std::vector<double> xtr, xte, ytr, yte;
    std::size_t ntr = 0, nte = 0;
    for (std::uint64_t s = 0; s < 60; ++s) {
        const auto ls = generate_sequence(7000 + s, c);
        const auto& f = ls.agents[0];
        // one window per regime block, aligned to the block
        for (std::size_t b = 0; b + W <= c.seq_len; b += c.dwell_min) {
            std::vector<double> feat;
            for (std::size_t n = 0; n < N; ++n) {
                double m = 0, sq = 0, diff = 0;
                for (std::size_t t = b; t < b + W; ++t) {
                    m += f.at(n, t);
                    sq += f.at(n, t) * f.at(n, t);
                    if (t > b) diff += std::abs(f.at(n, t) - f.at(n, t - 1));
                }
                feat.push_back(m / W);
                feat.push_back(std::sqrt(sq / W));
                feat.push_back(diff / (W - 1));
            }
            auto& X = s < 40 ? xtr : xte;
            auto& Y = s < 40 ? ytr : yte;
            X.insert(X.end(), feat.begin(), feat.end());
            Y.push_back(ls.regime[b]);
            ++(s < 40 ? ntr : nte);
        }
    }
    const auto D = static_cast<Eigen::Index>(3 * N);
    const eval::RowMatrix Xtr = Eigen::Map<const eval::RowMatrix>(xtr.data(), static_cast<Eigen::Index>(ntr), D);
    const eval::RowMatrix Xte = Eigen::Map<const eval::RowMatrix>(xte.data(), static_cast<Eigen::Index>(nte), D);
    std::vector<int> ytr_i(ytr.begin(), ytr.end()), yte_i(yte.begin(), yte.end());
    const auto probe = eval::LogisticProbe::fit(Xtr, ytr_i, {});
    const auto pred = probe.predict(Xte);
    double correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == yte_i[i];
    EXPECT_GT(correct / static_cast<double>(pred.size()), 0.9);
}

TEST(Synth, MultiAgentDistances) {
    SynthConfig c;
    c.seq_len = 200;
    c.n_agents = 3;
    const auto ls = generate_sequence(9, c);
    ASSERT_EQ(ls.agents.size(), 3u);
    ASSERT_EQ(ls.distances.size(), 200u * 3u);
    for (double d : ls.distances) EXPECT_GT(d, 0.0);
    // agents share the regime chain but have their own noise
    EXPECT_NE(ls.agents[0].values, ls.agents[1].values);
}

TEST(Synth, ConfigValidation) {
    SynthConfig c;
    c.seq_len = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SynthConfig{};
    c.transitions[0][0] += 0.1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = SynthConfig{};
    c.transitions[0] = {1.0, 0.0, 0.0, 0.0};  // idle absorbing
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(SynthDataset, SplitCountsFloorThenRemainder) {
    const auto c = split_counts(10, {0.5, 0.25, 0.25});
    EXPECT_EQ(c[0], 5u);
    EXPECT_EQ(c[1], 2u);
    EXPECT_EQ(c[2], 3u);
    EXPECT_THROW(split_counts(10, {0.5, 0.5, 0.5}), ConfigError);
}

TEST(SynthDataset, RegenerationGivesTheSameManifestHash) {
    SynthConfig c;
    c.seq_len = 50;
    const auto d1 = bams::testing::scratch_dir("synth_a"), d2 = bams::testing::scratch_dir("synth_b");
    const auto m1 = generate_dataset(d1, 3, 10, {0.5, 0.25, 0.25}, c);
    const auto m2 = generate_dataset(d2, 3, 10, {0.5, 0.25, 0.25}, c);
    EXPECT_EQ(manifest_hash(m1), manifest_hash(m2));
    EXPECT_EQ(m1.sequences.size(), 10u);
    EXPECT_EQ(m1.ids_in_split("train").size(), 5u);
    EXPECT_EQ(io::read_file(d1 / "sequences/seq00003/agent0.f32"), io::read_file(d2 / "sequences/seq00003/agent0.f32"));
    const auto m3 = generate_dataset(bams::testing::scratch_dir("synth_c"), 4, 10, {0.5, 0.25, 0.25}, c);
    EXPECT_NE(manifest_hash(m1), manifest_hash(m3));

    DatasetReader r(d1);
    const auto tr = r.load("seq00002");
    EXPECT_EQ(tr.frame_labels.at("regime").size(), 50u);
    EXPECT_EQ(r.manifest().sequence_labels.at("seq00002").count("agent_class"), 1u);
}

TEST(SynthDataset, ClassBalance) {
    SynthConfig c;
    c.seq_len = 2;  // the class is drawn before any frame
    std::size_t b = 0;
    for (std::size_t i = 0; i < 500; ++i) b += generate_sequence(sequence_rng(17, i)(), c).factors.agent_class;
    EXPECT_NEAR(static_cast<double>(b) / 500.0, 0.5, 0.1);
}
