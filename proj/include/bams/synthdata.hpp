#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bams/dataset.hpp"

namespace bams::synth {

enum Regime : int { idle = 0, walk = 1, turn = 2, burst = 3 };
inline constexpr std::size_t kRegimes = 4;
inline constexpr std::array<const char*, kRegimes> kRegimeNames{"idle", "walk", "turn", "burst"};

using TransitionMatrix = std::array<std::array<double, kRegimes>, kRegimes>;

inline TransitionMatrix default_transitions() {
    return {{{0.60, 0.20, 0.10, 0.10},
             {0.10, 0.60, 0.20, 0.10},
             {0.10, 0.30, 0.50, 0.10},
             {0.20, 0.20, 0.10, 0.50}}};
}

/// Per-sequence factors, constant over the sequence.
struct GlobalFactors {
    int agent_class = 0;  // 0 = A, 1 = B
    double target_speed = 1.0;
    double gain = 1.0;
};

struct SynthConfig {
    std::size_t seq_len = 1000;
    std::size_t n_actions = 8;
    std::size_t n_agents = 1;
    double frame_rate_hz = 30.0;
    std::size_t dwell_min = 30;  // regime decisions happen on blocks of this many frames
    TransitionMatrix transitions = default_transitions();
    double max_amplitude = 4.0;
    double base_frequency_hz = 1.2;
    double class_b_frequency_factor = 1.25;
    double base_noise = 0.08;
    double difficulty_noise = 0.5;  // noise std added at difficulty 1
    double observation_decay = 0.95;

    void validate() const {
        if (seq_len < 2) throw ConfigError("synth: seq_len must be >= 2");
        if (n_actions < 2) throw ConfigError("synth: n_actions must be >= 2");
        if (n_agents < 1) throw ConfigError("synth: n_agents must be >= 1");
        if (dwell_min < 1) throw ConfigError("synth: dwell_min must be >= 1");
        if (!(frame_rate_hz > 0)) throw ConfigError("synth: frame_rate_hz must be > 0");
        if (!(max_amplitude > 0)) throw ConfigError("synth: max_amplitude must be > 0");
        for (std::size_t i = 0; i < kRegimes; ++i) {
            double s = 0.0;
            for (double p : transitions[i]) {
                if (!(p >= 0.0)) throw ConfigError("synth: transition probabilities must be >= 0");
                s += p;
            }
            if (std::abs(s - 1.0) > 1e-12) throw ConfigError("synth: transition matrix row " + std::to_string(i) + " does not sum to 1");
        }
        // irreducibility: every regime reachable from every other
        for (std::size_t from = 0; from < kRegimes; ++from) {
            std::array<bool, kRegimes> seen{};
            seen[from] = true;
            for (std::size_t step = 0; step < kRegimes; ++step)
                for (std::size_t i = 0; i < kRegimes; ++i)
                    if (seen[i])
                        for (std::size_t j = 0; j < kRegimes; ++j)
                            if (transitions[i][j] > 0) seen[j] = true;
            for (bool s : seen)
                if (!s) throw ConfigError("synth: transition matrix is not irreducible");
        }
    }
};

/// Stationary distribution of the regime chain (left eigenvector for eigenvalue 1).
inline std::array<double, kRegimes> stationary_distribution(const TransitionMatrix& P) {
    Eigen::Matrix4d A;
    for (std::size_t i = 0; i < kRegimes; ++i)
        for (std::size_t j = 0; j < kRegimes; ++j) A(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = P[i][j] - (i == j ? 1.0 : 0.0);
    // replace one balance equation with the normalization constraint
    A.row(3).setOnes();
    Eigen::Vector4d rhs(0, 0, 0, 1);
    Eigen::Vector4d pi = A.fullPivLu().solve(rhs);
    return {pi(0), pi(1), pi(2), pi(3)};
}

/// Channel layout of generated sequences: N actions, N observations, validity.
inline ChannelLayout synthetic_layout(std::size_t n_actions) {
    ChannelLayout l;
    for (std::size_t i = 0; i < n_actions; ++i) l.names.push_back("action" + std::to_string(i));
    for (std::size_t i = 0; i < n_actions; ++i) l.names.push_back("observation" + std::to_string(i));
    l.names.push_back("valid");
    for (std::size_t i = 0; i < n_actions; ++i) l.action_channels.push_back(i);
    l.validity_channel = 2 * n_actions;
    return l;
}

inline std::vector<ProbeTask> synthetic_tasks() {
    return {{"agent_class", TaskLevel::sequence, TaskKind::classification},
            {"target_speed", TaskLevel::sequence, TaskKind::regression},
            {"regime", TaskLevel::frame, TaskKind::classification},
            {"difficulty", TaskLevel::frame, TaskKind::regression}};
}

/// Per-channel amplitude pattern distinguishing the two agent classes.
inline double class_amplitude(int agent_class, std::size_t channel) {
    static constexpr std::array<double, 4> a{1.0, 0.55, 0.85, 0.4};
    static constexpr std::array<double, 4> b{0.55, 1.0, 0.4, 0.85};
    return agent_class == 0 ? a[channel % 4] : b[channel % 4];
}

namespace detail {

/// Smooth random walk reflected into [0, 1].
class ReflectedWalk {
public:
    ReflectedWalk(double start, double persistence, double kick) : x_(start), persistence_(persistence), kick_(kick) {}
    double next(std::mt19937_64& rng) {
        v_ = persistence_ * v_ + kick_ * normal_(rng);
        x_ += v_;
        if (x_ < 0.0) {
            x_ = -x_;
            v_ = -v_;
        }
        if (x_ > 1.0) {
            x_ = 2.0 - x_;
            v_ = -v_;
        }
        x_ = std::clamp(x_, 0.0, 1.0);
        return x_;
    }

private:
    double x_, v_ = 0.0, persistence_, kick_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

inline std::size_t sample_index(std::mt19937_64& rng, std::span<const double> probs) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double r = u(rng), acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (r < acc) return i;
    }
    return probs.size() - 1;
}

}  // namespace detail

/// Per-sequence RNG stream derived from (dataset seed, sequence index).
inline std::mt19937_64 sequence_rng(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
    return std::mt19937_64(seq);
}

struct LabeledSequence {
    GlobalFactors factors;
    std::vector<FeatureSequence> agents;
    std::vector<int> regime;
    std::vector<double> difficulty;
    std::vector<double> distances;  // [T x pairs], multi-agent only
};

/// Generates one labeled sequence. Deterministic in (seed, config).
inline LabeledSequence generate_sequence(std::uint64_t seed, const SynthConfig& cfg) {
    cfg.validate();
    auto rng = sequence_rng(seed, 0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const std::size_t T = cfg.seq_len, N = cfg.n_actions, A = cfg.n_agents;

    LabeledSequence out;
    out.factors.agent_class = unif(rng) < 0.5 ? 0 : 1;
    out.factors.target_speed = 0.3 + 1.2 * unif(rng);
    out.factors.gain = 0.7 + 0.6 * unif(rng);

    // regime chain on blocks of dwell_min frames, started from stationarity
    const auto pi = stationary_distribution(cfg.transitions);
    out.regime.resize(T);
    std::size_t r = detail::sample_index(rng, pi);
    std::vector<int> turn_direction(T, 1);
    int direction = unif(rng) < 0.5 ? -1 : 1;
    for (std::size_t t = 0; t < T; ++t) {
        if (t > 0 && t % cfg.dwell_min == 0) {
            r = detail::sample_index(rng, cfg.transitions[r]);
            direction = unif(rng) < 0.5 ? -1 : 1;
        }
        out.regime[t] = static_cast<int>(r);
        turn_direction[t] = direction;
    }

    detail::ReflectedWalk difficulty_walk(unif(rng), 0.98, 0.002);
    out.difficulty.resize(T);
    for (std::size_t t = 0; t < T; ++t) out.difficulty[t] = difficulty_walk.next(rng);

    // shared slow latent driving inter-agent distance and activity
    std::vector<double> closeness(T, 0.5);
    const auto pairs = agent_pairs(A);
    if (A > 1) {
        detail::ReflectedWalk latent(unif(rng), 0.99, 0.0015);
        for (std::size_t t = 0; t < T; ++t) closeness[t] = latent.next(rng);
        std::vector<double> base(pairs.size());
        for (double& b : base) b = 1.0 + unif(rng);
        out.distances.resize(T * pairs.size());
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t p = 0; p < pairs.size(); ++p)
                out.distances[t * pairs.size() + p] = base[p] * (0.3 + 2.0 * (1.0 - closeness[t])) + 0.05 * std::abs(normal(rng));
    }

    const double freq = cfg.base_frequency_hz * out.factors.target_speed * out.factors.gain *
                        (out.factors.agent_class == 1 ? cfg.class_b_frequency_factor : 1.0);
    const double dphase = 2.0 * std::numbers::pi * freq / cfg.frame_rate_hz;
    const auto layout = synthetic_layout(N);

    for (std::size_t a = 0; a < A; ++a) {
        FeatureSequence f(layout.size(), T);
        double phase = 2.0 * std::numbers::pi * unif(rng);
        std::vector<double> colored(N, 0.0), observation(N, 0.0);
        for (std::size_t t = 0; t < T; ++t) {
            phase += dphase;
            const double noise_std = cfg.base_noise + cfg.difficulty_noise * out.difficulty[t];
            const double activity = A > 1 ? 0.75 + 0.5 * closeness[t] : 1.0;
            const int reg = out.regime[t];
            for (std::size_t n = 0; n < N; ++n) {
                const double amp = class_amplitude(out.factors.agent_class, n) * activity;
                const double offset = static_cast<double>(n) * std::numbers::pi / 4.0;
                colored[n] = 0.8 * colored[n] + 0.6 * normal(rng);
                double y = 0.0;
                switch (reg) {
                    case idle: break;
                    case walk: y = amp * std::sin(phase + offset); break;
                    case turn:
                        y = 0.7 * amp * std::sin(phase + offset);
                        if (n + 1 == N) y += 0.9 * turn_direction[t];  // angular drift channel
                        break;
                    case burst: y = 1.2 * amp * colored[n]; break;
                    default: break;
                }
                y += noise_std * normal(rng);
                y = std::clamp(y, -cfg.max_amplitude, cfg.max_amplitude);
                f.at(n, t) = y;
                observation[n] = cfg.observation_decay * observation[n] + 0.1 * y;
                f.at(N + n, t) = observation[n] + 0.01 * normal(rng);
            }
            f.at(layout.validity_channel, t) = 1.0;
        }
        out.agents.push_back(std::move(f));
    }
    return out;
}

struct SplitFractions {
    double train = 0.6, public_test = 0.2, private_test = 0.2;
};

/// Split sizes: floor for the first two splits, remainder to the last.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f) {
    for (double v : {f.train, f.public_test, f.private_test})
        if (!(v >= 0.0)) throw ConfigError("split fractions must be >= 0");
    if (std::abs(f.train + f.public_test + f.private_test - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
    const auto a = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.train + 1e-9));
    const auto b = static_cast<std::size_t>(std::floor(static_cast<double>(n) * f.public_test + 1e-9));
    if (a + b > n) throw ConfigError("split fractions exceed sequence count");
    return {a, b, n - a - b};
}

inline std::string sequence_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq%05zu", i);
    return buf;
}

/// Generates n sequences with a seeded split assignment and writes them in
/// the trajectory directory format. Returns the manifest.
inline Manifest generate_dataset(const fs::path& out, std::uint64_t seed, std::size_t n_sequences,
                                 const SplitFractions& fractions, const SynthConfig& cfg) {
    cfg.validate();
    const auto counts = split_counts(n_sequences, fractions);
    std::vector<std::size_t> order(n_sequences);
    for (std::size_t i = 0; i < n_sequences; ++i) order[i] = i;
    std::mt19937_64 split_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(order.begin(), order.end(), split_rng);
    std::vector<std::string> split_of(n_sequences);
    for (std::size_t k = 0; k < n_sequences; ++k)
        split_of[order[k]] = k < counts[0] ? "train" : (k < counts[0] + counts[1] ? "public" : "private");

    Manifest m;
    m.frame_rate_hz = cfg.frame_rate_hz;
    m.n_agents = cfg.n_agents;
    m.has_distances = cfg.n_agents > 1;
    m.layout = synthetic_layout(cfg.n_actions);
    m.tasks = synthetic_tasks();

    for (std::size_t i = 0; i < n_sequences; ++i) {
        // stream per (seed, index); generate_sequence takes a scalar seed
        const std::uint64_t sub = sequence_rng(seed, i)();
        auto ls = generate_sequence(sub, cfg);
        Trajectory tr;
        tr.info = {sequence_id(i), split_of[i], cfg.seq_len};
        tr.agents = std::move(ls.agents);
        tr.distance_pairs = agent_pairs(cfg.n_agents).size();
        tr.distances = std::move(ls.distances);
        tr.frame_labels["regime"] = std::vector<double>(ls.regime.begin(), ls.regime.end());
        tr.frame_labels["difficulty"] = ls.difficulty;
        m.sequences.push_back(tr.info);
        m.sequence_labels[tr.info.id] = {{"agent_class", static_cast<double>(ls.factors.agent_class)},
                                         {"target_speed", ls.factors.target_speed}};
        write_trajectory(out, m, tr);
    }
    io::write_file(out / kManifestName, manifest_bytes(m));
    return m;
}

}  // namespace bams::synth
