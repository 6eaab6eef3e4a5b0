#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bams/error.hpp"

namespace bams {

/// Names and roles of feature channels; shared by every sequence of a dataset.
struct ChannelLayout {
    std::vector<std::string> names;
    std::vector<std::size_t> action_channels;
    std::vector<std::size_t> angle_channels;  // sin/cos channels, passed through normalization
    std::size_t validity_channel = 0;

    std::size_t size() const { return names.size(); }

    bool is_passthrough(std::size_t ch) const {
        return ch == validity_channel || std::find(angle_channels.begin(), angle_channels.end(), ch) != angle_channels.end();
    }

    void validate() const {
        if (names.empty()) throw SchemaError("channel layout has no channels");
        if (validity_channel >= names.size()) throw SchemaError("validity channel index out of range");
        if (action_channels.empty()) throw SchemaError("channel layout declares no action channels");
        for (auto c : action_channels)
            if (c >= names.size() || c == validity_channel) throw SchemaError("invalid action channel index " + std::to_string(c));
        for (auto c : angle_channels)
            if (c >= names.size()) throw SchemaError("invalid angle channel index " + std::to_string(c));
    }
};

inline void to_json(nlohmann::json& j, const ChannelLayout& l) {
    j = nlohmann::json{{"channel_names", l.names},
                       {"action_channels", l.action_channels},
                       {"angle_channels", l.angle_channels},
                       {"validity_channel", l.validity_channel}};
}

inline void from_json(const nlohmann::json& j, ChannelLayout& l) {
    l.names = j.at("channel_names").get<std::vector<std::string>>();
    l.action_channels = j.at("action_channels").get<std::vector<std::size_t>>();
    l.angle_channels = j.at("angle_channels").get<std::vector<std::size_t>>();
    l.validity_channel = j.at("validity_channel").get<std::size_t>();
}

/// Per-frame features of one agent, channel-major [C x T]. Invalid frames
/// carry zeros in every channel, including the validity flag.
struct FeatureSequence {
    std::size_t channels = 0;
    std::size_t frames = 0;
    std::vector<double> values;

    FeatureSequence() = default;
    FeatureSequence(std::size_t c, std::size_t t) : channels(c), frames(t), values(c * t, 0.0) {}

    double& at(std::size_t c, std::size_t t) { return values[c * frames + t]; }
    double at(std::size_t c, std::size_t t) const { return values[c * frames + t]; }
    std::span<double> channel(std::size_t c) { return {values.data() + c * frames, frames}; }
    std::span<const double> channel(std::size_t c) const { return {values.data() + c * frames, frames}; }

    std::vector<unsigned char> validity(const ChannelLayout& layout) const {
        std::vector<unsigned char> v(frames);
        for (std::size_t t = 0; t < frames; ++t) v[t] = at(layout.validity_channel, t) > 0.5 ? 1 : 0;
        return v;
    }
};

// ---------------------------------------------------------------------------
// Keypoint feature extraction

/// Anatomical roles of keypoints (indices into the P points of an agent).
struct KeypointLayout {
    std::size_t nose = 0, left_ear = 1, right_ear = 2, neck = 3;
    std::size_t left_forepaw = 4, right_forepaw = 5, center_back = 6;
    std::size_t left_hindpaw = 7, right_hindpaw = 8;
    std::size_t tail_base = 9, tail_middle = 10, tail_tip = 11;
    std::size_t points = 12;
};

/// Raw tracked points: keypoints[A x P x 2 x T], validity[A x T].
struct KeypointSequence {
    std::size_t agents = 0, points = 0, frames = 0;
    std::vector<double> keypoints;
    std::vector<unsigned char> frame_validity;
    double frame_rate_hz = 30.0;

    KeypointSequence() = default;
    KeypointSequence(std::size_t a, std::size_t p, std::size_t t, double fps)
        : agents(a), points(p), frames(t), keypoints(a * p * 2 * t, 0.0), frame_validity(a * t, 1), frame_rate_hz(fps) {}

    double& coord(std::size_t a, std::size_t p, std::size_t xy, std::size_t t) {
        return keypoints[((a * points + p) * 2 + xy) * frames + t];
    }
    double coord(std::size_t a, std::size_t p, std::size_t xy, std::size_t t) const {
        return keypoints[((a * points + p) * 2 + xy) * frames + t];
    }
    bool valid(std::size_t a, std::size_t t) const { return frame_validity[a * frames + t] != 0; }
};

namespace kinematics {

struct Vec2 {
    double x = 0, y = 0;
};
inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }
inline double angle(Vec2 a) { return std::atan2(a.y, a.x); }
inline Vec2 rotate(Vec2 a, double th) {
    const double c = std::cos(th), s = std::sin(th);
    return {c * a.x - s * a.y, s * a.x + c * a.y};
}
inline double wrap(double a) {
    a = std::remainder(a, 2.0 * std::numbers::pi);
    return a;
}

}  // namespace kinematics

/// Channel layout produced by extract_agent_features.
inline ChannelLayout keypoint_feature_layout() {
    ChannelLayout l;
    l.names = {"head_speed",       "head_dir_sin",     "head_dir_cos",     "head_angular_velocity",
               "body_speed",       "body_dir_sin",     "body_dir_cos",     "body_angular_velocity",
               "left_forepaw_speed", "left_forepaw_angular_velocity", "right_forepaw_speed",
               "right_forepaw_angular_velocity", "left_hindpaw_speed", "left_hindpaw_angular_velocity",
               "right_hindpaw_speed", "right_hindpaw_angular_velocity", "spine_length_change",
               "tail_base_angle_sin", "tail_base_angle_cos", "tail_tip_angle_sin", "tail_tip_angle_cos",
               "valid"};
    l.action_channels = {0, 3, 4, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
    l.angle_channels = {1, 2, 5, 6, 17, 18, 19, 20};
    l.validity_channel = 21;
    return l;
}

/// Pose-invariant per-agent features. Velocities are backward differences
/// scaled by the frame rate, so frame t depends only on frames t-1 and t.
/// Frame t is valid when both t and t-1 carry valid keypoints; frame 0 is
/// always invalid.
inline FeatureSequence extract_agent_features(const KeypointSequence& seq, std::size_t agent,
                                              const KeypointLayout& kp = {}) {
    using namespace kinematics;
    if (agent >= seq.agents) throw ShapeError("extract_agent_features", "agent index " + std::to_string(agent) + " >= A");
    if (seq.points < kp.points) throw ShapeError("extract_agent_features", "sequence has fewer points than the keypoint layout");
    if (seq.frames < 2) throw ShapeError("extract_agent_features", "need T >= 2 frames");
    const auto layout = keypoint_feature_layout();
    FeatureSequence out(layout.size(), seq.frames);
    const double fps = seq.frame_rate_hz;

    auto pt = [&](std::size_t p, std::size_t t) { return Vec2{seq.coord(agent, p, 0, t), seq.coord(agent, p, 1, t)}; };
    auto head_center = [&](std::size_t t) { return 0.5 * (pt(kp.left_ear, t) + pt(kp.right_ear, t)); };
    auto body_center = [&](std::size_t t) { return 0.5 * (pt(kp.neck, t) + pt(kp.tail_base, t)); };
    auto head_heading = [&](std::size_t t) { return angle(pt(kp.nose, t) - head_center(t)); };
    auto body_heading = [&](std::size_t t) { return angle(pt(kp.neck, t) - pt(kp.tail_base, t)); };
    auto in_body_frame = [&](std::size_t p, std::size_t t) { return rotate(pt(p, t) - body_center(t), -body_heading(t)); };

    // polar velocity: magnitude plus direction relative to a heading
    auto polar = [&](Vec2 v, double heading, std::size_t c0, std::size_t t) {
        const double speed = norm(v);
        const double dir = speed > 1e-12 ? angle(v) - heading : 0.0;
        out.at(c0, t) = speed;
        out.at(c0 + 1, t) = std::sin(dir);
        out.at(c0 + 2, t) = std::cos(dir);
    };

    const std::array<std::size_t, 4> paws{kp.left_forepaw, kp.right_forepaw, kp.left_hindpaw, kp.right_hindpaw};
    for (std::size_t t = 1; t < seq.frames; ++t) {
        if (!seq.valid(agent, t) || !seq.valid(agent, t - 1)) continue;
        const double hh = head_heading(t), bh = body_heading(t);
        polar(fps * (head_center(t) - head_center(t - 1)), hh, 0, t);
        out.at(3, t) = fps * wrap(hh - head_heading(t - 1));
        polar(fps * (body_center(t) - body_center(t - 1)), bh, 4, t);
        out.at(7, t) = fps * wrap(bh - body_heading(t - 1));
        for (std::size_t i = 0; i < paws.size(); ++i) {
            const Vec2 now = in_body_frame(paws[i], t), before = in_body_frame(paws[i], t - 1);
            out.at(8 + 2 * i, t) = fps * norm(now - before);
            out.at(9 + 2 * i, t) = fps * wrap(angle(now) - angle(before));
        }
        const double spine_now = norm(pt(kp.neck, t) - pt(kp.tail_base, t));
        const double spine_before = norm(pt(kp.neck, t - 1) - pt(kp.tail_base, t - 1));
        out.at(16, t) = fps * (spine_now - spine_before);
        const double tail_base_angle = angle(pt(kp.tail_middle, t) - pt(kp.tail_base, t)) - bh;
        const double tail_tip_angle = angle(pt(kp.tail_tip, t) - pt(kp.tail_middle, t)) - bh;
        out.at(17, t) = std::sin(tail_base_angle);
        out.at(18, t) = std::cos(tail_base_angle);
        out.at(19, t) = std::sin(tail_tip_angle);
        out.at(20, t) = std::cos(tail_tip_angle);
        out.at(layout.validity_channel, t) = 1.0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

inline constexpr double kStdFloor = 1e-6;

struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> std;
    std::vector<bool> passthrough;
};

inline void to_json(nlohmann::json& j, const NormalizationStats& s) {
    j = nlohmann::json{{"mean", s.mean}, {"std", s.std}, {"passthrough", s.passthrough}};
}

inline void from_json(const nlohmann::json& j, NormalizationStats& s) {
    s.mean = j.at("mean").get<std::vector<double>>();
    s.std = j.at("std").get<std::vector<double>>();
    s.passthrough = j.at("passthrough").get<std::vector<bool>>();
}

/// Per-channel mean/std over valid frames of the given sequences (the
/// pretraining split). Angle and validity channels are passed through.
inline NormalizationStats fit_normalization(std::span<const FeatureSequence* const> dataset, const ChannelLayout& layout) {
    if (dataset.empty()) throw NumericError("fit_normalization: empty dataset");
    const std::size_t C = layout.size();
    std::vector<double> sum(C, 0.0), sumsq(C, 0.0);
    std::size_t count = 0;
    // two passes for a numerically stable variance
    for (const auto* seq : dataset) {
        if (seq->channels != C) throw SchemaError("fit_normalization: channel count mismatch");
        for (std::size_t t = 0; t < seq->frames; ++t) {
            if (seq->at(layout.validity_channel, t) <= 0.5) continue;
            ++count;
            for (std::size_t c = 0; c < C; ++c) sum[c] += seq->at(c, t);
        }
    }
    if (count == 0) throw NumericError("fit_normalization: no valid frames");
    NormalizationStats stats;
    stats.mean.resize(C);
    stats.std.resize(C);
    stats.passthrough.resize(C);
    for (std::size_t c = 0; c < C; ++c) stats.mean[c] = sum[c] / static_cast<double>(count);
    for (const auto* seq : dataset)
        for (std::size_t t = 0; t < seq->frames; ++t) {
            if (seq->at(layout.validity_channel, t) <= 0.5) continue;
            for (std::size_t c = 0; c < C; ++c) {
                const double d = seq->at(c, t) - stats.mean[c];
                sumsq[c] += d * d;
            }
        }
    for (std::size_t c = 0; c < C; ++c) {
        stats.passthrough[c] = layout.is_passthrough(c);
        stats.std[c] = std::max(kStdFloor, std::sqrt(sumsq[c] / static_cast<double>(count)));
        if (stats.passthrough[c]) {
            stats.mean[c] = 0.0;
            stats.std[c] = 1.0;
        }
    }
    return stats;
}

/// z-scores non-passthrough channels on valid frames; invalid frames stay 0.
/// Not idempotent: applying twice re-centers already centered values.
inline FeatureSequence apply_normalization(const FeatureSequence& seq, const NormalizationStats& stats,
                                           const ChannelLayout& layout) {
    if (seq.channels != stats.mean.size()) throw SchemaError("apply_normalization: channel count mismatch");
    FeatureSequence out = seq;
    for (std::size_t t = 0; t < seq.frames; ++t) {
        const bool valid = seq.at(layout.validity_channel, t) > 0.5;
        for (std::size_t c = 0; c < seq.channels; ++c) {
            if (!valid) {
                out.at(c, t) = 0.0;
            } else if (!stats.passthrough[c]) {
                out.at(c, t) = (seq.at(c, t) - stats.mean[c]) / stats.std[c];
            }
        }
    }
    return out;
}

/// Minimum valid-frame fraction of a prediction window, as a ratio num/den.
inline constexpr std::size_t kWindowValidNum = 4, kWindowValidDen = 5;

/// True iff at least ceil(0.8 L) of frames t+1..t+L are valid. A window that
/// runs past the last frame is rejected.
inline bool valid_prediction_window(std::span<const unsigned char> validity, std::size_t t, std::size_t L) {
    if (L == 0 || t + L >= validity.size()) return false;
    std::size_t count = 0;
    for (std::size_t i = t + 1; i <= t + L; ++i) count += validity[i] ? 1 : 0;
    const std::size_t need = (kWindowValidNum * L + kWindowValidDen - 1) / kWindowValidDen;
    return count >= need;
}

}  // namespace bams
