#pragma once

#include <cmath>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "bams/model.hpp"

namespace bams::bootstrap {

/// Positive views for a set of anchors of one sequence: a short-range
/// partner t + delta with |delta| <= window and a long-range partner t'
/// anywhere in the sequence. All frames are valid.
struct PositivePlan {
    struct Entry {
        std::size_t anchor;
        std::size_t short_target;
        std::size_t long_target;
        long offset() const { return static_cast<long>(short_target) - static_cast<long>(anchor); }
    };
    std::vector<Entry> entries;
    std::size_t window = 0;
    std::size_t dropped = 0;  // anchors without a valid candidate

    std::vector<std::size_t> anchors() const {
        std::vector<std::size_t> v;
        for (const auto& e : entries) v.push_back(e.anchor);
        return v;
    }
    std::vector<std::size_t> short_targets() const {
        std::vector<std::size_t> v;
        for (const auto& e : entries) v.push_back(e.short_target);
        return v;
    }
    std::vector<std::size_t> long_targets() const {
        std::vector<std::size_t> v;
        for (const auto& e : entries) v.push_back(e.long_target);
        return v;
    }
};

/// One (delta, t') draw per anchor: delta uniform over valid in-bounds
/// offsets in [-window, window] (0 allowed), t' uniform over valid frames.
inline PositivePlan sample_positives(std::mt19937_64& rng, std::span<const unsigned char> validity,
                                     std::span<const std::size_t> anchors, std::size_t window) {
    if (window < 1) throw ConfigError("sample_positives: window must be >= 1");
    const std::size_t T = validity.size();
    std::vector<std::size_t> valid_frames;
    for (std::size_t t = 0; t < T; ++t)
        if (validity[t]) valid_frames.push_back(t);
    PositivePlan plan;
    plan.window = window;
    std::vector<std::size_t> candidates;
    for (std::size_t t : anchors) {
        if (t >= T || !validity[t] || valid_frames.empty()) {
            ++plan.dropped;
            continue;
        }
        candidates.clear();
        const std::size_t lo = t >= window ? t - window : 0;
        const std::size_t hi = std::min(T - 1, t + window);
        for (std::size_t s = lo; s <= hi; ++s)
            if (validity[s]) candidates.push_back(s);
        std::uniform_int_distribution<std::size_t> pick_short(0, candidates.size() - 1);
        std::uniform_int_distribution<std::size_t> pick_long(0, valid_frames.size() - 1);
        const std::size_t s = candidates[pick_short(rng)];
        const std::size_t l = valid_frames[pick_long(rng)];
        plan.entries.push_back({t, s, l});
    }
    return plan;
}

inline constexpr double kNormEps = 1e-8;

/// ||u - v||^2 for u = x/||x||, v = y/||y||, plain values.
inline double latent_predictive_loss(std::span<const double> prediction, std::span<const double> target) {
    if (prediction.size() != target.size()) throw ShapeError("latent_predictive_loss", "vector lengths differ");
    double np = 0.0, nt = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        np += prediction[i] * prediction[i];
        nt += target[i] * target[i];
    }
    np = std::max(std::sqrt(np), kNormEps);
    nt = std::max(std::sqrt(nt), kNormEps);
    double acc = 0.0;
    for (std::size_t i = 0; i < prediction.size(); ++i) {
        const double d = prediction[i] / np - target[i] / nt;
        acc += d * d;
    }
    return acc;
}

/// Mean over rows of ||q/||q|| - sg[y/||y||]||^2. `target` is read as a
/// constant: no gradient reaches whatever produced it.
inline Tensor latent_predictive_loss(const Tensor& prediction, const Tensor& target, std::size_t* empty_counter = nullptr) {
    if (prediction.rank() != 2 || target.shape() != prediction.shape())
        throw ShapeError("latent_predictive_loss", "prediction " + shape_str(prediction.shape()) + " vs target " +
                                                       shape_str(target.shape()));
    const std::size_t n = prediction.dim(0), d = prediction.dim(1);
    if (n == 0) {
        if (empty_counter) ++*empty_counter;
        return Tensor::scalar(0.0);
    }
    std::vector<double> unit(n * d), tunit(n * d), norms(n);
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        double np = 0.0, nt = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            np += prediction[r * d + i] * prediction[r * d + i];
            nt += target[r * d + i] * target[r * d + i];
        }
        norms[r] = std::max(std::sqrt(np), kNormEps);
        nt = std::max(std::sqrt(nt), kNormEps);
        for (std::size_t i = 0; i < d; ++i) {
            unit[r * d + i] = prediction[r * d + i] / norms[r];
            tunit[r * d + i] = target[r * d + i] / nt;
            const double diff = unit[r * d + i] - tunit[r * d + i];
            total += diff * diff;
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    return Tensor::make_result(
        {1}, {total * inv_n}, {prediction},
        [unit = std::move(unit), tunit = std::move(tunit), norms = std::move(norms), n, d, inv_n](bams::detail::Node& node) {
            auto& g = node.inputs[0]->grad_buffer();
            const double seed = node.grad[0] * inv_n;
            for (std::size_t r = 0; r < n; ++r) {
                // dL/du = 2(u - v); dL/dx = (I - u u^T) dL/du / ||x||
                double dot = 0.0;
                for (std::size_t i = 0; i < d; ++i) dot += unit[r * d + i] * 2.0 * (unit[r * d + i] - tunit[r * d + i]);
                for (std::size_t i = 0; i < d; ++i) {
                    const double du = 2.0 * (unit[r * d + i] - tunit[r * d + i]);
                    g[r * d + i] += seed * (du - unit[r * d + i] * dot) / norms[r];
                }
            }
        });
}

struct BootstrapLosses {
    Tensor short_term;
    Tensor long_term;
};

/// Short loss: q_short(z_short[t]) vs sg[z_short[t + delta]]. Long loss:
/// q_long(z_long[t]) vs sg[z_long[t']]. Each is the mean over plan entries.
inline BootstrapLosses bootstrap_losses(const BamsModel& model, const BamsModel::Encoded& enc, const PositivePlan& plan,
                                        std::size_t* empty_counter = nullptr) {
    if (plan.entries.empty()) {
        if (empty_counter) ++*empty_counter;
        return {Tensor::scalar(0.0), Tensor::scalar(0.0)};
    }
    const auto anchors = plan.anchors();
    const auto st = plan.short_targets();
    const auto lt = plan.long_targets();
    BootstrapLosses out;
    {
        Tensor pred = model.q_short(ops::gather_cols(enc.z_short, anchors));
        Tensor target = ops::gather_cols(enc.z_short.detach(), st);
        out.short_term = latent_predictive_loss(pred, target);
    }
    {
        Tensor pred = model.q_long(ops::gather_cols(enc.z_long, anchors));
        Tensor target = ops::gather_cols(enc.z_long.detach(), lt);
        out.long_term = latent_predictive_loss(pred, target);
    }
    return out;
}

}  // namespace bams::bootstrap
