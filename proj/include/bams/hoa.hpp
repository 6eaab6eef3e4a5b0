#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bams/diffcore/tensor.hpp"

namespace bams::hoa {

/// Equal-width bins per action channel.
struct BinningSpec {
    std::size_t bins = 32;
    std::vector<double> lo;  // per channel
    std::vector<double> hi;
    double q_low = 0.01;
    double q_high = 0.99;

    std::size_t channels() const { return lo.size(); }
    double width(std::size_t ch) const { return (hi[ch] - lo[ch]) / static_cast<double>(bins); }

    /// Bin index with values outside [lo, hi] clipped to the end bins.
    std::size_t bin_of(std::size_t ch, double v) const {
        const double pos = (v - lo[ch]) / width(ch);
        if (!(pos > 0.0)) return 0;  // also catches NaN
        const auto k = static_cast<std::size_t>(pos);
        return std::min(k, bins - 1);
    }
};

inline void to_json(nlohmann::json& j, const BinningSpec& b) {
    j = nlohmann::json{{"bins", b.bins}, {"lo", b.lo}, {"hi", b.hi}, {"quantiles", {b.q_low, b.q_high}}};
}

inline void from_json(const nlohmann::json& j, BinningSpec& b) {
    b.bins = j.at("bins").get<std::size_t>();
    b.lo = j.at("lo").get<std::vector<double>>();
    b.hi = j.at("hi").get<std::vector<double>>();
    auto q = j.at("quantiles").get<std::vector<double>>();
    b.q_low = q.at(0);
    b.q_high = q.at(1);
}

/// Linear-interpolated empirical quantile (same rule as numpy's default).
inline double empirical_quantile(std::vector<double> values, double q) {
    if (values.empty()) throw NumericError("empirical_quantile: no values");
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
    const double vlo = values[lo];
    if (hi == lo) return vlo;
    const double vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(lo) + 1, values.end());
    return vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
}

inline constexpr double kDegenerateWidening = 1e-6;

/// Fits per-channel ranges [q_low, q_high] from pooled action values (valid
/// frames only; the caller supplies one value list per channel).
inline BinningSpec fit_binning(const std::vector<std::vector<double>>& channel_values, std::size_t bins,
                               double q_low = 0.01, double q_high = 0.99) {
    if (bins < 2) throw ConfigError("fit_binning: bin count K must be >= 2");
    if (!(q_low >= 0.0 && q_low < q_high && q_high <= 1.0)) throw ConfigError("fit_binning: invalid quantile pair");
    BinningSpec spec;
    spec.bins = bins;
    spec.q_low = q_low;
    spec.q_high = q_high;
    for (std::size_t ch = 0; ch < channel_values.size(); ++ch) {
        if (channel_values[ch].empty())
            throw NumericError("fit_binning: no valid frames for action channel " + std::to_string(ch));
        double lo = empirical_quantile(channel_values[ch], q_low);
        double hi = empirical_quantile(channel_values[ch], q_high);
        if (!(hi > lo)) {
            const double mid = 0.5 * (lo + hi);
            lo = mid - kDegenerateWidening;
            hi = mid + kDegenerateWidening;
        }
        spec.lo.push_back(lo);
        spec.hi.push_back(hi);
    }
    return spec;
}

/// Normalized histogram of the values whose weight is nonzero (valid frames).
/// An empty valid mask means every value counts.
inline std::vector<double> action_histogram(std::span<const double> values, const BinningSpec& spec,
                                            std::size_t channel, std::span<const unsigned char> valid = {}) {
    std::vector<double> h(spec.bins, 0.0);
    std::size_t counted = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!valid.empty() && !valid[i]) continue;
        h[spec.bin_of(channel, values[i])] += 1.0;
        ++counted;
    }
    if (counted == 0) throw NumericError("action_histogram: window has no valid frames");
    for (double& v : h) v /= static_cast<double>(counted);
    return h;
}

inline void require_same_length(std::span<const double> a, std::span<const double> b, const char* op) {
    if (a.size() != b.size())
        throw ShapeError(op, "histogram lengths differ: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

/// Squared-CDF-difference distance: sum_k (CDF_k(h) - CDF_k(h_hat))^2.
inline double emd2(std::span<const double> h, std::span<const double> h_hat) {
    require_same_length(h, h_hat, "emd2");
    double ca = 0.0, cb = 0.0, acc = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        ca += h[k];
        cb += h_hat[k];
        acc += (ca - cb) * (ca - cb);
    }
    return acc;
}

/// Unit-step transport cost between equal-mass histograms via the CDF identity.
inline double wasserstein1(std::span<const double> h, std::span<const double> h_hat) {
    require_same_length(h, h_hat, "wasserstein1");
    double ca = 0.0, cb = 0.0, acc = 0.0;
    for (std::size_t k = 0; k < h.size(); ++k) {
        ca += h[k];
        cb += h_hat[k];
        acc += std::abs(ca - cb);
    }
    return acc;
}

/// Per-anchor HoA loss averaged over masked-in anchors.
///
/// predicted: [B x N x K] probabilities (rows already softmax-normalized);
/// targets: B*N*K histogram values; mask: B flags. The target CDF is pinned
/// to exactly 1 at the last bin. With no anchor masked in the loss is 0 and
/// `empty_batches` (if given) is incremented.
inline Tensor hoa_loss(const Tensor& predicted, std::span<const double> targets, std::span<const unsigned char> mask,
                       std::size_t* empty_batches = nullptr) {
    if (predicted.rank() != 3) throw ShapeError("hoa_loss", "predicted must be [B x N x K], got " + shape_str(predicted.shape()));
    const std::size_t B = predicted.dim(0), N = predicted.dim(1), K = predicted.dim(2);
    if (targets.size() != B * N * K)
        throw ShapeError("hoa_loss", "targets length " + std::to_string(targets.size()) + " != B*N*K " +
                                         std::to_string(B * N * K));
    if (mask.size() != B) throw ShapeError("hoa_loss", "mask length " + std::to_string(mask.size()) + " != B " + std::to_string(B));

    std::size_t active = 0;
    for (auto m : mask) active += m ? 1 : 0;
    if (active == 0 && empty_batches) ++*empty_batches;

    // per-row CDF differences, kept for the backward pass
    std::vector<double> diff(B * N * K, 0.0);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        if (!mask[b]) continue;
        for (std::size_t i = 0; i < N; ++i) {
            const std::size_t row = (b * N + i) * K;
            double ct = 0.0, cp = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                ct = k + 1 == K ? 1.0 : ct + targets[row + k];
                cp += predicted[row + k];
                diff[row + k] = ct - cp;
                total += diff[row + k] * diff[row + k];
            }
        }
    }
    const double denom = active ? static_cast<double>(active) : 1.0;
    return Tensor::make_result({1}, {total / denom}, {predicted}, [diff = std::move(diff), B, N, K, denom](bams::detail::Node& n) {
        auto& g = n.inputs[0]->grad_buffer();
        const double seed = n.grad[0] / denom;
        // d/dp_j sum_k (ct_k - cp_k)^2 = -2 sum_{k >= j} (ct_k - cp_k)
        for (std::size_t r = 0; r < B * N; ++r) {
            double suffix = 0.0;
            for (std::size_t k = K; k-- > 0;) {
                suffix += diff[r * K + k];
                g[r * K + k] += -2.0 * suffix * seed;
            }
        }
    });
}

}  // namespace bams::hoa
