#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "bams/diffcore/tensor.hpp"

namespace bams {

struct GradCheckOptions {
    double step = 1e-5;
    std::size_t max_coords_per_tensor = 0;  // 0 = every coordinate
    std::uint64_t seed = 0;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients of a deterministic scalar function with
/// central differences. Relative error per coordinate is
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
inline GradCheckResult grad_check(const std::function<Tensor()>& fn, std::vector<Tensor> params,
                                  GradCheckOptions opts = {}) {
    for (auto& p : params) p.zero_grad();
    fn().backward();
    std::vector<std::vector<double>> analytic;
    for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());
    for (auto& p : params) p.zero_grad();

    std::mt19937_64 rng(opts.seed);
    GradCheckResult res;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto data = params[pi].mutable_data();
        std::vector<std::size_t> coords(data.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (opts.max_coords_per_tensor && coords.size() > opts.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(opts.max_coords_per_tensor);
        }
        for (std::size_t c : coords) {
            const double orig = data[c];
            double plus, minus;
            {
                NoGradGuard ng;
                data[c] = orig + opts.step;
                plus = fn().item();
                data[c] = orig - opts.step;
                minus = fn().item();
            }
            data[c] = orig;
            const double numeric = (plus - minus) / (2.0 * opts.step);
            const double a = analytic[pi][c];
            const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.coords_checked;
        }
    }
    return res;
}

}  // namespace bams
