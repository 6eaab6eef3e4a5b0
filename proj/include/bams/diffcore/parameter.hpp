#pragma once

#include <cmath>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "bams/diffcore/tensor.hpp"

namespace bams {

/// A named trainable leaf. The learning-rate multiplier scales the base
/// optimizer rate for this tensor only.
struct Parameter {
    std::string name;
    Tensor tensor;
    double learning_rate_multiplier = 1.0;
};

/// Ordered collection of parameters; order is the serialization order.
class ParameterSet {
public:
    /// Returns a handle sharing storage with the stored parameter.
    Tensor add(std::string name, Tensor t, double lr_multiplier = 1.0) {
        if (!(lr_multiplier > 0.0)) throw ConfigError("parameter " + name + ": learning-rate multiplier must be > 0");
        if (!names_.insert(name).second) throw ConfigError("duplicate parameter name: " + name);
        params_.push_back(Parameter{std::move(name), std::move(t), lr_multiplier});
        return params_.back().tensor;
    }

    std::vector<Parameter>& items() { return params_; }
    const std::vector<Parameter>& items() const { return params_; }
    std::size_t size() const { return params_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    const Parameter* find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return &p;
        return nullptr;
    }

private:
    std::vector<Parameter> params_;
    std::unordered_set<std::string> names_;
};

namespace init {

/// Kaiming-uniform over fan-in: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
inline Tensor kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = dist(rng);
    return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor constant(Shape shape, double value) {
    std::vector<double> v(shape_numel(shape), value);
    return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace init

}  // namespace bams
