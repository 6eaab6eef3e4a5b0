#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bams/diffcore/parameter.hpp"

namespace bams {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // classic L2: added to the gradient
};

/// Adam with bias correction. Per-parameter rate = lr * learning_rate_multiplier.
class Adam {
public:
    explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

    const AdamOptions& options() const { return opts_; }
    long long steps() const { return t_; }

    /// Effective rate applied to parameter i on the most recent step.
    double last_effective_lr(std::size_t i) const { return last_lr_.at(i); }

    /// Applies one update. A non-finite gradient anywhere aborts the whole step
    /// before any parameter is touched.
    void step(ParameterSet& params, double lr) {
        auto& items = params.items();
        for (auto& p : items) {
            if (!p.tensor.has_grad()) continue;
            for (double g : p.tensor.grad())
                if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient in parameter " + p.name);
        }
        if (m_.size() != items.size()) {
            m_.resize(items.size());
            v_.resize(items.size());
        }
        last_lr_.assign(items.size(), 0.0);
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < items.size(); ++i) {
            auto& p = items[i];
            auto theta = p.tensor.mutable_data();
            if (m_[i].empty()) {
                m_[i].assign(theta.size(), 0.0);
                v_[i].assign(theta.size(), 0.0);
            }
            const double rate = lr * p.learning_rate_multiplier;
            last_lr_[i] = rate;
            auto grad = p.tensor.grad();
            for (std::size_t j = 0; j < theta.size(); ++j) {
                const double g = grad[j] + opts_.weight_decay * theta[j];
                m_[i][j] = opts_.beta1 * m_[i][j] + (1.0 - opts_.beta1) * g;
                v_[i][j] = opts_.beta2 * v_[i][j] + (1.0 - opts_.beta2) * g * g;
                const double mhat = m_[i][j] / bc1;
                const double vhat = v_[i][j] / bc2;
                theta[j] -= rate * mhat / (std::sqrt(vhat) + opts_.eps);
            }
        }
    }

private:
    AdamOptions opts_;
    long long t_ = 0;
    std::vector<std::vector<double>> m_, v_;
    std::vector<double> last_lr_;
};

}  // namespace bams
