#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "bams/diffcore/tensor.hpp"

namespace bams::ops {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

namespace detail {

inline void require(bool ok, const char* op, const std::string& detail) {
    if (!ok) throw ShapeError(op, detail);
}

inline Storage& grad_of(bams::detail::Node& n, std::size_t input) {
    return n.inputs[input]->grad_buffer();
}

inline bool wants_grad(const bams::detail::Node& n, std::size_t input) {
    return n.inputs[input]->requires_grad;
}

}  // namespace detail

inline Tensor reshape(const Tensor& x, Shape shape) {
    detail::require(shape_numel(shape) == x.numel(), "reshape",
                    "cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    return Tensor::make_result(std::move(shape), Storage(x.data().begin(), x.data().end()), {x},
                               [](bams::detail::Node& n) {
                                   auto& g = detail::grad_of(n, 0);
                                   for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
                               });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "add", "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    Storage out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](bams::detail::Node& n) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!detail::wants_grad(n, k)) continue;
            auto& g = detail::grad_of(n, k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
    });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::require(a.shape() == b.shape(), "sub", "shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    Storage out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](bams::detail::Node& n) {
        if (detail::wants_grad(n, 0)) {
            auto& g = detail::grad_of(n, 0);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
        }
        if (detail::wants_grad(n, 1)) {
            auto& g = detail::grad_of(n, 1);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

inline Tensor scale(const Tensor& a, double s) {
    Storage out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
    return Tensor::make_result(a.shape(), std::move(out), {a}, [s](bams::detail::Node& n) {
        auto& g = detail::grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * n.grad[i];
    });
}

inline Tensor sum(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return Tensor::make_result({1}, {s}, {a}, [](bams::detail::Node& n) {
        auto& g = detail::grad_of(n, 0);
        for (double& v : g) v += n.grad[0];
    });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor abs(const Tensor& a) {
    Storage out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(a[i]);
    return Tensor::make_result(a.shape(), std::move(out), {a}, [](bams::detail::Node& n) {
        auto& g = detail::grad_of(n, 0);
        const auto& x = n.inputs[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0)) * n.grad[i];
    });
}

/// log(1 + e^x), evaluated without overflow.
inline Tensor softplus(const Tensor& a) {
    Storage out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        double x = a[i];
        out[i] = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    return Tensor::make_result(a.shape(), std::move(out), {a}, [](bams::detail::Node& n) {
        auto& g = detail::grad_of(n, 0);
        const auto& x = n.inputs[0]->value;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i] / (1.0 + std::exp(-x[i]));
    });
}

/// Affine map per row. x: [F_in] or [B x F_in]; weight: [F_out x F_in]; bias: [F_out] or undefined.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {}) {
    detail::require(weight.rank() == 2, "linear", "weight must be rank 2, got " + shape_str(weight.shape()));
    const std::size_t fout = weight.dim(0), fin = weight.dim(1);
    const bool vec = x.rank() == 1;
    detail::require(x.rank() == 1 || x.rank() == 2, "linear", "input must be rank 1 or 2");
    const std::size_t rows = vec ? 1 : x.dim(0);
    const std::size_t xin = vec ? x.dim(0) : x.dim(1);
    detail::require(xin == fin, "linear",
                    "input features " + std::to_string(xin) + " != weight in-features " + std::to_string(fin));
    if (bias.defined())
        detail::require(bias.numel() == fout, "linear",
                        "bias length " + std::to_string(bias.numel()) + " != out-features " + std::to_string(fout));

    Storage out(rows * fout);
    CMapMat X(x.data().data(), rows, fin);
    CMapMat W(weight.data().data(), fout, fin);
    MapMat Y(out.data(), rows, fout);
    Y.noalias() = X * W.transpose();
    if (bias.defined()) {
        Eigen::Map<const Eigen::RowVectorXd> b(bias.data().data(), fout);
        Y.rowwise() += b;
    }
    Shape shape = vec ? Shape{fout} : Shape{rows, fout};
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return Tensor::make_result(std::move(shape), std::move(out), std::move(inputs),
                               [rows, fin, fout, has_bias](bams::detail::Node& n) {
                                   CMapMat G(n.grad.data(), rows, fout);
                                   if (detail::wants_grad(n, 0)) {
                                       MapMat GX(detail::grad_of(n, 0).data(), rows, fin);
                                       CMapMat W(n.inputs[1]->value.data(), fout, fin);
                                       GX.noalias() += G * W;
                                   }
                                   if (detail::wants_grad(n, 1)) {
                                       MapMat GW(detail::grad_of(n, 1).data(), fout, fin);
                                       CMapMat X(n.inputs[0]->value.data(), rows, fin);
                                       GW.noalias() += G.transpose() * X;
                                   }
                                   if (has_bias && detail::wants_grad(n, 2)) {
                                       Eigen::Map<Eigen::RowVectorXd> gb(detail::grad_of(n, 2).data(), fout);
                                       gb += G.colwise().sum();
                                   }
                               });
}

/// Causal dilated 1-D convolution with left zero-padding of (k-1)*dilation.
/// input: [C_in x T]; kernel: [C_out x C_in x k]; bias: [C_out] or undefined.
/// out[c,t] = sum_{c',j} kernel[c,c',j] * input[c', t - (k-1-j)*dilation].
inline Tensor causal_dilated_conv1d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                                    std::size_t dilation) {
    detail::require(input.rank() == 2, "causal_dilated_conv1d", "input must be [C_in x T], got " + shape_str(input.shape()));
    detail::require(kernel.rank() == 3, "causal_dilated_conv1d",
                    "kernel must be [C_out x C_in x k], got " + shape_str(kernel.shape()));
    detail::require(dilation >= 1, "causal_dilated_conv1d", "dilation must be >= 1");
    const std::size_t cin = input.dim(0), T = input.dim(1);
    const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
    detail::require(T >= 1, "causal_dilated_conv1d", "time dimension T must be >= 1");
    detail::require(kernel.dim(1) == cin, "causal_dilated_conv1d",
                    "C_in mismatch: input has " + std::to_string(cin) + " channels, kernel expects " +
                        std::to_string(kernel.dim(1)));
    detail::require(k >= 1, "causal_dilated_conv1d", "kernel size must be >= 1");
    if (bias.defined())
        detail::require(bias.numel() == cout, "causal_dilated_conv1d",
                        "C_out mismatch: bias has " + std::to_string(bias.numel()) + ", kernel has " +
                            std::to_string(cout));

    // taps[j] is the contiguous [C_out x C_in] slice kernel[:, :, j]
    auto split_taps = [cout, cin, k](const Storage& w) {
        std::vector<RowMat> taps(k, RowMat(cout, cin));
        for (std::size_t o = 0; o < cout; ++o)
            for (std::size_t i = 0; i < cin; ++i)
                for (std::size_t j = 0; j < k; ++j) taps[j](o, i) = w[(o * cin + i) * k + j];
        return taps;
    };
    auto taps = split_taps(kernel.node().value);

    Storage out(cout * T, 0.0);
    CMapMat X(input.data().data(), cin, T);
    MapMat Y(out.data(), cout, T);
    for (std::size_t j = 0; j < k; ++j) {
        const std::size_t shift = (k - 1 - j) * dilation;
        if (shift >= T) continue;
        const auto len = static_cast<Eigen::Index>(T - shift);
        Y.rightCols(len).noalias() += taps[j] * X.leftCols(len);
    }
    if (bias.defined()) {
        Eigen::Map<const Eigen::VectorXd> b(bias.data().data(), cout);
        Y.colwise() += b;
    }
    std::vector<Tensor> inputs{input, kernel};
    if (bias.defined()) inputs.push_back(bias);
    const bool has_bias = bias.defined();
    return Tensor::make_result(
        {cout, T}, std::move(out), std::move(inputs),
        [cin, cout, k, T, dilation, has_bias, split_taps](bams::detail::Node& n) {
            CMapMat G(n.grad.data(), cout, T);
            CMapMat X(n.inputs[0]->value.data(), cin, T);
            if (detail::wants_grad(n, 0)) {
                auto taps = split_taps(n.inputs[1]->value);
                MapMat GX(detail::grad_of(n, 0).data(), cin, T);
                for (std::size_t j = 0; j < k; ++j) {
                    const std::size_t shift = (k - 1 - j) * dilation;
                    if (shift >= T) continue;
                    const auto len = static_cast<Eigen::Index>(T - shift);
                    GX.leftCols(len).noalias() += taps[j].transpose() * G.rightCols(len);
                }
            }
            if (detail::wants_grad(n, 1)) {
                auto& gw = detail::grad_of(n, 1);
                RowMat tap_grad(cout, cin);
                for (std::size_t j = 0; j < k; ++j) {
                    const std::size_t shift = (k - 1 - j) * dilation;
                    if (shift >= T) continue;
                    const auto len = static_cast<Eigen::Index>(T - shift);
                    tap_grad.noalias() = G.rightCols(len) * X.leftCols(len).transpose();
                    for (std::size_t o = 0; o < cout; ++o)
                        for (std::size_t i = 0; i < cin; ++i) gw[(o * cin + i) * k + j] += tap_grad(o, i);
                }
            }
            if (has_bias && detail::wants_grad(n, 2)) {
                Eigen::Map<Eigen::VectorXd> gb(detail::grad_of(n, 2).data(), cout);
                gb += G.rowwise().sum();
            }
        });
}

inline constexpr double kWeightNormEps = 1e-8;

/// effective[c] = scale[c] * direction[c] / sqrt(|direction[c]|^2 + eps^2), per output channel c (dim 0).
inline Tensor weight_norm_reparam(const Tensor& direction, const Tensor& scale) {
    const std::size_t rows = direction.dim(0);
    detail::require(scale.numel() == rows, "weight_norm_reparam",
                    "scale length " + std::to_string(scale.numel()) + " != output channels " + std::to_string(rows));
    const std::size_t width = direction.numel() / rows;
    std::vector<double> norms(rows);
    Storage out(direction.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (std::size_t i = 0; i < width; ++i) sq += direction[r * width + i] * direction[r * width + i];
        norms[r] = std::sqrt(sq + kWeightNormEps * kWeightNormEps);
        for (std::size_t i = 0; i < width; ++i) out[r * width + i] = scale[r] * direction[r * width + i] / norms[r];
    }
    return Tensor::make_result(direction.shape(), std::move(out), {direction, scale},
                               [rows, width, norms](bams::detail::Node& n) {
                                   const auto& v = n.inputs[0]->value;
                                   const auto& s = n.inputs[1]->value;
                                   for (std::size_t r = 0; r < rows; ++r) {
                                       double dot = 0.0;  // <grad, v>
                                       for (std::size_t i = 0; i < width; ++i) dot += n.grad[r * width + i] * v[r * width + i];
                                       if (detail::wants_grad(n, 1)) detail::grad_of(n, 1)[r] += dot / norms[r];
                                       if (detail::wants_grad(n, 0)) {
                                           auto& gv = detail::grad_of(n, 0);
                                           const double nr = norms[r];
                                           for (std::size_t i = 0; i < width; ++i)
                                               gv[r * width + i] +=
                                                   s[r] * (n.grad[r * width + i] / nr - dot * v[r * width + i] / (nr * nr * nr));
                                       }
                                   }
                               });
}

/// Parametric ReLU with one slope per channel. channel_axis 0 for [C x T], 1 for [B x C].
inline Tensor prelu(const Tensor& x, const Tensor& slope, std::size_t channel_axis) {
    detail::require(x.rank() == 2 || (x.rank() == 1 && channel_axis == 0), "prelu",
                    "input must be rank 2 (or rank 1 with channel axis 0)");
    const std::size_t rows = x.rank() == 2 ? x.dim(0) : x.dim(0);
    const std::size_t cols = x.rank() == 2 ? x.dim(1) : 1;
    const std::size_t channels = channel_axis == 0 ? rows : cols;
    detail::require(slope.numel() == channels, "prelu",
                    "slope count " + std::to_string(slope.numel()) + " != channels " + std::to_string(channels));
    Storage out(x.numel());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const double a = slope[channel_axis == 0 ? r : c];
            out[i] = x[i] >= 0 ? x[i] : a * x[i];
        }
    return Tensor::make_result(x.shape(), std::move(out), {x, slope}, [rows, cols, channel_axis](bams::detail::Node& n) {
        const auto& xv = n.inputs[0]->value;
        const auto& av = n.inputs[1]->value;
        const bool gx = detail::wants_grad(n, 0), ga = detail::wants_grad(n, 1);
        Storage* gxb = gx ? &detail::grad_of(n, 0) : nullptr;
        Storage* gab = ga ? &detail::grad_of(n, 1) : nullptr;
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) {
                const std::size_t i = r * cols + c;
                const std::size_t ch = channel_axis == 0 ? r : c;
                if (xv[i] >= 0) {
                    if (gx) (*gxb)[i] += n.grad[i];
                } else {
                    if (gx) (*gxb)[i] += av[ch] * n.grad[i];
                    if (ga) (*gab)[ch] += xv[i] * n.grad[i];
                }
            }
    });
}

/// Inverted dropout; identity when not training or rate == 0.
inline Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng, bool training) {
    if (!training || rate <= 0.0) return x;
    detail::require(rate < 1.0, "dropout", "rate must be < 1");
    std::bernoulli_distribution keep(1.0 - rate);
    const double inv = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    Storage out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = keep(rng) ? inv : 0.0;
        out[i] = x[i] * mask[i];
    }
    return Tensor::make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](bams::detail::Node& n) {
        auto& g = detail::grad_of(n, 0);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += mask[i] * n.grad[i];
    });
}

/// Selects time columns of a channel-major [C x T] array and returns them as rows: [n x C].
inline Tensor gather_cols(const Tensor& x, std::span<const std::size_t> cols) {
    detail::require(x.rank() == 2, "gather_cols", "input must be [C x T]");
    const std::size_t C = x.dim(0), T = x.dim(1);
    std::vector<std::size_t> idx(cols.begin(), cols.end());
    Storage out(idx.size() * C);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        detail::require(idx[r] < T, "gather_cols", "time index " + std::to_string(idx[r]) + " >= T=" + std::to_string(T));
        for (std::size_t c = 0; c < C; ++c) out[r * C + c] = x[c * T + idx[r]];
    }
    return Tensor::make_result({idx.size(), C}, std::move(out), {x}, [idx, C, T](bams::detail::Node& n) {
        auto& g = detail::grad_of(n, 0);
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < C; ++c) g[c * T + idx[r]] += n.grad[r * C + c];
    });
}

/// [n x p] ++ [n x q] -> [n x (p+q)]
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    detail::require(a.rank() == 2 && b.rank() == 2 && a.dim(0) == b.dim(0), "concat_cols",
                    "row counts differ: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const std::size_t n = a.dim(0), p = a.dim(1), q = b.dim(1);
    Storage out(n * (p + q));
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(a.data().begin() + static_cast<std::ptrdiff_t>(r * p), p, out.begin() + static_cast<std::ptrdiff_t>(r * (p + q)));
        std::copy_n(b.data().begin() + static_cast<std::ptrdiff_t>(r * q), q,
                    out.begin() + static_cast<std::ptrdiff_t>(r * (p + q) + p));
    }
    return Tensor::make_result({n, p + q}, std::move(out), {a, b}, [n, p, q](bams::detail::Node& node) {
        for (std::size_t r = 0; r < n; ++r) {
            if (detail::wants_grad(node, 0)) {
                auto& ga = detail::grad_of(node, 0);
                for (std::size_t c = 0; c < p; ++c) ga[r * p + c] += node.grad[r * (p + q) + c];
            }
            if (detail::wants_grad(node, 1)) {
                auto& gb = detail::grad_of(node, 1);
                for (std::size_t c = 0; c < q; ++c) gb[r * q + c] += node.grad[r * (p + q) + p + c];
            }
        }
    });
}

/// Stacks rank-2 tensors with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    detail::require(!parts.empty(), "concat_rows", "no inputs");
    const std::size_t cols = parts[0].dim(1);
    std::size_t rows = 0;
    std::vector<std::size_t> offsets;
    for (const auto& p : parts) {
        detail::require(p.rank() == 2 && p.dim(1) == cols, "concat_rows",
                        "column count " + std::to_string(p.rank() == 2 ? p.dim(1) : 0) + " != " + std::to_string(cols));
        offsets.push_back(rows);
        rows += p.dim(0);
    }
    Storage out;
    out.reserve(rows * cols);
    for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    return Tensor::make_result({rows, cols}, std::move(out), parts, [offsets, cols](bams::detail::Node& n) {
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            if (!detail::wants_grad(n, k)) continue;
            auto& g = detail::grad_of(n, k);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[offsets[k] * cols + i];
        }
    });
}

/// Numerically stable softmax over the last dimension.
inline Tensor softmax_rows(const Tensor& logits) {
    detail::require(logits.rank() >= 1 && logits.shape().back() >= 1, "softmax_rows", "last dimension must be >= 1");
    const std::size_t K = logits.shape().back();
    const std::size_t R = logits.numel() / K;
    Storage out(logits.numel());
    for (std::size_t r = 0; r < R; ++r) {
        const double* x = logits.data().data() + r * K;
        double mx = x[0];
        for (std::size_t k = 0; k < K; ++k) {
            if (std::isnan(x[k])) throw NumericError("softmax_rows: NaN logit in row " + std::to_string(r));
            mx = std::max(mx, x[k]);
        }
        double z = 0.0;
        for (std::size_t k = 0; k < K; ++k) z += (out[r * K + k] = std::exp(x[k] - mx));
        for (std::size_t k = 0; k < K; ++k) out[r * K + k] /= z;
    }
    return Tensor::make_result(logits.shape(), std::move(out), {logits}, [R, K](bams::detail::Node& n) {
        // the node's own value holds the probabilities
        auto& g = detail::grad_of(n, 0);
        for (std::size_t r = 0; r < R; ++r) {
            const double* p = n.value.data() + r * K;
            const double* gy = n.grad.data() + r * K;
            double dot = 0.0;
            for (std::size_t k = 0; k < K; ++k) dot += p[k] * gy[k];
            for (std::size_t k = 0; k < K; ++k) g[r * K + k] += p[k] * (gy[k] - dot);
        }
    });
}

/// Weighted mean squared error against a constant target:
/// sum_i w_i (x_i - y_i)^2 / sum_i w_i. Zero when all weights are zero.
inline Tensor masked_mse(const Tensor& x, std::vector<double> target, std::vector<double> weight) {
    detail::require(target.size() == x.numel() && weight.size() == x.numel(), "masked_mse",
                    "target/weight length must equal input numel " + std::to_string(x.numel()));
    double wsum = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        wsum += weight[i];
        const double d = x[i] - target[i];
        acc += weight[i] * d * d;
    }
    const double denom = wsum > 0 ? wsum : 1.0;
    return Tensor::make_result({1}, {acc / denom}, {x},
                               [target = std::move(target), weight = std::move(weight), denom](bams::detail::Node& n) {
                                   auto& g = detail::grad_of(n, 0);
                                   const auto& xv = n.inputs[0]->value;
                                   for (std::size_t i = 0; i < g.size(); ++i)
                                       g[i] += n.grad[0] * 2.0 * weight[i] * (xv[i] - target[i]) / denom;
                               });
}

}  // namespace bams::ops
