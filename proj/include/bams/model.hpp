#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bams/diffcore.hpp"
#include "bams/features.hpp"
#include "bams/hoa.hpp"

namespace bams {

/// One temporal convolutional encoder: residual blocks whose dilation grows
/// as dilation_base^i with the block index i.
struct EncoderSpec {
    std::vector<std::size_t> block_channels;
    std::size_t kernel_size = 3;
    std::size_t dilation_base = 2;
    double dropout = 0.1;

    std::size_t embedding_dim() const { return block_channels.back(); }

    std::size_t dilation(std::size_t block) const {
        std::size_t d = 1;
        for (std::size_t i = 0; i < block; ++i) d *= dilation_base;
        return d;
    }

    void validate(const std::string& name) const {
        if (block_channels.empty()) throw ConfigError(name + ": block_channels must be non-empty");
        for (auto c : block_channels)
            if (c == 0) throw ConfigError(name + ": block widths must be positive");
        if (kernel_size == 0) throw ConfigError(name + ": kernel_size must be positive");
        if (dilation_base == 0) throw ConfigError(name + ": dilation_base must be positive");
        if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError(name + ": dropout must be in [0, 1)");
    }
};

inline EncoderSpec default_short_spec() { return {{64, 64, 32, 32}, 3, 2, 0.1}; }
inline EncoderSpec default_long_spec() { return {{64, 64, 64, 32, 32}, 3, 4, 0.1}; }

inline void to_json(nlohmann::json& j, const EncoderSpec& s) {
    j = nlohmann::json{{"block_channels", s.block_channels},
                       {"kernel_size", s.kernel_size},
                       {"dilation_base", s.dilation_base},
                       {"dropout", s.dropout}};
}

inline void from_json(const nlohmann::json& j, EncoderSpec& s) {
    s.block_channels = j.at("block_channels").get<std::vector<std::size_t>>();
    s.kernel_size = j.at("kernel_size").get<std::size_t>();
    s.dilation_base = j.at("dilation_base").get<std::size_t>();
    s.dropout = j.at("dropout").get<double>();
}

/// Frames that can influence one output: two convolutions per block,
/// RF = 1 + sum_i 2 (k - 1) r^i.
inline std::size_t receptive_field(const EncoderSpec& spec) {
    std::size_t rf = 1;
    for (std::size_t i = 0; i < spec.block_channels.size(); ++i) rf += 2 * (spec.kernel_size - 1) * spec.dilation(i);
    return rf;
}

class TcnEncoder {
public:
    TcnEncoder() = default;

    TcnEncoder(const EncoderSpec& spec, std::size_t in_channels, ParameterSet& params, const std::string& prefix,
               std::mt19937_64& rng)
        : spec_(spec) {
        spec.validate(prefix);
        std::size_t cin = in_channels;
        for (std::size_t b = 0; b < spec.block_channels.size(); ++b) {
            const std::size_t cout = spec.block_channels[b];
            const std::string p = prefix + ".block" + std::to_string(b);
            Block blk;
            blk.dilation = spec.dilation(b);
            blk.conv1 = make_conv(params, p + ".conv1", cin, cout, rng);
            blk.slope1 = params.add(p + ".prelu1", init::constant({cout}, 0.25));
            blk.conv2 = make_conv(params, p + ".conv2", cout, cout, rng);
            blk.slope2 = params.add(p + ".prelu2", init::constant({cout}, 0.25));
            if (cin != cout) {
                blk.skip_weight = params.add(p + ".skip.weight", init::kaiming_uniform({cout, cin, 1}, cin, rng));
                blk.skip_bias = params.add(p + ".skip.bias", init::constant({cout}, 0.0));
            }
            blocks_.push_back(std::move(blk));
            cin = cout;
        }
    }

    const EncoderSpec& spec() const { return spec_; }

    /// x: [C_in x T] -> [D x T]. Dropout only when training (needs rng).
    Tensor forward(const Tensor& x, bool training, std::mt19937_64* rng) const {
        Tensor h = x;
        for (const auto& blk : blocks_) {
            Tensor y = conv(blk.conv1, h, blk.dilation);
            y = ops::prelu(y, blk.slope1, 0);
            if (training) y = ops::dropout(y, spec_.dropout, *rng, true);
            y = conv(blk.conv2, y, blk.dilation);
            y = ops::prelu(y, blk.slope2, 0);
            if (training) y = ops::dropout(y, spec_.dropout, *rng, true);
            Tensor skip = blk.skip_weight.defined() ? ops::causal_dilated_conv1d(h, blk.skip_weight, blk.skip_bias, 1) : h;
            h = ops::add(y, skip);
        }
        return h;
    }

private:
    struct Conv {
        Tensor direction, scale, bias;
    };
    struct Block {
        Conv conv1, conv2;
        Tensor slope1, slope2, skip_weight, skip_bias;
        std::size_t dilation = 1;
    };

    Conv make_conv(ParameterSet& params, const std::string& name, std::size_t cin, std::size_t cout, std::mt19937_64& rng) const {
        const std::size_t k = spec_.kernel_size;
        Conv c;
        c.direction = params.add(name + ".direction", init::kaiming_uniform({cout, cin, k}, cin * k, rng));
        // scale starts at the direction norm so the effective kernel equals the direction
        std::vector<double> norms(cout);
        for (std::size_t o = 0; o < cout; ++o) {
            double sq = 0.0;
            for (std::size_t i = 0; i < cin * k; ++i) sq += c.direction[o * cin * k + i] * c.direction[o * cin * k + i];
            norms[o] = std::sqrt(sq);
        }
        c.scale = params.add(name + ".scale", Tensor::from({cout}, std::move(norms), true));
        c.bias = params.add(name + ".bias", init::constant({cout}, 0.0));
        return c;
    }

    static Tensor conv(const Conv& c, const Tensor& x, std::size_t dilation) {
        return ops::causal_dilated_conv1d(x, ops::weight_norm_reparam(c.direction, c.scale), c.bias, dilation);
    }

    EncoderSpec spec_;
    std::vector<Block> blocks_;
};

/// Linear layers with PReLU between them.
class Mlp {
public:
    Mlp() = default;

    Mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, ParameterSet& params,
        const std::string& prefix, std::mt19937_64& rng, double lr_multiplier = 1.0) {
        std::size_t prev = in;
        std::vector<std::size_t> widths = hidden;
        widths.push_back(out);
        for (std::size_t i = 0; i < widths.size(); ++i) {
            const std::string p = prefix + ".layer" + std::to_string(i);
            Layer l;
            l.weight = params.add(p + ".weight", init::kaiming_uniform({widths[i], prev}, prev, rng), lr_multiplier);
            l.bias = params.add(p + ".bias", init::constant({widths[i]}, 0.0), lr_multiplier);
            if (i + 1 < widths.size()) l.slope = params.add(p + ".prelu", init::constant({widths[i]}, 0.25), lr_multiplier);
            layers_.push_back(std::move(l));
            prev = widths[i];
        }
    }

    Tensor forward(const Tensor& x) const {
        Tensor h = x;
        for (const auto& l : layers_) {
            h = ops::linear(h, l.weight, l.bias);
            if (l.slope.defined()) h = ops::prelu(h, l.slope, 1);
        }
        return h;
    }

    /// Final linear layer (weight, bias), e.g. to zero it for tests.
    std::pair<Tensor, Tensor> output_layer() const { return {layers_.back().weight, layers_.back().bias}; }

private:
    struct Layer {
        Tensor weight, bias, slope;
    };
    std::vector<Layer> layers_;
};

enum class HeadKind { histogram, sequential };

struct ModelConfig {
    EncoderSpec short_spec = default_short_spec();
    EncoderSpec long_spec = default_long_spec();
    bool single_encoder = false;  // one TCN spanning the long receptive field
    std::size_t input_channels = 0;
    std::size_t action_channels = 0;
    std::size_t bins = 32;
    std::size_t predictor_hidden = 128;
    std::size_t predictor_layers = 4;
    std::size_t bootstrap_hidden = 64;
    std::size_t bootstrap_layers = 2;
    double predictor_lr_multiplier = 10.0;
    bool distance_head = false;
    std::size_t distance_hidden = 64;
    HeadKind head = HeadKind::histogram;
    std::size_t sequential_horizon = 10;
    std::uint64_t seed = 0;

    /// Spec of the merged encoder: long-term depth and dilations, widened so
    /// its output matches the concatenated two-encoder embedding.
    EncoderSpec single_spec() const {
        EncoderSpec s = long_spec;
        const std::size_t dz = short_spec.embedding_dim() + long_spec.embedding_dim();
        for (auto& w : s.block_channels) w = std::max(w, dz);
        s.block_channels.back() = dz;
        return s;
    }

    void validate() const {
        short_spec.validate("model.short");
        long_spec.validate("model.long");
        if (input_channels == 0) throw ConfigError("model: input channel count must be positive");
        if (action_channels == 0) throw ConfigError("model: action channel count must be positive");
        if (bins < 2) throw ConfigError("model: bins must be >= 2");
        if (predictor_layers == 0 || predictor_hidden == 0) throw ConfigError("model: predictor must have hidden layers");
        if (!(predictor_lr_multiplier > 0)) throw ConfigError("model: predictor_lr_multiplier must be > 0");
        if (sequential_horizon == 0) throw ConfigError("model: sequential_horizon must be positive");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"short", c.short_spec},
                       {"long", c.long_spec},
                       {"single_encoder", c.single_encoder},
                       {"input_channels", c.input_channels},
                       {"action_channels", c.action_channels},
                       {"bins", c.bins},
                       {"predictor_hidden", c.predictor_hidden},
                       {"predictor_layers", c.predictor_layers},
                       {"bootstrap_hidden", c.bootstrap_hidden},
                       {"bootstrap_layers", c.bootstrap_layers},
                       {"predictor_lr_multiplier", c.predictor_lr_multiplier},
                       {"distance_head", c.distance_head},
                       {"distance_hidden", c.distance_hidden},
                       {"head", c.head == HeadKind::histogram ? "histogram" : "sequential"},
                       {"sequential_horizon", c.sequential_horizon},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    c.short_spec = j.at("short").get<EncoderSpec>();
    c.long_spec = j.at("long").get<EncoderSpec>();
    c.single_encoder = j.at("single_encoder").get<bool>();
    c.input_channels = j.at("input_channels").get<std::size_t>();
    c.action_channels = j.at("action_channels").get<std::size_t>();
    c.bins = j.at("bins").get<std::size_t>();
    c.predictor_hidden = j.at("predictor_hidden").get<std::size_t>();
    c.predictor_layers = j.at("predictor_layers").get<std::size_t>();
    c.bootstrap_hidden = j.at("bootstrap_hidden").get<std::size_t>();
    c.bootstrap_layers = j.at("bootstrap_layers").get<std::size_t>();
    c.predictor_lr_multiplier = j.at("predictor_lr_multiplier").get<double>();
    c.distance_head = j.at("distance_head").get<bool>();
    c.distance_hidden = j.at("distance_hidden").get<std::size_t>();
    c.head = j.at("head").get<std::string>() == "sequential" ? HeadKind::sequential : HeadKind::histogram;
    c.sequential_horizon = j.at("sequential_horizon").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
}

/// Per-frame embeddings of one agent in row-major [T x d] layout.
struct FrameEmbeddings {
    std::size_t frames = 0;
    std::size_t short_dim = 0, long_dim = 0;
    std::vector<double> z_short, z_long;

    /// concat[z_short, z_long] per frame; the single-encoder variant has one space.
    std::vector<double> z(bool single) const {
        if (single) return z_short;
        std::vector<double> out(frames * (short_dim + long_dim));
        for (std::size_t t = 0; t < frames; ++t) {
            std::copy_n(z_short.begin() + static_cast<std::ptrdiff_t>(t * short_dim), short_dim,
                        out.begin() + static_cast<std::ptrdiff_t>(t * (short_dim + long_dim)));
            std::copy_n(z_long.begin() + static_cast<std::ptrdiff_t>(t * long_dim), long_dim,
                        out.begin() + static_cast<std::ptrdiff_t>(t * (short_dim + long_dim) + short_dim));
        }
        return out;
    }
};

/// Two causal encoders (short- and long-term), the histogram predictor g,
/// the bootstrap predictors q_short / q_long, and the optional pairwise
/// distance head. Move-only: parameters are shared handles.
class BamsModel {
public:
    struct Metadata {
        ChannelLayout layout;
        NormalizationStats stats;
        hoa::BinningSpec binning;
        double distance_scale = 1.0;  // divisor applied to pairwise distance targets
    };

    explicit BamsModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937_64 rng(cfg_.seed);
        if (cfg_.single_encoder) {
            f_short_ = TcnEncoder(cfg_.single_spec(), cfg_.input_channels, params_, "encoder", rng);
        } else {
            f_short_ = TcnEncoder(cfg_.short_spec, cfg_.input_channels, params_, "f_short", rng);
            f_long_ = TcnEncoder(cfg_.long_spec, cfg_.input_channels, params_, "f_long", rng);
        }
        const std::size_t dz = embedding_dim();
        const std::size_t out = cfg_.head == HeadKind::histogram ? cfg_.action_channels * cfg_.bins
                                                                  : cfg_.action_channels * cfg_.sequential_horizon;
        g_ = Mlp(dz, std::vector<std::size_t>(cfg_.predictor_layers, cfg_.predictor_hidden), out, params_,
                 cfg_.head == HeadKind::histogram ? "g" : "g_sequential", rng);
        const std::vector<std::size_t> qh(cfg_.bootstrap_layers, cfg_.bootstrap_hidden);
        q_short_ = Mlp(short_dim(), qh, short_dim(), params_, "q_short", rng, cfg_.predictor_lr_multiplier);
        q_long_ = Mlp(long_dim(), qh, long_dim(), params_, "q_long", rng, cfg_.predictor_lr_multiplier);
        if (cfg_.distance_head) dist_ = Mlp(2 * dz, {cfg_.distance_hidden}, 1, params_, "dist_head", rng);
    }

    BamsModel(BamsModel&&) = default;
    BamsModel& operator=(BamsModel&&) = default;
    BamsModel(const BamsModel&) = delete;
    BamsModel& operator=(const BamsModel&) = delete;

    const ModelConfig& config() const { return cfg_; }
    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    Metadata& metadata() { return meta_; }
    const Metadata& metadata() const { return meta_; }

    bool single_encoder() const { return cfg_.single_encoder; }
    std::size_t short_dim() const { return f_short_.spec().embedding_dim(); }
    std::size_t long_dim() const { return cfg_.single_encoder ? short_dim() : f_long_.spec().embedding_dim(); }
    std::size_t embedding_dim() const { return cfg_.single_encoder ? short_dim() : short_dim() + long_dim(); }

    struct Encoded {
        Tensor z_short;  // [d_s x T]
        Tensor z_long;   // [d_l x T]; the same tensor in single-encoder mode
    };

    /// features: normalized [C x T].
    Encoded forward(const Tensor& features, bool training, std::mt19937_64* rng) const {
        if (features.rank() != 2 || features.dim(0) != cfg_.input_channels)
            throw SchemaError("encode: model expects " + std::to_string(cfg_.input_channels) + " input channels, got " +
                              shape_str(features.shape()));
        Encoded e;
        e.z_short = f_short_.forward(features, training, rng);
        e.z_long = cfg_.single_encoder ? e.z_short : f_long_.forward(features, training, rng);
        return e;
    }

    /// Rows of z = concat[z_short, z_long] at the given frames: [B x dz].
    Tensor gather_z(const Encoded& e, std::span<const std::size_t> frames) const {
        Tensor zs = ops::gather_cols(e.z_short, frames);
        if (cfg_.single_encoder) return zs;
        return ops::concat_cols(zs, ops::gather_cols(e.z_long, frames));
    }

    /// Inference-mode embeddings of one normalized feature sequence.
    FrameEmbeddings encode(const FeatureSequence& normalized) const {
        NoGradGuard ng;
        Tensor x = Tensor::from({normalized.channels, normalized.frames}, normalized.values);
        auto e = forward(x, false, nullptr);
        FrameEmbeddings out;
        out.frames = normalized.frames;
        out.short_dim = short_dim();
        out.long_dim = long_dim();
        out.z_short = transpose(e.z_short);
        out.z_long = transpose(e.z_long);
        return out;
    }

    /// g(z) before the softmax: [B x N x K].
    Tensor hoa_logits(const Tensor& z) const {
        require_head(HeadKind::histogram, "predict_hoa");
        return ops::reshape(g_.forward(z), {z.dim(0), cfg_.action_channels, cfg_.bins});
    }

    /// Normalized future-action histograms [B x N x K].
    Tensor predict_hoa(const Tensor& z) const { return ops::softmax_rows(hoa_logits(z)); }

    /// Sequential-prediction head output [B x horizon*N] (frame-major).
    Tensor predict_sequence(const Tensor& z) const {
        require_head(HeadKind::sequential, "predict_sequence");
        return g_.forward(z);
    }

    Tensor q_short(const Tensor& z_short_rows) const { return q_short_.forward(z_short_rows); }
    Tensor q_long(const Tensor& z_long_rows) const { return q_long_.forward(z_long_rows); }

    /// Symmetric nonnegative distance estimate from two agents' embeddings [B x dz] -> [B].
    Tensor predict_distance(const Tensor& z_i, const Tensor& z_j) const {
        if (!cfg_.distance_head) throw UsageError("predict_distance: model has no distance head (single-agent mode)");
        Tensor in = ops::concat_cols(ops::add(z_i, z_j), ops::abs(ops::sub(z_i, z_j)));
        Tensor out = ops::softplus(dist_.forward(in));
        return ops::reshape(out, {z_i.dim(0)});
    }

    const Mlp& histogram_predictor() const { return g_; }

private:
    void require_head(HeadKind k, const char* op) const {
        if (cfg_.head != k) throw UsageError(std::string(op) + ": not available for this model's prediction head");
    }

    static std::vector<double> transpose(const Tensor& m) {
        const std::size_t rows = m.dim(0), cols = m.dim(1);
        std::vector<double> out(rows * cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = m[r * cols + c];
        return out;
    }

    ModelConfig cfg_;
    ParameterSet params_;
    TcnEncoder f_short_, f_long_;
    Mlp g_, q_short_, q_long_, dist_;
    Metadata meta_;
};

}  // namespace bams
