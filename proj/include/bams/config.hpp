#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bams/model.hpp"
#include "bams/synthdata.hpp"
#include "bams/util/binary_io.hpp"

namespace bams {

enum class PretrainMode { inductive, transductive };
enum class Ablation { none, hoa, bootstrap, multiscale };

inline std::string to_string(PretrainMode m) { return m == PretrainMode::inductive ? "inductive" : "transductive"; }
inline std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::hoa: return "hoa";
        case Ablation::bootstrap: return "bootstrap";
        case Ablation::multiscale: return "multiscale";
        default: return "none";
    }
}

inline PretrainMode parse_mode(const std::string& s) {
    if (s == "inductive") return PretrainMode::inductive;
    if (s == "transductive") return PretrainMode::transductive;
    throw ConfigError("unknown pretraining mode '" + s + "' (inductive|transductive)");
}

inline Ablation parse_ablation(const std::string& s) {
    if (s == "none") return Ablation::none;
    if (s == "hoa") return Ablation::hoa;
    if (s == "bootstrap") return Ablation::bootstrap;
    if (s == "multiscale") return Ablation::multiscale;
    throw ConfigError("unknown ablation '" + s + "' (none|hoa|bootstrap|multiscale)");
}

struct DataConfig {
    std::size_t n_sequences = 500;
    synth::SplitFractions split;
    synth::SynthConfig synth;
};

struct HoaConfig {
    std::size_t bins = 32;
    std::size_t horizon = 30;  // L, frames
    double q_low = 0.01, q_high = 0.99;
};

struct BootstrapConfig {
    std::size_t window = 30;  // Delta, frames
};

struct TrainerConfig {
    std::size_t epochs = 500;
    double lr = 1e-3;
    std::size_t lr_drop_epoch = 100;  // last epoch at the initial rate
    double lr_after_drop = 1e-4;
    double weight_decay = 4e-5;
    std::size_t batch_size = 96;
    std::size_t anchors_per_sequence = 64;
    double warmup_exclusion_s = 5.0;
    std::optional<double> alpha;  // empty = resolve from probe batches
    std::size_t alpha_probe_batches = 10;
    double aux_weight = 1.0;
    std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
    PretrainMode mode = PretrainMode::inductive;
    Ablation ablation = Ablation::none;

    double lr_at(std::size_t epoch) const { return epoch <= lr_drop_epoch ? lr : lr_after_drop; }
};

struct EvalConfig {
    std::size_t frame_stride = 10;
    double l2 = 1e-4;
    double tolerance = 1e-6;
    std::size_t max_iterations = 2000;
    std::size_t pca_dim = 64;
    std::vector<std::string> test_splits{"public", "private"};
};

struct RunConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ModelConfig model;
    HoaConfig hoa;
    BootstrapConfig bootstrap;
    TrainerConfig trainer;
    EvalConfig eval;

    void validate() const;
};

namespace detail {

/// Reads a JSON object field by field and rejects keys nobody asked for.
class StrictObject {
public:
    StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(label() + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& field) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            field = it->template get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(join(key) + ": invalid value (" + e.what() + ")");
        }
    }

    const nlohmann::json* child(const char* key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string join(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + join(it.key().c_str()) + "'");
    }

private:
    std::string label() const { return path_.empty() ? "config" : path_; }

    const nlohmann::json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

inline void read_encoder(const nlohmann::json& j, const std::string& path, EncoderSpec& s) {
    StrictObject o(j, path);
    o.get("block_channels", s.block_channels);
    o.get("kernel_size", s.kernel_size);
    o.get("dilation_base", s.dilation_base);
    o.get("dropout", s.dropout);
    o.finish();
}

}  // namespace detail

inline void RunConfig::validate() const {
    data.synth.validate();
    synth::split_counts(data.n_sequences, data.split);
    if (data.n_sequences == 0) throw ConfigError("data.n_sequences must be positive");
    model.short_spec.validate("model.short");
    model.long_spec.validate("model.long");
    if (model.predictor_layers == 0 || model.predictor_hidden == 0) throw ConfigError("model: predictor must have hidden layers");
    if (model.bootstrap_layers == 0 || model.bootstrap_hidden == 0) throw ConfigError("model: bootstrap predictors need hidden layers");
    if (!(model.predictor_lr_multiplier > 0)) throw ConfigError("model.predictor_lr_multiplier must be > 0");
    if (model.sequential_horizon == 0) throw ConfigError("model.sequential_horizon must be positive");
    if (hoa.bins < 2) throw ConfigError("hoa.bins must be >= 2");
    if (hoa.horizon == 0) throw ConfigError("hoa.horizon must be positive");
    if (!(hoa.q_low >= 0 && hoa.q_low < hoa.q_high && hoa.q_high <= 1)) throw ConfigError("hoa: need 0 <= q_low < q_high <= 1");
    if (bootstrap.window < 1) throw ConfigError("bootstrap.window must be >= 1");
    const auto& t = trainer;
    if (t.epochs == 0) throw ConfigError("trainer.epochs must be positive");
    if (!(t.lr > 0) || !(t.lr_after_drop > 0)) throw ConfigError("trainer: learning rates must be > 0");
    if (!(t.weight_decay >= 0)) throw ConfigError("trainer.weight_decay must be >= 0");
    if (t.batch_size == 0 || t.anchors_per_sequence == 0) throw ConfigError("trainer: batch_size and anchors_per_sequence must be positive");
    if (!(t.warmup_exclusion_s >= 0)) throw ConfigError("trainer.warmup_exclusion_s must be >= 0");
    if (t.alpha && !(*t.alpha >= 0)) throw ConfigError("trainer.alpha must be >= 0 or \"auto\"");
    if (!t.alpha && t.alpha_probe_batches == 0) throw ConfigError("trainer.alpha_probe_batches must be positive");
    if (!(t.aux_weight >= 0)) throw ConfigError("trainer.aux_weight must be >= 0");
    if (eval.frame_stride == 0) throw ConfigError("eval.frame_stride must be positive");
    if (!(eval.l2 > 0) || !(eval.tolerance > 0) || eval.max_iterations == 0) throw ConfigError("eval: invalid probe settings");
    if (eval.pca_dim == 0) throw ConfigError("eval.pca_dim must be positive");
    if (eval.test_splits.empty()) throw ConfigError("eval.test_splits must not be empty");
    for (const auto& s : eval.test_splits)
        if (s != "public" && s != "private" && s != "train") throw ConfigError("eval.test_splits: unknown split " + s);
}

inline nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["seed"] = c.seed;
    const auto& s = c.data.synth;
    nlohmann::json transitions = nlohmann::json::array();
    for (const auto& row : s.transitions) transitions.push_back(std::vector<double>(row.begin(), row.end()));
    j["data"] = {{"n_sequences", c.data.n_sequences},
                 {"split", {{"train", c.data.split.train}, {"public", c.data.split.public_test}, {"private", c.data.split.private_test}}},
                 {"seq_len", s.seq_len},
                 {"n_actions", s.n_actions},
                 {"n_agents", s.n_agents},
                 {"frame_rate_hz", s.frame_rate_hz},
                 {"dwell_min", s.dwell_min},
                 {"transitions", transitions},
                 {"max_amplitude", s.max_amplitude},
                 {"base_frequency_hz", s.base_frequency_hz},
                 {"class_b_frequency_factor", s.class_b_frequency_factor},
                 {"base_noise", s.base_noise},
                 {"difficulty_noise", s.difficulty_noise},
                 {"observation_decay", s.observation_decay}};
    const auto& m = c.model;
    j["model"] = {{"short", m.short_spec},
                  {"long", m.long_spec},
                  {"predictor_hidden", m.predictor_hidden},
                  {"predictor_layers", m.predictor_layers},
                  {"bootstrap_hidden", m.bootstrap_hidden},
                  {"bootstrap_layers", m.bootstrap_layers},
                  {"predictor_lr_multiplier", m.predictor_lr_multiplier},
                  {"distance_hidden", m.distance_hidden},
                  {"sequential_horizon", m.sequential_horizon}};
    j["hoa"] = {{"bins", c.hoa.bins}, {"horizon", c.hoa.horizon}, {"q_low", c.hoa.q_low}, {"q_high", c.hoa.q_high}};
    j["bootstrap"] = {{"window", c.bootstrap.window}};
    const auto& t = c.trainer;
    j["trainer"] = {{"epochs", t.epochs},
                    {"lr", t.lr},
                    {"lr_drop_epoch", t.lr_drop_epoch},
                    {"lr_after_drop", t.lr_after_drop},
                    {"weight_decay", t.weight_decay},
                    {"batch_size", t.batch_size},
                    {"anchors_per_sequence", t.anchors_per_sequence},
                    {"warmup_exclusion_s", t.warmup_exclusion_s},
                    {"alpha", t.alpha ? nlohmann::json(*t.alpha) : nlohmann::json("auto")},
                    {"alpha_probe_batches", t.alpha_probe_batches},
                    {"aux_weight", t.aux_weight},
                    {"checkpoint_every", t.checkpoint_every},
                    {"mode", to_string(t.mode)},
                    {"ablation", to_string(t.ablation)}};
    j["eval"] = {{"frame_stride", c.eval.frame_stride},
                 {"l2", c.eval.l2},
                 {"tolerance", c.eval.tolerance},
                 {"max_iterations", c.eval.max_iterations},
                 {"pca_dim", c.eval.pca_dim},
                 {"test_splits", c.eval.test_splits}};
    return j;
}

/// Parses a config document over the defaults. Unknown keys are errors.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
    using detail::StrictObject;
    RunConfig c;
    StrictObject root(j, "");
    root.get("seed", c.seed);
    if (const auto* d = root.child("data")) {
        StrictObject o(*d, "data");
        o.get("n_sequences", c.data.n_sequences);
        if (const auto* sp = o.child("split")) {
            StrictObject so(*sp, "data.split");
            so.get("train", c.data.split.train);
            so.get("public", c.data.split.public_test);
            so.get("private", c.data.split.private_test);
            so.finish();
        }
        auto& s = c.data.synth;
        o.get("seq_len", s.seq_len);
        o.get("n_actions", s.n_actions);
        o.get("n_agents", s.n_agents);
        o.get("frame_rate_hz", s.frame_rate_hz);
        o.get("dwell_min", s.dwell_min);
        if (const auto* tr = o.child("transitions")) {
            std::vector<std::vector<double>> rows;
            try {
                rows = tr->get<std::vector<std::vector<double>>>();
            } catch (const nlohmann::json::exception&) {
                throw ConfigError("data.transitions: expected a 4x4 array of numbers");
            }
            if (rows.size() != synth::kRegimes) throw ConfigError("data.transitions: expected 4 rows");
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (rows[i].size() != synth::kRegimes) throw ConfigError("data.transitions: row " + std::to_string(i) + " needs 4 entries");
                for (std::size_t k = 0; k < synth::kRegimes; ++k) s.transitions[i][k] = rows[i][k];
            }
        }
        o.get("max_amplitude", s.max_amplitude);
        o.get("base_frequency_hz", s.base_frequency_hz);
        o.get("class_b_frequency_factor", s.class_b_frequency_factor);
        o.get("base_noise", s.base_noise);
        o.get("difficulty_noise", s.difficulty_noise);
        o.get("observation_decay", s.observation_decay);
        o.finish();
    }
    if (const auto* mj = root.child("model")) {
        StrictObject o(*mj, "model");
        auto& m = c.model;
        if (const auto* s = o.child("short")) detail::read_encoder(*s, "model.short", m.short_spec);
        if (const auto* l = o.child("long")) detail::read_encoder(*l, "model.long", m.long_spec);
        o.get("predictor_hidden", m.predictor_hidden);
        o.get("predictor_layers", m.predictor_layers);
        o.get("bootstrap_hidden", m.bootstrap_hidden);
        o.get("bootstrap_layers", m.bootstrap_layers);
        o.get("predictor_lr_multiplier", m.predictor_lr_multiplier);
        o.get("distance_hidden", m.distance_hidden);
        o.get("sequential_horizon", m.sequential_horizon);
        o.finish();
    }
    if (const auto* h = root.child("hoa")) {
        StrictObject o(*h, "hoa");
        o.get("bins", c.hoa.bins);
        o.get("horizon", c.hoa.horizon);
        o.get("q_low", c.hoa.q_low);
        o.get("q_high", c.hoa.q_high);
        o.finish();
    }
    if (const auto* b = root.child("bootstrap")) {
        StrictObject o(*b, "bootstrap");
        o.get("window", c.bootstrap.window);
        o.finish();
    }
    if (const auto* tj = root.child("trainer")) {
        StrictObject o(*tj, "trainer");
        auto& t = c.trainer;
        o.get("epochs", t.epochs);
        o.get("lr", t.lr);
        o.get("lr_drop_epoch", t.lr_drop_epoch);
        o.get("lr_after_drop", t.lr_after_drop);
        o.get("weight_decay", t.weight_decay);
        o.get("batch_size", t.batch_size);
        o.get("anchors_per_sequence", t.anchors_per_sequence);
        o.get("warmup_exclusion_s", t.warmup_exclusion_s);
        if (const auto* a = o.child("alpha")) {
            if (a->is_string() && a->get<std::string>() == "auto")
                t.alpha.reset();
            else if (a->is_number())
                t.alpha = a->get<double>();
            else
                throw ConfigError("trainer.alpha: expected a number or \"auto\"");
        }
        o.get("alpha_probe_batches", t.alpha_probe_batches);
        o.get("aux_weight", t.aux_weight);
        o.get("checkpoint_every", t.checkpoint_every);
        std::string mode = to_string(t.mode), ablation = to_string(t.ablation);
        o.get("mode", mode);
        o.get("ablation", ablation);
        t.mode = parse_mode(mode);
        t.ablation = parse_ablation(ablation);
        o.finish();
    }
    if (const auto* e = root.child("eval")) {
        StrictObject o(*e, "eval");
        o.get("frame_stride", c.eval.frame_stride);
        o.get("l2", c.eval.l2);
        o.get("tolerance", c.eval.tolerance);
        o.get("max_iterations", c.eval.max_iterations);
        o.get("pca_dim", c.eval.pca_dim);
        o.get("test_splits", c.eval.test_splits);
        o.finish();
    }
    root.finish();
    c.validate();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    const auto bytes = io::read_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(bytes);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": malformed JSON: " + e.what());
    }
    return run_config_from_json(j);
}

inline std::string resolved_config_bytes(const RunConfig& c) { return run_config_to_json(c).dump(2) + "\n"; }

}  // namespace bams
