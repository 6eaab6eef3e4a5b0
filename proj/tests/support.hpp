#pragma once

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "bams/bams.hpp"

namespace bams::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, bool requires_grad = true, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = n(rng);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<Tensor> tensors_of(ParameterSet& ps) {
    std::vector<Tensor> out;
    for (auto& p : ps.items()) out.push_back(p.tensor);
    return out;
}

/// Narrow encoders with the default depth and dilations.
inline ModelConfig tiny_model_config(std::size_t inputs, std::size_t actions, std::size_t width = 8) {
    ModelConfig c;
    c.short_spec = {{width, width, width, width}, 3, 2, 0.0};
    c.long_spec = {{width, width, width, width, width}, 3, 4, 0.0};
    c.input_channels = inputs;
    c.action_channels = actions;
    c.bins = 8;
    c.predictor_hidden = width;
    c.predictor_layers = 2;
    c.bootstrap_hidden = width;
    c.bootstrap_layers = 1;
    c.distance_hidden = width;
    c.seed = 3;
    return c;
}

/// Run config for seconds-scale training on small synthetic data.
inline RunConfig tiny_run_config(std::size_t seq_len = 200, std::size_t actions = 2, std::size_t agents = 1) {
    RunConfig cfg;
    cfg.seed = 11;
    cfg.data.n_sequences = 8;
    cfg.data.split = {0.5, 0.25, 0.25};
    cfg.data.synth.seq_len = seq_len;
    cfg.data.synth.n_actions = actions;
    cfg.data.synth.n_agents = agents;
    const auto m = tiny_model_config(1, 1);
    cfg.model.short_spec = m.short_spec;
    cfg.model.long_spec = m.long_spec;
    cfg.model.predictor_hidden = m.predictor_hidden;
    cfg.model.predictor_layers = m.predictor_layers;
    cfg.model.bootstrap_hidden = m.bootstrap_hidden;
    cfg.model.bootstrap_layers = m.bootstrap_layers;
    cfg.model.distance_hidden = m.distance_hidden;
    cfg.hoa.bins = 8;
    cfg.hoa.horizon = 10;
    cfg.bootstrap.window = 5;
    cfg.trainer.epochs = 2;
    cfg.trainer.batch_size = 4;
    cfg.trainer.anchors_per_sequence = 6;
    cfg.trainer.warmup_exclusion_s = 0.5;
    cfg.trainer.alpha_probe_batches = 2;
    cfg.eval.pca_dim = 4;
    return cfg;
}

/// In-memory synthetic trajectories, one per seed offset.
inline std::vector<Trajectory> synthetic_trajectories(const synth::SynthConfig& sc, std::size_t n, std::uint64_t seed = 5) {
    std::vector<Trajectory> out;
    for (std::size_t i = 0; i < n; ++i) {
        auto ls = synth::generate_sequence(seed + i, sc);
        Trajectory tr;
        tr.info = {synth::sequence_id(i), "train", sc.seq_len};
        tr.agents = std::move(ls.agents);
        tr.distance_pairs = agent_pairs(sc.n_agents).size();
        tr.distances = std::move(ls.distances);
        out.push_back(std::move(tr));
    }
    return out;
}

inline train::TrainingSet tiny_training_set(const RunConfig& cfg, std::size_t n = 4) {
    const auto trs = synthetic_trajectories(cfg.data.synth, n);
    return train::build_training_set(trs, synth::synthetic_layout(cfg.data.synth.n_actions), cfg.data.synth.frame_rate_hz, cfg);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("bams_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace bams::testing
