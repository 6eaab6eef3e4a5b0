#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "bams/bootstrap.hpp"
#include "bams/checkpoint.hpp"
#include "bams/config.hpp"
#include "bams/dataset.hpp"

namespace bams::train {

/// One pretraining sequence, ready for batching.
struct TrainingSequence {
    std::string id;
    std::size_t frames = 0;
    std::vector<Tensor> inputs;                        // normalized [C x T] per agent
    std::vector<std::vector<unsigned char>> validity;  // per agent
    std::vector<std::vector<double>> actions;          // raw [N x T] per agent
    std::vector<std::size_t> eligible;                 // anchor frames usable for every agent
    std::size_t pairs = 0;
    std::vector<double> distances;  // [T x pairs], divided by the distance scale
};

struct TrainingSet {
    std::vector<TrainingSequence> sequences;
    ChannelLayout layout;
    NormalizationStats stats;
    hoa::BinningSpec binning;
    double distance_scale = 1.0;
    std::size_t n_agents = 1;
};

inline std::size_t warmup_frames(double seconds, double fps) {
    return static_cast<std::size_t>(std::ceil(seconds * fps - 1e-9));
}

/// Fits normalization, binning and the distance scale on `trajectories`
/// (the pretraining split) and precomputes per-sequence anchor candidates.
inline TrainingSet build_training_set(const std::vector<Trajectory>& trajectories, const ChannelLayout& layout,
                                      double frame_rate_hz, const RunConfig& cfg) {
    layout.validate();
    if (trajectories.empty()) throw ConfigError("train: no pretraining sequences");
    TrainingSet ts;
    ts.layout = layout;
    ts.n_agents = trajectories.front().agents.size();

    std::vector<const FeatureSequence*> all;
    for (const auto& tr : trajectories) {
        if (tr.agents.size() != ts.n_agents) throw SchemaError("train: sequence " + tr.info.id + " has a different agent count");
        for (const auto& a : tr.agents) all.push_back(&a);
    }
    ts.stats = fit_normalization(all, layout);

    const std::size_t N = layout.action_channels.size();
    std::vector<std::vector<double>> values(N);
    for (const auto* f : all) {
        const auto valid = f->validity(layout);
        for (std::size_t n = 0; n < N; ++n) {
            const auto ch = f->channel(layout.action_channels[n]);
            for (std::size_t t = 0; t < f->frames; ++t)
                if (valid[t]) values[n].push_back(ch[t]);
        }
    }
    ts.binning = hoa::fit_binning(values, cfg.hoa.bins, cfg.hoa.q_low, cfg.hoa.q_high);

    if (ts.n_agents > 1) {
        double sum = 0.0, sumsq = 0.0;
        std::size_t count = 0;
        for (const auto& tr : trajectories)
            for (double d : tr.distances) sum += d, ++count;
        const double mean = count ? sum / static_cast<double>(count) : 0.0;
        for (const auto& tr : trajectories)
            for (double d : tr.distances) sumsq += (d - mean) * (d - mean);
        const double sd = count > 1 ? std::sqrt(sumsq / static_cast<double>(count)) : 0.0;
        ts.distance_scale = sd > 1e-12 ? sd : 1.0;
    }

    const std::size_t warmup = warmup_frames(cfg.trainer.warmup_exclusion_s, frame_rate_hz);
    const std::size_t window = std::max(cfg.hoa.horizon, cfg.model.sequential_horizon);
    for (const auto& tr : trajectories) {
        TrainingSequence s;
        s.id = tr.info.id;
        s.frames = tr.agents.front().frames;
        for (const auto& a : tr.agents) {
            const auto norm = apply_normalization(a, ts.stats, layout);
            s.inputs.push_back(Tensor::from({norm.channels, norm.frames}, norm.values));
            s.validity.push_back(a.validity(layout));
            std::vector<double> act(N * a.frames);
            for (std::size_t n = 0; n < N; ++n) {
                const auto ch = a.channel(layout.action_channels[n]);
                std::copy(ch.begin(), ch.end(), act.begin() + static_cast<std::ptrdiff_t>(n * a.frames));
            }
            s.actions.push_back(std::move(act));
        }
        for (std::size_t t = warmup; t < s.frames; ++t) {
            bool ok = true;
            for (const auto& v : s.validity) ok = ok && v[t] && valid_prediction_window(v, t, window);
            if (ok) s.eligible.push_back(t);
        }
        if (ts.n_agents > 1) {
            s.pairs = tr.distance_pairs;
            s.distances = tr.distances;
            for (double& d : s.distances) d /= ts.distance_scale;
        }
        ts.sequences.push_back(std::move(s));
    }
    return ts;
}

/// Sequence ids used for pretraining in the given mode.
inline std::vector<std::string> pretraining_ids(const Manifest& m, PretrainMode mode) {
    if (mode == PretrainMode::inductive) return m.ids_in_split("train");
    std::vector<std::string> ids;
    for (const auto& s : m.sequences) ids.push_back(s.id);
    return ids;
}

/// Loads the pretraining sequences (features only; no labels are read).
inline TrainingSet load_training_set(DatasetReader& reader, const RunConfig& cfg) {
    std::vector<Trajectory> trs;
    for (const auto& id : pretraining_ids(reader.manifest(), cfg.trainer.mode)) trs.push_back(reader.load(id, false));
    return build_training_set(trs, reader.manifest().layout, reader.manifest().frame_rate_hz, cfg);
}

/// Model configuration implied by the run config, the data, and the ablation.
inline ModelConfig make_model_config(const RunConfig& cfg, const TrainingSet& ts) {
    ModelConfig m = cfg.model;
    m.input_channels = ts.layout.size();
    m.action_channels = ts.layout.action_channels.size();
    m.bins = cfg.hoa.bins;
    m.seed = cfg.seed;
    m.distance_head = ts.n_agents > 1;
    m.single_encoder = cfg.trainer.ablation == Ablation::multiscale;
    m.head = cfg.trainer.ablation == Ablation::hoa ? HeadKind::sequential : HeadKind::histogram;
    return m;
}

inline BamsModel make_model(const RunConfig& cfg, const TrainingSet& ts) {
    BamsModel model(make_model_config(cfg, ts));
    model.metadata() = {ts.layout, ts.stats, ts.binning, ts.distance_scale};
    return model;
}

/// Targets and positive views for one sequence of a batch.
struct BatchItem {
    const TrainingSequence* seq = nullptr;
    std::vector<std::size_t> anchors;
    std::vector<std::vector<double>> hoa_targets;     // per agent [n x N x K]
    std::vector<std::vector<double>> future_actions;  // per agent [n x H x N]
    std::vector<std::vector<double>> future_weights;  // per agent, 1 on valid future frames
    std::vector<bootstrap::PositivePlan> plans;       // per agent
};

struct Batch {
    std::vector<BatchItem> items;
    std::size_t anchor_rows = 0;  // sum over items and agents of anchor counts
    std::size_t plan_rows = 0;    // sum over plans of entries
    std::size_t pair_rows = 0;    // sum over items of anchors x pairs
};

inline std::vector<std::size_t> sample_anchors(const TrainingSequence& s, std::size_t count, std::mt19937_64& rng) {
    if (s.eligible.size() <= count) return s.eligible;
    std::vector<std::size_t> out;
    out.reserve(count);
    std::sample(s.eligible.begin(), s.eligible.end(), std::back_inserter(out), count, rng);
    return out;
}

inline Batch make_batch(const TrainingSet& ts, std::span<const std::size_t> sequence_indices, const RunConfig& cfg,
                        HeadKind head, std::mt19937_64& rng) {
    Batch b;
    const std::size_t N = ts.layout.action_channels.size(), K = ts.binning.bins, L = cfg.hoa.horizon;
    const std::size_t H = cfg.model.sequential_horizon;
    for (std::size_t idx : sequence_indices) {
        const auto& s = ts.sequences.at(idx);
        BatchItem item;
        item.seq = &s;
        item.anchors = sample_anchors(s, cfg.trainer.anchors_per_sequence, rng);
        if (item.anchors.empty()) continue;
        const std::size_t n = item.anchors.size(), T = s.frames;
        for (std::size_t a = 0; a < s.inputs.size(); ++a) {
            const auto& act = s.actions[a];
            const auto& valid = s.validity[a];
            if (head == HeadKind::histogram) {
                std::vector<double> tg(n * N * K);
                for (std::size_t r = 0; r < n; ++r) {
                    const std::size_t t = item.anchors[r];
                    for (std::size_t c = 0; c < N; ++c) {
                        std::span<const double> win(act.data() + c * T + t + 1, L);
                        std::span<const unsigned char> vw(valid.data() + t + 1, L);
                        const auto h = hoa::action_histogram(win, ts.binning, c, vw);
                        std::copy(h.begin(), h.end(), tg.begin() + static_cast<std::ptrdiff_t>((r * N + c) * K));
                    }
                }
                item.hoa_targets.push_back(std::move(tg));
            } else {
                std::vector<double> y(n * H * N), w(n * H * N);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t h = 0; h < H; ++h) {
                        const std::size_t t = item.anchors[r] + 1 + h;
                        for (std::size_t c = 0; c < N; ++c) {
                            y[(r * H + h) * N + c] = act[c * T + t];
                            w[(r * H + h) * N + c] = valid[t] ? 1.0 : 0.0;
                        }
                    }
                item.future_actions.push_back(std::move(y));
                item.future_weights.push_back(std::move(w));
            }
            item.plans.push_back(bootstrap::sample_positives(rng, valid, item.anchors, cfg.bootstrap.window));
            b.anchor_rows += n;
            b.plan_rows += item.plans.back().entries.size();
        }
        b.pair_rows += n * s.pairs;
        b.items.push_back(std::move(item));
    }
    return b;
}

/// Loss terms of one batch. `total` is a graph node only when built by combined_loss.
struct LossTerms {
    Tensor total;
    double loss = 0.0, hoa = 0.0, boot_short = 0.0, boot_long = 0.0, aux = 0.0;

    void accumulate(const LossTerms& o) {
        loss += o.loss;
        hoa += o.hoa;
        boot_short += o.boot_short;
        boot_long += o.boot_long;
        aux += o.aux;
    }
};

struct Counters {
    std::size_t empty_plans = 0;
    std::size_t empty_hoa_batches = 0;
    std::size_t alpha_fallbacks = 0;
};

/// Called with the target histograms and predicted rows of every HoA loss evaluation.
using HistogramObserver = std::function<void(std::span<const double> targets, const Tensor& predicted)>;

/// Mean squared error of the next-H-frame action prediction over valid frames.
inline Tensor sequential_prediction_loss(const BamsModel& model, const Tensor& z, std::vector<double> future,
                                         std::vector<double> weights) {
    return ops::masked_mse(model.predict_sequence(z), std::move(future), std::move(weights));
}

namespace detail {

inline void require_finite(double v, const char* component, const std::string& where) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + component + " " + where);
}

inline Tensor add_term(const Tensor& acc, const Tensor& term) { return acc.defined() ? ops::add(acc, term) : term; }

}  // namespace detail

/// Loss of one batch item with every term already scaled by its share of
/// the batch, so summing items gives the batch means.
inline LossTerms item_loss(const BamsModel& model, const BatchItem& item, const Batch& batch, double alpha, double beta,
                           bool training, std::mt19937_64* dropout_rng, Counters* counters = nullptr,
                           const HistogramObserver& observer = {}) {
    const auto& s = *item.seq;
    const std::size_t A = s.inputs.size();
    const std::size_t n = item.anchors.size();
    const double anchor_share = static_cast<double>(n) / static_cast<double>(batch.anchor_rows);
    LossTerms out;
    Tensor total;
    Tensor hoa_sum, bs_sum, bl_sum;
    std::vector<Tensor> zs;
    for (std::size_t a = 0; a < A; ++a) {
        const auto enc = model.forward(s.inputs[a], training, dropout_rng);
        const Tensor z = model.gather_z(enc, item.anchors);
        if (model.config().head == HeadKind::histogram) {
            const Tensor pred = model.predict_hoa(z);
            if (observer) observer(item.hoa_targets[a], pred);
            std::vector<unsigned char> mask(n, 1);
            std::size_t* empty = counters ? &counters->empty_hoa_batches : nullptr;
            hoa_sum = detail::add_term(hoa_sum, ops::scale(hoa::hoa_loss(pred, item.hoa_targets[a], mask, empty), anchor_share));
        } else {
            hoa_sum = detail::add_term(
                hoa_sum, ops::scale(sequential_prediction_loss(model, z, item.future_actions[a], item.future_weights[a]), anchor_share));
        }
        const auto& plan = item.plans[a];
        const double plan_share =
            batch.plan_rows ? static_cast<double>(plan.entries.size()) / static_cast<double>(batch.plan_rows) : 0.0;
        auto boot = bootstrap::bootstrap_losses(model, enc, plan, counters ? &counters->empty_plans : nullptr);
        bs_sum = detail::add_term(bs_sum, ops::scale(boot.short_term, plan_share));
        bl_sum = detail::add_term(bl_sum, ops::scale(boot.long_term, plan_share));
        if (A > 1) zs.push_back(z);
    }
    out.hoa = hoa_sum.item();
    out.boot_short = bs_sum.item();
    out.boot_long = bl_sum.item();
    total = hoa_sum;
    if (alpha != 0.0) total = ops::add(total, ops::scale(ops::add(bs_sum, bl_sum), alpha));
    if (A > 1 && batch.pair_rows > 0) {
        Tensor aux_sum;
        const auto pairs = agent_pairs(A);
        const double pair_share = static_cast<double>(n) / static_cast<double>(batch.pair_rows);
        for (std::size_t p = 0; p < pairs.size(); ++p) {
            std::vector<double> target(n), w(n, 1.0);
            for (std::size_t r = 0; r < n; ++r) target[r] = s.distances[item.anchors[r] * s.pairs + p];
            const Tensor d = model.predict_distance(zs[pairs[p].first], zs[pairs[p].second]);
            aux_sum = detail::add_term(aux_sum, ops::scale(ops::masked_mse(d, std::move(target), std::move(w)), pair_share));
        }
        out.aux = aux_sum.item();
        if (beta != 0.0) total = ops::add(total, ops::scale(aux_sum, beta));
    }
    out.total = total;
    out.loss = total.item();
    return out;
}

/// L = L_t + alpha (L_r_short + L_r_long) + beta L_aux over the whole batch, as one graph.
inline LossTerms combined_loss(const BamsModel& model, const Batch& batch, double alpha, double beta, bool training,
                               std::mt19937_64* dropout_rng, Counters* counters = nullptr,
                               const HistogramObserver& observer = {}) {
    LossTerms out;
    Tensor total;
    for (const auto& item : batch.items) {
        auto t = item_loss(model, item, batch, alpha, beta, training, dropout_rng, counters, observer);
        total = detail::add_term(total, t.total);
        out.accumulate(t);
    }
    out.total = total.defined() ? total : Tensor::scalar(0.0);
    out.loss = out.total.item();
    return out;
}

inline constexpr double kAlphaMin = 1e-3, kAlphaMax = 1e3;

/// alpha = mean L_t / mean (L_r_short + L_r_long) over probe batches of the
/// initial model, clamped. A zero bootstrap mean falls back to 1.
inline double resolve_alpha(const RunConfig& cfg, const BamsModel& model, const TrainingSet& ts, std::mt19937_64& rng,
                            Counters* counters = nullptr) {
    if (cfg.trainer.ablation == Ablation::bootstrap) return 0.0;
    if (cfg.trainer.alpha) return *cfg.trainer.alpha;
    NoGradGuard ng;
    std::vector<std::size_t> order(ts.sequences.size());
    std::iota(order.begin(), order.end(), 0);
    double lt = 0.0, lr = 0.0;
    for (std::size_t p = 0; p < cfg.trainer.alpha_probe_batches; ++p) {
        std::shuffle(order.begin(), order.end(), rng);
        const std::size_t bs = std::min(cfg.trainer.batch_size, order.size());
        const auto batch = make_batch(ts, std::span(order).first(bs), cfg, model.config().head, rng);
        if (batch.items.empty()) continue;
        const auto terms = combined_loss(model, batch, 0.0, 0.0, false, nullptr);
        lt += terms.hoa;
        lr += terms.boot_short + terms.boot_long;
    }
    if (!(lr > 0.0) || !std::isfinite(lr) || !std::isfinite(lt)) {
        if (counters) ++counters->alpha_fallbacks;
        return 1.0;
    }
    return std::clamp(lt / lr, kAlphaMin, kAlphaMax);
}

struct EpochRecord {
    std::size_t epoch = 0;
    std::size_t steps = 0;
    double lr = 0.0;
    double predictor_lr = 0.0;
    double loss = 0.0, hoa = 0.0, boot_short = 0.0, boot_long = 0.0, aux = 0.0;
    double alpha = 0.0, beta = 0.0;
    double grad_norm = 0.0;
    double seconds = 0.0;
};

struct TrainLog {
    std::vector<EpochRecord> epochs;

    std::string csv() const {
        std::string out = "epoch,steps,lr,predictor_lr,loss,hoa,boot_short,boot_long,aux,alpha,beta,grad_norm,seconds\n";
        char buf[512];
        for (const auto& r : epochs) {
            std::snprintf(buf, sizeof buf, "%zu,%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.3f\n", r.epoch,
                          r.steps, r.lr, r.predictor_lr, r.loss, r.hoa, r.boot_short, r.boot_long, r.aux, r.alpha, r.beta,
                          r.grad_norm, r.seconds);
            out += buf;
        }
        return out;
    }
};

struct StepInfo {
    std::size_t epoch = 0;
    std::size_t step = 0;  // within the epoch, from 1
    double lr = 0.0;
    const LossTerms* terms = nullptr;
    double alpha = 0.0, beta = 0.0;
    double grad_norm = 0.0;
    const Adam* optimizer = nullptr;
    const BamsModel* model = nullptr;
};

struct TrainHooks {
    std::function<void(const StepInfo&)> on_step;
    std::function<void(const EpochRecord&)> on_epoch;
    std::function<void(std::size_t epoch, const BamsModel&)> on_checkpoint;
    HistogramObserver on_histograms;
};

struct TrainResult {
    BamsModel model;
    TrainLog log;
    double alpha = 0.0;
    double beta = 0.0;
    Counters counters;
};

inline double grad_norm(const ParameterSet& params) {
    double acc = 0.0;
    for (const auto& p : params.items())
        if (p.tensor.has_grad())
            for (double g : p.tensor.grad()) acc += g * g;
    return std::sqrt(acc);
}

/// Runs the full schedule. Deterministic given cfg.seed.
inline TrainResult train(const RunConfig& cfg, const TrainingSet& ts, const TrainHooks& hooks = {}) {
    cfg.validate();
    std::mt19937_64 data_rng(cfg.seed ^ 0xa0761d6478bd642fULL);
    std::mt19937_64 dropout_rng(cfg.seed ^ 0xe7037ed1a0b428dbULL);
    std::mt19937_64 probe_rng(cfg.seed ^ 0x8ebc6af09c88c6e3ULL);

    TrainResult res{make_model(cfg, ts), {}, 0.0, 0.0, {}};
    auto& model = res.model;
    res.alpha = resolve_alpha(cfg, model, ts, probe_rng, &res.counters);
    res.beta = ts.n_agents > 1 ? cfg.trainer.aux_weight : 0.0;

    std::size_t q_index = 0;
    for (std::size_t i = 0; i < model.parameters().size(); ++i)
        if (model.parameters().items()[i].learning_rate_multiplier != 1.0) {
            q_index = i;
            break;
        }

    Adam adam(AdamOptions{0.9, 0.999, 1e-8, cfg.trainer.weight_decay});
    std::vector<std::size_t> order(ts.sequences.size());
    std::iota(order.begin(), order.end(), 0);
    const auto head = model.config().head;

    for (std::size_t epoch = 1; epoch <= cfg.trainer.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = cfg.trainer.lr_at(epoch);
        std::shuffle(order.begin(), order.end(), data_rng);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.alpha = res.alpha;
        rec.beta = res.beta;
        for (std::size_t start = 0; start < order.size(); start += cfg.trainer.batch_size) {
            const std::size_t bs = std::min(cfg.trainer.batch_size, order.size() - start);
            const auto batch = make_batch(ts, std::span(order).subspan(start, bs), cfg, head, data_rng);
            if (batch.items.empty()) continue;
            const std::string where = "at epoch " + std::to_string(epoch) + " step " + std::to_string(rec.steps + 1);
            model.parameters().zero_grad();
            LossTerms terms;
            for (const auto& item : batch.items) {
                LossTerms t;
                try {
                    t = item_loss(model, item, batch, res.alpha, res.beta, true, &dropout_rng, &res.counters, hooks.on_histograms);
                } catch (const NumericError& e) {
                    throw NumericError(std::string("non-finite loss ") + where + ": " + e.what());
                }
                detail::require_finite(t.hoa, "L_t", where);
                detail::require_finite(t.boot_short, "L_r_short", where);
                detail::require_finite(t.boot_long, "L_r_long", where);
                detail::require_finite(t.aux, "L_aux", where);
                t.total.backward();
                t.total = Tensor();
                terms.accumulate(t);
            }
            const double gn = grad_norm(model.parameters());
            detail::require_finite(gn, "gradient norm", where);
            try {
                adam.step(model.parameters(), lr);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " " + where);
            }
            ++rec.steps;
            rec.loss += terms.loss;
            rec.hoa += terms.hoa;
            rec.boot_short += terms.boot_short;
            rec.boot_long += terms.boot_long;
            rec.aux += terms.aux;
            rec.grad_norm += gn;
            rec.predictor_lr = adam.last_effective_lr(q_index);
            if (hooks.on_step) hooks.on_step({epoch, rec.steps, lr, &terms, res.alpha, res.beta, gn, &adam, &model});
        }
        model.parameters().zero_grad();
        if (rec.steps) {
            const double s = static_cast<double>(rec.steps);
            rec.loss /= s;
            rec.hoa /= s;
            rec.boot_short /= s;
            rec.boot_long /= s;
            rec.aux /= s;
            rec.grad_norm /= s;
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.epochs.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(rec);
        if (hooks.on_checkpoint && cfg.trainer.checkpoint_every && epoch % cfg.trainer.checkpoint_every == 0 &&
            epoch != cfg.trainer.epochs)
            hooks.on_checkpoint(epoch, model);
    }
    return res;
}

/// Reads the pretraining split, trains, and writes model.ckpt, train_log.csv,
/// config.resolved.json and train_summary.json under `out`.
inline TrainResult train_to_directory(const RunConfig& cfg, const fs::path& data, const fs::path& out,
                                      std::function<void(const EpochRecord&)> progress = {}) {
    DatasetReader reader(data);
    const auto ts = load_training_set(reader, cfg);
    TrainHooks hooks;
    hooks.on_epoch = std::move(progress);
    hooks.on_checkpoint = [&out](std::size_t epoch, const BamsModel& m) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoints/epoch%04zu.ckpt", epoch);
        save_checkpoint(m, out / name);
    };
    io::write_file(out / "config.resolved.json", resolved_config_bytes(cfg));
    auto res = train(cfg, ts, hooks);
    save_checkpoint(res.model, out / "model.ckpt");
    io::write_file(out / "train_log.csv", res.log.csv());
    nlohmann::json summary{{"alpha", res.alpha},
                           {"beta", res.beta},
                           {"mode", to_string(cfg.trainer.mode)},
                           {"ablation", to_string(cfg.trainer.ablation)},
                           {"pretraining_sequences", ts.sequences.size()},
                           {"dataset_manifest_hash", manifest_hash(reader.manifest())},
                           {"empty_bootstrap_plans", res.counters.empty_plans},
                           {"empty_hoa_batches", res.counters.empty_hoa_batches},
                           {"alpha_fallbacks", res.counters.alpha_fallbacks},
                           {"files_read", reader.accessed_files().size()}};
    io::write_file(out / "train_summary.json", summary.dump(2) + "\n");
    return res;
}

}  // namespace bams::train
