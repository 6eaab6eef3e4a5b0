#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "frozen_loss.hpp"
#include "support.hpp"

using namespace bams;
using namespace bams::train;
using bams::testing::tiny_run_config;
using bams::testing::tiny_training_set;

namespace {

Batch first_batch(const TrainingSet& ts, const RunConfig& cfg, HeadKind head, std::uint64_t seed = 1) {
    std::vector<std::size_t> idx(ts.sequences.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    return make_batch(ts, idx, cfg, head, rng);
}

void zero_parameters_with_prefix(BamsModel& m, const std::string& prefix) {
    for (auto& p : m.parameters().items())
        if (p.name.rfind(prefix, 0) == 0) std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), 0.0);
}

}  // namespace

TEST(Alpha, RatioOfProbeMeans) {
    const auto cfg = tiny_run_config();
    const auto ts = tiny_training_set(cfg);
    const auto model = make_model(cfg, ts);
    std::mt19937_64 rng(21);
    const double alpha = resolve_alpha(cfg, model, ts, rng);

    // oracle: replay the probe draws and take the ratio directly
    std::mt19937_64 replay(21);
    std::vector<std::size_t> order(ts.sequences.size());
    std::iota(order.begin(), order.end(), 0);
    double lt = 0.0, lr = 0.0;
    for (std::size_t p = 0; p < cfg.trainer.alpha_probe_batches; ++p) {
        std::shuffle(order.begin(), order.end(), replay);
        const auto batch = make_batch(ts, std::span(order).first(std::min<std::size_t>(4, order.size())), cfg, HeadKind::histogram, replay);
        const auto terms = combined_loss(model, batch, 1.0, 0.0, false, nullptr);
        lt += terms.hoa;
        lr += terms.boot_short + terms.boot_long;
    }
    EXPECT_NEAR(alpha, lt / lr, 1e-12 * alpha);
    EXPECT_GT(alpha, 0.0);
}

TEST(Alpha, ExplicitValueAndBootstrapAblation) {
    auto cfg = tiny_run_config();
    const auto ts = tiny_training_set(cfg);
    const auto model = make_model(cfg, ts);
    std::mt19937_64 rng(1);
    cfg.trainer.alpha = 0.37;
    EXPECT_EQ(resolve_alpha(cfg, model, ts, rng), 0.37);
    cfg.trainer.ablation = Ablation::bootstrap;
    EXPECT_EQ(resolve_alpha(cfg, model, ts, rng), 0.0);
}

TEST(Alpha, ClampsAndFallsBack) {
    const auto cfg = tiny_run_config();
    const auto ts = tiny_training_set(cfg);
    {
        // zero encoders give zero targets and zero predictions: no bootstrap signal
        auto model = make_model(cfg, ts);
        zero_parameters_with_prefix(model, "f_");
        zero_parameters_with_prefix(model, "q_");
        Counters c;
        std::mt19937_64 rng(1);
        EXPECT_EQ(resolve_alpha(cfg, model, ts, rng, &c), 1.0);
        EXPECT_EQ(c.alpha_fallbacks, 1u);
    }
    {
        // predictions far below the norm guard: a vanishing but nonzero bootstrap loss
        auto model = make_model(cfg, ts);
        zero_parameters_with_prefix(model, "f_");
        zero_parameters_with_prefix(model, "q_");
        for (auto& p : model.parameters().items())
            if (p.name == "q_short.layer1.bias" || p.name == "q_long.layer1.bias")
                std::fill(p.tensor.mutable_data().begin(), p.tensor.mutable_data().end(), 1e-12);
        std::mt19937_64 rng(1);
        EXPECT_EQ(resolve_alpha(cfg, model, ts, rng), kAlphaMax);
    }
}

TEST(CombinedLoss, AlphaZeroIsExactlyTheHoaLoss) {
    const auto cfg = tiny_run_config();
    const auto ts = tiny_training_set(cfg);
    const auto model = make_model(cfg, ts);
    const auto batch = first_batch(ts, cfg, HeadKind::histogram);
    const double got = combined_loss(model, batch, 0.0, 0.0, false, nullptr).loss;
    double want = 0.0;
    for (const auto& item : batch.items) {
        const auto enc = model.forward(item.seq->inputs[0], false, nullptr);
        const auto pred = model.predict_hoa(model.gather_z(enc, item.anchors));
        const double share = static_cast<double>(item.anchors.size()) / static_cast<double>(batch.anchor_rows);
        want += hoa::hoa_loss(pred, item.hoa_targets[0], std::vector<unsigned char>(item.anchors.size(), 1)).item() * share;
    }
    EXPECT_EQ(got, want);
}

TEST(CombinedLoss, LinearInAlpha) {
    const auto cfg = tiny_run_config();
    const auto ts = tiny_training_set(cfg);
    const auto model = make_model(cfg, ts);
    const auto batch = first_batch(ts, cfg, HeadKind::histogram);
    const double l0 = combined_loss(model, batch, 0.0, 0.0, false, nullptr).loss;
    const double l1 = combined_loss(model, batch, 0.7, 0.0, false, nullptr).loss;
    const double l2 = combined_loss(model, batch, 1.4, 0.0, false, nullptr).loss;
    EXPECT_NEAR(l2 - l0, 2.0 * (l1 - l0), 1e-12);
    EXPECT_GT(l1, l0);
}

TEST(CombinedLoss, BetaHasNoEffectForSingleAgents) {
    const auto cfg = tiny_run_config();
    const auto ts = tiny_training_set(cfg);
    const auto model = make_model(cfg, ts);
    const auto batch = first_batch(ts, cfg, HeadKind::histogram);
    const auto a = combined_loss(model, batch, 1.0, 0.0, false, nullptr);
    const auto b = combined_loss(model, batch, 1.0, 5.0, false, nullptr);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(b.aux, 0.0);
}

TEST(CombinedLoss, DecompositionIdentityWithAuxTerm) {
    const auto cfg = tiny_run_config(200, 2, 3);
    const auto ts = tiny_training_set(cfg, 3);
    ASSERT_EQ(ts.n_agents, 3u);
    const auto model = make_model(cfg, ts);
    ASSERT_TRUE(model.config().distance_head);
    const auto batch = first_batch(ts, cfg, HeadKind::histogram);
    const double alpha = 2.3, beta = 0.6;
    const auto t = combined_loss(model, batch, alpha, beta, false, nullptr);
    EXPECT_GT(t.aux, 0.0);
    EXPECT_NEAR(t.loss, t.hoa + alpha * (t.boot_short + t.boot_long) + beta * t.aux, 1e-12);
}

TEST(CombinedLoss, GradientMatchesFiniteDifferences) {
    auto cfg = tiny_run_config(80, 2);
    cfg.trainer.anchors_per_sequence = 4;
    const auto ts = tiny_training_set(cfg, 2);
    auto model = make_model(cfg, ts);
    const auto batch = first_batch(ts, cfg, HeadKind::histogram);
    ASSERT_FALSE(batch.items.empty());
    const double alpha = 1.3;
    auto params = bams::testing::tensors_of(model.parameters());

    model.parameters().zero_grad();
    const auto real = combined_loss(model, batch, alpha, 0.0, false, nullptr);
    real.total.backward();
    std::vector<std::vector<double>> real_grads;
    for (const auto& p : params) real_grads.emplace_back(p.grad().begin(), p.grad().end());

    const bams::testing::FrozenTargetLoss frozen(model, batch, alpha);
    model.parameters().zero_grad();
    const auto f = frozen();
    EXPECT_EQ(f.item(), real.loss);
    f.backward();
    for (std::size_t i = 0; i < params.size(); ++i)
        for (std::size_t j = 0; j < real_grads[i].size(); ++j)
            ASSERT_NEAR(params[i].grad()[j], real_grads[i][j], 1e-12 * (1.0 + std::abs(real_grads[i][j])))
                << model.parameters().items()[i].name << "[" << j << "]";

    const auto r = grad_check(frozen, params, {1e-5, 6, 2});
    EXPECT_LT(r.max_rel_error, 1e-4);
    EXPECT_GT(r.coords_checked, 100u);
}

TEST(SequentialLoss, ZeroPredictorGivesMeanSquaredAction) {
    auto cfg = tiny_run_config();
    cfg.trainer.ablation = Ablation::hoa;
    const auto ts = tiny_training_set(cfg);
    auto model = make_model(cfg, ts);
    EXPECT_EQ(model.config().sequential_horizon, 10u);
    auto [w, b] = model.histogram_predictor().output_layer();
    std::fill(w.mutable_data().begin(), w.mutable_data().end(), 0.0);
    std::fill(b.mutable_data().begin(), b.mutable_data().end(), 0.0);
    const auto batch = first_batch(ts, cfg, HeadKind::sequential);
    const auto& item = batch.items[0];
    const auto z = model.gather_z(model.forward(item.seq->inputs[0], false, nullptr), item.anchors);
    double ms = 0.0;
    for (double v : item.future_actions[0]) ms += v * v;
    ms /= static_cast<double>(item.future_actions[0].size());
    EXPECT_NEAR(sequential_prediction_loss(model, z, item.future_actions[0], item.future_weights[0]).item(), ms, 1e-12);

    // perfect prediction: target equal to the current output
    const auto out = model.predict_sequence(z);
    EXPECT_EQ(sequential_prediction_loss(model, z, {out.data().begin(), out.data().end()}, item.future_weights[0]).item(), 0.0);
}

TEST(Schedule, LearningRateDropsAfterEpoch100) {
    TrainerConfig t;
    EXPECT_EQ(t.lr_at(1), 1e-3);
    EXPECT_EQ(t.lr_at(100), 1e-3);
    EXPECT_EQ(t.lr_at(101), 1e-4);
    EXPECT_EQ(t.lr_at(500), 1e-4);
}

TEST(Train, LoggedRatesFollowTheScheduleWithTenfoldPredictors) {
    auto cfg = tiny_run_config(120);
    cfg.trainer.epochs = 3;
    cfg.trainer.lr_drop_epoch = 2;
    const auto ts = tiny_training_set(cfg);
    std::vector<std::pair<double, double>> seen;
    TrainHooks hooks;
    hooks.on_step = [&](const StepInfo& s) {
        const auto& items = s.model->parameters().items();
        for (std::size_t i = 0; i < items.size(); ++i) {
            const bool q = items[i].name.rfind("q_", 0) == 0;
            EXPECT_EQ(s.optimizer->last_effective_lr(i), s.lr * (q ? 10.0 : 1.0)) << items[i].name;
        }
        seen.push_back({static_cast<double>(s.epoch), s.lr});
    };
    const auto res = train::train(cfg, ts, hooks);
    ASSERT_EQ(res.log.epochs.size(), 3u);
    EXPECT_EQ(res.log.epochs[1].lr, 1e-3);
    EXPECT_EQ(res.log.epochs[2].lr, 1e-4);
    EXPECT_EQ(res.log.epochs[2].predictor_lr, 1e-3);
    EXPECT_FALSE(seen.empty());
}

TEST(Train, SameSeedGivesIdenticalCheckpoints) {
    const auto cfg = tiny_run_config(120);
    const auto ts = tiny_training_set(cfg);
    const auto a = train::train(cfg, ts), b = train::train(cfg, ts);
    EXPECT_EQ(checkpoint_bytes(a.model), checkpoint_bytes(b.model));
    auto other = cfg;
    other.seed = 12;
    EXPECT_NE(checkpoint_bytes(train::train(other, ts).model), checkpoint_bytes(a.model));
}

TEST(Train, OverfitsFourSequences) {
    auto cfg = tiny_run_config(200);
    cfg.trainer.epochs = 20;
    cfg.trainer.batch_size = 1;
    cfg.trainer.lr = 1e-2;
    cfg.trainer.anchors_per_sequence = 32;
    const auto ts = tiny_training_set(cfg, 4);
    const auto res = train::train(cfg, ts);
    const double first = res.log.epochs.front().hoa, last = res.log.epochs.back().hoa;
    EXPECT_LE(last, 0.5 * first) << "epoch-1 L_t " << first << ", epoch-20 L_t " << last;
}

TEST(Train, HistogramRowsSumToOne) {
    const auto cfg = tiny_run_config(120);
    const auto ts = tiny_training_set(cfg);
    TrainHooks hooks;
    double worst = 0.0;
    std::size_t rows = 0;
    hooks.on_histograms = [&](std::span<const double> target, const Tensor& pred) {
        const std::size_t K = cfg.hoa.bins;
        for (std::size_t r = 0; r * K < target.size(); ++r) {
            double st = 0.0, sp = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
                st += target[r * K + k];
                sp += pred[r * K + k];
            }
            worst = std::max({worst, std::abs(st - 1.0), std::abs(sp - 1.0)});
            ++rows;
        }
    };
    train::train(cfg, ts, hooks);
    EXPECT_GT(rows, 0u);
    EXPECT_LT(worst, 1e-9);
}

TEST(Train, NonFiniteLossAbortsWithLocation) {
    const auto cfg = tiny_run_config(120);
    auto ts = tiny_training_set(cfg);
    ts.sequences[0].inputs[0].mutable_data()[5] = std::nan("");
    ts.sequences[1].inputs[0].mutable_data()[5] = std::nan("");
    ts.sequences[2].inputs[0].mutable_data()[5] = std::nan("");
    ts.sequences[3].inputs[0].mutable_data()[5] = std::nan("");
    try {
        auto c = cfg;
        c.trainer.alpha = 1.0;
        train::train(c, ts);
        FAIL() << "expected NumericError";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("softmax_rows"), std::string::npos) << e.what();
        EXPECT_NE(std::string(e.what()).find("epoch 1 step 1"), std::string::npos) << e.what();
    }
}
