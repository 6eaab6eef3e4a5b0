#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "bams/config.hpp"
#include "bams/dataset.hpp"
#include "bams/model.hpp"
#include "bams/util/parallel.hpp"

namespace bams::eval {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Which { short_term, long_term, both, pca };

inline std::string to_string(Which w) {
    switch (w) {
        case Which::short_term: return "short";
        case Which::long_term: return "long";
        case Which::pca: return "pca";
        default: return "both";
    }
}

inline Which parse_which(const std::string& s) {
    if (s == "short") return Which::short_term;
    if (s == "long") return Which::long_term;
    if (s == "both") return Which::both;
    if (s == "pca") return Which::pca;
    throw ConfigError("unknown embedding selection '" + s + "' (short|long|both)");
}

/// agents: A arrays of [T x d]. Returns [T x 2d] = concat[mean over agents, max - min over agents].
inline std::vector<double> pool_embeddings(const std::vector<std::vector<double>>& agents, std::size_t frames, std::size_t dim) {
    if (agents.empty()) throw ShapeError("pool_embeddings", "need at least one agent");
    for (std::size_t a = 0; a < agents.size(); ++a)
        if (agents[a].size() != frames * dim)
            throw ShapeError("pool_embeddings", "agent " + std::to_string(a) + " has " + std::to_string(agents[a].size()) +
                                                    " values, expected T*d = " + std::to_string(frames * dim));
    const double inv = 1.0 / static_cast<double>(agents.size());
    std::vector<double> out(frames * 2 * dim), v(agents.size());
    for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t k = 0; k < dim; ++k) {
            for (std::size_t a = 0; a < agents.size(); ++a) v[a] = agents[a][t * dim + k];
            // summing in sorted order keeps the mean bit-identical under agent permutation
            std::sort(v.begin(), v.end());
            double sum = 0.0;
            for (double x : v) sum += x;
            out[t * 2 * dim + k] = sum * inv;
            out[t * 2 * dim + dim + k] = v.back() - v.front();
        }
    return out;
}

/// Per-frame embedding restricted to one timescale: [T x d].
inline std::vector<double> select_embedding(const FrameEmbeddings& e, Which which, bool single_encoder) {
    switch (which) {
        case Which::short_term: return e.z_short;
        case Which::long_term: return e.z_long;
        case Which::both: return e.z(single_encoder);
        default: throw UsageError("select_embedding: pca is not a model embedding");
    }
}

/// Pooled per-frame embeddings of every sequence of a dataset.
struct EmbeddingSet {
    std::string which;
    std::size_t dim = 0;  // pooled dimension
    std::vector<std::string> ids;
    std::map<std::string, std::size_t> frames;
    std::map<std::string, std::vector<double>> values;  // [T x dim]
};

/// Fails with the channel names when the dataset layout differs from the model's.
inline void require_matching_layout(const ChannelLayout& data, const ChannelLayout& model) {
    if (data.names != model.names) {
        auto join = [](const std::vector<std::string>& v) {
            std::string s;
            for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
            return s;
        };
        throw SchemaError("channel mismatch: dataset has [" + join(data.names) + "], checkpoint expects [" + join(model.names) + "]");
    }
    if (data.action_channels != model.action_channels || data.validity_channel != model.validity_channel)
        throw SchemaError("channel mismatch: action/validity channel roles differ between dataset and checkpoint");
}

inline EmbeddingSet embed_dataset(const BamsModel& model, DatasetReader& reader, Which which) {
    require_matching_layout(reader.manifest().layout, model.metadata().layout);
    EmbeddingSet out;
    out.which = to_string(which);
    const std::size_t d = which == Which::short_term ? model.short_dim()
                          : which == Which::long_term ? model.long_dim()
                                                      : model.embedding_dim();
    out.dim = 2 * d;
    std::vector<Trajectory> trs;
    for (const auto& s : reader.manifest().sequences) {
        out.ids.push_back(s.id);
        trs.push_back(reader.load(s.id, false));
    }
    std::vector<std::vector<double>> pooled(trs.size());
    parallel_for(trs.size(), [&](std::size_t i) {
        std::vector<std::vector<double>> agents;
        for (const auto& f : trs[i].agents) {
            const auto e = model.encode(apply_normalization(f, model.metadata().stats, model.metadata().layout));
            agents.push_back(select_embedding(e, which, model.single_encoder()));
        }
        pooled[i] = pool_embeddings(agents, trs[i].agents.front().frames, d);
    });
    for (std::size_t i = 0; i < trs.size(); ++i) {
        out.frames[out.ids[i]] = trs[i].agents.front().frames;
        out.values[out.ids[i]] = std::move(pooled[i]);
    }
    return out;
}

inline constexpr const char* kEmbeddingIndex = "embeddings.json";

/// Writes <id>.f32 ([T x dim], little-endian f32) per sequence and the JSON sidecar.
inline void write_embeddings(const fs::path& dir, const EmbeddingSet& set, const nlohmann::json& provenance = {}) {
    nlohmann::json idx;
    idx["format"] = "bams-embeddings";
    idx["which"] = set.which;
    idx["dim"] = set.dim;
    idx["pooling"] = "concat[mean over agents, max-min over agents]";
    idx["dtype"] = "float32-le";
    idx["layout"] = "[T x dim] row-major";
    if (!provenance.is_null()) idx["source"] = provenance;
    auto& seqs = idx["sequences"];
    seqs = nlohmann::json::array();
    for (const auto& id : set.ids) {
        const auto file = id + ".f32";
        io::write_file(dir / file, io::f32_bytes(set.values.at(id)));
        seqs.push_back({{"id", id}, {"frames", set.frames.at(id)}, {"file", file}});
    }
    io::write_file(dir / kEmbeddingIndex, idx.dump(1) + "\n");
}

inline EmbeddingSet read_embeddings(const fs::path& dir) {
    const auto path = dir / kEmbeddingIndex;
    nlohmann::json idx;
    try {
        idx = nlohmann::json::parse(io::read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(path.string(), std::string("malformed JSON: ") + e.what());
    }
    EmbeddingSet set;
    try {
        set.which = idx.at("which").get<std::string>();
        set.dim = idx.at("dim").get<std::size_t>();
        for (const auto& s : idx.at("sequences")) {
            const auto id = s.at("id").get<std::string>();
            const auto T = s.at("frames").get<std::size_t>();
            auto v = io::read_f32(dir / s.at("file").get<std::string>());
            if (v.size() != T * set.dim)
                throw IoError((dir / s.at("file").get<std::string>()).string(), "embedding file size does not match T x dim");
            set.ids.push_back(id);
            set.frames[id] = T;
            set.values[id] = std::move(v);
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    return set;
}

// ---------------------------------------------------------------- PCA

struct Pca {
    std::vector<double> mean;        // [C]
    std::vector<double> components;  // [d x C]; rows beyond the rank are zero
    std::vector<double> variances;   // [d]
    std::size_t rank = 0;
    std::size_t dim = 0;
    std::size_t channels = 0;
};

/// Principal components of rows [n x C]. Each component's largest-magnitude
/// entry is made positive. d beyond the data rank is zero-padded.
inline Pca fit_pca(std::span<const double> rows, std::size_t n, std::size_t C, std::size_t d) {
    if (rows.size() != n * C) throw ShapeError("fit_pca", "rows must be n x C");
    if (n < 2) throw NumericError("fit_pca: need at least two rows");
    Eigen::Map<const RowMatrix> X(rows.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(C));
    Pca p;
    p.dim = d;
    p.channels = C;
    Eigen::RowVectorXd mu = X.colwise().mean();
    RowMatrix Xc = X.rowwise() - mu;
    Eigen::MatrixXd cov = (Xc.transpose() * Xc) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const auto& evals = es.eigenvalues();
    const double top = std::max(evals.maxCoeff(), 0.0);
    p.mean.assign(mu.data(), mu.data() + C);
    p.components.assign(d * C, 0.0);
    p.variances.assign(d, 0.0);
    for (std::size_t k = 0; k < std::min(d, C); ++k) {
        const auto col = static_cast<Eigen::Index>(C - 1 - k);
        const double lambda = evals(col);
        if (!(lambda > 1e-12 * top) || top <= 0) break;
        Eigen::VectorXd v = es.eigenvectors().col(col);
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0) v = -v;
        for (std::size_t c = 0; c < C; ++c) p.components[k * C + c] = v(static_cast<Eigen::Index>(c));
        p.variances[k] = lambda;
        ++p.rank;
    }
    return p;
}

/// [n x C] -> [n x d]
inline std::vector<double> pca_project(const Pca& p, std::span<const double> rows, std::size_t n) {
    if (rows.size() != n * p.channels) throw ShapeError("pca_project", "rows must be n x C");
    std::vector<double> out(n * p.dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < p.rank; ++k) {
            double acc = 0.0;
            for (std::size_t c = 0; c < p.channels; ++c) acc += (rows[i * p.channels + c] - p.mean[c]) * p.components[k * p.channels + c];
            out[i * p.dim + k] = acc;
        }
    return out;
}

/// Mean squared reconstruction error using the first `d` components.
inline double pca_reconstruction_error(const Pca& p, std::span<const double> rows, std::size_t n, std::size_t d) {
    const auto proj = pca_project(p, rows, n);
    double err = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < p.channels; ++c) {
            double rec = p.mean[c];
            for (std::size_t k = 0; k < std::min(d, p.rank); ++k) rec += proj[i * p.dim + k] * p.components[k * p.channels + c];
            const double diff = rows[i * p.channels + c] - rec;
            err += diff * diff;
        }
    return err / static_cast<double>(n);
}

/// PCA baseline: fit on normalized per-frame features of the training split
/// (valid frames), project every frame, pool over agents like the model.
inline EmbeddingSet pca_baseline(DatasetReader& reader, std::size_t d) {
    const auto& m = reader.manifest();
    std::vector<Trajectory> trs;
    std::vector<std::string> ids;
    for (const auto& s : m.sequences) {
        ids.push_back(s.id);
        trs.push_back(reader.load(s.id, false));
    }
    std::vector<const FeatureSequence*> train;
    for (std::size_t i = 0; i < trs.size(); ++i)
        if (trs[i].info.split == "train")
            for (const auto& a : trs[i].agents) train.push_back(&a);
    if (train.empty()) throw SchemaError("pca_baseline: dataset has no training split");
    const auto stats = fit_normalization(train, m.layout);
    const std::size_t C = m.layout.size();
    std::vector<double> rows;
    std::size_t n = 0;
    for (const auto* f : train) {
        const auto norm = apply_normalization(*f, stats, m.layout);
        const auto valid = f->validity(m.layout);
        for (std::size_t t = 0; t < f->frames; ++t) {
            if (!valid[t]) continue;
            for (std::size_t c = 0; c < C; ++c) rows.push_back(norm.at(c, t));
            ++n;
        }
    }
    const auto pca = fit_pca(rows, n, C, d);
    EmbeddingSet out;
    out.which = "pca";
    out.dim = 2 * d;
    for (std::size_t i = 0; i < trs.size(); ++i) {
        std::vector<std::vector<double>> agents;
        const std::size_t T = trs[i].agents.front().frames;
        for (const auto& f : trs[i].agents) {
            const auto norm = apply_normalization(f, stats, m.layout);
            std::vector<double> r(T * C);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t c = 0; c < C; ++c) r[t * C + c] = norm.at(c, t);
            agents.push_back(pca_project(pca, r, T));
        }
        out.ids.push_back(ids[i]);
        out.frames[ids[i]] = T;
        out.values[ids[i]] = pool_embeddings(agents, T, d);
    }
    return out;
}

// ---------------------------------------------------------------- probes

struct ProbeOptions {
    double l2 = 1e-4;
    double tolerance = 1e-6;
    std::size_t max_iterations = 2000;
};

/// Column-wise z-scoring with statistics of the training rows.
struct Standardizer {
    Eigen::RowVectorXd mean, scale;

    static Standardizer fit(const RowMatrix& X) {
        Standardizer s;
        s.mean = X.colwise().mean();
        s.scale.resize(X.cols());
        for (Eigen::Index j = 0; j < X.cols(); ++j) {
            const double var = (X.col(j).array() - s.mean(j)).square().mean();
            s.scale(j) = var > 1e-24 ? 1.0 / std::sqrt(var) : 0.0;
        }
        return s;
    }

    RowMatrix apply(const RowMatrix& X) const {
        RowMatrix out = X.rowwise() - mean;
        return out.array().rowwise() * scale.array();
    }
};

/// Macro-averaged F1 in percent over the classes present in y_true or y_pred.
inline double macro_f1(std::span<const int> y_true, std::span<const int> y_pred) {
    if (y_true.size() != y_pred.size()) throw ShapeError("macro_f1", "label vectors differ in length");
    std::set<int> labels(y_true.begin(), y_true.end());
    labels.insert(y_pred.begin(), y_pred.end());
    if (labels.empty()) return 0.0;
    double acc = 0.0;
    for (int c : labels) {
        double tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < y_true.size(); ++i) {
            const bool t = y_true[i] == c, p = y_pred[i] == c;
            tp += t && p;
            fp += !t && p;
            fn += t && !p;
        }
        const double denom = 2 * tp + fp + fn;
        acc += denom > 0 ? 2 * tp / denom : 0.0;
    }
    return 100.0 * acc / static_cast<double>(labels.size());
}

inline double mean_squared_error(std::span<const double> y, std::span<const double> yhat) {
    if (y.size() != yhat.size() || y.empty()) throw ShapeError("mean_squared_error", "length mismatch or empty");
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    return acc / static_cast<double>(y.size());
}

/// Multinomial logistic regression, L2 (l2/2)|W|^2 on weights (not biases),
/// full-batch Nesterov-accelerated gradient descent with step 1/Lipschitz.
struct LogisticProbe {
    Standardizer standardizer;
    std::vector<int> classes;
    Eigen::MatrixXd W;  // [(D+1) x C], last row is the bias
    std::size_t iterations = 0;
    double final_grad = 0.0;

    static LogisticProbe fit(const RowMatrix& X, std::span<const int> y, const ProbeOptions& opt) {
        LogisticProbe p;
        std::set<int> cls(y.begin(), y.end());
        if (cls.size() < 2) throw SchemaError("logistic probe: training labels contain a single class");
        p.classes.assign(cls.begin(), cls.end());
        p.standardizer = Standardizer::fit(X);
        const auto n = X.rows(), D = X.cols(), C = static_cast<Eigen::Index>(p.classes.size());
        RowMatrix Xa(n, D + 1);
        Xa.leftCols(D) = p.standardizer.apply(X);
        Xa.col(D).setOnes();
        Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, C);
        for (Eigen::Index i = 0; i < n; ++i)
            Y(i, std::lower_bound(p.classes.begin(), p.classes.end(), y[static_cast<std::size_t>(i)]) - p.classes.begin()) = 1.0;

        const Eigen::MatrixXd G = (Xa.transpose() * Xa) / static_cast<double>(n);
        const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(G, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
        const double step = 1.0 / (0.5 * lmax + opt.l2);

        Eigen::MatrixXd W = Eigen::MatrixXd::Zero(D + 1, C), W_prev = W, V = W;
        auto gradient = [&](const Eigen::MatrixXd& M) {
            Eigen::MatrixXd logits = Xa * M;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double mx = logits.row(i).maxCoeff();
                logits.row(i) = (logits.row(i).array() - mx).exp();
                logits.row(i) /= logits.row(i).sum();
            }
            Eigen::MatrixXd g = Xa.transpose() * (logits - Y) / static_cast<double>(n);
            g.topRows(D) += opt.l2 * M.topRows(D);
            return g;
        };
        for (std::size_t k = 1; k <= opt.max_iterations; ++k) {
            const Eigen::MatrixXd g = gradient(V);
            W_prev = W;
            W = V - step * g;
            const double momentum = static_cast<double>(k - 1) / static_cast<double>(k + 2);
            V = W + momentum * (W - W_prev);
            p.iterations = k;
            p.final_grad = g.cwiseAbs().maxCoeff();
            if (p.final_grad < opt.tolerance) break;
        }
        p.W = W;
        return p;
    }

    std::vector<int> predict(const RowMatrix& X) const {
        const auto D = X.cols();
        RowMatrix Xa(X.rows(), D + 1);
        Xa.leftCols(D) = standardizer.apply(X);
        Xa.col(D).setOnes();
        const Eigen::MatrixXd logits = Xa * W;
        std::vector<int> out(static_cast<std::size_t>(X.rows()));
        for (Eigen::Index i = 0; i < X.rows(); ++i) {
            Eigen::Index best = 0;
            logits.row(i).maxCoeff(&best);
            out[static_cast<std::size_t>(i)] = classes[static_cast<std::size_t>(best)];
        }
        return out;
    }
};

/// Ridge regression (1/n)|y - Xw - b|^2 + l2 |w|^2, solved in closed form.
struct RidgeProbe {
    Standardizer standardizer;
    Eigen::VectorXd w;
    double bias = 0.0;

    static RidgeProbe fit(const RowMatrix& X, std::span<const double> y, const ProbeOptions& opt) {
        RidgeProbe p;
        p.standardizer = Standardizer::fit(X);
        const RowMatrix Xs = p.standardizer.apply(X);
        const auto n = X.rows();
        Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
        p.bias = yv.mean();
        Eigen::MatrixXd A = Xs.transpose() * Xs;
        A.diagonal().array() += static_cast<double>(n) * opt.l2;
        p.w = A.ldlt().solve(Xs.transpose() * (yv.array() - p.bias).matrix());
        return p;
    }

    std::vector<double> predict(const RowMatrix& X) const {
        const Eigen::VectorXd yhat = (standardizer.apply(X) * w).array() + bias;
        return {yhat.data(), yhat.data() + yhat.size()};
    }
};

struct ProbeResult {
    std::string task;
    TaskLevel level = TaskLevel::sequence;
    std::string metric;  // "F1" or "MSE"
    double value = 0.0;
    std::string embedding;
    std::string split;
    std::uint64_t seed = 0;
};

/// Trains on (X_train, y_train) and scores on the held-out rows.
inline ProbeResult fit_linear_probe(const RowMatrix& X_train, std::span<const double> y_train, const RowMatrix& X_test,
                                    std::span<const double> y_test, const ProbeTask& task, const ProbeOptions& opt) {
    ProbeResult r;
    r.task = task.name;
    r.level = task.level;
    if (task.kind == TaskKind::classification) {
        std::vector<int> ytr(y_train.size()), yte(y_test.size());
        for (std::size_t i = 0; i < ytr.size(); ++i) ytr[i] = static_cast<int>(std::lround(y_train[i]));
        for (std::size_t i = 0; i < yte.size(); ++i) yte[i] = static_cast<int>(std::lround(y_test[i]));
        const auto probe = LogisticProbe::fit(X_train, ytr, opt);
        r.metric = "F1";
        r.value = macro_f1(yte, probe.predict(X_test));
    } else {
        const auto probe = RidgeProbe::fit(X_train, y_train, opt);
        r.metric = "MSE";
        r.value = mean_squared_error(y_test, probe.predict(X_test));
    }
    return r;
}

struct ProbeSuiteResult {
    std::vector<ProbeResult> results;
    std::vector<std::string> warnings;
};

inline std::string join_splits(const std::vector<std::string>& splits) {
    std::string s;
    for (const auto& x : splits) s += (s.empty() ? "" : "+") + x;
    return s;
}

/// Every task of the manifest: probes trained on the train split, scored on
/// the pooled test splits. Sequence tasks use the time-mean over valid
/// frames; frame tasks use every `frame_stride`-th valid frame.
inline ProbeSuiteResult probe_suite(const EmbeddingSet& emb, DatasetReader& reader, const EvalConfig& cfg, std::uint64_t seed) {
    const auto& m = reader.manifest();
    {
        std::set<std::string> a(emb.ids.begin(), emb.ids.end()), b;
        for (const auto& s : m.sequences) b.insert(s.id);
        if (a != b) {
            std::string detail;
            for (const auto& id : b)
                if (!a.count(id)) detail = "sequence " + id + " has no embedding";
            for (const auto& id : a)
                if (!b.count(id)) detail = "embedding " + id + " is not in the dataset";
            throw SchemaError("probe: embeddings and dataset disagree on sequence ids (" + detail + ")");
        }
        for (const auto& s : m.sequences)
            if (emb.frames.at(s.id) != s.length)
                throw SchemaError("probe: embedding of " + s.id + " has " + std::to_string(emb.frames.at(s.id)) + " frames, dataset has " +
                                  std::to_string(s.length));
    }
    const std::set<std::string> test_splits(cfg.test_splits.begin(), cfg.test_splits.end());
    const std::size_t D = emb.dim;
    std::map<std::string, std::vector<unsigned char>> validity;
    for (const auto& s : m.sequences) validity[s.id] = reader.load_validity(s.id);

    ProbeOptions opt{cfg.l2, cfg.tolerance, cfg.max_iterations};
    ProbeSuiteResult out;
    for (const auto& task : m.tasks) {
        std::vector<double> xtr, xte, ytr, yte;
        std::size_t ntr = 0, nte = 0;
        bool missing = false;
        for (const auto& s : m.sequences) {
            const bool is_train = s.split == "train";
            const bool is_test = test_splits.count(s.split) > 0;
            if (!is_train && !is_test) continue;
            auto& X = is_train ? xtr : xte;
            auto& Y = is_train ? ytr : yte;
            auto& cnt = is_train ? ntr : nte;
            const auto& z = emb.values.at(s.id);
            const auto& valid = validity.at(s.id);
            if (task.level == TaskLevel::sequence) {
                auto it = m.sequence_labels.find(s.id);
                if (it == m.sequence_labels.end() || !it->second.count(task.name)) {
                    missing = true;
                    break;
                }
                std::vector<double> mean(D, 0.0);
                std::size_t used = 0;
                for (std::size_t t = 0; t < s.length; ++t) {
                    if (!valid[t]) continue;
                    for (std::size_t k = 0; k < D; ++k) mean[k] += z[t * D + k];
                    ++used;
                }
                for (double& v : mean) v /= static_cast<double>(std::max<std::size_t>(used, 1));
                X.insert(X.end(), mean.begin(), mean.end());
                Y.push_back(it->second.at(task.name));
                ++cnt;
            } else {
                std::vector<double> labels;
                try {
                    labels = reader.load_frame_label(s.id, task);
                } catch (const IoError&) {
                    missing = true;
                    break;
                }
                std::size_t k = 0;
                for (std::size_t t = 0; t < s.length; ++t) {
                    if (!valid[t]) continue;
                    if (k++ % cfg.frame_stride != 0) continue;
                    X.insert(X.end(), z.begin() + static_cast<std::ptrdiff_t>(t * D), z.begin() + static_cast<std::ptrdiff_t>((t + 1) * D));
                    Y.push_back(labels[t]);
                    ++cnt;
                }
            }
        }
        if (missing || ntr == 0 || nte == 0) {
            out.warnings.push_back("task " + task.name + ": labels missing or split empty; skipped");
            continue;
        }
        const RowMatrix Xtr = Eigen::Map<const RowMatrix>(xtr.data(), static_cast<Eigen::Index>(ntr), static_cast<Eigen::Index>(D));
        const RowMatrix Xte = Eigen::Map<const RowMatrix>(xte.data(), static_cast<Eigen::Index>(nte), static_cast<Eigen::Index>(D));
        auto r = fit_linear_probe(Xtr, ytr, Xte, yte, task, opt);
        r.embedding = emb.which;
        r.split = join_splits(cfg.test_splits);
        r.seed = seed;
        out.results.push_back(std::move(r));
    }
    if (out.results.empty()) throw SchemaError("probe: every task was skipped (no usable labels)");
    return out;
}

/// Probe suite on one timescale restriction of a trained model.
inline ProbeSuiteResult timescale_probe(const BamsModel& model, DatasetReader& reader, Which which, const EvalConfig& cfg,
                                        std::uint64_t seed) {
    return probe_suite(embed_dataset(model, reader, which), reader, cfg, seed);
}

// ---------------------------------------------------------------- results CSV

inline constexpr const char* kResultsHeader = "task,level,metric,value,embedding,split,seed";

inline std::string format_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

inline std::string results_csv(const std::vector<ProbeResult>& rs) {
    std::string out = std::string(kResultsHeader) + "\n";
    for (const auto& r : rs)
        out += r.task + "," + to_string(r.level) + "," + r.metric + "," + format_value(r.value) + "," + r.embedding + "," + r.split +
               "," + std::to_string(r.seed) + "\n";
    return out;
}

inline std::vector<ProbeResult> parse_results_csv(const std::string& text, const std::string& source) {
    std::vector<ProbeResult> out;
    std::size_t pos = 0, line_no = 0;
    while (pos < text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string::npos) end = text.size();
        std::string line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != kResultsHeader) throw SchemaError(source + ": unexpected results header '" + line + "'");
            continue;
        }
        std::vector<std::string> f;
        std::size_t s = 0;
        while (true) {
            auto c = line.find(',', s);
            f.push_back(line.substr(s, c == std::string::npos ? std::string::npos : c - s));
            if (c == std::string::npos) break;
            s = c + 1;
        }
        if (f.size() != 7) throw SchemaError(source + ":" + std::to_string(line_no) + ": expected 7 fields");
        ProbeResult r;
        r.task = f[0];
        if (f[1] != "sequence" && f[1] != "frame") throw SchemaError(source + ":" + std::to_string(line_no) + ": bad level " + f[1]);
        r.level = f[1] == "sequence" ? TaskLevel::sequence : TaskLevel::frame;
        r.metric = f[2];
        if (r.metric != "F1" && r.metric != "MSE") throw SchemaError(source + ":" + std::to_string(line_no) + ": bad metric " + f[2]);
        try {
            r.value = std::stod(f[3]);
            r.seed = std::stoull(f[6]);
        } catch (const std::exception&) {
            throw SchemaError(source + ":" + std::to_string(line_no) + ": bad number");
        }
        r.embedding = f[4];
        r.split = f[5];
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace bams::eval
