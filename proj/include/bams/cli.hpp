#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bams/bams.hpp"

namespace bams::cli {

namespace fs = std::filesystem;

/// Process exit code for an error category: 2 config/usage, 3 I/O,
/// 4 numeric abort, 5 schema mismatch.
inline int exit_code_for(const Error& e) {
    switch (e.kind()) {
        case ErrorKind::config:
        case ErrorKind::usage: return 2;
        case ErrorKind::io: return 3;
        case ErrorKind::numeric: return 4;
        case ErrorKind::schema:
        case ErrorKind::shape: return 5;
    }
    return 1;
}

namespace detail {

inline bool dir_has_entries(const fs::path& p) {
    std::error_code ec;
    return fs::exists(p, ec) && fs::is_directory(p, ec) && !fs::is_empty(p, ec);
}

/// --out must be empty unless --force; with --force only a directory that
/// carries `marker` (one of our outputs) is cleared.
inline void prepare_out(const fs::path& out, bool force, const std::string& marker) {
    std::error_code ec;
    if (fs::exists(out, ec) && !fs::is_directory(out, ec)) throw UsageError(out.string() + " exists and is not a directory");
    if (!dir_has_entries(out)) return;
    if (!force) throw UsageError(out.string() + " is not empty (pass --force to overwrite)");
    if (!fs::exists(out / marker, ec))
        throw UsageError(out.string() + " does not look like a previous output (missing " + marker + "); refusing to clear it");
    fs::remove_all(out, ec);
    if (ec) throw IoError(out.string(), "cannot clear output directory: " + ec.message());
}

inline RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

}  // namespace detail

struct Options {
    std::string config, out, data, checkpoint, embeddings, mode, ablate, which = "both";
    std::vector<std::string> results, labels;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> n, epochs;
    bool force = false, pca = false, quiet = false;
};

inline int cmd_generate(const Options& o, std::ostream& out) {
    auto cfg = detail::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.n) cfg.data.n_sequences = *o.n;
    cfg.validate();
    detail::prepare_out(o.out, o.force, kManifestName);
    const auto m = synth::generate_dataset(o.out, cfg.seed, cfg.data.n_sequences, cfg.data.split, cfg.data.synth);
    io::write_file(fs::path(o.out) / "config.resolved.json", resolved_config_bytes(cfg));
    out << "generated " << m.sequences.size() << " sequences in " << o.out << "\n";
    for (const auto& split : m.split_names) out << "  " << split << ": " << m.ids_in_split(split).size() << "\n";
    out << "manifest hash " << manifest_hash(m) << "\n";
    return 0;
}

inline int cmd_train(const Options& o, std::ostream& out) {
    auto cfg = detail::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    if (o.epochs) cfg.trainer.epochs = *o.epochs;
    if (!o.mode.empty()) cfg.trainer.mode = parse_mode(o.mode);
    if (!o.ablate.empty()) cfg.trainer.ablation = parse_ablation(o.ablate);
    cfg.validate();
    detail::prepare_out(o.out, o.force, "model.ckpt");
    auto progress = [&](const train::EpochRecord& r) {
        if (o.quiet) return;
        char buf[256];
        std::snprintf(buf, sizeof buf, "epoch %zu/%zu lr %.1e loss %.5f hoa %.5f boot %.5f/%.5f aux %.5f alpha %.4g (%.1fs)\n",
                      r.epoch, cfg.trainer.epochs, r.lr, r.loss, r.hoa, r.boot_short, r.boot_long, r.aux, r.alpha, r.seconds);
        out << buf << std::flush;
    };
    const auto res = train::train_to_directory(cfg, o.data, o.out, progress);
    out << "alpha " << res.alpha << "; checkpoint written to " << (fs::path(o.out) / "model.ckpt").string() << "\n";
    return 0;
}

inline int cmd_embed(const Options& o, std::ostream& out) {
    auto cfg = detail::load_config(o.config);
    DatasetReader reader(o.data);
    eval::EmbeddingSet set;
    nlohmann::json provenance;
    provenance["dataset_manifest_hash"] = manifest_hash(reader.manifest());
    if (o.pca) {
        set = eval::pca_baseline(reader, cfg.eval.pca_dim);
        provenance["method"] = "pca";
        provenance["pca_dim"] = cfg.eval.pca_dim;
    } else {
        if (o.checkpoint.empty()) throw UsageError("embed: --checkpoint is required unless --pca is given");
        const auto bytes = io::read_file(o.checkpoint);
        const auto model = checkpoint_from_bytes(bytes, o.checkpoint);
        const auto which = eval::parse_which(o.which);
        if (which == eval::Which::pca) throw UsageError("embed: use --pca for the PCA baseline");
        set = eval::embed_dataset(model, reader, which);
        provenance["method"] = "bams";
        provenance["checkpoint_hash"] = hex64(fnv1a64(bytes));
    }
    detail::prepare_out(o.out, o.force, eval::kEmbeddingIndex);
    eval::write_embeddings(o.out, set, provenance);
    out << "wrote " << set.ids.size() << " embeddings (" << set.which << ", dim " << set.dim << ") to " << o.out << "\n";
    return 0;
}

inline int cmd_probe(const Options& o, std::ostream& out, std::ostream& err) {
    auto cfg = detail::load_config(o.config);
    if (o.seed) cfg.seed = *o.seed;
    const auto set = eval::read_embeddings(o.embeddings);
    DatasetReader reader(o.data);
    detail::prepare_out(o.out, o.force, "results.csv");
    const auto suite = eval::probe_suite(set, reader, cfg.eval, cfg.seed);
    for (const auto& w : suite.warnings) err << "warning: " << w << "\n";
    io::write_file(fs::path(o.out) / "results.csv", eval::results_csv(suite.results));
    for (const auto& r : suite.results)
        out << r.task << " (" << to_string(r.level) << ") " << r.metric << " = " << eval::format_value(r.value) << "\n";
    return 0;
}

inline int cmd_report(const Options& o, std::ostream& out) {
    if (o.results.empty()) throw UsageError("report: at least one --results file is required");
    if (!o.labels.empty() && o.labels.size() != o.results.size())
        throw UsageError("report: --labels must name every --results file");
    std::vector<std::pair<std::string, std::vector<eval::ProbeResult>>> inputs;
    for (std::size_t i = 0; i < o.results.size(); ++i) {
        const fs::path p = o.results[i];
        std::string label = o.labels.empty() ? p.parent_path().filename().string() : o.labels[i];
        if (label.empty()) label = p.stem().string();
        inputs.emplace_back(label, eval::parse_results_csv(io::read_file(p), p.string()));
    }
    const auto rows = report::merge(inputs);
    detail::prepare_out(o.out, o.force, "report.csv");
    const auto text = report::render_text(rows);
    io::write_file(fs::path(o.out) / "report.csv", report::merged_csv(rows));
    io::write_file(fs::path(o.out) / "summary.csv", report::summary_csv(report::summarize(rows)));
    io::write_file(fs::path(o.out) / "report.txt", text);
    out << text;
    return 0;
}

/// Entry point shared by the executable and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Multi-timescale behavior representation learning"};
    app.require_subcommand(1);
    Options o;

    auto* gen = app.add_subcommand("generate", "Write a synthetic labeled dataset");
    gen->add_option("--config", o.config, "Run config (JSON)");
    gen->add_option("--out", o.out, "Output dataset directory")->required();
    gen->add_option("--seed", o.seed, "Override the config seed");
    gen->add_option("--n", o.n, "Override data.n_sequences");
    gen->add_flag("--force", o.force, "Replace a previous dataset at --out");

    auto* tr = app.add_subcommand("train", "Self-supervised pretraining");
    tr->add_option("--config", o.config, "Run config (JSON)");
    tr->add_option("--data", o.data, "Dataset directory")->required();
    tr->add_option("--out", o.out, "Output run directory")->required();
    tr->add_option("--mode", o.mode, "inductive|transductive");
    tr->add_option("--ablate", o.ablate, "hoa|bootstrap|multiscale");
    tr->add_option("--seed", o.seed, "Override the config seed");
    tr->add_option("--epochs", o.epochs, "Override trainer.epochs");
    tr->add_flag("--force", o.force, "Replace a previous run at --out");
    tr->add_flag("--quiet", o.quiet, "No per-epoch progress");

    auto* em = app.add_subcommand("embed", "Export pooled per-frame embeddings");
    em->add_option("--checkpoint", o.checkpoint, "Trained model checkpoint");
    em->add_option("--data", o.data, "Dataset directory")->required();
    em->add_option("--out", o.out, "Output embedding directory")->required();
    em->add_option("--which", o.which, "short|long|both");
    em->add_option("--config", o.config, "Run config (JSON), for eval.pca_dim");
    em->add_flag("--pca", o.pca, "Export the PCA baseline instead of a model");
    em->add_flag("--force", o.force, "Overwrite previous embeddings at --out");

    auto* pr = app.add_subcommand("probe", "Linear probes on frozen embeddings");
    pr->add_option("--embeddings", o.embeddings, "Embedding directory")->required();
    pr->add_option("--data", o.data, "Dataset directory (labels)")->required();
    pr->add_option("--out", o.out, "Output directory")->required();
    pr->add_option("--config", o.config, "Run config (JSON), eval section");
    pr->add_option("--seed", o.seed, "Seed recorded with the results");
    pr->add_flag("--force", o.force, "Overwrite previous results at --out");

    auto* rp = app.add_subcommand("report", "Merge probe results into tables");
    rp->add_option("--results", o.results, "results.csv files")->required();
    rp->add_option("--labels", o.labels, "Run label per results file (default: parent directory name)");
    rp->add_option("--out", o.out, "Output directory")->required();
    rp->add_flag("--force", o.force, "Overwrite a previous report at --out");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_generate(o, out);
        if (tr->parsed()) return cmd_train(o, out);
        if (em->parsed()) return cmd_embed(o, out);
        if (pr->parsed()) return cmd_probe(o, out, err);
        if (rp->parsed()) return cmd_report(o, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace bams::cli
