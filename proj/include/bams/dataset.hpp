#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bams/features.hpp"
#include "bams/util/binary_io.hpp"
#include "bams/util/hash.hpp"

namespace bams {

namespace fs = std::filesystem;

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr const char* kManifestName = "manifest.json";

enum class TaskLevel { sequence, frame };
enum class TaskKind { classification, regression };

inline std::string to_string(TaskLevel l) { return l == TaskLevel::sequence ? "sequence" : "frame"; }
inline std::string to_string(TaskKind k) { return k == TaskKind::classification ? "classification" : "regression"; }

/// A named evaluation task and where its labels come from.
struct ProbeTask {
    std::string name;
    TaskLevel level = TaskLevel::sequence;
    TaskKind kind = TaskKind::classification;
};

inline void to_json(nlohmann::json& j, const ProbeTask& t) {
    j = nlohmann::json{{"name", t.name}, {"level", to_string(t.level)}, {"kind", to_string(t.kind)}};
}

inline void from_json(const nlohmann::json& j, ProbeTask& t) {
    t.name = j.at("name").get<std::string>();
    const auto level = j.at("level").get<std::string>();
    const auto kind = j.at("kind").get<std::string>();
    if (level != "sequence" && level != "frame") throw SchemaError("task " + t.name + ": unknown level " + level);
    if (kind != "classification" && kind != "regression") throw SchemaError("task " + t.name + ": unknown kind " + kind);
    t.level = level == "sequence" ? TaskLevel::sequence : TaskLevel::frame;
    t.kind = kind == "classification" ? TaskKind::classification : TaskKind::regression;
}

struct SequenceInfo {
    std::string id;
    std::string split;
    std::size_t length = 0;
};

/// One recorded sequence: per-agent features (observation and action
/// channels plus validity), optional pairwise distances, and labels.
struct Trajectory {
    SequenceInfo info;
    std::vector<FeatureSequence> agents;
    std::size_t distance_pairs = 0;
    std::vector<double> distances;  // [T x pairs], pairs ordered (0,1), (0,2), ..., (1,2), ...
    std::map<std::string, double> sequence_labels;
    std::map<std::string, std::vector<double>> frame_labels;
};

inline std::vector<std::pair<std::size_t, std::size_t>> agent_pairs(std::size_t agents) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < agents; ++i)
        for (std::size_t j = i + 1; j < agents; ++j) out.emplace_back(i, j);
    return out;
}

struct Manifest {
    int version = kDatasetFormatVersion;
    double frame_rate_hz = 30.0;
    std::size_t n_agents = 1;
    bool has_distances = false;
    ChannelLayout layout;
    std::vector<std::string> split_names{"train", "public", "private"};
    std::vector<ProbeTask> tasks;
    std::vector<SequenceInfo> sequences;
    std::map<std::string, std::map<std::string, double>> sequence_labels;

    std::vector<std::string> ids_in_split(const std::string& split) const {
        std::vector<std::string> out;
        for (const auto& s : sequences)
            if (s.split == split) out.push_back(s.id);
        return out;
    }

    const SequenceInfo& info(const std::string& id) const {
        for (const auto& s : sequences)
            if (s.id == id) return s;
        throw SchemaError("unknown sequence id " + id);
    }
};

namespace dataset_paths {
inline std::string features(const std::string& id, std::size_t agent) {
    return "sequences/" + id + "/agent" + std::to_string(agent) + ".f32";
}
inline std::string validity(const std::string& id, std::size_t agent) {
    return "sequences/" + id + "/agent" + std::to_string(agent) + ".valid.u8";
}
inline std::string distances(const std::string& id) { return "sequences/" + id + "/distances.f32"; }
inline std::string frame_label(const std::string& id, const ProbeTask& task) {
    return "labels/" + id + "." + task.name + (task.kind == TaskKind::classification ? ".i32" : ".f32");
}
}  // namespace dataset_paths

inline nlohmann::json manifest_to_json(const Manifest& m) {
    nlohmann::json j;
    j["format"] = "bams-trajectories";
    j["version"] = m.version;
    j["frame_rate_hz"] = m.frame_rate_hz;
    j["n_agents"] = m.n_agents;
    j["has_distances"] = m.has_distances;
    j["layout"] = m.layout;
    j["splits"] = m.split_names;
    j["tasks"] = m.tasks;
    auto seqs = nlohmann::json::array();
    for (const auto& s : m.sequences) {
        nlohmann::json e{{"id", s.id}, {"split", s.split}, {"length", s.length}};
        auto feats = nlohmann::json::array(), valid = nlohmann::json::array();
        for (std::size_t a = 0; a < m.n_agents; ++a) {
            feats.push_back(dataset_paths::features(s.id, a));
            valid.push_back(dataset_paths::validity(s.id, a));
        }
        e["features"] = feats;
        e["validity"] = valid;
        if (m.has_distances) e["distances"] = dataset_paths::distances(s.id);
        nlohmann::json fl = nlohmann::json::object();
        for (const auto& t : m.tasks)
            if (t.level == TaskLevel::frame) fl[t.name] = dataset_paths::frame_label(s.id, t);
        e["frame_labels"] = fl;
        seqs.push_back(std::move(e));
    }
    j["sequences"] = seqs;
    j["sequence_labels"] = m.sequence_labels;
    return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
    Manifest m;
    try {
        if (j.at("format").get<std::string>() != "bams-trajectories") throw SchemaError("manifest: unexpected format tag");
        m.version = j.at("version").get<int>();
        if (m.version != kDatasetFormatVersion)
            throw SchemaError("manifest: unsupported version " + std::to_string(m.version));
        m.frame_rate_hz = j.at("frame_rate_hz").get<double>();
        m.n_agents = j.at("n_agents").get<std::size_t>();
        m.has_distances = j.at("has_distances").get<bool>();
        m.layout = j.at("layout").get<ChannelLayout>();
        m.split_names = j.at("splits").get<std::vector<std::string>>();
        m.tasks = j.at("tasks").get<std::vector<ProbeTask>>();
        for (const auto& e : j.at("sequences"))
            m.sequences.push_back({e.at("id").get<std::string>(), e.at("split").get<std::string>(),
                                   e.at("length").get<std::size_t>()});
        m.sequence_labels = j.at("sequence_labels").get<std::map<std::string, std::map<std::string, double>>>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("manifest: ") + e.what());
    }
    m.layout.validate();
    return m;
}

inline std::string manifest_bytes(const Manifest& m) { return manifest_to_json(m).dump(1) + "\n"; }

inline std::string manifest_hash(const Manifest& m) { return hex64(fnv1a64(manifest_bytes(m))); }

/// Writes the trajectory directory format: manifest.json plus per-sequence
/// little-endian f32 [T x C] feature files, one byte per frame validity,
/// optional f32 [T x pairs] distances and per-frame label files.
inline void write_trajectory(const fs::path& dir, const Manifest& manifest, const Trajectory& tr) {
    {
        const auto& id = tr.info.id;
        if (tr.agents.size() != manifest.n_agents) throw SchemaError("sequence " + id + ": agent count mismatch");
        for (std::size_t a = 0; a < tr.agents.size(); ++a) {
            const auto& f = tr.agents[a];
            std::vector<double> rows(f.frames * f.channels);  // [T x C]
            for (std::size_t t = 0; t < f.frames; ++t)
                for (std::size_t c = 0; c < f.channels; ++c) rows[t * f.channels + c] = f.at(c, t);
            io::write_file(dir / dataset_paths::features(id, a), io::f32_bytes(rows));
            auto valid = f.validity(manifest.layout);
            io::write_file(dir / dataset_paths::validity(id, a), io::to_bytes<unsigned char>(valid));
        }
        if (manifest.has_distances) io::write_file(dir / dataset_paths::distances(id), io::f32_bytes(tr.distances));
        for (const auto& task : manifest.tasks) {
            if (task.level != TaskLevel::frame) continue;
            auto it = tr.frame_labels.find(task.name);
            if (it == tr.frame_labels.end()) continue;
            if (task.kind == TaskKind::classification) {
                std::vector<std::int32_t> v(it->second.begin(), it->second.end());
                io::write_file(dir / dataset_paths::frame_label(id, task), io::to_bytes<std::int32_t>(v));
            } else {
                io::write_file(dir / dataset_paths::frame_label(id, task), io::f32_bytes(it->second));
            }
        }
    }
}

inline void write_dataset(const fs::path& dir, const Manifest& manifest, const std::vector<Trajectory>& trajectories) {
    for (const auto& tr : trajectories) write_trajectory(dir, manifest, tr);
    io::write_file(dir / kManifestName, manifest_bytes(manifest));
}

/// Reads a trajectory directory. Every file opened is recorded in
/// accessed_files() (relative to the dataset root).
class DatasetReader {
public:
    explicit DatasetReader(fs::path root) : root_(std::move(root)) {
        const auto bytes = read(kManifestName);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(bytes);
        } catch (const nlohmann::json::parse_error& e) {
            throw IoError((root_ / kManifestName).string(), std::string("malformed JSON: ") + e.what());
        }
        manifest_ = manifest_from_json(j);
    }

    const Manifest& manifest() const { return manifest_; }
    const fs::path& root() const { return root_; }
    const std::vector<std::string>& accessed_files() const { return accessed_; }

    Trajectory load(const std::string& id, bool with_frame_labels = true) {
        const auto& info = manifest_.info(id);
        const auto& layout = manifest_.layout;
        const std::size_t C = layout.size(), T = info.length;
        Trajectory tr;
        tr.info = info;
        for (std::size_t a = 0; a < manifest_.n_agents; ++a) {
            const auto rel = dataset_paths::features(id, a);
            auto rows = io::from_bytes<float>(read(rel), rel);
            if (rows.size() != T * C)
                throw IoError((root_ / rel).string(), "expected " + std::to_string(T * C) + " values, found " + std::to_string(rows.size()));
            FeatureSequence f(C, T);
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t c = 0; c < C; ++c) f.at(c, t) = rows[t * C + c];
            const auto vrel = dataset_paths::validity(id, a);
            auto valid = io::from_bytes<unsigned char>(read(vrel), vrel);
            if (valid.size() != T) throw IoError((root_ / vrel).string(), "expected " + std::to_string(T) + " validity bytes");
            for (std::size_t t = 0; t < T; ++t)
                if ((valid[t] != 0) != (f.at(layout.validity_channel, t) > 0.5))
                    throw SchemaError("sequence " + id + ": validity file disagrees with validity channel at frame " +
                                      std::to_string(t));
            tr.agents.push_back(std::move(f));
        }
        if (manifest_.has_distances) {
            const auto rel = dataset_paths::distances(id);
            auto d = io::from_bytes<float>(read(rel), rel);
            tr.distance_pairs = agent_pairs(manifest_.n_agents).size();
            if (d.size() != T * tr.distance_pairs) throw IoError((root_ / rel).string(), "distance table has wrong size");
            tr.distances.assign(d.begin(), d.end());
        }
        if (auto it = manifest_.sequence_labels.find(id); it != manifest_.sequence_labels.end()) tr.sequence_labels = it->second;
        if (with_frame_labels)
            for (const auto& task : manifest_.tasks)
                if (task.level == TaskLevel::frame) tr.frame_labels[task.name] = load_frame_label(id, task);
        return tr;
    }

    /// Frames valid for every agent of the sequence.
    std::vector<unsigned char> load_validity(const std::string& id) {
        const std::size_t T = manifest_.info(id).length;
        std::vector<unsigned char> all(T, 1);
        for (std::size_t a = 0; a < manifest_.n_agents; ++a) {
            const auto rel = dataset_paths::validity(id, a);
            auto valid = io::from_bytes<unsigned char>(read(rel), rel);
            if (valid.size() != T) throw IoError((root_ / rel).string(), "expected " + std::to_string(T) + " validity bytes");
            for (std::size_t t = 0; t < T; ++t) all[t] = all[t] && valid[t];
        }
        return all;
    }

    std::vector<double> load_frame_label(const std::string& id, const ProbeTask& task) {
        const auto rel = dataset_paths::frame_label(id, task);
        const auto bytes = read(rel);
        std::vector<double> out;
        if (task.kind == TaskKind::classification) {
            auto v = io::from_bytes<std::int32_t>(bytes, rel);
            out.assign(v.begin(), v.end());
        } else {
            auto v = io::from_bytes<float>(bytes, rel);
            out.assign(v.begin(), v.end());
        }
        if (out.size() != manifest_.info(id).length) throw IoError((root_ / rel).string(), "frame label length mismatch");
        return out;
    }

private:
    std::string read(const std::string& rel) {
        accessed_.push_back(rel);
        return io::read_file(root_ / rel);
    }

    fs::path root_;
    Manifest manifest_;
    std::vector<std::string> accessed_;
};

}  // namespace bams
