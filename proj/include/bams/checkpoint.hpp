#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "bams/model.hpp"
#include "bams/util/binary_io.hpp"
#include "bams/util/hash.hpp"

namespace bams {

inline constexpr char kCheckpointMagic[8] = {'B', 'A', 'M', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic[8] | u32 version | u64 header length | JSON header |
// f64 parameter blobs in declared order | u64 FNV-1a of everything before it.

namespace detail {

template <class T>
void append_pod(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class ByteCursor {
public:
    ByteCursor(std::string_view bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

    std::string_view take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n)
            throw IoError(source_, std::string("truncated checkpoint while reading ") + what);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    template <class T>
    T pod(const char* what) {
        T v;
        std::memcpy(&v, take(sizeof(T), what).data(), sizeof(T));
        return v;
    }

    std::size_t position() const { return pos_; }

private:
    std::string_view bytes_;
    std::string source_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline nlohmann::json checkpoint_header(const BamsModel& model) {
    nlohmann::json j;
    j["model"] = model.config();
    j["layout"] = model.metadata().layout;
    j["stats"] = model.metadata().stats;
    j["binning"] = model.metadata().binning;
    j["distance_scale"] = model.metadata().distance_scale;
    auto& params = j["parameters"];
    params = nlohmann::json::array();
    for (const auto& p : model.parameters().items())
        params.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"lr_multiplier", p.learning_rate_multiplier}});
    return j;
}

inline std::string checkpoint_bytes(const BamsModel& model) {
    const std::string header = checkpoint_header(model).dump();
    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    detail::append_pod<std::uint32_t>(out, kCheckpointVersion);
    detail::append_pod<std::uint64_t>(out, header.size());
    out += header;
    for (const auto& p : model.parameters().items())
        for (double v : p.tensor.data()) detail::append_pod<double>(out, v);
    detail::append_pod<std::uint64_t>(out, fnv1a64(out));
    return out;
}

inline BamsModel checkpoint_from_bytes(std::string_view bytes, const std::string& source = "<memory>") {
    detail::ByteCursor cur(bytes, source);
    if (cur.take(sizeof kCheckpointMagic, "magic") != std::string_view(kCheckpointMagic, sizeof kCheckpointMagic))
        throw IoError(source, "not a checkpoint file (bad magic)");
    const auto version = cur.pod<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw SchemaError(source + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const auto header_len = cur.pod<std::uint64_t>("header length");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(cur.take(header_len, "header"));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError(source, std::string("corrupt checkpoint header: ") + e.what());
    }
    BamsModel model(header.at("model").get<ModelConfig>());
    auto& meta = model.metadata();
    meta.layout = header.at("layout").get<ChannelLayout>();
    meta.stats = header.at("stats").get<NormalizationStats>();
    meta.binning = header.at("binning").get<hoa::BinningSpec>();
    meta.distance_scale = header.at("distance_scale").get<double>();

    const auto& declared = header.at("parameters");
    auto& items = model.parameters().items();
    if (declared.size() != items.size())
        throw SchemaError(source + ": checkpoint declares " + std::to_string(declared.size()) + " parameters, model has " +
                          std::to_string(items.size()));
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto name = declared[i].at("name").get<std::string>();
        const auto shape = declared[i].at("shape").get<Shape>();
        if (name != items[i].name || shape != items[i].tensor.shape())
            throw SchemaError(source + ": parameter " + std::to_string(i) + " is " + name + shape_str(shape) + ", model expects " +
                              items[i].name + shape_str(items[i].tensor.shape()));
        auto dst = items[i].tensor.mutable_data();
        auto blob = cur.take(dst.size() * sizeof(double), "parameter data");
        std::memcpy(dst.data(), blob.data(), blob.size());
    }
    const std::size_t body = cur.position();
    const auto stored = cur.pod<std::uint64_t>("checksum");
    if (stored != fnv1a64(bytes.substr(0, body))) throw IoError(source, "checkpoint checksum mismatch");
    if (cur.position() != bytes.size()) throw IoError(source, "trailing bytes after checkpoint checksum");
    return model;
}

inline void save_checkpoint(const BamsModel& model, const std::filesystem::path& path) {
    io::write_file(path, checkpoint_bytes(model));
}

inline BamsModel load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_bytes(io::read_file(path), path.string());
}

}  // namespace bams
