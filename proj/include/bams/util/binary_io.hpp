#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "bams/error.hpp"

namespace bams::io {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError(path.string(), "read failed");
    return bytes;
}

inline void write_file(const fs::path& path, std::string_view bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError(path.parent_path().string(), "cannot create directory: " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path.string(), "write failed");
}

template <typename T>
std::string to_bytes(std::span<const T> values) {
    std::string bytes(values.size() * sizeof(T), '\0');
    std::memcpy(bytes.data(), values.data(), bytes.size());
    return bytes;
}

template <typename T>
std::vector<T> from_bytes(std::string_view bytes, const std::string& what) {
    if (bytes.size() % sizeof(T) != 0) throw IoError(what, "size " + std::to_string(bytes.size()) + " is not a multiple of the element size");
    std::vector<T> out(bytes.size() / sizeof(T));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

/// f64 values narrowed to little-endian f32.
inline std::string f32_bytes(std::span<const double> values) {
    std::vector<float> f(values.begin(), values.end());
    return to_bytes<float>(f);
}

inline std::vector<double> read_f32(const fs::path& path) {
    auto f = from_bytes<float>(read_file(path), path.string());
    return {f.begin(), f.end()};
}

}  // namespace bams::io
