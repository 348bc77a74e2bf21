// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// KVPK binary cache format, version 1.
//
//   bytes 0-3   magic "KVPK"
//   byte  4     version (1)
//   byte  5     flags (0)
//   bytes 6-7   reserved (0)
//   u32 LE      JSON header length
//   JSON        {"n","d_key","d_value","layer","head","dtype":"f32","has_queries","t_queries"}
//   f32 LE      keys   (n * d_key, row-major)
//   f32 LE      values (n * d_value, row-major)
//   u32 LE      positions (n)
//   f32 LE      queries (t_queries * d_key), only when has_queries

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "capkv/cache.hpp"

namespace capkv {

struct KvpkFile {
    KvCache cache;
    std::optional<Matrix> queries;
};

namespace kvpk {

inline constexpr std::array<char, 4> kMagic{'K', 'V', 'P', 'K'};
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kPreambleBytes = 12;

static_assert(std::endian::native == std::endian::little, "KVPK I/O assumes a little-endian host");

inline void put_u32(std::vector<char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
}

inline std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    }
    return v;
}

inline void put_f32_matrix(std::vector<char>& out, const Matrix& m) {
    for (double x : m.data()) {
        const auto f = static_cast<float>(x);
        put_u32(out, std::bit_cast<std::uint32_t>(f));
    }
}

inline Matrix get_f32_matrix(const char*& p, std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (double& x : m.data()) {
        x = static_cast<double>(std::bit_cast<float>(get_u32(p)));
        p += 4;
    }
    return m;
}

}  // namespace kvpk

/// Serializes to an in-memory KVPK image.
inline std::vector<char> encode_kvpk(const KvCache& cache, const std::optional<Matrix>& queries = std::nullopt) {
    cache.validate();
    if (queries) {
        require(queries->cols() == cache.d_key(), ErrorCode::ShapeMismatch, "query width != d_key");
    }
    nlohmann::ordered_json header = {
        {"n", cache.size()},
        {"d_key", cache.d_key()},
        {"d_value", cache.d_value()},
        {"layer", cache.layer},
        {"head", cache.head},
        {"dtype", "f32"},
        {"has_queries", queries.has_value()},
        {"t_queries", queries ? queries->rows() : 0},
    };
    const std::string text = header.dump();

    std::vector<char> out(kvpk::kMagic.begin(), kvpk::kMagic.end());
    out.push_back(static_cast<char>(kvpk::kVersion));
    out.push_back(0);
    out.push_back(0);
    out.push_back(0);
    kvpk::put_u32(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    kvpk::put_f32_matrix(out, cache.keys);
    kvpk::put_f32_matrix(out, cache.values);
    for (std::uint32_t p : cache.positions) {
        kvpk::put_u32(out, p);
    }
    if (queries) {
        kvpk::put_f32_matrix(out, *queries);
    }
    return out;
}

/**
 * @brief Parses a KVPK image, validating the total length exactly.
 *
 * A payload shorter than declared is TruncatedPayload, unless it holds a
 * whole number of entries for some other N, in which case the header is
 * what disagrees and ShapeMismatch is raised. Trailing bytes are always a
 * ShapeMismatch.
 */
inline KvpkFile decode_kvpk(const std::vector<char>& bytes) {
    require(bytes.size() >= 4, ErrorCode::TruncatedPayload, "file shorter than magic");
    require(std::equal(kvpk::kMagic.begin(), kvpk::kMagic.end(), bytes.begin()), ErrorCode::BadMagic,
            "missing KVPK magic");
    require(bytes.size() >= kvpk::kPreambleBytes, ErrorCode::TruncatedPayload, "file shorter than preamble");
    require(static_cast<std::uint8_t>(bytes[4]) == kvpk::kVersion, ErrorCode::VersionUnsupported,
            "version " + std::to_string(static_cast<unsigned>(static_cast<std::uint8_t>(bytes[4]))));
    require(bytes[5] == 0 && bytes[6] == 0 && bytes[7] == 0, ErrorCode::VersionUnsupported,
            "non-zero flags or reserved bytes");
    const std::size_t header_len = kvpk::get_u32(bytes.data() + 8);
    require(bytes.size() >= kvpk::kPreambleBytes + header_len, ErrorCode::TruncatedPayload,
            "file shorter than JSON header");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + kvpk::kPreambleBytes,
                                       bytes.begin() + static_cast<std::ptrdiff_t>(kvpk::kPreambleBytes + header_len));
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ShapeMismatch, std::string("malformed JSON header: ") + e.what());
    }

    std::size_t n = 0, d_key = 0, d_value = 0, t_queries = 0;
    std::uint32_t layer = 0, head = 0;
    bool has_queries = false;
    try {
        require(header.at("dtype").get<std::string>() == "f32", ErrorCode::VersionUnsupported,
                "only dtype f32 is supported");
        n = header.at("n").get<std::size_t>();
        d_key = header.at("d_key").get<std::size_t>();
        d_value = header.at("d_value").get<std::size_t>();
        layer = header.at("layer").get<std::uint32_t>();
        head = header.at("head").get<std::uint32_t>();
        has_queries = header.at("has_queries").get<bool>();
        t_queries = header.at("t_queries").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ShapeMismatch, std::string("bad header field: ") + e.what());
    }
    require(has_queries || t_queries == 0, ErrorCode::ShapeMismatch, "t_queries set without has_queries");

    const std::size_t payload = bytes.size() - kvpk::kPreambleBytes - header_len;
    const std::size_t row_bytes = 4 * (d_key + d_value + 1);
    const std::size_t query_bytes = 4 * t_queries * d_key;
    const std::size_t expected = n * row_bytes + query_bytes;
    if (payload != expected) {
        const bool other_n_fits =
            payload >= query_bytes && row_bytes > 0 && (payload - query_bytes) % row_bytes == 0;
        if (payload < expected && !other_n_fits) {
            throw Error(ErrorCode::TruncatedPayload,
                        "payload " + std::to_string(payload) + " bytes, header declares " + std::to_string(expected));
        }
        throw Error(ErrorCode::ShapeMismatch,
                    "payload " + std::to_string(payload) + " bytes, header declares " + std::to_string(expected));
    }

    const char* p = bytes.data() + kvpk::kPreambleBytes + header_len;
    KvpkFile file;
    file.cache.keys = kvpk::get_f32_matrix(p, n, d_key);
    file.cache.values = kvpk::get_f32_matrix(p, n, d_value);
    file.cache.positions.resize(n);
    for (auto& pos : file.cache.positions) {
        pos = kvpk::get_u32(p);
        p += 4;
    }
    file.cache.layer = layer;
    file.cache.head = head;
    if (has_queries) {
        file.queries = kvpk::get_f32_matrix(p, t_queries, d_key);
    }
    try {
        file.cache.validate();
    } catch (const Error& e) {
        throw Error(ErrorCode::ShapeMismatch, e.what());
    }
    return file;
}

inline void save_cache(const KvCache& cache, const std::filesystem::path& path,
                       const std::optional<Matrix>& queries = std::nullopt) {
    const std::vector<char> bytes = encode_kvpk(cache, queries);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::IoFailure, "write failed for " + path.string());
}

inline KvpkFile load_cache(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_kvpk(bytes);
}

}  // namespace capkv
