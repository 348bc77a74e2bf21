// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "capkv/error.hpp"

namespace capkv::harness {

/// Shortest round-trip decimal form of a double.
inline std::string format_double(double x) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), x);
    return ec == std::errc{} ? std::string(buf, end) : std::string("nan");
}

/// FNV-1a 64-bit digest as 16 lowercase hex characters.
inline std::string fnv1a_hex(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// Hash of the canonical (key-sorted, compact) JSON serialization of a config.
inline std::string config_hash(const nlohmann::json& config) { return fnv1a_hex(nlohmann::json(config).dump()); }

/// RFC 4180 field quoting.
inline std::string csv_escape(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) {
        return std::string(field);
    }
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') {
            out += '"';
        }
        out += c;
    }
    out += '"';
    return out;
}

inline void write_csv_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i > 0) {
            out << ',';
        }
        out << csv_escape(fields[i]);
    }
    out << "\r\n";
}

/// Tabular output shared by the sweep, stream and bench tables.
struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void write_csv(std::ostream& out) const {
        write_csv_row(out, header);
        for (const auto& r : rows) {
            write_csv_row(out, r);
        }
    }

    /// One JSON object per row; numeric-looking fields stay strings to keep bytes exact.
    void write_jsonl(std::ostream& out) const {
        for (const auto& r : rows) {
            nlohmann::ordered_json j;
            for (std::size_t i = 0; i < header.size(); ++i) {
                j[header[i]] = r[i];
            }
            out << j.dump() << '\n';
        }
    }

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i) {
            if (header[i] == name) {
                return i;
            }
        }
        throw Error(ErrorCode::InvalidArgument, "missing column '" + std::string(name) + "'");
    }
};

/// RFC 4180 parser: quoted fields, doubled quotes, CRLF or LF line ends.
inline Table read_csv(std::istream& in) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> record;
    std::string field;
    bool in_quotes = false;
    bool any = false;
    char c;
    while (in.get(c)) {
        any = true;
        if (in_quotes) {
            if (c == '"') {
                if (in.peek() == '"') {
                    in.get(c);
                    field += '"';
                } else {
                    in_quotes = false;
                }
            } else {
                field += c;
            }
            continue;
        }
        if (c == '"') {
            in_quotes = true;
        } else if (c == ',') {
            record.push_back(std::move(field));
            field.clear();
        } else if (c == '\r') {
            continue;
        } else if (c == '\n') {
            record.push_back(std::move(field));
            field.clear();
            records.push_back(std::move(record));
            record.clear();
            any = false;
        } else {
            field += c;
        }
    }
    require(!in_quotes, ErrorCode::InvalidArgument, "unterminated quoted CSV field");
    if (any) {
        record.push_back(std::move(field));
        records.push_back(std::move(record));
    }
    require(!records.empty(), ErrorCode::InvalidArgument, "empty CSV input");
    Table t;
    t.header = std::move(records.front());
    for (std::size_t i = 1; i < records.size(); ++i) {
        require(records[i].size() == t.header.size(), ErrorCode::InvalidArgument,
                "CSV row " + std::to_string(i) + " has " + std::to_string(records[i].size()) + " fields");
        t.rows.push_back(std::move(records[i]));
    }
    return t;
}

/// Reads the JSON-lines form written by Table::write_jsonl.
inline Table read_jsonl(std::istream& in) {
    Table t;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto j = nlohmann::ordered_json::parse(line);
        if (t.header.empty()) {
            for (const auto& [k, _] : j.items()) {
                t.header.push_back(k);
            }
        }
        std::vector<std::string> row;
        for (const auto& h : t.header) {
            const auto& v = j.at(h);
            row.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        }
        t.rows.push_back(std::move(row));
    }
    require(!t.rows.empty(), ErrorCode::InvalidArgument, "empty JSON-lines input");
    return t;
}

inline double parse_double(const std::string& s) {
    double x = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    require(ec == std::errc{} && ptr == s.data() + s.size(), ErrorCode::InvalidArgument,
            "not a number: '" + s + "'");
    return x;
}

}  // namespace capkv::harness
