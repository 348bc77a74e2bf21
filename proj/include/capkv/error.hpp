// Copyright (C) 2026 The capkv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace capkv {

enum class ErrorCode {
    NotPositiveDefinite,
    DimensionMismatch,
    EmptySequence,
    DegenerateAnchor,
    EmptyWindow,
    BudgetExceedsCache,
    InvalidArgument,
    EmptyCache,
    EmptySubset,
    BadMagic,
    VersionUnsupported,
    TruncatedPayload,
    ShapeMismatch,
    IoFailure,
    DegenerateRanks,
    PolicyUnsupportedInStreaming,
    CombinatorialExplosion,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::DegenerateAnchor: return "DegenerateAnchor";
    case ErrorCode::EmptyWindow: return "EmptyWindow";
    case ErrorCode::BudgetExceedsCache: return "BudgetExceedsCache";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::EmptyCache: return "EmptyCache";
    case ErrorCode::EmptySubset: return "EmptySubset";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionUnsupported: return "VersionUnsupported";
    case ErrorCode::TruncatedPayload: return "TruncatedPayload";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::DegenerateRanks: return "DegenerateRanks";
    case ErrorCode::PolicyUnsupportedInStreaming: return "PolicyUnsupportedInStreaming";
    case ErrorCode::CombinatorialExplosion: return "CombinatorialExplosion";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), m_code(code) {}

    ErrorCode code() const noexcept { return m_code; }

private:
    ErrorCode m_code;
};

inline void require(bool condition, ErrorCode code, const std::string& what) {
    if (!condition) {
        throw Error(code, what);
    }
}

}  // namespace capkv
