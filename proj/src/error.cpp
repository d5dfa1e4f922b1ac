#include "tbseg/error.hpp"

namespace tbseg {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::Shape: return "shape-error";
        case ErrorCode::Domain: return "domain-error";
        case ErrorCode::Numeric: return "numeric-error";
        case ErrorCode::Io: return "io-error";
        case ErrorCode::UnknownMagic: return "unknown-magic";
        case ErrorCode::UnsupportedMaxval: return "unsupported-maxval";
        case ErrorCode::PixelCountMismatch: return "pixel-count-mismatch";
        case ErrorCode::MalformedImage: return "malformed-image";
        case ErrorCode::EmptyDataset: return "empty-dataset";
        case ErrorCode::Pairing: return "pairing-error";
        case ErrorCode::BadMagic: return "bad-magic";
        case ErrorCode::UnsupportedVersion: return "unsupported-version";
        case ErrorCode::Truncated: return "truncated";
        case ErrorCode::DimOverflow: return "dim-overflow";
        case ErrorCode::BadRank: return "bad-rank";
        case ErrorCode::LayoutMismatch: return "layout-mismatch";
        case ErrorCode::InvalidConfig: return "invalid-config";
        case ErrorCode::TrailingData: return "trailing-data";
    }
    return "error";
}

}  // namespace tbseg
