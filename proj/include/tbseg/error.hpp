#ifndef TBSEG_ERROR_HPP
#define TBSEG_ERROR_HPP

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tbseg {

enum class ErrorCode {
    Shape,
    Domain,
    Numeric,
    Io,
    // image decoding
    UnknownMagic,
    UnsupportedMaxval,
    PixelCountMismatch,
    MalformedImage,
    // dataset layout
    EmptyDataset,
    Pairing,
    // checkpoint format
    BadMagic,
    UnsupportedVersion,
    Truncated,
    DimOverflow,
    BadRank,
    LayoutMismatch,
    InvalidConfig,
    TrailingData,
};

const char* to_string(ErrorCode code) noexcept;

/// Base of every error raised by the library. `code()` is the machine-checkable
/// category; `what()` carries the human-readable detail.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& message) : Error(ErrorCode::Shape, message) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& message) : Error(ErrorCode::Domain, message) {}
    DomainError(ErrorCode code, const std::string& message) : Error(code, message) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& message) : Error(ErrorCode::Numeric, message) {}
};

class IoError : public Error {
public:
    explicit IoError(const std::string& message) : Error(ErrorCode::Io, message) {}
};

class FormatError : public Error {
public:
    using Error::Error;
};

class PairingError : public Error {
public:
    PairingError(std::vector<std::string> offenders, const std::string& message)
        : Error(ErrorCode::Pairing, message), offenders_(std::move(offenders)) {}

    const std::vector<std::string>& offenders() const noexcept { return offenders_; }

private:
    std::vector<std::string> offenders_;
};

class CheckpointError : public Error {
public:
    CheckpointError(ErrorCode code, const std::string& message,
                    std::optional<std::size_t> tensor_index = std::nullopt)
        : Error(code, message), tensor_index_(tensor_index) {}

    /// Index of the parameter tensor being decoded when the error occurred, if any.
    std::optional<std::size_t> tensor_index() const noexcept { return tensor_index_; }

private:
    std::optional<std::size_t> tensor_index_;
};

}  // namespace tbseg

#endif  // TBSEG_ERROR_HPP
