#pragma once

#include <stdexcept>
#include <string>

namespace lvit {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor dimensions inconsistent with the requested operation.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A scalar argument is outside its valid range (e.g. dropout rate >= 1).
class ValueError : public Error {
public:
    using Error::Error;
};

/// API contract violated (label out of range, loss not scalar, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Malformed or truncated file content.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Well-formed file whose content does not match the expected configuration.
class CompatibilityError : public Error {
public:
    using Error::Error;
};

/// Problem decoding or assembling input data.
class IngestError : public Error {
public:
    using Error::Error;
};

/// Filesystem-level failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Non-finite value where a finite one is required.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace lvit
