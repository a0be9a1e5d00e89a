#pragma once

#include <stdexcept>
#include <string>

namespace p2u {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem / socket I/O failures.
class IoError : public Error {
public:
    using Error::Error;
};

/// Structural problems in a container or bitstream.
class FormatError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public FormatError {
public:
    using FormatError::FormatError;
};

class UnsupportedVersionError : public FormatError {
public:
    using FormatError::FormatError;
};

class TruncatedError : public FormatError {
public:
    using FormatError::FormatError;
};

class DigestMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};

/// The entropy-coded payload ended before all symbols were decoded.
class PayloadExhaustedError : public FormatError {
public:
    using FormatError::FormatError;
};

/// A model or quantized model violates its invariants (non-finite values,
/// shape/value-count mismatch, duplicate tensor names, bad bitwidth...).
class InvalidModelError : public Error {
public:
    using Error::Error;
};

/// Two models that must agree on tensor names/shapes/ordering do not.
class ShapeMismatchError : public InvalidModelError {
public:
    using InvalidModelError::InvalidModelError;
};

/// An update was applied against a base it was not computed for.
class ChecksumBindingError : public Error {
public:
    using Error::Error;
};

/// Wire-protocol violations and error responses from the peer.
class ProtocolError : public Error {
public:
    using Error::Error;
};

}  // namespace p2u
