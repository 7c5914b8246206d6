#pragma once

#include <stdexcept>
#include <string>

namespace ento {

/// Base of every error raised by the library. Each subclass maps onto one
/// CLI exit-code class (see cli.hpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class PnmHeaderError : public IoError {
public:
    using IoError::IoError;
};

class PnmMaxvalError : public IoError {
public:
    using IoError::IoError;
};

class PnmTruncatedError : public IoError {
public:
    using IoError::IoError;
};

class ContainerError : public IoError {
public:
    using IoError::IoError;
};

class ChecksumError : public ContainerError {
public:
    using ContainerError::ContainerError;
};

/// Raised by weighted F-measure on an all-background ground truth.
class DegenerateGroundTruthError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Raised when training produces a NaN/Inf; the message names the first
/// non-finite tensor encountered in tape order.
class NonFiniteError : public Error {
public:
    using Error::Error;
};

class TapeError : public Error {
public:
    using Error::Error;
};

} // namespace ento
