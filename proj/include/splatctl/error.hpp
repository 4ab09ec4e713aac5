#pragma once

#include <stdexcept>
#include <string>

namespace splatctl {

// Base of every error raised by the library. The CLI maps subclasses onto
// distinct exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class DegenerateRotationError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Dataset and file-format failures.
class DataError : public Error {
public:
    using Error::Error;
};

class ManifestError : public DataError {
public:
    using DataError::DataError;
};

class EmptyDatasetError : public DataError {
public:
    using DataError::DataError;
};

class ImageError : public DataError {
public:
    using DataError::DataError;
};

class PoseError : public DataError {
public:
    using DataError::DataError;
};

class PlyHeaderError : public DataError {
public:
    using DataError::DataError;
};

class PlyPropertyError : public DataError {
public:
    using DataError::DataError;
};

class PlyTruncatedError : public DataError {
public:
    using DataError::DataError;
};

class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

} // namespace splatctl
