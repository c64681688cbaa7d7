#pragma once

#include <stdexcept>
#include <string>

namespace vlptl {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TaxonomyError : public Error {
    using Error::Error;
};
class FormatError : public Error {
    using Error::Error;
};
class CurationError : public Error {
    using Error::Error;
};
class AnnotationError : public Error {
    using Error::Error;
};
class PlacementError : public Error {
    using Error::Error;
};
class ShapeError : public Error {
    using Error::Error;
};
class BatchError : public Error {
    using Error::Error;
};
class ConfigError : public Error {
    using Error::Error;
};
class CheckpointError : public Error {
    using Error::Error;
};
class EvaluationError : public Error {
    using Error::Error;
};

// Raised when a stage is invoked without its predecessor's artifact.
class StageDependencyError : public Error {
    using Error::Error;
};

class ManifestError : public Error {
public:
    ManifestError(const std::string& what, long record) : Error(what), record_(record) {}
    // Zero-based line index of the offending record; -1 when not record-specific.
    [[nodiscard]] long record() const { return record_; }

private:
    long record_;
};

class NumericError : public Error {
public:
    NumericError(const std::string& what, std::string dump) : Error(what), dump_(std::move(dump)) {}
    [[nodiscard]] const std::string& dump() const { return dump_; }

private:
    std::string dump_;
};

}  // namespace vlptl
