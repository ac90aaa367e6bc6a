#pragma once

#include <stdexcept>
#include <string>

namespace reconad {

/// Base class for every error raised by the pipeline.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file (JSON syntax, truncated label file, ...).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Well-formed input whose content violates the expected schema.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// A referenced resource (image, checkpoint) could not be read.
class LoadError : public Error {
public:
    using Error::Error;
};

/// Argument outside its mathematical or enumerated domain.
class DomainError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Not enough samples to satisfy a request.
class CapacityError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

/// Caller broke a documented precondition (e.g. NOK sample in a train list).
class ContractError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    TrainingError(const std::string& what, int epoch) : Error(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

/// Pipeline stage failure; wraps the cause with the stage name.
class StageError : public Error {
public:
    StageError(std::string stage, const std::string& cause)
        : Error(stage + ": " + cause), stage_(std::move(stage)) {}
    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace reconad
