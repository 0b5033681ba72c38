#pragma once

#include <stdexcept>
#include <string>

namespace mpgcn {

// Base for every error the library raises on purpose.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/matrix dimension disagreement.
struct ShapeError : Error {
  explicit ShapeError(const std::string& msg) : Error("shape error: " + msg) {}
};

// A precondition of an operation was violated (non-scalar loss, empty input, ...).
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error("contract error: " + msg) {}
};

struct IoError : Error {
  explicit IoError(const std::string& msg) : Error("i/o error: " + msg) {}
};

struct IngestError : Error {
  explicit IngestError(const std::string& msg) : Error("ingest error: " + msg) {}
};

struct GraphError : Error {
  explicit GraphError(const std::string& msg) : Error("graph error: " + msg) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct TrainingError : Error {
  explicit TrainingError(const std::string& msg) : Error("training error: " + msg) {}
};

struct OptimizationError : Error {
  explicit OptimizationError(const std::string& msg) : Error("optimization error: " + msg) {}
};

struct FitError : Error {
  explicit FitError(const std::string& msg) : Error("fit error: " + msg) {}
};

struct GeneratorError : Error {
  explicit GeneratorError(const std::string& msg) : Error("generator error: " + msg) {}
};

struct UndefinedMetricError : Error {
  explicit UndefinedMetricError(const std::string& msg) : Error("undefined metric: " + msg) {}
};

}  // namespace mpgcn
