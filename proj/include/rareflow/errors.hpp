#pragma once

#include <stdexcept>
#include <string>

namespace rareflow {

// Three failure categories; the CLI maps them to exit codes
// (invalid config -> 2, data error -> 3, numerical failure -> 4).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : ConfigError {
    using ConfigError::ConfigError;
};
struct InvalidInput : ConfigError {
    using ConfigError::ConfigError;
};
struct EmptyDims : ConfigError {
    using ConfigError::ConfigError;
};
struct ShapeMismatch : ConfigError {
    using ConfigError::ConfigError;
};
struct TapeMismatch : ConfigError {
    using ConfigError::ConfigError;
};
struct IncompatibleTargets : ConfigError {
    using ConfigError::ConfigError;
};

struct ConstantDimension : DataError {
    using DataError::DataError;
};
struct TooFewSamples : DataError {
    using DataError::DataError;
};
struct EmptyData : DataError {
    using DataError::DataError;
};
struct EmptyStream : DataError {
    using DataError::DataError;
};
struct MissingTerms : DataError {
    using DataError::DataError;
};
struct FileNotFound : DataError {
    using DataError::DataError;
};
struct TooManyMalformed : DataError {
    using DataError::DataError;
};
struct NoPairsFound : DataError {
    using DataError::DataError;
};

struct SingularComponent : NumericError {
    using NumericError::NumericError;
};
struct NonFiniteActivation : NumericError {
    using NumericError::NumericError;
};
struct NonFinite : NumericError {
    using NumericError::NumericError;
};
struct DivergedLoss : NumericError {
    using NumericError::NumericError;
};
struct DegenerateFlow : NumericError {
    using NumericError::NumericError;
};
struct MaxRejectionsExceeded : NumericError {
    using NumericError::NumericError;
};
struct NonFiniteWeight : NumericError {
    using NumericError::NumericError;
};
struct NonPositiveGap : NumericError {
    using NumericError::NumericError;
};

}  // namespace rareflow
