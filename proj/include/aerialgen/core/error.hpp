#pragma once

#include <stdexcept>
#include <string>

namespace aerialgen {

// Shapes or sizes of arguments do not agree.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// NaN/Inf encountered, or a numerically degenerate input.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad configuration or request content.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Filesystem / serialization problems.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace aerialgen
