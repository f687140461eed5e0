#pragma once

#include <stdexcept>
#include <string>

namespace stereo {

// Shape or configuration contract violated by a caller.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed file contents (PFM header, PNG bit depth, checkpoint layout...).
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A forward op produced NaN/Inf, or a loss is undefined.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Misuse of the autodiff graph (double backward, non-scalar loss...).
class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace stereo
