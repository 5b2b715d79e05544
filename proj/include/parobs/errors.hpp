#pragma once

#include <stdexcept>
#include <string>

namespace parobs {

/// Input violates a documented precondition (bad grid, bad operator, g > b, ...).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A solver failed to converge or hit an iteration cap.
class ConvergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace parobs
