#pragma once

#include <stdexcept>
#include <string>

namespace matchgan {

// Bad argument to a numerical or data operation (shape, range, sign).
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Rejected experiment or architecture configuration.
class InvalidConfig : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A dataset with fewer than two classes cannot supply mismatched pairs.
class CannotFormMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when a loss becomes non-finite. `component()` names the loss term.
class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::string component, long step)
        : std::runtime_error("training diverged: non-finite " + component + " at step " +
                             std::to_string(step)),
          component_(std::move(component)),
          step_(step) {}

    const std::string& component() const noexcept { return component_; }
    long step() const noexcept { return step_; }

private:
    std::string component_;
    long step_;
};

}  // namespace matchgan
