#pragma once

#include <stdexcept>
#include <string>

namespace hglm {

// Bad shapes, bad config values, out-of-range ids.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A requested budget cannot be met, or two budgets do not match.
class InfeasibleError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File system and corpus errors.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public IoError {
public:
    enum class Kind { bad_magic, version_mismatch, truncated, config_mismatch, shape_mismatch };

    CheckpointError(Kind kind, const std::string& what) : IoError(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

}  // namespace hglm
