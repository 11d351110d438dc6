#pragma once

#include <stdexcept>
#include <string>

namespace inst4d {

// Error categories map onto CLI exit codes: config errors -> 2,
// missing prerequisites -> 3, format/version mismatches -> 4.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct MissingPrerequisiteError : std::runtime_error {
    explicit MissingPrerequisiteError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace inst4d
