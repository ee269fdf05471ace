#pragma once

#include <stdexcept>
#include <string>

namespace rgfs {

/// Invalid configuration or input contract violation. The CLI maps this to
/// exit code 2; anything else that escapes maps to exit code 1.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Failure during a run that was validly configured (I/O, numeric blowup).
class TrainError : public std::runtime_error {
public:
    explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace rgfs
