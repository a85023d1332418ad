#pragma once

#include <stdexcept>
#include <string>

namespace causalforge {

// Error taxonomy used across the library. The CLI maps these onto exit
// codes: ConfigError -> 2, FormatError/IntegrityError -> 3.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IntegrityError : std::runtime_error {
    explicit IntegrityError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DegenerateGroupError : std::runtime_error {
    explicit DegenerateGroupError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace causalforge
