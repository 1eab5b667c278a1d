#pragma once

#include <stdexcept>
#include <string>

namespace c123 {

// Failure inside a guidance/embedding backend (mock contract violation,
// broken IPC channel, malformed response).
class BackendError : public std::runtime_error {
  public:
    explicit BackendError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finite ones are required (NaN noise prediction,
// diverged optimizer update, log of zero in an uncorrected schedule).
class NumericError : public std::runtime_error {
  public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace c123
