#pragma once

#include <stdexcept>
#include <string>

namespace fbsr {

/// Training diverged or produced non-finite values.
struct numerical_error : std::runtime_error {
  explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

/// A required input artifact (bank, model, volume) is absent or unreadable.
struct missing_artifact : std::runtime_error {
  explicit missing_artifact(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or inconsistent run configuration.
struct config_error : std::runtime_error {
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fbsr
