#include "metastyle/error.hpp"

namespace metastyle {

VersionError::VersionError(std::int64_t found, std::int64_t supported)
    : FormatError("unsupported format version " + std::to_string(found) +
                  " (this build reads version " + std::to_string(supported) + ")"),
      found_(found),
      supported_(supported) {}

DivergenceError::DivergenceError(std::int64_t iteration, const std::string& what)
    : Error("diverged at iteration " + std::to_string(iteration) + ": " + what),
      iteration_(iteration) {}

ValidationError::ValidationError(std::string key, std::string value, std::string constraint)
    : Error("invalid value for '" + key + "': " + value + " (must satisfy " + constraint + ")"),
      key_(std::move(key)) {}

}  // namespace metastyle
