#pragma once

#include <cstdint>
#include <vector>

#include <json.hpp>

namespace synthalign {

inline constexpr double kDefaultValidationFraction = 0.2;

struct SplitResult {
  std::vector<nlohmann::json> validation;
  std::vector<nlohmann::json> evaluation;
};

/// Seeded shuffle, then round(n * fraction) rows go to validation. Both
/// halves keep their original relative order.
SplitResult split_rows(const std::vector<nlohmann::json>& rows,
                       double validation_fraction = kDefaultValidationFraction,
                       std::uint64_t seed = 0);

}  // namespace synthalign
