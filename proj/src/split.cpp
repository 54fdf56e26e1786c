#include "synthalign/split.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "synthalign/error.hpp"
#include "synthalign/random.hpp"

namespace synthalign {

SplitResult split_rows(const std::vector<nlohmann::json>& rows, double validation_fraction,
                       std::uint64_t seed) {
  require(validation_fraction >= 0.0 && validation_fraction <= 1.0,
          "validation fraction must lie in [0, 1]");
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  portable_shuffle(order, rng);
  const auto n_validation =
      static_cast<std::size_t>(std::llround(static_cast<double>(rows.size()) * validation_fraction));
  std::vector<char> in_validation(rows.size(), 0);
  for (std::size_t k = 0; k < n_validation; ++k) in_validation[order[k]] = 1;
  SplitResult out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    (in_validation[i] ? out.validation : out.evaluation).push_back(rows[i]);
  }
  return out;
}

}  // namespace synthalign
