#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "synthalign/stage.hpp"
#include "synthalign/types.hpp"

namespace synthalign {

/// Zero-padded ids ("m00001") so lexicographic order is creation order.
std::string metadata_id(std::size_t index);

struct EncodeResult {
  std::vector<InstructionMetadata> metadata;
  std::vector<SkipEntry> skipped;
};

/// Extracts (use case, skills) from every seed with the strong model. A seed
/// whose answer cannot be parsed is re-prompted once, then skipped. Throws
/// all_seeds_failed when nothing could be extracted.
EncodeResult encode_seeds(std::span<const Instruction> seeds, const StageContext& ctx);

/// Forbidden (use case, skill) pairs, both lowercased.
using Blocklist = std::set<std::pair<std::string, std::string>>;

/// "use_case<TAB>skill" per line; blank lines and '#' comments ignored.
Blocklist parse_blocklist(std::string_view content);
Blocklist load_blocklist(const std::filesystem::path& path);

struct AugmentOptions {
  // Consecutive rejected draws tolerated before giving up.
  std::size_t resample_cap = 10000;
  // Sample use cases by their frequency in the pool instead of uniformly.
  bool weight_by_frequency = false;
};

/// Grows the pool to `target_count` by pairing a sampled use case with one to
/// three distinct skills from the union of pool skills. Originals come first,
/// unchanged. New entries avoid the blocklist and duplicate
/// (use case, skill set) identities.
std::vector<InstructionMetadata> augment_metadata(std::span<const InstructionMetadata> pool,
                                                  std::size_t target_count, std::uint64_t seed,
                                                  const Blocklist& blocklist = {},
                                                  const AugmentOptions& options = {});

}  // namespace synthalign
