#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "synthalign/stage.hpp"
#include "synthalign/types.hpp"

namespace synthalign {

// Longer numbered lists parse less reliably, so bigger requests are split.
inline constexpr int kMaxInstructionsPerCall = 10;

struct DecodeResult {
  std::vector<Instruction> instructions;
  std::vector<SkipEntry> log;
};

DecodeResult generate_basic(const InstructionMetadata& metadata, int count,
                            const StageContext& ctx);

/// generate_basic for many metadata at once; all calls share one batch.
/// `counts` is keyed by metadata id; output follows pool order.
DecodeResult decode_pool(std::span<const InstructionMetadata> pool,
                         const std::map<std::string, int>& counts, const StageContext& ctx);

/// Splits `total` as evenly as possible; the first (total mod |pool|) ids in
/// lexicographic order get one extra.
std::map<std::string, int> plan_counts(std::span<const InstructionMetadata> pool, int total);

/// Drops texts equal after whitespace collapsing and case folding. Stable;
/// the first occurrence wins.
std::vector<Instruction> dedup_instructions(std::span<const Instruction> batch);

}  // namespace synthalign
