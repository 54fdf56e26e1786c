#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// Small string helpers shared by the parsers and the pipeline.
namespace synthalign::text {

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);
bool contains_ci(std::string_view haystack, std::string_view needle);

std::vector<std::string_view> split_lines(std::string_view s);
std::vector<std::string> split(std::string_view s, char delim);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Collapses whitespace runs to one space, trims, and ASCII-lowercases.
std::string normalize_for_dedup(std::string_view s);

/// Lowercased alphanumeric word tokens.
std::vector<std::string> words(std::string_view s);

/// Number of whitespace-separated tokens; the scripted provider's token count.
std::size_t count_words(std::string_view s);

std::string sha256_hex(std::string_view data);

/// 64-bit seed derived from a base seed and a label (stable across runs).
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

}  // namespace synthalign::text
