#include "synthalign/encoder.hpp"

#include <cstdio>
#include <map>
#include <optional>
#include <numeric>

#include "synthalign/jsonl.hpp"
#include "synthalign/random.hpp"
#include "synthalign/text.hpp"

namespace synthalign {

std::string metadata_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "m%05zu", index);
  return buf;
}

EncodeResult encode_seeds(std::span<const Instruction> seeds, const StageContext& ctx) {
  require(!seeds.empty(), "encode_seeds needs at least one seed instruction");

  std::vector<GenerationRequest> requests;
  requests.reserve(seeds.size());
  for (const auto& seed : seeds) {
    requests.push_back(ctx.generation(
        ctx.prompts.render(prompts::TemplateName::encode_metadata, {{"input_instruction", seed.text}})));
  }

  std::vector<std::optional<prompts::ParsedMetadata>> parsed(seeds.size());
  std::vector<std::string> failure(seeds.size());
  std::optional<ErrorInfo> provider_failure;
  std::size_t provider_failures = 0;
  auto absorb = [&](std::size_t i, const GenerationResult& result) {
    if (!result.ok()) {
      failure[i] = result.error ? result.error->message : "generation failed";
      if (result.error) {
        ++provider_failures;
        provider_failure = result.error;
      }
      return;
    }
    try {
      parsed[i] = prompts::parse_metadata(*result.text);
    } catch (const Error& e) {
      failure[i] = e.what();
    }
  };

  auto results = ctx.backend.batch_complete(requests, Role::strong);
  std::vector<std::size_t> retry;
  for (std::size_t i = 0; i < results.size(); ++i) {
    absorb(i, results[i]);
    if (!parsed[i] && results[i].ok()) retry.push_back(i);
  }
  if (!retry.empty()) {
    std::vector<GenerationRequest> again;
    for (auto i : retry) {
      again.push_back(requests[i]);
      again.back().attempt = 1;
    }
    auto second = ctx.backend.batch_complete(again, Role::strong);
    for (std::size_t k = 0; k < retry.size(); ++k) absorb(retry[k], second[k]);
  }

  EncodeResult out;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!parsed[i]) {
      out.skipped.push_back({seeds[i].id, failure[i]});
      continue;
    }
    out.metadata.push_back(InstructionMetadata{metadata_id(out.metadata.size() + 1),
                                               parsed[i]->use_case, parsed[i]->skills,
                                               Provenance::extracted});
  }
  if (out.metadata.empty()) {
    if (provider_failure && provider_failures == seeds.size()) {
      fail(provider_failure->code, "every seed failed at the provider: " + provider_failure->message);
    }
    fail(ErrorCode::all_seeds_failed,
         "no metadata could be extracted from " + std::to_string(seeds.size()) + " seeds");
  }
  return out;
}

Blocklist parse_blocklist(std::string_view content) {
  Blocklist blocklist;
  std::size_t line_no = 0;
  for (auto line : text::split_lines(content)) {
    ++line_no;
    const auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.front() == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      fail(ErrorCode::config, "blocklist line " + std::to_string(line_no) +
                                  " is not \"use_case<TAB>skill\"");
    }
    blocklist.emplace(text::to_lower(text::trim(line.substr(0, tab))),
                      text::to_lower(text::trim(line.substr(tab + 1))));
  }
  return blocklist;
}

Blocklist load_blocklist(const std::filesystem::path& path) {
  return parse_blocklist(jsonl::read_text(path));
}

namespace {

std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b) {
  return a > UINT64_MAX - b ? UINT64_MAX : a + b;
}

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b) {
  return (a != 0 && b > UINT64_MAX / a) ? UINT64_MAX : a * b;
}

// Number of distinct (use case, 1..3 skills) combinations.
std::uint64_t combination_space(std::uint64_t use_cases, std::uint64_t skills) {
  std::uint64_t sets = 0;
  std::uint64_t choose = 1;
  for (std::uint64_t k = 1; k <= 3 && k <= skills; ++k) {
    choose = saturating_mul(choose, skills - k + 1) / k;
    sets = saturating_add(sets, choose);
  }
  return saturating_mul(use_cases, sets);
}

}  // namespace

std::vector<InstructionMetadata> augment_metadata(std::span<const InstructionMetadata> pool,
                                                  std::size_t target_count, std::uint64_t seed,
                                                  const Blocklist& blocklist,
                                                  const AugmentOptions& options) {
  require(!pool.empty(), "augment_metadata needs a non-empty pool");
  require(target_count >= pool.size(), "target_count is smaller than the pool");

  std::vector<InstructionMetadata> out(pool.begin(), pool.end());
  if (out.size() == target_count) return out;

  std::set<std::string> seen_keys;
  std::set<std::string> used_ids;
  std::vector<std::string> use_cases;
  std::vector<std::size_t> use_case_weight;
  std::map<std::string, std::size_t> use_case_index;
  std::vector<std::string> skills;
  std::set<std::string> skill_seen;
  for (const auto& m : pool) {
    seen_keys.insert(metadata_key(m));
    used_ids.insert(m.id);
    const auto key = text::to_lower(text::trim(m.use_case));
    auto [it, inserted] = use_case_index.emplace(key, use_cases.size());
    if (inserted) {
      use_cases.push_back(m.use_case);
      use_case_weight.push_back(0);
    }
    ++use_case_weight[it->second];
    for (const auto& s : m.skills) {
      auto lowered = text::to_lower(text::trim(s));
      if (skill_seen.insert(lowered).second) skills.push_back(lowered);
    }
  }
  require(!skills.empty(), "metadata pool has no skills to recombine");

  std::set<std::string> original_in_space;
  for (const auto& m : pool) {
    if (!m.skills.empty() && m.skills.size() <= 3) original_in_space.insert(metadata_key(m));
  }
  const auto in_space = static_cast<std::uint64_t>(original_in_space.size());
  const auto space = combination_space(use_cases.size(), skills.size());
  const auto needed = static_cast<std::uint64_t>(target_count - out.size());
  if (space != UINT64_MAX && space < saturating_add(needed, std::min(in_space, space))) {
    fail(ErrorCode::cannot_reach_target,
         "only " + std::to_string(space) + " use case/skill combinations exist; cannot reach " +
             std::to_string(target_count));
  }

  const std::size_t total_weight =
      std::accumulate(use_case_weight.begin(), use_case_weight.end(), std::size_t{0});
  Rng rng(seed);
  auto draw_use_case = [&]() -> std::size_t {
    if (!options.weight_by_frequency) return uniform_index(rng, use_cases.size());
    auto ticket = uniform_index(rng, total_weight);
    for (std::size_t i = 0; i < use_case_weight.size(); ++i) {
      if (ticket < use_case_weight[i]) return i;
      ticket -= use_case_weight[i];
    }
    return use_case_weight.size() - 1;
  };

  std::size_t next_index = pool.size() + 1;
  std::size_t consecutive_rejects = 0;
  std::vector<std::size_t> order(skills.size());
  while (out.size() < target_count) {
    const auto& use_case = use_cases[draw_use_case()];
    const std::size_t k = 1 + uniform_index(rng, std::min<std::size_t>(3, skills.size()));
    std::iota(order.begin(), order.end(), std::size_t{0});
    InstructionMetadata candidate;
    candidate.use_case = use_case;
    candidate.provenance = Provenance::augmented;
    for (std::size_t i = 0; i < k; ++i) {
      const auto j = i + uniform_index(rng, order.size() - i);
      std::swap(order[i], order[j]);
      candidate.skills.push_back(skills[order[i]]);
    }

    const auto uc_key = text::to_lower(text::trim(use_case));
    const bool blocked = std::any_of(candidate.skills.begin(), candidate.skills.end(),
                                     [&](const std::string& s) {
                                       return blocklist.count({uc_key, s}) == 1;
                                     });
    if (blocked || !seen_keys.insert(metadata_key(candidate)).second) {
      if (++consecutive_rejects > options.resample_cap) {
        fail(ErrorCode::cannot_reach_target,
             "gave up after " + std::to_string(options.resample_cap) +
                 " rejected draws with " + std::to_string(out.size()) + " of " +
                 std::to_string(target_count) + " metadata");
      }
      continue;
    }
    consecutive_rejects = 0;
    while (used_ids.count(metadata_id(next_index))) ++next_index;
    candidate.id = metadata_id(next_index++);
    used_ids.insert(candidate.id);
    out.push_back(std::move(candidate));
  }
  return out;
}

}  // namespace synthalign
