#include "synthalign/decoder.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

#include "synthalign/text.hpp"

namespace synthalign {

namespace {

std::string instruction_id(const std::string& metadata_id, std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "-%03zu", n);
  return metadata_id + buf;
}

struct DecodeCall {
  std::size_t metadata_index;
  int requested;
  GenerationRequest request;
};

}  // namespace

std::map<std::string, int> plan_counts(std::span<const InstructionMetadata> pool, int total) {
  require(!pool.empty(), "plan_counts needs a non-empty pool");
  require(total >= static_cast<int>(pool.size()), "total must be at least the pool size");
  std::vector<std::string> ids;
  for (const auto& m : pool) ids.push_back(m.id);
  std::sort(ids.begin(), ids.end());
  require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(), "metadata ids must be unique");

  const int n = static_cast<int>(ids.size());
  const int base = total / n;
  const int extra = total % n;
  std::map<std::string, int> counts;
  for (int i = 0; i < n; ++i) counts[ids[static_cast<std::size_t>(i)]] = base + (i < extra ? 1 : 0);
  return counts;
}

DecodeResult decode_pool(std::span<const InstructionMetadata> pool,
                         const std::map<std::string, int>& counts, const StageContext& ctx) {
  std::vector<DecodeCall> calls;
  for (std::size_t m = 0; m < pool.size(); ++m) {
    const auto& meta = pool[m];
    auto it = counts.find(meta.id);
    const int count = it == counts.end() ? 0 : it->second;
    require(count >= 0, "instruction count must be non-negative");
    std::uint32_t sample = 0;
    for (int remaining = count; remaining > 0; remaining -= kMaxInstructionsPerCall) {
      const int n = std::min(remaining, kMaxInstructionsPerCall);
      auto request = ctx.generation(ctx.prompts.render(
          prompts::TemplateName::decode_basic, {{"number_of_instructions", std::to_string(n)},
                                                {"use_case", meta.use_case},
                                                {"skills", text::join(meta.skills, ", ")}}));
      request.sample_index = sample++;
      calls.push_back({m, n, std::move(request)});
    }
  }

  std::vector<GenerationRequest> requests;
  for (const auto& c : calls) requests.push_back(c.request);
  auto results = ctx.backend.batch_complete(requests, Role::strong);

  std::vector<std::optional<prompts::ParsedList>> parsed(calls.size());
  std::vector<std::string> failure(calls.size());
  auto absorb = [&](std::size_t i, const GenerationResult& r) {
    if (!r.ok()) {
      failure[i] = r.error ? r.error->message : "generation failed";
      return;
    }
    try {
      parsed[i] = prompts::parse_numbered_list(*r.text, static_cast<std::size_t>(calls[i].requested));
    } catch (const Error& e) {
      failure[i] = e.what();
    }
  };
  std::vector<std::size_t> retry;
  for (std::size_t i = 0; i < calls.size(); ++i) {
    absorb(i, results[i]);
    if (!parsed[i] && results[i].ok()) retry.push_back(i);
  }
  if (!retry.empty()) {
    std::vector<GenerationRequest> again;
    for (auto i : retry) {
      again.push_back(calls[i].request);
      again.back().attempt = 1;
    }
    auto second = ctx.backend.batch_complete(again, Role::strong);
    for (std::size_t k = 0; k < retry.size(); ++k) absorb(retry[k], second[k]);
  }

  DecodeResult out;
  std::vector<std::size_t> produced(pool.size(), 0);
  for (std::size_t i = 0; i < calls.size(); ++i) {
    const auto& meta = pool[calls[i].metadata_index];
    const auto call_label = meta.id + "#" + std::to_string(calls[i].request.sample_index);
    if (!parsed[i]) {
      out.log.push_back({call_label, "unparseable decode output: " + failure[i]});
      continue;
    }
    auto items = std::move(parsed[i]->items);
    if (parsed[i]->count_mismatch) {
      out.log.push_back({call_label, "asked for " + std::to_string(calls[i].requested) +
                                         " instructions, got " + std::to_string(items.size())});
    }
    if (items.size() > static_cast<std::size_t>(calls[i].requested)) {
      items.resize(static_cast<std::size_t>(calls[i].requested));
    }
    for (auto& text : items) {
      Instruction instr;
      instr.id = instruction_id(meta.id, ++produced[calls[i].metadata_index]);
      instr.lineage_id = instr.id;
      instr.text = std::move(text);
      instr.origin = Origin::decoded;
      instr.metadata_id = meta.id;
      out.instructions.push_back(std::move(instr));
    }
  }
  // Calls were issued metadata by metadata, so output already follows pool order.
  return out;
}

DecodeResult generate_basic(const InstructionMetadata& metadata, int count,
                            const StageContext& ctx) {
  require(count >= 1, "generate_basic needs count >= 1");
  return decode_pool(std::span(&metadata, 1), {{metadata.id, count}}, ctx);
}

std::vector<Instruction> dedup_instructions(std::span<const Instruction> batch) {
  std::vector<Instruction> out;
  std::set<std::string> seen;
  for (const auto& instr : batch) {
    if (seen.insert(text::normalize_for_dedup(instr.text)).second) out.push_back(instr);
  }
  return out;
}

}  // namespace synthalign
