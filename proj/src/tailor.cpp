#include "synthalign/tailor.hpp"

#include <algorithm>
#include <set>

#include "synthalign/text.hpp"

namespace synthalign {

void to_json(nlohmann::json& j, const RubricActionSet& s) {
  j = nlohmann::json{{"metadata_id", s.metadata_id}, {"rubrics", s.rubrics}, {"actions", s.actions}};
}

void from_json(const nlohmann::json& j, RubricActionSet& s) {
  s.metadata_id = j.at("metadata_id").get<std::string>();
  s.rubrics = j.at("rubrics").get<std::vector<std::string>>();
  s.actions = j.at("actions").get<std::vector<std::string>>();
}

namespace {

struct RubricAttempt {
  std::optional<RubricActionSet> set;
  std::string failure;
};

std::vector<RubricAttempt> generate_rubric_sets(std::span<const InstructionMetadata* const> metadata,
                                                const StageContext& ctx, int k) {
  require(k >= 1, "rubric count must be at least 1");
  std::vector<GenerationRequest> requests;
  for (const auto* m : metadata) {
    requests.push_back(ctx.generation(ctx.prompts.render(
        prompts::TemplateName::rubric_action, {{"number_of_rubrics", std::to_string(k)},
                                               {"use_case", m->use_case},
                                               {"skills", text::join(m->skills, ", ")}})));
  }
  std::vector<RubricAttempt> out(metadata.size());
  auto absorb = [&](std::size_t i, const GenerationResult& r) {
    if (!r.ok()) {
      out[i].failure = r.error ? r.error->message : "generation failed";
      return;
    }
    try {
      auto parsed = prompts::parse_rubrics_actions(*r.text);
      const auto want = static_cast<std::size_t>(k);
      if (parsed.rubrics.size() != want || parsed.actions.size() != want) {
        out[i].failure = "expected " + std::to_string(k) + " rubrics and actions, got " +
                         std::to_string(parsed.rubrics.size()) + " and " +
                         std::to_string(parsed.actions.size());
        return;
      }
      out[i].set = RubricActionSet{metadata[i]->id, std::move(parsed.rubrics),
                                   std::move(parsed.actions)};
    } catch (const Error& e) {
      out[i].failure = e.what();
    }
  };
  auto results = ctx.backend.batch_complete(requests, Role::strong);
  std::vector<std::size_t> retry;
  for (std::size_t i = 0; i < results.size(); ++i) {
    absorb(i, results[i]);
    if (!out[i].set && results[i].ok()) retry.push_back(i);
  }
  if (!retry.empty()) {
    std::vector<GenerationRequest> again;
    for (auto i : retry) {
      again.push_back(requests[i]);
      again.back().attempt = 1;
    }
    auto second = ctx.backend.batch_complete(again, Role::strong);
    for (std::size_t n = 0; n < retry.size(); ++n) absorb(retry[n], second[n]);
  }
  return out;
}

constexpr std::string_view kImprovedLabel = "improved instruction:";

}  // namespace

RubricActionSet generate_rubrics(const InstructionMetadata& metadata, const StageContext& ctx,
                                 int k) {
  const InstructionMetadata* one = &metadata;
  auto attempt = generate_rubric_sets(std::span(&one, 1), ctx, k);
  if (!attempt[0].set) {
    fail(ErrorCode::unparseable_output,
         "rubrics for " + metadata.id + " unusable: " + attempt[0].failure);
  }
  return std::move(*attempt[0].set);
}

void RubricBook::ensure(std::span<const InstructionMetadata> metadata, const StageContext& ctx) {
  std::lock_guard generation_lock(generation_mutex_);
  std::vector<const InstructionMetadata*> missing;
  {
    std::lock_guard lock(mutex_);
    std::set<std::string> queued;
    for (const auto& m : metadata) {
      if (sets_.count(m.id) || untailorable_.count(m.id) || !queued.insert(m.id).second) continue;
      missing.push_back(&m);
    }
  }
  if (missing.empty()) return;
  auto attempts = generate_rubric_sets(missing, ctx, k_);
  std::lock_guard lock(mutex_);
  generation_calls_ += missing.size();
  for (std::size_t i = 0; i < missing.size(); ++i) {
    if (attempts[i].set) {
      sets_.emplace(missing[i]->id, std::move(*attempts[i].set));
    } else {
      untailorable_.insert(missing[i]->id);
    }
  }
}

const RubricActionSet& RubricBook::get_or_generate(const InstructionMetadata& metadata,
                                                   const StageContext& ctx) {
  ensure(std::span(&metadata, 1), ctx);
  std::lock_guard lock(mutex_);
  auto it = sets_.find(metadata.id);
  if (it == sets_.end()) {
    fail(ErrorCode::unparseable_output, "metadata " + metadata.id + " is untailorable");
  }
  return it->second;
}

std::optional<RubricActionSet> RubricBook::find(const std::string& metadata_id) const {
  std::lock_guard lock(mutex_);
  auto it = sets_.find(metadata_id);
  if (it == sets_.end()) return std::nullopt;
  return it->second;
}

bool RubricBook::untailorable(const std::string& metadata_id) const {
  std::lock_guard lock(mutex_);
  return untailorable_.count(metadata_id) == 1;
}

std::vector<RubricActionSet> RubricBook::sets() const {
  std::lock_guard lock(mutex_);
  std::vector<RubricActionSet> out;
  for (const auto& [id, s] : sets_) out.push_back(s);
  return out;
}

std::vector<std::string> RubricBook::untailorable_ids() const {
  std::lock_guard lock(mutex_);
  return {untailorable_.begin(), untailorable_.end()};
}

void RubricBook::restore(std::vector<RubricActionSet> sets, std::vector<std::string> untailorable) {
  std::lock_guard lock(mutex_);
  for (auto& s : sets) {
    auto id = s.metadata_id;
    sets_.insert_or_assign(std::move(id), std::move(s));
  }
  untailorable_.insert(untailorable.begin(), untailorable.end());
}

std::size_t RubricBook::generation_calls() const {
  std::lock_guard lock(mutex_);
  return generation_calls_;
}

// ---------------------------------------------------------------------------

std::uint64_t improvement_seed(std::uint64_t run_seed, const Instruction& instr,
                               std::uint32_t attempt) {
  const auto& lineage = instr.lineage_id.empty() ? instr.id : instr.lineage_id;
  return text::derive_seed(run_seed, lineage + "/" + std::to_string(instr.iteration) + "/" +
                                         std::to_string(attempt));
}

std::size_t pick_action(const Instruction& instr, const RubricActionSet& actions, Rng& rng) {
  require(!actions.actions.empty(), "rubric set " + actions.metadata_id + " has no actions");
  std::vector<std::size_t> fresh;
  for (std::size_t i = 0; i < actions.actions.size(); ++i) {
    const auto& a = actions.actions[i];
    if (std::find(instr.action_history.begin(), instr.action_history.end(), a) ==
        instr.action_history.end()) {
      fresh.push_back(i);
    }
  }
  if (fresh.empty()) return uniform_index(rng, actions.actions.size());
  return fresh[uniform_index(rng, fresh.size())];
}

bool shares_word_span(std::string_view text_in, std::string_view action, std::size_t span) {
  const auto action_words = text::words(action);
  const auto text_words = text::words(text_in);
  if (span == 0 || action_words.size() < span || text_words.size() < span) return false;
  std::set<std::vector<std::string>> grams;
  for (std::size_t i = 0; i + span <= action_words.size(); ++i) {
    grams.emplace(action_words.begin() + static_cast<long>(i),
                  action_words.begin() + static_cast<long>(i + span));
  }
  for (std::size_t i = 0; i + span <= text_words.size(); ++i) {
    if (grams.count({text_words.begin() + static_cast<long>(i),
                     text_words.begin() + static_cast<long>(i + span)})) {
      return true;
    }
  }
  return false;
}

std::vector<ImproveResult> improve_batch(std::span<const ImproveJob> jobs, const StageContext& ctx,
                                         int max_iterations, std::uint32_t attempt) {
  std::vector<ImproveResult> out(jobs.size());
  std::vector<GenerationRequest> requests;
  requests.reserve(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& instr = *jobs[i].instruction;
    require(instr.iteration + 1 < max_iterations,
            "instruction " + instr.id + " is at iteration " + std::to_string(instr.iteration) +
                "; the limit of " + std::to_string(max_iterations) + " iterations is reached");
    Rng rng(jobs[i].rng_seed);
    out[i].action = jobs[i].actions->actions[pick_action(instr, *jobs[i].actions, rng)];
    auto request = ctx.generation(ctx.prompts.render(
        prompts::TemplateName::improve_instruction,
        {{"action", out[i].action}, {"input_instruction", instr.text}}));
    request.attempt = attempt;
    requests.push_back(std::move(request));
  }
  auto results = ctx.backend.batch_complete(requests, Role::strong);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& input = *jobs[i].instruction;
    auto& res = out[i];
    res.instruction = input;
    if (!results[i].ok()) {
      res.failed = true;
      res.failure_reason = results[i].error ? results[i].error->message : "generation failed";
      continue;
    }
    auto improved = text::trim(*results[i].text);
    if (text::starts_with_ci(improved, kImprovedLabel)) {
      improved = text::trim(improved.substr(kImprovedLabel.size()));
    }
    if (improved.empty()) {
      res.failed = true;
      res.failure_reason = "improver returned nothing";
      continue;
    }
    if (improved == text::trim(input.text)) {
      res.failed = true;
      res.failure_reason = "improver echoed the input";
      continue;
    }
    Instruction next;
    next.lineage_id = input.lineage_id.empty() ? input.id : input.lineage_id;
    next.iteration = input.iteration + 1;
    next.id = next.lineage_id + "/" + std::to_string(next.iteration);
    next.text = std::string(improved);
    next.origin = Origin::improved;
    next.metadata_id = input.metadata_id;
    next.action_history = input.action_history;
    next.action_history.push_back(res.action);
    res.copied_action_span = shares_word_span(next.text, res.action);
    res.instruction = std::move(next);
  }
  return out;
}

ImproveResult improve_instruction(const Instruction& instr, const RubricActionSet& actions,
                                  std::uint64_t rng_seed, const StageContext& ctx,
                                  int max_iterations, std::uint32_t attempt) {
  ImproveJob job{&instr, &actions, rng_seed};
  return std::move(improve_batch(std::span(&job, 1), ctx, max_iterations, attempt).front());
}

}  // namespace synthalign
