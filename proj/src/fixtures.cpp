#include "synthalign/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "synthalign/decoder.hpp"
#include "synthalign/encoder.hpp"
#include "synthalign/jsonl.hpp"
#include "synthalign/prompts.hpp"
#include "synthalign/text.hpp"

namespace synthalign::fixtures {

namespace fs = std::filesystem;

TranscriptBuilder& TranscriptBuilder::add_rule(TranscriptRule rule) {
  if (std::find(matchers_.begin(), matchers_.end(), rule.match) != matchers_.end()) {
    fail(ErrorCode::precondition, "duplicate transcript matcher: " + rule.match);
  }
  matchers_.push_back(rule.match);
  rules_.push_back(std::move(rule));
  return *this;
}

TranscriptBuilder& TranscriptBuilder::add(std::string match, std::string response) {
  TranscriptRule rule;
  rule.match = std::move(match);
  rule.responses.push_back(std::move(response));
  return add_rule(std::move(rule));
}

TranscriptBuilder& TranscriptBuilder::add_exact(std::string_view prompt, std::string response) {
  return add(hash_matcher(prompt), std::move(response));
}

TranscriptBuilder& TranscriptBuilder::add_responses(std::string match,
                                                    std::vector<std::string> responses) {
  TranscriptRule rule;
  rule.match = std::move(match);
  rule.responses = std::move(responses);
  return add_rule(std::move(rule));
}

void TranscriptBuilder::write(const fs::path& path) const {
  std::vector<nlohmann::json> rows(rules_.begin(), rules_.end());
  jsonl::write(path, rows);
}

std::shared_ptr<ScriptedProvider> TranscriptBuilder::provider(std::string name) const {
  return std::make_shared<ScriptedProvider>(rules_, std::move(name));
}

void build_transcript(const std::vector<std::pair<std::string, std::string>>& script,
                      const fs::path& path) {
  TranscriptBuilder builder;
  for (const auto& [match, response] : script) builder.add(match, response);
  builder.write(path);
}

const std::vector<CrrTableRow>& published_crr_table() {
  static const std::vector<CrrTableRow> rows{
      {"LLaMA-7B", "Self-Instruct", 17, 140, 61, "72.02%"},
      {"LLaMA-7B", "Alpagasus", 17, 147, 54, "75.23%"},
      {"LLaMA-7B", "Tree-Instruct", 23, 141, 54, "75.23%"},
      {"LLaMA-7B", "WizardLM", 19, 143, 56, "74.31%"},
      {"LLaMA-7B", "WizardLM+", 19, 146, 53, "75.69%"},
      {"LLaMA-7B", "metadata pipeline", 29, 145, 44, "79.82%"},
      {"LLaMA-13B", "Self-Instruct", 29, 136, 53, "75.69%"},
      {"LLaMA-13B", "Alpagasus", 26, 148, 44, "79.82%"},
      {"LLaMA-13B", "Tree-Instruct", 26, 154, 38, "82.57%"},
      {"LLaMA-13B", "WizardLM", 30, 149, 39, "82.11%"},
      {"LLaMA-13B", "WizardLM+", 31, 153, 34, "84.40%"},
      {"LLaMA-13B", "metadata pipeline", 35, 154, 29, "86.70%"},
  };
  return rows;
}

const std::vector<MetadataExample>& metadata_examples() {
  static const std::vector<MetadataExample> examples{
      {"As a sports commentator, describe the winning play in the final seconds of a "
       "championship game.",
       "Use case", "creative writing", {"role-play", "sports"}},
      {"How to read a large file (> 2T) using python?", "Task", "code generation", {"python"}},
      {"The method section of your paper is too brief and does not explain how your proposed "
       "model works in detail. How can you provide more details of the hierarchical encoder and "
       "the cascaded selectors, such as their architectures, inputs, outputs, and parameters?",
       "Task", "general knowledge question answering", {"academic writing", "machine learning"}},
  };
  return examples;
}

std::vector<int> gap_schedule(std::size_t n, const std::vector<double>& fractions) {
  double sum = 0;
  for (double f : fractions) {
    require(f >= 0, "fractions must be non-negative");
    sum += f;
  }
  require(sum <= 1.0 + 1e-9, "fractions must not exceed 1 in total");
  std::vector<std::size_t> counts(fractions.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t r = 0; r < fractions.size(); ++r) {
    const double exact = fractions[r] * static_cast<double>(n);
    counts[r] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[r];
    remainders.emplace_back(exact - static_cast<double>(counts[r]), r);
  }
  const auto wanted = static_cast<std::size_t>(std::llround(sum * static_cast<double>(n)));
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < wanted && k < remainders.size(); ++k, ++assigned) {
    ++counts[remainders[k].second];
  }
  std::vector<int> out;
  for (std::size_t r = 0; r < counts.size(); ++r) {
    out.insert(out.end(), counts[r], static_cast<int>(r + 1));
  }
  out.resize(n, 0);
  return out;
}

std::string scripted_instruction_text(const InstructionMetadata& metadata, std::size_t ordinal,
                                      int version) {
  char id[16];
  std::snprintf(id, sizeof id, "%03zu", ordinal);
  return "Task " + metadata.id + "-" + id + " in " + metadata.use_case + " [v" +
         std::to_string(version) + "]";
}

namespace {

std::string scorer_prompt(const std::string& question, const std::string& first,
                          const std::string& second) {
  return prompts::render(prompts::TemplateName::cf_scorer, {{"question", question},
                                                            {"answer_1", first},
                                                            {"answer_2", second},
                                                            {"score_scale", "10"}});
}

}  // namespace

ScriptedRun build_scripted_run(const ScriptedRunSpec& spec, const fs::path& dir) {
  require(spec.seeds >= 1, "need at least one seed");
  fs::create_directories(dir);
  TranscriptBuilder strong, target, judge;

  // Seeds and their extracted metadata: seed k gets use case "domain k" and
  // two skills shared with its neighbour, so augmentation has room to grow.
  std::vector<InstructionMetadata> extracted;
  std::string seeds_text;
  for (std::size_t k = 1; k <= spec.seeds; ++k) {
    const auto seed_text = "Seed instruction number " + std::to_string(k) + " for the fixture run.";
    seeds_text += seed_text + "\n";
    InstructionMetadata m;
    m.id = metadata_id(k);
    m.use_case = "domain " + std::to_string(k);
    m.skills = {"skill " + std::to_string(k), "skill " + std::to_string(k % spec.seeds + 1)};
    strong.add_exact(
        prompts::render(prompts::TemplateName::encode_metadata, {{"input_instruction", seed_text}}),
        prompts::format_metadata(m.use_case, m.skills, k % 2 ? "Use case" : "Task"));
    extracted.push_back(std::move(m));
  }

  auto pool = augment_metadata(extracted, static_cast<std::size_t>(spec.metadata_target),
                               text::derive_seed(spec.seed, "augment"));
  const auto counts = plan_counts(pool, spec.total_instructions);

  std::size_t position = 0;
  std::size_t accepted_seen = 0;
  for (const auto& meta : pool) {
    const int count = counts.at(meta.id);
    const auto skills = text::join(meta.skills, ", ");
    std::vector<std::string> texts;
    for (int i = 1; i <= count; ++i) {
      texts.push_back(scripted_instruction_text(meta, static_cast<std::size_t>(i), 0));
    }
    // One rule per distinct prompt; alternatives are indexed by call number.
    std::map<int, std::vector<std::string>> by_size;
    const int calls = (count + kMaxInstructionsPerCall - 1) / kMaxInstructionsPerCall;
    for (int c = 0; c < calls; ++c) {
      const int begin = c * kMaxInstructionsPerCall;
      const int n = std::min(kMaxInstructionsPerCall, count - begin);
      std::vector<std::string> items(texts.begin() + begin, texts.begin() + begin + n);
      auto& alternatives = by_size[n];
      alternatives.resize(static_cast<std::size_t>(calls));
      alternatives[static_cast<std::size_t>(c)] = prompts::format_numbered_list(items);
    }
    for (auto& [n, alternatives] : by_size) {
      for (auto& a : alternatives) {
        if (a.empty()) a = "unused";
      }
      strong.add_responses(
          hash_matcher(prompts::render(prompts::TemplateName::decode_basic,
                                       {{"number_of_instructions", std::to_string(n)},
                                        {"use_case", meta.use_case},
                                        {"skills", skills}})),
          std::move(alternatives));
    }

    std::vector<std::string> rubrics, actions;
    for (int r = 1; r <= spec.rubric_count; ++r) {
      rubrics.push_back("Rubric " + std::to_string(r) + " for " + meta.id);
      actions.push_back("Refinement " + std::to_string(r) + " for " + meta.id);
    }
    strong.add_exact(prompts::render(prompts::TemplateName::rubric_action,
                                     {{"number_of_rubrics", std::to_string(spec.rubric_count)},
                                      {"use_case", meta.use_case},
                                      {"skills", skills}}),
                     prompts::format_rubrics_actions(rubrics, actions));

    for (int i = 1; i <= count; ++i, ++position) {
      const int accept = position < spec.accept_round.size() ? spec.accept_round[position] : 0;
      bool target_wins = false;
      if (accept > 0) {
        ++accepted_seen;
        target_wins = spec.target_win_every > 0 && accepted_seen % spec.target_win_every == 0;
      }
      const int last_version = accept > 0 ? std::min(accept, spec.max_iterations) - 1
                                          : spec.max_iterations - 1;
      for (int v = 0; v <= last_version; ++v) {
        const auto t = scripted_instruction_text(meta, static_cast<std::size_t>(i), v);
        if (v < last_version) {
          strong.add("Input instruction: " + t + "\n",
                     scripted_instruction_text(meta, static_cast<std::size_t>(i), v + 1));
        }
        const auto s_answer = "Strong answer for " + t;
        const auto t_answer = "Target answer for " + t;
        strong.add_exact(t, s_answer);
        target.add_exact(t, t_answer);
        std::string strong_first = "6 6", strong_second = "6 6";
        if (accept > 0 && v == last_version) {
          strong_first = target_wins ? "3 8" : "8 3";
          strong_second = target_wins ? "8 3" : "3 8";
        }
        judge.add_exact(scorer_prompt(t, s_answer, t_answer), strong_first);
        judge.add_exact(scorer_prompt(t, t_answer, s_answer), strong_second);
      }
    }
  }

  jsonl::write_text_atomic(dir / "seeds.txt", seeds_text);
  strong.write(dir / "strong.jsonl");
  target.write(dir / "target.jsonl");
  judge.write(dir / "judge.jsonl");

  ScriptedRun out;
  out.metadata = pool;
  out.decoded = static_cast<std::size_t>(spec.total_instructions);
  auto& c = out.config;
  c.total_instructions = spec.total_instructions;
  c.metadata_target = spec.metadata_target;
  c.max_iterations = spec.max_iterations;
  c.rubric_count = spec.rubric_count;
  c.seed = spec.seed;
  c.seeds_path = "seeds.txt";
  c.retry_base_delay_ms = 0;
  c.providers = {{"strong", {{"kind", "scripted"}, {"model_id", "strong"}, {"transcript", "strong.jsonl"}}},
                 {"target", {{"kind", "scripted"}, {"model_id", "target"}, {"transcript", "target.jsonl"}}},
                 {"judge", {{"kind", "scripted"}, {"model_id", "judge"}, {"transcript", "judge.jsonl"}}}};
  out.config_path = dir / "config.json";
  jsonl::write_json(out.config_path, c);
  out.config = load_run_config(out.config_path);
  return out;
}

}  // namespace synthalign::fixtures
