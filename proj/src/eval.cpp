#include "synthalign/eval.hpp"

#include <cstdio>

#include "synthalign/error.hpp"

namespace synthalign {

std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::win: return "win";
    case Outcome::tie: return "tie";
    case Outcome::loss: return "loss";
  }
  return "?";
}

Outcome decide_outcome(double target_forward, double reference_forward, double target_reversed,
                       double reference_reversed) {
  if (target_forward > reference_forward && target_reversed > reference_reversed) {
    return Outcome::win;
  }
  if (reference_forward > target_forward && reference_reversed > target_reversed) {
    return Outcome::loss;
  }
  return Outcome::tie;
}

std::string CrrReport::percent() const {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", crr * 100.0);
  return buf;
}

std::string CrrReport::table() const {
  return "| Win | Tie | Lose | CRR |\n| " + std::to_string(wins) + " | " + std::to_string(ties) +
         " | " + std::to_string(losses) + " | " + percent() + " |\n";
}

nlohmann::json to_json(const CrrReport& r) {
  return nlohmann::json{{"wins", r.wins},       {"ties", r.ties},   {"losses", r.losses},
                        {"total", r.total},     {"invalid", r.invalid}, {"crr", r.crr},
                        {"crr_percent", r.percent()}};
}

CrrReport compute_crr(std::size_t wins, std::size_t ties, std::size_t losses) {
  CrrReport r;
  r.wins = wins;
  r.ties = ties;
  r.losses = losses;
  r.total = wins + ties + losses;
  if (r.total == 0) fail(ErrorCode::no_data, "no valid comparisons to score");
  r.crr = static_cast<double>(wins + ties) / static_cast<double>(r.total);
  return r;
}

CrrReport compute_crr(std::span<const Comparison> comparisons) {
  std::size_t w = 0, t = 0, l = 0, invalid = 0;
  for (const auto& c : comparisons) {
    if (!c.valid) {
      ++invalid;
      continue;
    }
    switch (c.outcome) {
      case Outcome::win: ++w; break;
      case Outcome::tie: ++t; break;
      case Outcome::loss: ++l; break;
    }
  }
  auto r = compute_crr(w, t, l);
  r.invalid = invalid;
  return r;
}

namespace {

struct PairJob {
  std::string id;
  std::string instruction;
  std::string target;
  std::string reference;
};

GenerationRequest judge_request(const StageContext& ctx, std::string_view question,
                                std::string_view first, std::string_view second) {
  return ctx.judging(ctx.prompts.render(prompts::TemplateName::judge,
                                        {{"question", std::string(question)},
                                         {"answer_1", std::string(first)},
                                         {"answer_2", std::string(second)},
                                         {"score_scale", std::to_string(ctx.score_scale)}}));
}

std::vector<Comparison> judge_all(const std::vector<PairJob>& jobs, const StageContext& ctx) {
  std::vector<GenerationRequest> requests;
  for (const auto& j : jobs) {
    requests.push_back(judge_request(ctx, j.instruction, j.target, j.reference));
    requests.push_back(judge_request(ctx, j.instruction, j.reference, j.target));
  }
  auto results = ctx.backend.batch_complete(requests, Role::judge);
  std::vector<std::optional<prompts::ParsedScores>> parsed(requests.size());
  std::vector<std::string> failure(requests.size());
  std::vector<std::size_t> reprompt;
  auto absorb = [&](std::size_t slot, const GenerationResult& r) {
    if (!r.ok()) {
      failure[slot] = r.error ? r.error->message : "generation failed";
      return false;
    }
    try {
      parsed[slot] = prompts::parse_scores(*r.text, ctx.score_scale);
    } catch (const Error& e) {
      failure[slot] = e.what();
    }
    return true;
  };
  for (std::size_t s = 0; s < results.size(); ++s) {
    if (absorb(s, results[s]) && !parsed[s]) reprompt.push_back(s);
  }
  if (!reprompt.empty()) {
    std::vector<GenerationRequest> again;
    for (auto s : reprompt) {
      again.push_back(requests[s]);
      again.back().attempt = 1;
    }
    auto second = ctx.backend.batch_complete(again, Role::judge);
    for (std::size_t k = 0; k < reprompt.size(); ++k) absorb(reprompt[k], second[k]);
  }

  std::vector<Comparison> out(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    auto& c = out[i];
    c.instruction_id = jobs[i].id;
    c.target_response = jobs[i].target;
    c.reference_response = jobs[i].reference;
    const auto fwd = 2 * i;
    const auto rev = fwd + 1;
    if (!parsed[fwd] || !parsed[rev]) {
      c.valid = false;
      c.invalid_reason = failure[parsed[fwd] ? rev : fwd];
      continue;
    }
    c.forward = *parsed[fwd];
    c.reversed = *parsed[rev];
    // Forward shows the target first, reversed shows the reference first.
    c.outcome = decide_outcome(c.forward.score_a, c.forward.score_b, c.reversed.score_b,
                               c.reversed.score_a);
  }
  return out;
}

}  // namespace

Comparison judge_pair(std::string_view instruction, std::string_view target_response,
                      std::string_view reference_response, const StageContext& ctx,
                      std::string instruction_id) {
  std::vector<PairJob> jobs{{std::move(instruction_id), std::string(instruction),
                             std::string(target_response), std::string(reference_response)}};
  return std::move(judge_all(jobs, ctx).front());
}

EvalItem eval_item_from_json(const nlohmann::json& j, std::size_t index) {
  if (!j.is_object()) fail(ErrorCode::config, "test item " + std::to_string(index) + " is not an object");
  EvalItem item;
  const char* text_key = j.contains("instruction") ? "instruction" : "question";
  if (!j.contains(text_key) || !j[text_key].is_string()) {
    fail(ErrorCode::config, "test item " + std::to_string(index) + " has no instruction");
  }
  item.instruction = j[text_key].get<std::string>();
  item.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump())
                             : std::to_string(index);
  if (j.contains("target_response")) item.target_response = j["target_response"].get<std::string>();
  if (j.contains("reference_response")) {
    item.reference_response = j["reference_response"].get<std::string>();
  }
  return item;
}

EvaluationResult evaluate_model(std::span<const EvalItem> test_set, const StageContext& ctx) {
  if (test_set.empty()) fail(ErrorCode::no_data, "test set is empty");
  std::vector<PairJob> jobs(test_set.size());
  std::vector<std::string> invalid(test_set.size());

  auto fill = [&](Role role, bool want_target) {
    std::vector<std::size_t> slots;
    std::vector<GenerationRequest> requests;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      const auto& given = want_target ? test_set[i].target_response : test_set[i].reference_response;
      auto& dest = want_target ? jobs[i].target : jobs[i].reference;
      if (given) {
        dest = *given;
        continue;
      }
      slots.push_back(i);
      requests.push_back(ctx.generation(test_set[i].instruction));
    }
    auto results = ctx.backend.batch_complete(requests, role);
    for (std::size_t k = 0; k < slots.size(); ++k) {
      if (results[k].ok()) {
        (want_target ? jobs[slots[k]].target : jobs[slots[k]].reference) = *results[k].text;
      } else if (invalid[slots[k]].empty()) {
        invalid[slots[k]] = results[k].error ? results[k].error->message : "generation failed";
      }
    }
  };
  fill(Role::target, true);
  fill(Role::strong, false);

  std::vector<PairJob> ready;
  std::vector<std::size_t> ready_index;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    jobs[i].id = test_set[i].id;
    jobs[i].instruction = test_set[i].instruction;
    if (invalid[i].empty()) {
      ready.push_back(jobs[i]);
      ready_index.push_back(i);
    }
  }
  auto judged = judge_all(ready, ctx);

  EvaluationResult result;
  result.comparisons.resize(test_set.size());
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    if (!invalid[i].empty()) {
      auto& c = result.comparisons[i];
      c.instruction_id = jobs[i].id;
      c.valid = false;
      c.invalid_reason = invalid[i];
    }
  }
  for (std::size_t k = 0; k < ready_index.size(); ++k) {
    result.comparisons[ready_index[k]] = std::move(judged[k]);
  }
  result.report = compute_crr(result.comparisons);
  return result;
}

}  // namespace synthalign
