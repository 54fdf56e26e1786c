#include "synthalign/filter.hpp"

#include <cmath>

#include "synthalign/error.hpp"

namespace synthalign {

std::string_view to_string(Route r) {
  switch (r) {
    case Route::accept_strong: return "accept_strong";
    case Route::accept_target: return "accept_target";
    case Route::improve_further: return "improve_further";
  }
  return "?";
}

std::string_view to_string(ResponseSource s) {
  return s == ResponseSource::strong ? "strong" : "target";
}

ResponseSource response_source_from_string(std::string_view s) {
  if (s == "strong") return ResponseSource::strong;
  if (s == "target") return ResponseSource::target;
  fail(ErrorCode::config, "unknown response source: " + std::string(s));
}

DuelScores combine_scores(const prompts::ParsedScores& strong_first,
                          const prompts::ParsedScores& strong_second) {
  DuelScores s{};
  s.avg_strong = (strong_first.score_a + strong_second.score_b) / 2.0;
  s.avg_target = (strong_first.score_b + strong_second.score_a) / 2.0;
  s.gap = s.avg_strong - s.avg_target;
  return s;
}

Route route(double gap, double theta) {
  require(!std::isnan(theta) && theta > 0, "theta must be a positive number");
  require(!std::isnan(gap), "gap is NaN");
  if (gap > theta) return Route::accept_strong;
  if (gap < -theta) return Route::accept_target;
  return Route::improve_further;
}

bool is_consistent(const CurationRecord& record, double theta) {
  if (record.admission == Admission::kept_at_max) {
    return record.response_source == ResponseSource::strong;
  }
  if (record.response_source == ResponseSource::strong) return record.gap > theta;
  return record.gap < -theta;
}

nlohmann::json to_dataset_row(const CurationRecord& record) {
  nlohmann::json row{{"id", record.instruction.id},
                     {"instruction", record.instruction.text},
                     {"response", record.response},
                     {"response_source", to_string(record.response_source)},
                     {"gap", record.gap},
                     {"iteration", record.accepted_at_iteration},
                     {"action_history", record.instruction.action_history}};
  row["metadata_id"] = record.instruction.metadata_id ? nlohmann::json(*record.instruction.metadata_id)
                                                      : nlohmann::json(nullptr);
  if (record.admission == Admission::kept_at_max) row["kept_at_max"] = true;
  return row;
}

void to_json(nlohmann::json& j, const CurationRecord& r) {
  j = nlohmann::json{{"instruction", r.instruction},
                     {"response", r.response},
                     {"response_source", to_string(r.response_source)},
                     {"gap", r.gap},
                     {"accepted_at_iteration", r.accepted_at_iteration},
                     {"admission", r.admission == Admission::gap ? "gap" : "kept_at_max"}};
}

void from_json(const nlohmann::json& j, CurationRecord& r) {
  r.instruction = j.at("instruction").get<Instruction>();
  r.response = j.at("response").get<std::string>();
  r.response_source = response_source_from_string(j.at("response_source").get<std::string>());
  r.gap = j.at("gap").get<double>();
  r.accepted_at_iteration = j.at("accepted_at_iteration").get<int>();
  r.admission = j.value("admission", std::string("gap")) == "kept_at_max" ? Admission::kept_at_max
                                                                          : Admission::gap;
}

void to_json(nlohmann::json& j, const ScoredDuel& d) {
  j = nlohmann::json{{"instruction_id", d.instruction_id},
                     {"strong_first", {d.strong_first.score_a, d.strong_first.score_b}},
                     {"strong_second", {d.strong_second.score_a, d.strong_second.score_b}},
                     {"avg_strong", d.avg_strong},
                     {"avg_target", d.avg_target},
                     {"gap", d.gap}};
}

namespace {

std::string error_text(const GenerationResult& r) {
  return r.error ? r.error->message : "generation failed";
}

GenerationRequest scorer_request(const StageContext& ctx, std::string_view question,
                                 std::string_view first, std::string_view second) {
  return ctx.judging(ctx.prompts.render(prompts::TemplateName::cf_scorer,
                                        {{"question", std::string(question)},
                                         {"answer_1", std::string(first)},
                                         {"answer_2", std::string(second)},
                                         {"score_scale", std::to_string(ctx.score_scale)}}));
}

}  // namespace

std::vector<DuelOutcome> duel_batch(std::span<const Instruction> instrs, const StageContext& ctx) {
  const std::size_t n = instrs.size();
  std::vector<DuelOutcome> out(n);
  std::vector<GenerationRequest> answer_requests;
  for (const auto& instr : instrs) answer_requests.push_back(ctx.generation(instr.text));
  auto strong = ctx.backend.batch_complete(answer_requests, Role::strong);
  auto target = ctx.backend.batch_complete(answer_requests, Role::target);

  // Two scorer prompts per live duel: strong shown first, then target first.
  std::vector<std::size_t> live;
  std::vector<GenerationRequest> score_requests;
  for (std::size_t i = 0; i < n; ++i) {
    if (!strong[i].ok() || !target[i].ok()) {
      out[i].status = DuelStatus::deferred;
      out[i].reason = !strong[i].ok() ? error_text(strong[i]) : error_text(target[i]);
      continue;
    }
    live.push_back(i);
    score_requests.push_back(scorer_request(ctx, instrs[i].text, *strong[i].text, *target[i].text));
    score_requests.push_back(scorer_request(ctx, instrs[i].text, *target[i].text, *strong[i].text));
  }
  auto scores = ctx.backend.batch_complete(score_requests, Role::judge);

  std::vector<std::optional<prompts::ParsedScores>> parsed(score_requests.size());
  std::vector<std::size_t> reprompt;
  std::vector<std::string> failure(score_requests.size());
  std::vector<char> provider_failed(score_requests.size(), 0);
  auto absorb = [&](std::size_t slot, const GenerationResult& r) {
    provider_failed[slot] = !r.ok();
    if (!r.ok()) {
      failure[slot] = error_text(r);
      return false;
    }
    try {
      parsed[slot] = prompts::parse_scores(*r.text, ctx.score_scale);
    } catch (const Error& e) {
      failure[slot] = e.what();
    }
    return true;
  };
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (absorb(s, scores[s]) && !parsed[s]) reprompt.push_back(s);
  }
  if (!reprompt.empty()) {
    std::vector<GenerationRequest> again;
    for (auto s : reprompt) {
      again.push_back(score_requests[s]);
      again.back().attempt = 1;
    }
    auto second = ctx.backend.batch_complete(again, Role::judge);
    for (std::size_t k = 0; k < reprompt.size(); ++k) absorb(reprompt[k], second[k]);
  }

  for (std::size_t l = 0; l < live.size(); ++l) {
    const auto i = live[l];
    const auto fwd = 2 * l;
    const auto rev = 2 * l + 1;
    if (parsed[fwd] && parsed[rev]) {
      ScoredDuel d;
      d.instruction_id = instrs[i].id;
      d.strong_response = *strong[i].text;
      d.target_response = *target[i].text;
      d.strong_first = *parsed[fwd];
      d.strong_second = *parsed[rev];
      const auto combined = combine_scores(d.strong_first, d.strong_second);
      d.avg_strong = combined.avg_strong;
      d.avg_target = combined.avg_target;
      d.gap = combined.gap;
      out[i].duel = std::move(d);
      continue;
    }
    const auto bad = parsed[fwd] ? rev : fwd;
    // A provider outage is worth retrying next round; an unreadable verdict is not.
    out[i].status = provider_failed[bad] ? DuelStatus::deferred : DuelStatus::dropped;
    out[i].reason = provider_failed[bad] ? failure[bad] : "unparseable scores: " + failure[bad];
  }
  return out;
}

DuelOutcome duel(const Instruction& instr, const StageContext& ctx) {
  return std::move(duel_batch(std::span(&instr, 1), ctx).front());
}

FilterPassResult filter_pass(std::span<const Instruction> instrs, const FilterOptions& options,
                             const StageContext& ctx) {
  require(!std::isnan(options.theta) && options.theta > 0, "theta must be a positive number");
  require(options.max_iterations >= 1, "max_iterations must be at least 1");
  FilterPassResult result;
  auto outcomes = duel_batch(instrs, ctx);
  for (std::size_t i = 0; i < instrs.size(); ++i) {
    const auto& instr = instrs[i];
    auto& outcome = outcomes[i];
    if (outcome.status == DuelStatus::deferred) {
      result.deferred.push_back(instr);
      continue;
    }
    if (outcome.status == DuelStatus::dropped) {
      result.dropped.push_back({instr.id, outcome.reason});
      continue;
    }
    const auto& d = *outcome.duel;
    result.duels.push_back(d);
    CurationRecord record;
    record.instruction = instr;
    record.gap = d.gap;
    record.accepted_at_iteration = instr.iteration + 1;
    switch (route(d.gap, options.theta)) {
      case Route::accept_strong:
        record.response = d.strong_response;
        record.response_source = ResponseSource::strong;
        result.accepted.push_back(std::move(record));
        ++result.accept_strong;
        break;
      case Route::accept_target:
        record.response = d.target_response;
        record.response_source = ResponseSource::target;
        result.accepted.push_back(std::move(record));
        ++result.accept_target;
        break;
      case Route::improve_further:
        if (instr.iteration + 1 < options.max_iterations) {
          result.survivors.push_back(instr);
        } else if (options.keep_at_max) {
          record.response = d.strong_response;
          record.response_source = ResponseSource::strong;
          record.admission = Admission::kept_at_max;
          result.accepted.push_back(std::move(record));
          ++result.kept_at_max;
        } else {
          result.dropped.push_back({instr.id, "max_iterations"});
        }
        break;
    }
  }
  return result;
}

}  // namespace synthalign
