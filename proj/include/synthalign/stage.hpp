#pragma once

#include "synthalign/backend.hpp"
#include "synthalign/prompts.hpp"

namespace synthalign {

/// Everything a pipeline stage needs to talk to the models.
struct StageContext {
  Backend& backend;
  const prompts::PromptRegistry& prompts = prompts::PromptRegistry::defaults();
  double gen_temperature = 0.7;
  double judge_temperature = 0.0;
  int score_scale = prompts::kDefaultScoreScale;

  // max_tokens is left to the role's default.
  GenerationRequest generation(std::string prompt) const {
    return {std::move(prompt), gen_temperature, 0, {}, 0, 0};
  }
  GenerationRequest judging(std::string prompt) const {
    return {std::move(prompt), judge_temperature, 0, {}, 0, 0};
  }
};

}  // namespace synthalign
