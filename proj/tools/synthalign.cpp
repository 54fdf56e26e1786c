// Command-line front end for the instruction synthesis pipeline.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "synthalign/decoder.hpp"
#include "synthalign/encoder.hpp"
#include "synthalign/eval.hpp"
#include "synthalign/filter.hpp"
#include "synthalign/jsonl.hpp"
#include "synthalign/pipeline.hpp"
#include "synthalign/split.hpp"
#include "synthalign/tailor.hpp"
#include "synthalign/text.hpp"

namespace fs = std::filesystem;
using namespace synthalign;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kProvider = 3, kNoData = 4, kHalted = 5 };

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::config:
    case ErrorCode::precondition:
    case ErrorCode::missing_placeholder:
    case ErrorCode::cannot_reach_target:
      return kConfig;
    case ErrorCode::provider_unreachable:
    case ErrorCode::quota_exceeded:
    case ErrorCode::request_rejected:
    case ErrorCode::unmatched_prompt:
      return kProvider;
    case ErrorCode::no_data:
    case ErrorCode::all_seeds_failed:
      return kNoData;
    case ErrorCode::budget_exceeded:
      return kHalted;
    default:
      return kOther;
  }
}

// Flags shared by every subcommand; each mirrors a RunConfig field and wins
// over the config file.
struct Overrides {
  std::string config_path;
  std::optional<int> total_instructions, metadata_target, rubric_count, max_iterations,
      score_scale;
  std::optional<double> theta, gen_temperature, judge_temperature;
  std::optional<std::uint64_t> seed, token_budget;
  std::optional<std::size_t> max_in_flight;
  bool keep_at_max = false;
  bool no_dedup = false;
  std::string templates_dir;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", config_path, "JSON run configuration");
    app->add_option("--total-instructions", total_instructions);
    app->add_option("--metadata-target", metadata_target);
    app->add_option("--rubric-count", rubric_count);
    app->add_option("--max-iterations", max_iterations);
    app->add_option("--score-scale", score_scale);
    app->add_option("--theta", theta);
    app->add_option("--gen-temperature", gen_temperature);
    app->add_option("--judge-temperature", judge_temperature);
    app->add_option("--seed", seed);
    app->add_option("--token-budget", token_budget);
    app->add_option("--max-in-flight", max_in_flight);
    app->add_flag("--keep-at-max", keep_at_max);
    app->add_flag("--no-dedup", no_dedup);
    app->add_option("--templates-dir", templates_dir);
  }

  RunConfig resolve() const {
    RunConfig c;
    if (!config_path.empty()) c = load_run_config(config_path);
    if (total_instructions) c.total_instructions = *total_instructions;
    if (metadata_target) c.metadata_target = *metadata_target;
    if (rubric_count) c.rubric_count = *rubric_count;
    if (max_iterations) c.max_iterations = *max_iterations;
    if (score_scale) c.score_scale = *score_scale;
    if (theta) c.theta = *theta;
    if (gen_temperature) c.gen_temperature = *gen_temperature;
    if (judge_temperature) c.judge_temperature = *judge_temperature;
    if (seed) c.seed = *seed;
    if (token_budget) c.token_budget = *token_budget;
    if (max_in_flight) c.max_in_flight = *max_in_flight;
    if (keep_at_max) c.keep_at_max = true;
    if (no_dedup) c.dedup = false;
    if (!templates_dir.empty()) c.templates_dir = templates_dir;
    return c;
  }
};

// Backend plus everything a stage needs, built from a config.
struct Session {
  RunConfig config;
  std::unique_ptr<Backend> backend;
  prompts::PromptRegistry registry;
  std::unique_ptr<StageContext> ctx;

  explicit Session(RunConfig c)
      : config(std::move(c)),
        backend(make_backend(config)),
        registry(config.templates_dir.empty()
                     ? prompts::PromptRegistry::defaults()
                     : prompts::PromptRegistry::with_overrides(config.templates_dir)) {
    ctx = std::make_unique<StageContext>(StageContext{
        *backend, registry, config.gen_temperature, config.judge_temperature, config.score_scale});
  }
};

template <typename T>
std::vector<T> read_rows(const std::string& path) {
  std::vector<T> out;
  for (const auto& row : jsonl::read(path)) out.push_back(row.get<T>());
  return out;
}

template <typename T>
void write_rows(const std::string& path, const std::vector<T>& items) {
  std::vector<nlohmann::json> rows(items.begin(), items.end());
  if (path.empty() || path == "-") {
    for (const auto& r : rows) std::cout << r.dump() << "\n";
  } else {
    jsonl::write(path, rows);
  }
}

std::vector<Instruction> read_seed_file(const std::string& path) {
  std::vector<Instruction> seeds;
  for (const auto line : text::split_lines(jsonl::read_text(path))) {
    const auto body = text::trim(line);
    if (body.empty()) continue;
    char id[16];
    std::snprintf(id, sizeof id, "s%05zu", seeds.size() + 1);
    std::string textual(body);
    if (body.front() == '{') {
      const auto j = nlohmann::json::parse(body);
      textual = j.at("instruction").get<std::string>();
      if (j.contains("id")) {
        seeds.push_back(Instruction::seed(j["id"].get<std::string>(), textual));
        continue;
      }
    }
    seeds.push_back(Instruction::seed(id, textual));
  }
  if (seeds.empty()) fail(ErrorCode::no_data, "no seed instructions in " + path);
  return seeds;
}

void print_report(const RunReport& r) { std::cout << to_json(r).dump(2) << "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthesizes instruction-tuning data tailored to a target model"};
  app.require_subcommand(1);
  Overrides overrides;

  std::string seeds_path, metadata_path, instructions_path, out_path, blocklist_path, run_dir,
      stop_after, test_set, survivors_path, improved_path, validation_path, evaluation_path;
  int target_count = 0;
  std::optional<std::size_t> wins, ties, losses;
  double fraction = kDefaultValidationFraction;
  bool resume = false;

  auto* encode = app.add_subcommand("encode", "Extract metadata from seed instructions");
  encode->add_option("--seeds", seeds_path, "One instruction per line")->required();
  encode->add_option("-o,--out", out_path, "Metadata JSONL");

  auto* augment = app.add_subcommand("augment", "Grow a metadata pool by recombination");
  augment->add_option("--metadata", metadata_path)->required();
  augment->add_option("--target", target_count, "Pool size to reach")->required();
  augment->add_option("--blocklist", blocklist_path);
  augment->add_option("-o,--out", out_path);

  auto* generate = app.add_subcommand("generate", "Decode metadata into basic instructions");
  generate->add_option("--metadata", metadata_path)->required();
  generate->add_option("-o,--out", out_path);

  auto* tailor = app.add_subcommand("tailor", "Generate rubrics/actions and improve instructions");
  tailor->add_option("--metadata", metadata_path)->required();
  tailor->add_option("--instructions", instructions_path, "Instructions to improve once");
  tailor->add_option("-o,--out", out_path, "Rubrics JSONL");
  tailor->add_option("--improved", improved_path, "Improved instructions JSONL");

  auto* filter = app.add_subcommand("filter", "Score strong vs target responses and route");
  filter->add_option("--instructions", instructions_path)->required();
  filter->add_option("-o,--out", out_path, "Accepted dataset rows");
  filter->add_option("--survivors", survivors_path, "Instructions to improve further");

  auto* run_cmd = app.add_subcommand("run", "Full pipeline with checkpoints");
  run_cmd->add_option("--run-dir", run_dir)->required();
  run_cmd->add_flag("--resume", resume, "Continue from the last checkpoint");
  run_cmd->add_option("--stop-after", stop_after, "Halt after a checkpoint, e.g. iterating(2)");
  run_cmd->add_option("--seeds", seeds_path);
  run_cmd->add_option("--metadata", metadata_path);

  auto* evaluate = app.add_subcommand("evaluate", "Pairwise judge evaluation and CRR");
  evaluate->add_option("--test-set", test_set, "JSONL of {id, instruction, responses}");
  evaluate->add_option("-o,--out", out_path, "Per-item comparisons");
  evaluate->add_option("--wins", wins);
  evaluate->add_option("--ties", ties);
  evaluate->add_option("--losses", losses);

  auto* split = app.add_subcommand("split", "Seeded validation/evaluation split");
  split->add_option("--in", test_set)->required();
  split->add_option("--validation", validation_path)->required();
  split->add_option("--evaluation", evaluation_path)->required();
  split->add_option("--fraction", fraction);

  auto* report_cmd = app.add_subcommand("report", "Print the report of a run directory");
  report_cmd->add_option("--run-dir", run_dir)->required();

  for (auto* sub : app.get_subcommands({})) overrides.attach(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (encode->parsed()) {
      Session s(overrides.resolve());
      auto result = encode_seeds(read_seed_file(seeds_path), *s.ctx);
      for (const auto& skip : result.skipped) {
        std::cerr << "skipped " << skip.id << ": " << skip.reason << "\n";
      }
      write_rows(out_path, result.metadata);
    } else if (augment->parsed()) {
      const auto config = overrides.resolve();
      Blocklist blocklist;
      if (!blocklist_path.empty()) blocklist = load_blocklist(blocklist_path);
      AugmentOptions options;
      options.weight_by_frequency = config.weight_use_cases_by_frequency;
      auto pool = read_rows<InstructionMetadata>(metadata_path);
      write_rows(out_path, augment_metadata(pool, static_cast<std::size_t>(target_count),
                                            text::derive_seed(config.seed, "augment"), blocklist,
                                            options));
    } else if (generate->parsed()) {
      Session s(overrides.resolve());
      auto pool = read_rows<InstructionMetadata>(metadata_path);
      auto result = decode_pool(pool, plan_counts(pool, s.config.total_instructions), *s.ctx);
      for (const auto& entry : result.log) std::cerr << entry.id << ": " << entry.reason << "\n";
      auto instructions = s.config.dedup ? dedup_instructions(result.instructions)
                                         : std::move(result.instructions);
      write_rows(out_path, instructions);
    } else if (tailor->parsed()) {
      Session s(overrides.resolve());
      auto pool = read_rows<InstructionMetadata>(metadata_path);
      RubricBook book(s.config.rubric_count);
      book.ensure(pool, *s.ctx);
      for (const auto& id : book.untailorable_ids()) std::cerr << "untailorable " << id << "\n";
      write_rows(out_path, book.sets());
      if (!instructions_path.empty()) {
        auto instrs = read_rows<Instruction>(instructions_path);
        std::vector<RubricActionSet> sets;
        std::vector<ImproveJob> jobs;
        sets.reserve(instrs.size());
        for (const auto& instr : instrs) {
          auto set = instr.metadata_id ? book.find(*instr.metadata_id) : std::nullopt;
          if (!set) fail(ErrorCode::no_data, "no rubrics for instruction " + instr.id);
          sets.push_back(std::move(*set));
        }
        for (std::size_t i = 0; i < instrs.size(); ++i) {
          jobs.push_back({&instrs[i], &sets[i], improvement_seed(s.config.seed, instrs[i], 0)});
        }
        std::vector<Instruction> improved;
        for (auto& r : improve_batch(jobs, *s.ctx, s.config.max_iterations)) {
          if (r.failed) std::cerr << r.instruction.id << ": " << r.failure_reason << "\n";
          improved.push_back(std::move(r.instruction));
        }
        write_rows(improved_path, improved);
      }
    } else if (filter->parsed()) {
      Session s(overrides.resolve());
      auto instrs = read_rows<Instruction>(instructions_path);
      FilterOptions options{s.config.theta, s.config.max_iterations, s.config.keep_at_max};
      auto pass = filter_pass(instrs, options, *s.ctx);
      std::vector<nlohmann::json> rows;
      for (const auto& r : pass.accepted) rows.push_back(to_dataset_row(r));
      write_rows(out_path, rows);
      if (!survivors_path.empty()) write_rows(survivors_path, pass.survivors);
      for (const auto& d : pass.dropped) std::cerr << "dropped " << d.id << ": " << d.reason << "\n";
      for (const auto& d : pass.deferred) std::cerr << "deferred " << d.id << "\n";
    } else if (run_cmd->parsed()) {
      auto config = overrides.resolve();
      if (!seeds_path.empty()) {
        config.seeds_path = seeds_path;
        config.metadata_path.clear();
      }
      if (!metadata_path.empty()) {
        config.metadata_path = metadata_path;
        config.seeds_path.clear();
      }
      config.validate();
      RunControl control;
      control.resume = resume;
      if (!stop_after.empty()) control.stop_after = Checkpoint::parse(stop_after);
      auto backend = make_backend(config);
      auto outcome = run(config, *backend, run_dir, control);
      print_report(outcome.report);
      if (outcome.halted) {
        std::cerr << "halted: " << outcome.halt_reason << "\n";
        return kHalted;
      }
      std::cerr << "dataset: " << outcome.dataset_path.string() << "\n";
    } else if (evaluate->parsed()) {
      CrrReport report;
      if (wins || ties || losses) {
        report = compute_crr(wins.value_or(0), ties.value_or(0), losses.value_or(0));
      } else {
        if (test_set.empty()) fail(ErrorCode::config, "evaluate needs --test-set or counts");
        Session s(overrides.resolve());
        const auto rows = jsonl::read(test_set);
        std::vector<EvalItem> items;
        for (std::size_t i = 0; i < rows.size(); ++i) items.push_back(eval_item_from_json(rows[i], i));
        auto result = evaluate_model(items, *s.ctx);
        if (!out_path.empty()) {
          std::vector<nlohmann::json> out;
          for (const auto& c : result.comparisons) {
            out.push_back({{"id", c.instruction_id},
                           {"valid", c.valid},
                           {"outcome", c.valid ? to_string(c.outcome) : "invalid"},
                           {"forward", {c.forward.score_a, c.forward.score_b}},
                           {"reversed", {c.reversed.score_a, c.reversed.score_b}}});
          }
          jsonl::write(out_path, out);
        }
        report = result.report;
      }
      std::cout << report.table();
    } else if (split->parsed()) {
      const auto config = overrides.resolve();
      auto result = split_rows(jsonl::read(test_set), fraction, config.seed);
      jsonl::write(validation_path, result.validation);
      jsonl::write(evaluation_path, result.evaluation);
      std::cout << "validation " << result.validation.size() << ", evaluation "
                << result.evaluation.size() << "\n";
    } else if (report_cmd->parsed()) {
      print_report(report(load_state(run_dir)));
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOk;
}
