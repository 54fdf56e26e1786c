#include <doctest.h>

#include <fstream>

#include "support.hpp"
#include "synthalign/jsonl.hpp"
#include "synthalign/pipeline.hpp"
#include "synthalign/split.hpp"

using namespace synthalign;
namespace fs = std::filesystem;

namespace {

struct Scripted {
  testing::TempDir dir;
  fixtures::ScriptedRun run;

  explicit Scripted(fixtures::ScriptedRunSpec spec) : run(fixtures::build_scripted_run(spec, dir / "in")) {}

  RunOutcome go(const std::string& name, RunControl control = {}) {
    return go(run.config, name, control);
  }
  RunOutcome go(const RunConfig& config, const std::string& name, RunControl control = {}) {
    auto backend = make_backend(config);
    return synthalign::run(config, *backend, dir / name, control);
  }
};

fixtures::ScriptedRunSpec schedule(std::vector<double> fractions, std::size_t target_every = 0) {
  fixtures::ScriptedRunSpec spec;
  spec.accept_round = fixtures::gap_schedule(100, fractions);
  spec.target_win_every = target_every;
  return spec;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::io;
}

}  // namespace

TEST_CASE("checkpoint labels") {
  CHECK(Checkpoint{Phase::decoded, 0}.label() == "decoded");
  CHECK(Checkpoint{Phase::iterating, 2}.label() == "iterating(2)");
  CHECK(Checkpoint::parse("iterating(3)") == Checkpoint{Phase::iterating, 3});
  CHECK(Checkpoint::parse("encoded") == Checkpoint{Phase::encoded, 0});
  CHECK(code_of([] { Checkpoint::parse("sideways"); }) == ErrorCode::config);
}

TEST_CASE("config defaults and validation") {
  RunConfig c;
  CHECK(c.rubric_count == 4);
  CHECK(c.max_iterations == 4);
  CHECK(c.theta == 3.0);
  CHECK(c.score_scale == 10);
  CHECK(c.gen_temperature == 0.7);
  CHECK(c.judge_temperature == 0.0);
  CHECK(c.metadata_target == 200);
  c.seeds_path = "seeds.txt";
  c.validate();

  auto bad = c;
  bad.total_instructions = 10;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::config);
  bad = c;
  bad.theta = 10;
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::config);
  bad = c;
  bad.metadata_path = "m.jsonl";
  CHECK(code_of([&] { bad.validate(); }) == ErrorCode::config);

  nlohmann::json j = c;
  auto back = j.get<RunConfig>();
  CHECK(back.seeds_path == "seeds.txt");
  j["rubrics"] = 4;
  CHECK(code_of([&] { (void)j.get<RunConfig>(); }) == ErrorCode::config);
  CHECK(code_of([] { (void)nlohmann::json{{"theta", "high"}}.get<RunConfig>(); }) == ErrorCode::config);
}

TEST_CASE("every instruction accepted in the first round") {
  Scripted s(schedule({1.0}));
  auto out = s.go("run");
  CHECK_FALSE(out.halted);
  CHECK(out.report.decoded == 100);
  CHECK(out.report.accepted == 100);
  REQUIRE(out.report.per_iteration.size() == 1);
  CHECK(out.report.per_iteration[0].iteration == 1);
  CHECK(out.report.per_iteration[0].proportion == 1.0);
  CHECK(jsonl::read(out.dataset_path).size() == 100);
}

TEST_CASE("a 70/30 schedule splits acceptance over two rounds") {
  Scripted s(schedule({0.7, 0.3}, 4));
  auto out = s.go("run");
  CHECK(out.report.accepted == 100);
  REQUIRE(out.report.per_iteration.size() == 2);
  CHECK(out.report.per_iteration[0].accepted == 70);
  CHECK(out.report.per_iteration[1].accepted == 30);
  CHECK(out.report.counters.accept_target == 25);
  CHECK(out.report.counters.accept_strong == 75);
  auto rows = jsonl::read(out.dataset_path);
  std::size_t improved = 0;
  for (const auto& r : rows) {
    if (r["iteration"] == 2) {
      ++improved;
      CHECK(r["action_history"].size() == 1);
      CHECK(r["instruction"].get<std::string>().find("[v1]") != std::string::npos);
    }
  }
  CHECK(improved == 30);
}

TEST_CASE("70/20/10 with some never accepted") {
  Scripted s(schedule({0.7, 0.2, 0.1}));
  auto out = s.go("run");
  const auto& r = out.report;
  CHECK(r.accepted == 100);
  REQUIRE(r.per_iteration.size() == 3);
  CHECK(r.per_iteration[0].proportion == doctest::Approx(0.7));
  CHECK(r.per_iteration[1].proportion == doctest::Approx(0.2));
  CHECK(r.per_iteration[2].proportion == doctest::Approx(0.1));
  CHECK(r.decoded == r.accepted + r.dropped + r.unresolved);

  Scripted partial(schedule({0.5, 0.2}));
  auto p = partial.go("run").report;
  CHECK(p.accepted == 70);
  CHECK(p.dropped == 30);
  CHECK(p.drop_reasons.at("max_iterations") == 30);
  CHECK(p.decoded == p.accepted + p.dropped + p.unresolved);
}

TEST_CASE("keep_at_max admits exhausted instructions") {
  Scripted s(schedule({0.5}));
  auto config = s.run.config;
  config.keep_at_max = true;
  auto out = s.go(config, "run");
  CHECK(out.report.accepted == 100);
  CHECK(out.report.counters.kept_at_max == 50);
  std::size_t flagged = 0;
  for (const auto& r : jsonl::read(out.dataset_path)) {
    if (r.value("kept_at_max", false)) ++flagged;
  }
  CHECK(flagged == 50);
}

TEST_CASE("nothing accepted is flagged") {
  Scripted s(schedule({}));
  auto out = s.go("run");
  CHECK(out.report.accepted == 0);
  CHECK(out.report.no_accepted);
  CHECK(jsonl::read(out.dataset_path).empty());
  CHECK(jsonl::read_json(s.dir / "run" / "report.json")["no_accepted"] == true);
}

TEST_CASE("resuming after an interruption reproduces the uninterrupted run") {
  Scripted s(schedule({0.7, 0.2, 0.1}, 3));
  auto whole = s.go("whole");

  RunControl stop;
  stop.stop_after = Checkpoint{Phase::iterating, 2};
  auto first = s.go("split", stop);
  CHECK(first.halted);
  CHECK(load_state(s.dir / "split").checkpoint.label() == "iterating(2)");
  CHECK_FALSE(fs::exists(s.dir / "split" / "dataset.jsonl"));

  RunControl resume;
  resume.resume = true;
  auto second = s.go("split", resume);
  CHECK_FALSE(second.halted);
  for (const char* f : {"dataset.jsonl", "report.json", "instructions.jsonl", "rubrics.jsonl",
                        "metadata.jsonl"}) {
    CAPTURE(f);
    CHECK(jsonl::read_text(s.dir / "whole" / f) == jsonl::read_text(s.dir / "split" / f));
  }
}

TEST_CASE("resume rules") {
  Scripted s(schedule({1.0}));
  RunControl stop;
  stop.stop_after = Checkpoint{Phase::decoded, 0};
  s.go("run", stop);
  CHECK(code_of([&] { s.go("run"); }) == ErrorCode::config);

  auto changed = s.run.config;
  changed.theta = 2.5;
  RunControl resume;
  resume.resume = true;
  CHECK(code_of([&] { s.go(changed, "run", resume); }) == ErrorCode::config);

  auto operational = s.run.config;
  operational.max_in_flight = 2;
  CHECK_FALSE(s.go(operational, "run", resume).halted);
}

TEST_CASE("the token budget halts the run") {
  Scripted s(schedule({1.0}));
  auto config = s.run.config;
  config.token_budget = 1;
  auto out = s.go(config, "run");
  CHECK(out.halted);
  CHECK(out.halt_reason.find("token budget") != std::string::npos);
  CHECK(load_state(s.dir / "run").checkpoint.phase == Phase::encoded);
}

TEST_CASE("report counts") {
  RunState state;
  state.checkpoint = {Phase::done, 0};
  state.counters.decoded = 100;
  for (int i = 0; i < 70; ++i) {
    CurationRecord r;
    r.accepted_at_iteration = i < 50 ? 1 : 2;
    state.accepted.push_back(r);
  }
  state.accepted_per_iteration = {{1, 50}, {2, 20}};
  for (int i = 0; i < 20; ++i) state.dropped.push_back({"d", "unparseable scores: x"});
  for (int i = 0; i < 10; ++i) state.unresolved.push_back(Instruction{});
  auto r = report(state);
  CHECK(r.accepted == 70);
  CHECK(r.dropped == 20);
  CHECK(r.unresolved == 10);
  CHECK(r.decoded == 100);
  CHECK(r.drop_reasons.at("unparseable scores") == 20);
  CHECK(r.per_iteration[0].proportion == doctest::Approx(50.0 / 70));
  auto j = to_json(r);
  CHECK(j["phase"] == "done");
  CHECK(j["per_iteration"].size() == 2);
}

TEST_CASE("run state round trips") {
  RunState s;
  s.checkpoint = {Phase::iterating, 2};
  s.config_fingerprint = "abc";
  s.accepted_per_iteration = {{1, 3}};
  s.pool.push_back(Instruction::seed("s1", "x"));
  s.events = 7;
  nlohmann::json j = s;
  auto back = j.get<RunState>();
  CHECK(back.checkpoint == s.checkpoint);
  CHECK(back.accepted_per_iteration.at(1) == 3);
  CHECK(back.pool.size() == 1);
  CHECK(back.events == 7);
}

TEST_CASE("a run can start from user metadata") {
  Scripted s(schedule({1.0}));
  std::vector<nlohmann::json> rows;
  for (const auto& m : s.run.metadata) rows.push_back(m);
  jsonl::write(s.dir / "in" / "meta.jsonl", rows);
  auto config = s.run.config;
  config.seeds_path.clear();
  config.metadata_path = (s.dir / "in" / "meta.jsonl").string();
  auto out = s.go(config, "run");
  CHECK(out.report.accepted == 100);
  CHECK(out.report.counters.seeds_skipped == 0);
}

TEST_CASE("splitting rows") {
  std::vector<nlohmann::json> rows;
  for (int i = 0; i < 10; ++i) rows.push_back(i);
  auto a = split_rows(rows, 0.2, 5);
  CHECK(a.validation.size() == 2);
  CHECK(a.evaluation.size() == 8);
  auto b = split_rows(rows, 0.2, 5);
  CHECK(a.validation == b.validation);
  for (std::size_t i = 1; i < a.evaluation.size(); ++i) {
    CHECK(a.evaluation[i - 1].get<int>() < a.evaluation[i].get<int>());
  }
  CHECK(split_rows({}, 0.2).validation.empty());
  CHECK(split_rows(rows, 0.25).validation.size() == 3);
}
