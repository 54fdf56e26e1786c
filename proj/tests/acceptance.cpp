// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
// failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "support.hpp"
#include "synthalign/decoder.hpp"
#include "synthalign/eval.hpp"
#include "synthalign/filter.hpp"
#include "synthalign/jsonl.hpp"
#include "synthalign/pipeline.hpp"
#include "synthalign/prompts.hpp"
#include "synthalign/tailor.hpp"
#include "synthalign/text.hpp"

using namespace synthalign;
namespace fs = std::filesystem;

namespace {

struct Check {
  std::vector<std::string> failures;
  void expect(bool ok, const std::string& what) {
    if (!ok && failures.size() < 5) failures.push_back(what);
    if (!ok && failures.size() == 5) failures.push_back("...");
  }
};

template <typename T>
std::string str(const T& v) {
  std::ostringstream ss;
  ss << v;
  return ss.str();
}

// Two-decimal percentage with round-half-up, in integer arithmetic.
std::string crr_oracle(std::size_t w, std::size_t t, std::size_t l) {
  const long long num = static_cast<long long>(w + t) * 20000;
  const long long den = static_cast<long long>(w + t + l) * 2;
  const long long hundredths = (num + den / 2) / den;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld.%02lld%%", hundredths / 100, hundredths % 100);
  return buf;
}

void crr_table(Check& c) {
  const auto& rows = fixtures::published_crr_table();
  c.expect(rows.size() == 12, "table has 12 rows");
  for (const auto& r : rows) {
    const auto got = compute_crr(r.wins, r.ties, r.losses).percent();
    c.expect(got == r.crr, r.model + " " + r.method + ": " + got + " != " + r.crr);
    c.expect(crr_oracle(r.wins, r.ties, r.losses) == r.crr, "oracle disagrees on " + r.crr);
  }
  c.expect(compute_crr(17, 140, 61).percent() == "72.02%", "17/140/61");
  c.expect(compute_crr(29, 145, 44).percent() == "79.82%", "29/145/44");
  c.expect(compute_crr(35, 154, 29).percent() == "86.70%", "35/154/29");
}

void routing(Check& c) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> gap_dist(-10, 10);
  std::uniform_real_distribution<double> theta_dist(0.01, 9.99);
  std::uniform_int_distribution<int> coin(0, 3);
  for (int i = 0; i < 10000; ++i) {
    const double theta = coin(rng) == 0 ? std::max(0.5, std::round(theta_dist(rng) * 2) / 2) : theta_dist(rng);
    double gap = gap_dist(rng);
    if (coin(rng) == 0) gap = coin(rng) % 2 ? theta : -theta;
    const auto r = route(gap, theta);
    const bool strong = gap > theta, target = gap < -theta;
    const bool middle = !strong && !target;
    c.expect(strong + target + middle == 1, "branches overlap");
    c.expect((r == Route::accept_strong) == strong, "strong branch at gap " + str(gap));
    c.expect((r == Route::accept_target) == target, "target branch at gap " + str(gap));
    c.expect((r == Route::improve_further) == middle, "middle branch at gap " + str(gap));
    c.expect(route(theta, theta) == Route::improve_further, "gap == theta");
    c.expect(route(-theta, theta) == Route::improve_further, "gap == -theta");
    // Monotone: raising the gap never moves toward the target branch.
    const double higher = gap + std::abs(gap_dist(rng));
    const auto rank = [](Route x) { return x == Route::accept_target ? 0 : x == Route::improve_further ? 1 : 2; };
    c.expect(rank(route(higher, theta)) >= rank(r), "rank monotonicity at gap " + str(gap));
  }
}

std::string template_prompt(prompts::TemplateName name, const std::string& q, const std::string& a1,
                            const std::string& a2) {
  return prompts::render(name, {{"question", q}, {"answer_1", a1}, {"answer_2", a2}, {"score_scale", "10"}});
}

void position_bias(Check& c) {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> score(2, 20);
  auto draw = [&] { return score(rng) / 2.0; };

  // Scorer: the same opinions delivered in the opposite presentation order.
  testing::Harness h;
  fixtures::TranscriptBuilder strong, target, judge_a, judge_b;
  std::vector<Instruction> instrs;
  std::vector<std::array<double, 4>> quads;
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 4> q{draw(), draw(), draw(), draw()};
    quads.push_back(q);
    const auto text = "instruction " + std::to_string(i);
    const auto s = "strong " + std::to_string(i), t = "target " + std::to_string(i);
    strong.add_exact(text, s);
    target.add_exact(text, t);
    // Strong shown first: (q0 strong, q1 target). Target shown first: (q2 target, q3 strong).
    judge_a.add_exact(template_prompt(prompts::TemplateName::cf_scorer, text, s, t),
                      prompts::format_scores(q[0], q[1]));
    judge_a.add_exact(template_prompt(prompts::TemplateName::cf_scorer, text, t, s),
                      prompts::format_scores(q[2], q[3]));
    // Swapped: the forward call now carries the second call's opinions.
    judge_b.add_exact(template_prompt(prompts::TemplateName::cf_scorer, text, s, t),
                      prompts::format_scores(q[3], q[2]));
    judge_b.add_exact(template_prompt(prompts::TemplateName::cf_scorer, text, t, s),
                      prompts::format_scores(q[1], q[0]));
    auto instr = Instruction::seed("i" + std::to_string(i), text);
    instr.origin = Origin::decoded;
    instr.lineage_id = instr.id;
    instrs.push_back(instr);
  }
  h.bind(Role::strong, strong);
  h.bind(Role::target, target);
  h.bind(Role::judge, judge_a);
  const auto a = duel_batch(instrs, h.ctx);
  h.bind(Role::judge, judge_b);
  const auto b = duel_batch(instrs, h.ctx);
  for (std::size_t i = 0; i < instrs.size(); ++i) {
    if (a[i].status != DuelStatus::ok || b[i].status != DuelStatus::ok) {
      c.expect(false, "duel " + std::to_string(i) + " did not complete");
      continue;
    }
    const auto& q = quads[i];
    const double s = (q[0] + q[3]) / 2, t = (q[1] + q[2]) / 2;
    c.expect(a[i].duel->avg_strong == s && a[i].duel->avg_target == t && a[i].duel->gap == s - t,
             "duel " + std::to_string(i) + " averages");
    c.expect(a[i].duel->avg_strong == b[i].duel->avg_strong &&
                 a[i].duel->avg_target == b[i].duel->avg_target && a[i].duel->gap == b[i].duel->gap,
             "duel " + std::to_string(i) + " changed under swapped order");
  }

  // Judge: swapping which side is the target maps win <-> loss.
  testing::Harness j;
  fixtures::TranscriptBuilder judge;
  std::vector<std::array<double, 4>> jq;
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 4> q{draw(), draw(), draw(), draw()};
    jq.push_back(q);
    const auto text = "question " + std::to_string(i);
    const auto x = "x" + std::to_string(i), y = "y" + std::to_string(i);
    judge.add_exact(template_prompt(prompts::TemplateName::judge, text, x, y),
                    prompts::format_scores(q[0], q[1]));
    judge.add_exact(template_prompt(prompts::TemplateName::judge, text, y, x),
                    prompts::format_scores(q[2], q[3]));
  }
  j.bind(Role::judge, judge);
  const auto mirror = [](Outcome o) {
    return o == Outcome::win ? Outcome::loss : o == Outcome::loss ? Outcome::win : Outcome::tie;
  };
  for (int i = 0; i < 1000; ++i) {
    const auto text = "question " + std::to_string(i);
    const auto x = "x" + std::to_string(i), y = "y" + std::to_string(i);
    const auto xy = judge_pair(text, x, y, j.ctx);
    const auto yx = judge_pair(text, y, x, j.ctx);
    c.expect(xy.valid && yx.valid, "judge " + std::to_string(i) + " invalid");
    c.expect(yx.outcome == mirror(xy.outcome), "judge " + std::to_string(i) + " not mirrored");
    const auto& q = jq[i];
    const auto direct = decide_outcome(q[0], q[1], q[3], q[2]);
    c.expect(xy.outcome == direct, "judge " + std::to_string(i) + " outcome");
    c.expect(decide_outcome(q[2], q[3], q[1], q[0]) == mirror(direct), "relabel " + std::to_string(i));
  }
}

void win_twice(Check& c) {
  std::size_t n = 0;
  for (int tf = 1; tf <= 10; ++tf)
    for (int rf = 1; rf <= 10; ++rf)
      for (int tr = 1; tr <= 10; ++tr)
        for (int rr = 1; rr <= 10; ++rr) {
          ++n;
          const auto got = decide_outcome(tf, rf, tr, rr);
          Outcome want = Outcome::tie;
          if (tf > rf && tr > rr) want = Outcome::win;
          if (rf > tf && rr > tr) want = Outcome::loss;
          c.expect(got == want, "scores " + std::to_string(tf) + " " + std::to_string(rf) + " / " +
                                    std::to_string(tr) + " " + std::to_string(rr));
        }
  c.expect(n == 10000, "combination count");
}

RunOutcome run_in(const fixtures::ScriptedRun& s, const fs::path& dir, RunControl control = {}) {
  auto backend = make_backend(s.config);
  return run(s.config, *backend, dir, control);
}

bool same_file(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && jsonl::read_text(a) == jsonl::read_text(b);
}

void determinism(Check& c) {
  testing::TempDir dir;
  fixtures::ScriptedRunSpec spec;
  spec.accept_round = fixtures::gap_schedule(100, {0.6, 0.2, 0.1});
  spec.target_win_every = 3;
  const auto s = fixtures::build_scripted_run(spec, dir / "in");
  run_in(s, dir / "a");
  run_in(s, dir / "b");
  c.expect(same_file(dir / "a" / "dataset.jsonl", dir / "b" / "dataset.jsonl"), "two runs: dataset");
  c.expect(same_file(dir / "a" / "report.json", dir / "b" / "report.json"), "two runs: report");
  c.expect(jsonl::read(dir / "a" / "dataset.jsonl").size() == 90, "dataset size");

  for (const auto& label : {"encoded", "decoded", "iterating(1)", "iterating(2)"}) {
    const auto resumed = dir / (std::string("r-") + label);
    RunControl stop;
    stop.stop_after = Checkpoint::parse(label);
    const auto first = run_in(s, resumed, stop);
    c.expect(first.halted, std::string("no halt at ") + label);
    RunControl resume;
    resume.resume = true;
    run_in(s, resumed, resume);
    c.expect(same_file(dir / "a" / "dataset.jsonl", resumed / "dataset.jsonl"),
             std::string("resume after ") + label + ": dataset");
    c.expect(same_file(dir / "a" / "report.json", resumed / "report.json"),
             std::string("resume after ") + label + ": report");
  }
}

void iteration_accounting(Check& c) {
  testing::TempDir dir;
  fixtures::ScriptedRunSpec spec;
  spec.accept_round = fixtures::gap_schedule(100, {0.7, 0.2, 0.1});
  const auto s = fixtures::build_scripted_run(spec, dir / "in");
  const auto out = run_in(s, dir / "run");
  const auto& r = out.report;
  c.expect(r.per_iteration.size() == 3, "three iterations reported");
  const double want[] = {0.70, 0.20, 0.10};
  for (std::size_t i = 0; i < r.per_iteration.size() && i < 3; ++i) {
    c.expect(r.per_iteration[i].iteration == static_cast<int>(i) + 1, "iteration label");
    c.expect(r.per_iteration[i].accepted == static_cast<std::size_t>(std::lround(want[i] * 100)),
             "accepted count at iteration " + std::to_string(i + 1));
    c.expect(r.per_iteration[i].proportion == static_cast<double>(r.per_iteration[i].accepted) / 100.0,
             "proportion at iteration " + std::to_string(i + 1));
  }
  c.expect(r.decoded == 100, "decoded 100");
  c.expect(r.decoded == r.accepted + r.dropped + r.unresolved, "conservation");
  c.expect(r.unresolved == 0 && r.dropped == 0, "nothing left over");
  for (const auto& row : jsonl::read(out.dataset_path)) {
    c.expect(row["iteration"].get<int>() <= 3, "record past iteration 3");
  }
}

std::string random_words(std::mt19937_64& rng, int lo, int hi) {
  static const std::vector<std::string> vocab{"plan",  "a",     "trip",  "to",   "Kyoto",  "write",
                                              "code",  "that",  "sorts", "3",    "items,", "explain",
                                              "why?",  "tax",   "law",   "in",   "(brief)", "poem"};
  std::uniform_int_distribution<int> len(lo, hi);
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  std::string out;
  for (int i = len(rng); i > 0; --i) out += (out.empty() ? "" : " ") + vocab[pick(rng)];
  return out;
}

bool throws_unparseable(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code() == ErrorCode::unparseable_output;
  }
  return false;
}

void parser_round_trips(Check& c) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 2000; ++i) {
    std::vector<std::string> items;
    const int n = 1 + static_cast<int>(rng() % 20);
    for (int k = 0; k < n; ++k) items.push_back(random_words(rng, 1, 12));
    const auto parsed = prompts::parse_numbered_list(prompts::format_numbered_list(items), items.size());
    c.expect(parsed.items == items && !parsed.count_mismatch, "list round trip " + std::to_string(i));
    c.expect(prompts::parse_numbered_list(prompts::format_numbered_list(items), items.size() + 1)
                 .count_mismatch,
             "list count mismatch " + std::to_string(i));
  }
  static const std::vector<std::string> skills_vocab{"creative writing", "logical reasoning", "math",
                                                     "history knowledge", "coding", "empathy"};
  for (int i = 0; i < 2000; ++i) {
    const auto use_case = text::to_lower(random_words(rng, 1, 4));
    std::vector<std::string> skills;
    for (const auto& s : skills_vocab)
      if (rng() % 3 == 0 && skills.size() < 3) skills.push_back(s);
    if (skills.empty()) skills.push_back("coding");
    const char* label = i % 2 ? "Use case" : "Task";
    const auto m = prompts::parse_metadata(prompts::format_metadata(use_case, skills, label));
    c.expect(m.use_case == use_case && m.skills == skills, std::string("metadata round trip (") + label + ")");
  }
  for (int i = 0; i < 2000; ++i) {
    const double a = static_cast<double>(rng() % 19 + 2) / 2.0;
    const double b = static_cast<double>(rng() % 91 + 10) / 10.0;
    const auto expl = i % 3 ? "Assistant 1 was more " + random_words(rng, 1, 8) : std::string();
    const auto s = prompts::parse_scores(prompts::format_scores(a, b, expl));
    c.expect(s.score_a == a && s.score_b == b && !s.out_of_range, "scores " + str(a) + " " + str(b));
    c.expect(s.explanation == expl, "explanation kept");
  }
  c.expect(prompts::parse_scores("12 3").out_of_range, "out of range flagged");
  c.expect(throws_unparseable([] { prompts::parse_scores("Both are great."); }), "no scores");
  c.expect(throws_unparseable([] { prompts::parse_scores(""); }), "empty scores");
  c.expect(throws_unparseable([] { prompts::parse_metadata("Skills: math\n"); }), "missing use case");
  c.expect(throws_unparseable([] { prompts::parse_metadata("Use case: poems\n"); }), "missing skills");
  c.expect(throws_unparseable([] { prompts::parse_metadata(""); }), "empty metadata");
}

void defaults(Check& c) {
  const RunConfig config;
  c.expect(config.rubric_count == 4, "4 rubrics/actions");
  c.expect(config.max_iterations == 4, "max 4 iterations");
  c.expect(config.theta == 3.0, "theta 3");
  c.expect(config.score_scale == 10, "scale 10");
  c.expect(config.gen_temperature == 0.7, "generation temperature 0.7");
  c.expect(config.judge_temperature == 0.0, "judge temperature 0.0");
  c.expect(config.metadata_target == 200, "metadata target 200");
  c.expect(kDefaultRubricCount == 4 && kDefaultMaxIterations == 4, "tailor defaults");
  c.expect(kDefaultTheta == 3.0 && FilterOptions{}.theta == 3.0 && FilterOptions{}.max_iterations == 4,
           "filter defaults");
  c.expect(prompts::kDefaultScoreScale == 10, "parser scale");
  Backend backend;
  const StageContext ctx{backend};
  c.expect(ctx.gen_temperature == 0.7 && ctx.judge_temperature == 0.0 && ctx.score_scale == 10,
           "stage defaults");
  const nlohmann::json snapshot = config;
  c.expect(snapshot["rubric_count"] == 4 && snapshot["max_iterations"] == 4 && snapshot["theta"] == 3.0 &&
               snapshot["score_scale"] == 10 && snapshot["gen_temperature"] == 0.7 &&
               snapshot["judge_temperature"] == 0.0 && snapshot["metadata_target"] == 200,
           "serialized defaults");
}

void plan_counts_exact(Check& c) {
  std::vector<InstructionMetadata> pool;
  for (int p = 1; p <= 50; ++p) {
    char id[16];
    std::snprintf(id, sizeof id, "m%05d", (p * 37) % 101);
    pool.push_back({id, "use case", {"skill"}});
    // Brute force: hand out one at a time to the smallest, ties by id.
    std::map<std::string, int> oracle;
    for (const auto& m : pool) oracle[m.id] = 0;
    for (int total = 0; total <= 500; ++total) {
      if (total > 0) {
        auto best = oracle.begin();
        for (auto it = oracle.begin(); it != oracle.end(); ++it)
          if (it->second < best->second) best = it;
        ++best->second;
      }
      if (total < p) {
        bool rejected = false;
        try {
          plan_counts(pool, total);
        } catch (const Error& e) {
          rejected = e.code() == ErrorCode::precondition;
        }
        c.expect(rejected, "total below pool size accepted");
        continue;
      }
      const auto counts = plan_counts(pool, total);
      int sum = 0, lo = total, hi = 0;
      for (const auto& [id, n] : counts) {
        sum += n;
        lo = std::min(lo, n);
        hi = std::max(hi, n);
      }
      c.expect(counts.size() == pool.size(), "one count per metadata");
      c.expect(sum == total, "sum " + std::to_string(p) + "/" + std::to_string(total));
      c.expect(hi - lo <= 1, "spread " + std::to_string(p) + "/" + std::to_string(total));
      c.expect(counts == oracle, "oracle " + std::to_string(p) + "/" + std::to_string(total));
    }
  }
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
      {"CRR oracle reproduces the published comparison table", crr_table},
      {"routing trichotomy and boundary over 10,000 random gaps", routing},
      {"position-bias invariance over 1,000 score quadruples", position_bias},
      {"win-twice rule over all 10^4 score combinations", win_twice},
      {"end-to-end determinism including kill/resume", determinism},
      {"iteration accounting for a 70/20/10 schedule", iteration_accounting},
      {"parser round trips and malformed-input flags", parser_round_trips},
      {"defaults fidelity", defaults},
      {"plan_counts exactness for pool <= 50, total <= 500", plan_counts_exact},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    const auto start = std::chrono::steady_clock::now();
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.failures.push_back(std::string("exception: ") + e.what());
    }
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        std::chrono::steady_clock::now() - start)
                        .count();
    const bool ok = c.failures.empty();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " ("
              << ms << " ms)\n";
    for (const auto& f : c.failures) std::cout << "    " << f << "\n";
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed\n";
  return failed == 0 ? 0 : 1;
}
