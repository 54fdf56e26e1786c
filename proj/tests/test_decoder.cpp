#include <doctest.h>

#include "support.hpp"
#include "synthalign/decoder.hpp"
#include "synthalign/encoder.hpp"
#include "synthalign/prompts.hpp"

using namespace synthalign;
using fixtures::TranscriptBuilder;

namespace {

std::string decode_prompt(const InstructionMetadata& m, int n) {
  std::string skills;
  for (std::size_t i = 0; i < m.skills.size(); ++i) skills += (i ? ", " : "") + m.skills[i];
  return prompts::render(prompts::TemplateName::decode_basic,
                         {{"number_of_instructions", std::to_string(n)},
                          {"use_case", m.use_case},
                          {"skills", skills}});
}

std::vector<std::string> numbered(const std::string& stem, int n) {
  std::vector<std::string> out;
  for (int i = 1; i <= n; ++i) out.push_back(stem + " " + std::to_string(i));
  return out;
}

const InstructionMetadata kCode{"m00001", "code generation", {"python"}, Provenance::extracted};

}  // namespace

TEST_CASE("the decode prompt carries both constraints") {
  auto p = decode_prompt(kCode, 5);
  CHECK(p.find("write 5 instructions") != std::string::npos);
  CHECK(p.find("Use case of the instructions: code generation\n") != std::string::npos);
  CHECK(p.find("Skills required to respond to the instructions: python\n") != std::string::npos);
}

TEST_CASE("generate_basic tags every instruction with its metadata") {
  testing::Harness h;
  h.bind(Role::strong, TranscriptBuilder().add_exact(
                           decode_prompt(kCode, 5),
                           prompts::format_numbered_list(numbered("Write code", 5))));
  auto result = generate_basic(kCode, 5, h.ctx);
  REQUIRE(result.instructions.size() == 5);
  CHECK(result.log.empty());
  for (const auto& i : result.instructions) {
    CHECK(i.metadata_id == std::optional<std::string>("m00001"));
    CHECK(i.iteration == 0);
    CHECK(i.origin == Origin::decoded);
    CHECK(i.lineage_id == i.id);
    CHECK(is_consistent(i));
  }
  CHECK(result.instructions[0].id == "m00001-001");
  CHECK(result.instructions[4].text == "Write code 5");
}

TEST_CASE("count one yields a single instruction") {
  testing::Harness h;
  h.bind(Role::strong, TranscriptBuilder().add_exact(decode_prompt(kCode, 1), "1. Only one"));
  auto result = generate_basic(kCode, 1, h.ctx);
  REQUIRE(result.instructions.size() == 1);
  CHECK(result.instructions[0].iteration == 0);
}

TEST_CASE("an undercount is kept and logged") {
  testing::Harness h;
  h.bind(Role::strong, TranscriptBuilder().add_exact(
                           decode_prompt(kCode, 5),
                           prompts::format_numbered_list(numbered("Write code", 4))));
  auto result = generate_basic(kCode, 5, h.ctx);
  CHECK(result.instructions.size() == 4);
  REQUIRE(result.log.size() == 1);
  CHECK(result.log[0].reason.find("got 4") != std::string::npos);
}

TEST_CASE("extra items beyond the request are cut") {
  testing::Harness h;
  h.bind(Role::strong, TranscriptBuilder().add_exact(
                           decode_prompt(kCode, 2),
                           prompts::format_numbered_list(numbered("Write code", 3))));
  CHECK(generate_basic(kCode, 2, h.ctx).instructions.size() == 2);
}

TEST_CASE("unparseable output after a retry leaves the metadata empty") {
  testing::Harness h;
  auto p = h.bind(Role::strong, TranscriptBuilder().add_exact(decode_prompt(kCode, 3), "No."));
  auto result = generate_basic(kCode, 3, h.ctx);
  CHECK(result.instructions.empty());
  REQUIRE(result.log.size() == 1);
  CHECK(result.log[0].reason.find("unparseable") != std::string::npos);
  CHECK(p->calls() == 2);
}

TEST_CASE("large counts are split into calls of at most ten") {
  testing::Harness h;
  TranscriptBuilder strong;
  strong.add_responses(hash_matcher(decode_prompt(kCode, 10)),
                       {prompts::format_numbered_list(numbered("first", 10)),
                        prompts::format_numbered_list(numbered("second", 10))});
  strong.add_exact(decode_prompt(kCode, 3), prompts::format_numbered_list(numbered("third", 3)));
  auto p = h.bind(Role::strong, strong);
  auto result = generate_basic(kCode, 23, h.ctx);
  REQUIRE(result.instructions.size() == 23);
  CHECK(p->calls() == 3);
  CHECK(result.instructions[0].text == "first 1");
  CHECK(result.instructions[10].text == "second 1");
  CHECK(result.instructions[22].text == "third 3");
  CHECK(result.instructions[22].id == "m00001-023");
}

TEST_CASE("generate_basic requires a positive count") {
  testing::Harness h;
  try {
    generate_basic(kCode, 0, h.ctx);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::precondition);
  }
}

TEST_CASE("plan_counts examples") {
  auto pool_of = [](int n) {
    std::vector<InstructionMetadata> pool;
    for (int i = 0; i < n; ++i) pool.push_back({metadata_id(static_cast<std::size_t>(i + 1)), "u", {"s"}, {}});
    return pool;
  };
  auto standard = plan_counts(pool_of(200), 2000);
  CHECK(standard.size() == 200);
  for (const auto& [id, c] : standard) CHECK(c == 10);

  auto three = plan_counts(pool_of(3), 10);
  CHECK(three.at("m00001") == 4);
  CHECK(three.at("m00002") == 3);
  CHECK(three.at("m00003") == 3);

  CHECK(plan_counts(pool_of(1), 7).at("m00001") == 7);
}

TEST_CASE("plan_counts gives the remainder to the smallest ids regardless of order") {
  std::vector<InstructionMetadata> pool{{"b", "u", {"s"}, {}}, {"a", "u", {"s"}, {}}, {"c", "u", {"s"}, {}}};
  auto counts = plan_counts(pool, 5);
  CHECK(counts.at("a") == 2);
  CHECK(counts.at("b") == 2);
  CHECK(counts.at("c") == 1);
}

TEST_CASE("plan_counts preconditions") {
  std::vector<InstructionMetadata> pool{{"a", "u", {"s"}, {}}, {"a", "v", {"s"}, {}}};
  for (auto fn : std::vector<std::function<void()>>{
           [&] { plan_counts(pool, 5); },
           [&] { plan_counts(std::span(pool).first(1), 0); },
           [] { plan_counts({}, 5); }}) {
    try {
      fn();
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::precondition);
    }
  }
}

TEST_CASE("dedup normalizes whitespace and case") {
  auto mk = [](std::string id, std::string t) {
    Instruction i;
    i.id = std::move(id);
    i.text = std::move(t);
    return i;
  };
  std::vector batch{mk("1", "A"), mk("2", "a "), mk("3", "B")};
  auto out = dedup_instructions(batch);
  REQUIRE(out.size() == 2);
  CHECK(out[0].id == "1");
  CHECK(out[1].id == "3");
  CHECK(dedup_instructions({}).empty());
}

TEST_CASE("planted duplicates are removed") {
  std::vector<Instruction> batch;
  for (int i = 0; i < 90; ++i) {
    Instruction x;
    x.id = "i" + std::to_string(i);
    x.text = "Instruction number " + std::to_string(i);
    batch.push_back(x);
  }
  for (int i = 0; i < 10; ++i) {
    Instruction x;
    x.id = "dup" + std::to_string(i);
    x.text = "  INSTRUCTION   number " + std::to_string(i * 7) + "\n";
    batch.insert(batch.begin() + 5 * i + 50, x);
  }
  REQUIRE(batch.size() == 100);
  CHECK(dedup_instructions(batch).size() == 90);
}
