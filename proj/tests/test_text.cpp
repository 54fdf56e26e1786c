#include <doctest.h>

#include <set>

#include "support.hpp"
#include "synthalign/jsonl.hpp"
#include "synthalign/random.hpp"
#include "synthalign/text.hpp"
#include "synthalign/types.hpp"

using namespace synthalign;

TEST_CASE("trim and case helpers") {
  CHECK(text::trim("  a b \n") == "a b");
  CHECK(text::trim(" \t ").empty());
  CHECK(text::to_lower("Use CASE") == "use case");
  CHECK(text::starts_with_ci("Task: x", "task:"));
  CHECK_FALSE(text::starts_with_ci("Ta", "task"));
  CHECK(text::contains_ci("Improving ACTIONS", "action"));
}

TEST_CASE("split_lines drops carriage returns") {
  auto lines = text::split_lines("a\r\nb\n\nc");
  REQUIRE(lines.size() == 4);
  CHECK(lines[0] == "a");
  CHECK(lines[1] == "b");
  CHECK(lines[2].empty());
  CHECK(lines[3] == "c");
}

TEST_CASE("normalize_for_dedup collapses whitespace and case") {
  CHECK(text::normalize_for_dedup("  Write\ta  POEM \n") == "write a poem");
}

TEST_CASE("words and counts") {
  CHECK(text::words("Add two, new constraints!") ==
        std::vector<std::string>{"add", "two", "new", "constraints"});
  CHECK(text::count_words("one  two\nthree") == 3);
  CHECK(text::count_words("") == 0);
}

TEST_CASE("sha256 of a known string") {
  CHECK(text::sha256_hex("abc") ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("derive_seed is stable and label sensitive") {
  CHECK(text::derive_seed(7, "augment") == text::derive_seed(7, "augment"));
  CHECK(text::derive_seed(7, "augment") != text::derive_seed(8, "augment"));
  CHECK(text::derive_seed(7, "augment") != text::derive_seed(7, "decode"));
}

TEST_CASE("uniform_index stays in range and covers it") {
  Rng rng(1);
  std::set<std::size_t> seen;
  for (int i = 0; i < 2000; ++i) {
    auto v = uniform_index(rng, 7);
    REQUIRE(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("portable_shuffle is a permutation and reproducible") {
  std::vector<int> a{1, 2, 3, 4, 5, 6, 7, 8};
  auto b = a;
  Rng r1(42), r2(42);
  portable_shuffle(a, r1);
  portable_shuffle(b, r2);
  CHECK(a == b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == std::vector<int>{1, 2, 3, 4, 5, 6, 7, 8});
}

TEST_CASE("jsonl write, append and read") {
  testing::TempDir dir;
  const auto path = dir / "rows.jsonl";
  jsonl::write(path, {{{"a", 1}}, {{"a", 2}}});
  jsonl::append(path, {{"a", 3}});
  auto rows = jsonl::read(path);
  REQUIRE(rows.size() == 3);
  CHECK(rows[2]["a"] == 3);
}

TEST_CASE("jsonl read reports the bad line") {
  testing::TempDir dir;
  const auto path = dir / "bad.jsonl";
  jsonl::write_text_atomic(path, "{\"a\":1}\n{oops\n");
  try {
    jsonl::read(path);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":2") != std::string::npos);
  }
}

TEST_CASE("instruction json round trip keeps lineage") {
  Instruction i;
  i.id = "m00001-001/1";
  i.text = "Do it";
  i.origin = Origin::improved;
  i.metadata_id = "m00001";
  i.iteration = 1;
  i.action_history = {"act"};
  i.lineage_id = "m00001-001";
  nlohmann::json j = i;
  auto back = j.get<Instruction>();
  CHECK(back.id == i.id);
  CHECK(back.origin == Origin::improved);
  CHECK(back.metadata_id == i.metadata_id);
  CHECK(back.action_history == i.action_history);
  CHECK(back.lineage_id == i.lineage_id);
  CHECK(is_consistent(back));
}

TEST_CASE("instruction consistency rules") {
  auto seed = Instruction::seed("s1", "x");
  CHECK(is_consistent(seed));
  seed.iteration = 1;
  CHECK_FALSE(is_consistent(seed));
  Instruction improved;
  improved.origin = Origin::improved;
  improved.iteration = 2;
  improved.action_history = {"a"};
  CHECK_FALSE(is_consistent(improved));
}

TEST_CASE("metadata_key ignores skill order") {
  InstructionMetadata a{"m1", "Coding", {"python", "sql"}, Provenance::extracted};
  InstructionMetadata b{"m2", "coding", {"sql", "python"}, Provenance::augmented};
  CHECK(metadata_key(a) == metadata_key(b));
}
