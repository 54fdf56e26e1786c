#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace synthalign::prompts {

enum class TemplateName {
  encode_metadata,
  decode_basic,
  rubric_action,
  improve_instruction,
  cf_scorer,
  judge,
};

inline constexpr std::array<TemplateName, 6> kAllTemplates{
    TemplateName::encode_metadata, TemplateName::decode_basic,
    TemplateName::rubric_action,   TemplateName::improve_instruction,
    TemplateName::cf_scorer,       TemplateName::judge};

std::string_view to_string(TemplateName name);
TemplateName template_from_string(std::string_view s);

using Bindings = std::map<std::string, std::string, std::less<>>;

/// Placeholders are written `{{name}}` in template bodies.
struct PromptTemplate {
  TemplateName name;
  std::string body;
  std::set<std::string, std::less<>> required_placeholders;
};

/// Placeholder names found in a body, in order of first appearance.
std::vector<std::string> placeholders_in(std::string_view body);

/// Immutable set of templates. Defaults are compiled in; a directory of
/// `<name>.txt` files replaces individual bodies.
class PromptRegistry {
 public:
  static const PromptRegistry& defaults();
  /// Defaults overridden by whatever `<name>.txt` files exist in `dir`.
  /// An override must use exactly the default's placeholder set.
  static PromptRegistry with_overrides(const std::filesystem::path& dir);

  const PromptTemplate& get(TemplateName name) const;

  /// Substitutes every placeholder verbatim in a single pass. Throws
  /// missing_placeholder naming the first absent key.
  std::string render(TemplateName name, const Bindings& bindings) const;

 private:
  PromptRegistry();
  std::map<TemplateName, PromptTemplate> templates_;
};

inline std::string render(TemplateName name, const Bindings& bindings) {
  return PromptRegistry::defaults().render(name, bindings);
}

// ---------------------------------------------------------------------------
// Output parsers

struct ParsedMetadata {
  std::string use_case;
  std::vector<std::string> skills;
};

inline constexpr std::size_t kMaxSkills = 3;

/// Reads the "Use case:" (or "Task:") and "Skills:" lines. Skills are split
/// on commas, trimmed, lowercased, deduplicated and capped at three.
ParsedMetadata parse_metadata(std::string_view raw);

struct ParsedList {
  std::vector<std::string> items;
  bool count_mismatch = false;
};

/// Items of a numbered ("1." / "1)") or dashed ("- " / "* ") list. Unmarked
/// lines before the first item are ignored; indented lines continue the
/// previous item.
ParsedList parse_numbered_list(std::string_view raw,
                               std::optional<std::size_t> expected_count = std::nullopt);

struct ParsedScores {
  double score_a = 0;
  double score_b = 0;
  bool out_of_range = false;
  // Everything after the score line, verbatim. Logged, never interpreted.
  std::string explanation;
};

inline constexpr int kDefaultScoreScale = 10;

/// Scores from the first line holding exactly two numeric tokens, clamped
/// to [1, scale].
ParsedScores parse_scores(std::string_view raw, int scale = kDefaultScoreScale);

/// Numeric tokens in one line (helper exposed for tests).
std::vector<double> numeric_tokens(std::string_view line);

struct ParsedRubrics {
  std::vector<std::string> rubrics;
  std::vector<std::string> actions;
};

/// Splits a rubric/action answer into its two lists. A non-list line that
/// mentions "action" starts the actions section; without such a heading a
/// restart of the numbering does, and failing that the items are halved.
ParsedRubrics parse_rubrics_actions(std::string_view raw);

// ---------------------------------------------------------------------------
// Formatters (the grammar the parsers accept)

std::string format_numbered_list(const std::vector<std::string>& items);
std::string format_metadata(std::string_view use_case, const std::vector<std::string>& skills,
                            std::string_view label = "Use case");
std::string format_scores(double a, double b, std::string_view explanation = {});
std::string format_rubrics_actions(const std::vector<std::string>& rubrics,
                                   const std::vector<std::string>& actions);
/// Shortest decimal representation ("8", "8.5").
std::string format_number(double value);

}  // namespace synthalign::prompts
