#include "synthalign/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>

#include "synthalign/embedded_templates.hpp"
#include "synthalign/error.hpp"
#include "synthalign/jsonl.hpp"
#include "synthalign/text.hpp"

namespace synthalign::prompts {

namespace {

bool is_placeholder_char(char c) {
  return std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) ||
         c == '_';
}

// Calls on_literal(text) and on_placeholder(name) in body order.
template <typename Literal, typename Placeholder>
void scan_template(std::string_view body, Literal&& on_literal, Placeholder&& on_placeholder) {
  std::size_t pos = 0;
  while (pos < body.size()) {
    const auto open = body.find("{{", pos);
    if (open == std::string_view::npos) break;
    const auto close = body.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    const auto name = body.substr(open + 2, close - open - 2);
    if (name.empty() || !std::all_of(name.begin(), name.end(), is_placeholder_char)) {
      on_literal(body.substr(pos, open + 2 - pos));
      pos = open + 2;
      continue;
    }
    on_literal(body.substr(pos, open - pos));
    on_placeholder(name);
    pos = close + 2;
  }
  on_literal(body.substr(std::min(pos, body.size())));
}

std::set<std::string, std::less<>> placeholder_set(std::string_view body) {
  auto names = placeholders_in(body);
  return {names.begin(), names.end()};
}

struct ListItem {
  std::string text;
  long number;  // -1 for bullets
  std::size_t line;
};

// Returns the item text when `line` opens a list item.
std::optional<std::pair<std::string_view, long>> list_marker(std::string_view line) {
  const auto body = text::trim(line);
  if (body.empty()) return std::nullopt;
  std::size_t i = 0;
  while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) ++i;
  if (i > 0 && i < body.size() && (body[i] == '.' || body[i] == ')')) {
    if (i + 1 == body.size() || std::isspace(static_cast<unsigned char>(body[i + 1]))) {
      long number = std::strtol(std::string(body.substr(0, i)).c_str(), nullptr, 10);
      return std::pair{text::trim(body.substr(i + 1)), number};
    }
    return std::nullopt;
  }
  if (i == 0 && body.size() >= 2 && (body[0] == '-' || body[0] == '*') &&
      std::isspace(static_cast<unsigned char>(body[1]))) {
    return std::pair{text::trim(body.substr(2)), -1L};
  }
  if (body.starts_with("\xE2\x80\xA2")) {  // bullet
    return std::pair{text::trim(body.substr(3)), -1L};
  }
  return std::nullopt;
}

std::vector<ListItem> list_items(std::string_view raw) {
  std::vector<ListItem> items;
  const auto lines = text::split_lines(raw);
  bool continuing = false;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto line = lines[n];
    if (text::trim(line).empty()) continue;
    if (auto marker = list_marker(line)) {
      items.push_back({std::string(marker->first), marker->second, n});
      continuing = true;
      continue;
    }
    const bool indented = std::isspace(static_cast<unsigned char>(line.front())) != 0;
    if (indented && continuing && !items.empty()) {
      auto& item = items.back().text;
      if (!item.empty()) item += '\n';
      item += text::trim(line);
    } else {
      continuing = false;
    }
  }
  std::erase_if(items, [](const ListItem& item) { return item.text.empty(); });
  return items;
}

std::string strip_emphasis(std::string_view line) {
  std::string out;
  for (char c : line) {
    if (c != '*') out.push_back(c);
  }
  return out;
}

std::string_view strip_trailing_period(std::string_view s) {
  s = text::trim(s);
  while (!s.empty() && s.back() == '.') s.remove_suffix(1);
  return text::trim(s);
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

}  // namespace

std::string_view to_string(TemplateName name) {
  switch (name) {
    case TemplateName::encode_metadata: return "encode_metadata";
    case TemplateName::decode_basic: return "decode_basic";
    case TemplateName::rubric_action: return "rubric_action";
    case TemplateName::improve_instruction: return "improve_instruction";
    case TemplateName::cf_scorer: return "cf_scorer";
    case TemplateName::judge: return "judge";
  }
  return "unknown";
}

TemplateName template_from_string(std::string_view s) {
  for (auto name : kAllTemplates) {
    if (to_string(name) == s) return name;
  }
  fail(ErrorCode::config, "unknown template '" + std::string(s) + "'");
}

std::vector<std::string> placeholders_in(std::string_view body) {
  std::vector<std::string> names;
  scan_template(
      body, [](std::string_view) {},
      [&](std::string_view name) {
        if (std::find(names.begin(), names.end(), name) == names.end()) names.emplace_back(name);
      });
  return names;
}

PromptRegistry::PromptRegistry() {
  for (const auto& asset : embedded::kTemplates) {
    const auto name = template_from_string(asset.name);
    templates_[name] = PromptTemplate{name, std::string(asset.body), placeholder_set(asset.body)};
  }
}

const PromptRegistry& PromptRegistry::defaults() {
  static const PromptRegistry registry;
  return registry;
}

PromptRegistry PromptRegistry::with_overrides(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    fail(ErrorCode::config, "templates directory " + dir.string() + " does not exist");
  }
  PromptRegistry registry;
  for (auto& [name, tmpl] : registry.templates_) {
    const auto path = dir / (std::string(to_string(name)) + ".txt");
    if (!std::filesystem::exists(path)) continue;
    auto body = jsonl::read_text(path);
    auto found = placeholder_set(body);
    if (found != tmpl.required_placeholders) {
      std::vector<std::string> expected(tmpl.required_placeholders.begin(),
                                        tmpl.required_placeholders.end());
      fail(ErrorCode::config, path.string() + " must use exactly the placeholders {" +
                                  text::join(expected, ", ") + "}");
    }
    tmpl.body = std::move(body);
  }
  return registry;
}

const PromptTemplate& PromptRegistry::get(TemplateName name) const { return templates_.at(name); }

std::string PromptRegistry::render(TemplateName name, const Bindings& bindings) const {
  const auto& tmpl = get(name);
  for (const auto& required : placeholders_in(tmpl.body)) {
    if (bindings.find(required) == bindings.end()) {
      fail(ErrorCode::missing_placeholder, "template " + std::string(to_string(name)) +
                                               " is missing placeholder '" + required + "'");
    }
  }
  std::string out;
  out.reserve(tmpl.body.size() + 256);
  scan_template(
      tmpl.body, [&](std::string_view literal) { out += literal; },
      [&](std::string_view placeholder) { out += bindings.find(placeholder)->second; });
  return out;
}

// ---------------------------------------------------------------------------

ParsedMetadata parse_metadata(std::string_view raw) {
  if (text::trim(raw).empty()) fail(ErrorCode::unparseable_output, "metadata output is empty");
  std::optional<std::string> use_case;
  std::optional<std::string> skills_line;
  for (auto line_view : text::split_lines(raw)) {
    const auto cleaned = strip_emphasis(line_view);
    const auto line = text::trim(cleaned);
    auto value_after = [&](std::string_view label) -> std::optional<std::string> {
      if (!text::starts_with_ci(line, label)) return std::nullopt;
      return std::string(strip_trailing_period(line.substr(label.size())));
    };
    if (!use_case) {
      if (auto v = value_after("use case:")) {
        use_case = *v;
        continue;
      }
      if (auto v = value_after("task:")) {
        use_case = *v;
        continue;
      }
    }
    if (!skills_line) {
      if (auto v = value_after("skills:")) skills_line = *v;
    }
  }
  if (!use_case || use_case->empty()) {
    fail(ErrorCode::unparseable_output, "metadata output has no \"Use case:\" or \"Task:\" line");
  }
  ParsedMetadata parsed;
  parsed.use_case = *use_case;
  if (skills_line) {
    for (const auto& part : text::split(*skills_line, ',')) {
      auto skill = text::to_lower(strip_trailing_period(part));
      if (skill.empty()) continue;
      if (std::find(parsed.skills.begin(), parsed.skills.end(), skill) != parsed.skills.end()) {
        continue;
      }
      parsed.skills.push_back(std::move(skill));
      if (parsed.skills.size() == kMaxSkills) break;
    }
  }
  if (parsed.skills.empty()) {
    fail(ErrorCode::unparseable_output, "metadata output has no skills");
  }
  return parsed;
}

ParsedList parse_numbered_list(std::string_view raw, std::optional<std::size_t> expected_count) {
  if (text::trim(raw).empty()) fail(ErrorCode::unparseable_output, "list output is empty");
  ParsedList parsed;
  for (auto& item : list_items(raw)) parsed.items.push_back(std::move(item.text));
  if (parsed.items.empty()) fail(ErrorCode::unparseable_output, "no list items found");
  parsed.count_mismatch = expected_count && parsed.items.size() != *expected_count;
  return parsed;
}

std::vector<double> numeric_tokens(std::string_view line) {
  std::vector<double> out;
  std::size_t i = 0;
  while (i < line.size()) {
    const char c = line[i];
    const bool sign = (c == '+' || c == '-') && i + 1 < line.size() &&
                      std::isdigit(static_cast<unsigned char>(line[i + 1]));
    if (!std::isdigit(static_cast<unsigned char>(c)) && !sign) {
      ++i;
      continue;
    }
    const bool clean_start = i == 0 || (!is_word_char(line[i - 1]) && line[i - 1] != '.');
    std::size_t j = i + (sign ? 1 : 0);
    while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
    if (j + 1 < line.size() && line[j] == '.' &&
        std::isdigit(static_cast<unsigned char>(line[j + 1]))) {
      ++j;
      while (j < line.size() && std::isdigit(static_cast<unsigned char>(line[j]))) ++j;
    }
    const bool clean_end = j == line.size() || !is_word_char(line[j]);
    if (clean_start && clean_end) {
      out.push_back(std::strtod(std::string(line.substr(i, j - i)).c_str(), nullptr));
      i = j;
    } else {
      while (j < line.size() && (is_word_char(line[j]) || line[j] == '.')) ++j;
      i = std::max(j, i + 1);
    }
  }
  return out;
}

ParsedScores parse_scores(std::string_view raw, int scale) {
  if (text::trim(raw).empty()) fail(ErrorCode::unparseable_output, "score output is empty");
  require(scale >= 1, "score scale must be positive");
  const auto lines = text::split_lines(raw);
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto numbers = numeric_tokens(lines[n]);
    if (numbers.size() != 2) continue;
    ParsedScores scores;
    auto clamp = [&](double v) {
      const double hi = static_cast<double>(scale);
      if (v < 1.0 || v > hi) scores.out_of_range = true;
      return std::clamp(v, 1.0, hi);
    };
    scores.score_a = clamp(numbers[0]);
    scores.score_b = clamp(numbers[1]);
    std::vector<std::string> rest;
    for (std::size_t k = n + 1; k < lines.size(); ++k) rest.emplace_back(lines[k]);
    scores.explanation = std::string(text::trim(text::join(rest, "\n")));
    return scores;
  }
  fail(ErrorCode::unparseable_output, "no line holds exactly two scores");
}

ParsedRubrics parse_rubrics_actions(std::string_view raw) {
  if (text::trim(raw).empty()) fail(ErrorCode::unparseable_output, "rubric output is empty");
  const auto lines = text::split_lines(raw);
  std::optional<std::size_t> heading;
  bool seen_item = false;
  for (std::size_t n = 0; n < lines.size(); ++n) {
    const auto line = lines[n];
    if (text::trim(line).empty()) continue;
    if (list_marker(line)) {
      seen_item = true;
      continue;
    }
    const bool indented = std::isspace(static_cast<unsigned char>(line.front())) != 0;
    if (seen_item && !indented && text::contains_ci(line, "action")) {
      heading = n;
      break;
    }
  }
  auto items = list_items(raw);
  ParsedRubrics parsed;
  auto take = [](auto first, auto last) {
    std::vector<std::string> out;
    for (auto it = first; it != last; ++it) out.push_back(it->text);
    return out;
  };
  auto split_at = items.end();
  if (heading) {
    split_at = std::find_if(items.begin(), items.end(),
                            [&](const ListItem& item) { return item.line > *heading; });
  } else {
    for (auto it = std::next(items.begin(), items.empty() ? 0 : 1); it != items.end(); ++it) {
      if (it->number == 1) {
        split_at = it;
        break;
      }
    }
    if (split_at == items.end() && items.size() % 2 == 0) {
      split_at = std::next(items.begin(), static_cast<long>(items.size() / 2));
    }
  }
  parsed.rubrics = take(items.begin(), split_at);
  parsed.actions = take(split_at, items.end());
  if (parsed.rubrics.empty() || parsed.actions.empty()) {
    fail(ErrorCode::unparseable_output, "could not separate rubrics from actions");
  }
  return parsed;
}

// ---------------------------------------------------------------------------

std::string format_number(double value) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, end);
}

std::string format_numbered_list(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out += std::to_string(i + 1) + ". ";
    bool first = true;
    for (auto line : text::split_lines(items[i])) {
      if (!first) out += "\n   ";
      out += line;
      first = false;
    }
    out += '\n';
  }
  return out;
}

std::string format_metadata(std::string_view use_case, const std::vector<std::string>& skills,
                            std::string_view label) {
  return std::string(label) + ": " + std::string(use_case) + "\nSkills: " + text::join(skills, ", ") +
         "\n";
}

std::string format_scores(double a, double b, std::string_view explanation) {
  auto out = format_number(a) + " " + format_number(b);
  if (!explanation.empty()) {
    out += '\n';
    out += explanation;
  }
  return out;
}

std::string format_rubrics_actions(const std::vector<std::string>& rubrics,
                                   const std::vector<std::string>& actions) {
  return "Rubrics:\n" + format_numbered_list(rubrics) + "\nActions:\n" +
         format_numbered_list(actions);
}

}  // namespace synthalign::prompts
