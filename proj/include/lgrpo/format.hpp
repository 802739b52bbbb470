#pragma once

// Output grammar: exactly one <think>...</think> block followed by exactly
// one <answer>...</answer> block. Whitespace around the tags is ignored and
// tag matching is case-sensitive.

#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include <nlohmann/json.hpp>

#include "lgrpo/data.hpp"
#include "lgrpo/util.hpp"

namespace lgrpo {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";

enum class FormatFailure {
  missing_think,
  missing_answer,
  bad_payload,
  multiple_blocks,
  // Non-whitespace text outside the blocks, or the answer before the think.
  stray_text,
};

inline const char* to_string(FormatFailure f) {
  switch (f) {
    case FormatFailure::missing_think: return "missing-think";
    case FormatFailure::missing_answer: return "missing-answer";
    case FormatFailure::bad_payload: return "bad-payload";
    case FormatFailure::multiple_blocks: return "multiple-blocks";
    case FormatFailure::stray_text: return "stray-text";
  }
  return "unknown";
}

// Either a value or the reason the text failed the grammar.
template <typename T>
class FormatResult {
 public:
  FormatResult(T value) : v_(std::move(value)) {}
  FormatResult(FormatFailure f) : v_(f) {}

  bool ok() const { return std::holds_alternative<T>(v_); }
  explicit operator bool() const { return ok(); }
  const T& value() const { return std::get<T>(v_); }
  const T& operator*() const { return value(); }
  const T* operator->() const { return &value(); }
  FormatFailure failure() const { return std::get<FormatFailure>(v_); }

 private:
  std::variant<T, FormatFailure> v_;
};

struct Blocks {
  std::string think;
  std::string answer;
};

struct ParsedAnswer {
  Winner choice = Winner::unknown;
  std::string raw_think;
  std::string raw_answer;
};

namespace detail {

inline std::size_t count_of(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

inline bool blank(std::string_view s) { return trim(s).empty(); }

// Payloads are accepted either as a braced JSON object or as the bare
// `"key": value` members of one.
inline std::optional<nlohmann::json> payload_object(std::string_view payload) {
  auto body = trim(payload);
  std::string text = body.starts_with('{') ? std::string(body)
                                            : "{" + std::string(body) + "}";
  auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

}  // namespace detail

inline FormatResult<Blocks> parse_blocks(std::string_view text) {
  using detail::count_of;
  if (count_of(text, kThinkOpen) > 1 || count_of(text, kThinkClose) > 1 ||
      count_of(text, kAnswerOpen) > 1 || count_of(text, kAnswerClose) > 1)
    return FormatFailure::multiple_blocks;

  const auto to = text.find(kThinkOpen);
  const auto tc = text.find(kThinkClose);
  if (to == std::string_view::npos || tc == std::string_view::npos || tc < to)
    return FormatFailure::missing_think;
  const auto ao = text.find(kAnswerOpen);
  const auto ac = text.find(kAnswerClose);
  if (ao == std::string_view::npos || ac == std::string_view::npos || ac < ao)
    return FormatFailure::missing_answer;
  if (ao < tc + kThinkClose.size()) return FormatFailure::stray_text;

  if (!detail::blank(text.substr(0, to)) ||
      !detail::blank(text.substr(tc + kThinkClose.size(), ao - tc - kThinkClose.size())) ||
      !detail::blank(text.substr(ac + kAnswerClose.size())))
    return FormatFailure::stray_text;

  Blocks b;
  b.think = trim(text.substr(to + kThinkOpen.size(), tc - to - kThinkOpen.size()));
  b.answer = trim(text.substr(ao + kAnswerOpen.size(), ac - ao - kAnswerOpen.size()));
  return b;
}

// Pairwise answer: payload must carry "preferred": "first" | "second".
inline FormatResult<ParsedAnswer> parse_answer(std::string_view text) {
  auto blocks = parse_blocks(text);
  if (!blocks) return blocks.failure();
  auto obj = detail::payload_object(blocks->answer);
  if (!obj) return FormatFailure::bad_payload;
  auto it = obj->find("preferred");
  if (it == obj->end() || !it->is_string()) return FormatFailure::bad_payload;
  ParsedAnswer out;
  if (*it == "first")
    out.choice = Winner::first;
  else if (*it == "second")
    out.choice = Winner::second;
  else
    return FormatFailure::bad_payload;
  out.raw_think = blocks->think;
  out.raw_answer = blocks->answer;
  return out;
}

struct ParsedScore {
  long rating = 0;
  std::string raw_think;
  std::string raw_answer;
};

// Absolute answer: payload must carry an integer "score" in [1, scale_max].
inline FormatResult<ParsedScore> parse_score(std::string_view text, long scale_max) {
  auto blocks = parse_blocks(text);
  if (!blocks) return blocks.failure();
  auto obj = detail::payload_object(blocks->answer);
  if (!obj) return FormatFailure::bad_payload;
  auto it = obj->find("score");
  if (it == obj->end() || !it->is_number_integer()) return FormatFailure::bad_payload;
  const long r = it->get<long>();
  if (r < 1 || r > scale_max) return FormatFailure::bad_payload;
  return ParsedScore{r, blocks->think, blocks->answer};
}

}  // namespace lgrpo
