#pragma once

// Rule-based rollout reward and answer metrics (token F1, exact match).

#include <algorithm>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "research/error.hpp"
#include "research/rollout.hpp"
#include "research/tag_grammar.hpp"

namespace research {

namespace detail {

inline bool is_ascii_punct(unsigned char c) {
  return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') ||
         (c >= '[' && c <= '`') || (c >= '{' && c <= '~');
}

}  // namespace detail

/// Lowercase (ASCII and Latin-1 letters), strip ASCII punctuation, split on
/// whitespace, drop the articles a/an/the. Diacritics are kept.
inline std::vector<std::string> normalize_answer(std::string_view s) {
  std::string cleaned;
  cleaned.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (c < 0x80) {
      if (detail::is_ascii_punct(c)) continue;
      cleaned.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c + 32) : static_cast<char>(c));
    } else if (c == 0xC3 && i + 1 < s.size()) {
      // U+00C0..U+00DE map to U+00E0..U+00FE, except U+00D7 (multiplication sign).
      auto next = static_cast<unsigned char>(s[i + 1]);
      if (next >= 0x80 && next <= 0x9E && next != 0x97) next += 0x20;
      cleaned.push_back(static_cast<char>(c));
      cleaned.push_back(static_cast<char>(next));
      ++i;
    } else {
      cleaned.push_back(static_cast<char>(c));
    }
  }

  std::vector<std::string> tokens;
  for (const auto& span : whitespace_token_spans(cleaned)) {
    std::string tok = cleaned.substr(span.begin, span.size());
    if (tok == "a" || tok == "an" || tok == "the") continue;
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

/// Multiset-overlap F1 between already-normalized token lists.
inline double token_f1(const std::vector<std::string>& pred,
                       const std::vector<std::string>& gold) {
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<std::string_view, int> counts;
  for (const auto& t : gold) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : pred) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(pred.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(gold.size());
  return 2.0 * precision * recall / (precision + recall);
}

inline double f1_score(std::string_view pred, std::string_view gold) {
  return token_f1(normalize_answer(pred), normalize_answer(gold));
}

inline bool exact_match(std::string_view pred, std::string_view gold) {
  return normalize_answer(pred) == normalize_answer(gold);
}

inline double max_f1(std::string_view pred, const std::vector<std::string>& golds) {
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, f1_score(pred, g));
  return best;
}

inline bool any_exact_match(std::string_view pred, const std::vector<std::string>& golds) {
  return std::any_of(golds.begin(), golds.end(),
                     [&](const std::string& g) { return exact_match(pred, g); });
}

inline constexpr double kFormatOnlyReward = 0.1;

struct RewardBreakdown {
  double f1 = 0.0;
  bool format_ok = false;
  double reward = 0.0;
  std::string pred;  // boxed content of the final answer, empty if none
};

/// f1 when positive, else 0.1 for a well-formed rollout, else 0.
inline double reward_from(double f1, bool format_ok) {
  if (f1 > 0.0) return f1;
  return format_ok ? kFormatOnlyReward : 0.0;
}

/// Boxed content of the last Answer segment.
inline std::string predicted_answer(const TaggedRollout& rollout) {
  for (auto it = rollout.segments.rbegin(); it != rollout.segments.rend(); ++it) {
    if (it->kind == SegmentKind::kAnswer) return extract_boxed(it->body).value_or("");
  }
  return {};
}

inline RewardBreakdown compute_reward(const TaggedRollout& rollout, bool truncated,
                                      const std::vector<std::string>& gold_answers) {
  if (gold_answers.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "gold_answers must be non-empty");
  }
  RewardBreakdown out;
  out.pred = predicted_answer(rollout);
  out.f1 = max_f1(out.pred, gold_answers);
  out.format_ok = validate_format(rollout, truncated).is_valid;
  out.reward = reward_from(out.f1, out.format_ok);
  return out;
}

inline RewardBreakdown compute_reward(const RolloutRecord& rollout,
                                      const std::vector<std::string>& gold_answers) {
  return compute_reward(rollout.segments, rollout.truncated, gold_answers);
}

}  // namespace research
