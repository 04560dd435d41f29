#pragma once

// Rollout markup: <think>, <search>, <result>, <answer> and \boxed{} answers.
//
// Parsing is flat and total. Every byte of the source belongs to exactly one
// segment, malformed regions degrade to Plain, and validation is a separate
// pure pass over the segments.

#include <algorithm>
#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace research {

enum class SegmentKind { kThink, kSearch, kResult, kAnswer, kPlain };

constexpr std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::kThink: return "think";
    case SegmentKind::kSearch: return "search";
    case SegmentKind::kResult: return "result";
    case SegmentKind::kAnswer: return "answer";
    case SegmentKind::kPlain: return "plain";
  }
  return "plain";
}

namespace tags {
inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kSearchOpen = "<search>";
inline constexpr std::string_view kSearchClose = "</search>";
inline constexpr std::string_view kResultOpen = "<result>";
inline constexpr std::string_view kResultClose = "</result>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";
inline constexpr std::string_view kBoxedOpen = "\\boxed{";

inline constexpr std::array<std::string_view, 8> kAll = {
    kThinkOpen,  kThinkClose,  kSearchOpen, kSearchClose,
    kResultOpen, kResultClose, kAnswerOpen, kAnswerClose};

constexpr std::string_view open(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::kThink: return kThinkOpen;
    case SegmentKind::kSearch: return kSearchOpen;
    case SegmentKind::kResult: return kResultOpen;
    case SegmentKind::kAnswer: return kAnswerOpen;
    case SegmentKind::kPlain: return "";
  }
  return "";
}

constexpr std::string_view close(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::kThink: return kThinkClose;
    case SegmentKind::kSearch: return kSearchClose;
    case SegmentKind::kResult: return kResultClose;
    case SegmentKind::kAnswer: return kAnswerClose;
    case SegmentKind::kPlain: return "";
  }
  return "";
}
}  // namespace tags

/// Half-open byte range into the rollout source.
struct ByteSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const ByteSpan&) const = default;
};

struct Segment {
  SegmentKind kind = SegmentKind::kPlain;
  std::string body;  // tags excluded
  ByteSpan span;     // tags included

  bool operator==(const Segment&) const = default;
};

struct TaggedRollout {
  std::vector<Segment> segments;
  std::string source;

  /// Re-wraps every tagged body in its tags; equals `source` for parser output.
  std::string serialize() const {
    std::string out;
    out.reserve(source.size());
    for (const auto& seg : segments) {
      out += tags::open(seg.kind);
      out += seg.body;
      out += tags::close(seg.kind);
    }
    return out;
  }

  std::size_t count(SegmentKind kind) const {
    return static_cast<std::size_t>(std::count_if(
        segments.begin(), segments.end(),
        [kind](const Segment& s) { return s.kind == kind; }));
  }
};

namespace detail {

inline bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
           c == '\v';
  });
}

inline bool contains_any_tag(std::string_view s) {
  return std::any_of(tags::kAll.begin(), tags::kAll.end(), [s](auto tag) {
    return s.find(tag) != std::string_view::npos;
  });
}

inline std::optional<SegmentKind> opening_tag_at(std::string_view s,
                                                 std::size_t pos) {
  constexpr std::array<SegmentKind, 4> kinds = {
      SegmentKind::kThink, SegmentKind::kSearch, SegmentKind::kResult,
      SegmentKind::kAnswer};
  for (auto kind : kinds) {
    if (s.compare(pos, tags::open(kind).size(), tags::open(kind)) == 0) {
      return kind;
    }
  }
  return std::nullopt;
}

}  // namespace detail

/// Segments `source`; never fails. An opening tag with no matching close is
/// left in the surrounding Plain text.
inline TaggedRollout parse_rollout(std::string_view source) {
  TaggedRollout out;
  out.source = std::string(source);
  const std::size_t n = source.size();
  std::size_t plain_begin = 0;
  std::size_t i = 0;

  auto flush_plain = [&](std::size_t upto) {
    if (upto > plain_begin) {
      out.segments.push_back(
          {SegmentKind::kPlain,
           std::string(source.substr(plain_begin, upto - plain_begin)),
           {plain_begin, upto}});
    }
  };

  while (i < n) {
    const std::size_t lt = source.find('<', i);
    if (lt == std::string_view::npos) break;
    const auto kind = detail::opening_tag_at(source, lt);
    if (!kind) {
      i = lt + 1;
      continue;
    }
    const std::size_t body_begin = lt + tags::open(*kind).size();
    const std::size_t close = source.find(tags::close(*kind), body_begin);
    if (close == std::string_view::npos) {
      i = body_begin;
      continue;
    }
    flush_plain(lt);
    const std::size_t end = close + tags::close(*kind).size();
    out.segments.push_back(
        {*kind, std::string(source.substr(body_begin, close - body_begin)),
         {lt, end}});
    i = plain_begin = end;
  }
  flush_plain(n);
  return out;
}

// ---------------------------------------------------------------------------
// \boxed{} extraction

/// Content of the last balanced `\boxed{...}` in `body`.
inline std::optional<std::string> extract_boxed(std::string_view body) {
  std::size_t from = body.size();
  while (true) {
    const std::size_t pos = body.rfind(tags::kBoxedOpen, from);
    if (pos == std::string_view::npos) return std::nullopt;
    const std::size_t content_begin = pos + tags::kBoxedOpen.size();
    int depth = 1;
    for (std::size_t j = content_begin; j < body.size(); ++j) {
      if (body[j] == '{') {
        ++depth;
      } else if (body[j] == '}' && --depth == 0) {
        return std::string(body.substr(content_begin, j - content_begin));
      }
    }
    if (pos == 0) return std::nullopt;
    from = pos - 1;
  }
}

// ---------------------------------------------------------------------------
// Format validation

enum class FormatViolation {
  kUnclosedTag,
  kNestedTag,
  kResultWithoutSearch,
  kMissingAnswer,
  kMultipleAnswer,
  kAnswerNotLast,
  kMissingBoxed,
  kTruncated,
};

constexpr std::string_view to_string(FormatViolation v) {
  switch (v) {
    case FormatViolation::kUnclosedTag: return "UNCLOSED_TAG";
    case FormatViolation::kNestedTag: return "NESTED_TAG";
    case FormatViolation::kResultWithoutSearch: return "RESULT_WITHOUT_SEARCH";
    case FormatViolation::kMissingAnswer: return "MISSING_ANSWER";
    case FormatViolation::kMultipleAnswer: return "MULTIPLE_ANSWER";
    case FormatViolation::kAnswerNotLast: return "ANSWER_NOT_LAST";
    case FormatViolation::kMissingBoxed: return "MISSING_BOXED";
    case FormatViolation::kTruncated: return "TRUNCATED";
  }
  return "UNKNOWN";
}

struct FormatVerdict {
  bool is_valid = true;
  std::vector<FormatViolation> violations;  // sorted, unique

  bool has(FormatViolation v) const {
    return std::find(violations.begin(), violations.end(), v) !=
           violations.end();
  }
};

inline FormatVerdict validate_format(const TaggedRollout& rollout,
                                     bool truncated) {
  std::array<bool, 8> hit{};
  auto flag = [&](FormatViolation v) { hit[static_cast<std::size_t>(v)] = true; };

  const Segment* previous = nullptr;  // last non-blank segment
  const Segment* last_answer = nullptr;
  std::size_t answers = 0;
  for (const auto& seg : rollout.segments) {
    switch (seg.kind) {
      case SegmentKind::kPlain:
        if (detail::contains_any_tag(seg.body)) flag(FormatViolation::kUnclosedTag);
        break;
      case SegmentKind::kResult:
        // Retrieved text may contain anything; only the pairing is checked.
        if (previous == nullptr || previous->kind != SegmentKind::kSearch) {
          flag(FormatViolation::kResultWithoutSearch);
        }
        break;
      case SegmentKind::kAnswer:
        ++answers;
        last_answer = &seg;
        [[fallthrough]];
      default:
        if (detail::contains_any_tag(seg.body)) flag(FormatViolation::kNestedTag);
        break;
    }
    if (seg.kind != SegmentKind::kPlain || !detail::is_blank(seg.body)) {
      previous = &seg;
    }
  }

  if (answers == 0) flag(FormatViolation::kMissingAnswer);
  if (answers > 1) flag(FormatViolation::kMultipleAnswer);
  if (last_answer != nullptr) {
    if (previous != last_answer) flag(FormatViolation::kAnswerNotLast);
    if (!extract_boxed(last_answer->body)) flag(FormatViolation::kMissingBoxed);
  }
  if (truncated) flag(FormatViolation::kTruncated);

  FormatVerdict verdict;
  for (std::size_t k = 0; k < hit.size(); ++k) {
    if (hit[k]) verdict.violations.push_back(static_cast<FormatViolation>(k));
  }
  verdict.is_valid = verdict.violations.empty();
  return verdict;
}

// ---------------------------------------------------------------------------
// Streaming stop detection

inline const std::vector<std::string>& default_eos_markers() {
  static const std::vector<std::string> markers = {"<|endoftext|>",
                                                   "<|im_end|>"};
  return markers;
}

/// Carries the accumulated stream so a stop marker split across chunks is
/// still found. Single owner; advance with scan_stream.
struct StreamScanState {
  std::vector<std::string> markers;
  std::string text;
  std::size_t checked_end = 0;  // every end position <= this has been tested
  std::optional<std::size_t> stop;

  StreamScanState() : StreamScanState(std::string(tags::kSearchClose)) {}

  explicit StreamScanState(std::string search_close) {
    markers.push_back(std::move(search_close));
    for (const auto& m : default_eos_markers()) markers.push_back(m);
  }

  explicit StreamScanState(std::vector<std::string> stop_markers)
      : markers(std::move(stop_markers)) {}

  const std::string& accumulated() const { return text; }
};

struct StreamScanResult {
  StreamScanState state;
  std::optional<std::size_t> stop_hit;  // end offset of the marker
};

/// Appends `chunk` and reports the smallest end offset of any stop marker in
/// the accumulated stream. Once found, the stop is sticky.
inline StreamScanResult scan_stream(std::string_view chunk,
                                    StreamScanState state) {
  state.text.append(chunk);
  if (!state.stop) {
    const std::string_view text = state.text;
    for (std::size_t end = state.checked_end + 1; end <= text.size(); ++end) {
      for (const auto& marker : state.markers) {
        if (!marker.empty() && marker.size() <= end &&
            text.compare(end - marker.size(), marker.size(), marker) == 0) {
          state.stop = end;
          break;
        }
      }
      state.checked_end = end;
      if (state.stop) break;
    }
  }
  auto stop = state.stop;
  return {std::move(state), stop};
}

}  // namespace research
