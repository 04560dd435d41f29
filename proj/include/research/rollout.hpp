#pragma once

// Rollout orchestration: generate until </search> or end of sequence, call the
// retriever with the query, inject <result>...</result>, resume. Every token of
// the completion is labeled with its origin so injected text can be masked out
// of the loss.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "research/error.hpp"
#include "research/retrieval.hpp"
#include "research/tag_grammar.hpp"

namespace research {

// ---------------------------------------------------------------------------
// Prompts

enum class PromptMode { kBase, kInstruct };

constexpr std::string_view to_string(PromptMode mode) {
  return mode == PromptMode::kBase ? "base" : "instruct";
}

namespace prompts {

inline constexpr std::string_view kFormatInstructions =
    "The reasoning process and answer are enclosed within <think> </think> and "
    "<answer> </answer> tags respectively, and the search query and result are "
    "enclosed within <search> </search> and <result> </result> tags respectively. "
    "For example, <think> This is the reasoning process. </think> <search> search "
    "query here </search> <result> search result here </result> <think> This is "
    "the reasoning process. </think> <answer> The final answer is \\boxed{answer "
    "here} </answer>. In the last part of the answer, the final exact answer is "
    "enclosed within \\boxed{} with latex format.";

inline const std::string& base_template_head() {
  static const std::string head =
      "A conversation between User and Assistant. The user asks a question, and "
      "the assistant solves it. The assistant first thinks about the reasoning "
      "process in the mind and then provides the user with the answer. During "
      "thinking, the assistant can invoke the wikipedia search tool to search for "
      "fact information about specific topics if needed. " +
      std::string(kFormatInstructions) + " User: ";
  return head;
}

inline constexpr std::string_view kBaseTemplateTail = ". Assistant:";

inline const std::string& instruct_system_prompt() {
  static const std::string system =
      "You are a helpful assistant that can solve the given question step by step "
      "with the help of the wikipedia search tool. Given a question, you need to "
      "first think about the reasoning process in the mind and then provide the "
      "answer. During thinking, you can invoke the wikipedia search tool to search "
      "for fact information about specific topics if needed. " +
      std::string(kFormatInstructions);
  return system;
}

}  // namespace prompts

struct Prompt {
  PromptMode mode = PromptMode::kBase;
  std::string system;  // Instruct only
  std::string user;    // the question (Instruct) or empty
  std::string text;    // Base: the filled template. Instruct: system + "\n\n" + user

  bool operator==(const Prompt&) const = default;
};

inline Prompt build_prompt(std::string_view question, PromptMode mode) {
  if (question.empty()) throw Error(ErrorCode::kEmptyQuestion, "question is empty");
  Prompt p;
  p.mode = mode;
  if (mode == PromptMode::kBase) {
    p.text = prompts::base_template_head();
    p.text += question;
    p.text += prompts::kBaseTemplateTail;
  } else {
    p.system = prompts::instruct_system_prompt();
    p.user = std::string(question);
    p.text = p.system + "\n\n" + p.user;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Policy interface

enum class StopReason { kStopMarker, kEos, kLength };

constexpr std::string_view to_string(StopReason r) {
  switch (r) {
    case StopReason::kStopMarker: return "stop";
    case StopReason::kEos: return "eos";
    case StopReason::kLength: return "length";
  }
  return "eos";
}

/// A token as reported by the generator. `label` is an opaque per-token tag a
/// policy may attach (the tabular toy policy stores its decision index there);
/// -1 means none.
struct GeneratedToken {
  std::string text;
  double logprob = 0.0;
  int label = -1;
};

struct GenerationResult {
  std::string text;
  StopReason stopped_on = StopReason::kEos;
  /// Optional. When present and their texts concatenate to `text`, these
  /// boundaries replace whitespace tokenization.
  std::vector<GeneratedToken> tokens;
};

struct GenerationRequest {
  const Prompt* prompt = nullptr;
  std::string_view completion;  // everything produced so far, results included
  std::vector<std::string> stop_markers;
  std::size_t max_new_tokens = 0;
  double temperature = 1.0;

  std::string prompt_so_far() const { return prompt->text + std::string(completion); }
};

/// One sampling session. Single owner; not required to be thread-safe.
class PolicyGenerator {
 public:
  virtual ~PolicyGenerator() = default;
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

/// Creates an independent session for one rollout.
using PolicyFactory = std::function<std::unique_ptr<PolicyGenerator>(std::uint64_t seed)>;

// ---------------------------------------------------------------------------
// Tokens and records

enum class TokenOrigin { kPolicy, kInjected };

struct RolloutToken {
  ByteSpan span;  // into RolloutRecord::completion
  TokenOrigin origin = TokenOrigin::kPolicy;
  std::optional<double> logprob;  // only when the generator reported it
  int label = -1;
};

/// Whitespace-delimited pieces of `text`, offset by `base`.
inline std::vector<ByteSpan> whitespace_token_spans(std::string_view text,
                                                    std::size_t base = 0) {
  std::vector<ByteSpan> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_blank(text.substr(i, 1))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !detail::is_blank(text.substr(i, 1))) ++i;
    if (i > start) out.push_back({base + start, base + i});
  }
  return out;
}

struct RolloutRecord {
  std::string question;
  Prompt prompt;
  std::string completion;
  TaggedRollout segments;
  std::vector<RolloutToken> tokens;  // the origin mask lives here
  std::vector<std::string> queries;  // as passed to the retriever, in order
  std::size_t search_count = 0;
  bool truncated = false;
  std::size_t policy_token_count = 0;

  std::size_t injected_token_count() const { return tokens.size() - policy_token_count; }

  std::vector<TokenOrigin> origin_mask() const {
    std::vector<TokenOrigin> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(t.origin);
    return out;
  }
};

struct RolloutBudget {
  std::size_t max_search_calls = 8;
  std::size_t max_total_tokens = 4096;
  std::size_t max_tokens_per_turn = 1024;

  void validate() const {
    if (max_search_calls == 0 || max_total_tokens == 0 || max_tokens_per_turn == 0) {
      throw Error(ErrorCode::kInvalidArgument, "rollout budget fields must be > 0");
    }
  }
};

inline constexpr std::string_view kNoResultsSentinel = "No results found.";

/// `"title", text` per hit, joined by a literal backslash-n.
inline std::string render_hits(const std::vector<RetrievalHit>& hits) {
  if (hits.empty()) return std::string(kNoResultsSentinel);
  std::string out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (i > 0) out += "\\n";
    out += '"';
    out += hits[i].title;
    out += "\", ";
    out += hits[i].text;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Engine

namespace detail {

struct Turn {
  std::string text;
  StopReason stop;
  std::vector<GeneratedToken> tokens;  // empty when they could not be aligned
};

/// Cuts the turn right after the first </search> and makes sure a turn that
/// stopped on the marker actually ends with it.
inline Turn normalize_turn(GenerationResult gen) {
  Turn turn{std::move(gen.text), gen.stopped_on, std::move(gen.tokens)};
  const auto close = turn.text.find(tags::kSearchClose);
  if (close != std::string::npos) {
    turn.text.resize(close + tags::kSearchClose.size());
    turn.stop = StopReason::kStopMarker;
  } else if (turn.stop == StopReason::kStopMarker) {
    turn.text += tags::kSearchClose;  // endpoint trimmed the marker
  }

  // Keep reported tokens only if they tile the final text, allowing for an
  // appended marker or a cut that falls on a token boundary.
  std::size_t covered = 0;
  std::size_t keep = 0;
  for (; keep < turn.tokens.size() && covered < turn.text.size(); ++keep) {
    const auto& t = turn.tokens[keep].text;
    if (turn.text.compare(covered, t.size(), t) != 0) {
      covered = std::string::npos;
      break;
    }
    covered += t.size();
  }
  if (covered == std::string::npos || covered > turn.text.size()) {
    turn.tokens.clear();
  } else {
    turn.tokens.resize(keep);
    if (covered < turn.text.size()) {
      const std::string_view rest = std::string_view(turn.text).substr(covered);
      if (rest == tags::kSearchClose && !turn.tokens.empty()) {
        turn.tokens.push_back({std::string(rest), 0.0, -1});
      } else {
        turn.tokens.clear();
      }
    }
  }
  return turn;
}

inline void append_piece(RolloutRecord& rec, std::string_view text, TokenOrigin origin,
                         const std::vector<GeneratedToken>& reported = {}) {
  const std::size_t base = rec.completion.size();
  const std::size_t first_new = rec.tokens.size();
  rec.completion += text;
  if (!reported.empty()) {
    std::size_t offset = base;
    for (const auto& t : reported) {
      if (!t.text.empty()) {
        rec.tokens.push_back({{offset, offset + t.text.size()}, origin, t.logprob, t.label});
      }
      offset += t.text.size();
    }
  } else {
    for (const auto& span : whitespace_token_spans(text, base)) {
      rec.tokens.push_back({span, origin, std::nullopt, -1});
    }
  }
  if (origin == TokenOrigin::kPolicy) rec.policy_token_count += rec.tokens.size() - first_new;
}

inline std::string extract_query(std::string_view completion, std::size_t turn_begin) {
  const std::size_t close = completion.size() - tags::kSearchClose.size();
  const std::size_t open = completion.rfind(tags::kSearchOpen, close);
  const std::size_t begin =
      open == std::string_view::npos ? turn_begin : open + tags::kSearchOpen.size();
  if (begin > close) return {};
  return std::string(completion.substr(begin, close - begin));
}

}  // namespace detail

inline RolloutRecord run_rollout(const Prompt& prompt, PolicyGenerator& policy,
                                 const Retriever& retriever, const RolloutBudget& budget,
                                 std::size_t top_k, double temperature = 1.0) {
  budget.validate();
  if (top_k == 0) throw Error(ErrorCode::kInvalidArgument, "top_k must be >= 1");

  RolloutRecord rec;
  rec.prompt = prompt;
  rec.question = prompt.mode == PromptMode::kInstruct ? prompt.user : std::string();
  if (prompt.mode == PromptMode::kBase) {
    const auto& head = prompts::base_template_head();
    const auto tail = prompts::kBaseTemplateTail;
    if (prompt.text.size() >= head.size() + tail.size()) {
      rec.question = prompt.text.substr(head.size(),
                                        prompt.text.size() - head.size() - tail.size());
    }
  }

  const std::vector<std::string> stops = {std::string(tags::kSearchClose)};
  while (true) {
    if (rec.tokens.size() >= budget.max_total_tokens) {
      rec.truncated = true;
      break;
    }
    const std::size_t allowance = std::min(budget.max_tokens_per_turn,
                                           budget.max_total_tokens - rec.tokens.size());
    GenerationRequest request{&prompt, rec.completion, stops, allowance, temperature};
    GenerationResult gen;
    try {
      gen = policy.generate(request);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kPolicyUnavailable, e.what());
    }
    auto turn = detail::normalize_turn(std::move(gen));

    if (turn.stop == StopReason::kStopMarker &&
        rec.search_count >= budget.max_search_calls) {
      // Over-budget search: the unanswered query is not kept.
      rec.truncated = true;
      break;
    }

    const std::size_t turn_begin = rec.completion.size();
    detail::append_piece(rec, turn.text, TokenOrigin::kPolicy, turn.tokens);

    if (turn.stop == StopReason::kEos) break;
    if (turn.stop == StopReason::kLength) {
      rec.truncated = true;
      break;
    }

    std::string query = detail::extract_query(rec.completion, turn_begin);
    std::vector<RetrievalHit> hits;
    try {
      hits = retriever.search(query, top_k);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kRetrieverUnavailable) throw;
      throw Error(ErrorCode::kRetrieverUnavailable, e.what());
    } catch (const std::exception& e) {
      throw Error(ErrorCode::kRetrieverUnavailable, e.what());
    }
    rec.queries.push_back(std::move(query));
    ++rec.search_count;
    std::string block(tags::kResultOpen);
    block += render_hits(hits);
    block += tags::kResultClose;
    detail::append_piece(rec, block, TokenOrigin::kInjected);
  }

  rec.segments = parse_rollout(rec.completion);
  return rec;
}

inline RolloutRecord run_rollout(std::string_view question, PromptMode mode,
                                 PolicyGenerator& policy, const Retriever& retriever,
                                 const RolloutBudget& budget, std::size_t top_k,
                                 double temperature = 1.0) {
  return run_rollout(build_prompt(question, mode), policy, retriever, budget, top_k,
                     temperature);
}

struct GroupOptions {
  std::size_t group_size = 5;
  RolloutBudget budget;
  std::size_t top_k = 5;
  double temperature = 1.0;
  std::uint64_t base_seed = 0;  // rollout i uses base_seed + i
  bool parallel = false;
};

/// G independent rollouts for one prompt, ordered by rollout index. If any
/// rollout fails the whole group is rejected with that rollout's error.
inline std::vector<RolloutRecord> run_group(const Prompt& prompt, const PolicyFactory& factory,
                                            const Retriever& retriever,
                                            const GroupOptions& opts) {
  if (opts.group_size < 2) {
    throw Error(ErrorCode::kGroupTooSmall, "group_size must be >= 2");
  }
  auto one = [&](std::size_t i) {
    auto policy = factory(opts.base_seed + i);
    return run_rollout(prompt, *policy, retriever, opts.budget, opts.top_k, opts.temperature);
  };

  std::vector<RolloutRecord> out;
  out.reserve(opts.group_size);
  if (!opts.parallel) {
    for (std::size_t i = 0; i < opts.group_size; ++i) out.push_back(one(i));
    return out;
  }
  std::vector<std::future<RolloutRecord>> futures;
  for (std::size_t i = 0; i < opts.group_size; ++i) {
    futures.push_back(std::async(std::launch::async, one, i));
  }
  std::exception_ptr first_error;
  for (auto& f : futures) {
    try {
      out.push_back(f.get());
    } catch (...) {
      if (!first_error) first_error = std::current_exception();
    }
  }
  if (first_error) std::rethrow_exception(first_error);
  return out;
}

inline std::vector<RolloutRecord> run_group(std::string_view question, PromptMode mode,
                                            const PolicyFactory& factory,
                                            const Retriever& retriever,
                                            const GroupOptions& opts) {
  return run_group(build_prompt(question, mode), factory, retriever, opts);
}

// ---------------------------------------------------------------------------
// Scripted mock policy
//
// Script file: JSONL, one turn per line, {"emit": text}. A line may instead
// carry {"choices": [text, ...]}, in which case the session picks one with
// its seeded generator. After the last line the session emits EOS.

struct ScriptTurn {
  std::vector<std::string> choices;
};

using Script = std::vector<ScriptTurn>;

inline Script parse_script_jsonl(std::istream& in) {
  Script script;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ScriptTurn turn;
      if (j.contains("emit")) {
        turn.choices.push_back(j.at("emit").get<std::string>());
      } else {
        turn.choices = j.at("choices").get<std::vector<std::string>>();
        if (turn.choices.empty()) throw Error(ErrorCode::kDataError, "empty choices");
      }
      script.push_back(std::move(turn));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kDataError,
                  "script line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return script;
}

inline Script load_script_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open script " + path.string());
  return parse_script_jsonl(in);
}

class ScriptedPolicy final : public PolicyGenerator {
 public:
  ScriptedPolicy(std::shared_ptr<const Script> script, std::uint64_t seed)
      : script_(std::move(script)), rng_(seed) {}

  GenerationResult generate(const GenerationRequest& request) override {
    history_.push_back(request.prompt_so_far());
    if (turn_ >= script_->size()) return {"", StopReason::kEos, {}};
    const auto& choices = (*script_)[turn_++].choices;
    std::string text = choices.size() == 1 ? choices.front()
                                           : choices[std::uniform_int_distribution<std::size_t>(
                                                 0, choices.size() - 1)(rng_)];
    GenerationResult out{std::move(text), StopReason::kEos, {}};

    std::size_t cut = std::string::npos;
    for (const auto& marker : request.stop_markers) {
      const auto pos = out.text.find(marker);
      if (pos != std::string::npos) cut = std::min(cut, pos + marker.size());
    }
    if (cut != std::string::npos) {
      out.text.resize(cut);
      out.stopped_on = StopReason::kStopMarker;
    }
    const auto spans = whitespace_token_spans(out.text);
    if (spans.size() > request.max_new_tokens) {
      out.text.resize(request.max_new_tokens == 0 ? 0 : spans[request.max_new_tokens - 1].end);
      out.stopped_on = StopReason::kLength;
    }
    return out;
  }

  /// prompt_so_far of every generate call, in order.
  const std::vector<std::string>& history() const { return history_; }

 private:
  std::shared_ptr<const Script> script_;
  std::mt19937_64 rng_;
  std::size_t turn_ = 0;
  std::vector<std::string> history_;
};

inline PolicyFactory scripted_policy_factory(Script script) {
  auto shared = std::make_shared<const Script>(std::move(script));
  return [shared](std::uint64_t seed) { return std::make_unique<ScriptedPolicy>(shared, seed); };
}

}  // namespace research
