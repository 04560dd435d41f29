#pragma once

// LLM-as-judge: fill the judge prompt, ask a chat-completions endpoint, parse
// the fenced JSON verdict.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "research/error.hpp"
#include "research/http.hpp"

namespace research {

inline constexpr std::string_view kJudgePromptTemplate =
    R"(You will be given a question and its ground truth answer list where each item can be a ground truth answer. Provided a pred_answer, you need to judge if the pred_answer correctly answers the question based on the ground truth answer list.You should first give your rationale for the judgement, and then give your judgement result (i.e., correct or incorrect).

Here is the criteria for the judgement:
1. The pred_answer doesn't need to be exactly the same as any of the ground truth answers, but should be semantically same for the question.
2. Each item in the ground truth answer list can be viewed as a ground truth answer for the question, and the pred_answer should be semantically same to at least one of them.

question: {question}
ground truth answers: {gt_answer}
pred_answer: {pred_answer}

The output should in the following json format:
```json)" " \n" R"({
    "rationale": "your rationale for the judgement, as a text",
    "judgement": "your judgement result, can only be 'correct' or 'incorrect'"
}
```

Your output:)";

/// Renders a list of strings the way Python's repr() does, e.g. ['a', "b's"].
inline std::string render_answer_list(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ", ";
    const auto& s = items[i];
    const char quote =
        (s.find('\'') != std::string::npos && s.find('"') == std::string::npos) ? '"' : '\'';
    out += quote;
    for (char c : s) {
      if (c == '\\' || c == quote) {
        out += '\\';
        out += c;
      } else if (c == '\n') {
        out += "\\n";
      } else if (c == '\t') {
        out += "\\t";
      } else if (c == '\r') {
        out += "\\r";
      } else {
        out += c;
      }
    }
    out += quote;
  }
  out += ']';
  return out;
}

/// Substitutes the three slots in a single left-to-right pass, so slot-like
/// text inside the substituted values is left alone.
inline std::string fill_judge_prompt(std::string_view question,
                                     const std::vector<std::string>& gold_answers,
                                     std::string_view pred) {
  const std::string gold = render_answer_list(gold_answers);
  const std::pair<std::string_view, std::string_view> slots[] = {
      {"{question}", question}, {"{gt_answer}", gold}, {"{pred_answer}", pred}};
  std::string out;
  std::string_view rest = kJudgePromptTemplate;
  for (const auto& [slot, value] : slots) {
    const auto pos = rest.find(slot);
    out += rest.substr(0, pos);
    out += value;
    rest.remove_prefix(pos + slot.size());
  }
  out += rest;
  return out;
}

enum class Judgement { kCorrect, kIncorrect };

struct JudgeVerdict {
  std::string rationale;
  Judgement judgement = Judgement::kIncorrect;

  bool correct() const { return judgement == Judgement::kCorrect; }
};

/// Body of the first ``` fenced block (language tag dropped), if any.
inline std::optional<std::string> first_fenced_block(std::string_view text) {
  const auto open = text.find("```");
  if (open == std::string_view::npos) return std::nullopt;
  const auto line_end = text.find('\n', open + 3);
  if (line_end == std::string_view::npos) return std::nullopt;
  const auto close = text.find("```", line_end + 1);
  if (close == std::string_view::npos) return std::nullopt;
  return std::string(text.substr(line_end + 1, close - line_end - 1));
}

/// Parses a judge reply. Uses the first fenced block, or the whole reply when
/// there is none. "judgement" must be exactly "correct" or "incorrect".
inline std::optional<JudgeVerdict> parse_judge_reply(std::string_view reply) {
  const std::string payload = first_fenced_block(reply).value_or(std::string(reply));
  const auto j = nlohmann::json::parse(payload, nullptr, /*allow_exceptions=*/false);
  if (!j.is_object()) return std::nullopt;
  const auto rationale = j.find("rationale");
  const auto judgement = j.find("judgement");
  if (rationale == j.end() || judgement == j.end() || !rationale->is_string() ||
      !judgement->is_string()) {
    return std::nullopt;
  }
  JudgeVerdict verdict{rationale->get<std::string>(), Judgement::kIncorrect};
  const auto& value = judgement->get_ref<const std::string&>();
  if (value == "correct") {
    verdict.judgement = Judgement::kCorrect;
  } else if (value != "incorrect") {
    return std::nullopt;
  }
  return verdict;
}

class JudgeClient {
 public:
  virtual ~JudgeClient() = default;
  /// Sends one user message; returns the reply text. Throws JUDGE_UNAVAILABLE.
  virtual std::string complete(const std::string& user_message) = 0;
};

struct JudgeEndpointConfig {
  EndpointConfig endpoint;
  std::string model = "gpt-4o-mini";
  double temperature = 0.0;
};

/// Chat-completions request with a single user message.
class HttpJudgeClient final : public JudgeClient {
 public:
  explicit HttpJudgeClient(JudgeEndpointConfig cfg) : cfg_(std::move(cfg)) {}

  std::string complete(const std::string& user_message) override {
    const nlohmann::json request = {
        {"model", cfg_.model},
        {"temperature", cfg_.temperature},
        {"messages", nlohmann::json::array({{{"role", "user"}, {"content", user_message}}})}};
    const auto body = post_json(cfg_.endpoint, request, ErrorCode::kJudgeUnavailable);
    try {
      return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kJudgeUnavailable, std::string("malformed reply: ") + e.what());
    }
  }

 private:
  JudgeEndpointConfig cfg_;
};

inline JudgeVerdict judge(std::string_view question, const std::vector<std::string>& gold_answers,
                          std::string_view pred, JudgeClient& client) {
  const std::string prompt = fill_judge_prompt(question, gold_answers, pred);
  std::string reply;
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      reply = client.complete(prompt);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kJudgeUnavailable) throw;
      throw Error(ErrorCode::kJudgeUnavailable, e.what());
    }
    if (auto verdict = parse_judge_reply(reply)) return *verdict;
  }
  throw Error(ErrorCode::kUnparseableVerdict, reply.substr(0, 200));
}

}  // namespace research
