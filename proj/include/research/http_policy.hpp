#pragma once

// Policy client for OpenAI-style serving endpoints. Base mode uses the
// completions route with the raw prompt; Instruct mode uses chat completions
// and continues the partial assistant message.

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "research/error.hpp"
#include "research/http.hpp"
#include "research/rollout.hpp"
#include "research/tag_grammar.hpp"

namespace research {

struct HttpPolicyConfig {
  EndpointConfig endpoint;  // full URL of the completions or chat route
  std::string model;
  bool request_logprobs = false;
};

namespace detail {

/// Maps an OpenAI-style finish reason to a StopReason. Servers trim the stop
/// string, so "stop" is taken as the search marker when the server names it
/// (vLLM's stop_reason) or when the text ends inside an open <search>.
inline StopReason map_finish_reason(const nlohmann::json& choice, const std::string& text) {
  const auto reason = choice.value("finish_reason", std::string("stop"));
  if (reason == "length") return StopReason::kLength;
  if (const auto it = choice.find("stop_reason"); it != choice.end() && it->is_string()) {
    return it->get<std::string>() == tags::kSearchClose ? StopReason::kStopMarker
                                                         : StopReason::kEos;
  }
  if (text.size() >= tags::kSearchClose.size() &&
      text.compare(text.size() - tags::kSearchClose.size(), std::string::npos,
                   tags::kSearchClose) == 0) {
    return StopReason::kStopMarker;
  }
  const auto open = text.rfind(tags::kSearchOpen);
  if (open != std::string::npos && text.find(tags::kSearchClose, open) == std::string::npos) {
    return StopReason::kStopMarker;
  }
  return StopReason::kEos;
}

/// Completions-style {"tokens": [...], "token_logprobs": [...]}.
inline std::vector<GeneratedToken> completion_logprobs(const nlohmann::json& choice) {
  std::vector<GeneratedToken> out;
  const auto lp = choice.find("logprobs");
  if (lp == choice.end() || !lp->is_object()) return out;
  const auto tokens = lp->find("tokens");
  const auto values = lp->find("token_logprobs");
  if (tokens == lp->end() || values == lp->end() || !tokens->is_array() ||
      !values->is_array() || tokens->size() != values->size()) {
    return out;
  }
  for (std::size_t i = 0; i < tokens->size(); ++i) {
    const auto& v = (*values)[i];
    out.push_back({(*tokens)[i].get<std::string>(), v.is_number() ? v.get<double>() : 0.0, -1});
  }
  return out;
}

/// Chat-style {"content": [{"token", "logprob"}, ...]}.
inline std::vector<GeneratedToken> chat_logprobs(const nlohmann::json& choice) {
  std::vector<GeneratedToken> out;
  const auto lp = choice.find("logprobs");
  if (lp == choice.end() || !lp->is_object()) return out;
  const auto content = lp->find("content");
  if (content == lp->end() || !content->is_array()) return out;
  for (const auto& t : *content) {
    out.push_back({t.at("token").get<std::string>(), t.value("logprob", 0.0), -1});
  }
  return out;
}

}  // namespace detail

class HttpPolicy final : public PolicyGenerator {
 public:
  HttpPolicy(std::shared_ptr<const HttpPolicyConfig> cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), seed_(seed) {}

  GenerationResult generate(const GenerationRequest& request) override {
    nlohmann::json body = {{"model", cfg_->model},
                           {"stop", request.stop_markers},
                           {"max_tokens", request.max_new_tokens},
                           {"temperature", request.temperature},
                           {"seed", seed_ + calls_++}};
    const bool chat = request.prompt->mode == PromptMode::kInstruct;
    if (chat) {
      auto messages = nlohmann::json::array(
          {{{"role", "system"}, {"content", request.prompt->system}},
           {{"role", "user"}, {"content", request.prompt->user}}});
      if (!request.completion.empty()) {
        messages.push_back({{"role", "assistant"}, {"content", request.completion}});
        body["continue_final_message"] = true;
        body["add_generation_prompt"] = false;
      }
      body["messages"] = std::move(messages);
      if (cfg_->request_logprobs) body["logprobs"] = true;
    } else {
      body["prompt"] = request.prompt_so_far();
      if (cfg_->request_logprobs) body["logprobs"] = 1;
    }

    const auto reply = post_json(cfg_->endpoint, body, ErrorCode::kPolicyUnavailable);
    try {
      const auto& choice = reply.at("choices").at(0);
      GenerationResult out;
      out.text = chat ? choice.at("message").at("content").get<std::string>()
                      : choice.at("text").get<std::string>();
      out.stopped_on = detail::map_finish_reason(choice, out.text);
      if (cfg_->request_logprobs) {
        out.tokens = chat ? detail::chat_logprobs(choice) : detail::completion_logprobs(choice);
      }
      return out;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kMalformedResponse, cfg_->endpoint.url + ": " + e.what());
    }
  }

 private:
  std::shared_ptr<const HttpPolicyConfig> cfg_;
  std::uint64_t seed_;
  std::uint64_t calls_ = 0;
};

inline PolicyFactory http_policy_factory(HttpPolicyConfig cfg) {
  auto shared = std::make_shared<const HttpPolicyConfig>(std::move(cfg));
  return [shared](std::uint64_t seed) { return std::make_unique<HttpPolicy>(shared, seed); };
}

}  // namespace research
