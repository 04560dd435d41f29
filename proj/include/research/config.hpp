#pragma once

// Run configuration: one JSON file, with endpoint secrets taken from the
// environment when set. Unknown keys are rejected so typos do not silently
// fall back to defaults.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "json.hpp"
#include "research/error.hpp"
#include "research/grpo.hpp"
#include "research/http.hpp"
#include "research/http_policy.hpp"
#include "research/judge.hpp"
#include "research/remote_retriever.hpp"
#include "research/retrieval.hpp"
#include "research/rollout.hpp"

namespace research {

inline constexpr const char* kPolicyKeyEnv = "RESEARCH_POLICY_API_KEY";
inline constexpr const char* kRetrieverKeyEnv = "RESEARCH_RETRIEVER_API_KEY";
inline constexpr const char* kJudgeKeyEnv = "RESEARCH_JUDGE_API_KEY";

enum class PolicyKind { kHttp, kScripted };
enum class RetrieverKind { kLocal, kRemote };

struct PolicySettings {
  PolicyKind kind = PolicyKind::kScripted;
  HttpPolicyConfig http;
  std::filesystem::path script;  // scripted only
};

struct RetrieverSettings {
  RetrieverKind kind = RetrieverKind::kLocal;
  std::filesystem::path index_dir;  // local
  EndpointConfig endpoint;          // remote
};

struct RunConfig {
  PromptMode mode = PromptMode::kBase;
  GrpoConfig grpo;  // G = 5, clip 0.2, beta 0.001
  double temperature = 1.0;
  std::size_t top_k = 5;
  RolloutBudget budget;
  std::uint64_t seed = 0;
  std::size_t concurrency = 1;  // questions in flight at once
  PolicySettings policy;
  RetrieverSettings retriever;
  std::optional<JudgeEndpointConfig> judge;

  void validate() const {
    grpo.validate();
    budget.validate();
    if (top_k == 0) throw Error(ErrorCode::kInvalidArgument, "top_k must be >= 1");
    if (!(temperature >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
    if (concurrency == 0) throw Error(ErrorCode::kInvalidArgument, "concurrency must be >= 1");
    if (policy.kind == PolicyKind::kHttp && policy.http.endpoint.url.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "policy.url is required for an http policy");
    }
    if (policy.kind == PolicyKind::kScripted && policy.script.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "policy.script is required for a scripted policy");
    }
    if (retriever.kind == RetrieverKind::kLocal && retriever.index_dir.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "retriever.index is required for a local retriever");
    }
    if (retriever.kind == RetrieverKind::kRemote && retriever.endpoint.url.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "retriever.url is required for a remote retriever");
    }
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& obj, std::string_view where,
                       std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) {
    throw Error(ErrorCode::kInvalidArgument, std::string(where) + " must be an object");
  }
  for (const auto& item : obj.items()) {
    bool known = false;
    for (auto k : allowed) known = known || item.key() == k;
    if (!known) {
      throw Error(ErrorCode::kInvalidArgument,
                  "unknown key " + std::string(where) + "." + item.key());
    }
  }
}

template <typename T>
void read_field(const nlohmann::json& obj, const char* key, T& out) {
  const auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::kInvalidArgument, std::string("bad value for ") + key);
  }
}

inline std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return (v != nullptr && *v != '\0') ? std::string(v) : fallback;
}

inline EndpointConfig read_endpoint(const nlohmann::json& obj, const char* key_env) {
  EndpointConfig e;
  read_field(obj, "url", e.url);
  read_field(obj, "timeout_seconds", e.timeout_seconds);
  read_field(obj, "retries", e.retries);
  read_field(obj, "retry_backoff_seconds", e.retry_backoff_seconds);
  read_field(obj, "api_key", e.api_key);
  e.api_key = env_or(key_env, e.api_key);
  if (!(e.timeout_seconds > 0.0) || e.retries < 0) {
    throw Error(ErrorCode::kInvalidArgument, "timeout_seconds must be > 0 and retries >= 0");
  }
  return e;
}

inline std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace detail

/// Parses a config object. Relative paths are resolved against `base_dir`.
inline RunConfig parse_run_config(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir = {}) {
  using detail::read_field;
  detail::check_keys(j, "config",
                     {"mode", "group_size", "clip_ratio", "kl_coef", "ratio_mode", "temperature",
                      "top_k", "budget", "seed", "concurrency", "policy", "retriever", "judge"});
  RunConfig cfg;

  std::string mode = "base";
  read_field(j, "mode", mode);
  if (mode == "base") {
    cfg.mode = PromptMode::kBase;
  } else if (mode == "instruct") {
    cfg.mode = PromptMode::kInstruct;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "mode must be \"base\" or \"instruct\"");
  }
  read_field(j, "group_size", cfg.grpo.group_size);
  read_field(j, "clip_ratio", cfg.grpo.clip_ratio);
  read_field(j, "kl_coef", cfg.grpo.kl_coef);
  std::string ratio = "token";
  read_field(j, "ratio_mode", ratio);
  if (ratio == "token") {
    cfg.grpo.ratio_mode = RatioMode::kToken;
  } else if (ratio == "sequence") {
    cfg.grpo.ratio_mode = RatioMode::kSequence;
  } else {
    throw Error(ErrorCode::kInvalidArgument, "ratio_mode must be \"token\" or \"sequence\"");
  }
  read_field(j, "temperature", cfg.temperature);
  read_field(j, "top_k", cfg.top_k);
  read_field(j, "seed", cfg.seed);
  read_field(j, "concurrency", cfg.concurrency);

  if (const auto it = j.find("budget"); it != j.end()) {
    detail::check_keys(*it, "budget",
                       {"max_search_calls", "max_total_tokens", "max_tokens_per_turn"});
    read_field(*it, "max_search_calls", cfg.budget.max_search_calls);
    read_field(*it, "max_total_tokens", cfg.budget.max_total_tokens);
    read_field(*it, "max_tokens_per_turn", cfg.budget.max_tokens_per_turn);
  }

  if (const auto it = j.find("policy"); it != j.end()) {
    detail::check_keys(*it, "policy",
                       {"kind", "url", "model", "timeout_seconds", "retries",
                        "retry_backoff_seconds", "api_key", "logprobs", "script"});
    std::string kind = "http";
    read_field(*it, "kind", kind);
    if (kind == "http") {
      cfg.policy.kind = PolicyKind::kHttp;
    } else if (kind == "scripted") {
      cfg.policy.kind = PolicyKind::kScripted;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "policy.kind must be \"http\" or \"scripted\"");
    }
    cfg.policy.http.endpoint = detail::read_endpoint(*it, kPolicyKeyEnv);
    read_field(*it, "model", cfg.policy.http.model);
    read_field(*it, "logprobs", cfg.policy.http.request_logprobs);
    std::string script;
    read_field(*it, "script", script);
    cfg.policy.script = detail::resolve(base_dir, script);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "policy section is required");
  }

  if (const auto it = j.find("retriever"); it != j.end()) {
    detail::check_keys(*it, "retriever",
                       {"kind", "index", "url", "timeout_seconds", "retries",
                        "retry_backoff_seconds", "api_key"});
    std::string kind = "local";
    read_field(*it, "kind", kind);
    if (kind == "local") {
      cfg.retriever.kind = RetrieverKind::kLocal;
    } else if (kind == "remote") {
      cfg.retriever.kind = RetrieverKind::kRemote;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "retriever.kind must be \"local\" or \"remote\"");
    }
    std::string index;
    read_field(*it, "index", index);
    cfg.retriever.index_dir = detail::resolve(base_dir, index);
    cfg.retriever.endpoint = detail::read_endpoint(*it, kRetrieverKeyEnv);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "retriever section is required");
  }

  if (const auto it = j.find("judge"); it != j.end()) {
    detail::check_keys(*it, "judge",
                       {"url", "model", "temperature", "timeout_seconds", "retries",
                        "retry_backoff_seconds", "api_key"});
    JudgeEndpointConfig judge;
    judge.endpoint = detail::read_endpoint(*it, kJudgeKeyEnv);
    read_field(*it, "model", judge.model);
    read_field(*it, "temperature", judge.temperature);
    if (judge.endpoint.url.empty()) throw Error(ErrorCode::kInvalidArgument, "judge.url is required");
    cfg.judge = std::move(judge);
  }

  cfg.validate();
  return cfg;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kInvalidArgument, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

inline PolicyFactory make_policy_factory(const RunConfig& cfg) {
  if (cfg.policy.kind == PolicyKind::kHttp) return http_policy_factory(cfg.policy.http);
  return scripted_policy_factory(load_script_jsonl(cfg.policy.script));
}

inline std::unique_ptr<Retriever> make_retriever(const RunConfig& cfg) {
  if (cfg.retriever.kind == RetrieverKind::kRemote) {
    return std::make_unique<RemoteRetriever>(cfg.retriever.endpoint);
  }
  return std::make_unique<Bm25Index>(Bm25Index::load(cfg.retriever.index_dir));
}

}  // namespace research
