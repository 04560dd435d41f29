#pragma once

// The four command-line workflows. Each returns a process exit status:
// 0 success, 1 partial failure, 2 usage or config error, 3 data error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "research/config.hpp"
#include "research/error.hpp"
#include "research/judge.hpp"
#include "research/retrieval.hpp"
#include "research/reward.hpp"
#include "research/rollout.hpp"
#include "research/tag_grammar.hpp"
#include "research/toy_lab.hpp"

namespace research::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;

inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kGroupTooSmall:
    case ErrorCode::kIoError:
      return kExitUsage;
    case ErrorCode::kDataError:
    case ErrorCode::kDuplicateId:
    case ErrorCode::kEmptyCorpus:
      return kExitData;
    default:
      return kExitPartial;
  }
}

inline std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * fraction);
  return buf;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON input

struct QuestionItem {
  std::string id;
  std::string question;
  std::vector<std::string> answers;
};

/// Reads a JSONL file into objects. Missing file: IO_ERROR. Bad line: DATA_ERROR.
inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (!j.is_object()) {
      throw Error(ErrorCode::kDataError,
                  path.string() + ":" + std::to_string(line_no) + ": not a JSON object");
    }
    rows.push_back(std::move(j));
  }
  return rows;
}

inline std::vector<QuestionItem> read_questions(const std::filesystem::path& path) {
  std::vector<QuestionItem> items;
  std::size_t n = 0;
  for (const auto& j : read_jsonl(path)) {
    ++n;
    try {
      QuestionItem q{j.at("id").get<std::string>(), j.at("question").get<std::string>(),
                     j.at("answers").get<std::vector<std::string>>()};
      if (q.answers.empty()) throw Error(ErrorCode::kDataError, "empty answers");
      items.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kDataError, "question " + std::to_string(n) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(ErrorCode::kDataError, "question " + std::to_string(n) + ": " + e.detail());
    }
  }
  return items;
}

// ---------------------------------------------------------------------------
// Rollout records

inline nlohmann::json to_json(const RolloutRecord& rec) {
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& s : rec.segments.segments) {
    segments.push_back({{"kind", to_string(s.kind)}, {"begin", s.span.begin}, {"end", s.span.end}});
  }
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& t : rec.tokens) {
    nlohmann::json tok = {{"begin", t.span.begin},
                          {"end", t.span.end},
                          {"origin", t.origin == TokenOrigin::kPolicy ? "policy" : "injected"}};
    if (t.logprob) tok["logprob"] = *t.logprob;
    tokens.push_back(std::move(tok));
  }
  return {{"mode", rec.prompt.mode == PromptMode::kBase ? "base" : "instruct"},
          {"prompt", rec.prompt.text},
          {"completion", rec.completion},
          {"segments", std::move(segments)},
          {"tokens", std::move(tokens)},
          {"queries", rec.queries},
          {"search_count", rec.search_count},
          {"truncated", rec.truncated},
          {"policy_token_count", rec.policy_token_count},
          {"injected_token_count", rec.injected_token_count()}};
}

inline nlohmann::json to_json(const RewardBreakdown& r) {
  return {{"f1", r.f1}, {"format_ok", r.format_ok}, {"reward", r.reward}, {"pred", r.pred}};
}

/// Rechecks a record written by cmd_rollout against its own completion text.
/// Returns a description of the first inconsistency, or nullopt.
inline std::optional<std::string> revalidate_rollout_record(const nlohmann::json& j) {
  try {
    j.at("id").get<std::string>();
    j.at("rollout_index").get<std::size_t>();
    if (j.contains("error")) {
      j.at("error").at("code").get<std::string>();
      j.at("error").at("message").get<std::string>();
      return std::nullopt;
    }
    const auto completion = j.at("completion").get<std::string>();
    const auto answers = j.at("answers").get<std::vector<std::string>>();
    const bool truncated = j.at("truncated").get<bool>();
    const auto parsed = parse_rollout(completion);

    const auto& segs = j.at("segments");
    if (segs.size() != parsed.segments.size()) return "segment count differs from reparse";
    for (std::size_t i = 0; i < segs.size(); ++i) {
      const auto& s = parsed.segments[i];
      if (segs[i].at("kind").get<std::string>() != to_string(s.kind) ||
          segs[i].at("begin").get<std::size_t>() != s.span.begin ||
          segs[i].at("end").get<std::size_t>() != s.span.end) {
        return "segment " + std::to_string(i) + " differs from reparse";
      }
    }

    std::size_t prev_end = 0;
    std::size_t policy = 0;
    std::size_t injected = 0;
    for (const auto& t : j.at("tokens")) {
      const auto b = t.at("begin").get<std::size_t>();
      const auto e = t.at("end").get<std::size_t>();
      if (b < prev_end || e <= b || e > completion.size()) return "token spans out of order";
      prev_end = e;
      const auto origin = t.at("origin").get<std::string>();
      if (origin == "policy") {
        ++policy;
      } else if (origin == "injected") {
        ++injected;
      } else {
        return "unknown token origin";
      }
    }
    if (policy != j.at("policy_token_count").get<std::size_t>() ||
        injected != j.at("injected_token_count").get<std::size_t>()) {
      return "token counts differ";
    }
    if (j.at("queries").size() != j.at("search_count").get<std::size_t>()) {
      return "search_count differs from queries";
    }

    const auto expected = compute_reward(parsed, truncated, answers);
    const auto& r = j.at("reward");
    if (r.at("reward").get<double>() != expected.reward || r.at("f1").get<double>() != expected.f1 ||
        r.at("format_ok").get<bool>() != expected.format_ok ||
        r.at("pred").get<std::string>() != expected.pred) {
      return "reward differs from recomputation";
    }
  } catch (const nlohmann::json::exception& e) {
    return std::string("schema: ") + e.what();
  } catch (const Error& e) {
    return e.what();
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// index

inline int cmd_index(const std::filesystem::path& corpus_path, const std::filesystem::path& out_dir,
                     const Bm25Params& params, std::ostream& out, std::ostream& err) {
  try {
    const auto [docs, checksum] = read_corpus_jsonl(corpus_path);
    const auto index = Bm25Index::build(docs, params, checksum);
    index.save(out_dir);
    out << index.num_docs() << " docs, " << index.num_chunks() << " chunks\n";
    return kExitOk;
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kDuplicateId) {
      err << "duplicate document id: " << e.detail() << '\n';
    } else {
      err << e.what() << '\n';
    }
    return exit_code_for(e.code());
  }
}

// ---------------------------------------------------------------------------
// rollout

struct QuestionOutcome {
  std::vector<RolloutRecord> records;
  std::vector<RewardBreakdown> rewards;
  std::optional<Error> error;
};

inline QuestionOutcome roll_question(const RunConfig& cfg, const PolicyFactory& factory,
                                     const Retriever& retriever, const QuestionItem& q,
                                     std::size_t index) {
  QuestionOutcome outcome;
  try {
    GroupOptions opts;
    opts.group_size = cfg.grpo.group_size;
    opts.budget = cfg.budget;
    opts.top_k = cfg.top_k;
    opts.temperature = cfg.temperature;
    opts.base_seed = cfg.seed + index * cfg.grpo.group_size;
    outcome.records = run_group(q.question, cfg.mode, factory, retriever, opts);
    for (const auto& rec : outcome.records) outcome.rewards.push_back(compute_reward(rec, q.answers));
  } catch (const Error& e) {
    outcome = {};
    outcome.error = e;
  } catch (const std::exception& e) {
    outcome = {};
    outcome.error = Error(ErrorCode::kPolicyUnavailable, e.what());
  }
  return outcome;
}

/// Writes one JSON line per question per group member, in input order.
/// Exit 0 when at least one question succeeded.
inline int cmd_rollout(const std::filesystem::path& config_path,
                       const std::filesystem::path& questions_path,
                       const std::filesystem::path& out_path, std::ostream& out,
                       std::ostream& err) {
  RunConfig cfg;
  std::vector<QuestionItem> questions;
  PolicyFactory factory;
  std::unique_ptr<Retriever> retriever;
  try {
    cfg = load_run_config(config_path);
    questions = read_questions(questions_path);
    if (questions.empty()) throw Error(ErrorCode::kInvalidArgument, "no questions");
    factory = make_policy_factory(cfg);
    retriever = make_retriever(cfg);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e.code());
  }

  std::ofstream file(out_path, std::ios::binary | std::ios::trunc);
  if (!file) {
    err << "cannot write " << out_path.string() << '\n';
    return kExitUsage;
  }

  std::size_t succeeded = 0;
  for (std::size_t begin = 0; begin < questions.size(); begin += cfg.concurrency) {
    const std::size_t end = std::min(questions.size(), begin + cfg.concurrency);
    std::vector<QuestionOutcome> outcomes;
    if (end - begin == 1) {
      outcomes.push_back(roll_question(cfg, factory, *retriever, questions[begin], begin));
    } else {
      std::vector<std::future<QuestionOutcome>> pending;
      for (std::size_t i = begin; i < end; ++i) {
        pending.push_back(std::async(std::launch::async, roll_question, std::cref(cfg),
                                     std::cref(factory), std::cref(*retriever),
                                     std::cref(questions[i]), i));
      }
      for (auto& f : pending) outcomes.push_back(f.get());
    }

    for (std::size_t k = 0; k < outcomes.size(); ++k) {
      const auto& q = questions[begin + k];
      const auto& o = outcomes[k];
      if (o.error) {
        err << q.id << ": " << o.error->what() << '\n';
      } else {
        ++succeeded;
      }
      for (std::size_t g = 0; g < cfg.grpo.group_size; ++g) {
        nlohmann::json line;
        if (o.error) {
          line = {{"error",
                   {{"code", to_string(o.error->code())}, {"message", o.error->detail()}}}};
        } else {
          line = to_json(o.records[g]);
          line["reward"] = to_json(o.rewards[g]);
        }
        line["id"] = q.id;
        line["rollout_index"] = g;
        line["question"] = q.question;
        line["answers"] = q.answers;
        file << line.dump() << '\n';
      }
    }
  }
  file.close();
  if (!file) {
    err << "write failed: " << out_path.string() << '\n';
    return kExitUsage;
  }
  out << succeeded << "/" << questions.size() << " questions, "
      << questions.size() * cfg.grpo.group_size << " records\n";
  return succeeded > 0 ? kExitOk : kExitPartial;
}

// ---------------------------------------------------------------------------
// eval

enum class Metric { kEm, kF1, kJudge };

struct EvalSummary {
  std::size_t items = 0;
  std::size_t skipped = 0;  // rollout records carrying an error
  double em = 0.0;
  double f1 = 0.0;
  std::size_t judged = 0;
  std::size_t judge_correct = 0;
  std::size_t judge_failures = 0;
};

/// Scores a rollouts file (or plain {question, pred, answers} items), writes
/// per-item JSONL to `items_path` when non-empty and prints aggregates.
inline int cmd_eval(const std::filesystem::path& rollouts_path, const std::set<Metric>& metrics,
                    const std::filesystem::path& items_path, JudgeClient* judge_client,
                    std::ostream& out, std::ostream& err) {
  if (metrics.empty()) {
    err << "no metrics requested\n";
    return kExitUsage;
  }
  if (metrics.count(Metric::kJudge) && judge_client == nullptr) {
    err << "judge metric needs a judge endpoint\n";
    return kExitUsage;
  }
  std::vector<nlohmann::json> rows;
  try {
    rows = read_jsonl(rollouts_path);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e.code());
  }
  if (rows.empty()) {
    err << "no items in " << rollouts_path.string() << '\n';
    return kExitUsage;
  }

  std::ofstream items;
  if (!items_path.empty()) {
    items.open(items_path, std::ios::binary | std::ios::trunc);
    if (!items) {
      err << "cannot write " << items_path.string() << '\n';
      return kExitUsage;
    }
  }

  EvalSummary s;
  for (std::size_t n = 0; n < rows.size(); ++n) {
    const auto& row = rows[n];
    if (row.contains("error")) {
      ++s.skipped;
      continue;
    }
    std::string question;
    std::string pred;
    std::vector<std::string> gold;
    std::optional<double> reward;
    try {
      question = row.value("question", std::string());
      gold = row.at("answers").get<std::vector<std::string>>();
      if (gold.empty()) throw Error(ErrorCode::kDataError, "empty answers");
      if (row.contains("completion")) {
        const auto parsed = parse_rollout(row.at("completion").get<std::string>());
        const auto r = compute_reward(parsed, row.value("truncated", false), gold);
        pred = r.pred;
        reward = r.reward;
      } else {
        pred = row.at("pred").get<std::string>();
      }
    } catch (const std::exception& e) {
      err << "item " << n + 1 << ": " << e.what() << '\n';
      return kExitData;
    }

    const bool em = any_exact_match(pred, gold);
    const double f1 = max_f1(pred, gold);
    ++s.items;
    s.em += em ? 1.0 : 0.0;
    s.f1 += f1;

    nlohmann::json line = {{"question", question}, {"pred", pred}, {"gold", gold}};
    if (row.contains("id")) line["id"] = row["id"];
    if (row.contains("rollout_index")) line["rollout_index"] = row["rollout_index"];
    if (metrics.count(Metric::kEm)) line["em"] = em;
    if (metrics.count(Metric::kF1)) line["f1"] = f1;
    line["reward"] = reward ? nlohmann::json(*reward) : nlohmann::json(nullptr);
    if (metrics.count(Metric::kJudge)) {
      try {
        const auto verdict = judge(question, gold, pred, *judge_client);
        ++s.judged;
        if (verdict.correct()) ++s.judge_correct;
        line["judge"] = verdict.correct();
      } catch (const Error& e) {
        ++s.judge_failures;
        line["judge"] = nullptr;
        err << "item " << n + 1 << ": " << e.what() << '\n';
      }
    }
    if (items.is_open()) items << line.dump() << '\n';
  }

  if (s.items == 0) {
    err << "every record carries an error\n";
    return kExitPartial;
  }
  const double count = static_cast<double>(s.items);
  if (metrics.count(Metric::kEm)) out << "EM " << percent(s.em / count) << '\n';
  if (metrics.count(Metric::kF1)) out << "F1 " << percent(s.f1 / count) << '\n';
  if (metrics.count(Metric::kJudge)) {
    out << "LJ "
        << (s.judged ? percent(static_cast<double>(s.judge_correct) / static_cast<double>(s.judged))
                     : std::string("n/a"));
    if (s.judge_failures) out << " (" << s.judge_failures << " judge failures excluded)";
    out << '\n';
  }
  out << "items " << s.items;
  if (s.skipped) out << " (" << s.skipped << " errored records skipped)";
  out << '\n';
  return s.judge_failures ? kExitPartial : kExitOk;
}

// ---------------------------------------------------------------------------
// train-toy

/// Trains the tabular policy on the toy world and writes metrics as JSONL
/// plus a CSV next to it (same stem, .csv).
inline int cmd_train_toy(const toy::ToyTrainConfig& cfg, std::uint64_t world_seed,
                         const std::filesystem::path& out_metrics, std::ostream& out,
                         std::ostream& err) {
  toy::TrainingLog log;
  try {
    cfg.validate();
    const auto world = toy::ToyWorld::generate(world_seed);
    log = toy::train_toy(world, cfg);
  } catch (const Error& e) {
    err << e.what() << '\n';
    return exit_code_for(e.code());
  }

  auto csv_path = out_metrics;
  csv_path.replace_extension(".csv");
  std::ofstream jsonl(out_metrics, std::ios::binary | std::ios::trunc);
  std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
  if (!jsonl || !csv) {
    err << "cannot write " << out_metrics.string() << '\n';
    return kExitUsage;
  }
  toy::write_metrics_jsonl(jsonl, log);
  toy::write_metrics_csv(csv, log);

  const std::size_t n = log.steps.size();
  const auto reward = [](const toy::StepMetrics& m) { return m.mean_reward; };
  const auto searches = [](const toy::StepMetrics& m) { return m.mean_search_count; };
  out << "steps " << n << '\n';
  out << "initial reward " << toy::window_mean(log, 0, std::min<std::size_t>(10, n), reward) << '\n';
  out << "final reward " << toy::window_mean(log, n - std::min<std::size_t>(50, n), n, reward)
      << '\n';
  out << "final search count "
      << toy::window_mean(log, n - std::min<std::size_t>(50, n), n, searches) << '\n';
  out << "kl to reference " << toy::mean_state_kl(log.policy, log.reference) << '\n';
  return kExitOk;
}

}  // namespace research::cli
