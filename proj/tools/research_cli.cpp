// research: index a corpus, run rollouts, score them, or train the toy policy.

#include <iostream>
#include <optional>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "research/cli.hpp"

namespace {

using research::cli::Metric;

int run(int argc, char** argv) {
  CLI::App app{"Search-augmented reasoning rollouts, rewards and GRPO"};
  app.require_subcommand(1);

  std::string corpus, index_out;
  research::Bm25Params bm25;
  auto* index = app.add_subcommand("index", "Build and persist a BM25 index from a JSONL corpus");
  index->add_option("corpus", corpus, "Corpus JSONL: {id, title, text}")->required();
  index->add_option("out_dir", index_out, "Index directory to write")->required();
  index->add_option("--k1", bm25.k1, "BM25 k1")->capture_default_str();
  index->add_option("--b", bm25.b, "BM25 b")->capture_default_str();

  std::string config, questions, rollouts_out;
  auto* rollout = app.add_subcommand("rollout", "Run G rollouts per question and score them");
  rollout->add_option("config", config, "Run config JSON")->required();
  rollout->add_option("questions", questions, "Questions JSONL: {id, question, answers}")->required();
  rollout->add_option("out", rollouts_out, "Output JSONL")->required();

  std::string rollouts_in, items_out, eval_config, judge_url, judge_model = "gpt-4o-mini";
  std::vector<std::string> metric_names{"em", "f1"};
  double judge_timeout = 30.0;
  int judge_retries = 2;
  auto* eval = app.add_subcommand("eval", "Score rollouts with EM, F1 and optionally the judge");
  eval->add_option("rollouts", rollouts_in, "Rollouts JSONL")->required();
  eval->add_option("--metrics", metric_names, "Any of em, f1, judge")
      ->check(CLI::IsMember({"em", "f1", "judge"}))
      ->capture_default_str();
  eval->add_option("--out", items_out, "Per-item JSONL output");
  eval->add_option("--config", eval_config, "Run config whose judge section is used");
  eval->add_option("--judge-url", judge_url, "Chat-completions endpoint for the judge");
  eval->add_option("--judge-model", judge_model)->capture_default_str();
  eval->add_option("--judge-timeout", judge_timeout)->capture_default_str();
  eval->add_option("--judge-retries", judge_retries)->capture_default_str();

  research::toy::ToyTrainConfig toy;
  std::uint64_t world_seed = 0;
  std::string metrics_out = "toy_metrics.jsonl";
  auto* train = app.add_subcommand("train-toy", "Train the tabular policy on the toy world");
  train->add_option("--steps", toy.steps)->capture_default_str();
  train->add_option("--seed", toy.seed)->capture_default_str();
  train->add_option("--world-seed", world_seed)->capture_default_str();
  train->add_option("--group-size", toy.grpo.group_size)->capture_default_str();
  train->add_option("--clip-ratio", toy.grpo.clip_ratio)->capture_default_str();
  train->add_option("--kl-coef", toy.grpo.kl_coef)->capture_default_str();
  train->add_option("--lr", toy.learning_rate)->capture_default_str();
  train->add_option("--batch", toy.batch_questions, "Questions per step")->capture_default_str();
  train->add_option("--out", metrics_out, "Metrics JSONL; a .csv is written beside it")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : research::cli::kExitUsage;
  }

  if (*index) return research::cli::cmd_index(corpus, index_out, bm25, std::cout, std::cerr);
  if (*rollout) {
    return research::cli::cmd_rollout(config, questions, rollouts_out, std::cout, std::cerr);
  }
  if (*eval) {
    std::set<Metric> metrics;
    for (const auto& m : metric_names) {
      metrics.insert(m == "em" ? Metric::kEm : m == "f1" ? Metric::kF1 : Metric::kJudge);
    }
    std::optional<research::HttpJudgeClient> client;
    // Flags win over the config's judge section.
    if (!eval_config.empty() && judge_url.empty()) {
      try {
        const auto cfg = research::load_run_config(eval_config);
        if (cfg.judge) client.emplace(*cfg.judge);
      } catch (const research::Error& e) {
        std::cerr << e.what() << '\n';
        return research::cli::exit_code_for(e.code());
      }
    }
    if (!judge_url.empty()) {
      research::JudgeEndpointConfig jc;
      jc.endpoint.url = judge_url;
      jc.endpoint.timeout_seconds = judge_timeout;
      jc.endpoint.retries = judge_retries;
      jc.endpoint.api_key = research::detail::env_or(research::kJudgeKeyEnv, "");
      jc.model = judge_model;
      client.emplace(jc);
    }
    return research::cli::cmd_eval(rollouts_in, metrics, items_out, client ? &*client : nullptr,
                                   std::cout, std::cerr);
  }
  return research::cli::cmd_train_toy(toy, world_seed, metrics_out, std::cout, std::cerr);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
