#pragma once

// Shared fixtures and independent reference implementations for the unit
// tests and the acceptance runner. Nothing here calls into the code under
// test except to build inputs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "research/grpo.hpp"
#include "research/retrieval.hpp"
#include "research/rollout.hpp"

namespace testing_support {

// ---------------------------------------------------------------------------
// Scratch directories

class TempDir {
 public:
  explicit TempDir(std::string_view tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("research_" + std::string(tag) + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, std::string_view content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << content;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---------------------------------------------------------------------------
// Token F1 oracle: F1 = 2 * overlap / (|pred| + |gold|), overlap counted as
// the multiset intersection over a small integer vocabulary.

inline double oracle_f1(const std::vector<int>& pred, const std::vector<int>& gold) {
  if (pred.empty() || gold.empty()) return 0.0;
  std::map<int, int> cp, cg;
  for (int t : pred) ++cp[t];
  for (int t : gold) ++cg[t];
  int overlap = 0;
  for (const auto& [tok, n] : cp) {
    const auto it = cg.find(tok);
    if (it != cg.end()) overlap += std::min(n, it->second);
  }
  if (overlap == 0) return 0.0;
  return 2.0 * overlap / static_cast<double>(pred.size() + gold.size());
}

inline constexpr std::array<std::string_view, 8> kF1Vocab = {
    "paris", "river", "tower", "blue", "seven", "north", "stone", "lake"};

inline std::string join_vocab(const std::vector<int>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ' ';
    out += kF1Vocab[static_cast<std::size_t>(ids[i])];
  }
  return out;
}

inline std::vector<int> random_token_list(std::mt19937_64& rng, std::size_t max_len = 6) {
  std::vector<int> out(std::uniform_int_distribution<std::size_t>(0, max_len)(rng));
  for (int& t : out) t = std::uniform_int_distribution<int>(0, 7)(rng);
  return out;
}

// ---------------------------------------------------------------------------
// BM25 oracle: the textbook formula evaluated directly over tokenized
// documents, with no index.

struct Bm25Reference {
  double k1 = 1.2;
  double b = 0.75;

  double score(const std::vector<std::vector<std::string>>& docs, std::size_t d,
               const std::vector<std::string>& query_terms) const {
    const double n = static_cast<double>(docs.size());
    double avgdl = 0.0;
    for (const auto& doc : docs) avgdl += static_cast<double>(doc.size());
    avgdl /= n;
    std::vector<std::string> unique = query_terms;
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    double total = 0.0;
    for (const auto& term : unique) {
      double df = 0.0;
      for (const auto& doc : docs) df += std::count(doc.begin(), doc.end(), term) > 0 ? 1.0 : 0.0;
      const double tf = static_cast<double>(std::count(docs[d].begin(), docs[d].end(), term));
      if (tf == 0.0) continue;
      const double idf = std::log((n - df + 0.5) / (df + 0.5) + 1.0);
      const double len = static_cast<double>(docs[d].size());
      total += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avgdl));
    }
    return total;
  }
};

// ---------------------------------------------------------------------------
// Markup soup for parser properties

inline std::string random_markup(std::mt19937_64& rng, std::size_t pieces) {
  static const std::vector<std::string> kPieces = {
      "<think>", "</think>", "<search>", "</search>", "<result>", "</result>",
      "<answer>", "</answer>", "\\boxed{", "}", "{", "<", ">", "</", "<sea", "rch>",
      "abc", "x", " ", "\n", "q", "<|endoftext|>", "<|im_end|>", "tail", "</sea"};
  std::string out;
  std::uniform_int_distribution<std::size_t> pick(0, kPieces.size() - 1);
  for (std::size_t i = 0; i < pieces; ++i) out += kPieces[pick(rng)];
  return out;
}

/// Earliest end offset of any marker occurrence, by brute force over all
/// start positions.
inline std::optional<std::size_t> oracle_stop(std::string_view text,
                                              const std::vector<std::string>& markers) {
  std::optional<std::size_t> best;
  for (const auto& m : markers) {
    for (std::size_t start = 0; start + m.size() <= text.size(); ++start) {
      if (text.substr(start, m.size()) == m) {
        const std::size_t end = start + m.size();
        if (!best || end < *best) best = end;
        break;
      }
    }
  }
  return best;
}

/// Random cut points splitting `text` into consecutive chunks.
inline std::vector<std::string> random_chunks(std::mt19937_64& rng, const std::string& text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t len = std::uniform_int_distribution<std::size_t>(0, 7)(rng);
    out.push_back(text.substr(pos, len));
    pos += len;
  }
  if (std::uniform_int_distribution<int>(0, 3)(rng) == 0) out.emplace_back();
  return out;
}

// ---------------------------------------------------------------------------
// GRPO fixtures

/// A random tabular instance: a group of rollouts whose policy tokens are
/// labeled with (state, action) decisions and whose other tokens are free.
struct GradientFixture {
  research::TabularSoftmaxPolicy policy;
  research::RolloutGroup group;
  std::vector<research::DecisionTrack> decisions;
};

inline GradientFixture random_gradient_fixture(std::mt19937_64& rng, std::size_t states,
                                               std::size_t actions, std::size_t group_size) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len_dist(1, 8);
  std::uniform_int_distribution<int> coin(0, 3);

  GradientFixture fx;
  fx.policy = research::TabularSoftmaxPolicy(states, actions);
  for (double& l : fx.policy.logits()) l = 0.7 * normal(rng);
  research::TabularSoftmaxPolicy reference(states, actions);
  for (double& l : reference.logits()) l = 0.7 * normal(rng);
  research::TabularSoftmaxPolicy old = fx.policy;
  for (double& l : old.logits()) l += 0.15 * normal(rng);

  std::uniform_int_distribution<std::size_t> decision_dist(0, states * actions - 1);
  for (std::size_t i = 0; i < group_size; ++i) {
    research::TokenTrack tr;
    research::DecisionTrack dec;
    const std::size_t n = len_dist(rng);
    for (std::size_t t = 0; t < n; ++t) {
      const bool injected = coin(rng) == 0;
      if (injected) {
        tr.mask.push_back(0.0);
        tr.logp_current.push_back(-std::abs(normal(rng)));
        tr.logp_old.push_back(-std::abs(normal(rng)));
        tr.logp_ref.push_back(-std::abs(normal(rng)));
        dec.push_back(-1);
      } else {
        const auto d = decision_dist(rng);
        tr.mask.push_back(1.0);
        tr.logp_current.push_back(fx.policy.log_prob(d));
        tr.logp_old.push_back(old.log_prob(d));
        tr.logp_ref.push_back(reference.log_prob(d));
        dec.push_back(static_cast<int>(d));
      }
    }
    fx.group.tracks.push_back(std::move(tr));
    fx.decisions.push_back(std::move(dec));
    fx.group.rewards.push_back(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
  }
  research::compute_advantages(fx.group);
  return fx;
}

/// Central finite differences of masked_objective with respect to the logits.
inline std::vector<double> finite_difference_gradient(const GradientFixture& fx,
                                                      const research::GrpoConfig& cfg,
                                                      double h = 1e-6) {
  std::vector<double> grad(fx.policy.size());
  for (std::size_t k = 0; k < grad.size(); ++k) {
    auto eval = [&](double delta) {
      auto policy = fx.policy;
      policy.logits()[k] += delta;
      auto group = fx.group;
      research::refresh_current_logprobs(group, fx.decisions, policy);
      return research::masked_objective(group, cfg).objective;
    };
    grad[k] = (eval(h) - eval(-h)) / (2.0 * h);
  }
  return grad;
}

/// max_k |a_k - b_k| / max(1, |b_k|)
inline double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    worst = std::max(worst, std::abs(a[k] - b[k]) / std::max(1.0, std::abs(b[k])));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Recording retriever for engine fixtures

class RecordingRetriever final : public research::Retriever {
 public:
  explicit RecordingRetriever(std::vector<research::RetrievalHit> hits = {}) : hits_(std::move(hits)) {}

  std::vector<research::RetrievalHit> search(std::string_view query, std::size_t top_k) const override {
    queries.emplace_back(query);
    auto out = hits_;
    if (out.size() > top_k) out.resize(top_k);
    return out;
  }

  mutable std::vector<std::string> queries;

 private:
  std::vector<research::RetrievalHit> hits_;
};

}  // namespace testing_support
