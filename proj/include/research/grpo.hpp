#pragma once

// Group-relative advantages, the masked clipped surrogate with a KL penalty,
// and its exact gradient for tabular softmax policies.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "research/error.hpp"

namespace research {

enum class RatioMode {
  kToken,     // one ratio per token, advantage broadcast over the rollout
  kSequence,  // one ratio per rollout from the summed masked log-probs
};

struct GrpoConfig {
  std::size_t group_size = 5;
  double clip_ratio = 0.2;
  double kl_coef = 0.001;
  RatioMode ratio_mode = RatioMode::kToken;

  void validate() const {
    if (group_size < 2) throw Error(ErrorCode::kGroupTooSmall, "group_size must be >= 2");
    if (!(clip_ratio > 0.0 && clip_ratio < 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "clip_ratio must be in (0, 1)");
    }
    if (!(kl_coef >= 0.0) || !std::isfinite(kl_coef)) {
      throw Error(ErrorCode::kInvalidArgument, "kl_coef must be >= 0");
    }
  }
};

/// Aligned per-token log-probabilities of one rollout under the current, the
/// behaviour (old) and the reference policy. mask = 1 for policy tokens.
struct TokenTrack {
  std::vector<double> logp_current;
  std::vector<double> logp_old;
  std::vector<double> logp_ref;
  std::vector<double> mask;

  std::size_t size() const { return mask.size(); }

  void check() const {
    const std::size_t n = mask.size();
    if (logp_current.size() != n || logp_old.size() != n || logp_ref.size() != n) {
      throw Error(ErrorCode::kAlignmentError, "token track lengths disagree");
    }
    for (double m : mask) {
      if (m != 0.0 && m != 1.0) throw Error(ErrorCode::kAlignmentError, "mask entries must be 0 or 1");
    }
  }
};

struct RolloutGroup {
  std::vector<TokenTrack> tracks;
  std::vector<double> rewards;
  std::vector<double> advantages;  // filled by compute_advantages
};

inline constexpr double kMinRewardStd = 1e-6;

/// (r - mean) / std with the population std; all zeros when std < 1e-6.
inline std::vector<double> compute_advantages(const std::vector<double>& rewards) {
  if (rewards.size() < 2) throw Error(ErrorCode::kGroupTooSmall, "need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double std = std::sqrt(var / n);

  std::vector<double> out(rewards.size(), 0.0);
  if (std < kMinRewardStd) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / std;
  return out;
}

inline void compute_advantages(RolloutGroup& group) {
  group.advantages = compute_advantages(group.rewards);
}

/// exp(d) - d - 1 with d = logp_ref - logp_current. Nonnegative.
inline double kl_token(double logp_current, double logp_ref) {
  const double d = logp_ref - logp_current;
  return std::exp(d) - d - 1.0;
}

struct ObjectiveReport {
  double objective = 0.0;
  double policy_term = 0.0;
  double kl_term = 0.0;
  double clip_fraction = 0.0;
};

namespace detail {

inline void check_group(const RolloutGroup& group) {
  if (group.tracks.size() != group.advantages.size()) {
    throw Error(ErrorCode::kAlignmentError, "advantages do not match rollouts");
  }
  for (const auto& t : group.tracks) t.check();
}

struct Surrogate {
  double value;
  bool clipped;  // min() picked the clipped branch strictly
};

inline Surrogate clipped_surrogate(double ratio, double advantage, double eps) {
  const double unclipped = ratio * advantage;
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage;
  if (clipped < unclipped) return {clipped, true};
  return {unclipped, false};
}

}  // namespace detail

/// Per-rollout masked-token mean of the clipped surrogate and of the KL
/// estimate, averaged over the group: objective = policy_term - beta * kl_term.
/// Positions with mask 0 are never read beyond the mask itself.
inline ObjectiveReport masked_objective(const RolloutGroup& group, const GrpoConfig& cfg) {
  detail::check_group(group);
  ObjectiveReport report;
  if (group.tracks.empty()) return report;

  std::size_t masked_total = 0;
  std::size_t clipped_total = 0;
  for (std::size_t i = 0; i < group.tracks.size(); ++i) {
    const auto& tr = group.tracks[i];
    const double adv = group.advantages[i];
    std::size_t count = 0;
    double surrogate = 0.0;
    double kl = 0.0;
    double log_ratio = 0.0;
    for (std::size_t t = 0; t < tr.size(); ++t) {
      if (tr.mask[t] == 0.0) continue;
      ++count;
      kl += kl_token(tr.logp_current[t], tr.logp_ref[t]);
      if (cfg.ratio_mode == RatioMode::kToken) {
        const auto s = detail::clipped_surrogate(std::exp(tr.logp_current[t] - tr.logp_old[t]),
                                                 adv, cfg.clip_ratio);
        surrogate += s.value;
        clipped_total += s.clipped ? 1 : 0;
      } else {
        log_ratio += tr.logp_current[t] - tr.logp_old[t];
      }
    }
    masked_total += count;
    if (count == 0) continue;
    if (cfg.ratio_mode == RatioMode::kToken) {
      report.policy_term += surrogate / static_cast<double>(count);
    } else {
      const auto s = detail::clipped_surrogate(std::exp(log_ratio), adv, cfg.clip_ratio);
      report.policy_term += s.value;
      clipped_total += s.clipped ? count : 0;
    }
    report.kl_term += kl / static_cast<double>(count);
  }
  const double g = static_cast<double>(group.tracks.size());
  report.policy_term /= g;
  report.kl_term /= g;
  report.objective = report.policy_term - cfg.kl_coef * report.kl_term;
  report.clip_fraction =
      masked_total == 0 ? 0.0 : static_cast<double>(clipped_total) / static_cast<double>(masked_total);
  return report;
}

// ---------------------------------------------------------------------------
// Tabular softmax policy

/// pi(a|s) = softmax(logits[s, :]). Logits are stored row-major.
class TabularSoftmaxPolicy {
 public:
  TabularSoftmaxPolicy() = default;
  TabularSoftmaxPolicy(std::size_t num_states, std::size_t num_actions)
      : states_(num_states), actions_(num_actions), logits_(num_states * num_actions, 0.0) {}

  std::size_t num_states() const { return states_; }
  std::size_t num_actions() const { return actions_; }
  std::size_t size() const { return logits_.size(); }

  std::size_t index(std::size_t state, std::size_t action) const { return state * actions_ + action; }
  double& logit(std::size_t state, std::size_t action) { return logits_[index(state, action)]; }
  double logit(std::size_t state, std::size_t action) const { return logits_[index(state, action)]; }
  std::vector<double>& logits() { return logits_; }
  const std::vector<double>& logits() const { return logits_; }

  std::vector<double> probabilities(std::size_t state) const {
    const double* row = logits_.data() + state * actions_;
    const double top = *std::max_element(row, row + actions_);
    std::vector<double> p(actions_);
    double z = 0.0;
    for (std::size_t a = 0; a < actions_; ++a) z += p[a] = std::exp(row[a] - top);
    for (double& v : p) v /= z;
    return p;
  }

  double log_prob(std::size_t state, std::size_t action) const {
    const double* row = logits_.data() + state * actions_;
    const double top = *std::max_element(row, row + actions_);
    double z = 0.0;
    for (std::size_t a = 0; a < actions_; ++a) z += std::exp(row[a] - top);
    return row[action] - top - std::log(z);
  }

  /// Decision index -> log pi; the index is state * num_actions + action.
  double log_prob(std::size_t decision) const {
    return log_prob(decision / actions_, decision % actions_);
  }

 private:
  std::size_t states_ = 0;
  std::size_t actions_ = 0;
  std::vector<double> logits_;
};

/// Per-token decision labels for one rollout: the (state, action) index that
/// produced the token, or -1 for a token whose log-prob does not depend on
/// the logits.
using DecisionTrack = std::vector<int>;

namespace detail {

inline void check_decisions(const RolloutGroup& group, const std::vector<DecisionTrack>& decisions,
                            const TabularSoftmaxPolicy& policy) {
  if (decisions.size() != group.tracks.size()) {
    throw Error(ErrorCode::kAlignmentError, "decision tracks do not match rollouts");
  }
  for (std::size_t i = 0; i < decisions.size(); ++i) {
    if (decisions[i].size() != group.tracks[i].size()) {
      throw Error(ErrorCode::kAlignmentError, "decision track length disagrees");
    }
    for (std::size_t t = 0; t < decisions[i].size(); ++t) {
      const int d = decisions[i][t];
      if (d < -1 || (d >= 0 && static_cast<std::size_t>(d) >= policy.size())) {
        throw Error(ErrorCode::kUnknownStateAction,
                    "rollout " + std::to_string(i) + " token " + std::to_string(t) +
                        " has decision " + std::to_string(d));
      }
    }
  }
}

}  // namespace detail

/// Overwrites logp_current at every labeled token with the policy's log-prob.
inline void refresh_current_logprobs(RolloutGroup& group, const std::vector<DecisionTrack>& decisions,
                                     const TabularSoftmaxPolicy& policy) {
  detail::check_decisions(group, decisions, policy);
  for (std::size_t i = 0; i < group.tracks.size(); ++i) {
    for (std::size_t t = 0; t < decisions[i].size(); ++t) {
      if (decisions[i][t] >= 0) {
        group.tracks[i].logp_current[t] =
            policy.log_prob(static_cast<std::size_t>(decisions[i][t]));
      }
    }
  }
}

/// Exact gradient of masked_objective with respect to the logits, where
/// logp_current at labeled tokens is taken from `policy` (the stored values
/// at those positions are ignored). Same layout as policy.logits().
inline std::vector<double> categorical_policy_gradient(const RolloutGroup& group,
                                                       const GrpoConfig& cfg,
                                                       const TabularSoftmaxPolicy& policy,
                                                       const std::vector<DecisionTrack>& decisions) {
  detail::check_group(group);
  detail::check_decisions(group, decisions, policy);
  const std::size_t num_actions = policy.num_actions();
  std::vector<double> grad(policy.size(), 0.0);
  if (group.tracks.empty()) return grad;

  // Probabilities are shared by every token visiting the same state.
  std::vector<std::vector<double>> probs(policy.num_states());
  auto state_probs = [&](std::size_t s) -> const std::vector<double>& {
    if (probs[s].empty()) probs[s] = policy.probabilities(s);
    return probs[s];
  };
  // d log pi(a|s) / d logits[s, b] = [a == b] - pi(b|s)
  auto add_score = [&](int decision, double weight) {
    const std::size_t s = static_cast<std::size_t>(decision) / num_actions;
    const std::size_t a = static_cast<std::size_t>(decision) % num_actions;
    const auto& p = state_probs(s);
    for (std::size_t b = 0; b < num_actions; ++b) {
      grad[s * num_actions + b] += weight * ((a == b ? 1.0 : 0.0) - p[b]);
    }
  };

  const double inv_g = 1.0 / static_cast<double>(group.tracks.size());
  for (std::size_t i = 0; i < group.tracks.size(); ++i) {
    const auto& tr = group.tracks[i];
    const auto& dec = decisions[i];
    const double adv = group.advantages[i];

    auto current = [&](std::size_t t) {
      return dec[t] >= 0 ? policy.log_prob(static_cast<std::size_t>(dec[t])) : tr.logp_current[t];
    };

    std::size_t count = 0;
    double log_ratio = 0.0;
    for (std::size_t t = 0; t < tr.size(); ++t) {
      if (tr.mask[t] == 0.0) continue;
      ++count;
      log_ratio += current(t) - tr.logp_old[t];
    }
    if (count == 0) continue;
    const double per_token = inv_g / static_cast<double>(count);

    double seq_weight = 0.0;  // sequence mode: d surrogate / d log_ratio
    if (cfg.ratio_mode == RatioMode::kSequence) {
      const double ratio = std::exp(log_ratio);
      if (!detail::clipped_surrogate(ratio, adv, cfg.clip_ratio).clipped) seq_weight = adv * ratio;
    }

    for (std::size_t t = 0; t < tr.size(); ++t) {
      if (tr.mask[t] == 0.0 || dec[t] < 0) continue;
      const double lp = current(t);
      double weight = 0.0;
      if (cfg.ratio_mode == RatioMode::kToken) {
        const double ratio = std::exp(lp - tr.logp_old[t]);
        if (!detail::clipped_surrogate(ratio, adv, cfg.clip_ratio).clipped) {
          weight += per_token * adv * ratio;
        }
      } else {
        weight += inv_g * seq_weight;
      }
      // d kl / d logp_current = 1 - exp(logp_ref - logp_current)
      weight -= cfg.kl_coef * per_token * (1.0 - std::exp(tr.logp_ref[t] - lp));
      if (weight != 0.0) add_score(dec[t], weight);
    }
  }
  return grad;
}

}  // namespace research
