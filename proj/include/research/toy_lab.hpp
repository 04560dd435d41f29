#pragma once

// Desk-scale closed loop: a synthetic two-hop QA world, a tabular softmax
// policy that writes rollout markup one macro-action at a time, and a GRPO
// training loop over the real rollout engine, reward and objective code.
//
// The policy only observes a coarse state derived from the completion so far
// (how many searches, what the last result was). It never sees the entities
// in the question, so answering correctly requires searching.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "research/error.hpp"
#include "research/grpo.hpp"
#include "research/retrieval.hpp"
#include "research/reward.hpp"
#include "research/rollout.hpp"
#include "research/tag_grammar.hpp"

namespace research::toy {

// ---------------------------------------------------------------------------
// World

inline constexpr std::string_view kBornIn = "BORN_IN";
inline constexpr std::string_view kCapitalOf = "CAPITAL_OF";

struct Fact {
  std::string subject;
  std::string relation;
  std::string object;
};

struct ToyQuestion {
  std::string person;
  std::string text;
  std::string gold;
};

struct WorldSize {
  std::size_t persons = 50;
  std::size_t countries = 20;
  std::size_t train_questions = 40;
  std::size_t validation_questions = 10;
};

inline std::string question_text(std::string_view person) {
  return "What is the capital of the country where " + std::string(person) + " was born?";
}

/// Subject-keyed facts: (person, BORN_IN, country) and (country, CAPITAL_OF,
/// capital), one capital per country.
struct ToyWorld {
  std::vector<std::string> persons;
  std::vector<std::string> countries;
  std::vector<std::string> capitals;
  std::vector<Fact> facts;
  std::map<std::string, Fact, std::less<>> by_subject;
  std::vector<ToyQuestion> train;
  std::vector<ToyQuestion> validation;

  std::vector<std::string> entities() const {
    std::vector<std::string> all = persons;
    all.insert(all.end(), countries.begin(), countries.end());
    all.insert(all.end(), capitals.begin(), capitals.end());
    return all;
  }

  const Fact* lookup(std::string_view subject) const {
    const auto it = by_subject.find(subject);
    return it == by_subject.end() ? nullptr : &it->second;
  }

  std::string answer_for(std::string_view person) const {
    const Fact* born = lookup(person);
    if (born == nullptr) return {};
    const Fact* capital = lookup(born->object);
    return capital == nullptr ? std::string() : capital->object;
  }

  static ToyWorld generate(std::uint64_t seed, WorldSize size = {}) {
    if (size.train_questions + size.validation_questions > size.persons || size.countries == 0) {
      throw Error(ErrorCode::kInvalidArgument, "world too small for the requested questions");
    }
    std::mt19937_64 rng(seed);
    static constexpr std::array<std::string_view, 16> kSyllables = {
        "ka", "lo", "mi", "ren", "tu", "sa", "vor", "de", "qui", "ba", "zel", "no", "fi", "gar", "hu", "pe"};
    std::set<std::string> used;
    auto make_names = [&](std::size_t count, std::string_view suffix) {
      std::vector<std::string> names;
      while (names.size() < count) {
        std::string name;
        for (int k = 0; k < 3; ++k) name += kSyllables[rng() % kSyllables.size()];
        name += suffix;
        name[0] = static_cast<char>(name[0] - 'a' + 'A');
        if (used.insert(name).second) names.push_back(std::move(name));
      }
      return names;
    };

    ToyWorld w;
    w.persons = make_names(size.persons, "");
    w.countries = make_names(size.countries, "ia");
    w.capitals = make_names(size.countries, "burg");
    for (std::size_t c = 0; c < w.countries.size(); ++c) {
      w.facts.push_back({w.countries[c], std::string(kCapitalOf), w.capitals[c]});
    }
    for (const auto& p : w.persons) {
      w.facts.push_back({p, std::string(kBornIn), w.countries[rng() % w.countries.size()]});
    }
    for (const auto& f : w.facts) w.by_subject.emplace(f.subject, f);

    std::vector<std::size_t> order(w.persons.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 0; k < size.train_questions + size.validation_questions; ++k) {
      const auto& p = w.persons[order[k]];
      ToyQuestion q{p, question_text(p), w.answer_for(p)};
      (k < size.train_questions ? w.train : w.validation).push_back(std::move(q));
    }
    return w;
  }
};

inline std::string fact_sentence(const Fact& f) {
  if (f.relation == kBornIn) return f.subject + " was born in " + f.object + ".";
  return "The capital of " + f.subject + " is " + f.object + ".";
}

/// One hit for a known fact subject, none otherwise.
inline std::vector<RetrievalHit> toy_retrieve(std::string_view query, const ToyWorld& world) {
  const auto first = query.find_first_not_of(" \t\n");
  if (first == std::string_view::npos) return {};
  query = query.substr(first, query.find_last_not_of(" \t\n") - first + 1);
  const Fact* f = world.lookup(query);
  if (f == nullptr) return {};
  return {{f->subject, 1.0, f->subject, fact_sentence(*f)}};
}

class ToyRetriever final : public Retriever {
 public:
  explicit ToyRetriever(const ToyWorld& world) : world_(&world) {}
  std::vector<RetrievalHit> search(std::string_view query, std::size_t top_k) const override {
    auto hits = toy_retrieve(query, *world_);
    if (hits.size() > top_k) hits.resize(top_k);
    return hits;
  }

 private:
  const ToyWorld* world_;
};

// ---------------------------------------------------------------------------
// State and actions

enum class ResultKind { kNone, kBornFact, kCapitalFact, kMiss };
enum class ToyAction { kThink, kSearchPerson, kSearchCountry, kAnswerFromResult, kAnswerGuess };

inline constexpr std::size_t kNumResultKinds = 4;
inline constexpr std::size_t kNumStates = 3 * kNumResultKinds;
inline constexpr std::size_t kNumActions = 5;

constexpr std::string_view to_string(ToyAction a) {
  switch (a) {
    case ToyAction::kThink: return "Think";
    case ToyAction::kSearchPerson: return "SearchPerson";
    case ToyAction::kSearchCountry: return "SearchCountry";
    case ToyAction::kAnswerFromResult: return "AnswerFromResult";
    case ToyAction::kAnswerGuess: return "AnswerGuess";
  }
  return "?";
}

struct ToyState {
  std::size_t searches_done = 0;  // saturates at 2
  ResultKind last_result = ResultKind::kNone;

  std::size_t index() const {
    return std::min<std::size_t>(searches_done, 2) * kNumResultKinds +
           static_cast<std::size_t>(last_result);
  }
};

/// What the policy can read back from its own completion.
struct Observation {
  ToyState state;
  std::string last_object;   // object entity of the last retrieved fact
  std::string last_country;  // most recent country seen in a result
};

namespace detail {

/// Parses a rendered toy result body: `"subject", sentence`.
inline std::optional<Fact> parse_result(std::string_view body) {
  static constexpr std::string_view kBorn = " was born in ";
  static constexpr std::string_view kCapital = "The capital of ";
  const auto comma = body.find("\", ");
  if (body.empty() || body.front() != '"' || comma == std::string_view::npos) return std::nullopt;
  std::string_view sentence = body.substr(comma + 3);
  if (sentence.empty() || sentence.back() != '.') return std::nullopt;
  sentence.remove_suffix(1);
  if (const auto pos = sentence.find(kBorn); pos != std::string_view::npos) {
    return Fact{std::string(sentence.substr(0, pos)), std::string(kBornIn),
                std::string(sentence.substr(pos + kBorn.size()))};
  }
  if (sentence.rfind(kCapital, 0) == 0) {
    sentence.remove_prefix(kCapital.size());
    const auto is = sentence.find(" is ");
    if (is == std::string_view::npos) return std::nullopt;
    return Fact{std::string(sentence.substr(0, is)), std::string(kCapitalOf),
                std::string(sentence.substr(is + 4))};
  }
  return std::nullopt;
}

}  // namespace detail

inline Observation observe(std::string_view completion) {
  Observation obs;
  const auto parsed = parse_rollout(completion);
  for (const auto& seg : parsed.segments) {
    if (seg.kind == SegmentKind::kSearch) {
      ++obs.state.searches_done;
    } else if (seg.kind == SegmentKind::kResult) {
      const auto fact = detail::parse_result(seg.body);
      if (!fact) {
        obs.state.last_result = ResultKind::kMiss;
        obs.last_object.clear();
      } else if (fact->relation == kBornIn) {
        obs.state.last_result = ResultKind::kBornFact;
        obs.last_object = fact->object;
        obs.last_country = fact->object;
      } else {
        obs.state.last_result = ResultKind::kCapitalFact;
        obs.last_object = fact->object;
        obs.last_country = fact->subject;
      }
    }
  }
  obs.state.searches_done = std::min<std::size_t>(obs.state.searches_done, 2);
  return obs;
}

/// The person named in a toy question, or empty.
inline std::string person_in(std::string_view question) {
  static constexpr std::string_view kLead = "the country where ";
  static constexpr std::string_view kTail = " was born";
  const auto lead = question.find(kLead);
  if (lead == std::string_view::npos) return {};
  const auto begin = lead + kLead.size();
  const auto end = question.find(kTail, begin);
  if (end == std::string_view::npos) return {};
  return std::string(question.substr(begin, end - begin));
}

inline constexpr std::string_view kThinkText =
    "<think> I should decide what to look up next. </think>";

// ---------------------------------------------------------------------------
// Policy session

/// Samples macro-actions from a tabular softmax policy. Each action is one
/// token carrying log pi(a|s) and the decision index state * 5 + action.
/// A call ends after a search (stop marker), an answer (EOS) or when the
/// token allowance is used up (LENGTH).
class ToyPolicyGenerator final : public PolicyGenerator {
 public:
  ToyPolicyGenerator(const TabularSoftmaxPolicy& policy, const ToyWorld& world, std::uint64_t seed)
      : policy_(&policy), world_(&world), rng_(seed) {}

  GenerationResult generate(const GenerationRequest& request) override {
    const Prompt& prompt = *request.prompt;
    const std::string person =
        person_in(prompt.mode == PromptMode::kInstruct ? prompt.user : prompt.text);
    const Observation obs = observe(request.completion);
    const std::size_t state = obs.state.index();

    GenerationResult out;
    while (out.tokens.size() < request.max_new_tokens) {
      const auto probs = policy_->probabilities(state);
      const auto action = static_cast<ToyAction>(
          std::discrete_distribution<std::size_t>(probs.begin(), probs.end())(rng_));
      const auto decision = static_cast<int>(state * kNumActions + static_cast<std::size_t>(action));
      const std::string text = expand(action, person, obs);
      out.tokens.push_back({text, policy_->log_prob(state, static_cast<std::size_t>(action)), decision});
      out.text += text;
      if (action == ToyAction::kSearchPerson || action == ToyAction::kSearchCountry) {
        out.stopped_on = StopReason::kStopMarker;
        return out;
      }
      if (action == ToyAction::kAnswerFromResult || action == ToyAction::kAnswerGuess) {
        out.stopped_on = StopReason::kEos;
        return out;
      }
    }
    out.stopped_on = StopReason::kLength;
    return out;
  }

 private:
  std::string expand(ToyAction action, const std::string& person, const Observation& obs) {
    switch (action) {
      case ToyAction::kThink:
        return std::string(kThinkText);
      case ToyAction::kSearchPerson:
        return "<search>" + person + "</search>";
      case ToyAction::kSearchCountry:
        return "<search>" + (obs.last_object.empty() ? std::string("country") : obs.last_object) +
               "</search>";
      case ToyAction::kAnswerFromResult:
        return "<answer> The final answer is \\boxed{" + obs.last_object + "} </answer>";
      case ToyAction::kAnswerGuess: {
        const auto all = world_->entities();
        return "<answer> The final answer is \\boxed{" + all[rng_() % all.size()] + "} </answer>";
      }
    }
    return {};
  }

  const TabularSoftmaxPolicy* policy_;
  const ToyWorld* world_;
  std::mt19937_64 rng_;
};

inline PolicyFactory toy_policy_factory(const TabularSoftmaxPolicy& policy, const ToyWorld& world) {
  return [&policy, &world](std::uint64_t seed) {
    return std::make_unique<ToyPolicyGenerator>(policy, world, seed);
  };
}

inline TabularSoftmaxPolicy uniform_toy_policy() { return TabularSoftmaxPolicy(kNumStates, kNumActions); }

/// SearchPerson, then SearchCountry, then AnswerFromResult, in every state.
inline TabularSoftmaxPolicy optimal_toy_policy(double margin = 50.0) {
  TabularSoftmaxPolicy p = uniform_toy_policy();
  for (std::size_t s = 0; s < kNumStates; ++s) {
    const auto kind = static_cast<ResultKind>(s % kNumResultKinds);
    ToyAction best = ToyAction::kSearchPerson;
    if (kind == ResultKind::kBornFact) best = ToyAction::kSearchCountry;
    if (kind == ResultKind::kCapitalFact) best = ToyAction::kAnswerFromResult;
    p.logit(s, static_cast<std::size_t>(best)) = margin;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Training

struct ToyTrainConfig {
  GrpoConfig grpo;  // G = 5, clip 0.2, beta 0.001
  double learning_rate = 0.1;
  std::size_t batch_questions = 8;
  std::size_t steps = 500;
  std::uint64_t seed = 0;
  std::size_t eval_every = 10;
  double temperature = 1.0;
  // Two hops need two searches; one spare search is tolerated.
  RolloutBudget budget{3, 256, 64};
  bool mask_injected = true;  // false treats result tokens as policy tokens

  void validate() const {
    grpo.validate();
    budget.validate();
    if (steps == 0) throw Error(ErrorCode::kInvalidArgument, "steps must be >= 1");
    if (batch_questions == 0) throw Error(ErrorCode::kInvalidArgument, "batch_questions must be >= 1");
    if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning_rate must be > 0");
    if (eval_every == 0) throw Error(ErrorCode::kInvalidArgument, "eval_every must be >= 1");
  }
};

struct StepMetrics {
  std::size_t step = 0;
  double mean_reward = 0.0;
  std::optional<double> val_reward;
  double mean_search_count = 0.0;
  double mean_response_tokens = 0.0;
  double objective = 0.0;
  double kl_term = 0.0;
  double clip_fraction = 0.0;
};

struct TrainingLog {
  std::vector<StepMetrics> steps;
  TabularSoftmaxPolicy reference;
  TabularSoftmaxPolicy policy;
};

/// Token track plus decision labels for one rollout. Injected tokens get
/// log-prob 0 under every policy and no decision.
inline std::pair<TokenTrack, DecisionTrack> track_for(const RolloutRecord& rec,
                                                      const TabularSoftmaxPolicy& reference,
                                                      bool mask_injected = true) {
  TokenTrack tr;
  DecisionTrack dec;
  for (const auto& tok : rec.tokens) {
    const double old = tok.logprob.value_or(0.0);
    const bool policy_token = tok.origin == TokenOrigin::kPolicy;
    tr.mask.push_back(policy_token || !mask_injected ? 1.0 : 0.0);
    tr.logp_old.push_back(old);
    tr.logp_current.push_back(old);
    tr.logp_ref.push_back(tok.label >= 0 ? reference.log_prob(static_cast<std::size_t>(tok.label)) : old);
    dec.push_back(tok.label);
  }
  return {std::move(tr), std::move(dec)};
}

struct GroupBatch {
  RolloutGroup group;
  std::vector<DecisionTrack> decisions;
  std::vector<RolloutRecord> records;
  std::vector<RewardBreakdown> rewards;
};

inline GroupBatch collect_group(const ToyQuestion& q, const ToyWorld& world,
                                const TabularSoftmaxPolicy& policy,
                                const TabularSoftmaxPolicy& reference, const ToyTrainConfig& cfg,
                                std::uint64_t seed) {
  const ToyRetriever retriever(world);
  GroupOptions opts;
  opts.group_size = cfg.grpo.group_size;
  opts.budget = cfg.budget;
  opts.top_k = 5;
  opts.temperature = cfg.temperature;
  opts.base_seed = seed;

  GroupBatch batch;
  batch.records = run_group(q.text, PromptMode::kBase, toy_policy_factory(policy, world), retriever, opts);
  for (const auto& rec : batch.records) {
    batch.rewards.push_back(compute_reward(rec, {q.gold}));
    batch.group.rewards.push_back(batch.rewards.back().reward);
    auto [track, decisions] = track_for(rec, reference, cfg.mask_injected);
    batch.group.tracks.push_back(std::move(track));
    batch.decisions.push_back(std::move(decisions));
  }
  compute_advantages(batch.group);
  return batch;
}

/// Mean reward of `samples` rollouts per question.
inline double evaluate_policy(const std::vector<ToyQuestion>& questions, const ToyWorld& world,
                              const TabularSoftmaxPolicy& policy, const ToyTrainConfig& cfg,
                              std::uint64_t seed, std::size_t samples) {
  const ToyRetriever retriever(world);
  const auto factory = toy_policy_factory(policy, world);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    const auto prompt = build_prompt(questions[qi].text, PromptMode::kBase);
    for (std::size_t k = 0; k < samples; ++k) {
      auto session = factory(seed + qi * 1000 + k);
      const auto rec = run_rollout(prompt, *session, retriever, cfg.budget, 5, cfg.temperature);
      total += compute_reward(rec, {questions[qi].gold}).reward;
      ++n;
    }
  }
  return n == 0 ? 0.0 : total / static_cast<double>(n);
}

/// One GRPO update per step; the reference policy is the initial one.
inline TrainingLog train_toy(const ToyWorld& world, const ToyTrainConfig& cfg,
                             TabularSoftmaxPolicy initial = uniform_toy_policy()) {
  cfg.validate();
  if (world.train.empty()) throw Error(ErrorCode::kInvalidArgument, "world has no training questions");

  TrainingLog log;
  log.reference = initial;
  log.policy = std::move(initial);
  std::mt19937_64 rng(cfg.seed);

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    StepMetrics m;
    m.step = step;
    if (step % cfg.eval_every == 0 && !world.validation.empty()) {
      m.val_reward = evaluate_policy(world.validation, world, log.policy, cfg,
                                     0x9e3779b97f4a7c15ULL ^ (cfg.seed * 1000003 + step),
                                     cfg.grpo.group_size);
    }

    std::vector<double> grad(log.policy.size(), 0.0);
    std::size_t rollouts = 0;
    for (std::size_t b = 0; b < cfg.batch_questions; ++b) {
      const auto& q = world.train[rng() % world.train.size()];
      auto batch = collect_group(q, world, log.policy, log.reference, cfg, rng());
      refresh_current_logprobs(batch.group, batch.decisions, log.policy);
      const auto report = masked_objective(batch.group, cfg.grpo);
      const auto g = categorical_policy_gradient(batch.group, cfg.grpo, log.policy, batch.decisions);
      for (std::size_t k = 0; k < grad.size(); ++k) grad[k] += g[k];

      m.objective += report.objective;
      m.kl_term += report.kl_term;
      m.clip_fraction += report.clip_fraction;
      for (std::size_t i = 0; i < batch.records.size(); ++i) {
        m.mean_reward += batch.rewards[i].reward;
        m.mean_search_count += static_cast<double>(batch.records[i].search_count);
        m.mean_response_tokens += static_cast<double>(batch.records[i].policy_token_count);
        ++rollouts;
      }
    }
    const double groups = static_cast<double>(cfg.batch_questions);
    m.objective /= groups;
    m.kl_term /= groups;
    m.clip_fraction /= groups;
    m.mean_reward /= static_cast<double>(rollouts);
    m.mean_search_count /= static_cast<double>(rollouts);
    m.mean_response_tokens /= static_cast<double>(rollouts);

    // Gradient ascent on the summed per-question objectives.
    auto& logits = log.policy.logits();
    for (std::size_t k = 0; k < logits.size(); ++k) logits[k] += cfg.learning_rate * grad[k];
    log.steps.push_back(m);
  }
  return log;
}

/// Exact KL(current || reference) averaged uniformly over states.
inline double mean_state_kl(const TabularSoftmaxPolicy& current, const TabularSoftmaxPolicy& reference) {
  double total = 0.0;
  for (std::size_t s = 0; s < current.num_states(); ++s) {
    const auto p = current.probabilities(s);
    for (std::size_t a = 0; a < current.num_actions(); ++a) {
      if (p[a] > 0.0) total += p[a] * (current.log_prob(s, a) - reference.log_prob(s, a));
    }
  }
  return total / static_cast<double>(current.num_states());
}

// ---------------------------------------------------------------------------
// Metrics output

inline nlohmann::json to_json(const StepMetrics& m) {
  nlohmann::json j = {{"step", m.step},
                      {"mean_reward", m.mean_reward},
                      {"mean_search_count", m.mean_search_count},
                      {"mean_response_tokens", m.mean_response_tokens},
                      {"objective", m.objective},
                      {"kl_term", m.kl_term},
                      {"clip_fraction", m.clip_fraction}};
  if (m.val_reward) j["val_reward"] = *m.val_reward;
  return j;
}

inline void write_metrics_jsonl(std::ostream& out, const TrainingLog& log) {
  for (const auto& m : log.steps) out << to_json(m).dump() << '\n';
}

inline void write_metrics_csv(std::ostream& out, const TrainingLog& log) {
  out << "step,mean_reward,val_reward,mean_search_count,mean_response_tokens,objective,kl_term,"
         "clip_fraction\n";
  for (const auto& m : log.steps) {
    out << m.step << ',' << m.mean_reward << ',';
    if (m.val_reward) out << *m.val_reward;
    out << ',' << m.mean_search_count << ',' << m.mean_response_tokens << ',' << m.objective << ','
        << m.kl_term << ',' << m.clip_fraction << '\n';
  }
}

/// Mean of `field` over steps [begin, end).
template <typename Field>
double window_mean(const TrainingLog& log, std::size_t begin, std::size_t end, Field field) {
  end = std::min(end, log.steps.size());
  if (begin >= end) return 0.0;
  double total = 0.0;
  for (std::size_t i = begin; i < end; ++i) total += field(log.steps[i]);
  return total / static_cast<double>(end - begin);
}

}  // namespace research::toy
