#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "manic/approximator.hpp"
#include "manic/learning_system.hpp"
#include "manic/types.hpp"

namespace manic {

inline constexpr double kUtilityDiscount = 0.97;

// Scalar utility h over beliefs.
class ContentmentModel {
 public:
  ContentmentModel() = default;
  explicit ContentmentModel(Approximator h);
  static ContentmentModel create(std::size_t belief_dims, const std::vector<std::size_t>& hidden, std::uint64_t seed);

  double operator()(const Belief& v) const;
  std::size_t belief_dims() const { return h_.input_size(); }
  const Approximator& model() const { return h_; }
  Approximator& model() { return h_; }

 private:
  Approximator h_;
};

// Discounted mean sum_k gamma^k h(v_k) / sum_k gamma^k.
double plan_utility(const ContentmentModel& cm, std::span<const Belief> beliefs, double gamma = kUtilityDiscount);
// Same aggregation over precomputed h values.
double discounted_mean(std::span<const double> values, double gamma = kUtilityDiscount);

struct PreferencePair {
  std::string winner;
  std::string loser;
  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

// One teacher judgement: a total order over candidate ids, best first.
struct PreferenceRecord {
  std::string session_id;
  std::int64_t timestamp_ms = 0;
  std::vector<std::string> ordering;
  std::vector<PreferencePair> pairs;

  // Builds a record and expands the ordering into n(n-1)/2 pairs.
  static PreferenceRecord from_ordering(std::string session_id, std::int64_t timestamp_ms,
                                        std::vector<std::string> ordering);
  nlohmann::json to_json() const;
  static PreferenceRecord from_json(const nlohmann::json& j);
};

std::vector<PreferencePair> expand_pairs(const std::vector<std::string>& ordering);

// Looks up the belief trace behind a candidate id; returns nullptr if unknown.
using TraceResolver = std::function<const std::vector<Belief>*(const std::string&)>;

// -log sigmoid(U(winner) - U(loser)) with U = plan_utility.
double ranking_loss(const ContentmentModel& cm, std::span<const Belief> winner, std::span<const Belief> loser);
// Accumulates d(ranking_loss)/d(h parameters) into *grad; returns the loss.
double ranking_loss_gradient(const ContentmentModel& cm, std::span<const Belief> winner,
                             std::span<const Belief> loser, Gradient* grad);

struct PreferenceReport {
  std::size_t pairs_used = 0;
  std::size_t train_pairs = 0;
  std::size_t heldout_pairs = 0;
  double heldout_accuracy = 0.0;
  double train_accuracy = 0.0;
  // Accuracy over every pair, train and held-out together.
  double overall_accuracy = 0.0;
  double final_loss = 0.0;

  nlohmann::json to_json() const;
};

struct PreferenceTraining {
  std::size_t epochs = 200;
  double rate = 0.05;
  double heldout_fraction = 0.2;
  std::uint64_t seed = 1;
};

// Fits h to the stored pairwise preferences by SGD on the logistic ranking
// loss. Belief traces are fixed; only h changes. Pairs are shuffled with the
// seed and the last heldout_fraction is kept out of training. Ties in
// utility count as half correct.
PreferenceReport train_preferences(ContentmentModel& cm, const std::vector<PreferenceRecord>& prefs,
                                   const TraceResolver& traces, const PreferenceTraining& options);

// Resolver over a fixed map of candidate id -> (v0, plan), rolled out through ls.
class RolloutTraceResolver {
 public:
  RolloutTraceResolver(const LearningSystem& ls, const std::map<std::string, std::pair<Belief, Plan>>& candidates);
  const std::vector<Belief>* operator()(const std::string& id) const;

 private:
  std::map<std::string, std::vector<Belief>> traces_;
};

using ContentmentFitness = std::function<double(const ContentmentModel&)>;

struct EvolutionOptions {
  std::size_t population = 8;
  std::size_t generations = 10;
  double sigma = 0.05;
  std::vector<std::size_t> hidden{16};
  std::uint64_t seed = 1;
};

struct EvolutionResult {
  ContentmentModel best;
  double best_fitness = 0.0;
  // Best fitness seen so far, one entry per generation.
  std::vector<double> best_per_generation;
};

// (mu + lambda) evolution of h parameter vectors. The top half (ties to the
// lower index) survives each generation and is refilled with Gaussian
// perturbations of the survivors. The learning system is shared by every
// candidate; the fitness callback runs whatever closed-loop episode the
// caller wants to score.
EvolutionResult evolve_contentment(std::size_t belief_dims, const ContentmentFitness& fitness,
                                   const EvolutionOptions& options);

}  // namespace manic
