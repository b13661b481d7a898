#pragma once

#include <cstdint>
#include <vector>

#include "manic/contentment.hpp"
#include "manic/learning_system.hpp"
#include "manic/types.hpp"

namespace manic {

struct GaOptions {
  double crossover = 0.7;
  double mutation = 0.2;
  double sigma = 0.1;
  std::size_t tournament = 2;
  std::size_t elites = 1;
};

// Pool of fixed-horizon candidate plans with cached utilities.
class PlanPool {
 public:
  PlanPool() = default;
  static PlanPool init(std::size_t size, std::size_t horizon, const ActionSpace& space, std::uint64_t seed,
                       GaOptions ga = {});

  std::size_t size() const { return plans_.size(); }
  std::size_t horizon() const { return horizon_; }
  const ActionSpace& action_space() const { return space_; }
  const GaOptions& ga() const { return ga_; }
  const std::vector<Plan>& plans() const { return plans_; }
  const Plan& plan(std::size_t i) const { return plans_.at(i); }
  bool evaluated() const { return evaluated_; }
  // Throw kStaleScores when the pool has not been evaluated since its last change.
  const std::vector<double>& scores() const;
  std::size_t elite_index() const;
  double elite_score() const;
  const Plan& elite() const;

  void evaluate(const LearningSystem& ls, const ContentmentModel& cm, const Belief& v0);
  void refine(const LearningSystem& ls, const ContentmentModel& cm, const Belief& v0, std::size_t iterations);
  Action choose_action() const;
  // Drops each plan's first action and appends a random one.
  void advance();

  // Replaces plan i; invalidates scores.
  void set_plan(std::size_t i, Plan p);
  std::uint64_t hash() const;

 private:
  std::size_t tournament_pick();
  void update_elite();

  std::vector<Plan> plans_;
  std::vector<double> scores_;
  std::size_t horizon_ = 0;
  ActionSpace space_;
  GaOptions ga_;
  Rng rng_;
  std::size_t elite_ = 0;
  bool evaluated_ = false;
};

double score_plan(const LearningSystem& ls, const ContentmentModel& cm, const Belief& v0, const Plan& plan);

// Every plan over a discrete space, in lexicographic index order.
std::vector<Plan> enumerate_plans(const ActionSpace& space, std::size_t horizon);

}  // namespace manic
