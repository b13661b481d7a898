#pragma once

#include <vector>

#include <json.hpp>

#include "manic/bootstrap.hpp"
#include "manic/environment.hpp"
#include "manic/learning_system.hpp"

namespace manic {

struct OpenLoopOptions {
  std::size_t horizon = 100;
  std::uint64_t seed = 1;
  // Start belief: encoder output (when present) refined against the first frame.
  RefineOptions inference{200, 0.02, 64, 0};
};

struct OpenLoopStart {
  Vec state;
  double model_mae = 0.0;
  double persistence_mae = 0.0;
};

struct OpenLoopReport {
  std::vector<OpenLoopStart> starts;
  // Mean absolute pixel error at each rollout step, averaged over starts.
  std::vector<double> model_by_step;
  std::vector<double> persistence_by_step;
  double model_mae = 0.0;
  double persistence_mae = 0.0;
  double ratio = 0.0;

  nlohmann::json to_json() const;
};

// From each start state, draws `horizon` random actions, records the real
// frames and compares them with the decoded open-loop rollout and with the
// first frame held still.
OpenLoopReport evaluate_open_loop(const LearningSystem& ls, const Environment& env, const std::vector<Vec>& start_states,
                                  const OpenLoopOptions& options);

// `count` evenly spaced ground-truth states from the last `holdout` fraction of the walk.
std::vector<Vec> heldout_start_states(const WalkDataset& ds, double holdout, std::size_t count);

}  // namespace manic
