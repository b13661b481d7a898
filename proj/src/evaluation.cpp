#include "manic/evaluation.hpp"

#include "manic/error.hpp"

namespace manic {

nlohmann::json OpenLoopReport::to_json() const {
  nlohmann::json starts_json = nlohmann::json::array();
  for (const auto& s : starts) {
    starts_json.push_back({{"state", std::vector<double>(s.state.data(), s.state.data() + s.state.size())},
                           {"model_mae", s.model_mae},
                           {"persistence_mae", s.persistence_mae}});
  }
  return {{"starts", starts_json},
          {"model_by_step", model_by_step},
          {"persistence_by_step", persistence_by_step},
          {"model_mae", model_mae},
          {"persistence_mae", persistence_mae},
          {"ratio", ratio}};
}

OpenLoopReport evaluate_open_loop(const LearningSystem& ls, const Environment& env, const std::vector<Vec>& start_states,
                                  const OpenLoopOptions& options) {
  require(!start_states.empty(), ErrorKind::kPrecondition, "open-loop evaluation needs start states");
  require(options.horizon >= 1, ErrorKind::kPrecondition, "open-loop horizon must be positive");
  require(env.frame_shape() == ls.frame(), ErrorKind::kShape, "environment frame differs from the learning system");
  OpenLoopReport report;
  report.model_by_step.assign(options.horizon, 0.0);
  report.persistence_by_step.assign(options.horizon, 0.0);
  const ActionSpace space = env.action_space();
  for (std::size_t s = 0; s < start_states.size(); ++s) {
    auto world = env.clone();
    world->reset(options.seed + s);
    world->set_state(start_states[s]);
    Rng actions(options.seed * 7919 + s);
    const Observation first = world->render();
    Plan plan;
    std::vector<Observation> real;
    for (std::size_t k = 0; k < options.horizon; ++k) {
      plan.actions.push_back(space.sample(actions));
      world->step(plan.actions.back());
      real.push_back(world->render());
    }
    Belief v = ls.has_encoder() ? ls.encode(first) : Belief::Zero(static_cast<Eigen::Index>(ls.belief_dims()));
    RefineOptions inference = options.inference;
    inference.seed = options.seed + s;
    v = ls.refine_beliefs(v, first, inference);
    const auto imagined = ls.imagine_video(v, plan);
    OpenLoopStart result{start_states[s], 0.0, 0.0};
    for (std::size_t k = 0; k < options.horizon; ++k) {
      const double m = mean_abs_difference(imagined[k], real[k]);
      const double p = mean_abs_difference(first, real[k]);
      result.model_mae += m / static_cast<double>(options.horizon);
      result.persistence_mae += p / static_cast<double>(options.horizon);
      report.model_by_step[k] += m / static_cast<double>(start_states.size());
      report.persistence_by_step[k] += p / static_cast<double>(start_states.size());
    }
    report.model_mae += result.model_mae / static_cast<double>(start_states.size());
    report.persistence_mae += result.persistence_mae / static_cast<double>(start_states.size());
    report.starts.push_back(std::move(result));
  }
  report.ratio = report.persistence_mae > 0.0 ? report.model_mae / report.persistence_mae : 0.0;
  return report;
}

std::vector<Vec> heldout_start_states(const WalkDataset& ds, double holdout, std::size_t count) {
  require(ds.has_true_states(), ErrorKind::kPrecondition, "dataset has no ground-truth states");
  require(count >= 1, ErrorKind::kPrecondition, "need at least one start");
  require(holdout > 0.0 && holdout < 1.0, ErrorKind::kPrecondition, "holdout must lie in (0, 1)");
  const std::size_t t = ds.size();
  const auto train = static_cast<std::size_t>(static_cast<double>(t) * (1.0 - holdout));
  require(train < t, ErrorKind::kPrecondition, "held-out tail is empty");
  const std::size_t tail = t - train;
  std::vector<Vec> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(ds.true_states[train + (i * tail) / count]);
  return out;
}

}  // namespace manic
