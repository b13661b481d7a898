#include "manic/planner.hpp"

#include <algorithm>

#include "manic/binary_io.hpp"
#include "manic/error.hpp"

namespace manic {

PlanPool PlanPool::init(std::size_t size, std::size_t horizon, const ActionSpace& space, std::uint64_t seed,
                        GaOptions ga) {
  require(size >= 1, ErrorKind::kPrecondition, "pool size must be at least 1");
  require(horizon >= 1, ErrorKind::kPrecondition, "plan horizon must be at least 1");
  require(space.dims >= 1, ErrorKind::kPrecondition, "action space is empty");
  PlanPool pool;
  pool.horizon_ = horizon;
  pool.space_ = space;
  pool.ga_ = ga;
  pool.rng_.seed(seed);
  pool.plans_.resize(size);
  for (auto& p : pool.plans_) {
    p.actions.reserve(horizon);
    for (std::size_t k = 0; k < horizon; ++k) p.actions.push_back(space.sample(pool.rng_));
  }
  pool.scores_.assign(size, 0.0);
  return pool;
}

const std::vector<double>& PlanPool::scores() const {
  require(evaluated_, ErrorKind::kStaleScores, "plan pool scores are stale; evaluate first");
  return scores_;
}

std::size_t PlanPool::elite_index() const {
  require(evaluated_, ErrorKind::kStaleScores, "plan pool scores are stale; evaluate first");
  return elite_;
}

double PlanPool::elite_score() const { return scores()[elite_index()]; }

const Plan& PlanPool::elite() const { return plans_[elite_index()]; }

double score_plan(const LearningSystem& ls, const ContentmentModel& cm, const Belief& v0, const Plan& plan) {
  auto trace = ls.rollout(v0, plan);
  return plan_utility(cm, trace);
}

void PlanPool::update_elite() {
  elite_ = 0;
  for (std::size_t i = 1; i < scores_.size(); ++i)
    if (scores_[i] > scores_[elite_]) elite_ = i;
}

void PlanPool::evaluate(const LearningSystem& ls, const ContentmentModel& cm, const Belief& v0) {
  for (std::size_t i = 0; i < plans_.size(); ++i) scores_[i] = score_plan(ls, cm, v0, plans_[i]);
  update_elite();
  evaluated_ = true;
}

std::size_t PlanPool::tournament_pick() {
  std::uniform_int_distribution<std::size_t> pick(0, plans_.size() - 1);
  std::size_t best = pick(rng_);
  for (std::size_t k = 1; k < ga_.tournament; ++k) {
    std::size_t c = pick(rng_);
    if (scores_[c] > scores_[best] || (scores_[c] == scores_[best] && c < best)) best = c;
  }
  return best;
}

void PlanPool::refine(const LearningSystem& ls, const ContentmentModel& cm, const Belief& v0, std::size_t iterations) {
  require(evaluated_, ErrorKind::kStaleScores, "refine needs an evaluated pool");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, ga_.sigma);
  const std::size_t n = plans_.size();
  for (std::size_t it = 0; it < iterations; ++it) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores_[a] > scores_[b]; });
    const std::size_t keep = std::min(ga_.elites, n);
    std::vector<Plan> next;
    std::vector<double> next_scores;
    next.reserve(n);
    for (std::size_t e = 0; e < keep; ++e) {
      next.push_back(plans_[order[e]]);
      next_scores.push_back(scores_[order[e]]);
    }
    while (next.size() < n) {
      Plan child = plans_[tournament_pick()];
      if (horizon_ > 1 && unit(rng_) < ga_.crossover) {
        const Plan& other = plans_[tournament_pick()];
        std::uniform_int_distribution<std::size_t> cut(1, horizon_ - 1);
        for (std::size_t k = cut(rng_); k < horizon_; ++k) child.actions[k] = other.actions[k];
      }
      for (auto& u : child.actions) {
        if (unit(rng_) >= ga_.mutation) continue;
        if (space_.discrete) {
          u = space_.sample(rng_);
        } else {
          for (Eigen::Index j = 0; j < u.size(); ++j) u[j] = std::clamp(u[j] + gauss(rng_), space_.low, space_.high);
        }
      }
      next_scores.push_back(score_plan(ls, cm, v0, child));
      next.push_back(std::move(child));
    }
    plans_ = std::move(next);
    scores_ = std::move(next_scores);
    update_elite();
  }
}

Action PlanPool::choose_action() const { return elite().actions.front(); }

void PlanPool::advance() {
  for (auto& p : plans_) {
    p.actions.erase(p.actions.begin());
    p.actions.push_back(space_.sample(rng_));
  }
  evaluated_ = false;
}

void PlanPool::set_plan(std::size_t i, Plan p) {
  require(i < plans_.size(), ErrorKind::kPrecondition, "plan index out of range");
  require(p.horizon() == horizon_, ErrorKind::kShape, "plan horizon mismatch");
  for (const auto& u : p.actions) require(space_.valid(u), ErrorKind::kShape, "action outside the action space");
  plans_[i] = std::move(p);
  evaluated_ = false;
}

std::uint64_t PlanPool::hash() const {
  io::Fnv1a h;
  for (const auto& p : plans_)
    for (const auto& u : p.actions)
      for (Eigen::Index j = 0; j < u.size(); ++j) h.update_value(u[j]);
  for (double s : scores_) h.update_value(s);
  h.update_value(static_cast<std::uint64_t>(elite_));
  h.update_value(static_cast<std::uint8_t>(evaluated_));
  return h.digest();
}

std::vector<Plan> enumerate_plans(const ActionSpace& space, std::size_t horizon) {
  require(space.discrete, ErrorKind::kPrecondition, "enumeration needs a discrete action space");
  std::vector<Plan> out;
  std::vector<std::size_t> idx(horizon, 0);
  while (true) {
    Plan p;
    for (std::size_t k = 0; k < horizon; ++k) p.actions.push_back(space.one_hot(idx[k]));
    out.push_back(std::move(p));
    std::size_t k = horizon;
    while (k > 0) {
      --k;
      if (++idx[k] < space.dims) break;
      idx[k] = 0;
      if (k == 0) return out;
    }
    if (horizon == 0) return out;
  }
}

}  // namespace manic
