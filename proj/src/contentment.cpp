#include "manic/contentment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "manic/error.hpp"

namespace manic {

namespace {

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

std::vector<double> discount_weights(std::size_t n, double gamma) {
  std::vector<double> w(n);
  double g = 1.0;
  double total = 0.0;
  for (auto& x : w) {
    x = g;
    total += g;
    g *= gamma;
  }
  for (auto& x : w) x /= total;
  return w;
}

}  // namespace

ContentmentModel::ContentmentModel(Approximator h) : h_(std::move(h)) {
  require(h_.output_size() == 1, ErrorKind::kShape, "contentment model must have a scalar output");
}

ContentmentModel ContentmentModel::create(std::size_t belief_dims, const std::vector<std::size_t>& hidden,
                                          std::uint64_t seed) {
  std::vector<std::size_t> sizes{belief_dims};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return ContentmentModel(Approximator::create(sizes, seed));
}

double ContentmentModel::operator()(const Belief& v) const { return h_.forward(v)[0]; }

double discounted_mean(std::span<const double> values, double gamma) {
  require(!values.empty(), ErrorKind::kPrecondition, "utility of an empty trace");
  double num = 0.0;
  double den = 0.0;
  double g = 1.0;
  for (double h : values) {
    num += g * h;
    den += g;
    g *= gamma;
  }
  return num / den;
}

double plan_utility(const ContentmentModel& cm, std::span<const Belief> beliefs, double gamma) {
  require(!beliefs.empty(), ErrorKind::kPrecondition, "utility of an empty trace");
  std::vector<double> values;
  values.reserve(beliefs.size());
  for (const auto& v : beliefs) values.push_back(cm(v));
  return discounted_mean(values, gamma);
}

std::vector<PreferencePair> expand_pairs(const std::vector<std::string>& ordering) {
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < ordering.size(); ++i)
    for (std::size_t j = i + 1; j < ordering.size(); ++j) pairs.push_back({ordering[i], ordering[j]});
  return pairs;
}

PreferenceRecord PreferenceRecord::from_ordering(std::string session_id, std::int64_t timestamp_ms,
                                                 std::vector<std::string> ordering) {
  require(ordering.size() >= 2, ErrorKind::kPrecondition, "a ranking needs at least two candidates");
  std::vector<std::string> sorted = ordering;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), ErrorKind::kPrecondition,
          "ranking contains duplicate ids");
  PreferenceRecord r;
  r.session_id = std::move(session_id);
  r.timestamp_ms = timestamp_ms;
  r.pairs = expand_pairs(ordering);
  r.ordering = std::move(ordering);
  return r;
}

nlohmann::json PreferenceRecord::to_json() const {
  auto pj = nlohmann::json::array();
  for (const auto& p : pairs) pj.push_back({{"winner", p.winner}, {"loser", p.loser}});
  return {{"session_id", session_id}, {"timestamp", timestamp_ms}, {"ordering", ordering}, {"pairs", pj}};
}

PreferenceRecord PreferenceRecord::from_json(const nlohmann::json& j) {
  PreferenceRecord r;
  r.session_id = j.at("session_id").get<std::string>();
  r.timestamp_ms = j.at("timestamp").get<std::int64_t>();
  r.ordering = j.at("ordering").get<std::vector<std::string>>();
  for (const auto& p : j.at("pairs")) r.pairs.push_back({p.at("winner").get<std::string>(), p.at("loser").get<std::string>()});
  return r;
}

nlohmann::json PreferenceReport::to_json() const {
  return {{"pairs_used", pairs_used},           {"train_pairs", train_pairs},
          {"heldout_pairs", heldout_pairs},     {"heldout_accuracy", heldout_accuracy},
          {"train_accuracy", train_accuracy},   {"overall_accuracy", overall_accuracy},
          {"final_loss", final_loss}};
}

double ranking_loss(const ContentmentModel& cm, std::span<const Belief> winner, std::span<const Belief> loser) {
  return softplus(-(plan_utility(cm, winner) - plan_utility(cm, loser)));
}

double ranking_loss_gradient(const ContentmentModel& cm, std::span<const Belief> winner,
                             std::span<const Belief> loser, Gradient* grad) {
  const double delta = plan_utility(cm, winner) - plan_utility(cm, loser);
  const double dl_ddelta = -sigmoid(-delta);
  const auto accumulate = [&](std::span<const Belief> trace, double sign) {
    const auto w = discount_weights(trace.size(), kUtilityDiscount);
    for (std::size_t k = 0; k < trace.size(); ++k) {
      cm.model().backward(trace[k], Vec::Constant(1, sign * dl_ddelta * w[k]), grad);
    }
  };
  accumulate(winner, 1.0);
  accumulate(loser, -1.0);
  return softplus(-delta);
}

PreferenceReport train_preferences(ContentmentModel& cm, const std::vector<PreferenceRecord>& prefs,
                                   const TraceResolver& traces, const PreferenceTraining& options) {
  struct Resolved {
    const std::vector<Belief>* winner;
    const std::vector<Belief>* loser;
  };
  std::vector<Resolved> pairs;
  for (const auto& record : prefs) {
    for (const auto& p : record.pairs) {
      const auto* w = traces(p.winner);
      const auto* l = traces(p.loser);
      require(w != nullptr, ErrorKind::kNotFound, "unresolvable belief trace for candidate " + p.winner);
      require(l != nullptr, ErrorKind::kNotFound, "unresolvable belief trace for candidate " + p.loser);
      pairs.push_back({w, l});
    }
  }
  require(!pairs.empty(), ErrorKind::kPrecondition, "preference training needs at least one pair");

  Rng rng(options.seed);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t heldout = static_cast<std::size_t>(std::floor(options.heldout_fraction * static_cast<double>(pairs.size())));
  if (heldout >= pairs.size()) heldout = 0;
  const std::vector<std::size_t> train(order.begin(), order.end() - static_cast<long>(heldout));
  const std::vector<std::size_t> test(order.end() - static_cast<long>(heldout), order.end());

  std::vector<std::size_t> epoch_order = train;
  double last_loss = 0.0;
  for (std::size_t e = 0; e < options.epochs; ++e) {
    std::shuffle(epoch_order.begin(), epoch_order.end(), rng);
    double total = 0.0;
    for (auto i : epoch_order) {
      Gradient g = cm.model().zero_gradient();
      total += ranking_loss_gradient(cm, *pairs[i].winner, *pairs[i].loser, &g);
      cm.model().apply(g, options.rate);
    }
    last_loss = total / static_cast<double>(epoch_order.size());
    if (!std::isfinite(last_loss)) throw Error(ErrorKind::kDiverged, "preference training diverged");
  }

  auto accuracy = [&](const std::vector<std::size_t>& idx) {
    if (idx.empty()) return 0.0;
    double correct = 0.0;
    for (auto i : idx) {
      const double uw = plan_utility(cm, *pairs[i].winner);
      const double ul = plan_utility(cm, *pairs[i].loser);
      correct += uw > ul ? 1.0 : (uw == ul ? 0.5 : 0.0);
    }
    return correct / static_cast<double>(idx.size());
  };
  PreferenceReport report;
  report.pairs_used = pairs.size();
  report.train_pairs = train.size();
  report.heldout_pairs = test.size();
  report.train_accuracy = accuracy(train);
  report.heldout_accuracy = test.empty() ? report.train_accuracy : accuracy(test);
  report.overall_accuracy = accuracy(order);
  report.final_loss = last_loss;
  return report;
}

RolloutTraceResolver::RolloutTraceResolver(const LearningSystem& ls,
                                           const std::map<std::string, std::pair<Belief, Plan>>& candidates) {
  for (const auto& [id, c] : candidates) traces_[id] = ls.rollout(c.first, c.second);
}

const std::vector<Belief>* RolloutTraceResolver::operator()(const std::string& id) const {
  auto it = traces_.find(id);
  return it == traces_.end() ? nullptr : &it->second;
}

EvolutionResult evolve_contentment(std::size_t belief_dims, const ContentmentFitness& fitness,
                                   const EvolutionOptions& options) {
  require(options.population >= 2, ErrorKind::kPrecondition, "evolution needs population >= 2");
  require(options.generations >= 1, ErrorKind::kPrecondition, "evolution needs generations >= 1");
  Rng rng(options.seed);
  std::normal_distribution<double> noise(0.0, options.sigma);

  std::vector<ContentmentModel> population;
  for (std::size_t i = 0; i < options.population; ++i) {
    population.push_back(ContentmentModel::create(belief_dims, options.hidden, options.seed * 1000 + i));
  }
  std::vector<double> scores(population.size());
  for (std::size_t i = 0; i < population.size(); ++i) scores[i] = fitness(population[i]);

  EvolutionResult result;
  const std::size_t survivors = (options.population + 1) / 2;
  for (std::size_t gen = 0; gen < options.generations; ++gen) {
    std::vector<std::size_t> rank(population.size());
    std::iota(rank.begin(), rank.end(), 0);
    std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    result.best_per_generation.push_back(scores[rank.front()]);
    if (gen + 1 == options.generations) {
      result.best = population[rank.front()];
      result.best_fitness = scores[rank.front()];
      break;
    }
    std::vector<ContentmentModel> next;
    std::vector<double> next_scores;
    for (std::size_t i = 0; i < survivors; ++i) {
      next.push_back(population[rank[i]]);
      next_scores.push_back(scores[rank[i]]);
    }
    for (std::size_t i = 0; next.size() < options.population; ++i) {
      ContentmentModel child = next[i % survivors];
      Vec params = child.model().parameters();
      for (Eigen::Index k = 0; k < params.size(); ++k) params[k] += noise(rng);
      child.model().set_parameters(params);
      next_scores.push_back(fitness(child));
      next.push_back(std::move(child));
    }
    population = std::move(next);
    scores = std::move(next_scores);
  }
  return result;
}

}  // namespace manic
