#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <map>
#include <random>

#include "manic/contentment.hpp"
#include "manic/error.hpp"
#include "support.hpp"

using namespace manic;
using testing::numeric_gradient;
using testing::relative_error;

namespace {

// Utility that reads v[0] directly.
ContentmentModel first_coordinate(std::size_t dims) {
  auto h = Approximator::zeros({dims, 1});
  h.weights(0)(0, 0) = 1.0;
  return ContentmentModel(std::move(h));
}

std::vector<Belief> random_trace(std::mt19937_64& rng, std::size_t length, std::size_t dims) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Belief> out;
  for (std::size_t k = 0; k < length; ++k) {
    Belief v(static_cast<Eigen::Index>(dims));
    for (auto& e : v) e = u(rng);
    out.push_back(v);
  }
  return out;
}

}  // namespace

TEST_SUITE("contentment") {
  TEST_CASE("discounted mean of a constant is the constant") {
    std::vector<double> v(7, 0.3);
    CHECK(discounted_mean(v) == doctest::Approx(0.3));
  }

  TEST_CASE("discounted mean weights early values more") {
    std::vector<double> v{1.0, 0.0};
    CHECK(discounted_mean(v) == doctest::Approx(1.0 / 1.97));
    std::vector<double> w{0.0, 1.0};
    CHECK(discounted_mean(w) == doctest::Approx(0.97 / 1.97));
    CHECK_THROWS_AS(discounted_mean(std::vector<double>{}), Error);
  }

  TEST_CASE("plan utility applies h before aggregating") {
    auto cm = first_coordinate(2);
    std::vector<Belief> trace{(Vec(2) << 0.5, 9.0).finished(), (Vec(2) << -0.5, 9.0).finished(),
                              (Vec(2) << 1.0, 9.0).finished()};
    const double expected = (0.5 - 0.97 * 0.5 + 0.97 * 0.97) / (1 + 0.97 + 0.97 * 0.97);
    CHECK(plan_utility(cm, trace) == doctest::Approx(expected));
  }

  TEST_CASE("orderings expand into all ordered pairs") {
    auto pairs = expand_pairs({"a", "b", "c"});
    REQUIRE(pairs.size() == 3);
    CHECK(pairs[0] == PreferencePair{"a", "b"});
    CHECK(pairs[1] == PreferencePair{"a", "c"});
    CHECK(pairs[2] == PreferencePair{"b", "c"});
    CHECK(expand_pairs({"a", "b", "c", "d", "e"}).size() == 10);
  }

  TEST_CASE("malformed orderings are rejected") {
    CHECK_THROWS_AS(PreferenceRecord::from_ordering("s", 0, {"a"}), Error);
    CHECK_THROWS_AS(PreferenceRecord::from_ordering("s", 0, {"a", "b", "a"}), Error);
  }

  TEST_CASE("preference records round trip through json") {
    auto r = PreferenceRecord::from_ordering("s1", 1234, {"x", "y", "z"});
    auto back = PreferenceRecord::from_json(r.to_json());
    CHECK(back.session_id == "s1");
    CHECK(back.timestamp_ms == 1234);
    CHECK(back.ordering == r.ordering);
    CHECK(back.pairs == r.pairs);
  }

  TEST_CASE("ranking loss is the logistic loss on the utility gap") {
    auto cm = first_coordinate(1);
    std::vector<Belief> hi{Vec::Constant(1, 0.8)}, lo{Vec::Constant(1, -0.2)};
    CHECK(ranking_loss(cm, hi, lo) == doctest::Approx(std::log1p(std::exp(-1.0))));
    CHECK(ranking_loss(cm, lo, hi) == doctest::Approx(std::log1p(std::exp(1.0))));
    CHECK(ranking_loss(cm, hi, hi) == doctest::Approx(std::log(2.0)));
  }

  TEST_CASE("ranking loss gradient matches central differences on 20 random nets") {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<std::size_t> dims(1, 4), width(2, 8), len(1, 12);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t d = dims(rng);
      auto cm = ContentmentModel::create(d, {width(rng)}, rng());
      auto winner = random_trace(rng, len(rng), d);
      auto loser = random_trace(rng, len(rng), d);
      Gradient g = cm.model().zero_gradient();
      const double loss = ranking_loss_gradient(cm, winner, loser, &g);
      CHECK(loss == doctest::Approx(ranking_loss(cm, winner, loser)));
      auto f = [&](const Vec& p) {
        ContentmentModel copy = cm;
        copy.model().set_parameters(p);
        return ranking_loss(copy, winner, loser);
      };
      worst = std::max(worst, relative_error(g.flatten(), numeric_gradient(f, cm.model().parameters(), 1e-5)));
    }
    CHECK(worst <= 1e-4);
  }

  TEST_CASE("preference training learns a first-coordinate teacher") {
    std::mt19937_64 rng(5);
    std::map<std::string, std::vector<Belief>> traces;
    for (int i = 0; i < 40; ++i) traces["c" + std::to_string(i)] = random_trace(rng, 5, 2);
    auto truth = first_coordinate(2);
    std::vector<PreferenceRecord> prefs;
    for (int r = 0; r < 30; ++r) {
      std::vector<std::string> ids;
      for (int k = 0; k < 4; ++k) ids.push_back("c" + std::to_string((r * 7 + k * 3) % 40));
      std::sort(ids.begin(), ids.end(), [&](const auto& a, const auto& b) {
        return plan_utility(truth, traces[a]) > plan_utility(truth, traces[b]);
      });
      ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
      if (ids.size() >= 2) prefs.push_back(PreferenceRecord::from_ordering("s", r, ids));
    }
    TraceResolver resolve = [&](const std::string& id) -> const std::vector<Belief>* {
      auto it = traces.find(id);
      return it == traces.end() ? nullptr : &it->second;
    };
    auto cm = ContentmentModel::create(2, {8}, 3);
    auto report = train_preferences(cm, prefs, resolve, PreferenceTraining{});
    CHECK(report.pairs_used == report.train_pairs + report.heldout_pairs);
    CHECK(report.heldout_pairs > 0);
    CHECK(report.train_accuracy >= 0.9);
    CHECK(report.heldout_accuracy >= 0.8);
  }

  TEST_CASE("rollout resolver answers known ids only") {
    auto ls = LearningSystem::create(FrameShape{4, 4, 1}, 1, 2, ModelTopology{}, 1);
    ActionSpace space{2};
    Plan plan{{space.one_hot(0), space.one_hot(1)}};
    std::map<std::string, std::pair<Belief, Plan>> cands{{"p", {Vec::Zero(1), plan}}};
    RolloutTraceResolver resolver(ls, cands);
    const auto* trace = resolver("p");
    REQUIRE(trace != nullptr);
    CHECK(*trace == ls.rollout(Vec::Zero(1), plan));
    CHECK(resolver("q") == nullptr);
  }

  TEST_CASE("evolution keeps its best and is reproducible") {
    ContentmentFitness fitness = [](const ContentmentModel& cm) { return -std::abs(cm(Vec::Zero(2)) - 0.5); };
    EvolutionOptions opts;
    opts.generations = 15;
    opts.sigma = 0.1;
    opts.hidden = {4};
    auto a = evolve_contentment(2, fitness, opts);
    auto b = evolve_contentment(2, fitness, opts);
    REQUIRE(a.best_per_generation.size() == 15);
    for (std::size_t g = 1; g < a.best_per_generation.size(); ++g)
      CHECK(a.best_per_generation[g] >= a.best_per_generation[g - 1]);
    CHECK(a.best_fitness == a.best_per_generation.back());
    CHECK(a.best_fitness == doctest::Approx(fitness(a.best)));
    CHECK(a.best.model() == b.best.model());
    opts.population = 1;
    CHECK_THROWS_AS(evolve_contentment(2, fitness, opts), Error);
  }
}
