#include <doctest.h>

#include <fstream>
#include <random>

#include "manic/bootstrap.hpp"
#include "manic/error.hpp"
#include "manic/metrics.hpp"
#include "support.hpp"

using namespace manic;

namespace {

std::vector<double> column(const std::vector<Vec>& rows, Eigen::Index j) {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r[j]);
  return out;
}

TrainConfig tiny_training() {
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.pixels_per_frame = 16;
  cfg.topology.transition_hidden = {8};
  cfg.topology.decoder_hidden = {8};
  cfg.topology.encoder_hidden = {4};
  cfg.topology.encoder_downsample = 2;
  return cfg;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("spearman of monotone sequences") {
    CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
    CHECK(spearman({1, 2, 3, 4}, {4, 1, 0, -3}) == doctest::Approx(-1.0));
    CHECK(spearman({1, 2, 3, 4}, {1, 8, 27, 64}) == doctest::Approx(1.0));
  }

  TEST_CASE("spearman uses average ranks for ties") {
    // Ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4): 4.5 / sqrt(4.5 * 5).
    CHECK(spearman({1, 2, 2, 3}, {1, 2, 3, 4}) == doctest::Approx(4.5 / std::sqrt(22.5)));
  }

  TEST_CASE("affine r2 is one for an exact affine relation") {
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n;
    std::vector<Vec> est, truth;
    for (int i = 0; i < 50; ++i) {
      Vec e(2);
      e << n(rng), n(rng);
      est.push_back(e);
      truth.push_back((Vec(2) << 3.0 * e[0] - e[1] + 1.0, 0.5 * e[1]).finished());
    }
    auto r2 = affine_r2(est, truth);
    REQUIRE(r2.size() == 2);
    CHECK(r2[0] == doctest::Approx(1.0));
    CHECK(r2[1] == doctest::Approx(1.0));
  }

  TEST_CASE("affine r2 is near zero for independent data") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n;
    std::vector<Vec> est, truth;
    for (int i = 0; i < 2000; ++i) {
      est.push_back(Vec::Constant(1, n(rng)));
      truth.push_back(Vec::Constant(1, n(rng)));
    }
    CHECK(affine_r2(est, truth)[0] < 0.01);
  }
}

TEST_SUITE("bootstrap") {
  TEST_CASE("random walk has T frames and T-1 actions") {
    RampEnv env;
    auto ds = collect_random_walk(env, 50, 3);
    CHECK(ds.size() == 50);
    CHECK(ds.actions.size() == 49);
    CHECK(ds.true_states.size() == 50);
    CHECK(ds.action_dims == 2);
    ds.validate();
    auto again = collect_random_walk(env, 50, 3);
    CHECK(again.observations.back().pixels == ds.observations.back().pixels);
  }

  TEST_CASE("dataset and belief files round trip") {
    testing::TempDir dir("walk_io");
    CraneEnv env;
    auto ds = collect_random_walk(env, 12, 1);
    ds.save(dir / "walk.bin");
    auto back = WalkDataset::load(dir / "walk.bin");
    REQUIRE(back.size() == ds.size());
    CHECK(back.frame == ds.frame);
    for (std::size_t t = 0; t < ds.size(); ++t)
      CHECK((back.observations[t].pixels - ds.observations[t].pixels).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(back.actions == ds.actions);

    BeliefEstimates b;
    for (int i = 0; i < 5; ++i) b.beliefs.push_back(Vec::Constant(2, 0.1 * i));
    b.save(dir / "beliefs.bin");
    auto bb = BeliefEstimates::load(dir / "beliefs.bin");
    CHECK(bb.dims() == 2);
    CHECK(bb.beliefs == b.beliefs);
  }

  TEST_CASE("corrupt files are rejected") {
    testing::TempDir dir("walk_bad");
    {
      std::ofstream out(dir / "junk.bin", std::ios::binary);
      out << "MNCB garbage";
    }
    CHECK_THROWS_AS(WalkDataset::load(dir / "junk.bin"), Error);
    CHECK_THROWS_AS(BeliefEstimates::load(dir / "missing.bin"), Error);
  }

  TEST_CASE("ramp beliefs are monotone in the true state") {
    RampEnv env;
    auto ds = collect_random_walk(env, 400, 1);
    NldrOptions opts;
    opts.dims = 1;
    auto est = estimate_beliefs(ds, opts);
    REQUIRE(est.beliefs.size() == 400);
    CHECK(std::abs(spearman(column(est.beliefs, 0), column(ds.true_states, 0))) > 0.99);
    double lo = 1.0, hi = -1.0;
    for (const auto& b : est.beliefs) lo = std::min(lo, b[0]), hi = std::max(hi, b[0]);
    CHECK(lo == doctest::Approx(-1.0));
    CHECK(hi == doctest::Approx(1.0));
  }

  TEST_CASE("landmark path agrees with the exact path on the ramp") {
    RampEnv env;
    auto ds = collect_random_walk(env, 300, 2);
    NldrOptions exact;
    exact.dims = 1;
    NldrOptions landmark = exact;
    landmark.exact_limit = 100;
    landmark.landmarks = 60;
    auto a = estimate_beliefs(ds, exact);
    auto b = estimate_beliefs(ds, landmark);
    CHECK(std::abs(spearman(column(a.beliefs, 0), column(b.beliefs, 0))) > 0.98);
  }

  TEST_CASE("temporal edges keep far-apart neighbourhoods connected") {
    // Two clusters that kNN alone would never join.
    std::vector<Observation> frames;
    for (int t = 0; t < 40; ++t) {
      Observation x(FrameShape{2, 1, 1});
      x.pixels << (t < 20 ? 0.0 : 1.0) + 0.001 * t, 0.0;
      frames.push_back(x);
    }
    NldrOptions opts;
    opts.dims = 1;
    opts.neighbors = 2;
    auto est = estimate_beliefs(frames, opts);
    REQUIRE(est.beliefs.size() == 40);
    for (const auto& b : est.beliefs) CHECK(std::isfinite(b[0]));
  }

  TEST_CASE("crane walk recovers both coordinates") {
    CraneEnv env;
    auto ds = collect_random_walk(env, 600, 1);
    auto est = estimate_beliefs(ds, NldrOptions{});
    auto r2 = affine_r2(est.beliefs, ds.true_states);
    CHECK(r2[0] > 0.8);
    CHECK(r2[1] > 0.8);
  }

  TEST_CASE("pretrain ignores ground truth and lowers loss") {
    RampEnv env;
    auto ds = collect_random_walk(env, 120, 1);
    NldrOptions nl;
    nl.dims = 1;
    auto beliefs = estimate_beliefs(ds, nl);
    auto cfg = tiny_training();
    auto with_truth = pretrain(ds, beliefs, cfg);
    auto blind = ds;
    blind.true_states.clear();
    auto without = pretrain(blind, beliefs, cfg);
    CHECK(with_truth.system.transition() == without.system.transition());
    CHECK(with_truth.system.decoder() == without.system.decoder());
    const auto& loss = with_truth.log.decoder.epoch_loss;
    REQUIRE(loss.size() == cfg.epochs);
    CHECK(loss.back() < loss.front());
    CHECK(with_truth.log.train_frames == 108);
    CHECK(with_truth.system.has_encoder());
  }

  TEST_CASE("refine_models leaves the encoder alone") {
    RampEnv env;
    auto ds = collect_random_walk(env, 80, 4);
    NldrOptions nl;
    nl.dims = 1;
    auto beliefs = estimate_beliefs(ds, nl);
    auto cfg = tiny_training();
    auto result = pretrain(ds, beliefs, cfg);
    const auto encoder_before = result.system.encoder().hash();
    const auto decoder_before = result.system.decoder().hash();
    cfg.epochs = 2;
    refine_models(result.system, ds, beliefs, cfg);
    CHECK(result.system.encoder().hash() == encoder_before);
    CHECK(result.system.decoder().hash() != decoder_before);
  }

  TEST_CASE("pretrain rejects mismatched beliefs") {
    RampEnv env;
    auto ds = collect_random_walk(env, 30, 1);
    BeliefEstimates wrong;
    wrong.beliefs.assign(10, Vec::Zero(1));
    CHECK_THROWS_AS(pretrain(ds, wrong, tiny_training()), Error);
  }
}
