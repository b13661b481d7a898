#include <doctest.h>

#include <cmath>

#include "manic/error.hpp"
#include "manic/learning_system.hpp"
#include "support.hpp"

using namespace manic;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::kFormat;
}

// Decoder whose only path is pixel = 0.5 + 0.4 * v[0], no hidden layer.
LearningSystem linear_system(FrameShape frame) {
  auto f = Approximator::create({1 + 2, 8, 1}, 3);
  auto g = Approximator::zeros({1 + 2, frame.channels});
  for (std::size_t c = 0; c < frame.channels; ++c) {
    g.weights(0)(static_cast<Eigen::Index>(c), 0) = 0.4;
    g.biases(0)[static_cast<Eigen::Index>(c)] = 0.5;
  }
  return LearningSystem(frame, 1, 2, std::move(f), std::move(g), std::nullopt);
}

}  // namespace

TEST_SUITE("types") {
  TEST_CASE("downsample averages blocks") {
    Observation x(FrameShape{4, 2, 1});
    for (std::size_t i = 0; i < 8; ++i) x.pixels[static_cast<Eigen::Index>(i)] = static_cast<double>(i);
    auto y = downsample(x, 2);
    CHECK(y.shape == FrameShape{2, 1, 1});
    CHECK(y.at(0, 0, 0) == doctest::Approx((0 + 1 + 4 + 5) / 4.0));
    CHECK(y.at(1, 0, 0) == doctest::Approx((2 + 3 + 6 + 7) / 4.0));
  }

  TEST_CASE("downsample never goes below one pixel") {
    Observation x(FrameShape{3, 3, 3});
    x.pixels.setConstant(0.25);
    auto y = downsample(x, 8);
    CHECK(y.shape == FrameShape{1, 1, 3});
    CHECK(y.pixels.isApproxToConstant(0.25));
  }

  TEST_CASE("mean absolute difference") {
    Observation a(FrameShape{2, 1, 1}), b(FrameShape{2, 1, 1});
    a.pixels << 0.0, 1.0;
    b.pixels << 0.5, 0.5;
    CHECK(mean_abs_difference(a, b) == doctest::Approx(0.5));
  }

  TEST_CASE("discrete action space helpers") {
    ActionSpace space{3, true};
    Action u = space.one_hot(1);
    CHECK(u == (Vec(3) << 0, 1, 0).finished());
    CHECK(space.valid(u));
    CHECK_FALSE(space.valid(Vec::Zero(3)));
    CHECK(ActionSpace::argmax((Vec(3) << 0.2, 0.7, 0.7).finished()) == 1);
    Rng rng(4);
    for (int i = 0; i < 20; ++i) CHECK(space.valid(space.sample(rng)));
  }

  TEST_CASE("continuous samples stay in range") {
    ActionSpace space{2, false, -0.5, 0.25};
    Rng rng(9);
    for (int i = 0; i < 50; ++i) {
      Action u = space.sample(rng);
      CHECK(u.minCoeff() >= -0.5);
      CHECK(u.maxCoeff() <= 0.25);
    }
  }
}

TEST_SUITE("learning_system") {
  TEST_CASE("create wires the three topologies") {
    ModelTopology topo;
    topo.transition_hidden = {5};
    topo.decoder_hidden = {6, 7};
    topo.encoder_hidden = {4};
    auto ls = LearningSystem::create(FrameShape{8, 4, 3}, 2, 3, topo, 1);
    CHECK(ls.transition().layer_sizes() == std::vector<std::size_t>{5, 5, 2});
    CHECK(ls.decoder().layer_sizes() == std::vector<std::size_t>{4, 6, 7, 3});
    CHECK(ls.encoder().layer_sizes() == std::vector<std::size_t>{2 * 1 * 3, 4, 2});
    CHECK(ls.encoder_input_shape() == FrameShape{2, 1, 3});
  }

  TEST_CASE("pixel centres are half-pixel normalized") {
    auto ls = linear_system(FrameShape{4, 2, 1});
    CHECK(ls.pixel_x(0) == 0.125);
    CHECK(ls.pixel_x(3) == 0.875);
    CHECK(ls.pixel_y(1) == 0.75);
  }

  TEST_CASE("transition output is clamped to the belief cube") {
    auto ls = linear_system(FrameShape{2, 2, 1});
    ls.transition().weights(1).setConstant(100.0);
    ls.transition().weights(0).setConstant(1.0);
    Belief v = Vec::Constant(1, 0.5);
    Action u = ActionSpace{2}.one_hot(0);
    CHECK(ls.predict_transition(v, u)[0] == 1.0);
  }

  TEST_CASE("decoded pixels are clamped to [0, 1]") {
    ModelTopology topo;
    topo.with_encoder = false;
    auto ls = LearningSystem::create(FrameShape{6, 5, 3}, 2, 2, topo, 7);
    ls.decoder().biases(ls.decoder().weight_layers() - 1).setConstant(3.0);
    auto frame = ls.decode_frame(Vec::Zero(2));
    CHECK(frame.pixels.minCoeff() >= 0.0);
    CHECK(frame.pixels.maxCoeff() <= 1.0);
  }

  TEST_CASE("decode_frame agrees bit for bit with a per-pixel loop") {
    ModelTopology topo;
    topo.with_encoder = false;
    auto ls = LearningSystem::create(FrameShape{7, 5, 3}, 3, 2, topo, 5);
    Rng rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 5; ++t) {
      Belief v(3);
      for (auto& e : v) e = u(rng);
      auto frame = ls.decode_frame(v);
      for (std::size_t y = 0; y < 5; ++y)
        for (std::size_t x = 0; x < 7; ++x) {
          Vec in(5);
          in << v, (x + 0.5) / 7.0, (y + 0.5) / 5.0;
          Vec px = ls.decoder().forward(in).cwiseMax(0.0).cwiseMin(1.0);
          for (std::size_t c = 0; c < 3; ++c) CHECK(frame.at(x, y, c) == px[static_cast<Eigen::Index>(c)]);
        }
    }
  }

  TEST_CASE("encoding without an encoder fails") {
    auto ls = linear_system(FrameShape{4, 4, 1});
    CHECK(kind_of([&] { ls.encode(Observation(FrameShape{4, 4, 1})); }) == ErrorKind::kEncoderAbsent);
  }

  TEST_CASE("encode clamps and reads the downsampled frame") {
    ModelTopology topo;
    topo.encoder_hidden = {};
    auto ls = LearningSystem::create(FrameShape{8, 8, 1}, 1, 1, topo, 2);
    ls.encoder().weights(0).setConstant(10.0);
    Observation x(FrameShape{8, 8, 1});
    x.pixels.setConstant(1.0);
    CHECK(ls.encode(x)[0] == 1.0);
    CHECK(ls.encoder_input(x).size() == 4);
  }

  TEST_CASE("shape and range errors") {
    auto ls = linear_system(FrameShape{4, 4, 1});
    CHECK(kind_of([&] { ls.decode_frame(Vec::Zero(2)); }) == ErrorKind::kShape);
    CHECK(kind_of([&] { ls.decode_pixel(Vec::Zero(1), 1.5, 0.0); }) == ErrorKind::kPrecondition);
    CHECK(kind_of([&] { ls.predict_transition(Vec::Zero(1), Vec::Zero(3)); }) == ErrorKind::kShape);
    CHECK(kind_of([&] { ls.reconstruction_error(Vec::Zero(1), Observation(FrameShape{2, 2, 1})); }) ==
          ErrorKind::kShape);
  }

  TEST_CASE("rollout chains the transition model") {
    auto ls = linear_system(FrameShape{2, 2, 1});
    ActionSpace space{2};
    Plan plan{{space.one_hot(0), space.one_hot(1), space.one_hot(1)}};
    Belief v0 = Vec::Constant(1, 0.2);
    auto beliefs = ls.rollout(v0, plan);
    REQUIRE(beliefs.size() == 3);
    Belief v = v0;
    for (std::size_t k = 0; k < 3; ++k) {
      v = ls.predict_transition(v, plan.actions[k]);
      CHECK(beliefs[k] == v);
    }
    auto video = ls.imagine_video(v0, plan);
    REQUIRE(video.size() == 3);
    CHECK(video[2].pixels == ls.decode_frame(beliefs[2]).pixels);
    CHECK_THROWS_AS(ls.rollout(v0, Plan{}), Error);
  }

  TEST_CASE("reconstruction error of the generating belief is zero") {
    auto ls = linear_system(FrameShape{3, 3, 2});
    Belief v = Vec::Constant(1, -0.3);
    CHECK(ls.reconstruction_error(v, ls.decode_frame(v)) == 0.0);
  }

  TEST_CASE("refine_beliefs recovers the belief of a linear decoder") {
    auto ls = linear_system(FrameShape{6, 6, 1});
    Belief truth = Vec::Constant(1, 0.6);
    auto x = ls.decode_frame(truth);
    RefineOptions opts;
    opts.steps = 200;
    opts.rate = 0.05;
    auto v = ls.refine_beliefs(Vec::Zero(1), x, opts);
    CHECK(v[0] == doctest::Approx(0.6).epsilon(1e-3));
    CHECK(ls.reconstruction_error(v, x) < ls.reconstruction_error(Vec::Zero(1), x));
  }

  TEST_CASE("refine_beliefs is deterministic per seed and stays in the cube") {
    ModelTopology topo;
    topo.with_encoder = false;
    auto ls = LearningSystem::create(FrameShape{8, 8, 3}, 2, 1, topo, 11);
    Observation x(FrameShape{8, 8, 3});
    x.pixels.setConstant(0.9);
    RefineOptions opts;
    opts.steps = 40;
    opts.rate = 5.0;
    opts.seed = 3;
    auto a = ls.refine_beliefs(Vec::Zero(2), x, opts);
    auto b = ls.refine_beliefs(Vec::Zero(2), x, opts);
    CHECK(a == b);
    CHECK(a.cwiseAbs().maxCoeff() <= 1.0);
  }

  TEST_CASE("refine_beliefs option checks") {
    auto ls = linear_system(FrameShape{2, 2, 1});
    Observation x(FrameShape{2, 2, 1});
    RefineOptions opts;
    opts.steps = 0;
    CHECK(kind_of([&] { ls.refine_beliefs(Vec::Zero(1), x, opts); }) == ErrorKind::kPrecondition);
    opts.steps = 1;
    opts.rate = 0.0;
    CHECK(kind_of([&] { ls.refine_beliefs(Vec::Zero(1), x, opts); }) == ErrorKind::kPrecondition);
  }

  TEST_CASE("error signal is observation minus prediction") {
    Observation a(FrameShape{2, 1, 1}), b(FrameShape{2, 1, 1});
    a.pixels << 0.5, 0.25;
    b.pixels << 0.25, 0.5;
    CHECK(error_signal(a, b) == (Vec(2) << 0.25, -0.25).finished());
    CHECK_THROWS_AS(error_signal(a, Observation(FrameShape{1, 1, 1})), Error);
  }

  TEST_CASE("save and load round trip") {
    testing::TempDir dir("ls_roundtrip");
    auto ls = LearningSystem::create(FrameShape{8, 4, 3}, 2, 3, ModelTopology{}, 4);
    ls.save(dir.path());
    auto back = LearningSystem::load(dir.path());
    CHECK(back.frame() == ls.frame());
    CHECK(back.transition() == ls.transition());
    CHECK(back.decoder() == ls.decoder());
    CHECK(back.encoder() == ls.encoder());
    ls.drop_encoder();
    ls.save(dir / "no_encoder");
    CHECK_FALSE(LearningSystem::load(dir / "no_encoder").has_encoder());
  }
  TEST_CASE("a one-pixel frame decodes at the centre") {
    auto ls = linear_system(FrameShape{1, 1, 1});
    ls.decoder().weights(0)(0, 1) = 0.3;
    Belief v = Vec::Constant(1, 0.2);
    CHECK(ls.decode_frame(v).pixels[0] == ls.decode_pixel(v, 0.5, 0.5)[0]);
  }

  TEST_CASE("refining against the belief's own frame changes nothing") {
    ModelTopology topo;
    topo.with_encoder = false;
    auto ls = LearningSystem::create(FrameShape{5, 4, 3}, 2, 1, topo, 3);
    Belief v = (Vec(2) << 0.3, -0.4).finished();
    CHECK(ls.refine_beliefs(v, ls.decode_frame(v), RefineOptions{}) == v);
  }

  TEST_CASE("rollouts compose") {
    auto ls = LearningSystem::create(FrameShape{4, 4, 1}, 2, 3, ModelTopology{}, 9);
    ActionSpace space{3};
    Rng rng(2);
    Plan a, b, ab;
    for (int k = 0; k < 4; ++k) a.actions.push_back(space.sample(rng));
    for (int k = 0; k < 3; ++k) b.actions.push_back(space.sample(rng));
    ab.actions = a.actions;
    ab.actions.insert(ab.actions.end(), b.actions.begin(), b.actions.end());
    const Belief v0 = (Vec(2) << 0.1, 0.5).finished();
    auto first = ls.rollout(v0, a);
    auto second = ls.rollout(first.back(), b);
    first.insert(first.end(), second.begin(), second.end());
    CHECK(ls.rollout(v0, ab) == first);
  }

  TEST_CASE("fuzzed inputs keep beliefs in the cube") {
    auto ls = LearningSystem::create(FrameShape{8, 8, 3}, 3, 2, ModelTopology{}, 4);
    for (std::size_t l = 0; l < ls.transition().weight_layers(); ++l) ls.transition().weights(l) *= 20.0;
    Rng rng(6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 50; ++t) {
      Belief v(3);
      for (auto& e : v) e = u(rng);
      Observation x(FrameShape{8, 8, 3});
      for (auto& p : x.pixels) p = 0.5 * (u(rng) + 1.0);
      CHECK(ls.predict_transition(v, ActionSpace{2}.sample(rng)).cwiseAbs().maxCoeff() <= 1.0);
      CHECK(ls.encode(x).cwiseAbs().maxCoeff() <= 1.0);
      CHECK(ls.refine_beliefs(v, x, RefineOptions{5, 1.0, 16, 1}).cwiseAbs().maxCoeff() <= 1.0);
    }
  }
}
