#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <functional>

#include <json.hpp>

#include "manic/agent.hpp"
#include "manic/error.hpp"
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

AgentConfig small_config(std::size_t dims = 2) {
  AgentConfig cfg;
  cfg.belief_dims = dims;
  cfg.horizon = 4;
  cfg.pool_size = 6;
  cfg.refine_iterations = 2;
  cfg.inference.steps = 5;
  return cfg;
}

ManicAgent crane_agent(AgentConfig cfg) {
  ModelTopology topo;
  topo.transition_hidden = {8};
  topo.decoder_hidden = {8};
  topo.encoder_hidden = {4};
  auto ls = LearningSystem::create(FrameShape{16, 12, 3}, cfg.belief_dims, 4, topo, 3);
  auto cm = ContentmentModel::create(cfg.belief_dims, {4}, 5);
  return ManicAgent(std::move(ls), std::move(cm), cfg);
}

Observation crane_frame(std::uint64_t seed) {
  CraneEnv env(NoiseLevels{}, FrameShape{16, 12, 3});
  env.reset(seed);
  return env.render();
}

}  // namespace

TEST_SUITE("agent") {
  TEST_CASE("encoder modes round trip through text") {
    for (auto m : {EncoderMode::kEncoder, EncoderMode::kInference, EncoderMode::kHybrid})
      CHECK(parse_encoder_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_encoder_mode("telepathy"), Error);
  }

  TEST_CASE("agent config json round trip and validation") {
    AgentConfig cfg = small_config(3);
    cfg.mode = EncoderMode::kInference;
    cfg.online_learning = true;
    auto back = AgentConfig::from_json(cfg.to_json());
    CHECK(back.to_json() == cfg.to_json());
    cfg.horizon = 0;
    CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::kConfig);
    cfg = small_config();
    cfg.online_learning = true;
    cfg.online_rate = 0.0;
    CHECK(kind_of([&] { cfg.validate(); }) == ErrorKind::kConfig);
  }

  TEST_CASE("phases run in order") {
    auto cfg = small_config();
    cfg.online_learning = true;
    auto agent = crane_agent(cfg);
    std::vector<StepPhase> seen;
    agent.set_phase_hook([&](StepPhase p) { seen.push_back(p); });
    agent.agent_step(crane_frame(1));
    agent.agent_step(crane_frame(2));
    const std::vector<StepPhase> one{StepPhase::kBeliefUpdate, StepPhase::kEvaluate, StepPhase::kRefine,
                                     StepPhase::kChoose, StepPhase::kLearn};
    REQUIRE(seen.size() == 10);
    CHECK(std::vector<StepPhase>(seen.begin(), seen.begin() + 5) == one);
    CHECK(std::vector<StepPhase>(seen.begin() + 5, seen.end()) == one);
  }

  TEST_CASE("learning phase only runs when enabled") {
    auto agent = crane_agent(small_config());
    std::vector<StepPhase> seen;
    agent.set_phase_hook([&](StepPhase p) { seen.push_back(p); });
    agent.agent_step(crane_frame(1));
    CHECK(std::find(seen.begin(), seen.end(), StepPhase::kLearn) == seen.end());
  }

  TEST_CASE("a step yields a valid action, a belief and a prediction") {
    auto agent = crane_agent(small_config());
    Action u = agent.act(crane_frame(1));
    CHECK(ActionSpace{4}.valid(u));
    const auto& info = agent.last_step();
    CHECK(info.belief.size() == 2);
    CHECK(info.belief.cwiseAbs().maxCoeff() <= 1.0);
    REQUIRE(info.predicted_next.has_value());
    CHECK(info.predicted_next->shape == FrameShape{16, 12, 3});
    CHECK(info.error_norm == 0.0);
    CHECK(info.elite_utility == agent.pool().elite_score());
    CHECK(u == agent.pool().elite().actions.front());
    agent.act(crane_frame(2));
    CHECK(agent.last_step().error_norm > 0.0);
    CHECK(agent.step_count() == 2);
  }

  TEST_CASE("agents are deterministic") {
    auto a = crane_agent(small_config());
    auto b = crane_agent(small_config());
    for (std::uint64_t t = 1; t <= 4; ++t) CHECK(a.act(crane_frame(t)) == b.act(crane_frame(t)));
    CHECK(a.pool().hash() == b.pool().hash());
  }

  TEST_CASE("online learning touches f and g but not g+") {
    auto cfg = small_config();
    cfg.online_learning = true;
    auto agent = crane_agent(cfg);
    const auto f0 = agent.learning_system().transition().hash();
    const auto g0 = agent.learning_system().decoder().hash();
    const auto e0 = agent.learning_system().encoder().hash();
    agent.act(crane_frame(1));
    CHECK(agent.learning_system().transition().hash() == f0);
    CHECK(agent.learning_system().decoder().hash() != g0);
    agent.act(crane_frame(2));
    CHECK(agent.learning_system().transition().hash() != f0);
    CHECK(agent.learning_system().encoder().hash() == e0);

    auto frozen = crane_agent(small_config());
    const auto ff = frozen.learning_system().transition().hash();
    frozen.act(crane_frame(1));
    frozen.act(crane_frame(2));
    CHECK(frozen.learning_system().transition().hash() == ff);
  }

  TEST_CASE("encoder mode needs an encoder") {
    auto cfg = small_config();
    cfg.mode = EncoderMode::kEncoder;
    ModelTopology topo;
    topo.with_encoder = false;
    auto ls = LearningSystem::create(FrameShape{8, 8, 1}, 2, 4, topo, 1);
    CHECK(kind_of([&] { ManicAgent(ls, ContentmentModel::create(2, {4}, 1), cfg); }) == ErrorKind::kEncoderAbsent);
    cfg.mode = EncoderMode::kInference;
    ManicAgent agent(ls, ContentmentModel::create(2, {4}, 1), cfg);
    Observation x(FrameShape{8, 8, 1});
    CHECK_NOTHROW(agent.act(x));
  }

  TEST_CASE("mismatched dimensions are rejected") {
    auto cfg = small_config(2);
    auto ls = LearningSystem::create(FrameShape{8, 8, 1}, 3, 4, ModelTopology{}, 1);
    CHECK(kind_of([&] { ManicAgent(ls, ContentmentModel::create(2, {4}, 1), cfg); }) == ErrorKind::kShape);
    auto agent = crane_agent(cfg);
    CHECK(kind_of([&] { agent.set_contentment(ContentmentModel::create(3, {4}, 1)); }) == ErrorKind::kShape);
    CHECK(kind_of([&] { agent.act(Observation(FrameShape{4, 4, 3})); }) == ErrorKind::kShape);
  }

  TEST_CASE("introspection must be chosen at construction") {
    auto agent = crane_agent(small_config());
    CHECK(kind_of([&] { agent.enable_introspection(); }) == ErrorKind::kConfig);
  }

  TEST_CASE("introspective frames carry parameters and belief") {
    auto cfg = small_config(2);
    cfg.introspection = true;
    cfg.introspection_samples = 16;
    const FrameShape external{4, 1, 1};
    const FrameShape inner = ManicAgent::perceived_shape(external, cfg);
    CHECK(inner == FrameShape{4 + 16 + 2, 1, 1});
    ModelTopology topo;
    topo.transition_hidden = {4};
    topo.decoder_hidden = {4};
    topo.with_encoder = false;
    auto ls = LearningSystem::create(inner, 2, 2, topo, 7);
    cfg.mode = EncoderMode::kInference;
    ManicAgent agent(ls, ContentmentModel::create(2, {4}, 1), cfg);
    CHECK_NOTHROW(agent.enable_introspection());

    const auto& idx = agent.introspection_indices();
    REQUIRE(idx.size() == 16);
    CHECK(std::is_sorted(idx.begin(), idx.end()));
    CHECK(std::adjacent_find(idx.begin(), idx.end()) == idx.end());

    Observation x(external);
    x.pixels << 0.1, 0.2, 0.3, 0.4;
    auto seen = agent.introspective_observe(x);
    CHECK(seen.shape == inner);
    CHECK(seen.pixels.head(4) == x.pixels);
    const std::size_t nf = ls.transition().parameter_count();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const double p = idx[k] < nf ? ls.transition().parameter(idx[k]) : ls.decoder().parameter(idx[k] - nf);
      CHECK(seen.pixels[static_cast<Eigen::Index>(4 + k)] == doctest::Approx(std::clamp(0.5 * (p + 1.0), 0.0, 1.0)));
    }
    CHECK(seen.pixels.tail(2).isApproxToConstant(0.5));
    agent.act(x);
    const Belief v = agent.last_step().belief;
    seen = agent.introspective_observe(x);
    CHECK(seen.pixels[20] == doctest::Approx(0.5 * (v[0] + 1.0)));
  }

  TEST_CASE("introspection sample count is bounded by the parameter count") {
    auto cfg = small_config(1);
    cfg.introspection = true;
    cfg.introspection_samples = 100000;
    cfg.mode = EncoderMode::kInference;
    ModelTopology topo;
    topo.with_encoder = false;
    auto ls = LearningSystem::create(FrameShape{10, 1, 1}, 1, 2, topo, 1);
    CHECK(kind_of([&] { ManicAgent(ls, ContentmentModel::create(1, {4}, 1), cfg); }) == ErrorKind::kConfig);
  }

  TEST_CASE("reactive baseline picks the argmax") {
    auto policy = Approximator::zeros({4, 2});
    policy.weights(0)(1, 3) = 1.0;
    BaselinePolicyAgent agent(policy, ActionSpace{2});
    Observation x(FrameShape{4, 1, 1});
    CHECK(agent.act(x) == ActionSpace{2}.one_hot(0));
    x.pixels[3] = 1.0;
    CHECK(agent.act(x) == ActionSpace{2}.one_hot(1));
    CHECK_THROWS_AS(BaselinePolicyAgent(Approximator::zeros({4, 3}), ActionSpace{2}), Error);
  }

  TEST_CASE("memory baseline carries state and resets per episode") {
    // belief' = belief + x[0]; act 1 once the belief is positive.
    auto memory = Approximator::zeros({1 + 4, 1});
    memory.weights(0)(0, 0) = 1.0;
    memory.weights(0)(0, 1) = 1.0;
    auto policy = Approximator::zeros({1, 2});
    policy.weights(0)(1, 0) = 1.0;
    BaselineMemoryPolicyAgent agent(memory, policy, ActionSpace{2});
    Observation cue(FrameShape{4, 1, 1}), blank(FrameShape{4, 1, 1});
    cue.pixels[0] = 0.5;
    agent.begin_episode();
    CHECK(agent.act(blank) == ActionSpace{2}.one_hot(0));
    agent.act(cue);
    CHECK(agent.act(blank) == ActionSpace{2}.one_hot(1));
    agent.begin_episode();
    CHECK(agent.act(blank) == ActionSpace{2}.one_hot(0));
  }

  TEST_CASE("episodes stop at a terminal state") {
    AliasedCorridorEnv env(3);
    env.reset(1);
    auto policy = Approximator::zeros({4, 2});
    policy.biases(0)[1] = 1.0;
    BaselinePolicyAgent agent(policy, ActionSpace{2});
    auto trace = run_episode(agent, env, 100);
    CHECK(trace.size() == env.junction_position() + 1);
    CHECK(trace.done);
    CHECK(trace.success);
    CHECK(trace.environment == "aliased-corridor");
  }

  TEST_CASE("traces save as json lines with png frames") {
    testing::TempDir dir("trace_save");
    auto agent = crane_agent(small_config());
    CraneEnv env(NoiseLevels{}, FrameShape{16, 12, 3});
    env.reset(3);
    auto trace = run_episode(agent, env, 3);
    trace.seed = 3;
    trace.save(dir / "ep.jsonl", dir / "frames");
    std::ifstream in(dir / "ep.jsonl");
    std::string line;
    std::vector<nlohmann::json> lines;
    while (std::getline(in, line)) lines.push_back(nlohmann::json::parse(line));
    REQUIRE(lines.size() == 4);
    CHECK(lines[0]["steps"] == 3);
    CHECK(lines[0]["environment"] == "crane");
    CHECK(std::filesystem::exists(dir / "frames" / lines[1]["observation"].get<std::string>()));
    CHECK(std::filesystem::exists(dir / "frames" / lines[3]["predicted_next"].get<std::string>()));

    trace.save(dir / "inline.jsonl");
    std::ifstream in2(dir / "inline.jsonl");
    std::getline(in2, line);
    std::getline(in2, line);
    CHECK(nlohmann::json::parse(line)["observation"].get<std::string>().rfind("data:image/png;base64,", 0) == 0);
  }

  TEST_CASE("warehouse score rewards reaching the goal") {
    WarehouseEnv env(NoiseLevels{0.0, 0.0});
    env.reset(1);
    const double away = warehouse_score(env, EpisodeTrace{});
    CHECK(away == doctest::Approx(-env.goal_distance()));
    env.set_state((Vec(2) << env.map().goal_x, env.map().goal_y).finished());
    CHECK(warehouse_score(env, EpisodeTrace{}) == doctest::Approx(1.0));
    CraneEnv crane;
    CHECK_THROWS_AS(warehouse_score(crane, EpisodeTrace{}), Error);
  }

  TEST_CASE("closed loop fitness is reproducible") {
    auto cfg = small_config();
    ModelTopology topo;
    topo.transition_hidden = {4};
    topo.decoder_hidden = {4};
    topo.encoder_hidden = {4};
    auto ls = LearningSystem::create(FrameShape{16, 12, 3}, 2, 4, topo, 2);
    WarehouseEnv env(NoiseLevels{}, WarehouseMap::default_map(), FrameShape{16, 12, 3});
    auto fitness = closed_loop_fitness(ls, env, cfg, 2, 3, 10, warehouse_score);
    auto cm = ContentmentModel::create(2, {4}, 9);
    CHECK(fitness(cm) == fitness(cm));
  }
  TEST_CASE("degenerate pool of one single-step plan") {
    auto cfg = small_config();
    cfg.pool_size = 1;
    cfg.horizon = 1;
    auto agent = crane_agent(cfg);
    Action u = agent.act(crane_frame(1));
    CHECK(u == agent.pool().plan(0).actions.front());
  }

  TEST_CASE("zero-weight policy always picks action 0") {
    BaselinePolicyAgent agent(Approximator::zeros({4, 2}), ActionSpace{2});
    Observation x(FrameShape{4, 1, 1});
    x.pixels << 0.3, 0.9, 0.1, 0.5;
    CHECK(agent.act(x) == ActionSpace{2}.one_hot(0));
  }

  TEST_CASE("replaying trace actions reproduces the states") {
    auto agent = crane_agent(small_config());
    CraneEnv env(NoiseLevels{}, FrameShape{16, 12, 3});
    env.reset(11);
    auto trace = run_episode(agent, env, 5);
    CraneEnv replay(NoiseLevels{}, FrameShape{16, 12, 3});
    replay.reset(11);
    for (const auto& s : trace.steps) {
      replay.render();
      CHECK(replay.step(s.action) == s.state_after);
    }
  }
}
