#include "manic/agent.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "manic/error.hpp"
#include "manic/image_io.hpp"

namespace manic {

std::string to_string(EncoderMode mode) {
  switch (mode) {
    case EncoderMode::kEncoder: return "encoder";
    case EncoderMode::kInference: return "inference";
    case EncoderMode::kHybrid: return "hybrid";
  }
  return "hybrid";
}

EncoderMode parse_encoder_mode(const std::string& text) {
  if (text == "encoder") return EncoderMode::kEncoder;
  if (text == "inference") return EncoderMode::kInference;
  if (text == "hybrid") return EncoderMode::kHybrid;
  throw Error(ErrorKind::kConfig, "unknown encoder mode: " + text);
}

void AgentConfig::validate() const {
  require(belief_dims >= 1, ErrorKind::kConfig, "belief_dims must be positive");
  require(horizon >= 1, ErrorKind::kConfig, "horizon must be positive");
  require(pool_size >= 1, ErrorKind::kConfig, "pool_size must be positive");
  require(inference.steps >= 1 && inference.rate > 0.0, ErrorKind::kConfig, "inference steps and rate must be positive");
  require(!online_learning || online_rate > 0.0, ErrorKind::kConfig, "online_rate must be positive");
  require(!online_learning || online_pixels >= 1, ErrorKind::kConfig, "online_pixels must be positive");
}

nlohmann::json AgentConfig::to_json() const {
  return {{"belief_dims", belief_dims},
          {"horizon", horizon},
          {"pool_size", pool_size},
          {"refine_iterations", refine_iterations},
          {"mode", to_string(mode)},
          {"inference", {{"steps", inference.steps}, {"rate", inference.rate}, {"pixels_per_step", inference.pixels_per_step}}},
          {"introspection", introspection},
          {"introspection_samples", introspection_samples},
          {"online_learning", online_learning},
          {"online_rate", online_rate},
          {"online_pixels", online_pixels},
          {"ga", {{"crossover", ga.crossover}, {"mutation", ga.mutation}, {"sigma", ga.sigma}, {"tournament", ga.tournament}, {"elites", ga.elites}}},
          {"seed", seed}};
}

AgentConfig AgentConfig::from_json(const nlohmann::json& j) {
  AgentConfig c;
  c.belief_dims = j.value("belief_dims", c.belief_dims);
  c.horizon = j.value("horizon", c.horizon);
  c.pool_size = j.value("pool_size", c.pool_size);
  c.refine_iterations = j.value("refine_iterations", c.refine_iterations);
  c.mode = parse_encoder_mode(j.value("mode", to_string(c.mode)));
  if (j.contains("inference")) {
    const auto& i = j.at("inference");
    c.inference.steps = i.value("steps", c.inference.steps);
    c.inference.rate = i.value("rate", c.inference.rate);
    c.inference.pixels_per_step = i.value("pixels_per_step", c.inference.pixels_per_step);
  }
  c.introspection = j.value("introspection", c.introspection);
  c.introspection_samples = j.value("introspection_samples", c.introspection_samples);
  c.online_learning = j.value("online_learning", c.online_learning);
  c.online_rate = j.value("online_rate", c.online_rate);
  c.online_pixels = j.value("online_pixels", c.online_pixels);
  if (j.contains("ga")) {
    const auto& g = j.at("ga");
    c.ga.crossover = g.value("crossover", c.ga.crossover);
    c.ga.mutation = g.value("mutation", c.ga.mutation);
    c.ga.sigma = g.value("sigma", c.ga.sigma);
    c.ga.tournament = g.value("tournament", c.ga.tournament);
    c.ga.elites = g.value("elites", c.ga.elites);
  }
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

namespace {

std::size_t total_parameters(const LearningSystem& ls) {
  std::size_t n = ls.transition().parameter_count() + ls.decoder().parameter_count();
  if (ls.has_encoder()) n += ls.encoder().parameter_count();
  return n;
}

double squash(double v) { return std::clamp(0.5 * (v + 1.0), 0.0, 1.0); }

}  // namespace

ManicAgent::ManicAgent(LearningSystem ls, ContentmentModel cm, AgentConfig config)
    : ls_(std::move(ls)), cm_(std::move(cm)), config_(std::move(config)), rng_(config_.seed) {
  config_.validate();
  require(ls_.belief_dims() == config_.belief_dims, ErrorKind::kShape, "learning system belief_dims differ from config");
  require(cm_.belief_dims() == config_.belief_dims, ErrorKind::kShape, "contentment model belief_dims differ from config");
  if (config_.mode == EncoderMode::kEncoder) require(ls_.has_encoder(), ErrorKind::kEncoderAbsent, "encoder mode needs g+");
  if (config_.introspection) {
    const std::size_t total = total_parameters(ls_);
    require(config_.introspection_samples <= total, ErrorKind::kConfig,
            "introspection sample size exceeds the parameter count");
    std::vector<std::size_t> all(total);
    std::iota(all.begin(), all.end(), std::size_t{0});
    Rng pick(config_.seed ^ 0x5bd1e995ULL);
    std::shuffle(all.begin(), all.end(), pick);
    sampled_.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(config_.introspection_samples));
    std::sort(sampled_.begin(), sampled_.end());
    require(ls_.frame().height == 1 && ls_.frame().channels == 1, ErrorKind::kShape,
            "introspective agents need a learning system over N x 1 x 1 frames");
  }
  pool_ = PlanPool::init(config_.pool_size, config_.horizon, ActionSpace{ls_.action_dims(), true}, config_.seed,
                         config_.ga);
}

FrameShape ManicAgent::perceived_shape(FrameShape external, const AgentConfig& config) {
  if (!config.introspection) return external;
  return {external.size() + config.introspection_samples + config.belief_dims, 1, 1};
}

void ManicAgent::enable_introspection() {
  require(config_.introspection, ErrorKind::kConfig, "introspection must be enabled when the agent is constructed");
}

void ManicAgent::set_contentment(ContentmentModel cm) {
  require(cm.belief_dims() == config_.belief_dims, ErrorKind::kShape, "contentment model belief_dims differ");
  cm_ = std::move(cm);
}

void ManicAgent::begin_episode() {
  belief_.reset();
  previous_belief_.reset();
  previous_action_.reset();
  predicted_belief_.reset();
  info_ = StepInfo{};
  steps_ = 0;
}

double ManicAgent::parameter_value(std::size_t flat) const {
  const std::size_t nf = ls_.transition().parameter_count();
  if (flat < nf) return ls_.transition().parameter(flat);
  flat -= nf;
  const std::size_t ng = ls_.decoder().parameter_count();
  if (flat < ng) return ls_.decoder().parameter(flat);
  return ls_.encoder().parameter(flat - ng);
}

Observation ManicAgent::introspective_observe(const Observation& x) const {
  require(config_.introspection, ErrorKind::kPrecondition, "introspection is not enabled");
  const std::size_t d = config_.belief_dims;
  const std::size_t n = x.shape.size() + sampled_.size() + d;
  Observation out(FrameShape{n, 1, 1});
  out.pixels.head(x.pixels.size()) = x.pixels;
  auto at = static_cast<Eigen::Index>(x.pixels.size());
  for (std::size_t idx : sampled_) out.pixels[at++] = squash(parameter_value(idx));
  for (std::size_t i = 0; i < d; ++i)
    out.pixels[at++] = belief_ ? squash((*belief_)[static_cast<Eigen::Index>(i)]) : 0.5;
  return out;
}

void ManicAgent::learn(const Observation& x) {
  if (previous_belief_ && previous_action_) {
    ls_.transition().train_step(ls_.transition_input(*previous_belief_, *previous_action_), *belief_,
                                config_.online_rate);
  }
  const FrameShape s = ls_.frame();
  std::uniform_int_distribution<std::size_t> px(0, s.width - 1), py(0, s.height - 1);
  Vec target(static_cast<Eigen::Index>(s.channels));
  for (std::size_t k = 0; k < config_.online_pixels; ++k) {
    const std::size_t i = px(rng_), j = py(rng_);
    for (std::size_t c = 0; c < s.channels; ++c) target[static_cast<Eigen::Index>(c)] = x.at(i, j, c);
    ls_.decoder().train_step(ls_.decoder_input(*belief_, ls_.pixel_x(i), ls_.pixel_y(j)), target, config_.online_rate);
  }
}

Action ManicAgent::agent_step(const Observation& external) {
  const Observation x = config_.introspection ? introspective_observe(external) : external;
  require(x.shape == ls_.frame(), ErrorKind::kShape, "observation shape differs from the learning system frame");

  double error_norm = 0.0;
  if (info_.predicted_next) error_norm = error_signal(x, *info_.predicted_next).norm();

  phase(StepPhase::kBeliefUpdate);
  RefineOptions inference = config_.inference;
  inference.seed = config_.seed + steps_;
  const Belief start = predicted_belief_ ? *predicted_belief_ : Belief::Zero(static_cast<Eigen::Index>(config_.belief_dims));
  switch (config_.mode) {
    case EncoderMode::kEncoder: belief_ = ls_.encode(x); break;
    case EncoderMode::kInference: belief_ = ls_.refine_beliefs(start, x, inference); break;
    case EncoderMode::kHybrid:
      belief_ = steps_ == 0 ? ls_.encode(x) : ls_.refine_beliefs(start, x, inference);
      break;
  }

  if (steps_ > 0) pool_.advance();
  phase(StepPhase::kEvaluate);
  pool_.evaluate(ls_, cm_, *belief_);
  phase(StepPhase::kRefine);
  pool_.refine(ls_, cm_, *belief_, config_.refine_iterations);
  phase(StepPhase::kChoose);
  Action u = pool_.choose_action();

  if (config_.online_learning) {
    phase(StepPhase::kLearn);
    learn(x);
  }

  predicted_belief_ = ls_.predict_transition(*belief_, u);
  info_.belief = *belief_;
  info_.predicted_next = ls_.decode_frame(*predicted_belief_);
  info_.error_norm = error_norm;
  info_.elite_utility = pool_.elite_score();
  previous_belief_ = belief_;
  previous_action_ = u;
  ++steps_;
  return u;
}

Vec BaselinePolicyAgent::features(const Observation& x, std::size_t factor) {
  return factor > 1 ? downsample(x, factor).pixels : x.pixels;
}

BaselinePolicyAgent::BaselinePolicyAgent(Approximator policy, ActionSpace space, std::size_t factor)
    : policy_(std::move(policy)), space_(space), downsample_(factor) {
  require(policy_.output_size() == space_.dims, ErrorKind::kShape, "policy output must match the action count");
}

Action BaselinePolicyAgent::act(const Observation& x) {
  Vec in = features(x, downsample_);
  require(static_cast<std::size_t>(in.size()) == policy_.input_size(), ErrorKind::kShape,
          "policy input size differs from the observation features");
  return space_.one_hot(ActionSpace::argmax(policy_.forward(in)));
}

BaselineMemoryPolicyAgent::BaselineMemoryPolicyAgent(Approximator memory, Approximator policy, ActionSpace space,
                                                     std::size_t factor)
    : memory_(std::move(memory)), policy_(std::move(policy)), space_(space), downsample_(factor) {
  require(policy_.input_size() == memory_.output_size(), ErrorKind::kShape, "policy input must match memory output");
  require(policy_.output_size() == space_.dims, ErrorKind::kShape, "policy output must match the action count");
  require(memory_.input_size() > memory_.output_size(), ErrorKind::kShape, "memory input must hold belief and features");
  begin_episode();
}

void BaselineMemoryPolicyAgent::begin_episode() {
  belief_ = Belief::Zero(static_cast<Eigen::Index>(memory_.output_size()));
}

Action BaselineMemoryPolicyAgent::act(const Observation& x) {
  Vec f = BaselinePolicyAgent::features(x, downsample_);
  require(static_cast<std::size_t>(belief_.size() + f.size()) == memory_.input_size(), ErrorKind::kShape,
          "memory input size differs from belief plus features");
  Vec in(belief_.size() + f.size());
  in << belief_, f;
  belief_ = clamp_belief(memory_.forward(in));
  info_.belief = belief_;
  return space_.one_hot(ActionSpace::argmax(policy_.forward(belief_)));
}

EpisodeTrace run_episode(Agent& agent, Environment& env, std::size_t steps) {
  require(steps >= 1, ErrorKind::kPrecondition, "run_episode needs at least one step");
  EpisodeTrace trace;
  trace.environment = env.kind();
  trace.initial_state = env.state();
  agent.begin_episode();
  for (std::size_t t = 0; t < steps && !env.done(); ++t) {
    TraceStep s;
    s.observation = env.render();
    s.action = agent.act(s.observation);
    const StepInfo& info = agent.last_step();
    s.belief = info.belief;
    s.predicted_next = info.predicted_next;
    s.error_norm = info.error_norm;
    s.elite_utility = info.elite_utility;
    s.state_after = env.step(s.action);
    trace.steps.push_back(std::move(s));
  }
  trace.done = env.done();
  trace.success = trace.done && env.success();
  return trace;
}

namespace {

nlohmann::json to_array(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

nlohmann::json frame_ref(const Observation& x, const std::filesystem::path& dir, const std::string& name) {
  if (dir.empty()) return "data:image/png;base64," + base64_encode(encode_png(x));
  write_png(x, dir / name);
  return name;
}

}  // namespace

void EpisodeTrace::save(const std::filesystem::path& path, const std::filesystem::path& frame_dir) const {
  if (!frame_dir.empty()) std::filesystem::create_directories(frame_dir);
  std::ofstream out(path);
  require(out.good(), ErrorKind::kIo, "cannot open " + path.string());
  out << nlohmann::json{{"environment", environment}, {"seed", seed}, {"initial_state", to_array(initial_state)},
                        {"steps", steps.size()}, {"done", done}, {"success", success}}.dump()
      << '\n';
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const auto& s = steps[t];
    const std::string stem = "step_" + std::to_string(t);
    nlohmann::json j{{"t", t},
                     {"observation", frame_ref(s.observation, frame_dir, stem + "_obs.png")},
                     {"belief", to_array(s.belief)},
                     {"action", to_array(s.action)},
                     {"error_norm", s.error_norm},
                     {"elite_utility", s.elite_utility},
                     {"state_after", to_array(s.state_after)}};
    const bool image = s.predicted_next && (s.predicted_next->shape.channels == 1 || s.predicted_next->shape.channels == 3);
    j["predicted_next"] = image ? frame_ref(*s.predicted_next, frame_dir, stem + "_pred.png") : nlohmann::json(nullptr);
    out << j.dump() << '\n';
  }
  require(out.good(), ErrorKind::kIo, "write failed: " + path.string());
}

ContentmentFitness closed_loop_fitness(const LearningSystem& ls, const Environment& env, AgentConfig config,
                                       std::size_t episodes, std::size_t steps, std::uint64_t seed,
                                       EpisodeScore score) {
  require(episodes >= 1 && steps >= 1, ErrorKind::kPrecondition, "fitness needs episodes and steps");
  std::shared_ptr<const Environment> prototype = env.clone();
  return [ls, prototype, config, episodes, steps, seed, score](const ContentmentModel& cm) {
    double total = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
      auto world = prototype->clone();
      world->reset(seed + e);
      ManicAgent agent(ls, cm, config);
      EpisodeTrace trace = run_episode(agent, *world, steps);
      trace.seed = seed + e;
      total += score(*world, trace);
    }
    return total / static_cast<double>(episodes);
  };
}

double warehouse_score(const Environment& env, const EpisodeTrace&) {
  const auto* w = dynamic_cast<const WarehouseEnv*>(&env);
  require(w != nullptr, ErrorKind::kPrecondition, "warehouse_score needs a warehouse environment");
  return -w->goal_distance() + (w->done() ? 1.0 : 0.0);
}

}  // namespace manic
