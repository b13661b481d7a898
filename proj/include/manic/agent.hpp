#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "manic/approximator.hpp"
#include "manic/contentment.hpp"
#include "manic/environment.hpp"
#include "manic/learning_system.hpp"
#include "manic/planner.hpp"
#include "manic/types.hpp"

namespace manic {

enum class EncoderMode { kEncoder, kInference, kHybrid };

std::string to_string(EncoderMode mode);
EncoderMode parse_encoder_mode(const std::string& text);

struct AgentConfig {
  std::size_t belief_dims = 2;
  std::size_t horizon = 10;
  std::size_t pool_size = 32;
  std::size_t refine_iterations = 10;
  EncoderMode mode = EncoderMode::kHybrid;
  RefineOptions inference{};
  bool introspection = false;
  std::size_t introspection_samples = 64;
  bool online_learning = false;
  double online_rate = 0.001;
  std::size_t online_pixels = 64;
  GaOptions ga{};
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static AgentConfig from_json(const nlohmann::json& j);
};

// What an agent knew when it chose its last action. Baselines leave the
// prediction fields empty.
struct StepInfo {
  Belief belief;
  std::optional<Observation> predicted_next;
  double error_norm = 0.0;
  double elite_utility = 0.0;
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual Action act(const Observation& x) = 0;
  virtual const StepInfo& last_step() const = 0;
  // Clears per-episode memory; learned parameters are kept.
  virtual void begin_episode() = 0;
};

enum class StepPhase { kBeliefUpdate, kEvaluate, kRefine, kChoose, kLearn };
using PhaseHook = std::function<void(StepPhase)>;

// The full architecture: beliefs from f, g, g+; plans scored through h.
class ManicAgent final : public Agent {
 public:
  ManicAgent(LearningSystem ls, ContentmentModel cm, AgentConfig config);

  Action act(const Observation& x) override { return agent_step(x); }
  const StepInfo& last_step() const override { return info_; }
  void begin_episode() override;

  Action agent_step(const Observation& x);
  // External frame plus m sampled parameters and the belief, mapped from
  // [-1, 1] into [0, 1], as a W*H*C + m + d by 1 by 1 frame.
  Observation introspective_observe(const Observation& x) const;
  // Introspection is fixed at construction; switching it on later throws.
  void enable_introspection();

  const LearningSystem& learning_system() const { return ls_; }
  LearningSystem& learning_system() { return ls_; }
  const ContentmentModel& contentment() const { return cm_; }
  // Swaps h between steps; the pool is rescored on the next step.
  void set_contentment(ContentmentModel cm);
  const PlanPool& pool() const { return pool_; }
  const AgentConfig& config() const { return config_; }
  const std::vector<std::size_t>& introspection_indices() const { return sampled_; }
  std::size_t step_count() const { return steps_; }
  void set_phase_hook(PhaseHook hook) { hook_ = std::move(hook); }

  // Frame shape the learning system must have for a given external frame.
  static FrameShape perceived_shape(FrameShape external, const AgentConfig& config);

 private:
  double parameter_value(std::size_t flat_index) const;
  void phase(StepPhase p) const {
    if (hook_) hook_(p);
  }
  void learn(const Observation& x);

  LearningSystem ls_;
  ContentmentModel cm_;
  AgentConfig config_;
  PlanPool pool_;
  Rng rng_;
  std::vector<std::size_t> sampled_;
  std::optional<Belief> belief_;
  std::optional<Belief> previous_belief_;
  std::optional<Action> previous_action_;
  std::optional<Belief> predicted_belief_;
  std::size_t steps_ = 0;
  StepInfo info_;
  PhaseHook hook_;
};

// Reactive baseline: downsampled observation -> action scores.
class BaselinePolicyAgent final : public Agent {
 public:
  BaselinePolicyAgent(Approximator policy, ActionSpace space, std::size_t downsample = 1);
  Action act(const Observation& x) override;
  const StepInfo& last_step() const override { return info_; }
  void begin_episode() override {}

  static Vec features(const Observation& x, std::size_t downsample);

 private:
  Approximator policy_;
  ActionSpace space_;
  std::size_t downsample_;
  StepInfo info_;
};

// Recurrent baseline: memory (belief, observation) -> belief, then policy
// belief -> action scores. The belief starts at zero each episode.
class BaselineMemoryPolicyAgent final : public Agent {
 public:
  BaselineMemoryPolicyAgent(Approximator memory, Approximator policy, ActionSpace space, std::size_t downsample = 1);
  Action act(const Observation& x) override;
  const StepInfo& last_step() const override { return info_; }
  void begin_episode() override;

  std::size_t memory_dims() const { return memory_.output_size(); }

 private:
  Approximator memory_;
  Approximator policy_;
  ActionSpace space_;
  std::size_t downsample_;
  Belief belief_;
  StepInfo info_;
};

struct TraceStep {
  Observation observation;
  Belief belief;
  Action action;
  std::optional<Observation> predicted_next;
  double error_norm = 0.0;
  double elite_utility = 0.0;
  // Environment state after the action. Evaluation only.
  Vec state_after;
};

struct EpisodeTrace {
  std::string environment;
  std::uint64_t seed = 0;
  Vec initial_state;
  std::vector<TraceStep> steps;
  bool done = false;
  bool success = false;

  std::size_t size() const { return steps.size(); }
  // JSON lines: a header line then one line per step. Frames go to
  // frame_dir as PNG files, or inline as base64 when frame_dir is empty.
  void save(const std::filesystem::path& path, const std::filesystem::path& frame_dir = {}) const;
};

// Renders, acts and steps until `steps` actions are taken or env.done().
// The environment must already be reset.
EpisodeTrace run_episode(Agent& agent, Environment& env, std::size_t steps);

using EpisodeScore = std::function<double(const Environment&, const EpisodeTrace&)>;

// Fitness callback for evolve_contentment: each candidate h drives a fresh
// ManicAgent for `episodes` episodes on clones of env; the score is averaged.
ContentmentFitness closed_loop_fitness(const LearningSystem& ls, const Environment& env, AgentConfig config,
                                       std::size_t episodes, std::size_t steps, std::uint64_t seed,
                                       EpisodeScore score);

// Negative remaining goal distance, plus one on success. Warehouse only.
double warehouse_score(const Environment& env, const EpisodeTrace& trace);

}  // namespace manic
