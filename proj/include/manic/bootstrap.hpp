#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "manic/environment.hpp"
#include "manic/learning_system.hpp"

namespace manic {

// Random walk through an environment: T frames joined by T-1 actions.
// true_states is ground truth kept for evaluation only.
struct WalkDataset {
  FrameShape frame;
  std::size_t action_dims = 0;
  std::uint64_t seed = 0;
  std::vector<Observation> observations;
  std::vector<Action> actions;
  std::vector<Vec> true_states;

  std::size_t size() const { return observations.size(); }
  bool has_true_states() const { return !true_states.empty(); }
  void validate() const;

  // MNC1 binary format; frames, actions and states stored as f32.
  void save(const std::filesystem::path& path) const;
  static WalkDataset load(const std::filesystem::path& path);
};

struct BeliefEstimates {
  std::vector<Belief> beliefs;

  std::size_t dims() const { return beliefs.empty() ? 0 : static_cast<std::size_t>(beliefs.front().size()); }
  // MNCB binary format.
  void save(const std::filesystem::path& path) const;
  static BeliefEstimates load(const std::filesystem::path& path);
};

WalkDataset collect_random_walk(Environment& env, std::size_t steps, std::uint64_t seed);

struct NldrOptions {
  std::size_t dims = 2;
  std::size_t neighbors = 10;
  // Walks longer than this use landmark MDS.
  std::size_t exact_limit = 2000;
  std::size_t landmarks = 500;
};

// Isomap with temporal edges: k-nearest-neighbour graph by pixel distance
// united with (t, t+1) edges, shortest-path geodesics, classical MDS, then a
// per-dimension affine map into [-1, 1].
BeliefEstimates estimate_beliefs(const WalkDataset& ds, const NldrOptions& options);
BeliefEstimates estimate_beliefs(const std::vector<Observation>& frames, const NldrOptions& options);

struct TrainConfig {
  std::size_t epochs = 50;
  double rate = 0.01;
  double decay = 0.5;
  std::size_t pixels_per_frame = 256;
  double holdout = 0.1;
  std::uint64_t seed = 1;
  ModelTopology topology{};
};

struct ModelLog {
  std::vector<double> epoch_loss;
  double final_rate = 0.0;
};

struct TrainLog {
  ModelLog transition;
  ModelLog decoder;
  ModelLog encoder;
  std::size_t train_frames = 0;
  // Per-dimension RMS of one-step belief prediction on the held-out tail.
  std::vector<double> heldout_transition_rms;
  // Mean squared full-frame decoder error on a fixed subset of frames.
  double decoder_full_frame_mse = 0.0;

  nlohmann::json to_json() const;
};

struct PretrainResult {
  LearningSystem system;
  TrainLog log;
};

// Supervised training of f, g and g+ against bootstrap beliefs. The last
// `holdout` fraction of the walk is never trained on. Never reads
// ds.true_states.
PretrainResult pretrain(const WalkDataset& ds, const BeliefEstimates& beliefs, const TrainConfig& config);

// Further epochs over the training portion of the walk with fixed bootstrap
// belief targets; updates f and g only.
TrainLog refine_models(LearningSystem& ls, const WalkDataset& ds, const BeliefEstimates& beliefs,
                       const TrainConfig& config);

}  // namespace manic
