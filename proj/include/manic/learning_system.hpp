#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "manic/approximator.hpp"
#include "manic/types.hpp"

namespace manic {

// Hidden-layer widths for the three learned mappings.
struct ModelTopology {
  std::vector<std::size_t> transition_hidden{32, 32};
  std::vector<std::size_t> decoder_hidden{64, 64};
  std::vector<std::size_t> encoder_hidden{32};
  bool with_encoder = true;
  std::size_t encoder_downsample = 4;
};

struct RefineOptions {
  std::size_t steps = 100;
  double rate = 0.05;
  std::size_t pixels_per_step = 64;
  std::uint64_t seed = 0;
};

// Transition model f: (belief, action) -> next belief.
// Decoder g: (belief, px, py) -> pixel colour, evaluated per pixel.
// Encoder g+: downsampled frame -> belief. Optional.
class LearningSystem {
 public:
  LearningSystem() = default;
  LearningSystem(FrameShape frame, std::size_t belief_dims, std::size_t action_dims, Approximator transition,
                 Approximator decoder, std::optional<Approximator> encoder, std::size_t encoder_downsample = 4);

  static LearningSystem create(FrameShape frame, std::size_t belief_dims, std::size_t action_dims,
                               const ModelTopology& topology, std::uint64_t seed);

  FrameShape frame() const { return frame_; }
  std::size_t belief_dims() const { return belief_dims_; }
  std::size_t action_dims() const { return action_dims_; }
  std::size_t encoder_downsample() const { return encoder_downsample_; }
  FrameShape encoder_input_shape() const;

  const Approximator& transition() const { return f_; }
  Approximator& transition() { return f_; }
  const Approximator& decoder() const { return g_; }
  Approximator& decoder() { return g_; }
  bool has_encoder() const { return g_plus_.has_value(); }
  const Approximator& encoder() const;
  Approximator& encoder();
  void drop_encoder() { g_plus_.reset(); }

  Belief predict_transition(const Belief& v, const Action& u) const;
  Vec decode_pixel(const Belief& v, double px, double py) const;
  Observation decode_frame(const Belief& v) const;
  Belief encode(const Observation& x) const;

  // Gradient descent on the belief, matching decoded pixels to x on a fresh
  // random subsample each step. Steps that raise the subsample objective are
  // undone and halve the rate.
  Belief refine_beliefs(const Belief& v_init, const Observation& x, const RefineOptions& options) const;

  std::vector<Belief> rollout(const Belief& v0, const Plan& plan) const;
  std::vector<Observation> imagine_video(const Belief& v0, const Plan& plan) const;

  // Inputs for the per-pixel decoder and encoder training pairs.
  Vec decoder_input(const Belief& v, double px, double py) const;
  Vec encoder_input(const Observation& x) const;
  Vec transition_input(const Belief& v, const Action& u) const;
  // Normalized centre of pixel (i, j).
  double pixel_x(std::size_t i) const { return (static_cast<double>(i) + 0.5) / static_cast<double>(frame_.width); }
  double pixel_y(std::size_t j) const { return (static_cast<double>(j) + 0.5) / static_cast<double>(frame_.height); }

  // Squared reconstruction error summed over every pixel and channel.
  double reconstruction_error(const Belief& v, const Observation& x) const;

  void save(const std::filesystem::path& dir) const;
  static LearningSystem load(const std::filesystem::path& dir);

 private:
  void check_belief(const Belief& v) const;

  FrameShape frame_;
  std::size_t belief_dims_ = 0;
  std::size_t action_dims_ = 0;
  std::size_t encoder_downsample_ = 4;
  Approximator f_;
  Approximator g_;
  std::optional<Approximator> g_plus_;
};

Vec error_signal(const Observation& x, const Observation& x_hat);

Belief clamp_belief(Belief v);

}  // namespace manic
