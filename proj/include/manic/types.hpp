#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "manic/approximator.hpp"

namespace manic {

using Rng = std::mt19937_64;

// Belief vectors live in [-1, 1]^d; actions are one-hot for discrete sets.
using Belief = Vec;
using Action = Vec;

struct FrameShape {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;

  std::size_t size() const { return width * height * channels; }
  friend bool operator==(const FrameShape&, const FrameShape&) = default;
};

// Camera frame, row-major with interleaved channels, values in [0, 1].
struct Observation {
  FrameShape shape;
  Vec pixels;

  Observation() = default;
  Observation(FrameShape s, Vec p);
  explicit Observation(FrameShape s);

  double at(std::size_t x, std::size_t y, std::size_t c) const {
    return pixels[static_cast<Eigen::Index>((y * shape.width + x) * shape.channels + c)];
  }
  double& at(std::size_t x, std::size_t y, std::size_t c) {
    return pixels[static_cast<Eigen::Index>((y * shape.width + x) * shape.channels + c)];
  }
};

double mean_abs_difference(const Observation& a, const Observation& b);

// Block area-average downsampling; output is max(1, W/factor) x max(1, H/factor).
Observation downsample(const Observation& x, std::size_t factor);

struct ActionSpace {
  std::size_t dims = 0;
  bool discrete = true;
  double low = -1.0;
  double high = 1.0;

  Action one_hot(std::size_t index) const;
  Action sample(Rng& rng) const;
  // Index of the largest entry, lowest index on ties.
  static std::size_t argmax(const Action& u);
  bool valid(const Action& u) const;
};

// Fixed-horizon action sequence.
struct Plan {
  std::vector<Action> actions;

  std::size_t horizon() const { return actions.size(); }
  friend bool operator==(const Plan& a, const Plan& b);
};

}  // namespace manic
