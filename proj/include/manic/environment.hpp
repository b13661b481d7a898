#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "manic/types.hpp"

namespace manic {

struct NoiseLevels {
  double transition = 0.005;
  double observation = 0.01;
};

// Seeded simulated world with a camera. Single-threaded per instance.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual std::string kind() const = 0;
  virtual FrameShape frame_shape() const = 0;
  virtual ActionSpace action_space() const = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;

  // Reseeds the generator and draws a deterministic initial state.
  virtual Vec reset(std::uint64_t seed) = 0;
  virtual Vec step(const Action& u) = 0;
  // Noiseless frame of the current state.
  virtual Observation render_clean() const = 0;
  // Clean frame plus per-value Gaussian noise, clamped to [0, 1].
  Observation render();

  // Terminal state reached (goal region, corridor exit). Episodes stop here.
  virtual bool done() const { return false; }
  // Episode succeeded. Only meaningful once done() is true.
  virtual bool success() const { return done(); }

  const Vec& state() const { return state_; }
  virtual void set_state(const Vec& s);

  NoiseLevels noise() const { return noise_; }
  void set_noise(NoiseLevels n) { noise_ = n; }

 protected:
  explicit Environment(NoiseLevels noise) : noise_(noise) {}
  std::size_t checked_action(const Action& u) const;
  double gaussian(double sigma);

  Vec state_;
  NoiseLevels noise_;
  Rng rng_{0};
};

// Two-DOF crane: state (boom, cable) in [0,1]^2. Actions left, right, up, down.
class CraneEnv final : public Environment {
 public:
  static constexpr double kStride = 0.02;
  explicit CraneEnv(NoiseLevels noise = {}, FrameShape frame = {64, 48, 3});

  std::string kind() const override { return "crane"; }
  FrameShape frame_shape() const override { return frame_; }
  ActionSpace action_space() const override { return {4, true}; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<CraneEnv>(*this); }
  Vec reset(std::uint64_t seed) override;
  Vec step(const Action& u) override;
  Observation render_clean() const override;
  void set_state(const Vec& s) override;

 private:
  FrameShape frame_;
};

struct Rect {
  double x0, y0, x1, y1;
  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

struct WarehouseMap {
  std::vector<Rect> shelves;
  double goal_x = 0.62;
  double goal_y = 0.62;
  double goal_radius = 0.07;
  Rect start_region{0.3, 0.3, 0.4, 0.4};

  static WarehouseMap default_map();
  // Seeded variant with randomly placed shelves that keeps start and goal clear.
  static WarehouseMap generate(std::uint64_t seed);
  // True when an agent centred at (x, y) would overlap a shelf.
  bool blocked(double x, double y, double radius) const;
};

// Shortest-path distance to the goal around shelves, computed by Dijkstra on
// an 8-connected lattice and bilinearly interpolated. Synthetic teachers use
// it as ground-truth desirability.
class GoalDistanceField {
 public:
  GoalDistanceField(const WarehouseMap& map, double radius, std::size_t resolution = 101);
  double operator()(double x, double y) const;

 private:
  double cell(std::size_t i, std::size_t j) const { return dist_[j * res_ + i]; }
  std::size_t res_;
  std::vector<double> dist_;
};

// Top-down warehouse floor: state (x, y) in [0,1]^2, shelves block motion.
class WarehouseEnv final : public Environment {
 public:
  static constexpr double kStride = 0.02;
  static constexpr double kAgentRadius = 0.03;
  explicit WarehouseEnv(NoiseLevels noise = {}, WarehouseMap map = WarehouseMap::default_map(),
                        FrameShape frame = {64, 48, 3});

  std::string kind() const override { return "warehouse"; }
  FrameShape frame_shape() const override { return frame_; }
  ActionSpace action_space() const override { return {4, true}; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<WarehouseEnv>(*this); }
  Vec reset(std::uint64_t seed) override;
  Vec step(const Action& u) override;
  Observation render_clean() const override;
  bool done() const override;
  void set_state(const Vec& s) override;

  const WarehouseMap& map() const { return map_; }
  bool collides(double x, double y) const;
  double goal_distance() const;
  // Floor position of the agent glyph in a rendered or imagined frame, from
  // the centroid of blue pixels. Empty when no glyph is visible.
  std::optional<Vec> locate_agent(const Observation& frame) const;

 private:
  WarehouseMap map_;
  FrameShape frame_;
};

// One-dimensional brightness ramp; the whole frame has brightness equal to the state.
class RampEnv final : public Environment {
 public:
  explicit RampEnv(NoiseLevels noise = {0.0, 0.0}, FrameShape frame = {8, 6, 1});

  std::string kind() const override { return "ramp-test"; }
  FrameShape frame_shape() const override { return frame_; }
  ActionSpace action_space() const override { return {2, true}; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<RampEnv>(*this); }
  Vec reset(std::uint64_t seed) override;
  Vec step(const Action& u) override;
  Observation render_clean() const override;

 private:
  FrameShape frame_;
};

// Cue cell, then a run of identical corridor cells, then a junction that
// looks the same for both cues. The correct turn at the junction equals the
// cue shown at the start. State: (position, cue, outcome) with outcome -1
// while undecided, 0 on a wrong turn, 1 on the right one.
class AliasedCorridorEnv final : public Environment {
 public:
  explicit AliasedCorridorEnv(std::size_t corridor_length = 3);

  std::string kind() const override { return "aliased-corridor"; }
  FrameShape frame_shape() const override { return {4, 1, 1}; }
  ActionSpace action_space() const override { return {2, true}; }
  std::unique_ptr<Environment> clone() const override { return std::make_unique<AliasedCorridorEnv>(*this); }
  Vec reset(std::uint64_t seed) override;
  Vec step(const Action& u) override;
  Observation render_clean() const override;
  bool done() const override { return state_[2] >= 0.0; }
  bool success() const override { return state_[2] == 1.0; }

  std::size_t corridor_length() const { return corridor_length_; }
  std::size_t junction_position() const { return corridor_length_ + 1; }
  int cue() const { return static_cast<int>(state_[1]); }

 private:
  std::size_t corridor_length_;
};

struct EnvironmentConfig {
  std::string kind = "crane";
  NoiseLevels noise{};
  // 0 selects the default warehouse map; otherwise a seeded variant.
  std::uint64_t map_seed = 0;
};

std::unique_ptr<Environment> make_environment(const EnvironmentConfig& config);

}  // namespace manic
