#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "manic/agent.hpp"
#include "manic/bootstrap.hpp"
#include "manic/contentment.hpp"
#include "manic/environment.hpp"

namespace manic {

// Everything one pipeline run needs. Missing JSON keys keep their defaults.
struct RunConfig {
  EnvironmentConfig environment{};
  std::size_t walk_steps = 1000;
  NldrOptions nldr{};
  TrainConfig train{};
  std::size_t refine_epochs = 20;
  double refine_rate = 0.002;
  std::vector<std::size_t> contentment_hidden{16};
  AgentConfig agent{};
  PreferenceTraining preferences{};
  EvolutionOptions evolution{};
  std::size_t episode_steps = 200;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  // Copies `seed` into every component seed.
  void propagate_seed();
  // Applies MANIC_SEED when it is set.
  void apply_environment();
  void validate() const;
  // FNV-1a of the canonical JSON dump, 16 hex digits.
  std::string hash() const;
};

}  // namespace manic
