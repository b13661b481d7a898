#include "manic/config.hpp"

#include <cstdlib>
#include <fstream>

#include "manic/binary_io.hpp"
#include "manic/error.hpp"

namespace manic {

namespace {

nlohmann::json topology_json(const ModelTopology& t) {
  return {{"transition_hidden", t.transition_hidden},
          {"decoder_hidden", t.decoder_hidden},
          {"encoder_hidden", t.encoder_hidden},
          {"with_encoder", t.with_encoder},
          {"encoder_downsample", t.encoder_downsample}};
}

ModelTopology topology_from(const nlohmann::json& j, ModelTopology t) {
  t.transition_hidden = j.value("transition_hidden", t.transition_hidden);
  t.decoder_hidden = j.value("decoder_hidden", t.decoder_hidden);
  t.encoder_hidden = j.value("encoder_hidden", t.encoder_hidden);
  t.with_encoder = j.value("with_encoder", t.with_encoder);
  t.encoder_downsample = j.value("encoder_downsample", t.encoder_downsample);
  return t;
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  return {
      {"environment",
       {{"kind", environment.kind},
        {"transition_noise", environment.noise.transition},
        {"observation_noise", environment.noise.observation},
        {"map_seed", environment.map_seed}}},
      {"walk_steps", walk_steps},
      {"nldr",
       {{"dims", nldr.dims}, {"neighbors", nldr.neighbors}, {"exact_limit", nldr.exact_limit}, {"landmarks", nldr.landmarks}}},
      {"train",
       {{"epochs", train.epochs},
        {"rate", train.rate},
        {"decay", train.decay},
        {"pixels_per_frame", train.pixels_per_frame},
        {"holdout", train.holdout},
        {"seed", train.seed},
        {"topology", topology_json(train.topology)}}},
      {"refine_epochs", refine_epochs},
      {"refine_rate", refine_rate},
      {"contentment_hidden", contentment_hidden},
      {"agent", agent.to_json()},
      {"preferences",
       {{"epochs", preferences.epochs},
        {"rate", preferences.rate},
        {"heldout_fraction", preferences.heldout_fraction},
        {"seed", preferences.seed}}},
      {"evolution",
       {{"population", evolution.population},
        {"generations", evolution.generations},
        {"sigma", evolution.sigma},
        {"hidden", evolution.hidden},
        {"seed", evolution.seed}}},
      {"episode_steps", episode_steps},
      {"seed", seed},
  };
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::kConfig, "config must be a JSON object");
  RunConfig c;
  try {
    if (j.contains("seed")) {
      c.seed = j.at("seed").get<std::uint64_t>();
      c.propagate_seed();
    }
    if (j.contains("environment")) {
      const auto& e = j.at("environment");
      c.environment.kind = e.value("kind", c.environment.kind);
      c.environment.noise.transition = e.value("transition_noise", c.environment.noise.transition);
      c.environment.noise.observation = e.value("observation_noise", c.environment.noise.observation);
      c.environment.map_seed = e.value("map_seed", c.environment.map_seed);
    }
    c.walk_steps = j.value("walk_steps", c.walk_steps);
    if (j.contains("nldr")) {
      const auto& n = j.at("nldr");
      c.nldr.dims = n.value("dims", c.nldr.dims);
      c.nldr.neighbors = n.value("neighbors", c.nldr.neighbors);
      c.nldr.exact_limit = n.value("exact_limit", c.nldr.exact_limit);
      c.nldr.landmarks = n.value("landmarks", c.nldr.landmarks);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.rate = t.value("rate", c.train.rate);
      c.train.decay = t.value("decay", c.train.decay);
      c.train.pixels_per_frame = t.value("pixels_per_frame", c.train.pixels_per_frame);
      c.train.holdout = t.value("holdout", c.train.holdout);
      c.train.seed = t.value("seed", c.train.seed);
      if (t.contains("topology")) c.train.topology = topology_from(t.at("topology"), c.train.topology);
    }
    c.refine_epochs = j.value("refine_epochs", c.refine_epochs);
    c.refine_rate = j.value("refine_rate", c.refine_rate);
    c.contentment_hidden = j.value("contentment_hidden", c.contentment_hidden);
    if (j.contains("agent")) {
      nlohmann::json a = c.agent.to_json();
      a.merge_patch(j.at("agent"));
      c.agent = AgentConfig::from_json(a);
    }
    if (j.contains("preferences")) {
      const auto& p = j.at("preferences");
      c.preferences.epochs = p.value("epochs", c.preferences.epochs);
      c.preferences.rate = p.value("rate", c.preferences.rate);
      c.preferences.heldout_fraction = p.value("heldout_fraction", c.preferences.heldout_fraction);
      c.preferences.seed = p.value("seed", c.preferences.seed);
    }
    if (j.contains("evolution")) {
      const auto& e = j.at("evolution");
      c.evolution.population = e.value("population", c.evolution.population);
      c.evolution.generations = e.value("generations", c.evolution.generations);
      c.evolution.sigma = e.value("sigma", c.evolution.sigma);
      c.evolution.hidden = e.value("hidden", c.evolution.hidden);
      c.evolution.seed = e.value("seed", c.evolution.seed);
    }
    c.episode_steps = j.value("episode_steps", c.episode_steps);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, std::string("bad config value: ") + e.what());
  }
  c.agent.belief_dims = c.nldr.dims;
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kConfig, "config is not valid JSON: " + std::string(e.what()));
  }
  return from_json(j);
}

void RunConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  nlohmann::json j = to_json();
  j["config_hash"] = hash();
  out << j.dump(2) << '\n';
}

void RunConfig::propagate_seed() {
  train.seed = seed;
  agent.seed = seed;
  preferences.seed = seed;
  evolution.seed = seed;
}

void RunConfig::apply_environment() {
  const char* s = std::getenv("MANIC_SEED");
  if (s == nullptr || *s == '\0') return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s, &end, 10);
  require(end != nullptr && *end == '\0', ErrorKind::kConfig, "MANIC_SEED must be an unsigned integer");
  seed = v;
  propagate_seed();
}

void RunConfig::validate() const {
  require(walk_steps >= 2, ErrorKind::kConfig, "walk_steps must be at least 2");
  require(nldr.dims >= 1, ErrorKind::kConfig, "nldr.dims must be positive");
  require(nldr.neighbors >= 2, ErrorKind::kConfig, "nldr.neighbors must be at least 2");
  require(train.epochs >= 1 && train.rate > 0.0, ErrorKind::kConfig, "train epochs and rate must be positive");
  require(refine_rate > 0.0, ErrorKind::kConfig, "refine_rate must be positive");
  require(episode_steps >= 1, ErrorKind::kConfig, "episode_steps must be positive");
  agent.validate();
}

std::string RunConfig::hash() const {
  const std::string text = to_json().dump();
  io::Fnv1a h;
  h.update(text.data(), text.size());
  return io::hex64(h.digest());
}

}  // namespace manic
