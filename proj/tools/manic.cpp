#include <fcntl.h>
#include <unistd.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "manic/agent.hpp"
#include "manic/binary_io.hpp"
#include "manic/bootstrap.hpp"
#include "manic/config.hpp"
#include "manic/contentment.hpp"
#include "manic/error.hpp"
#include "manic/evaluation.hpp"
#include "manic/metrics.hpp"
#include "manic/teacher.hpp"

namespace fs = std::filesystem;
using namespace manic;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDiverged:
    case ErrorKind::kNumeric: return kExitRuntime;
    default: return kExitUsage;
  }
}

// Exclusive lock on an output directory for the lifetime of the object.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".manic.lock") {
    fs::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    require(fd_ >= 0, ErrorKind::kConflict, "output directory is locked by another run: " + path_.string());
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
  }
  ~DirLock() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

fs::path lock_dir_for(const fs::path& out) {
  const fs::path parent = out.parent_path();
  return parent.empty() ? fs::path(".") : parent;
}

void refuse_overwrite(const fs::path& out, bool force) {
  require(force || !fs::exists(out), ErrorKind::kPrecondition, out.string() + " exists; pass --force to overwrite");
}

void require_file(const fs::path& p, const std::string& what) {
  require(fs::exists(p), ErrorKind::kNotFound, what + " not found: " + p.string());
}

// Writes to a temporary sibling, then renames, so failures leave no partial output.
template <typename Fn>
void write_atomically(const fs::path& out, Fn&& write) {
  const fs::path tmp = out.string() + ".tmp";
  try {
    write(tmp);
    fs::rename(tmp, out);
  } catch (...) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw;
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  cfg.apply_environment();
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.propagate_seed();
  }
  cfg.validate();
  return cfg;
}

ContentmentModel load_or_create_h(const std::string& path, const RunConfig& cfg) {
  if (!path.empty()) {
    require_file(path, "contentment model");
    return ContentmentModel(Approximator::load_file(path));
  }
  return ContentmentModel::create(cfg.nldr.dims, cfg.contentment_hidden, cfg.seed);
}

void print_r2(const std::vector<double>& r2) {
  std::cout << "R2 per true dimension:";
  for (double v : r2) std::printf(" %.4f", v);
  std::cout << '\n';
}

// ---------------------------------------------------------------- commands

int cmd_collect(const Common& c, std::size_t steps, const fs::path& out) {
  RunConfig cfg = resolve(c);
  if (steps > 0) cfg.walk_steps = steps;
  require(cfg.walk_steps >= 2, ErrorKind::kPrecondition, "--steps must be at least 2");
  DirLock lock(lock_dir_for(out));
  refuse_overwrite(out, c.force);
  auto env = make_environment(cfg.environment);
  WalkDataset ds = collect_random_walk(*env, cfg.walk_steps, cfg.seed);
  write_atomically(out, [&](const fs::path& tmp) { ds.save(tmp); });
  cfg.save(out.string() + ".config.json");
  std::cout << "collected " << ds.size() << " frames of " << ds.frame.width << "x" << ds.frame.height << "x"
            << ds.frame.channels << " from " << cfg.environment.kind << " into " << out.string() << '\n';
  return 0;
}

int cmd_bootstrap(const Common& c, const fs::path& in, std::size_t dims, std::size_t k, const fs::path& out) {
  RunConfig cfg = resolve(c);
  if (dims > 0) cfg.nldr.dims = dims;
  if (k > 0) cfg.nldr.neighbors = k;
  require_file(in, "dataset");
  DirLock lock(lock_dir_for(out));
  refuse_overwrite(out, c.force);
  WalkDataset ds = WalkDataset::load(in);
  BeliefEstimates be = estimate_beliefs(ds, cfg.nldr);
  write_atomically(out, [&](const fs::path& tmp) { be.save(tmp); });
  nlohmann::json report{{"frames", ds.size()}, {"dims", be.dims()}, {"neighbors", cfg.nldr.neighbors}};
  std::cout << "estimated " << be.dims() << "-D beliefs for " << ds.size() << " frames\n";
  std::vector<double> index(ds.size());
  for (std::size_t t = 0; t < ds.size(); ++t) index[t] = static_cast<double>(t);
  std::vector<double> first(ds.size());
  for (std::size_t t = 0; t < ds.size(); ++t) first[t] = be.beliefs[t][0];
  const double rho_time = spearman(first, index);
  report["spearman_dim0_vs_time"] = rho_time;
  std::printf("Spearman(belief[0], time) = %.4f\n", rho_time);
  if (ds.has_true_states()) {
    auto r2 = affine_r2(be.beliefs, ds.true_states);
    report["affine_r2"] = r2;
    print_r2(r2);
    if (be.dims() == 1) {
      std::vector<double> truth(ds.size());
      for (std::size_t t = 0; t < ds.size(); ++t) truth[t] = ds.true_states[t][0];
      const double rho = spearman(first, truth);
      report["spearman_dim0_vs_state"] = rho;
      std::printf("Spearman(belief[0], state[0]) = %.4f (%s)\n", rho, std::abs(rho) > 0.999 ? "monotone" : "not monotone");
    }
  }
  report["config_hash"] = cfg.hash();
  write_json(out.string() + ".report.json", report);
  return 0;
}

int cmd_pretrain(const Common& c, const fs::path& data, const fs::path& beliefs, const fs::path& out,
                 std::size_t epochs, std::optional<std::size_t> refine_epochs) {
  RunConfig cfg = resolve(c);
  if (epochs > 0) cfg.train.epochs = epochs;
  if (refine_epochs) cfg.refine_epochs = *refine_epochs;
  require_file(data, "dataset");
  require_file(beliefs, "belief estimates");
  DirLock lock(out);
  require(c.force || !fs::exists(out / "learning_system.json"), ErrorKind::kPrecondition,
          out.string() + " already holds a model; pass --force to overwrite");
  WalkDataset ds = WalkDataset::load(data);
  BeliefEstimates be = BeliefEstimates::load(beliefs);
  PretrainResult result = pretrain(ds, be, cfg.train);
  nlohmann::json log{{"pretrain", result.log.to_json()}};
  std::printf("pretrain: held-out 1-step RMS");
  for (double r : result.log.heldout_transition_rms) std::printf(" %.4f", r);
  std::printf(", decoder full-frame MSE %.5f\n", result.log.decoder_full_frame_mse);
  if (cfg.refine_epochs > 0) {
    TrainConfig refine = cfg.train;
    refine.epochs = cfg.refine_epochs;
    refine.rate = cfg.refine_rate;
    TrainLog rl = refine_models(result.system, ds, be, refine);
    log["refine"] = rl.to_json();
    std::printf("refine:   held-out 1-step RMS");
    for (double r : rl.heldout_transition_rms) std::printf(" %.4f", r);
    std::printf(", decoder full-frame MSE %.5f\n", rl.decoder_full_frame_mse);
  }
  result.system.save(out);
  log["config_hash"] = cfg.hash();
  write_json(out / "train_log.json", log);
  cfg.save(out / "config.json");
  std::cout << "saved learning system to " << out.string() << '\n';
  return 0;
}

int cmd_run(const Common& c, const fs::path& model, const std::string& h_path, std::size_t steps,
            std::size_t episodes, const fs::path& out, bool inline_frames) {
  RunConfig cfg = resolve(c);
  require(steps >= 1, ErrorKind::kPrecondition, "--steps must be at least 1");
  require(episodes >= 1, ErrorKind::kPrecondition, "--episodes must be at least 1");
  require_file(model / "learning_system.json", "learning system");
  DirLock lock(out);
  require(c.force || !fs::exists(out / "summary.json"), ErrorKind::kPrecondition,
          out.string() + " already holds a run; pass --force to overwrite");
  LearningSystem ls = LearningSystem::load(model);
  ContentmentModel cm = load_or_create_h(h_path, cfg);
  cfg.agent.belief_dims = ls.belief_dims();
  auto env = make_environment(cfg.environment);
  ManicAgent agent(ls, cm, cfg.agent);
  nlohmann::json summary{{"episodes", nlohmann::json::array()}, {"config_hash", cfg.hash()}};
  std::size_t successes = 0;
  for (std::size_t e = 0; e < episodes; ++e) {
    env->reset(cfg.seed + e);
    EpisodeTrace trace = run_episode(agent, *env, steps);
    trace.seed = cfg.seed + e;
    const std::string name = "episode_" + std::to_string(e);
    trace.save(out / (name + ".jsonl"), inline_frames ? fs::path{} : out / (name + "_frames"));
    double err = 0.0;
    for (const auto& s : trace.steps) err += s.error_norm;
    err /= static_cast<double>(trace.size());
    successes += trace.success ? 1 : 0;
    summary["episodes"].push_back(
        {{"seed", trace.seed}, {"steps", trace.size()}, {"done", trace.done}, {"success", trace.success}, {"mean_error_norm", err}});
    std::printf("episode %zu: %zu steps, %s, mean error norm %.4f\n", e, trace.size(),
                trace.success ? "success" : (trace.done ? "failed" : "not done"), err);
  }
  summary["success_rate"] = static_cast<double>(successes) / static_cast<double>(episodes);
  write_json(out / "summary.json", summary);
  cfg.save(out / "config.json");
  return 0;
}

int cmd_eval(const Common& c, const fs::path& model, const fs::path& data, const fs::path& beliefs,
             const fs::path& trace, std::size_t starts, std::size_t horizon, const fs::path& out) {
  RunConfig cfg = resolve(c);
  nlohmann::json metrics{{"config_hash", cfg.hash()}};
  bool did_something = false;
  if (!beliefs.empty()) {
    require_file(data, "dataset");
    require_file(beliefs, "belief estimates");
    WalkDataset ds = WalkDataset::load(data);
    BeliefEstimates be = BeliefEstimates::load(beliefs);
    require(ds.has_true_states(), ErrorKind::kPrecondition, "dataset has no ground-truth states");
    auto r2 = affine_r2(be.beliefs, ds.true_states);
    metrics["affine_r2"] = r2;
    print_r2(r2);
    did_something = true;
  }
  if (!model.empty()) {
    require_file(data, "dataset");
    require_file(model / "learning_system.json", "learning system");
    LearningSystem ls = LearningSystem::load(model);
    WalkDataset ds = WalkDataset::load(data);
    auto env = make_environment(cfg.environment);
    OpenLoopOptions opts;
    opts.horizon = horizon;
    opts.seed = cfg.seed;
    OpenLoopReport report = evaluate_open_loop(ls, *env, heldout_start_states(ds, cfg.train.holdout, starts), opts);
    metrics["open_loop"] = report.to_json();
    std::printf("%6s %12s %12s\n", "step", "model_mae", "persistence");
    for (std::size_t k = 0; k < horizon; ++k) {
      if (k == 0 || (k + 1) % 10 == 0) std::printf("%6zu %12.5f %12.5f\n", k + 1, report.model_by_step[k], report.persistence_by_step[k]);
    }
    std::printf("mean   %12.5f %12.5f  ratio %.4f\n", report.model_mae, report.persistence_mae, report.ratio);
    did_something = true;
  }
  if (!trace.empty()) {
    require_file(trace, "trace");
    std::ifstream in(trace);
    std::string line;
    std::getline(in, line);
    nlohmann::json header = nlohmann::json::parse(line);
    double err = 0.0;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      err += nlohmann::json::parse(line).at("error_norm").get<double>();
      ++n;
    }
    metrics["trace"] = {{"steps", n}, {"success", header.value("success", false)}, {"mean_error_norm", n ? err / n : 0.0}};
    std::printf("trace: %zu steps, success %s, mean error norm %.4f\n", n, header.value("success", false) ? "yes" : "no",
                n ? err / static_cast<double>(n) : 0.0);
    did_something = true;
  }
  require(did_something, ErrorKind::kPrecondition, "nothing to evaluate: pass --beliefs, --model or --trace");
  if (!out.empty()) write_json(out, metrics);
  return 0;
}

TeacherServer* g_server = nullptr;

void on_signal(int) {
  if (g_server != nullptr) g_server->stop();
}

int cmd_teach(const Common& c, const fs::path& model, const std::string& h_path, const fs::path& store_dir,
              const fs::path& static_dir, int port, std::size_t candidates) {
  RunConfig cfg = resolve(c);
  require(port > 0 && port < 65536, ErrorKind::kPrecondition, "--port must be in 1..65535");
  require_file(model / "learning_system.json", "learning system");
  auto ls = std::make_shared<const LearningSystem>(LearningSystem::load(model));
  ContentmentModel cm = load_or_create_h(h_path, cfg);
  auto store = std::make_shared<PreferenceStore>(store_dir);
  if (candidates > 0) {
    cfg.agent.belief_dims = ls->belief_dims();
    auto env = make_environment(cfg.environment);
    env->reset(cfg.seed);
    ManicAgent agent(*ls, cm, cfg.agent);
    agent.agent_step(env->render());
    auto bundles = generate_candidates(agent, candidates, cfg.seed, now_ms());
    std::cout << "published " << store->add_candidates(bundles) << " new candidates\n";
  }
  TeacherService service(store, ls, cm, cfg.preferences);
  service.set_agent_status({to_string(cfg.agent.mode), 0});
  TeacherServer server(service, static_dir);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "teacher service listening on http://127.0.0.1:" << port << '\n' << std::flush;
  const bool ok = server.listen("0.0.0.0", port);
  g_server = nullptr;
  if (!ok) {
    std::cerr << "error: could not listen on port " << port << '\n';
    return kExitRuntime;
  }
  if (fs::exists(store_dir / "preferences.jsonl")) {
    ContentmentModel current = *service.contentment();
    current.model().save_file(store_dir / "contentment.mncm");
  }
  return 0;
}

int cmd_evolve(const Common& c, const fs::path& model, const fs::path& out, std::size_t episodes, std::size_t steps) {
  RunConfig cfg = resolve(c);
  require(cfg.environment.kind == "warehouse", ErrorKind::kPrecondition, "evolve scores warehouse episodes only");
  require_file(model / "learning_system.json", "learning system");
  DirLock lock(lock_dir_for(out));
  refuse_overwrite(out, c.force);
  LearningSystem ls = LearningSystem::load(model);
  cfg.agent.belief_dims = ls.belief_dims();
  auto env = make_environment(cfg.environment);
  auto fitness = closed_loop_fitness(ls, *env, cfg.agent, episodes, steps, cfg.seed, warehouse_score);
  EvolutionResult result = evolve_contentment(ls.belief_dims(), fitness, cfg.evolution);
  for (std::size_t g = 0; g < result.best_per_generation.size(); ++g)
    std::printf("generation %zu: best fitness %.4f\n", g, result.best_per_generation[g]);
  write_atomically(out, [&](const fs::path& tmp) { result.best.model().save_file(tmp); });
  write_json(out.string() + ".report.json",
             {{"best_fitness", result.best_fitness}, {"best_per_generation", result.best_per_generation}, {"config_hash", cfg.hash()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"manic: collect, bootstrap, pretrain, run, eval, teach and evolve"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&common](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_flag("--force", common.force, "overwrite existing outputs");
  };

  std::size_t steps = 0, dims = 0, k = 0, epochs = 0, episodes = 1, starts = 10, horizon = 100, n_candidates = 5;
  std::optional<std::size_t> refine_epochs;
  std::string in, out, data, beliefs, model, h_path, trace, store_dir = "teacher_store", static_dir;
  bool inline_frames = false;
  int port = kDefaultTeacherPort;

  auto* collect = app.add_subcommand("collect", "random-walk observations into an MNC1 dataset");
  add_common(collect);
  collect->add_option("--steps", steps, "walk length (frames)");
  collect->add_option("--out", out, "dataset file")->required();

  auto* bootstrap = app.add_subcommand("bootstrap", "estimate initial beliefs by NLDR");
  add_common(bootstrap);
  bootstrap->add_option("--in", in, "dataset file")->required();
  bootstrap->add_option("--dims", dims, "belief dimensions");
  bootstrap->add_option("--k", k, "nearest neighbours");
  bootstrap->add_option("--out", out, "beliefs file")->required();

  auto* pretrain_cmd = app.add_subcommand("pretrain", "train f, g and g+ from bootstrap beliefs");
  add_common(pretrain_cmd);
  pretrain_cmd->add_option("--data", data, "dataset file")->required();
  pretrain_cmd->add_option("--beliefs", beliefs, "beliefs file")->required();
  pretrain_cmd->add_option("--out", out, "model directory")->required();
  pretrain_cmd->add_option("--epochs", epochs, "pretraining epochs");
  pretrain_cmd->add_option("--refine-epochs", refine_epochs, "refinement epochs");

  auto* run = app.add_subcommand("run", "closed-loop episodes with the full agent");
  add_common(run);
  run->add_option("--model", model, "model directory")->required();
  run->add_option("--contentment", h_path, "contentment model file");
  run->add_option("--steps", steps, "steps per episode")->required();
  run->add_option("--episodes", episodes, "number of episodes");
  run->add_option("--out", out, "output directory")->required();
  run->add_flag("--inline-frames", inline_frames, "embed frames as base64 instead of PNG files");

  auto* eval = app.add_subcommand("eval", "manifold, open-loop and trace reports");
  add_common(eval);
  eval->add_option("--model", model, "model directory");
  eval->add_option("--data", data, "dataset file");
  eval->add_option("--beliefs", beliefs, "beliefs file");
  eval->add_option("--trace", trace, "episode trace file");
  eval->add_option("--starts", starts, "open-loop start count");
  eval->add_option("--horizon", horizon, "open-loop horizon");
  eval->add_option("--out", out, "metrics JSON file");

  auto* teach = app.add_subcommand("teach", "serve candidates and collect rankings over HTTP");
  add_common(teach);
  teach->add_option("--model", model, "model directory")->required();
  teach->add_option("--contentment", h_path, "contentment model file");
  teach->add_option("--port", port, "listen port");
  teach->add_option("--store-dir", store_dir, "preference store directory");
  teach->add_option("--static-dir", static_dir, "teacher UI build to serve at /");
  teach->add_option("--candidates", n_candidates, "candidates to publish at start (0 for none)");

  auto* evolve = app.add_subcommand("evolve", "evolve a contentment model from closed-loop episodes");
  add_common(evolve);
  evolve->add_option("--model", model, "model directory")->required();
  evolve->add_option("--out", out, "contentment model file")->required();
  evolve->add_option("--episodes", episodes, "episodes per fitness evaluation");
  evolve->add_option("--steps", steps, "steps per episode");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*collect) return cmd_collect(common, steps, out);
    if (*bootstrap) return cmd_bootstrap(common, in, dims, k, out);
    if (*pretrain_cmd) return cmd_pretrain(common, data, beliefs, out, epochs, refine_epochs);
    if (*run) return cmd_run(common, model, h_path, steps, episodes, out, inline_frames);
    if (*eval) return cmd_eval(common, model, data, beliefs, trace, starts, horizon, out);
    if (*teach) return cmd_teach(common, model, h_path, store_dir, static_dir, port, n_candidates);
    if (*evolve) return cmd_evolve(common, model, out, episodes, steps == 0 ? 200 : steps);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
