#include "manic/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <queue>

#include <Eigen/Eigenvalues>

#include "manic/binary_io.hpp"
#include "manic/error.hpp"

namespace manic {

namespace {

constexpr std::string_view kDatasetMagic = "MNC1";
constexpr std::string_view kBeliefMagic = "MNCB";
constexpr std::uint32_t kFormatVersion = 1;

struct Edge {
  std::size_t to;
  double weight;
};

using Graph = std::vector<std::vector<Edge>>;

Mat pairwise_distances(const std::vector<Observation>& frames) {
  const auto n = static_cast<Eigen::Index>(frames.size());
  const auto dim = frames.front().pixels.size();
  Mat x(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = frames[static_cast<std::size_t>(i)].pixels.transpose();
  // Centre first; distances are unchanged and the Gram trick loses less precision.
  x.rowwise() -= x.colwise().mean();
  Mat gram = Mat::Zero(n, n);
  gram.selfadjointView<Eigen::Lower>().rankUpdate(x);
  gram.triangularView<Eigen::StrictlyUpper>() = gram.transpose();
  const Vec norms = gram.diagonal();
  Mat dist(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      dist(i, j) = i == j ? 0.0 : std::sqrt(std::max(0.0, norms[i] + norms[j] - 2.0 * gram(i, j)));
    }
  }
  return dist;
}

Graph neighbour_graph(const Mat& dist, std::size_t k) {
  const auto n = static_cast<std::size_t>(dist.rows());
  std::vector<std::vector<char>> linked(n);
  Graph graph(n);
  auto add = [&](std::size_t a, std::size_t b) {
    if (a == b) return;
    for (const auto& e : graph[a]) {
      if (e.to == b) return;
    }
    const double w = dist(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    graph[a].push_back({b, w});
    graph[b].push_back({a, w});
  };
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::erase(order, i);
    const std::size_t kk = std::min(k, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(kk), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double da = dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(a));
                        const double db = dist(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b));
                        return da < db || (da == db && a < b);
                      });
    for (std::size_t m = 0; m < kk; ++m) add(i, order[m]);
  }
  for (std::size_t t = 0; t + 1 < n; ++t) add(t, t + 1);
  return graph;
}

std::vector<double> shortest_paths(const Graph& graph, std::size_t source) {
  std::vector<double> dist(graph.size(), std::numeric_limits<double>::infinity());
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  dist[source] = 0.0;
  queue.push({0.0, source});
  while (!queue.empty()) {
    auto [d, u] = queue.top();
    queue.pop();
    if (d > dist[u]) continue;
    for (const auto& e : graph[u]) {
      const double nd = d + e.weight;
      if (nd < dist[e.to]) {
        dist[e.to] = nd;
        queue.push({nd, e.to});
      }
    }
  }
  return dist;
}

// Top `dims` eigenpairs of a symmetric matrix, largest first; negative
// eigenvalues clipped to zero.
std::pair<Mat, Vec> top_eigen(const Mat& b, std::size_t dims) {
  Eigen::SelfAdjointEigenSolver<Mat> solver(b);
  require(solver.info() == Eigen::Success, ErrorKind::kNumeric, "eigendecomposition failed");
  const Eigen::Index n = b.rows();
  const auto d = static_cast<Eigen::Index>(dims);
  Mat vecs(n, d);
  Vec vals(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    const Eigen::Index src = n - 1 - k;
    vecs.col(k) = solver.eigenvectors().col(src);
    vals[k] = std::max(0.0, solver.eigenvalues()[src]);
  }
  return {vecs, vals};
}

Mat double_centre(const Mat& sq) {
  const Vec row_mean = sq.rowwise().mean();
  const Vec col_mean = sq.colwise().mean().transpose();
  const double mean = sq.mean();
  Mat b(sq.rows(), sq.cols());
  for (Eigen::Index j = 0; j < sq.cols(); ++j)
    for (Eigen::Index i = 0; i < sq.rows(); ++i) b(i, j) = -0.5 * (sq(i, j) - row_mean[i] - col_mean[j] + mean);
  return b;
}

Mat classical_mds(const Graph& graph, std::size_t dims) {
  const std::size_t n = graph.size();
  Mat sq(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t s = 0; s < n; ++s) {
    const auto d = shortest_paths(graph, s);
    for (std::size_t t = 0; t < n; ++t) sq(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) = d[t] * d[t];
  }
  sq = 0.5 * (sq + sq.transpose()).eval();
  auto [vecs, vals] = top_eigen(double_centre(sq), dims);
  return vecs * vals.cwiseSqrt().asDiagonal();
}

Mat landmark_mds(const Graph& graph, std::size_t dims, std::size_t landmark_count) {
  const std::size_t n = graph.size();
  const std::size_t m = std::min(landmark_count, n);
  std::vector<std::size_t> landmarks(m);
  for (std::size_t i = 0; i < m; ++i) landmarks[i] = i * (n - 1) / std::max<std::size_t>(1, m - 1);
  Mat sq(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  for (std::size_t l = 0; l < m; ++l) {
    const auto d = shortest_paths(graph, landmarks[l]);
    for (std::size_t t = 0; t < n; ++t) sq(static_cast<Eigen::Index>(l), static_cast<Eigen::Index>(t)) = d[t] * d[t];
  }
  Mat sq_ll(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = 0; b < m; ++b)
      sq_ll(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) =
          sq(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(landmarks[b]));
  sq_ll = 0.5 * (sq_ll + sq_ll.transpose()).eval();
  auto [vecs, vals] = top_eigen(double_centre(sq_ll), dims);
  const Vec mean_sq = sq_ll.rowwise().mean();
  // Distance-based triangulation of every point against the landmarks.
  Mat pinv(static_cast<Eigen::Index>(dims), static_cast<Eigen::Index>(m));
  for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(dims); ++k) {
    if (vals[k] > 0.0) {
      pinv.row(k) = (vecs.col(k) / std::sqrt(vals[k])).transpose();
    } else {
      pinv.row(k).setZero();
    }
  }
  Mat coords(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dims));
  for (Eigen::Index t = 0; t < static_cast<Eigen::Index>(n); ++t) {
    coords.row(t) = (-0.5 * pinv * (sq.col(t) - mean_sq)).transpose();
  }
  return coords;
}

std::vector<Belief> normalise(const Mat& coords) {
  const Eigen::Index n = coords.rows();
  const Eigen::Index d = coords.cols();
  Mat y = coords;
  const double mean_t = 0.5 * static_cast<double>(n - 1);
  for (Eigen::Index k = 0; k < d; ++k) {
    // Orient each axis so it correlates non-negatively with time.
    double dot = 0.0;
    for (Eigen::Index t = 0; t < n; ++t) dot += y(t, k) * (static_cast<double>(t) - mean_t);
    if (dot < 0.0) y.col(k) = -y.col(k);
    const double lo = y.col(k).minCoeff();
    const double hi = y.col(k).maxCoeff();
    if (hi - lo > 0.0) {
      y.col(k) = ((y.col(k).array() - lo) / (hi - lo) * 2.0 - 1.0).matrix();
    } else {
      y.col(k).setZero();
    }
  }
  std::vector<Belief> out(static_cast<std::size_t>(n));
  for (Eigen::Index t = 0; t < n; ++t) out[static_cast<std::size_t>(t)] = y.row(t).transpose();
  return out;
}

void write_f32_vec(std::ostream& out, const Vec& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) io::write<float>(out, static_cast<float>(v[i]));
}

Vec read_f32_vec(std::istream& in, std::size_t n) {
  Vec v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = io::read<float>(in);
  return v;
}

}  // namespace

void WalkDataset::validate() const {
  require(observations.size() == actions.size() + 1, ErrorKind::kShape, "walk needs |observations| = |actions| + 1");
  require(true_states.empty() || true_states.size() == observations.size(), ErrorKind::kShape,
          "true states must align with observations");
  for (const auto& x : observations) require(x.shape == frame, ErrorKind::kShape, "frame shape mismatch in walk");
  for (const auto& u : actions)
    require(static_cast<std::size_t>(u.size()) == action_dims, ErrorKind::kShape, "action dims mismatch in walk");
}

void WalkDataset::save(const std::filesystem::path& path) const {
  validate();
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  io::write_magic(out, kDatasetMagic);
  io::write<std::uint32_t>(out, kFormatVersion);
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(observations.size()));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(frame.width));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(frame.height));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(frame.channels));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(action_dims));
  io::write<std::uint8_t>(out, has_true_states() ? 1 : 0);
  const std::uint32_t state_dims = has_true_states() ? static_cast<std::uint32_t>(true_states.front().size()) : 0;
  io::write<std::uint32_t>(out, state_dims);
  for (const auto& x : observations) write_f32_vec(out, x.pixels);
  for (const auto& u : actions) write_f32_vec(out, u);
  for (const auto& s : true_states) write_f32_vec(out, s);
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed for " + path.string());
}

WalkDataset WalkDataset::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  io::expect_magic(in, kDatasetMagic);
  const auto version = io::read<std::uint32_t>(in);
  require(version == kFormatVersion, ErrorKind::kFormat, "unsupported dataset version");
  WalkDataset ds;
  const auto t = io::read<std::uint32_t>(in);
  require(t >= 1, ErrorKind::kFormat, "dataset has no frames");
  ds.frame.width = io::read<std::uint32_t>(in);
  ds.frame.height = io::read<std::uint32_t>(in);
  ds.frame.channels = io::read<std::uint32_t>(in);
  ds.action_dims = io::read<std::uint32_t>(in);
  const auto flags = io::read<std::uint8_t>(in);
  const auto state_dims = io::read<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < t; ++i) ds.observations.emplace_back(ds.frame, read_f32_vec(in, ds.frame.size()));
  for (std::uint32_t i = 0; i + 1 < t; ++i) ds.actions.push_back(read_f32_vec(in, ds.action_dims));
  if ((flags & 1U) != 0U) {
    for (std::uint32_t i = 0; i < t; ++i) ds.true_states.push_back(read_f32_vec(in, state_dims));
  }
  return ds;
}

void BeliefEstimates::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  io::write_magic(out, kBeliefMagic);
  io::write<std::uint32_t>(out, kFormatVersion);
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(beliefs.size()));
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(dims()));
  for (const auto& v : beliefs)
    for (Eigen::Index i = 0; i < v.size(); ++i) io::write<double>(out, v[i]);
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed for " + path.string());
}

BeliefEstimates BeliefEstimates::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  io::expect_magic(in, kBeliefMagic);
  require(io::read<std::uint32_t>(in) == kFormatVersion, ErrorKind::kFormat, "unsupported belief file version");
  const auto t = io::read<std::uint32_t>(in);
  const auto d = io::read<std::uint32_t>(in);
  BeliefEstimates be;
  for (std::uint32_t i = 0; i < t; ++i) {
    Belief v(d);
    for (std::uint32_t k = 0; k < d; ++k) v[k] = io::read<double>(in);
    be.beliefs.push_back(std::move(v));
  }
  return be;
}

WalkDataset collect_random_walk(Environment& env, std::size_t steps, std::uint64_t seed) {
  require(steps >= 2, ErrorKind::kPrecondition, "random walk needs steps >= 2");
  WalkDataset ds;
  ds.frame = env.frame_shape();
  const ActionSpace space = env.action_space();
  ds.action_dims = space.dims;
  ds.seed = seed;
  env.reset(seed);
  Rng action_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  ds.observations.push_back(env.render());
  ds.true_states.push_back(env.state());
  for (std::size_t t = 1; t < steps; ++t) {
    Action u = space.sample(action_rng);
    env.step(u);
    ds.actions.push_back(std::move(u));
    ds.observations.push_back(env.render());
    ds.true_states.push_back(env.state());
  }
  return ds;
}

BeliefEstimates estimate_beliefs(const std::vector<Observation>& frames, const NldrOptions& options) {
  require(options.dims >= 1, ErrorKind::kPrecondition, "NLDR needs dims >= 1");
  require(options.neighbors >= 2, ErrorKind::kPrecondition, "NLDR needs k >= 2");
  require(frames.size() > options.neighbors, ErrorKind::kPrecondition, "NLDR needs more frames than neighbours");
  require(frames.size() > options.dims, ErrorKind::kPrecondition, "NLDR needs more frames than dims");
  const Graph graph = neighbour_graph(pairwise_distances(frames), options.neighbors);
  const Mat coords = frames.size() > options.exact_limit ? landmark_mds(graph, options.dims, options.landmarks)
                                                         : classical_mds(graph, options.dims);
  return {normalise(coords)};
}

BeliefEstimates estimate_beliefs(const WalkDataset& ds, const NldrOptions& options) {
  return estimate_beliefs(ds.observations, options);
}

nlohmann::json TrainLog::to_json() const {
  auto model = [](const ModelLog& m) {
    return nlohmann::json{{"epoch_loss", m.epoch_loss}, {"final_rate", m.final_rate}};
  };
  return {{"transition", model(transition)},
          {"decoder", model(decoder)},
          {"encoder", model(encoder)},
          {"train_frames", train_frames},
          {"heldout_transition_rms", heldout_transition_rms},
          {"decoder_full_frame_mse", decoder_full_frame_mse}};
}

namespace {

struct Split {
  std::size_t train_frames;
};

Split split_walk(const WalkDataset& ds, double holdout) {
  require(holdout >= 0.0 && holdout < 1.0, ErrorKind::kConfig, "holdout fraction must be in [0, 1)");
  const auto t = ds.size();
  const auto held = static_cast<std::size_t>(std::floor(holdout * static_cast<double>(t)));
  return {std::max<std::size_t>(2, t - held)};
}

// Trains one model for one epoch over `count` shuffled samples; returns mean loss.
template <typename Sample>
double run_epoch(Approximator& model, std::size_t count, Rng& rng, double rate, Sample&& sample) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  double total = 0.0;
  Vec in;
  Vec target;
  for (auto i : order) {
    sample(i, in, target);
    total += model.train_step(in, target, rate);
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

void train_transition(LearningSystem& ls, const WalkDataset& ds, const BeliefEstimates& be, std::size_t train_frames,
                      const TrainConfig& config, Rng& rng, ModelLog& log) {
  double rate = config.rate;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const double loss = run_epoch(ls.transition(), train_frames - 1, rng, rate, [&](std::size_t t, Vec& in, Vec& out) {
      in = ls.transition_input(be.beliefs[t], ds.actions[t]);
      out = be.beliefs[t + 1];
    });
    log.epoch_loss.push_back(loss);
    if (loss > previous) rate *= config.decay;
    previous = loss;
  }
  log.final_rate = rate;
}

void train_decoder(LearningSystem& ls, const WalkDataset& ds, const BeliefEstimates& be, std::size_t train_frames,
                   const TrainConfig& config, Rng& rng, ModelLog& log) {
  const FrameShape frame = ds.frame;
  const std::size_t pixels = frame.width * frame.height;
  const std::size_t per_frame = std::min(config.pixels_per_frame, pixels);
  const auto c = static_cast<Eigen::Index>(frame.channels);
  std::uniform_int_distribution<std::size_t> pick(0, pixels - 1);
  std::vector<std::pair<std::size_t, std::size_t>> samples(train_frames * per_frame);
  double rate = config.rate;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < config.epochs; ++e) {
    for (std::size_t t = 0; t < train_frames; ++t)
      for (std::size_t s = 0; s < per_frame; ++s) samples[t * per_frame + s] = {t, pick(rng)};
    const double loss = run_epoch(ls.decoder(), samples.size(), rng, rate, [&](std::size_t i, Vec& in, Vec& out) {
      const auto [t, p] = samples[i];
      in = ls.decoder_input(be.beliefs[t], ls.pixel_x(p % frame.width), ls.pixel_y(p / frame.width));
      out = ds.observations[t].pixels.segment(static_cast<Eigen::Index>(p) * c, c);
    });
    log.epoch_loss.push_back(loss);
    if (loss > previous) rate *= config.decay;
    previous = loss;
  }
  log.final_rate = rate;
}

void train_encoder(LearningSystem& ls, const WalkDataset& ds, const BeliefEstimates& be, std::size_t train_frames,
                   const TrainConfig& config, Rng& rng, ModelLog& log) {
  std::vector<Vec> inputs;
  inputs.reserve(train_frames);
  for (std::size_t t = 0; t < train_frames; ++t) inputs.push_back(ls.encoder_input(ds.observations[t]));
  double rate = config.rate;
  double previous = std::numeric_limits<double>::infinity();
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const double loss = run_epoch(ls.encoder(), train_frames, rng, rate, [&](std::size_t t, Vec& in, Vec& out) {
      in = inputs[t];
      out = be.beliefs[t];
    });
    log.epoch_loss.push_back(loss);
    if (loss > previous) rate *= config.decay;
    previous = loss;
  }
  log.final_rate = rate;
}

void evaluate(const LearningSystem& ls, const WalkDataset& ds, const BeliefEstimates& be, std::size_t train_frames,
              TrainLog& log) {
  const std::size_t t_end = ds.size();
  const auto d = static_cast<Eigen::Index>(ls.belief_dims());
  Vec sq = Vec::Zero(d);
  std::size_t n = 0;
  const std::size_t first = train_frames > 0 ? train_frames - 1 : 0;
  for (std::size_t t = first; t + 1 < t_end; ++t) {
    const Vec err = ls.predict_transition(be.beliefs[t], ds.actions[t]) - be.beliefs[t + 1];
    sq += err.cwiseAbs2();
    ++n;
  }
  log.heldout_transition_rms.clear();
  for (Eigen::Index k = 0; k < d; ++k) log.heldout_transition_rms.push_back(n ? std::sqrt(sq[k] / n) : 0.0);
  double mse = 0.0;
  const std::size_t probes = std::min<std::size_t>(8, train_frames);
  for (std::size_t i = 0; i < probes; ++i) {
    const std::size_t t = i * train_frames / probes;
    mse += (ls.decode_frame(be.beliefs[t]).pixels - ds.observations[t].pixels).squaredNorm() /
           static_cast<double>(ds.frame.size());
  }
  log.decoder_full_frame_mse = probes ? mse / static_cast<double>(probes) : 0.0;
}

void check_alignment(const WalkDataset& ds, const BeliefEstimates& be) {
  ds.validate();
  require(be.beliefs.size() == ds.size(), ErrorKind::kShape, "belief estimates must align with the walk");
  require(ds.size() >= 2, ErrorKind::kPrecondition, "walk too short to train on");
}

}  // namespace

PretrainResult pretrain(const WalkDataset& ds, const BeliefEstimates& beliefs, const TrainConfig& config) {
  check_alignment(ds, beliefs);
  require(config.epochs >= 1, ErrorKind::kPrecondition, "pretrain needs epochs >= 1");
  const Split split = split_walk(ds, config.holdout);
  LearningSystem ls = LearningSystem::create(ds.frame, beliefs.dims(), ds.action_dims, config.topology, config.seed);
  TrainLog log;
  log.train_frames = split.train_frames;
  // Each model draws from its own stream so the three trainings are independent.
  Rng rng_f(config.seed * 3 + 11);
  Rng rng_g(config.seed * 3 + 12);
  Rng rng_e(config.seed * 3 + 13);
  train_transition(ls, ds, beliefs, split.train_frames, config, rng_f, log.transition);
  train_decoder(ls, ds, beliefs, split.train_frames, config, rng_g, log.decoder);
  if (ls.has_encoder()) train_encoder(ls, ds, beliefs, split.train_frames, config, rng_e, log.encoder);
  evaluate(ls, ds, beliefs, split.train_frames, log);
  return {std::move(ls), std::move(log)};
}

TrainLog refine_models(LearningSystem& ls, const WalkDataset& ds, const BeliefEstimates& beliefs,
                       const TrainConfig& config) {
  check_alignment(ds, beliefs);
  require(beliefs.dims() == ls.belief_dims(), ErrorKind::kShape, "belief dims do not match learning system");
  const Split split = split_walk(ds, config.holdout);
  TrainLog log;
  log.train_frames = split.train_frames;
  Rng rng_f(config.seed * 5 + 17);
  Rng rng_g(config.seed * 5 + 18);
  train_transition(ls, ds, beliefs, split.train_frames, config, rng_f, log.transition);
  train_decoder(ls, ds, beliefs, split.train_frames, config, rng_g, log.decoder);
  evaluate(ls, ds, beliefs, split.train_frames, log);
  return log;
}

}  // namespace manic
