#include "manic/learning_system.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "manic/error.hpp"

namespace manic {

namespace {

std::vector<std::size_t> with_ends(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

Vec clamp01(Vec v) { return v.cwiseMax(0.0).cwiseMin(1.0); }

}  // namespace

Belief clamp_belief(Belief v) { return v.cwiseMax(-1.0).cwiseMin(1.0); }

LearningSystem::LearningSystem(FrameShape frame, std::size_t belief_dims, std::size_t action_dims,
                               Approximator transition, Approximator decoder, std::optional<Approximator> encoder,
                               std::size_t encoder_downsample)
    : frame_(frame),
      belief_dims_(belief_dims),
      action_dims_(action_dims),
      encoder_downsample_(encoder_downsample),
      f_(std::move(transition)),
      g_(std::move(decoder)),
      g_plus_(std::move(encoder)) {
  require(belief_dims_ >= 1, ErrorKind::kShape, "belief dims must be >= 1");
  require(frame_.size() >= 1, ErrorKind::kShape, "empty frame shape");
  require(f_.input_size() == belief_dims_ + action_dims_ && f_.output_size() == belief_dims_, ErrorKind::kShape,
          "transition model topology inconsistent with belief/action dims");
  require(g_.input_size() == belief_dims_ + 2 && g_.output_size() == frame_.channels, ErrorKind::kShape,
          "decoder topology inconsistent with belief dims and channels");
  if (g_plus_) {
    require(g_plus_->input_size() == encoder_input_shape().size() && g_plus_->output_size() == belief_dims_,
            ErrorKind::kShape, "encoder topology inconsistent with frame and belief dims");
  }
}

LearningSystem LearningSystem::create(FrameShape frame, std::size_t belief_dims, std::size_t action_dims,
                                      const ModelTopology& topology, std::uint64_t seed) {
  auto f = Approximator::create(with_ends(belief_dims + action_dims, topology.transition_hidden, belief_dims), seed);
  auto g = Approximator::create(with_ends(belief_dims + 2, topology.decoder_hidden, frame.channels), seed + 1);
  std::optional<Approximator> g_plus;
  if (topology.with_encoder) {
    const FrameShape small{std::max<std::size_t>(1, frame.width / topology.encoder_downsample),
                           std::max<std::size_t>(1, frame.height / topology.encoder_downsample), frame.channels};
    g_plus = Approximator::create(with_ends(small.size(), topology.encoder_hidden, belief_dims), seed + 2);
  }
  return LearningSystem(frame, belief_dims, action_dims, std::move(f), std::move(g), std::move(g_plus),
                        topology.encoder_downsample);
}

FrameShape LearningSystem::encoder_input_shape() const {
  return {std::max<std::size_t>(1, frame_.width / encoder_downsample_),
          std::max<std::size_t>(1, frame_.height / encoder_downsample_), frame_.channels};
}

const Approximator& LearningSystem::encoder() const {
  if (!g_plus_) throw Error(ErrorKind::kEncoderAbsent, "learning system has no encoder");
  return *g_plus_;
}

Approximator& LearningSystem::encoder() {
  if (!g_plus_) throw Error(ErrorKind::kEncoderAbsent, "learning system has no encoder");
  return *g_plus_;
}

void LearningSystem::check_belief(const Belief& v) const {
  if (static_cast<std::size_t>(v.size()) != belief_dims_) {
    throw Error(ErrorKind::kShape, "belief length " + std::to_string(v.size()) + " != " + std::to_string(belief_dims_));
  }
}

Vec LearningSystem::transition_input(const Belief& v, const Action& u) const {
  check_belief(v);
  require(static_cast<std::size_t>(u.size()) == action_dims_, ErrorKind::kShape, "action length mismatch");
  Vec in(v.size() + u.size());
  in << v, u;
  return in;
}

Vec LearningSystem::decoder_input(const Belief& v, double px, double py) const {
  check_belief(v);
  Vec in(v.size() + 2);
  in << v, px, py;
  return in;
}

Vec LearningSystem::encoder_input(const Observation& x) const {
  require(x.shape == frame_, ErrorKind::kShape, "observation shape does not match learning system frame");
  return downsample(x, encoder_downsample_).pixels;
}

Belief LearningSystem::predict_transition(const Belief& v, const Action& u) const {
  return clamp_belief(f_.forward(transition_input(v, u)));
}

Vec LearningSystem::decode_pixel(const Belief& v, double px, double py) const {
  require(px >= 0.0 && px <= 1.0 && py >= 0.0 && py <= 1.0, ErrorKind::kPrecondition,
          "pixel coordinates must lie in [0, 1]");
  return clamp01(g_.forward(decoder_input(v, px, py)));
}

Observation LearningSystem::decode_frame(const Belief& v) const {
  Observation out(frame_);
  const auto c = static_cast<Eigen::Index>(frame_.channels);
  for (std::size_t j = 0; j < frame_.height; ++j) {
    for (std::size_t i = 0; i < frame_.width; ++i) {
      out.pixels.segment(static_cast<Eigen::Index>(j * frame_.width + i) * c, c) =
          decode_pixel(v, pixel_x(i), pixel_y(j));
    }
  }
  return out;
}

Belief LearningSystem::encode(const Observation& x) const {
  return clamp_belief(encoder().forward(encoder_input(x)));
}

double LearningSystem::reconstruction_error(const Belief& v, const Observation& x) const {
  require(x.shape == frame_, ErrorKind::kShape, "observation shape mismatch");
  return (decode_frame(v).pixels - x.pixels).squaredNorm();
}

Belief LearningSystem::refine_beliefs(const Belief& v_init, const Observation& x, const RefineOptions& options) const {
  require(options.steps >= 1, ErrorKind::kPrecondition, "refine_beliefs needs steps >= 1");
  require(options.rate > 0.0, ErrorKind::kPrecondition, "refine_beliefs needs rate > 0");
  require(x.shape == frame_, ErrorKind::kShape, "observation shape mismatch");
  check_belief(v_init);

  const auto d = static_cast<Eigen::Index>(belief_dims_);
  const auto c = static_cast<Eigen::Index>(frame_.channels);
  const std::size_t pixel_count = frame_.width * frame_.height;
  Rng rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, pixel_count - 1);
  std::vector<std::size_t> sample(options.pixels_per_step);

  auto objective = [&](const Belief& v) {
    double total = 0.0;
    for (auto p : sample) {
      const Vec y = decode_pixel(v, pixel_x(p % frame_.width), pixel_y(p / frame_.width));
      total += (y - x.pixels.segment(static_cast<Eigen::Index>(p) * c, c)).squaredNorm();
    }
    return total;
  };

  Belief v = clamp_belief(v_init);
  double rate = options.rate;
  for (std::size_t step = 0; step < options.steps; ++step) {
    for (auto& p : sample) p = pick(rng);
    const double before = objective(v);
    Vec grad = Vec::Zero(d);
    for (auto p : sample) {
      const Vec in = decoder_input(v, pixel_x(p % frame_.width), pixel_y(p / frame_.width));
      // Residual on the clamped output, passed straight through the clamp.
      const Vec residual = clamp01(g_.forward(in)) - x.pixels.segment(static_cast<Eigen::Index>(p) * c, c);
      grad += g_.backward(in, 2.0 * residual, nullptr).head(d);
    }
    if (!std::isfinite(before) || !grad.allFinite()) throw Error(ErrorKind::kDiverged, "non-finite belief refinement");
    if (grad.squaredNorm() == 0.0) continue;
    const Belief candidate = clamp_belief(v - rate * grad);
    if (objective(candidate) <= before) {
      v = candidate;
    } else {
      rate *= 0.5;
    }
  }
  return v;
}

std::vector<Belief> LearningSystem::rollout(const Belief& v0, const Plan& plan) const {
  require(!plan.actions.empty(), ErrorKind::kPrecondition, "rollout needs a non-empty plan");
  std::vector<Belief> out;
  out.reserve(plan.actions.size());
  Belief v = v0;
  for (const auto& u : plan.actions) {
    v = predict_transition(v, u);
    out.push_back(v);
  }
  return out;
}

std::vector<Observation> LearningSystem::imagine_video(const Belief& v0, const Plan& plan) const {
  std::vector<Observation> frames;
  for (const auto& v : rollout(v0, plan)) frames.push_back(decode_frame(v));
  return frames;
}

void LearningSystem::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  f_.save_file(dir / "transition.mncm");
  g_.save_file(dir / "decoder.mncm");
  if (g_plus_) g_plus_->save_file(dir / "encoder.mncm");
  nlohmann::json meta{{"width", frame_.width},
                      {"height", frame_.height},
                      {"channels", frame_.channels},
                      {"belief_dims", belief_dims_},
                      {"action_dims", action_dims_},
                      {"encoder_downsample", encoder_downsample_},
                      {"has_encoder", has_encoder()}};
  std::ofstream out(dir / "learning_system.json");
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write learning system metadata");
  out << meta.dump(2) << "\n";
}

LearningSystem LearningSystem::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "learning_system.json");
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + (dir / "learning_system.json").string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::kFormat, std::string("learning system metadata: ") + e.what());
  }
  FrameShape frame{meta.at("width").get<std::size_t>(), meta.at("height").get<std::size_t>(),
                   meta.at("channels").get<std::size_t>()};
  std::optional<Approximator> g_plus;
  if (meta.value("has_encoder", false)) g_plus = Approximator::load_file(dir / "encoder.mncm");
  return LearningSystem(frame, meta.at("belief_dims").get<std::size_t>(), meta.at("action_dims").get<std::size_t>(),
                        Approximator::load_file(dir / "transition.mncm"), Approximator::load_file(dir / "decoder.mncm"),
                        std::move(g_plus), meta.value("encoder_downsample", std::size_t{4}));
}

Vec error_signal(const Observation& x, const Observation& x_hat) {
  require(x.shape == x_hat.shape, ErrorKind::kShape, "error_signal needs matching frame shapes");
  return x.pixels - x_hat.pixels;
}

}  // namespace manic
