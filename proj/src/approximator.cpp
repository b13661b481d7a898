#include "manic/approximator.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "manic/binary_io.hpp"
#include "manic/error.hpp"

namespace manic {

namespace {

constexpr std::string_view kModelMagic = "MNCM";
constexpr std::uint32_t kModelVersion = 1;

bool all_finite(const Vec& v) { return v.allFinite(); }

}  // namespace

void Gradient::set_zero() {
  for (auto& w : weights) w.setZero();
  for (auto& b : biases) b.setZero();
}

Gradient& Gradient::operator+=(const Gradient& other) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] += other.weights[l];
    biases[l] += other.biases[l];
  }
  return *this;
}

Gradient& Gradient::operator*=(double scale) {
  for (std::size_t l = 0; l < weights.size(); ++l) {
    weights[l] *= scale;
    biases[l] *= scale;
  }
  return *this;
}

Vec Gradient::flatten() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  Vec flat(static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) flat[k++] = weights[l](r, c);
    for (Eigen::Index r = 0; r < biases[l].size(); ++r) flat[k++] = biases[l][r];
  }
  return flat;
}

void Approximator::check_topology(const std::vector<std::size_t>& layer_sizes) {
  require(layer_sizes.size() >= 2, ErrorKind::kInvalidTopology, "need at least two layers");
  for (auto s : layer_sizes) require(s >= 1, ErrorKind::kInvalidTopology, "layer sizes must be >= 1");
}

Approximator Approximator::zeros(const std::vector<std::size_t>& layer_sizes) {
  check_topology(layer_sizes);
  Approximator a;
  a.layer_sizes_ = layer_sizes;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const auto out = static_cast<Eigen::Index>(layer_sizes[l + 1]);
    const auto in = static_cast<Eigen::Index>(layer_sizes[l]);
    a.weights_.push_back(Mat::Zero(out, in));
    a.biases_.push_back(Vec::Zero(out));
  }
  return a;
}

Approximator Approximator::create(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed) {
  Approximator a = zeros(layer_sizes);
  a.seed_ = seed;
  std::mt19937_64 rng(seed);
  for (auto& w : a.weights_) {
    const double r = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    std::uniform_real_distribution<double> dist(-r, r);
    // Row-major draw order so the stream matches the file layout.
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = dist(rng);
  }
  return a;
}

std::size_t Approximator::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

void Approximator::check_input(const Vec& input) const {
  require(!empty(), ErrorKind::kInvalidTopology, "approximator is uninitialized");
  if (static_cast<std::size_t>(input.size()) != input_size()) {
    throw Error(ErrorKind::kShape,
                "input length " + std::to_string(input.size()) + " != " + std::to_string(input_size()));
  }
  require(all_finite(input), ErrorKind::kNumeric, "non-finite input");
}

Vec Approximator::forward(const Vec& input) const {
  check_input(input);
  Vec a = input;
  const std::size_t last = weights_.size() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    Vec z = weights_[l] * a + biases_[l];
    if (l < last) z = z.array().tanh().matrix();
    a = std::move(z);
  }
  return a;
}

Vec Approximator::backward(const Vec& input, const Vec& output_grad, Gradient* accum) const {
  check_input(input);
  require(static_cast<std::size_t>(output_grad.size()) == output_size(), ErrorKind::kShape,
          "output gradient length mismatch");
  const std::size_t n = weights_.size();
  std::vector<Vec> acts;
  acts.reserve(n);
  acts.push_back(input);
  for (std::size_t l = 0; l + 1 < n; ++l) {
    acts.push_back((weights_[l] * acts.back() + biases_[l]).array().tanh().matrix());
  }
  Vec delta = output_grad;
  for (std::size_t l = n; l-- > 0;) {
    if (accum != nullptr) {
      accum->weights[l].noalias() += delta * acts[l].transpose();
      accum->biases[l] += delta;
    }
    Vec back = weights_[l].transpose() * delta;
    if (l > 0) back = back.cwiseProduct((1.0 - acts[l].array().square()).matrix());
    delta = std::move(back);
  }
  return delta;
}

double Approximator::train_step(const Vec& input, const Vec& target, double learning_rate) {
  check_input(input);
  require(learning_rate > 0.0, ErrorKind::kPrecondition, "learning rate must be positive");
  require(static_cast<std::size_t>(target.size()) == output_size(), ErrorKind::kShape,
          "target length mismatch");
  const std::size_t n = weights_.size();
  // Per-thread scratch reused across calls; sizes settle after the first step.
  thread_local std::vector<Vec> acts;
  thread_local std::vector<Vec> deltas;
  acts.resize(n + 1);
  deltas.resize(n);
  acts[0] = input;
  for (std::size_t l = 0; l < n; ++l) {
    acts[l + 1].resize(weights_[l].rows());
    acts[l + 1].noalias() = weights_[l] * acts[l];
    acts[l + 1] += biases_[l];
    if (l + 1 < n) acts[l + 1] = acts[l + 1].array().tanh().matrix();
  }
  deltas[n - 1] = acts[n] - target;
  const double loss = 0.5 * deltas[n - 1].squaredNorm();
  if (!std::isfinite(loss)) throw Error(ErrorKind::kDiverged, "non-finite loss");

  // Collect every layer's delta against the old weights before mutating.
  for (std::size_t l = n - 1; l > 0; --l) {
    deltas[l - 1].resize(weights_[l].cols());
    deltas[l - 1].noalias() = weights_[l].transpose() * deltas[l];
    deltas[l - 1].array() *= 1.0 - acts[l].array().square();
  }
  for (std::size_t l = 0; l < n; ++l) {
    if (!all_finite(deltas[l])) throw Error(ErrorKind::kDiverged, "non-finite gradient");
  }
  for (std::size_t l = 0; l < n; ++l) {
    weights_[l].noalias() -= (learning_rate * deltas[l]) * acts[l].transpose();
    biases_[l].noalias() -= learning_rate * deltas[l];
  }
  return loss;
}

Vec Approximator::input_gradient(const Vec& input, const Vec& target) const {
  require(static_cast<std::size_t>(target.size()) == output_size(), ErrorKind::kShape,
          "target length mismatch");
  return backward(input, forward(input) - target, nullptr);
}

Vec Approximator::parameter_gradient(const Vec& input, const Vec& target) const {
  require(static_cast<std::size_t>(target.size()) == output_size(), ErrorKind::kShape,
          "target length mismatch");
  Gradient g = zero_gradient();
  backward(input, forward(input) - target, &g);
  return g.flatten();
}

Gradient Approximator::zero_gradient() const {
  Gradient g;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    g.weights.push_back(Mat::Zero(weights_[l].rows(), weights_[l].cols()));
    g.biases.push_back(Vec::Zero(biases_[l].size()));
  }
  return g;
}

void Approximator::apply(const Gradient& grad, double rate) {
  require(grad.weights.size() == weights_.size(), ErrorKind::kShape, "gradient topology mismatch");
  std::vector<Mat> w = weights_;
  std::vector<Vec> b = biases_;
  for (std::size_t l = 0; l < w.size(); ++l) {
    w[l] -= rate * grad.weights[l];
    b[l] -= rate * grad.biases[l];
    if (!w[l].allFinite() || !b[l].allFinite()) throw Error(ErrorKind::kDiverged, "non-finite update");
  }
  weights_ = std::move(w);
  biases_ = std::move(b);
}

Vec Approximator::parameters() const {
  Gradient view;
  view.weights = weights_;
  view.biases = biases_;
  return view.flatten();
}

void Approximator::set_parameters(const Vec& flat) {
  require(static_cast<std::size_t>(flat.size()) == parameter_count(), ErrorKind::kShape,
          "parameter vector length mismatch");
  Eigen::Index k = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (Eigen::Index r = 0; r < weights_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights_[l].cols(); ++c) weights_[l](r, c) = flat[k++];
    for (Eigen::Index r = 0; r < biases_[l].size(); ++r) biases_[l][r] = flat[k++];
  }
}

std::pair<std::size_t, std::size_t> Approximator::locate(std::size_t index) const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto layer_size = static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    if (index < layer_size) return {l, index};
    index -= layer_size;
  }
  throw Error(ErrorKind::kShape, "parameter index out of range");
}

double Approximator::parameter(std::size_t index) const {
  auto [l, k] = locate(index);
  const auto wsize = static_cast<std::size_t>(weights_[l].size());
  if (k < wsize) {
    const auto cols = static_cast<std::size_t>(weights_[l].cols());
    return weights_[l](static_cast<Eigen::Index>(k / cols), static_cast<Eigen::Index>(k % cols));
  }
  return biases_[l][static_cast<Eigen::Index>(k - wsize)];
}

void Approximator::set_parameter(std::size_t index, double value) {
  auto [l, k] = locate(index);
  const auto wsize = static_cast<std::size_t>(weights_[l].size());
  if (k < wsize) {
    const auto cols = static_cast<std::size_t>(weights_[l].cols());
    weights_[l](static_cast<Eigen::Index>(k / cols), static_cast<Eigen::Index>(k % cols)) = value;
  } else {
    biases_[l][static_cast<Eigen::Index>(k - wsize)] = value;
  }
}

std::uint64_t Approximator::hash() const {
  io::Fnv1a h;
  h.update_value(static_cast<std::uint32_t>(layer_sizes_.size()));
  for (auto s : layer_sizes_) h.update_value(static_cast<std::uint32_t>(s));
  const Vec p = parameters();
  for (Eigen::Index i = 0; i < p.size(); ++i) h.update_value(p[i]);
  return h.digest();
}

void Approximator::save(std::ostream& out) const {
  require(!empty(), ErrorKind::kInvalidTopology, "cannot save an uninitialized approximator");
  io::write_magic(out, kModelMagic);
  io::write<std::uint32_t>(out, kModelVersion);
  io::write<std::uint32_t>(out, static_cast<std::uint32_t>(layer_sizes_.size()));
  for (auto s : layer_sizes_) io::write<std::uint32_t>(out, static_cast<std::uint32_t>(s));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (Eigen::Index r = 0; r < weights_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights_[l].cols(); ++c) io::write<double>(out, weights_[l](r, c));
    for (Eigen::Index r = 0; r < biases_[l].size(); ++r) io::write<double>(out, biases_[l][r]);
  }
}

Approximator Approximator::load(std::istream& in) {
  io::expect_magic(in, kModelMagic);
  const auto version = io::read<std::uint32_t>(in);
  require(version == kModelVersion, ErrorKind::kFormat, "unsupported model version " + std::to_string(version));
  const auto count = io::read<std::uint32_t>(in);
  require(count >= 2 && count < 1024, ErrorKind::kFormat, "implausible layer count");
  std::vector<std::size_t> sizes(count);
  for (auto& s : sizes) s = io::read<std::uint32_t>(in);
  Approximator a = zeros(sizes);
  for (std::size_t l = 0; l < a.weights_.size(); ++l) {
    for (Eigen::Index r = 0; r < a.weights_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < a.weights_[l].cols(); ++c) a.weights_[l](r, c) = io::read<double>(in);
    for (Eigen::Index r = 0; r < a.biases_[l].size(); ++r) a.biases_[l][r] = io::read<double>(in);
  }
  return a;
}

void Approximator::save_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  save(out);
  require(static_cast<bool>(out), ErrorKind::kIo, "write failed for " + path.string());
}

Approximator Approximator::load_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open " + path.string());
  return load(in);
}

nlohmann::json Approximator::to_json() const {
  nlohmann::json j;
  j["format"] = "MNCM";
  j["version"] = kModelVersion;
  j["layer_sizes"] = layer_sizes_;
  j["seed"] = seed_;
  j["activation"] = {{"hidden", "tanh"}, {"output", "identity"}};
  auto layers = nlohmann::json::array();
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    std::vector<double> w;
    for (Eigen::Index r = 0; r < weights_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights_[l].cols(); ++c) w.push_back(weights_[l](r, c));
    std::vector<double> b(biases_[l].data(), biases_[l].data() + biases_[l].size());
    layers.push_back({{"weights", w}, {"biases", b}});
  }
  j["layers"] = layers;
  return j;
}

Approximator Approximator::from_json(const nlohmann::json& j) {
  Approximator a = zeros(j.at("layer_sizes").get<std::vector<std::size_t>>());
  a.seed_ = j.value("seed", std::uint64_t{0});
  const auto& layers = j.at("layers");
  require(layers.size() == a.weights_.size(), ErrorKind::kFormat, "layer count mismatch in JSON model");
  for (std::size_t l = 0; l < a.weights_.size(); ++l) {
    const auto w = layers[l].at("weights").get<std::vector<double>>();
    const auto b = layers[l].at("biases").get<std::vector<double>>();
    require(w.size() == static_cast<std::size_t>(a.weights_[l].size()) &&
                b.size() == static_cast<std::size_t>(a.biases_[l].size()),
            ErrorKind::kFormat, "layer shape mismatch in JSON model");
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < a.weights_[l].rows(); ++r)
      for (Eigen::Index c = 0; c < a.weights_[l].cols(); ++c) a.weights_[l](r, c) = w[k++];
    for (std::size_t r = 0; r < b.size(); ++r) a.biases_[l][static_cast<Eigen::Index>(r)] = b[r];
  }
  return a;
}

bool operator==(const Approximator& a, const Approximator& b) {
  if (a.layer_sizes_ != b.layer_sizes_) return false;
  for (std::size_t l = 0; l < a.weights_.size(); ++l) {
    if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
  }
  return true;
}

}  // namespace manic
