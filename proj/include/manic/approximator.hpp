#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace manic {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Parameter-shaped accumulator for backpropagated gradients.
struct Gradient {
  std::vector<Mat> weights;
  std::vector<Vec> biases;

  void set_zero();
  Gradient& operator+=(const Gradient& other);
  Gradient& operator*=(double scale);
  // Flattened in the model file order: per layer, row-major weights then biases.
  Vec flatten() const;
};

// Feed-forward multilayer perceptron: tanh on hidden layers, identity output.
// Used for the transition model, the decoder, the encoder and the contentment
// model. Evaluation is const and safe to share across threads; training
// requires exclusive access.
class Approximator {
 public:
  Approximator() = default;

  // Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] drawn from seed,
  // biases zero. Throws kInvalidTopology for fewer than two layers or a zero
  // layer size.
  static Approximator create(const std::vector<std::size_t>& layer_sizes, std::uint64_t seed);
  // Same topology checks, every parameter zero.
  static Approximator zeros(const std::vector<std::size_t>& layer_sizes);

  const std::vector<std::size_t>& layer_sizes() const { return layer_sizes_; }
  std::size_t weight_layers() const { return weights_.size(); }
  std::size_t input_size() const { return layer_sizes_.front(); }
  std::size_t output_size() const { return layer_sizes_.back(); }
  std::size_t parameter_count() const;
  std::uint64_t seed() const { return seed_; }
  bool empty() const { return layer_sizes_.empty(); }

  Mat& weights(std::size_t layer) { return weights_.at(layer); }
  const Mat& weights(std::size_t layer) const { return weights_.at(layer); }
  Vec& biases(std::size_t layer) { return biases_.at(layer); }
  const Vec& biases(std::size_t layer) const { return biases_.at(layer); }

  Vec forward(const Vec& input) const;

  // Backpropagates dLoss/dOutput = output_grad. Adds the parameter gradient
  // into *accum when non-null and returns dLoss/dInput.
  Vec backward(const Vec& input, const Vec& output_grad, Gradient* accum) const;

  // One SGD step on 0.5 * |target - forward(input)|^2. Returns the loss
  // measured before the update. A non-finite loss or gradient throws
  // kDiverged and leaves the parameters untouched.
  double train_step(const Vec& input, const Vec& target, double learning_rate);

  // d/dinput of 0.5 * |target - forward(input)|^2.
  Vec input_gradient(const Vec& input, const Vec& target) const;
  // d/dparams of the same loss, flattened like Gradient::flatten.
  Vec parameter_gradient(const Vec& input, const Vec& target) const;

  Gradient zero_gradient() const;
  // params -= rate * grad; kDiverged (no change) if the result is non-finite.
  void apply(const Gradient& grad, double rate);

  Vec parameters() const;
  void set_parameters(const Vec& flat);
  double parameter(std::size_t index) const;
  void set_parameter(std::size_t index, double value);

  std::uint64_t hash() const;

  void save(std::ostream& out) const;
  static Approximator load(std::istream& in);
  void save_file(const std::filesystem::path& path) const;
  static Approximator load_file(const std::filesystem::path& path);

  nlohmann::json to_json() const;
  static Approximator from_json(const nlohmann::json& j);

  friend bool operator==(const Approximator& a, const Approximator& b);

 private:
  static void check_topology(const std::vector<std::size_t>& layer_sizes);
  void check_input(const Vec& input) const;
  std::pair<std::size_t, std::size_t> locate(std::size_t index) const;

  std::vector<std::size_t> layer_sizes_;
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
  std::uint64_t seed_ = 0;
};

}  // namespace manic
