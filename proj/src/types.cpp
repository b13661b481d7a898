#include "manic/types.hpp"

#include <algorithm>

#include "manic/error.hpp"

namespace manic {

Observation::Observation(FrameShape s, Vec p) : shape(s), pixels(std::move(p)) {
  require(static_cast<std::size_t>(pixels.size()) == shape.size(), ErrorKind::kShape,
          "observation length does not match W*H*C");
}

Observation::Observation(FrameShape s) : shape(s), pixels(Vec::Zero(static_cast<Eigen::Index>(s.size()))) {}

double mean_abs_difference(const Observation& a, const Observation& b) {
  require(a.shape == b.shape, ErrorKind::kShape, "frame shapes differ");
  if (a.pixels.size() == 0) return 0.0;
  return (a.pixels - b.pixels).cwiseAbs().mean();
}

Observation downsample(const Observation& x, std::size_t factor) {
  require(factor >= 1, ErrorKind::kPrecondition, "downsample factor must be >= 1");
  const FrameShape in = x.shape;
  FrameShape out{std::max<std::size_t>(1, in.width / factor), std::max<std::size_t>(1, in.height / factor),
                 in.channels};
  Observation y(out);
  for (std::size_t oy = 0; oy < out.height; ++oy) {
    const std::size_t y0 = oy * in.height / out.height;
    const std::size_t y1 = (oy + 1) * in.height / out.height;
    for (std::size_t ox = 0; ox < out.width; ++ox) {
      const std::size_t x0 = ox * in.width / out.width;
      const std::size_t x1 = (ox + 1) * in.width / out.width;
      const double area = static_cast<double>((y1 - y0) * (x1 - x0));
      for (std::size_t c = 0; c < in.channels; ++c) {
        double sum = 0.0;
        for (std::size_t yy = y0; yy < y1; ++yy)
          for (std::size_t xx = x0; xx < x1; ++xx) sum += x.at(xx, yy, c);
        y.at(ox, oy, c) = sum / area;
      }
    }
  }
  return y;
}

Action ActionSpace::one_hot(std::size_t index) const {
  require(index < dims, ErrorKind::kShape, "action index out of range");
  Action u = Action::Zero(static_cast<Eigen::Index>(dims));
  u[static_cast<Eigen::Index>(index)] = 1.0;
  return u;
}

Action ActionSpace::sample(Rng& rng) const {
  if (discrete) {
    std::uniform_int_distribution<std::size_t> pick(0, dims - 1);
    return one_hot(pick(rng));
  }
  std::uniform_real_distribution<double> dist(low, high);
  Action u(static_cast<Eigen::Index>(dims));
  for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = dist(rng);
  return u;
}

std::size_t ActionSpace::argmax(const Action& u) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < u.size(); ++i) {
    if (u[i] > u[best]) best = i;
  }
  return static_cast<std::size_t>(best);
}

bool ActionSpace::valid(const Action& u) const {
  if (static_cast<std::size_t>(u.size()) != dims || !u.allFinite()) return false;
  if (!discrete) return (u.array() >= low).all() && (u.array() <= high).all();
  int ones = 0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    if (u[i] == 1.0) {
      ++ones;
    } else if (u[i] != 0.0) {
      return false;
    }
  }
  return ones == 1;
}

bool operator==(const Plan& a, const Plan& b) {
  if (a.actions.size() != b.actions.size()) return false;
  for (std::size_t i = 0; i < a.actions.size(); ++i) {
    if (a.actions[i] != b.actions[i]) return false;
  }
  return true;
}

}  // namespace manic
