#include "manic/environment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include "manic/error.hpp"

namespace manic {

namespace {

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Anti-aliased box coverage of the pixel centred at (cx, cy); edges ramp
// linearly over `soft` pixels.
double box_coverage(double cx, double cy, double x0, double y0, double x1, double y1, double soft) {
  auto ramp = [soft](double t) { return std::clamp(t / soft + 0.5, 0.0, 1.0); };
  return ramp(cx - x0) * ramp(x1 - cx) * ramp(cy - y0) * ramp(y1 - cy);
}

struct Colour {
  double r, g, b;
};

void blend_box(Observation& frame, double x0, double y0, double x1, double y1, double soft, Colour colour) {
  const FrameShape s = frame.shape;
  const double pad = soft;
  const auto lo_x = static_cast<std::size_t>(std::max(0.0, std::floor(x0 - pad)));
  const auto hi_x = static_cast<std::size_t>(std::clamp(std::ceil(x1 + pad), 0.0, static_cast<double>(s.width)));
  const auto lo_y = static_cast<std::size_t>(std::max(0.0, std::floor(y0 - pad)));
  const auto hi_y = static_cast<std::size_t>(std::clamp(std::ceil(y1 + pad), 0.0, static_cast<double>(s.height)));
  const double rgb[3] = {colour.r, colour.g, colour.b};
  for (std::size_t y = lo_y; y < hi_y; ++y) {
    for (std::size_t x = lo_x; x < hi_x; ++x) {
      const double a = box_coverage(static_cast<double>(x) + 0.5, static_cast<double>(y) + 0.5, x0, y0, x1, y1, soft);
      if (a <= 0.0) continue;
      for (std::size_t c = 0; c < s.channels; ++c) {
        const double target = s.channels == 3 ? rgb[c] : (rgb[0] + rgb[1] + rgb[2]) / 3.0;
        frame.at(x, y, c) = (1.0 - a) * frame.at(x, y, c) + a * target;
      }
    }
  }
}

void fill(Observation& frame, Colour colour) {
  const double rgb[3] = {colour.r, colour.g, colour.b};
  const FrameShape s = frame.shape;
  for (std::size_t y = 0; y < s.height; ++y)
    for (std::size_t x = 0; x < s.width; ++x)
      for (std::size_t c = 0; c < s.channels; ++c)
        frame.at(x, y, c) = s.channels == 3 ? rgb[c] : (rgb[0] + rgb[1] + rgb[2]) / 3.0;
}

}  // namespace

Observation Environment::render() {
  Observation x = render_clean();
  if (noise_.observation > 0.0) {
    for (Eigen::Index i = 0; i < x.pixels.size(); ++i) x.pixels[i] = clamp01(x.pixels[i] + gaussian(noise_.observation));
  }
  return x;
}

void Environment::set_state(const Vec& s) {
  require(s.size() == state_.size(), ErrorKind::kShape, "state length mismatch");
  state_ = s;
}

std::size_t Environment::checked_action(const Action& u) const {
  const ActionSpace space = action_space();
  require(space.valid(u), ErrorKind::kPrecondition, "malformed action for " + kind());
  return ActionSpace::argmax(u);
}

double Environment::gaussian(double sigma) {
  if (sigma <= 0.0) return 0.0;
  std::normal_distribution<double> dist(0.0, sigma);
  return dist(rng_);
}

// ---------------------------------------------------------------- crane

CraneEnv::CraneEnv(NoiseLevels noise, FrameShape frame) : Environment(noise), frame_(frame) {
  state_ = Vec::Constant(2, 0.5);
}

Vec CraneEnv::reset(std::uint64_t seed) {
  rng_.seed(seed);
  std::uniform_real_distribution<double> start(0.2, 0.8);
  state_.resize(2);
  state_[0] = start(rng_);
  state_[1] = start(rng_);
  return state_;
}

void CraneEnv::set_state(const Vec& s) {
  Environment::set_state(s.cwiseMax(0.0).cwiseMin(1.0));
}

Vec CraneEnv::step(const Action& u) {
  const std::size_t a = checked_action(u);
  double db = 0.0;
  double dc = 0.0;
  switch (a) {
    case 0: db = -kStride; break;  // left
    case 1: db = kStride; break;   // right
    case 2: dc = -kStride; break;  // up: shorter cable
    default: dc = kStride; break;  // down
  }
  state_[0] = clamp01(state_[0] + db + gaussian(noise_.transition));
  state_[1] = clamp01(state_[1] + dc + gaussian(noise_.transition));
  return state_;
}

Observation CraneEnv::render_clean() const {
  Observation frame(frame_);
  const double sx = static_cast<double>(frame_.width) / 64.0;
  const double sy = static_cast<double>(frame_.height) / 48.0;
  fill(frame, {0.12, 0.14, 0.18});
  blend_box(frame, 0.0, 3.0 * sy, 64.0 * sx, 5.0 * sy, 1.0, {0.45, 0.45, 0.5});  // rail
  const double xt = (7.0 + state_[0] * 50.0) * sx;
  const double hook = (9.0 + state_[1] * 28.0) * sy;
  blend_box(frame, xt - 6.0 * sx, 1.0 * sy, xt + 6.0 * sx, 8.0 * sy, 1.5, {0.95, 0.8, 0.1});     // trolley
  blend_box(frame, xt - 0.8 * sx, 8.0 * sy, xt + 0.8 * sx, hook, 1.0, {0.6, 0.6, 0.6});          // cable
  blend_box(frame, xt - 12.0 * sx, hook, xt + 12.0 * sx, hook + 10.0 * sy, 1.5, {0.95, 0.9, 0.8});  // load
  return frame;
}

// ------------------------------------------------------------ warehouse

WarehouseMap WarehouseMap::default_map() {
  WarehouseMap m;
  m.shelves = {{0.47, 0.29, 0.55, 0.44}, {0.0, 0.0, 0.25, 1.0}, {0.75, 0.0, 1.0, 1.0}, {0.25, 0.0, 0.75, 0.25}, {0.25, 0.75, 0.75, 1.0}};
  return m;
}

WarehouseMap WarehouseMap::generate(std::uint64_t seed) {
  WarehouseMap m;
  Rng rng(seed);
  std::uniform_real_distribution<double> pos(0.05, 0.85);
  std::uniform_real_distribution<double> len(0.08, 0.35);
  std::uniform_real_distribution<double> thin(0.05, 0.12);
  std::bernoulli_distribution vertical(0.5);
  const double margin = 0.1;
  int attempts = 0;
  while (m.shelves.size() < 3 && attempts++ < 200) {
    const double w = vertical(rng) ? thin(rng) : len(rng);
    const double h = w < 0.13 ? len(rng) : thin(rng);
    const double x0 = pos(rng);
    const double y0 = pos(rng);
    Rect r{x0, y0, std::min(1.0, x0 + w), std::min(1.0, y0 + h)};
    const Rect& s = m.start_region;
    const bool hits_start = !(r.x1 < s.x0 - margin || r.x0 > s.x1 + margin || r.y1 < s.y0 - margin || r.y0 > s.y1 + margin);
    const bool hits_goal = !(r.x1 < m.goal_x - m.goal_radius - margin || r.x0 > m.goal_x + m.goal_radius + margin ||
                             r.y1 < m.goal_y - m.goal_radius - margin || r.y0 > m.goal_y + m.goal_radius + margin);
    if (!hits_start && !hits_goal) m.shelves.push_back(r);
  }
  return m;
}

bool WarehouseMap::blocked(double x, double y, double radius) const {
  for (const auto& r : shelves) {
    if (x >= r.x0 - radius && x <= r.x1 + radius && y >= r.y0 - radius && y <= r.y1 + radius) return true;
  }
  return false;
}

GoalDistanceField::GoalDistanceField(const WarehouseMap& map, double radius, std::size_t resolution)
    : res_(resolution), dist_(resolution * resolution, std::numeric_limits<double>::infinity()) {
  require(resolution >= 2, ErrorKind::kPrecondition, "distance field needs resolution >= 2");
  const double h = 1.0 / static_cast<double>(res_ - 1);
  auto coord = [h](std::size_t k) { return static_cast<double>(k) * h; };
  std::vector<char> open(res_ * res_);
  for (std::size_t j = 0; j < res_; ++j)
    for (std::size_t i = 0; i < res_; ++i) open[j * res_ + i] = map.blocked(coord(i), coord(j), radius) ? 0 : 1;

  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  for (std::size_t j = 0; j < res_; ++j) {
    for (std::size_t i = 0; i < res_; ++i) {
      const double d = std::hypot(coord(i) - map.goal_x, coord(j) - map.goal_y);
      if (open[j * res_ + i] && d <= map.goal_radius) {
        dist_[j * res_ + i] = 0.0;
        queue.push({0.0, j * res_ + i});
      }
    }
  }
  while (!queue.empty()) {
    auto [d, idx] = queue.top();
    queue.pop();
    if (d > dist_[idx]) continue;
    const auto i = static_cast<long>(idx % res_);
    const auto j = static_cast<long>(idx / res_);
    for (long dj = -1; dj <= 1; ++dj) {
      for (long di = -1; di <= 1; ++di) {
        if (di == 0 && dj == 0) continue;
        const long ni = i + di;
        const long nj = j + dj;
        if (ni < 0 || nj < 0 || ni >= static_cast<long>(res_) || nj >= static_cast<long>(res_)) continue;
        const auto nidx = static_cast<std::size_t>(nj) * res_ + static_cast<std::size_t>(ni);
        if (!open[nidx]) continue;
        const double nd = d + h * ((di != 0 && dj != 0) ? std::sqrt(2.0) : 1.0);
        if (nd < dist_[nidx]) {
          dist_[nidx] = nd;
          queue.push({nd, nidx});
        }
      }
    }
  }
  // Blocked cells take the distance of the nearest open neighbour so that
  // interpolation near shelf edges stays finite.
  const double worst = 4.0;
  for (auto& d : dist_) {
    if (!std::isfinite(d)) d = worst;
  }
}

double GoalDistanceField::operator()(double x, double y) const {
  const double scale = static_cast<double>(res_ - 1);
  const double fx = std::clamp(x, 0.0, 1.0) * scale;
  const double fy = std::clamp(y, 0.0, 1.0) * scale;
  const auto i0 = std::min(static_cast<std::size_t>(fx), res_ - 2);
  const auto j0 = std::min(static_cast<std::size_t>(fy), res_ - 2);
  const double tx = fx - static_cast<double>(i0);
  const double ty = fy - static_cast<double>(j0);
  return (1 - tx) * (1 - ty) * cell(i0, j0) + tx * (1 - ty) * cell(i0 + 1, j0) + (1 - tx) * ty * cell(i0, j0 + 1) +
         tx * ty * cell(i0 + 1, j0 + 1);
}

WarehouseEnv::WarehouseEnv(NoiseLevels noise, WarehouseMap map, FrameShape frame)
    : Environment(noise), map_(std::move(map)), frame_(frame) {
  state_ = Vec::Constant(2, 0.2);
}

bool WarehouseEnv::collides(double x, double y) const { return map_.blocked(x, y, kAgentRadius); }

void WarehouseEnv::set_state(const Vec& s) {
  Environment::set_state(s.cwiseMax(0.0).cwiseMin(1.0));
}

Vec WarehouseEnv::reset(std::uint64_t seed) {
  rng_.seed(seed);
  const Rect& r = map_.start_region;
  std::uniform_real_distribution<double> xs(r.x0, r.x1);
  std::uniform_real_distribution<double> ys(r.y0, r.y1);
  state_.resize(2);
  do {
    state_[0] = xs(rng_);
    state_[1] = ys(rng_);
  } while (collides(state_[0], state_[1]));
  return state_;
}

Vec WarehouseEnv::step(const Action& u) {
  const std::size_t a = checked_action(u);
  double dx = 0.0;
  double dy = 0.0;
  switch (a) {
    case 0: dx = -kStride; break;
    case 1: dx = kStride; break;
    case 2: dy = -kStride; break;
    default: dy = kStride; break;
  }
  const double nx = clamp01(state_[0] + dx + gaussian(noise_.transition));
  if (!collides(nx, state_[1])) state_[0] = nx;
  const double ny = clamp01(state_[1] + dy + gaussian(noise_.transition));
  if (!collides(state_[0], ny)) state_[1] = ny;
  return state_;
}

double WarehouseEnv::goal_distance() const { return std::hypot(state_[0] - map_.goal_x, state_[1] - map_.goal_y); }

bool WarehouseEnv::done() const { return goal_distance() <= map_.goal_radius; }

Observation WarehouseEnv::render_clean() const {
  Observation frame(frame_);
  const double w = static_cast<double>(frame_.width);
  const double h = static_cast<double>(frame_.height);
  const double border = 4.0 * w / 64.0;
  auto px = [&](double x) { return border + x * (w - 2 * border); };
  auto py = [&](double y) { return border + y * (h - 2 * border); };
  fill(frame, {0.85, 0.85, 0.8});
  for (const auto& r : map_.shelves) blend_box(frame, px(r.x0), py(r.y0), px(r.x1), py(r.y1), 1.0, {0.35, 0.25, 0.15});
  const double gr = map_.goal_radius * 0.7;
  blend_box(frame, px(map_.goal_x - gr), py(map_.goal_y - gr), px(map_.goal_x + gr), py(map_.goal_y + gr), 1.0,
            {0.2, 0.75, 0.2});
  const double ax = px(state_[0]);
  const double ay = py(state_[1]);
  // Broad grey shading around the robot so nearby positions give overlapping frames.
  const double spread = 0.12 * (w - 2 * border);
  for (std::size_t j = 0; j < frame_.height; ++j) {
    for (std::size_t i = 0; i < frame_.width; ++i) {
      const double dx = static_cast<double>(i) + 0.5 - ax;
      const double dy = static_cast<double>(j) + 0.5 - ay;
      const double shade = 1.0 - 0.45 * std::exp(-(dx * dx + dy * dy) / (2.0 * spread * spread));
      for (std::size_t c = 0; c < frame_.channels; ++c) frame.at(i, j, c) *= shade;
    }
  }
  const double half = 3.5 * w / 64.0;
  blend_box(frame, ax - half, ay - half, ax + half, ay + half, 2.0, {0.1, 0.2, 0.9});
  return frame;
}

std::optional<Vec> WarehouseEnv::locate_agent(const Observation& frame) const {
  require(frame.shape == frame_, ErrorKind::kShape, "frame shape differs from the warehouse camera");
  const double w = static_cast<double>(frame_.width);
  const double h = static_cast<double>(frame_.height);
  const double border = 4.0 * w / 64.0;
  double total = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t j = 0; j < frame_.height; ++j) {
    for (std::size_t i = 0; i < frame_.width; ++i) {
      const double blue = frame.at(i, j, 2) - 0.5 * (frame.at(i, j, 0) + frame.at(i, j, 1)) - 0.1;
      if (blue <= 0.0) continue;
      total += blue;
      sx += blue * (static_cast<double>(i) + 0.5);
      sy += blue * (static_cast<double>(j) + 0.5);
    }
  }
  if (total < 1.0) return std::nullopt;
  Vec pos(2);
  pos << std::clamp((sx / total - border) / (w - 2 * border), 0.0, 1.0),
      std::clamp((sy / total - border) / (h - 2 * border), 0.0, 1.0);
  return pos;
}

// ------------------------------------------------------------------ ramp

RampEnv::RampEnv(NoiseLevels noise, FrameShape frame) : Environment(noise), frame_(frame) {
  state_ = Vec::Constant(1, 0.5);
}

Vec RampEnv::reset(std::uint64_t seed) {
  rng_.seed(seed);
  std::uniform_real_distribution<double> start(0.2, 0.8);
  state_ = Vec::Constant(1, start(rng_));
  return state_;
}

Vec RampEnv::step(const Action& u) {
  const std::size_t a = checked_action(u);
  state_[0] = clamp01(state_[0] + (a == 0 ? -0.02 : 0.02) + gaussian(noise_.transition));
  return state_;
}

Observation RampEnv::render_clean() const {
  Observation frame(frame_);
  frame.pixels.setConstant(state_[0]);
  return frame;
}

// -------------------------------------------------------------- corridor

AliasedCorridorEnv::AliasedCorridorEnv(std::size_t corridor_length)
    : Environment({0.0, 0.0}), corridor_length_(corridor_length) {
  require(corridor_length >= 1, ErrorKind::kPrecondition, "corridor needs at least one cell");
  state_ = Vec(3);
  state_ << 0.0, 0.0, -1.0;
}

Vec AliasedCorridorEnv::reset(std::uint64_t seed) {
  rng_.seed(seed);
  state_ << 0.0, static_cast<double>(seed % 2), -1.0;
  return state_;
}

Vec AliasedCorridorEnv::step(const Action& u) {
  const std::size_t a = checked_action(u);
  if (done()) return state_;
  const auto pos = static_cast<std::size_t>(state_[0]);
  if (pos < junction_position()) {
    state_[0] += 1.0;
  } else {
    state_[2] = (static_cast<int>(a) == cue()) ? 1.0 : 0.0;
  }
  return state_;
}

Observation AliasedCorridorEnv::render_clean() const {
  Observation frame(frame_shape());
  const auto pos = static_cast<std::size_t>(state_[0]);
  if (done()) return frame;
  if (pos == 0) {
    frame.pixels[cue()] = 1.0;
  } else if (pos < junction_position()) {
    frame.pixels[2] = 0.5;
  } else {
    frame.pixels[3] = 1.0;
  }
  return frame;
}

std::unique_ptr<Environment> make_environment(const EnvironmentConfig& config) {
  if (config.kind == "crane") return std::make_unique<CraneEnv>(config.noise);
  if (config.kind == "warehouse") {
    return std::make_unique<WarehouseEnv>(
        config.noise, config.map_seed == 0 ? WarehouseMap::default_map() : WarehouseMap::generate(config.map_seed));
  }
  if (config.kind == "ramp-test") return std::make_unique<RampEnv>(config.noise);
  if (config.kind == "aliased-corridor") return std::make_unique<AliasedCorridorEnv>();
  throw Error(ErrorKind::kConfig, "unknown environment kind: " + config.kind);
}

}  // namespace manic
