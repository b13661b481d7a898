#include "manic/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "manic/error.hpp"

namespace manic {

std::vector<double> affine_r2(const std::vector<Vec>& estimate, const std::vector<Vec>& truth) {
  require(!estimate.empty() && estimate.size() == truth.size(), ErrorKind::kShape, "affine_r2 needs aligned samples");
  const auto n = static_cast<Eigen::Index>(estimate.size());
  const Eigen::Index d = estimate.front().size();
  const Eigen::Index m = truth.front().size();
  Mat design(n, d + 1);
  Mat target(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    design.row(i).head(d) = estimate[static_cast<std::size_t>(i)].transpose();
    design(i, d) = 1.0;
    target.row(i) = truth[static_cast<std::size_t>(i)].transpose();
  }
  const Mat coef = design.colPivHouseholderQr().solve(target);
  const Mat resid = target - design * coef;
  std::vector<double> r2;
  for (Eigen::Index j = 0; j < m; ++j) {
    const double mean = target.col(j).mean();
    const double total = (target.col(j).array() - mean).square().sum();
    const double sse = resid.col(j).squaredNorm();
    r2.push_back(total > 0.0 ? 1.0 - sse / total : (sse == 0.0 ? 1.0 : 0.0));
  }
  return r2;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorKind::kShape, "spearman needs two aligned samples");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / static_cast<double>(ra.size());
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / static_cast<double>(rb.size());
  double num = 0.0;
  double da = 0.0;
  double db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da == 0.0 || db == 0.0) return 0.0;
  return num / std::sqrt(da * db);
}

}  // namespace manic
