#pragma once

#include <vector>

#include "manic/approximator.hpp"

namespace manic {

// Least-squares affine fit truth[:, j] ~ A * estimate + b for each truth
// dimension j; returns the coefficient of determination per truth dimension.
std::vector<double> affine_r2(const std::vector<Vec>& estimate, const std::vector<Vec>& truth);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace manic
