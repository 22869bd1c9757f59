#pragma once

// Test-only helpers. The finite-difference routines here are deliberately
// independent of the library's gradient code.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>
#include <cstdint>

#include "pacm/numeric.hpp"

namespace pacm::testing {

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols,
                            std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

inline Matrix random_unit_rows(Eigen::Index rows, Eigen::Index cols,
                               std::mt19937_64& rng) {
  Matrix m = random_matrix(rows, cols, rng);
  m.rowwise().normalize();
  return m;
}

inline double relative_error(double analytic, double numeric,
                             double floor = 1e-4) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central difference of `loss` w.r.t. one coordinate that `loss` reads
// through `value`.
inline double central_difference(double& value,
                                 const std::function<double()>& loss,
                                 double step = 1e-5) {
  const double saved = value;
  value = saved + step;
  const double plus = loss();
  value = saved - step;
  const double minus = loss();
  value = saved;
  return (plus - minus) / (2.0 * step);
}

// Worst relative error between `analytic` and central differences over every
// entry of `values`.
inline double worst_block_error(std::span<double> values,
                                std::span<const double> analytic,
                                const std::function<double()>& loss,
                                double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double numeric = central_difference(values[i], loss, step);
    worst = std::max(worst, relative_error(analytic[i], numeric));
  }
  return worst;
}

inline double worst_matrix_error(Matrix& values, const Matrix& analytic,
                                 const std::function<double()>& loss,
                                 double step = 1e-5) {
  return worst_block_error(
      std::span<double>(values.data(), values.size()),
      std::span<const double>(analytic.data(), analytic.size()), loss, step);
}

}  // namespace pacm::testing

namespace pacm::testing {

// As worst_block_error, but coordinates whose +h and -h evaluations cross a
// piecewise-linear kink (different `signature`) are skipped.
inline double worst_block_error_smooth(
    std::span<double> values, std::span<const double> analytic,
    const std::function<double()>& loss,
    const std::function<std::vector<std::uint8_t>()>& signature,
    std::size_t* skipped = nullptr, double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double plus = loss();
    const auto sig_plus = signature();
    values[i] = saved - step;
    const double minus = loss();
    const auto sig_minus = signature();
    values[i] = saved;
    if (sig_plus != sig_minus) {
      if (skipped) ++*skipped;
      continue;
    }
    worst = std::max(worst, relative_error(analytic[i], (plus - minus) / (2.0 * step)));
  }
  return worst;
}

}  // namespace pacm::testing
