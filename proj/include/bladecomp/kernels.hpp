#pragma once

// Data-parallel hot loops. Each kernel has an OpenMP version and a serial
// reference; both produce bit-identical output because every output element
// is computed by exactly one thread with the same operation order.

#include <cstddef>
#include <span>
#include <vector>

#include "bladecomp/analytics.hpp"

namespace bladecomp::kernels {

// out[i] = <query, row i of matrix>. matrix is row-major, rows of length dim.
void dot_scores_serial(std::span<const double> query, std::span<const double> matrix, std::size_t dim,
                       std::span<double> out);
void dot_scores_parallel(std::span<const double> query, std::span<const double> matrix, std::size_t dim,
                         std::span<double> out);

std::vector<analytics::DriftFit> fit_series_serial(std::span<const analytics::PairSeries> series);
// Rethrows the first (lowest index) failure after the parallel region.
std::vector<analytics::DriftFit> fit_series_parallel(std::span<const analytics::PairSeries> series);

}  // namespace bladecomp::kernels
