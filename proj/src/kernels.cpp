#include "bladecomp/kernels.hpp"

#include <exception>

namespace bladecomp::kernels {

namespace {

inline double dot_row(const double* q, const double* row, std::size_t dim) {
  double acc = 0.0;
  for (std::size_t j = 0; j < dim; ++j) acc += q[j] * row[j];
  return acc;
}

void check_shapes(std::span<const double> query, std::span<const double> matrix, std::size_t dim,
                  std::span<double> out) {
  if (query.size() != dim || matrix.size() != out.size() * dim)
    throw Error(ErrorCode::invalid_argument, "dot_scores: shape mismatch");
}

}  // namespace

void dot_scores_serial(std::span<const double> query, std::span<const double> matrix, std::size_t dim,
                       std::span<double> out) {
  check_shapes(query, matrix, dim, out);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dot_row(query.data(), matrix.data() + i * dim, dim);
}

void dot_scores_parallel(std::span<const double> query, std::span<const double> matrix, std::size_t dim,
                         std::span<double> out) {
  check_shapes(query, matrix, dim, out);
  const auto n = static_cast<long long>(out.size());
  const double* q = query.data();
  const double* m = matrix.data();
  double* o = out.data();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < n; ++i) o[i] = dot_row(q, m + static_cast<std::size_t>(i) * dim, dim);
}

std::vector<analytics::DriftFit> fit_series_serial(std::span<const analytics::PairSeries> series) {
  std::vector<analytics::DriftFit> fits;
  fits.reserve(series.size());
  for (const auto& s : series) fits.push_back(analytics::rb_compute_wear_drift(s));
  return fits;
}

std::vector<analytics::DriftFit> fit_series_parallel(std::span<const analytics::PairSeries> series) {
  std::vector<analytics::DriftFit> fits(series.size());
  std::vector<std::exception_ptr> errors(series.size());
  const auto n = static_cast<long long>(series.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (long long i = 0; i < n; ++i) {
    try {
      fits[i] = analytics::rb_compute_wear_drift(series[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return fits;
}

}  // namespace bladecomp::kernels
