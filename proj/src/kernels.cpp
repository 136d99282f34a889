#include "xdt/kernels.hpp"

#include <cassert>
#include <cmath>

#ifdef XDT_HAVE_OPENMP
#include <omp.h>
#endif

namespace xdt::kernels {
namespace {

// Below this many multiply-adds the parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

inline double dot_row(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += a[k] * b[k];
  return acc;
}

inline void forward_elem(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y,
                         std::size_t n, std::size_t o) {
  y.data[n * y.cols + o] = b[o] + dot_row(&x.data[n * x.cols], &w.data[o * w.cols], x.cols);
}

inline void weight_grad_row(const Matrix& dy, const Matrix& x, Matrix& dw, std::span<double> db,
                            std::size_t o) {
  double* dwr = &dw.data[o * dw.cols];
  double bsum = 0.0;
  for (std::size_t n = 0; n < dy.rows; ++n) {
    const double g = dy.data[n * dy.cols + o];
    bsum += g;
    if (g == 0.0) continue;
    const double* xr = &x.data[n * x.cols];
    for (std::size_t i = 0; i < x.cols; ++i) dwr[i] += g * xr[i];
  }
  db[o] += bsum;
}

inline void input_grad_elem(const Matrix& dy, const Matrix& w, Matrix& dx, std::size_t n,
                            std::size_t i) {
  double acc = 0.0;
  const double* dyr = &dy.data[n * dy.cols];
  for (std::size_t o = 0; o < dy.cols; ++o) acc += dyr[o] * w.data[o * w.cols + i];
  dx.data[n * dx.cols + i] = acc;
}

inline double potential(PairPotential kind, double r, double eps) {
  return kind == PairPotential::log_distance ? std::log(r + eps) : r;
}

// d phi / d r divided by r, so that the gradient is coeff * (z_i - z_j).
// Coincident latents get a zero gradient.
inline double potential_coeff(PairPotential kind, double r, double eps) {
  if (r == 0.0) return 0.0;
  return kind == PairPotential::log_distance ? 1.0 / (r * (r + eps)) : 1.0 / r;
}

inline double distance(const Matrix& z, std::size_t i, std::size_t j) {
  const double* a = &z.data[i * z.cols];
  const double* b = &z.data[j * z.cols];
  double acc = 0.0;
  for (std::size_t k = 0; k < z.cols; ++k) {
    const double d = a[k] - b[k];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline void pair_row(const Matrix& z, std::span<const int> classes, PairPotential kind, double eps,
                     double scale, std::span<double> row_sums, Matrix* dz, std::size_t i) {
  double row = 0.0;
  double* gi = dz ? &dz->data[i * dz->cols] : nullptr;
  if (gi) {
    for (std::size_t k = 0; k < z.cols; ++k) gi[k] = 0.0;
  }
  for (std::size_t j = 0; j < z.rows; ++j) {
    if (j == i) continue;
    const double s = classes[i] == classes[j] ? 1.0 : -1.0;
    const double r = distance(z, i, j);
    if (j > i) row += s * potential(kind, r, eps);
    if (gi) {
      const double c = scale * s * potential_coeff(kind, r, eps);
      if (c == 0.0) continue;
      const double* zi = &z.data[i * z.cols];
      const double* zj = &z.data[j * z.cols];
      for (std::size_t k = 0; k < z.cols; ++k) gi[k] += c * (zi[k] - zj[k]);
    }
  }
  row_sums[i] = row;
}

void check_linear(const Matrix& x, const Matrix& w, std::span<const double> b, const Matrix& y) {
  assert(x.cols == w.cols && b.size() == w.rows && y.rows == x.rows && y.cols == w.rows);
  (void)x, (void)w, (void)b, (void)y;
}

}  // namespace

namespace serial {

void linear_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y) {
  check_linear(x, w, b, y);
  for (std::size_t n = 0; n < x.rows; ++n)
    for (std::size_t o = 0; o < w.rows; ++o) forward_elem(x, w, b, y, n, o);
}

void linear_accumulate_grad(const Matrix& dy, const Matrix& x, Matrix& dw, std::span<double> db) {
  for (std::size_t o = 0; o < dy.cols; ++o) weight_grad_row(dy, x, dw, db, o);
}

void linear_input_grad(const Matrix& dy, const Matrix& w, Matrix& dx) {
  for (std::size_t n = 0; n < dy.rows; ++n)
    for (std::size_t i = 0; i < w.cols; ++i) input_grad_elem(dy, w, dx, n, i);
}

void pair_potential(const Matrix& z, std::span<const int> classes, PairPotential kind, double eps,
                    double scale, std::span<double> row_sums, Matrix* dz) {
  for (std::size_t i = 0; i < z.rows; ++i) pair_row(z, classes, kind, eps, scale, row_sums, dz, i);
}

}  // namespace serial

namespace parallel {

void linear_forward(const Matrix& x, const Matrix& w, std::span<const double> b, Matrix& y) {
  check_linear(x, w, b, y);
  const auto rows = static_cast<std::ptrdiff_t>(x.rows);
  const auto outs = static_cast<std::ptrdiff_t>(w.rows);
  [[maybe_unused]] const bool big = x.rows * w.rows * w.cols >= kParallelWork;
#pragma omp parallel for collapse(2) schedule(static) if (big)
  for (std::ptrdiff_t n = 0; n < rows; ++n)
    for (std::ptrdiff_t o = 0; o < outs; ++o)
      forward_elem(x, w, b, y, static_cast<std::size_t>(n), static_cast<std::size_t>(o));
}

void linear_accumulate_grad(const Matrix& dy, const Matrix& x, Matrix& dw, std::span<double> db) {
  const auto outs = static_cast<std::ptrdiff_t>(dy.cols);
  [[maybe_unused]] const bool big = dy.rows * dy.cols * x.cols >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t o = 0; o < outs; ++o)
    weight_grad_row(dy, x, dw, db, static_cast<std::size_t>(o));
}

void linear_input_grad(const Matrix& dy, const Matrix& w, Matrix& dx) {
  const auto rows = static_cast<std::ptrdiff_t>(dy.rows);
  const auto ins = static_cast<std::ptrdiff_t>(w.cols);
  [[maybe_unused]] const bool big = dy.rows * dy.cols * w.cols >= kParallelWork;
#pragma omp parallel for collapse(2) schedule(static) if (big)
  for (std::ptrdiff_t n = 0; n < rows; ++n)
    for (std::ptrdiff_t i = 0; i < ins; ++i)
      input_grad_elem(dy, w, dx, static_cast<std::size_t>(n), static_cast<std::size_t>(i));
}

void pair_potential(const Matrix& z, std::span<const int> classes, PairPotential kind, double eps,
                    double scale, std::span<double> row_sums, Matrix* dz) {
  const auto rows = static_cast<std::ptrdiff_t>(z.rows);
  [[maybe_unused]] const bool big = z.rows * z.rows * z.cols >= kParallelWork;
#pragma omp parallel for schedule(dynamic, 4) if (big)
  for (std::ptrdiff_t i = 0; i < rows; ++i)
    pair_row(z, classes, kind, eps, scale, row_sums, dz, static_cast<std::size_t>(i));
}

}  // namespace parallel

bool openmp_enabled() {
#ifdef XDT_HAVE_OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef XDT_HAVE_OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace xdt::kernels
