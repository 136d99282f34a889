#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace xdt {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  void resize(std::size_t r, std::size_t c) {
    rows = r;
    cols = c;
    data.assign(r * c, 0.0);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// How a pairwise term depends on the distance between two latents.
enum class PairPotential {
  log_distance,  // log(r + eps)
  distance,      // r
};

/// Dense kernels used by the head and the losses. Every kernel reduces in a
/// fixed order per output element, so the serial and parallel variants return
/// bit-identical results for any thread count.
namespace kernels {

#define XDT_KERNEL_DECLS                                                                  \
  /* y = x w^T + b; x is n x in, w is out x in. */                                       \
  void linear_forward(const Matrix& x, const Matrix& w, std::span<const double> b,      \
                      Matrix& y);                                                         \
  /* dw += dy^T x and db += column sums of dy, summed over rows in order. */              \
  void linear_accumulate_grad(const Matrix& dy, const Matrix& x, Matrix& dw,             \
                              std::span<double> db);                                      \
  /* dx = dy w. */                                                                        \
  void linear_input_grad(const Matrix& dy, const Matrix& w, Matrix& dx);                  \
  /* Pairwise term s_ij * phi(||z_i - z_j||) over i < j. row_sums[i] gets the sum over   \
     j > i; when dz is non-null it receives d(scale * total)/dz. */                       \
  void pair_potential(const Matrix& z, std::span<const int> classes, PairPotential kind, \
                      double eps, double scale, std::span<double> row_sums, Matrix* dz);

namespace serial {
XDT_KERNEL_DECLS
}  // namespace serial

/// OpenMP variants; identical to serial when built without OpenMP.
namespace parallel {
XDT_KERNEL_DECLS
}  // namespace parallel

#undef XDT_KERNEL_DECLS

bool openmp_enabled();
int max_threads();

// Default dispatch used by the library: parallel variants.
using parallel::linear_accumulate_grad;
using parallel::linear_forward;
using parallel::linear_input_grad;
using parallel::pair_potential;

}  // namespace kernels
}  // namespace xdt
