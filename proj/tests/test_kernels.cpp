#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "xdt/kernels.hpp"

#ifdef XDT_HAVE_OPENMP
#include <omp.h>
#endif

namespace xdt {
namespace {

class Kernels : public ::testing::Test {
 protected:
  void SetUp() override {
#ifdef XDT_HAVE_OPENMP
    saved_ = omp_get_max_threads();
    omp_set_num_threads(4);
#endif
  }
  void TearDown() override {
#ifdef XDT_HAVE_OPENMP
    omp_set_num_threads(saved_);
#endif
  }
  int saved_ = 1;
};

// Shapes on both sides of the parallel work threshold.
const std::vector<std::array<std::size_t, 3>> kShapes{{3, 5, 4}, {64, 96, 80}, {130, 256, 64}};

TEST_F(Kernels, LinearForwardMatchesNaiveAndIsBitIdentical) {
  Rng rng(1);
  for (const auto& [n, in, out] : kShapes) {
    const auto x = testing::random_matrix(n, in, rng);
    const auto w = testing::random_matrix(out, in, rng);
    std::vector<double> b(out);
    for (auto& v : b) v = rng.uniform(-1, 1);
    Matrix ys(n, out), yp(n, out);
    kernels::serial::linear_forward(x, w, b, ys);
    kernels::parallel::linear_forward(x, w, b, yp);
    EXPECT_EQ(ys, yp);
    for (std::size_t r = 0; r < n; r += 7) {
      for (std::size_t o = 0; o < out; o += 5) {
        double acc = b[o];
        for (std::size_t k = 0; k < in; ++k) acc += x(r, k) * w(o, k);
        EXPECT_NEAR(ys(r, o), acc, 1e-12);
      }
    }
  }
}

TEST_F(Kernels, WeightGradientMatchesNaiveAndIsBitIdentical) {
  Rng rng(2);
  for (const auto& [n, in, out] : kShapes) {
    const auto x = testing::random_matrix(n, in, rng);
    const auto dy = testing::random_matrix(n, out, rng);
    Matrix dws(out, in, 0.25), dwp(out, in, 0.25);
    std::vector<double> dbs(out, -1.0), dbp(out, -1.0);
    kernels::serial::linear_accumulate_grad(dy, x, dws, dbs);
    kernels::parallel::linear_accumulate_grad(dy, x, dwp, dbp);
    EXPECT_EQ(dws, dwp);
    EXPECT_EQ(dbs, dbp);
    double acc = 0.25, bacc = -1.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += dy(r, out - 1) * x(r, in - 1);
      bacc += dy(r, out - 1);
    }
    EXPECT_NEAR(dws(out - 1, in - 1), acc, 1e-12);
    EXPECT_NEAR(dbs[out - 1], bacc, 1e-12);
  }
}

TEST_F(Kernels, InputGradientMatchesNaiveAndIsBitIdentical) {
  Rng rng(3);
  for (const auto& [n, in, out] : kShapes) {
    const auto w = testing::random_matrix(out, in, rng);
    const auto dy = testing::random_matrix(n, out, rng);
    Matrix dxs(n, in), dxp(n, in);
    kernels::serial::linear_input_grad(dy, w, dxs);
    kernels::parallel::linear_input_grad(dy, w, dxp);
    EXPECT_EQ(dxs, dxp);
    double acc = 0.0;
    for (std::size_t o = 0; o < out; ++o) acc += dy(0, o) * w(o, 1);
    EXPECT_NEAR(dxs(0, 1), acc, 1e-12);
  }
}

TEST_F(Kernels, PairPotentialMatchesNaiveAndIsBitIdentical) {
  Rng rng(4);
  for (std::size_t n : {2u, 9u, 70u}) {
    const auto z = testing::random_matrix(n, 40, rng);
    std::vector<int> classes(n);
    for (auto& c : classes) c = static_cast<int>(rng.uniform_below(2));
    for (auto kind : {PairPotential::log_distance, PairPotential::distance}) {
      std::vector<double> rs(n), rp(n);
      Matrix dzs(n, 40), dzp(n, 40);
      kernels::serial::pair_potential(z, classes, kind, 1e-8, 0.5, rs, &dzs);
      kernels::parallel::pair_potential(z, classes, kind, 1e-8, 0.5, rp, &dzp);
      EXPECT_EQ(rs, rp);
      EXPECT_EQ(dzs, dzp);
      double total = 0.0, row_total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        row_total += rs[i];
        for (std::size_t j = i + 1; j < n; ++j) {
          double d = 0.0;
          for (std::size_t k = 0; k < 40; ++k) d += (z(i, k) - z(j, k)) * (z(i, k) - z(j, k));
          d = std::sqrt(d);
          const double s = classes[i] == classes[j] ? 1.0 : -1.0;
          total += s * (kind == PairPotential::log_distance ? std::log(d + 1e-8) : d);
        }
      }
      EXPECT_NEAR(row_total, total, 1e-10);
    }
  }
}

TEST_F(Kernels, PairPotentialWithoutGradient) {
  Rng rng(5);
  const auto z = testing::random_matrix(5, 3, rng);
  const std::vector<int> classes{0, 1, 0, 1, 1};
  std::vector<double> a(5), b(5);
  Matrix dz(5, 3);
  kernels::pair_potential(z, classes, PairPotential::distance, 1e-8, 1.0, a, nullptr);
  kernels::pair_potential(z, classes, PairPotential::distance, 1e-8, 1.0, b, &dz);
  EXPECT_EQ(a, b);
}

TEST(KernelInfo, ThreadsReported) {
  EXPECT_GE(kernels::max_threads(), 1);
#ifdef XDT_HAVE_OPENMP
  EXPECT_TRUE(kernels::openmp_enabled());
#endif
}

}  // namespace
}  // namespace xdt
