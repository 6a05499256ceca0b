#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "mtfodf/rng.hpp"
#include "mtfodf/sh.hpp"

using namespace mtfodf;
using namespace mtfodf::sh;

namespace {

std::vector<Direction> random_dirs(int n, uint64_t seed) {
  Rng rng(seed);
  std::vector<Direction> dirs;
  while (static_cast<int>(dirs.size()) < n) {
    Eigen::Vector3d v(rng.normal(), rng.normal(), rng.normal());
    if (v.norm() > 1e-3) dirs.push_back(Direction::unit(v));
  }
  return dirs;
}

Eigen::VectorXd random_coeffs(int order, uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd c(n_coeffs(order));
  for (int i = 0; i < c.size(); ++i) c[i] = rng.normal();
  return c;
}

} // namespace

TEST_CASE("coefficient index map is total and bijective for order 8") {
  CHECK(n_coeffs(8) == 45);
  std::vector<bool> seen(45, false);
  for (int l = 0; l <= 8; l += 2)
    for (int m = -l; m <= l; ++m) {
      int j = coeff_index(l, m);
      REQUIRE(j >= 0);
      REQUIRE(j < 45);
      CHECK(!seen[j]);
      seen[j] = true;
      CHECK(coeff_order(j) == l);
    }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("Y00 column is the constant 1/(2 sqrt(pi))") {
  auto dirs = random_dirs(20, 42);
  Eigen::MatrixXd b = eval_basis(dirs, 8);
  for (int i = 0; i < b.rows(); ++i) CHECK(b(i, 0) == doctest::Approx(0.28209479177387814).epsilon(1e-12));
}

TEST_CASE("basis at the +z pole: m != 0 vanishes, (l,0) = sqrt((2l+1)/4pi)") {
  Eigen::VectorXd row = eval_basis_row(Direction(0, 0, 1), 8);
  for (int l = 0; l <= 8; l += 2)
    for (int m = -l; m <= l; ++m) {
      double expected = m == 0 ? std::sqrt((2 * l + 1) / (4.0 * M_PI)) : 0.0;
      CHECK(row[coeff_index(l, m)] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("non-unit directions are rejected") {
  std::vector<Direction> dirs = {Direction(0, 0, 2)};
  CHECK_THROWS_AS(eval_basis(dirs, 4), FormatError);
}

TEST_CASE("basis rows depend only on the direction, not list position") {
  auto dirs = random_dirs(12, 7);
  Eigen::MatrixXd b = eval_basis(dirs, 8);
  std::reverse(dirs.begin(), dirs.end());
  Eigen::MatrixXd br = eval_basis(dirs, 8);
  for (int i = 0; i < b.rows(); ++i)
    CHECK((b.row(i) - br.row(b.rows() - 1 - i)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("basis Gram matrix at 100 random directions is well conditioned") {
  auto dirs = random_dirs(100, 1234);
  Eigen::MatrixXd b = eval_basis(dirs, 8);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.transpose() * b);
  double cond = es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff();
  CHECK(cond > 1.0);
  CHECK(cond < 1e3);
}

TEST_CASE("constant signal fits to a pure DC coefficient") {
  auto grid = SphereGrid::fibonacci_hemisphere(90);
  double k = 3.7;
  Eigen::VectorXd signal = Eigen::VectorXd::Constant(90, k);
  Coefficients c = fit_coefficients(signal, grid.directions, 8, 0.0);
  CHECK(c(0, 0) == doctest::Approx(k * 2.0 * std::sqrt(M_PI)).epsilon(1e-10));
  for (int j = 1; j < 45; ++j) CHECK(std::abs(c.values[j]) < 1e-10);
}

TEST_CASE("noiseless round trip recovers order-8 coefficients to 1e-8") {
  auto grid = SphereGrid::fibonacci_hemisphere(90);
  for (uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Eigen::VectorXd truth = random_coeffs(8, seed);
    Eigen::VectorXd signal = eval_basis(grid.directions, 8) * truth;
    Coefficients fit = fit_coefficients(signal, grid.directions, 8, 0.0);
    CHECK((fit.values - truth).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("Laplace-Beltrami regularization shrinks the l=8 block toward zero") {
  auto grid = SphereGrid::fibonacci_hemisphere(90);
  Eigen::VectorXd truth = random_coeffs(8, 99);
  Eigen::VectorXd signal = eval_basis(grid.directions, 8) * truth;
  Coefficients plain = fit_coefficients(signal, grid.directions, 8, 0.0);
  Coefficients reg = fit_coefficients(signal, grid.directions, 8, 1e-3);
  double n_plain = 0, n_reg = 0;
  for (int m = -8; m <= 8; ++m) {
    n_plain += plain(8, m) * plain(8, m);
    n_reg += reg(8, m) * reg(8, m);
  }
  CHECK(n_reg < n_plain);
  CHECK(n_reg > 0.0);
}

TEST_CASE("rank-deficient unregularized fit raises a singularity error") {
  auto dirs = random_dirs(20, 5);
  Eigen::VectorXd signal = Eigen::VectorXd::Ones(20);
  CHECK_THROWS_WITH_AS(fit_coefficients(signal, dirs, 8, 0.0),
                       doctest::Contains("order 8"), NumericError);
}

TEST_CASE("fit is linear in the signal") {
  auto grid = SphereGrid::fibonacci_hemisphere(64);
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd s1(64), s2(64);
    for (int i = 0; i < 64; ++i) {
      s1[i] = rng.normal();
      s2[i] = rng.normal();
    }
    double a = rng.uniform(-2, 2), b = rng.uniform(-2, 2);
    Coefficients fa = fit_coefficients(s1, grid.directions, 6, 1e-3);
    Coefficients fb = fit_coefficients(s2, grid.directions, 6, 1e-3);
    Coefficients fab = fit_coefficients(a * s1 + b * s2, grid.directions, 6, 1e-3);
    CHECK((fab.values - a * fa.values - b * fb.values).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("sample_amplitudes: DC-only and zero coefficients") {
  const SphereGrid& grid = dense_grid();
  Coefficients dc = Coefficients::zeros(8);
  dc(0, 0) = 2.0 * std::sqrt(M_PI);
  Eigen::VectorXd amps = sample_amplitudes(dc, grid);
  CHECK((amps.array() - 1.0).abs().maxCoeff() < 1e-12);
  Eigen::VectorXd zero = sample_amplitudes(Coefficients::zeros(8), grid);
  CHECK(zero.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("apodized delta at +z peaks at +z, above every equatorial direction") {
  Coefficients c = delta_expansion(Direction(0, 0, 1), 1.0, 8, 0.02);
  double at_pole = amplitude_at(c, Direction(0, 0, 1));
  for (int i = 0; i < 36; ++i) {
    double phi = i * M_PI / 18.0;
    CHECK(at_pole > amplitude_at(c, Direction(std::cos(phi), std::sin(phi), 0)));
  }
}

TEST_CASE("delta_expansion basics") {
  Coefficients z0 = delta_expansion(Direction(0, 0, 1), 0.0, 8, 0.02);
  CHECK(z0.values.cwiseAbs().maxCoeff() == 0.0);

  Coefficients up = delta_expansion(Direction(0, 0, 1), 1.0, 8, 0.0);
  Coefficients down = delta_expansion(Direction(0, 0, -1), 1.0, 8, 0.0);
  CHECK((up.values - down.values).cwiseAbs().maxCoeff() < 1e-14);

  // per-order damping factor exp(-a l(l+1)) relative to the l=0 block
  Direction d = Direction::unit(1, 2, 3);
  Coefficients plain = delta_expansion(d, 1.0, 8, 0.0);
  Coefficients apod = delta_expansion(d, 1.0, 8, 0.1);
  CHECK(apod(0, 0) == doctest::Approx(plain(0, 0)).epsilon(1e-14));
  for (int m = -8; m <= 8; ++m)
    CHECK(apod(8, m) == doctest::Approx(plain(8, m) * std::exp(-7.2)).epsilon(1e-12));
}

TEST_CASE("delta is linear in its weight") {
  Direction d = Direction::unit(1, -1, 0.5);
  Coefficients w1 = delta_expansion(d, 1.0, 8, 0.02);
  Coefficients w3 = delta_expansion(d, 3.0, 8, 0.02);
  CHECK((w3.values - 3.0 * w1.values).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("Parseval: grid mean of amplitude^2 matches |c|^2 / 4pi within 1%") {
  const SphereGrid& grid = dense_grid();
  REQUIRE(grid.size() >= 724);
  for (uint64_t seed : {10u, 20u, 30u}) {
    Eigen::VectorXd c = random_coeffs(8, seed);
    Eigen::VectorXd amps = sample_amplitudes(Coefficients(8, c), grid);
    double mean_sq = amps.squaredNorm() / amps.size();
    double expected = c.squaredNorm() / (4.0 * M_PI);
    CHECK(mean_sq == doctest::Approx(expected).epsilon(0.01));
  }
}

TEST_CASE("extract_peaks finds a single apodized delta within 2 degrees") {
  Direction truth = Direction::unit(0.2, -0.1, 0.97);
  Coefficients c = delta_expansion(truth, 1.0, 8, 0.02);
  auto peaks = extract_peaks(c, dense_grid());
  REQUIRE(peaks.size() == 1);
  CHECK(axis_angle_deg(peaks[0].direction, truth) < 2.0);

  // dense-grid argmax oracle agrees
  Eigen::VectorXd amps = sample_amplitudes(c, dense_grid());
  int arg = 0;
  amps.maxCoeff(&arg);
  CHECK(axis_angle_deg(peaks[0].direction, dense_grid().directions[arg]) < 5.0);
}

TEST_CASE("two equal deltas 90 degrees apart give exactly two peaks") {
  Direction d1(0, 0, 1), d2(1, 0, 0);
  Coefficients c1 = delta_expansion(d1, 1.0, 8, 0.02);
  Coefficients c2 = delta_expansion(d2, 1.0, 8, 0.02);
  Coefficients sum(8, c1.values + c2.values);
  auto peaks = extract_peaks(sum, dense_grid());
  REQUIRE(peaks.size() == 2);
  for (const auto& p : peaks) {
    double best = std::min(axis_angle_deg(p.direction, d1), axis_angle_deg(p.direction, d2));
    CHECK(best < 5.0);
  }
}

TEST_CASE("DC-only fODF yields no peaks; nonpositive fODF yields none either") {
  Coefficients dc = Coefficients::zeros(8);
  dc(0, 0) = 1.0;
  CHECK(extract_peaks(dc, dense_grid()).empty());
  dc(0, 0) = -1.0;
  CHECK(extract_peaks(dc, dense_grid()).empty());
}

TEST_CASE("grids satisfy their own contracts") {
  const SphereGrid& g = dense_grid();
  CHECK(g.size() == 1002);
  for (const auto& d : g.directions) CHECK(std::abs(d.norm() - 1.0) < 1e-12);
  // antipodally symmetric, so the hemisphere keeps exactly half
  CHECK(g.hemisphere().size() == 501);

  auto h = SphereGrid::fibonacci_hemisphere(90);
  CHECK(h.size() == 90);
  for (size_t i = 0; i < h.size(); ++i)
    for (size_t j = i + 1; j < h.size(); ++j)
      CHECK(std::abs(dot(h.directions[i], h.directions[j])) < 1.0 - 1e-8);
}
