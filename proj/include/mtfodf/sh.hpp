#ifndef MTFODF_SH_HPP
#define MTFODF_SH_HPP

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "mtfodf/errors.hpp"

namespace mtfodf::sh {

// Unit direction on the sphere. Antipodal pairs (+v, -v) are equivalent for
// every even-order expansion in this toolkit.
struct Direction {
  double x = 0, y = 0, z = 1;

  Direction() = default;
  Direction(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}
  explicit Direction(const Eigen::Vector3d& v) : x(v.x()), y(v.y()), z(v.z()) {}

  Eigen::Vector3d vec() const { return {x, y, z}; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }

  // normalize an arbitrary nonzero vector
  static Direction unit(double x, double y, double z);
  static Direction unit(const Eigen::Vector3d& v) { return unit(v.x(), v.y(), v.z()); }
};

inline double dot(const Direction& a, const Direction& b) {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

// angle between axes (antipodally symmetric), degrees in [0, 90]
double axis_angle_deg(const Direction& a, const Direction& b);

// number of real even-order SH coefficients up to `order`
int n_coeffs(int order);

// flat position of (l, m), l even, m in -l..l; within each l the index runs m = -l..l
int coeff_index(int l, int m);

// l of flat position j
int coeff_order(int j);

void check_order(int order);

// Real, antipodally symmetric (even-order) SH coefficient vector.
struct Coefficients {
  int order = 0;
  Eigen::VectorXd values;

  Coefficients() : values(Eigen::VectorXd::Zero(1)) {}
  Coefficients(int order_, Eigen::VectorXd values_);

  static Coefficients zeros(int order);

  double& operator()(int l, int m) { return values[coeff_index(l, m)]; }
  double operator()(int l, int m) const { return values[coeff_index(l, m)]; }
};

// Direction set for amplitude sampling, CSD constraints and peak extraction.
struct SphereGrid {
  std::vector<Direction> directions;
  std::optional<Eigen::VectorXd> weights; // quadrature weights, sum 4*pi

  size_t size() const { return directions.size(); }

  // geodesic subdivision of the icosahedron; 10*freq^2 + 2 vertices,
  // antipodally symmetric for even freq
  static SphereGrid icosphere(int freq);

  // n spiral points on the upper hemisphere; no antipodal duplicates
  static SphereGrid fibonacci_hemisphere(int n);

  // keep one representative per antipodal pair (z > 0 preferred)
  SphereGrid hemisphere() const;
};

// default dense grid for peak extraction / Parseval checks (freq-10 icosphere, 1002 dirs)
const SphereGrid& dense_grid();

// Basis matrix: row per direction, column per (l, m) coefficient.
// Directions must be unit within 1e-9 on the norm.
Eigen::MatrixXd eval_basis(const std::vector<Direction>& dirs, int order);

// single-direction basis row
Eigen::VectorXd eval_basis_row(const Direction& dir, int order);

// Least squares fit, optional Laplace-Beltrami penalty reg * |diag(l(l+1)) c|^2.
// reg = 0 requires a full-rank system with at least n_coeffs(order) samples.
Coefficients fit_coefficients(const Eigen::VectorXd& signal, const std::vector<Direction>& dirs,
                              int order, double regularization = 0.0);

// amplitudes of the expansion on a grid: eval_basis(grid) * c
Eigen::VectorXd sample_amplitudes(const Coefficients& c, const SphereGrid& grid);

double amplitude_at(const Coefficients& c, const Direction& dir);

// SH expansion of an (antipodally symmetrized) delta function at `dir`, damped
// per order by exp(-apodization * l(l+1)).
Coefficients delta_expansion(const Direction& dir, double weight, int order, double apodization);

struct Peak {
  Direction direction;
  double amplitude;
};

// Local maxima of the expansion: grid argmax candidates refined by gradient
// ascent, antipodal duplicates merged, sorted by descending amplitude.
std::vector<Peak> extract_peaks(const Coefficients& c, const SphereGrid& grid,
                                double min_separation_deg = 25.0,
                                double relative_threshold = 0.1);

} // namespace mtfodf::sh

#endif
