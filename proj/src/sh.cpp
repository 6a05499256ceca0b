#include "mtfodf/sh.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace mtfodf::sh {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Normalized associated Legendre P~_l^m(x) for m..lmax at fixed m, with the
// spherical normalization sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) and
// Condon-Shortley phase. Stable three-term recurrence in l.
void legendre_norm(Eigen::VectorXd& out, int lmax, int m, double x) {
  out.setZero(lmax + 1);
  double x2 = x * x;
  if (m > 0 && x2 >= 1.0) return; // (1-x^2)^(m/2) vanishes at the poles
  // seed P~_m^m = (-1)^m sqrt((2m+1)/(4pi) * (2m-1)!!/(2m)!!) (1-x^2)^(m/2)
  double f0 = 2.0 * m + 1.0;
  for (int k = 1; k <= m; ++k) f0 *= (1.0 - x2) * (2.0 * k - 1.0) / (2.0 * k);
  double pmm = (m & 1 ? -1.0 : 1.0) * std::sqrt(f0 / (4.0 * kPi));
  out[m] = pmm;
  if (lmax == m) return;
  double f = std::sqrt(2.0 * m + 3.0);
  out[m + 1] = x * f * pmm;
  for (int l = m + 2; l <= lmax; ++l) {
    out[l] = x * out[l - 1] - out[l - 2] / f;
    f = std::sqrt((4.0 * l * l - 1.0) / (double(l) * l - double(m) * m));
    out[l] *= f;
  }
}

void check_unit(const Direction& d) {
  if (std::abs(d.norm() - 1.0) > 1e-9)
    throw FormatError("direction (" + std::to_string(d.x) + ", " + std::to_string(d.y) + ", " +
                      std::to_string(d.z) + ") is not unit-norm; normalize it first");
}

} // namespace

Direction Direction::unit(double x, double y, double z) {
  double n = std::sqrt(x * x + y * y + z * z);
  if (n < 1e-300) throw FormatError("cannot normalize a zero direction vector");
  return {x / n, y / n, z / n};
}

double axis_angle_deg(const Direction& a, const Direction& b) {
  double c = std::abs(dot(a, b)) / (a.norm() * b.norm());
  c = std::min(1.0, c);
  return std::acos(c) * 180.0 / kPi;
}

void check_order(int order) {
  if (order < 0 || order > 8 || order % 2 != 0)
    throw ConfigError("SH order must be one of {0, 2, 4, 6, 8}, got " + std::to_string(order));
}

int n_coeffs(int order) { return (order + 1) * (order + 2) / 2; }

int coeff_index(int l, int m) { return l * (l + 1) / 2 + m; }

int coeff_order(int j) {
  for (int l = 0;; l += 2)
    if (j <= coeff_index(l, l)) return l;
}

Coefficients::Coefficients(int order_, Eigen::VectorXd values_) : order(order_), values(std::move(values_)) {
  check_order(order);
  if (values.size() != n_coeffs(order))
    throw FormatError("SH coefficient vector of order " + std::to_string(order) + " must have " +
                      std::to_string(n_coeffs(order)) + " entries, got " + std::to_string(values.size()));
}

Coefficients Coefficients::zeros(int order) {
  check_order(order);
  return Coefficients(order, Eigen::VectorXd::Zero(n_coeffs(order)));
}

Eigen::VectorXd eval_basis_row(const Direction& dir, int order) {
  check_order(order);
  check_unit(dir);
  Eigen::VectorXd row(n_coeffs(order));
  double ct = std::clamp(dir.z, -1.0, 1.0);
  double phi = std::atan2(dir.y, dir.x);
  Eigen::VectorXd leg;
  legendre_norm(leg, order, 0, ct);
  for (int l = 0; l <= order; l += 2) row[coeff_index(l, 0)] = leg[l];
  for (int m = 1; m <= order; ++m) {
    legendre_norm(leg, order, m, ct);
    double cs = std::sqrt(2.0) * std::cos(m * phi);
    double sn = std::sqrt(2.0) * std::sin(m * phi);
    for (int l = (m % 2 ? m + 1 : m); l <= order; l += 2) {
      row[coeff_index(l, m)] = cs * leg[l];
      row[coeff_index(l, -m)] = sn * leg[l];
    }
  }
  return row;
}

Eigen::MatrixXd eval_basis(const std::vector<Direction>& dirs, int order) {
  if (dirs.empty()) throw FormatError("eval_basis: empty direction list");
  Eigen::MatrixXd b(dirs.size(), n_coeffs(order));
  for (size_t i = 0; i < dirs.size(); ++i) b.row(i) = eval_basis_row(dirs[i], order);
  return b;
}

Coefficients fit_coefficients(const Eigen::VectorXd& signal, const std::vector<Direction>& dirs,
                              int order, double regularization) {
  check_order(order);
  if (regularization < 0) throw ConfigError("SH fit regularization must be nonnegative");
  if (signal.size() != static_cast<Eigen::Index>(dirs.size()))
    throw FormatError("SH fit: signal has " + std::to_string(signal.size()) + " samples but " +
                      std::to_string(dirs.size()) + " directions were given");
  int nc = n_coeffs(order);
  Eigen::MatrixXd b = eval_basis(dirs, order);
  if (regularization == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(b);
    qr.setThreshold(1e-10);
    if (qr.rank() < nc)
      throw NumericError("SH fit of order " + std::to_string(order) + " is rank-deficient: " +
                         std::to_string(nc) + " coefficients but system rank " +
                         std::to_string(qr.rank()) + " from " + std::to_string(dirs.size()) +
                         " directions");
    return Coefficients(order, qr.solve(signal));
  }
  Eigen::VectorXd lb(nc);
  for (int j = 0; j < nc; ++j) {
    double l = coeff_order(j);
    lb[j] = l * (l + 1.0);
  }
  Eigen::MatrixXd m = b.transpose() * b;
  m.diagonal() += regularization * lb.array().square().matrix();
  return Coefficients(order, m.ldlt().solve(b.transpose() * signal));
}

Eigen::VectorXd sample_amplitudes(const Coefficients& c, const SphereGrid& grid) {
  if (grid.directions.empty()) throw FormatError("sample_amplitudes: empty grid");
  if (c.values.size() != n_coeffs(c.order))
    throw FormatError("sample_amplitudes: coefficient vector length " + std::to_string(c.values.size()) +
                      " does not match order " + std::to_string(c.order));
  return eval_basis(grid.directions, c.order) * c.values;
}

double amplitude_at(const Coefficients& c, const Direction& dir) {
  return eval_basis_row(dir, c.order).dot(c.values);
}

Coefficients delta_expansion(const Direction& dir, double weight, int order, double apodization) {
  if (weight < 0) throw ConfigError("delta_expansion: weight must be nonnegative");
  if (apodization < 0) throw ConfigError("delta_expansion: apodization must be nonnegative");
  check_unit(dir);
  Eigen::VectorXd row = eval_basis_row(dir, order);
  Eigen::VectorXd c(row.size());
  for (int j = 0; j < row.size(); ++j) {
    double l = coeff_order(j);
    c[j] = weight * row[j] * std::exp(-apodization * l * (l + 1.0));
  }
  return Coefficients(order, std::move(c));
}

namespace {

// classic icosahedron vertex/face tables
const double kGold = (1.0 + std::sqrt(5.0)) / 2.0;
const double kIcoVerts[12][3] = {
    {-1, kGold, 0}, {1, kGold, 0}, {-1, -kGold, 0}, {1, -kGold, 0},
    {0, -1, kGold}, {0, 1, kGold}, {0, -1, -kGold}, {0, 1, -kGold},
    {kGold, 0, -1}, {kGold, 0, 1}, {-kGold, 0, -1}, {-kGold, 0, 1}};
const int kIcoFaces[20][3] = {
    {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
    {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
    {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
    {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};

} // namespace

SphereGrid SphereGrid::icosphere(int freq) {
  if (freq < 1) throw ConfigError("icosphere frequency must be >= 1");
  std::vector<Eigen::Vector3d> pts;
  pts.reserve(20 * (freq + 1) * (freq + 2) / 2);
  for (const auto& f : kIcoFaces) {
    Eigen::Vector3d a(kIcoVerts[f[0]]), b(kIcoVerts[f[1]]), c(kIcoVerts[f[2]]);
    for (int i = 0; i <= freq; ++i)
      for (int j = 0; j <= freq - i; ++j) {
        int k = freq - i - j;
        Eigen::Vector3d p = (i * a + j * b + k * c) / freq;
        pts.push_back(p.normalized());
      }
  }
  // shared edge/vertex points appear once per adjoining face; drop duplicates
  SphereGrid g;
  for (const auto& p : pts) {
    bool dup = false;
    for (const auto& q : g.directions)
      if (p.x() * q.x + p.y() * q.y + p.z() * q.z > 1.0 - 1e-10) {
        dup = true;
        break;
      }
    if (!dup) g.directions.emplace_back(p);
  }
  return g;
}

SphereGrid SphereGrid::fibonacci_hemisphere(int n) {
  if (n < 1) throw ConfigError("fibonacci_hemisphere needs n >= 1");
  SphereGrid g;
  g.directions.reserve(n);
  const double ga = kPi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    double z = (i + 0.5) / n;
    double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    double phi = ga * i;
    g.directions.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
  }
  return g;
}

SphereGrid SphereGrid::hemisphere() const {
  SphereGrid g;
  for (const auto& d : directions) {
    Direction r = d;
    if (r.z < 0 || (r.z == 0 && (r.y < 0 || (r.y == 0 && r.x < 0)))) r = {-r.x, -r.y, -r.z};
    bool dup = false;
    for (const auto& q : g.directions)
      if (std::abs(dot(r, q)) > 1.0 - 1e-10) {
        dup = true;
        break;
      }
    if (!dup) g.directions.push_back(r);
  }
  return g;
}

const SphereGrid& dense_grid() {
  static const SphereGrid g = SphereGrid::icosphere(10);
  return g;
}

namespace {

// a few tangent-plane ascent steps with a finite-difference surface gradient
Direction refine_peak(const Coefficients& c, Direction d, double& amp) {
  const double h = 1e-5;
  double step = 0.02;
  amp = amplitude_at(c, d);
  for (int it = 0; it < 60 && step > 1e-8; ++it) {
    Eigen::Vector3d v = d.vec();
    Eigen::Vector3d e1 = v.unitOrthogonal();
    Eigen::Vector3d e2 = v.cross(e1);
    double g1 = (amplitude_at(c, Direction::unit(v + h * e1)) -
                 amplitude_at(c, Direction::unit(v - h * e1))) / (2 * h);
    double g2 = (amplitude_at(c, Direction::unit(v + h * e2)) -
                 amplitude_at(c, Direction::unit(v - h * e2))) / (2 * h);
    Eigen::Vector3d grad = g1 * e1 + g2 * e2;
    if (grad.norm() < 1e-12) break;
    Direction cand = Direction::unit(v + step * grad.normalized());
    double a = amplitude_at(c, cand);
    if (a > amp) {
      d = cand;
      amp = a;
    } else {
      step *= 0.5;
    }
  }
  return d;
}

} // namespace

std::vector<Peak> extract_peaks(const Coefficients& c, const SphereGrid& grid,
                                double min_separation_deg, double relative_threshold) {
  size_t n = grid.size();
  if (n < 362) throw ConfigError("extract_peaks needs a dense grid (>= 362 directions), got " + std::to_string(n));
  if (relative_threshold < 0 || relative_threshold > 1)
    throw ConfigError("extract_peaks relative_threshold must be in [0, 1]");
  Eigen::VectorXd amps = sample_amplitudes(c, grid);
  double max_amp = amps.maxCoeff();
  if (max_amp <= 0) return {};

  // strict local maxima among the 8 nearest grid neighbours
  const int k = 8;
  std::vector<Peak> cands;
  for (size_t i = 0; i < n; ++i) {
    if (amps[i] < relative_threshold * max_amp) continue;
    std::vector<std::pair<double, size_t>> near;
    near.reserve(n);
    for (size_t j = 0; j < n; ++j)
      if (j != i) near.push_back({dot(grid.directions[i], grid.directions[j]), j});
    std::partial_sort(near.begin(), near.begin() + k, near.end(),
                      [](auto& a, auto& b) { return a.first > b.first; });
    bool strict_max = true;
    for (int t = 0; t < k; ++t)
      if (amps[near[t].second] >= amps[i]) {
        strict_max = false;
        break;
      }
    if (strict_max) {
      double a;
      Direction d = refine_peak(c, grid.directions[i], a);
      if (d.z < 0 || (d.z == 0 && (d.y < 0 || (d.y == 0 && d.x < 0)))) d = {-d.x, -d.y, -d.z};
      cands.push_back({d, a});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Peak& a, const Peak& b) { return a.amplitude > b.amplitude; });

  std::vector<Peak> peaks;
  for (const auto& p : cands) {
    if (!peaks.empty() && p.amplitude < relative_threshold * peaks.front().amplitude) continue;
    bool merged = false;
    for (const auto& q : peaks)
      if (axis_angle_deg(p.direction, q.direction) < min_separation_deg) {
        merged = true;
        break;
      }
    if (!merged) peaks.push_back(p);
  }
  return peaks;
}

} // namespace mtfodf::sh
