#include "mtfodf/csd.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

namespace mtfodf::csd {

namespace {

constexpr double kPi = 3.14159265358979323846;

// rotation taking `axis` onto +z
Eigen::Matrix3d align_to_z(const sh::Direction& axis) {
  Eigen::Vector3d a = axis.vec().normalized();
  return Eigen::Quaterniond::FromTwoVectors(a, Eigen::Vector3d::UnitZ()).toRotationMatrix();
}

} // namespace

void ResponseFunction::check() const {
  if (zonal.size() < 1) throw ConfigError("response function has no coefficients");
  if (!zonal.allFinite()) throw NumericError("response function contains non-finite coefficients");
  if (zonal[0] <= 0) throw NumericError("response function r_0 must be positive, got " + std::to_string(zonal[0]));
}

std::string ResponseFunction::to_json() const {
  nlohmann::ordered_json j;
  std::vector<int> orders;
  for (int l = 0; l <= order(); l += 2) orders.push_back(l);
  j["orders"] = orders;
  j["coefficients"] = std::vector<double>(zonal.data(), zonal.data() + zonal.size());
  return j.dump(2) + "\n";
}

ResponseFunction ResponseFunction::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    auto coeffs = j.at("coefficients").get<std::vector<double>>();
    ResponseFunction r;
    r.zonal = Eigen::Map<Eigen::VectorXd>(coeffs.data(), coeffs.size());
    r.check();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("response function: ") + e.what());
  }
}

ResponseEstimate estimate_response(const std::vector<Eigen::VectorXd>& signals,
                                   const std::vector<sh::Direction>& dirs,
                                   const std::vector<sh::Direction>& axes, int order) {
  if (signals.empty()) throw ConfigError("estimate_response: no single-fiber voxels supplied");
  if (signals.size() != axes.size())
    throw ConfigError("estimate_response: " + std::to_string(signals.size()) + " signals but " +
                      std::to_string(axes.size()) + " axes");
  sh::check_order(order);

  Eigen::VectorXd zonal_sum = Eigen::VectorXd::Zero(order / 2 + 1);
  double off_axis = 0, total = 0;
  for (size_t v = 0; v < signals.size(); ++v) {
    Eigen::Matrix3d rot = align_to_z(axes[v]);
    std::vector<sh::Direction> rotated(dirs.size());
    for (size_t i = 0; i < dirs.size(); ++i) rotated[i] = sh::Direction::unit(rot * dirs[i].vec());
    sh::Coefficients fit = sh::fit_coefficients(signals[v], rotated, order, 0.0);
    for (int l = 0; l <= order; l += 2) zonal_sum[l / 2] += fit(l, 0);
    for (int j = 0; j < fit.values.size(); ++j) {
      double e = fit.values[j] * fit.values[j];
      total += e;
      int l = sh::coeff_order(j);
      if (j != sh::coeff_index(l, 0)) off_axis += e;
    }
  }

  ResponseEstimate est;
  est.response.zonal = zonal_sum / static_cast<double>(signals.size());
  est.response.check();
  est.m_nonzero_energy = total > 0 ? off_axis / total : 0.0;
  est.n_voxels = static_cast<int>(signals.size());
  return est;
}

Eigen::MatrixXd convolution_matrix(const ResponseFunction& response,
                                   const std::vector<sh::Direction>& dirs, int order) {
  sh::check_order(order);
  if (response.order() < order)
    throw ConfigError("response function order " + std::to_string(response.order()) +
                      " below requested order " + std::to_string(order));
  Eigen::MatrixXd basis = sh::eval_basis(dirs, order);
  for (int j = 0; j < basis.cols(); ++j) {
    int l = sh::coeff_order(j);
    basis.col(j) *= response.zonal[l / 2] * std::sqrt(4.0 * kPi / (2.0 * l + 1.0));
  }
  return basis;
}

namespace {

struct CsdWorkspace {
  Eigen::MatrixXd conv;       // n_dirs x n_coeffs
  Eigen::MatrixXd ata;        // normal matrix
  Eigen::MatrixXd constraint; // constraint-grid basis
  double lambda_sq = 0;
  int nc = 0;
  int nc_init = 0;
  Eigen::MatrixXd init_basis; // low-order basis at the signal dirs
  Eigen::VectorXd init_scale; // per-coefficient deconvolution factors for the init
};

CsdWorkspace make_workspace(const std::vector<sh::Direction>& dirs, const ResponseFunction& response,
                            const sh::SphereGrid& constraint_grid, const CsdOptions& opts) {
  response.check();
  if (opts.lambda <= 0) throw ConfigError("csd_fit: lambda must be positive");
  if (constraint_grid.size() == 0) throw ConfigError("csd_fit: empty constraint grid");

  CsdWorkspace w;
  w.nc = sh::n_coeffs(8);
  w.conv = convolution_matrix(response, dirs, 8);
  w.ata = w.conv.transpose() * w.conv;
  w.constraint = sh::eval_basis(constraint_grid.directions, 8);
  double scale = opts.lambda * w.conv.norm() / w.constraint.norm();
  w.lambda_sq = scale * scale;

  w.nc_init = sh::n_coeffs(opts.init_order);
  w.init_basis = sh::eval_basis(dirs, opts.init_order);
  w.init_scale.resize(w.nc_init);
  double lam0 = response.zonal[0] * std::sqrt(4.0 * kPi);
  for (int j = 0; j < w.nc_init; ++j) {
    int l = sh::coeff_order(j);
    double lam = response.zonal[l / 2] * std::sqrt(4.0 * kPi / (2.0 * l + 1.0));
    w.init_scale[j] = std::abs(lam) > 1e-10 * std::abs(lam0) ? 1.0 / lam : 0.0;
  }
  return w;
}

CsdResult csd_fit_ws(const Eigen::VectorXd& signal, const CsdWorkspace& w, const CsdOptions& opts) {
  if (signal.size() != w.conv.rows())
    throw FormatError("csd_fit: signal has " + std::to_string(signal.size()) + " samples but " +
                      std::to_string(w.conv.rows()) + " directions were given");

  // initialization: unconstrained low-order deconvolution
  Eigen::VectorXd low = (w.init_basis.transpose() * w.init_basis)
                            .ldlt()
                            .solve(w.init_basis.transpose() * signal);
  Eigen::VectorXd f = Eigen::VectorXd::Zero(w.nc);
  for (int j = 0; j < w.nc_init; ++j) f[j] = low[j] * w.init_scale[j];

  double mean_init = (w.constraint * f).mean();
  double threshold = opts.tau * mean_init;

  Eigen::VectorXd atb = w.conv.transpose() * signal;
  double ridge = 1e-12 * w.ata.trace() / w.nc;

  std::vector<int> prev_neg;
  bool converged = false;
  int iter = 0;
  for (; iter < opts.max_iter; ++iter) {
    Eigen::VectorXd amps = w.constraint * f;
    std::vector<int> neg;
    for (int i = 0; i < amps.size(); ++i)
      if (amps[i] < threshold) neg.push_back(i);
    if (iter > 0 && neg == prev_neg) {
      converged = true;
      break;
    }
    Eigen::MatrixXd m = w.ata;
    m.diagonal().array() += ridge;
    for (int i : neg) m.selfadjointView<Eigen::Lower>().rankUpdate(w.constraint.row(i).transpose(), w.lambda_sq);
    f = m.selfadjointView<Eigen::Lower>().ldlt().solve(atb);
    prev_neg = std::move(neg);
  }
  return {sh::Coefficients(8, std::move(f)), converged, iter};
}

} // namespace

CsdResult csd_fit(const Eigen::VectorXd& signal, const std::vector<sh::Direction>& dirs,
                  const ResponseFunction& response, const sh::SphereGrid& constraint_grid,
                  const CsdOptions& opts) {
  CsdWorkspace w = make_workspace(dirs, response, constraint_grid, opts);
  return csd_fit_ws(signal, w, opts);
}

io::Volume4D csd_fit_volume(const io::Volume4D& attenuation, const std::vector<sh::Direction>& dirs,
                            const ResponseFunction& response, const io::Volume4D& mask,
                            const CsdOptions& opts, int* n_unconverged) {
  attenuation.check_invariants();
  if (!attenuation.same_grid(mask)) throw FormatError("csd_fit_volume: mask grid mismatch");
  if (attenuation.nv != static_cast<int>(dirs.size()))
    throw FormatError("csd_fit_volume: volume has " + std::to_string(attenuation.nv) +
                      " frames but " + std::to_string(dirs.size()) + " directions");
  CsdWorkspace w = make_workspace(dirs, response, default_constraint_grid(), opts);

  io::Volume4D out = io::Volume4D::zeros(attenuation.nx, attenuation.ny, attenuation.nz, w.nc);
  out.voxel_size = attenuation.voxel_size;
  int unconverged = 0;
  Eigen::VectorXd signal(attenuation.nv);
  for (int k = 0; k < attenuation.nz; ++k)
    for (int j = 0; j < attenuation.ny; ++j)
      for (int i = 0; i < attenuation.nx; ++i) {
        if (mask.at(i, j, k) == 0.0) continue;
        for (int v = 0; v < attenuation.nv; ++v) signal[v] = attenuation.at(i, j, k, v);
        CsdResult r = csd_fit_ws(signal, w, opts);
        if (!r.converged) ++unconverged;
        for (int c = 0; c < w.nc; ++c) out.at(i, j, k, c) = r.fodf.values[c];
      }
  if (n_unconverged) *n_unconverged = unconverged;
  return out;
}

const sh::SphereGrid& default_constraint_grid() {
  static const sh::SphereGrid g = sh::SphereGrid::fibonacci_hemisphere(300);
  return g;
}

ResponseEstimate auto_estimate_response(const io::Volume4D& attenuation,
                                        const std::vector<sh::Direction>& dirs,
                                        const io::Volume4D& mask, int n_voxels, int order) {
  attenuation.check_invariants();
  if (!attenuation.same_grid(mask)) throw FormatError("auto_estimate_response: mask grid mismatch");
  if (n_voxels < 1) throw ConfigError("auto_estimate_response: need at least one voxel");

  Eigen::MatrixXd basis = sh::eval_basis(dirs, order);
  Eigen::MatrixXd dense_basis = sh::eval_basis(sh::dense_grid().directions, order);

  // anisotropy proxy: non-DC energy fraction of the per-voxel SH fit
  struct Candidate {
    double anisotropy;
    Eigen::VectorXd signal;
    sh::Direction axis;
  };
  std::vector<Candidate> cands;
  Eigen::VectorXd signal(attenuation.nv);
  for (int k = 0; k < attenuation.nz; ++k)
    for (int j = 0; j < attenuation.ny; ++j)
      for (int i = 0; i < attenuation.nx; ++i) {
        if (mask.at(i, j, k) == 0.0) continue;
        for (int v = 0; v < attenuation.nv; ++v) signal[v] = attenuation.at(i, j, k, v);
        sh::Coefficients fit = sh::fit_coefficients(signal, dirs, order, 1e-3);
        double total = fit.values.squaredNorm();
        if (total <= 0) continue;
        double aniso = (total - fit.values[0] * fit.values[0]) / total;
        // fiber axis = direction of minimum signal amplitude
        Eigen::VectorXd amps = dense_basis * fit.values;
        int arg = 0;
        amps.minCoeff(&arg);
        cands.push_back({aniso, signal, sh::dense_grid().directions[arg]});
      }
  if (cands.empty()) throw ConfigError("auto_estimate_response: no voxels inside the mask");

  size_t keep = std::min<size_t>(n_voxels, cands.size());
  std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(),
                    [](const Candidate& a, const Candidate& b) { return a.anisotropy > b.anisotropy; });

  std::vector<Eigen::VectorXd> signals;
  std::vector<sh::Direction> axes;
  for (size_t t = 0; t < keep; ++t) {
    signals.push_back(cands[t].signal);
    axes.push_back(cands[t].axis);
  }
  return estimate_response(signals, dirs, axes, order);
}

} // namespace mtfodf::csd
