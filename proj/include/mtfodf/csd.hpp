#ifndef MTFODF_CSD_HPP
#define MTFODF_CSD_HPP

#include <Eigen/Dense>
#include <vector>

#include "mtfodf/dataio.hpp"
#include "mtfodf/sh.hpp"

namespace mtfodf::csd {

// zonal signature of a single z-aligned fiber: one coefficient per even order
struct ResponseFunction {
  Eigen::VectorXd zonal; // r_l for l = 0, 2, ..., 2*(size-1)

  int order() const { return 2 * (static_cast<int>(zonal.size()) - 1); }
  void check() const; // finite, r_0 > 0

  std::string to_json() const;
  static ResponseFunction from_json(const std::string& text);
};

struct ResponseEstimate {
  ResponseFunction response;
  double m_nonzero_energy; // off-axis energy fraction of the aligned fits
  int n_voxels;
};

// Refit each voxel's signal in a frame rotated so its fiber axis lies on +z,
// then average the m = 0 coefficients per order.
ResponseEstimate estimate_response(const std::vector<Eigen::VectorXd>& signals,
                                   const std::vector<sh::Direction>& dirs,
                                   const std::vector<sh::Direction>& axes, int order = 8);

// A such that A * fodf_coeffs predicts the signal at `dirs`
// (per-order scaling r_l * sqrt(4*pi / (2l+1)))
Eigen::MatrixXd convolution_matrix(const ResponseFunction& response,
                                   const std::vector<sh::Direction>& dirs, int order = 8);

struct CsdOptions {
  double lambda = 1.0; // constraint weight relative to the signal scale
  double tau = 0.1;    // amplitude threshold relative to the mean initial amplitude
  int max_iter = 50;
  int init_order = 4;
};

struct CsdResult {
  sh::Coefficients fodf;
  bool converged = false;
  int iterations = 0;
};

CsdResult csd_fit(const Eigen::VectorXd& signal, const std::vector<sh::Direction>& dirs,
                  const ResponseFunction& response, const sh::SphereGrid& constraint_grid,
                  const CsdOptions& opts = {});

// voxelwise CSD over an attenuation volume; shares the per-volume matrices
io::Volume4D csd_fit_volume(const io::Volume4D& attenuation, const std::vector<sh::Direction>& dirs,
                            const ResponseFunction& response, const io::Volume4D& mask,
                            const CsdOptions& opts = {}, int* n_unconverged = nullptr);

// 300 hemisphere directions
const sh::SphereGrid& default_constraint_grid();

// Pick single-fiber voxels from an attenuation volume by SH anisotropy and
// estimate their axes as the minimum-signal direction of the order-8 fit.
ResponseEstimate auto_estimate_response(const io::Volume4D& attenuation,
                                        const std::vector<sh::Direction>& dirs,
                                        const io::Volume4D& mask, int n_voxels = 50, int order = 8);

} // namespace mtfodf::csd

#endif
