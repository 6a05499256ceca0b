#ifndef MTFODF_PHANTOM_HPP
#define MTFODF_PHANTOM_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mtfodf/dataio.hpp"
#include "mtfodf/sh.hpp"

namespace mtfodf::phantom {

// 1-3 coherent fiber populations sharing one axially symmetric tensor profile
struct FiberConfig {
  std::vector<sh::Direction> directions;
  std::vector<double> weights; // nonnegative, sum 1
  double lambda_par = 1.7e-3;  // mm^2/s
  double lambda_perp = 0.2e-3;

  void check() const;
};

struct TissueFractions {
  double csf = 0, gm = 0, wm = 0;

  void check() const; // each in [0,1], sum <= 1 + 1e-6
  Eigen::Vector3d vec() const { return {csf, gm, wm}; }
};

// Normalized signal S/S0 of the three-compartment model at one gradient.
double simulate_signal(const TissueFractions& fractions, const FiberConfig& fibers, double b,
                       const sh::Direction& g, double d_csf = 3.0e-3, double d_gm = 0.8e-3);

// WM-fraction-scaled apodized delta mixture over the fiber directions.
sh::Coefficients ground_truth_fodf(const FiberConfig& fibers, double wm_fraction, int order = 8,
                                   double apodization = 0.02);

// Zoned 3D layout: CSF border, GM shell, single-fiber WM slab with smoothly
// rotating orientation, 90-degree crossing core. Fractions blend smoothly at
// zone boundaries; the seed drives the orientation fields and nothing else.
struct PhantomSpec {
  int nx = 16, ny = 16, nz = 16;
  double voxel_size = 2.0; // mm
  double d_csf = 3.0e-3, d_gm = 0.8e-3;
  double lambda_par = 1.7e-3, lambda_perp = 0.2e-3;
  double snr = 30.0; // <= 0 means noiseless
  uint64_t seed = 0;
  double apodization = 0.02;
  int sh_order = 8;
  // zone boundaries as fractions of the half-extent (max-norm radius)
  double core_radius = 0.35;
  double wm_radius = 0.62;
  double gm_radius = 0.84;
  double transition = 0.10;
  double orientation_jitter_deg = 8.0;
  double tilt_deg = 18.0;

  void check() const;
  static PhantomSpec all_csf(int nx, int ny, int nz);

  std::string to_json() const;
  static PhantomSpec from_json(const std::string& text);
};

// ground-truth composition of one voxel (fractions always sum to 1)
struct VoxelTruth {
  TissueFractions fractions;
  FiberConfig fibers; // empty directions when wm = 0
};

VoxelTruth voxel_truth(const PhantomSpec& spec, int i, int j, int k);

struct PhantomVolume {
  io::Volume4D dwi;       // normalized signals per scheme entry (b0 rows = 1, noiseless)
  io::Volume4D fodf;      // ground-truth fODF SH
  io::Volume4D fractions; // CSF, GM, WM
  io::Volume4D mask;
};

PhantomVolume generate_volume(const PhantomSpec& spec, const io::GradientScheme& scheme);

// Rician noise with sigma = 1/snr per channel (SNR defined on the unit b0
// signal); per-voxel substreams make the result schedule-independent.
io::Volume4D add_noise(const io::Volume4D& dwi, double snr, uint64_t seed);

// acquisition scheme builder: ndir spiral directions per shell (per-shell
// seeded rotation), nb0 interspersed b0 rows
io::GradientScheme make_scheme(const std::vector<double>& shells, int ndir, int nb0, uint64_t seed,
                               double bval_jitter = 0.0);

} // namespace mtfodf::phantom

#endif
