#ifndef MTFODF_DATAIO_HPP
#define MTFODF_DATAIO_HPP

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mtfodf/errors.hpp"
#include "mtfodf/sh.hpp"

namespace mtfodf::io {

enum class Dtype { f32, f64 };

// 4D volume, x-fastest storage (NIfTI layout). 3D volumes have nv = 1.
struct Volume4D {
  int nx = 0, ny = 0, nz = 0, nv = 0;
  std::array<double, 3> voxel_size = {1.0, 1.0, 1.0};
  Dtype dtype = Dtype::f64; // serialization datatype
  std::vector<double> data;

  static Volume4D zeros(int nx, int ny, int nz, int nv, Dtype dtype = Dtype::f64);

  size_t index(int i, int j, int k, int v = 0) const {
    return static_cast<size_t>(i) + static_cast<size_t>(nx) * (j + static_cast<size_t>(ny) * (k + static_cast<size_t>(nz) * v));
  }
  double& at(int i, int j, int k, int v = 0) { return data[index(i, j, k, v)]; }
  double at(int i, int j, int k, int v = 0) const { return data[index(i, j, k, v)]; }

  size_t voxels() const { return static_cast<size_t>(nx) * ny * nz; }
  bool same_grid(const Volume4D& o) const { return nx == o.nx && ny == o.ny && nz == o.nz; }
  void check_invariants() const;
};

// Single-file uncompressed NIfTI-1, float32/float64, little- or big-endian.
Volume4D read_nifti(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> write_nifti(const Volume4D& vol);
Volume4D read_nifti_file(const std::string& path);
void write_nifti_file(const Volume4D& vol, const std::string& path);

// b-values (s/mm^2) plus gradient directions; zero bvec allowed on b0 rows
struct GradientScheme {
  Eigen::VectorXd bvals;
  std::vector<Eigen::Vector3d> bvecs;
  double shell_tolerance = 50.0;

  int size() const { return static_cast<int>(bvals.size()); }
  bool is_b0(int i) const { return bvals[i] <= shell_tolerance; }
  sh::Direction direction(int i) const { return sh::Direction::unit(bvecs[i]); }
  std::vector<int> b0_indices() const;
};

// FSL-style text: one row of n bvals, three rows of n bvec components
GradientScheme parse_gradient_table(const std::string& bval_text, const std::string& bvec_text,
                                    double shell_tolerance = 50.0);
GradientScheme read_gradient_files(const std::string& bval_path, const std::string& bvec_path,
                                   double shell_tolerance = 50.0);
void write_gradient_files(const GradientScheme& scheme, const std::string& bval_path,
                          const std::string& bvec_path);

struct NormalizedDwi {
  Volume4D attenuation;  // diffusion-weighted volumes divided by the mean b0; b0s dropped
  GradientScheme scheme; // b0 rows removed, order preserved
  Volume4D valid_mask;   // 0 where mean b0 <= eps
};

NormalizedDwi normalize_by_b0(const Volume4D& dwi, const GradientScheme& scheme, double eps = 1e-12);

// indices of entries with |bval - target_b| <= shell_tolerance
std::vector<int> extract_shell(const GradientScheme& scheme, double target_b);

struct VoxelSample {
  sh::Coefficients input_sh;
  sh::Coefficients target_sh;
  Eigen::Vector3d target_fractions;
  int i = 0, j = 0, k = 0;
};

struct PatchSample {
  // 27 x n_coeffs; neighbour rows ordered x-fastest over the 3x3x3 offsets
  Eigen::MatrixXd input_patch;
  int order = 8;
  sh::Coefficients target_sh;
  Eigen::Vector3d target_fractions;
  int i = 0, j = 0, k = 0;
};

// One sample per masked voxel, ordered by (k, j, i); borders use
// nearest-edge replication for patches.
std::vector<VoxelSample> assemble_dataset(const Volume4D& input_sh, const Volume4D& target_sh,
                                          const Volume4D& fractions, const Volume4D& mask);
std::vector<PatchSample> assemble_patches(const Volume4D& input_sh, const Volume4D& target_sh,
                                          const Volume4D& fractions, const Volume4D& mask);

// Dataset cache: manifest.json + one raw little-endian float32 payload per
// named volume.
void save_volume_cache(const std::string& dir, const std::map<std::string, Volume4D>& volumes,
                       const std::map<std::string, std::string>& meta);
std::map<std::string, Volume4D> load_volume_cache(const std::string& dir);

// file helpers
std::vector<uint8_t> read_bytes(const std::string& path);
void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

} // namespace mtfodf::io

#endif
