#ifndef MTFODF_NN_HPP
#define MTFODF_NN_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mtfodf/errors.hpp"
#include "mtfodf/rng.hpp"

namespace mtfodf::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// dense row-major tensor
struct Tensor {
  std::vector<int> shape;
  Eigen::VectorXd data;

  Tensor() = default;
  Tensor(std::vector<int> shape_, Eigen::VectorXd data_);

  static Tensor zeros(std::vector<int> shape);

  Eigen::Index size() const { return data.size(); }
  int dim(size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }
};

std::string shape_string(const std::vector<int>& shape);
void check_same_shape(const Tensor& a, const Tensor& b, const std::string& op);

// x: [in] or [m, in]; W: [out, in]; b: [out]
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b);

struct DenseGrads {
  Tensor gx, gw, gb;
};
DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& gy);

Tensor relu(const Tensor& x);
// upstream gradient masked by x > 0 (subgradient 0 at x = 0)
Tensor relu_backward(const Tensor& x, const Tensor& gy);

Tensor residual_add(const Tensor& a, const Tensor& b);

enum class Padding { same, valid };

// x: [D, H, W, Cin]; kernels: [kd, kh, kw, Cin, Cout]; cross-correlation,
// zero padding in `same` mode (odd kernels only)
Tensor conv3d_forward(const Tensor& x, const Tensor& kernels, Padding pad);

struct Conv3dGrads {
  Tensor gx, gk;
};
Conv3dGrads conv3d_backward(const Tensor& x, const Tensor& kernels, const Tensor& gy, Padding pad);

// channel bias over the last axis
Tensor bias_add_channels(const Tensor& x, const Tensor& b);
Tensor bias_backward_channels(const Tensor& gy);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Ordered named parameters with per-parameter Adam moments. Insertion order
// fixes both the flat coordinate layout and the serialization order.
class ParameterStore {
public:
  Tensor& add(const std::string& name, Tensor value);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return by_name_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }

  size_t total_coords() const;
  int64_t step() const { return step_; }

  ParameterStore zeros_like() const;
  void set_zero();

  // standard Adam with bias correction; grads must mirror names and shapes
  void adam_step(const ParameterStore& grads, const AdamConfig& cfg);

  double coord(size_t idx) const;
  void set_coord(size_t idx, double v);
  std::string coord_name(size_t idx) const;
  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& values);

private:
  struct Entry {
    Tensor value;
    Eigen::VectorXd m, v;
  };
  std::pair<size_t, size_t> locate(size_t idx) const;

  std::vector<std::string> order_;
  std::map<std::string, Entry> by_name_;
  int64_t step_ = 0;
};

// He-uniform initialization from a named seeded stream
Tensor he_uniform(std::vector<int> shape, int fan_in, uint64_t seed, const std::string& stream_name);

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_coord;
  size_t n_checked = 0;
  bool pass = false;
};

// Central finite differences of `loss` against a precomputed flat analytic
// gradient. Every coordinate is checked up to `exhaustive_limit`; beyond that
// a seeded random subset of that size is used.
GradCheckReport gradient_check(ParameterStore& params, const std::function<double()>& loss,
                               const Eigen::VectorXd& analytic, double tolerance,
                               size_t exhaustive_limit = 10000, uint64_t seed = 0);

} // namespace mtfodf::nn

#endif
