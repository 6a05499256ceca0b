#include "mtfodf/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mtfodf::nn {

namespace {

size_t shape_product(const std::vector<int>& shape) {
  size_t n = 1;
  for (int d : shape) {
    if (d < 1) throw FormatError("tensor shape " + shape_string(shape) + " has a non-positive dim");
    n *= static_cast<size_t>(d);
  }
  return n;
}

} // namespace

Tensor::Tensor(std::vector<int> shape_, Eigen::VectorXd data_) : shape(std::move(shape_)), data(std::move(data_)) {
  if (static_cast<size_t>(data.size()) != shape_product(shape))
    throw FormatError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                      shape_string(shape));
}

Tensor Tensor::zeros(std::vector<int> shape) {
  size_t n = shape_product(shape);
  return Tensor(std::move(shape), Eigen::VectorXd::Zero(n));
}

std::string shape_string(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

void check_same_shape(const Tensor& a, const Tensor& b, const std::string& op) {
  if (a.shape != b.shape)
    throw FormatError(op + ": shape mismatch " + shape_string(a.shape) + " vs " + shape_string(b.shape));
}

namespace {

// view x as [m, in]; vectors are a single row
std::pair<int, int> as_matrix_dims(const Tensor& x) {
  if (x.rank() == 1) return {1, x.dim(0)};
  if (x.rank() == 2) return {x.dim(0), x.dim(1)};
  throw FormatError("dense ops expect rank-1 or rank-2 input, got shape " + shape_string(x.shape));
}

} // namespace

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  auto [m, in] = as_matrix_dims(x);
  if (w.rank() != 2 || b.rank() != 1)
    throw FormatError("dense_forward: weight must be rank-2 and bias rank-1, got " + shape_string(w.shape) +
                      " and " + shape_string(b.shape));
  int out = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out)
    throw FormatError("dense_forward: input shape " + shape_string(x.shape) + " incompatible with weights " +
                      shape_string(w.shape) + " / bias " + shape_string(b.shape));

  Eigen::Map<const RowMat> xm(x.data.data(), m, in);
  Eigen::Map<const RowMat> wm(w.data.data(), out, in);
  Tensor y = x.rank() == 1 ? Tensor::zeros({out}) : Tensor::zeros({m, out});
  Eigen::Map<RowMat> ym(y.data.data(), m, out);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += b.data.transpose();
  return y;
}

DenseGrads dense_backward(const Tensor& x, const Tensor& w, const Tensor& gy) {
  auto [m, in] = as_matrix_dims(x);
  auto [mg, out] = as_matrix_dims(gy);
  if (mg != m || w.dim(0) != out || w.dim(1) != in)
    throw FormatError("dense_backward: shapes " + shape_string(x.shape) + ", " + shape_string(w.shape) +
                      ", " + shape_string(gy.shape) + " are inconsistent");

  Eigen::Map<const RowMat> xm(x.data.data(), m, in);
  Eigen::Map<const RowMat> wm(w.data.data(), out, in);
  Eigen::Map<const RowMat> gym(gy.data.data(), m, out);

  DenseGrads g;
  g.gx = x.rank() == 1 ? Tensor::zeros({in}) : Tensor::zeros({m, in});
  g.gw = Tensor::zeros({out, in});
  g.gb = Tensor::zeros({out});
  Eigen::Map<RowMat> gxm(g.gx.data.data(), m, in);
  Eigen::Map<RowMat> gwm(g.gw.data.data(), out, in);
  gxm.noalias() = gym * wm;
  gwm.noalias() = gym.transpose() * xm;
  g.gb.data = gym.colwise().sum().transpose();
  return g;
}

Tensor relu(const Tensor& x) {
  Tensor y = x;
  y.data = y.data.cwiseMax(0.0);
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& gy) {
  check_same_shape(x, gy, "relu_backward");
  Tensor g = gy;
  for (Eigen::Index i = 0; i < g.data.size(); ++i)
    if (x.data[i] <= 0.0) g.data[i] = 0.0;
  return g;
}

Tensor residual_add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "residual_add");
  Tensor y = a;
  y.data += b.data;
  return y;
}

namespace {

struct ConvDims {
  int d, h, w, cin, kd, kh, kw, cout;
  int od, oh, ow;
  int pd, ph, pw; // padding offsets
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, Padding pad) {
  if (x.rank() != 4 || k.rank() != 5)
    throw FormatError("conv3d: input must be [D,H,W,Cin] and kernels [kd,kh,kw,Cin,Cout], got " +
                      shape_string(x.shape) + " and " + shape_string(k.shape));
  ConvDims c{};
  c.d = x.dim(0);
  c.h = x.dim(1);
  c.w = x.dim(2);
  c.cin = x.dim(3);
  c.kd = k.dim(0);
  c.kh = k.dim(1);
  c.kw = k.dim(2);
  c.cout = k.dim(4);
  if (k.dim(3) != c.cin)
    throw FormatError("conv3d: input has " + std::to_string(c.cin) + " channels but kernels expect " +
                      std::to_string(k.dim(3)));
  if (pad == Padding::same) {
    if (c.kd % 2 == 0 || c.kh % 2 == 0 || c.kw % 2 == 0)
      throw FormatError("conv3d: same padding requires odd kernel dims, got " + shape_string(k.shape));
    c.od = c.d;
    c.oh = c.h;
    c.ow = c.w;
    c.pd = c.kd / 2;
    c.ph = c.kh / 2;
    c.pw = c.kw / 2;
  } else {
    c.od = c.d - c.kd + 1;
    c.oh = c.h - c.kh + 1;
    c.ow = c.w - c.kw + 1;
    if (c.od < 1 || c.oh < 1 || c.ow < 1)
      throw FormatError("conv3d: valid-mode output dims are non-positive for input " + shape_string(x.shape) +
                        " and kernels " + shape_string(k.shape));
  }
  return c;
}

} // namespace

Tensor conv3d_forward(const Tensor& x, const Tensor& kernels, Padding pad) {
  ConvDims c = conv_dims(x, kernels, pad);
  Tensor y = Tensor::zeros({c.od, c.oh, c.ow, c.cout});

  for (int od = 0; od < c.od; ++od)
    for (int oh = 0; oh < c.oh; ++oh)
      for (int ow = 0; ow < c.ow; ++ow) {
        Eigen::Map<Eigen::VectorXd> out(&y.data[((static_cast<size_t>(od) * c.oh + oh) * c.ow + ow) * c.cout],
                                        c.cout);
        for (int a = 0; a < c.kd; ++a) {
          int id = od + a - c.pd;
          if (id < 0 || id >= c.d) continue;
          for (int b = 0; b < c.kh; ++b) {
            int ih = oh + b - c.ph;
            if (ih < 0 || ih >= c.h) continue;
            for (int t = 0; t < c.kw; ++t) {
              int iw = ow + t - c.pw;
              if (iw < 0 || iw >= c.w) continue;
              Eigen::Map<const Eigen::VectorXd> in(
                  &x.data[((static_cast<size_t>(id) * c.h + ih) * c.w + iw) * c.cin], c.cin);
              Eigen::Map<const RowMat> ktap(
                  &kernels.data[(((static_cast<size_t>(a) * c.kh + b) * c.kw + t) * c.cin) * c.cout], c.cin,
                  c.cout);
              out.noalias() += ktap.transpose() * in;
            }
          }
        }
      }
  return y;
}

Conv3dGrads conv3d_backward(const Tensor& x, const Tensor& kernels, const Tensor& gy, Padding pad) {
  ConvDims c = conv_dims(x, kernels, pad);
  std::vector<int> expect = {c.od, c.oh, c.ow, c.cout};
  if (gy.shape != expect)
    throw FormatError("conv3d_backward: upstream gradient shape " + shape_string(gy.shape) +
                      " does not match output shape " + shape_string(expect));

  Conv3dGrads g;
  g.gx = Tensor::zeros(x.shape);
  g.gk = Tensor::zeros(kernels.shape);

  for (int od = 0; od < c.od; ++od)
    for (int oh = 0; oh < c.oh; ++oh)
      for (int ow = 0; ow < c.ow; ++ow) {
        Eigen::Map<const Eigen::VectorXd> gout(
            &gy.data[((static_cast<size_t>(od) * c.oh + oh) * c.ow + ow) * c.cout], c.cout);
        for (int a = 0; a < c.kd; ++a) {
          int id = od + a - c.pd;
          if (id < 0 || id >= c.d) continue;
          for (int b = 0; b < c.kh; ++b) {
            int ih = oh + b - c.ph;
            if (ih < 0 || ih >= c.h) continue;
            for (int t = 0; t < c.kw; ++t) {
              int iw = ow + t - c.pw;
              if (iw < 0 || iw >= c.w) continue;
              size_t xoff = ((static_cast<size_t>(id) * c.h + ih) * c.w + iw) * c.cin;
              size_t koff = (((static_cast<size_t>(a) * c.kh + b) * c.kw + t) * c.cin) * c.cout;
              Eigen::Map<const Eigen::VectorXd> in(&x.data[xoff], c.cin);
              Eigen::Map<const RowMat> ktap(&kernels.data[koff], c.cin, c.cout);
              Eigen::Map<Eigen::VectorXd> gin(&g.gx.data[xoff], c.cin);
              Eigen::Map<RowMat> gktap(&g.gk.data[koff], c.cin, c.cout);
              gin.noalias() += ktap * gout;
              gktap.noalias() += in * gout.transpose();
            }
          }
        }
      }
  return g;
}

Tensor bias_add_channels(const Tensor& x, const Tensor& b) {
  if (b.rank() != 1 || x.rank() < 1 || x.shape.back() != b.dim(0))
    throw FormatError("bias_add_channels: bias " + shape_string(b.shape) + " does not match input " +
                      shape_string(x.shape));
  Tensor y = x;
  int cn = b.dim(0);
  for (Eigen::Index off = 0; off < y.data.size(); off += cn) y.data.segment(off, cn) += b.data;
  return y;
}

Tensor bias_backward_channels(const Tensor& gy) {
  int cn = gy.shape.back();
  Tensor gb = Tensor::zeros({cn});
  for (Eigen::Index off = 0; off < gy.data.size(); off += cn) gb.data += gy.data.segment(off, cn);
  return gb;
}

Tensor& ParameterStore::add(const std::string& name, Tensor value) {
  if (has(name)) throw ConfigError("parameter \"" + name + "\" already exists");
  Entry e;
  e.m = Eigen::VectorXd::Zero(value.size());
  e.v = Eigen::VectorXd::Zero(value.size());
  e.value = std::move(value);
  order_.push_back(name);
  return by_name_.emplace(name, std::move(e)).first->second.value;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ConfigError("unknown parameter \"" + name + "\"");
  return it->second.value;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ConfigError("unknown parameter \"" + name + "\"");
  return it->second.value;
}

size_t ParameterStore::total_coords() const {
  size_t n = 0;
  for (const auto& name : order_) n += by_name_.at(name).value.size();
  return n;
}

ParameterStore ParameterStore::zeros_like() const {
  ParameterStore out;
  for (const auto& name : order_) out.add(name, Tensor::zeros(by_name_.at(name).value.shape));
  return out;
}

void ParameterStore::set_zero() {
  for (auto& [name, e] : by_name_) e.value.data.setZero();
}

void ParameterStore::adam_step(const ParameterStore& grads, const AdamConfig& cfg) {
  ++step_;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
  for (const auto& name : order_) {
    Entry& e = by_name_.at(name);
    const Tensor& g = grads.get(name);
    if (g.shape != e.value.shape)
      throw FormatError("adam_step: gradient for \"" + name + "\" has shape " + shape_string(g.shape) +
                        ", parameter is " + shape_string(e.value.shape));
    if (!g.data.allFinite())
      throw NumericError("adam_step: non-finite gradient for parameter \"" + name + "\"");
    e.m = cfg.beta1 * e.m + (1.0 - cfg.beta1) * g.data;
    e.v = cfg.beta2 * e.v + (1.0 - cfg.beta2) * g.data.cwiseProduct(g.data);
    Eigen::VectorXd mhat = e.m / bc1;
    Eigen::VectorXd vhat = e.v / bc2;
    e.value.data -= cfg.lr * (mhat.array() / (vhat.array().sqrt() + cfg.eps)).matrix();
  }
}

std::pair<size_t, size_t> ParameterStore::locate(size_t idx) const {
  size_t off = idx;
  for (size_t e = 0; e < order_.size(); ++e) {
    size_t n = by_name_.at(order_[e]).value.size();
    if (off < n) return {e, off};
    off -= n;
  }
  throw ConfigError("parameter coordinate " + std::to_string(idx) + " out of range");
}

double ParameterStore::coord(size_t idx) const {
  auto [e, off] = locate(idx);
  return by_name_.at(order_[e]).value.data[off];
}

void ParameterStore::set_coord(size_t idx, double v) {
  auto [e, off] = locate(idx);
  by_name_.at(order_[e]).value.data[off] = v;
}

std::string ParameterStore::coord_name(size_t idx) const {
  auto [e, off] = locate(idx);
  return order_[e] + "[" + std::to_string(off) + "]";
}

Eigen::VectorXd ParameterStore::flat() const {
  Eigen::VectorXd out(total_coords());
  size_t off = 0;
  for (const auto& name : order_) {
    const auto& v = by_name_.at(name).value.data;
    out.segment(off, v.size()) = v;
    off += v.size();
  }
  return out;
}

void ParameterStore::set_flat(const Eigen::VectorXd& values) {
  if (static_cast<size_t>(values.size()) != total_coords())
    throw FormatError("set_flat: got " + std::to_string(values.size()) + " values for " +
                      std::to_string(total_coords()) + " coordinates");
  size_t off = 0;
  for (const auto& name : order_) {
    auto& v = by_name_.at(name).value.data;
    v = values.segment(off, v.size());
    off += v.size();
  }
}

Tensor he_uniform(std::vector<int> shape, int fan_in, uint64_t seed, const std::string& stream_name) {
  if (fan_in < 1) throw ConfigError("he_uniform: fan_in must be positive");
  Rng rng(substream(seed, stream_name));
  Tensor t = Tensor::zeros(std::move(shape));
  double limit = std::sqrt(6.0 / fan_in);
  for (Eigen::Index i = 0; i < t.data.size(); ++i) t.data[i] = rng.uniform(-limit, limit);
  return t;
}

GradCheckReport gradient_check(ParameterStore& params, const std::function<double()>& loss,
                               const Eigen::VectorXd& analytic, double tolerance,
                               size_t exhaustive_limit, uint64_t seed) {
  size_t n = params.total_coords();
  if (static_cast<size_t>(analytic.size()) != n)
    throw FormatError("gradient_check: analytic gradient has " + std::to_string(analytic.size()) +
                      " entries for " + std::to_string(n) + " coordinates");

  std::vector<size_t> coords(n);
  std::iota(coords.begin(), coords.end(), size_t{0});
  if (n > exhaustive_limit) {
    Rng rng(substream(seed, "gradient_check"));
    rng.shuffle(coords);
    coords.resize(exhaustive_limit);
  }

  double floor = 1e-6 * (1.0 + analytic.cwiseAbs().maxCoeff());
  GradCheckReport rep;
  for (size_t idx : coords) {
    double w0 = params.coord(idx);
    double h = 1e-6 * std::max(1.0, std::abs(w0));
    params.set_coord(idx, w0 + h);
    double lp = loss();
    params.set_coord(idx, w0 - h);
    double lm = loss();
    params.set_coord(idx, w0);
    double fd = (lp - lm) / (2.0 * h);
    double an = analytic[idx];
    double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor});
    if (rel > rep.max_rel_err) {
      rep.max_rel_err = rel;
      rep.worst_coord = params.coord_name(idx);
    }
  }
  rep.n_checked = coords.size();
  rep.pass = rep.max_rel_err < tolerance;
  return rep;
}

} // namespace mtfodf::nn
