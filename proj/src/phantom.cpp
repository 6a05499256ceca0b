#include "mtfodf/phantom.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <memory>

#include <nlohmann/json.hpp>

#include "mtfodf/rng.hpp"

namespace mtfodf::phantom {

namespace {

constexpr double kPi = 3.14159265358979323846;

double smoothstep(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

// 0 -> 1 transition centered on `edge` over `width`; a hard step when width = 0
double blend(double r, double edge, double width) {
  if (width <= 0.0) return r >= edge ? 1.0 : 0.0;
  return smoothstep((r - (edge - width / 2.0)) / width);
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Vector4d q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return Eigen::Quaterniond(q[0], q[1], q[2], q[3]).toRotationMatrix();
}

// smooth low-frequency scalar field in [-1, 1], fixed by (seed, tag)
struct SmoothField {
  double a[3], fx[3], fy[3], fz[3], phase[3];

  SmoothField(uint64_t seed, const std::string& tag) {
    Rng rng(substream(seed, tag));
    for (int q = 0; q < 3; ++q) {
      a[q] = rng.uniform(0.5, 1.0);
      fx[q] = rng.uniform(0.5, 1.5);
      fy[q] = rng.uniform(0.5, 1.5);
      fz[q] = rng.uniform(0.5, 1.5);
      phase[q] = rng.uniform(0.0, 2.0 * kPi);
    }
  }

  double operator()(double u, double v, double w) const {
    double s = 0, norm = 0;
    for (int q = 0; q < 3; ++q) {
      s += a[q] * std::sin(2.0 * kPi * (fx[q] * u + fy[q] * v + fz[q] * w) + phase[q]);
      norm += a[q];
    }
    return s / norm;
  }
};

} // namespace

void FiberConfig::check() const {
  if (directions.empty() || directions.size() > 3)
    throw ConfigError("fiber config must have 1-3 fibers, got " + std::to_string(directions.size()));
  if (weights.size() != directions.size())
    throw ConfigError("fiber config: " + std::to_string(directions.size()) + " directions but " +
                      std::to_string(weights.size()) + " weights");
  double sum = 0;
  for (double w : weights) {
    if (w < 0) throw ConfigError("fiber weights must be nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw ConfigError("fiber weights must sum to 1, got " + std::to_string(sum));
  if (lambda_par <= 0 || lambda_perp < 0 || lambda_perp > lambda_par)
    throw ConfigError("fiber eigenvalues must satisfy 0 <= lambda_perp <= lambda_par");
}

void TissueFractions::check() const {
  for (double f : {csf, gm, wm})
    if (f < 0 || f > 1) throw ConfigError("tissue fraction " + std::to_string(f) + " outside [0, 1]");
  if (csf + gm + wm > 1.0 + 1e-6)
    throw ConfigError("tissue fractions sum to " + std::to_string(csf + gm + wm) + " > 1");
}

double simulate_signal(const TissueFractions& fractions, const FiberConfig& fibers, double b,
                       const sh::Direction& g, double d_csf, double d_gm) {
  fractions.check();
  if (b < 0) throw ConfigError("b-value must be nonnegative");
  if (std::abs(g.norm() - 1.0) > 1e-9) throw ConfigError("gradient direction must be unit-norm");

  double s = fractions.csf * std::exp(-b * d_csf) + fractions.gm * std::exp(-b * d_gm);
  if (fractions.wm > 0) {
    fibers.check();
    double wm_sig = 0;
    for (size_t f = 0; f < fibers.directions.size(); ++f) {
      double c = dot(g, fibers.directions[f]);
      double adc = fibers.lambda_perp + (fibers.lambda_par - fibers.lambda_perp) * c * c;
      wm_sig += fibers.weights[f] * std::exp(-b * adc);
    }
    s += fractions.wm * wm_sig;
  }
  return s;
}

sh::Coefficients ground_truth_fodf(const FiberConfig& fibers, double wm_fraction, int order,
                                   double apodization) {
  sh::Coefficients out = sh::Coefficients::zeros(order);
  if (wm_fraction == 0.0) return out;
  fibers.check();
  for (size_t f = 0; f < fibers.directions.size(); ++f) {
    sh::Coefficients d = sh::delta_expansion(fibers.directions[f], fibers.weights[f], order, apodization);
    out.values += wm_fraction * d.values;
  }
  return out;
}

void PhantomSpec::check() const {
  if (nx < 5 || ny < 5 || nz < 5)
    throw ConfigError("phantom dims must be at least 5x5x5 for patch training, got " + std::to_string(nx) +
                      "x" + std::to_string(ny) + "x" + std::to_string(nz));
  if (d_csf <= 0 || d_gm <= 0) throw ConfigError("phantom diffusivities must be positive");
  if (lambda_par <= 0 || lambda_perp < 0 || lambda_perp > lambda_par)
    throw ConfigError("phantom fiber eigenvalues must satisfy 0 <= lambda_perp <= lambda_par");
  sh::check_order(sh_order);
  if (core_radius > wm_radius || wm_radius > gm_radius)
    throw ConfigError("phantom zone radii must be nested: core <= wm <= gm");
}

PhantomSpec PhantomSpec::all_csf(int nx, int ny, int nz) {
  PhantomSpec s;
  s.nx = nx;
  s.ny = ny;
  s.nz = nz;
  s.core_radius = s.wm_radius = s.gm_radius = -1.0;
  s.transition = 0.0;
  return s;
}

std::string PhantomSpec::to_json() const {
  nlohmann::ordered_json j;
  j["dims"] = {nx, ny, nz};
  j["voxel_size"] = voxel_size;
  j["d_csf"] = d_csf;
  j["d_gm"] = d_gm;
  j["lambda_par"] = lambda_par;
  j["lambda_perp"] = lambda_perp;
  j["snr"] = snr;
  j["seed"] = seed;
  j["apodization"] = apodization;
  j["sh_order"] = sh_order;
  j["core_radius"] = core_radius;
  j["wm_radius"] = wm_radius;
  j["gm_radius"] = gm_radius;
  j["transition"] = transition;
  j["orientation_jitter_deg"] = orientation_jitter_deg;
  j["tilt_deg"] = tilt_deg;
  return j.dump(2) + "\n";
}

PhantomSpec PhantomSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("phantom spec: ") + e.what());
  }
  PhantomSpec s;
  try {
    if (j.contains("dims")) {
      s.nx = j["dims"].at(0);
      s.ny = j["dims"].at(1);
      s.nz = j["dims"].at(2);
    }
    auto opt = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j[key];
    };
    opt("voxel_size", s.voxel_size);
    opt("d_csf", s.d_csf);
    opt("d_gm", s.d_gm);
    opt("lambda_par", s.lambda_par);
    opt("lambda_perp", s.lambda_perp);
    opt("snr", s.snr);
    opt("seed", s.seed);
    opt("apodization", s.apodization);
    opt("sh_order", s.sh_order);
    opt("core_radius", s.core_radius);
    opt("wm_radius", s.wm_radius);
    opt("gm_radius", s.gm_radius);
    opt("transition", s.transition);
    opt("orientation_jitter_deg", s.orientation_jitter_deg);
    opt("tilt_deg", s.tilt_deg);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("phantom spec: ") + e.what());
  }
  return s;
}

VoxelTruth voxel_truth(const PhantomSpec& spec, int i, int j, int k) {
  spec.check();
  double hx = (spec.nx - 1) / 2.0, hy = (spec.ny - 1) / 2.0, hz = (spec.nz - 1) / 2.0;
  double h = std::max({hx, hy, hz});
  double r = std::max({std::abs(i - hx), std::abs(j - hy), std::abs(k - hz)}) / h;

  double a = blend(r, spec.wm_radius, spec.transition); // WM -> GM
  double b = blend(r, spec.gm_radius, spec.transition); // GM -> CSF

  VoxelTruth out;
  out.fractions.wm = 1.0 - a;
  out.fractions.gm = a * (1.0 - b);
  out.fractions.csf = a * b;

  if (out.fractions.wm <= 0.0) return out;

  double u = spec.nx > 1 ? double(i) / (spec.nx - 1) : 0.0;
  double v = spec.ny > 1 ? double(j) / (spec.ny - 1) : 0.0;
  double w = spec.nz > 1 ? double(k) / (spec.nz - 1) : 0.0;

  static thread_local uint64_t cached_seed = ~0ULL;
  static thread_local std::unique_ptr<SmoothField> jitter_field, tilt_field;
  if (cached_seed != spec.seed) {
    jitter_field = std::make_unique<SmoothField>(spec.seed, "jitter");
    tilt_field = std::make_unique<SmoothField>(spec.seed, "tilt");
    cached_seed = spec.seed;
  }

  Rng base(substream(spec.seed, "orientation"));
  double theta0 = base.uniform(0.0, kPi);
  double phi0 = base.uniform(0.0, kPi / 2.0);

  double jitter = spec.orientation_jitter_deg * kPi / 180.0 * (*jitter_field)(u, v, w);
  double tilt = spec.tilt_deg * kPi / 180.0 * (*tilt_field)(u, v, w);

  // slab orientation sweeps a half-turn across z; the crossing pair sweeps a
  // quarter-turn, so every in-plane orientation occurs somewhere in the volume
  double theta = theta0 + kPi * w + jitter;
  double phi = phi0 + (kPi / 2.0) * w + jitter;

  // a common rotation keeps the crossing pair exactly orthogonal under tilt
  auto frame = [&](double azimuth) {
    return (Eigen::AngleAxisd(azimuth, Eigen::Vector3d::UnitZ()) *
            Eigen::AngleAxisd(tilt, Eigen::Vector3d::UnitY()))
        .toRotationMatrix();
  };
  Eigen::Matrix3d cross_frame = frame(phi);
  sh::Direction cross1 = sh::Direction::unit(cross_frame * Eigen::Vector3d::UnitX());
  sh::Direction cross2 = sh::Direction::unit(cross_frame * Eigen::Vector3d::UnitY());
  sh::Direction slab = sh::Direction::unit(frame(theta) * Eigen::Vector3d::UnitX());

  double cross = 1.0 - blend(r, spec.core_radius, spec.transition); // 1 inside the crossing core

  FiberConfig& f = out.fibers;
  f.lambda_par = spec.lambda_par;
  f.lambda_perp = spec.lambda_perp;
  if (cross >= 1.0 - 1e-9) {
    f.directions = {cross1, cross2};
    f.weights = {0.5, 0.5};
  } else if (cross <= 1e-9) {
    f.directions = {slab};
    f.weights = {1.0};
  } else {
    f.directions = {slab, cross1, cross2};
    f.weights = {1.0 - cross, cross / 2.0, cross / 2.0};
  }
  f.check();
  return out;
}

PhantomVolume generate_volume(const PhantomSpec& spec, const io::GradientScheme& scheme) {
  spec.check();
  if (scheme.size() == 0) throw ConfigError("phantom: empty gradient scheme");

  int nc = sh::n_coeffs(spec.sh_order);
  PhantomVolume out;
  out.dwi = io::Volume4D::zeros(spec.nx, spec.ny, spec.nz, scheme.size());
  out.fodf = io::Volume4D::zeros(spec.nx, spec.ny, spec.nz, nc);
  out.fractions = io::Volume4D::zeros(spec.nx, spec.ny, spec.nz, 3);
  out.mask = io::Volume4D::zeros(spec.nx, spec.ny, spec.nz, 1, io::Dtype::f32);
  for (auto* v : {&out.dwi, &out.fodf, &out.fractions, &out.mask})
    v->voxel_size = {spec.voxel_size, spec.voxel_size, spec.voxel_size};

  std::vector<sh::Direction> dirs(scheme.size());
  for (int t = 0; t < scheme.size(); ++t)
    dirs[t] = scheme.is_b0(t) ? sh::Direction(0, 0, 1) : scheme.direction(t);

  for (int k = 0; k < spec.nz; ++k)
    for (int j = 0; j < spec.ny; ++j)
      for (int i = 0; i < spec.nx; ++i) {
        VoxelTruth t = voxel_truth(spec, i, j, k);
        for (int g = 0; g < scheme.size(); ++g) {
          double b = scheme.is_b0(g) ? 0.0 : scheme.bvals[g];
          out.dwi.at(i, j, k, g) = simulate_signal(t.fractions, t.fibers, b, dirs[g], spec.d_csf, spec.d_gm);
        }
        sh::Coefficients fodf = t.fractions.wm > 0
                                    ? ground_truth_fodf(t.fibers, t.fractions.wm, spec.sh_order, spec.apodization)
                                    : sh::Coefficients::zeros(spec.sh_order);
        for (int c = 0; c < nc; ++c) out.fodf.at(i, j, k, c) = fodf.values[c];
        out.fractions.at(i, j, k, 0) = t.fractions.csf;
        out.fractions.at(i, j, k, 1) = t.fractions.gm;
        out.fractions.at(i, j, k, 2) = t.fractions.wm;
        out.mask.at(i, j, k) = 1.0;
      }
  return out;
}

io::Volume4D add_noise(const io::Volume4D& dwi, double snr, uint64_t seed) {
  dwi.check_invariants();
  if (std::isinf(snr)) return dwi;
  if (snr <= 0) throw ConfigError("add_noise: snr must be positive (or infinite for pass-through)");
  io::Volume4D out = dwi;
  double sigma = 1.0 / snr;
  for (int k = 0; k < dwi.nz; ++k)
    for (int j = 0; j < dwi.ny; ++j)
      for (int i = 0; i < dwi.nx; ++i) {
        Rng rng(substream(seed, static_cast<uint64_t>(i), static_cast<uint64_t>(j), static_cast<uint64_t>(k)));
        for (int v = 0; v < dwi.nv; ++v) {
          double s = dwi.at(i, j, k, v);
          double n1 = rng.normal(), n2 = rng.normal();
          out.at(i, j, k, v) = std::sqrt((s + sigma * n1) * (s + sigma * n1) + sigma * n2 * sigma * n2);
        }
      }
  return out;
}

io::GradientScheme make_scheme(const std::vector<double>& shells, int ndir, int nb0, uint64_t seed,
                               double bval_jitter) {
  if (shells.empty() || ndir < 6) throw ConfigError("make_scheme: need at least one shell and 6 directions");
  io::GradientScheme scheme;
  std::vector<double> bvals;
  std::vector<Eigen::Vector3d> bvecs;

  std::vector<std::pair<double, Eigen::Vector3d>> dw;
  Rng jit(substream(seed, "bval_jitter"));
  for (size_t s = 0; s < shells.size(); ++s) {
    Rng rot_rng(substream(substream(seed, "shell_rotation"), s));
    Eigen::Matrix3d rot = random_rotation(rot_rng);
    auto grid = sh::SphereGrid::fibonacci_hemisphere(ndir);
    for (const auto& d : grid.directions) {
      double b = shells[s] + (bval_jitter > 0 ? jit.uniform(-bval_jitter, bval_jitter) : 0.0);
      dw.push_back({b, rot * d.vec()});
    }
  }

  // intersperse a b0 row before every `stride` diffusion-weighted rows
  size_t stride = nb0 > 0 ? (dw.size() + nb0 - 1) / nb0 : dw.size() + 1;
  int b0_placed = 0;
  for (size_t di = 0; di < dw.size(); ++di) {
    if (nb0 > 0 && di % stride == 0 && b0_placed < nb0) {
      bvals.push_back(0.0);
      bvecs.push_back(Eigen::Vector3d::Zero());
      ++b0_placed;
    }
    bvals.push_back(dw[di].first);
    bvecs.push_back(dw[di].second);
  }
  while (b0_placed < nb0) {
    bvals.push_back(0.0);
    bvecs.push_back(Eigen::Vector3d::Zero());
    ++b0_placed;
  }

  scheme.bvals = Eigen::Map<Eigen::VectorXd>(bvals.data(), bvals.size());
  scheme.bvecs = std::move(bvecs);
  return scheme;
}

} // namespace mtfodf::phantom
