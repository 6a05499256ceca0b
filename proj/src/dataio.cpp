#include "mtfodf/dataio.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mtfodf::io {

namespace {

// little-endian byte codecs (host-order independent)
void put_u16(std::vector<uint8_t>& b, size_t off, uint16_t v) {
  b[off] = v & 0xff;
  b[off + 1] = (v >> 8) & 0xff;
}
void put_u32(std::vector<uint8_t>& b, size_t off, uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = (v >> (8 * i)) & 0xff;
}
void put_f32(std::vector<uint8_t>& b, size_t off, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(b, off, u);
}
void put_f64(std::vector<uint8_t>& b, size_t off, double v) {
  uint64_t u;
  std::memcpy(&u, &v, 8);
  for (int i = 0; i < 8; ++i) b[off + i] = (u >> (8 * i)) & 0xff;
}

uint16_t get_u16(const std::vector<uint8_t>& b, size_t off, bool swap) {
  uint16_t v = uint16_t(b[off]) | uint16_t(b[off + 1]) << 8;
  return swap ? uint16_t((v >> 8) | (v << 8)) : v;
}
uint32_t get_u32(const std::vector<uint8_t>& b, size_t off, bool swap) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(b[off + i]) << (8 * i);
  if (swap) v = __builtin_bswap32(v);
  return v;
}
float get_f32(const std::vector<uint8_t>& b, size_t off, bool swap) {
  uint32_t u = get_u32(b, off, swap);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}
double get_f64(const std::vector<uint8_t>& b, size_t off, bool swap) {
  uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= uint64_t(b[off + i]) << (8 * i);
  if (swap) u = __builtin_bswap64(u);
  double d;
  std::memcpy(&d, &u, 8);
  return d;
}

constexpr int kDtFloat32 = 16;
constexpr int kDtFloat64 = 64;

} // namespace

Volume4D Volume4D::zeros(int nx, int ny, int nz, int nv, Dtype dtype) {
  Volume4D v;
  v.nx = nx;
  v.ny = ny;
  v.nz = nz;
  v.nv = nv;
  v.dtype = dtype;
  v.check_invariants();
  v.data.assign(static_cast<size_t>(nx) * ny * nz * nv, 0.0);
  return v;
}

void Volume4D::check_invariants() const {
  if (nx < 1 || ny < 1 || nz < 1 || nv < 1)
    throw FormatError("volume dims must all be >= 1, got " + std::to_string(nx) + "x" + std::to_string(ny) +
                      "x" + std::to_string(nz) + "x" + std::to_string(nv));
  size_t expected = static_cast<size_t>(nx) * ny * nz * nv;
  if (!data.empty() && data.size() != expected)
    throw FormatError("volume data length " + std::to_string(data.size()) + " does not match dims product " +
                      std::to_string(expected));
}

Volume4D read_nifti(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 352) throw FormatError("nifti: file is " + std::to_string(bytes.size()) + " bytes, smaller than the 352-byte header");
  bool swap = false;
  uint32_t hdr = get_u32(bytes, 0, false);
  if (hdr != 348) {
    if (__builtin_bswap32(hdr) == 348)
      swap = true;
    else
      throw FormatError("nifti: sizeof_hdr is " + std::to_string(hdr) + ", expected 348");
  }
  if (!(bytes[344] == 'n' && bytes[345] == '+' && bytes[346] == '1' && bytes[347] == '\0'))
    throw FormatError("nifti: magic is not \"n+1\" (single-file NIfTI-1 required)");

  int ndim = get_u16(bytes, 40, swap);
  if (ndim < 1 || ndim > 4)
    throw FormatError("nifti: dim[0] = " + std::to_string(ndim) + " unsupported (need 1..4)");
  int dims[4] = {1, 1, 1, 1};
  for (int d = 0; d < 4; ++d) {
    int v = d < ndim ? static_cast<int16_t>(get_u16(bytes, 40 + 2 * (d + 1), swap)) : 1;
    if (v < 1) throw FormatError("nifti: dim[" + std::to_string(d + 1) + "] = " + std::to_string(v) + " invalid");
    dims[d] = v;
  }

  int datatype = get_u16(bytes, 70, swap);
  if (datatype != kDtFloat32 && datatype != kDtFloat64)
    throw FormatError("nifti: datatype " + std::to_string(datatype) + " unsupported (float32=16 or float64=64 required)");

  float slope = get_f32(bytes, 112, swap);
  float inter = get_f32(bytes, 116, swap);
  if ((slope != 0.0f && slope != 1.0f) || inter != 0.0f)
    throw FormatError("nifti: scl_slope/scl_inter rescaling unsupported (slope=" + std::to_string(slope) +
                      ", inter=" + std::to_string(inter) + ")");

  double vox_offset = get_f32(bytes, 108, swap);
  if (vox_offset < 348) throw FormatError("nifti: vox_offset " + std::to_string(vox_offset) + " overlaps the header");
  size_t offset = static_cast<size_t>(vox_offset);

  Volume4D vol;
  vol.nx = dims[0];
  vol.ny = dims[1];
  vol.nz = dims[2];
  vol.nv = dims[3];
  for (int d = 0; d < 3; ++d) vol.voxel_size[d] = get_f32(bytes, 76 + 4 * (d + 1), swap);
  vol.dtype = datatype == kDtFloat32 ? Dtype::f32 : Dtype::f64;

  size_t n = static_cast<size_t>(vol.nx) * vol.ny * vol.nz * vol.nv;
  size_t elem = datatype == kDtFloat32 ? 4 : 8;
  if (bytes.size() < offset || bytes.size() - offset < n * elem)
    throw FormatError("nifti: payload truncated; dims imply " + std::to_string(n * elem) +
                      " bytes after vox_offset but only " +
                      std::to_string(bytes.size() > offset ? bytes.size() - offset : 0) + " present");

  vol.data.resize(n);
  for (size_t t = 0; t < n; ++t)
    vol.data[t] = datatype == kDtFloat32 ? static_cast<double>(get_f32(bytes, offset + 4 * t, swap))
                                         : get_f64(bytes, offset + 8 * t, swap);
  vol.check_invariants();
  return vol;
}

std::vector<uint8_t> write_nifti(const Volume4D& vol) {
  vol.check_invariants();
  if (vol.data.empty()) throw FormatError("nifti: refusing to write a volume with no data");
  size_t n = vol.data.size();
  size_t elem = vol.dtype == Dtype::f32 ? 4 : 8;
  std::vector<uint8_t> b(352 + n * elem, 0);

  put_u32(b, 0, 348);
  b[38] = 'r'; // regular
  put_u16(b, 40, vol.nv > 1 ? 4 : 3);
  put_u16(b, 42, static_cast<uint16_t>(vol.nx));
  put_u16(b, 44, static_cast<uint16_t>(vol.ny));
  put_u16(b, 46, static_cast<uint16_t>(vol.nz));
  put_u16(b, 48, static_cast<uint16_t>(vol.nv));
  for (int d = 5; d <= 7; ++d) put_u16(b, 40 + 2 * d, 1);
  put_u16(b, 70, vol.dtype == Dtype::f32 ? kDtFloat32 : kDtFloat64);
  put_u16(b, 72, vol.dtype == Dtype::f32 ? 32 : 64);
  put_f32(b, 76, 1.0f); // qfac
  for (int d = 0; d < 3; ++d) put_f32(b, 76 + 4 * (d + 1), static_cast<float>(vol.voxel_size[d]));
  put_f32(b, 92, 1.0f); // pixdim[4]
  put_f32(b, 108, 352.0f);
  put_f32(b, 112, 1.0f); // scl_slope
  b[123] = 2;            // xyzt_units: mm
  const char* descrip = "mtfodf";
  std::memcpy(&b[148], descrip, std::strlen(descrip));
  put_u16(b, 254, 1); // sform_code: scanner
  put_f32(b, 280, static_cast<float>(vol.voxel_size[0]));
  put_f32(b, 300, static_cast<float>(vol.voxel_size[1]));
  put_f32(b, 320, static_cast<float>(vol.voxel_size[2]));
  b[344] = 'n';
  b[345] = '+';
  b[346] = '1';
  b[347] = '\0';

  for (size_t t = 0; t < n; ++t) {
    if (vol.dtype == Dtype::f32)
      put_f32(b, 352 + 4 * t, static_cast<float>(vol.data[t]));
    else
      put_f64(b, 352 + 8 * t, vol.data[t]);
  }
  return b;
}

Volume4D read_nifti_file(const std::string& path) {
  try {
    return read_nifti(read_bytes(path));
  } catch (const Error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_nifti_file(const Volume4D& vol, const std::string& path) {
  write_bytes(path, write_nifti(vol));
}

std::vector<int> GradientScheme::b0_indices() const {
  std::vector<int> out;
  for (int i = 0; i < size(); ++i)
    if (is_b0(i)) out.push_back(i);
  return out;
}

namespace {

std::vector<std::vector<double>> parse_numeric_rows(const std::string& text, const std::string& what) {
  std::vector<std::vector<double>> rows;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        size_t used = 0;
        double v = std::stod(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        row.push_back(v);
      } catch (const std::exception&) {
        throw FormatError(what + ": cannot parse \"" + tok + "\" as a number");
      }
    }
    if (!row.empty()) rows.push_back(std::move(row));
  }
  return rows;
}

} // namespace

GradientScheme parse_gradient_table(const std::string& bval_text, const std::string& bvec_text,
                                    double shell_tolerance) {
  auto bval_rows = parse_numeric_rows(bval_text, "bvals");
  std::vector<double> bvals;
  for (auto& r : bval_rows) bvals.insert(bvals.end(), r.begin(), r.end());
  if (bvals.empty()) throw FormatError("bvals: no entries");

  auto bvec_rows = parse_numeric_rows(bvec_text, "bvecs");
  if (bvec_rows.size() != 3)
    throw FormatError("bvecs: expected 3 rows (x, y, z components), got " + std::to_string(bvec_rows.size()));
  for (int r = 0; r < 3; ++r)
    if (bvec_rows[r].size() != bvals.size())
      throw FormatError("bvecs row " + std::to_string(r) + " has " + std::to_string(bvec_rows[r].size()) +
                        " entries but bvals has " + std::to_string(bvals.size()));

  GradientScheme scheme;
  scheme.shell_tolerance = shell_tolerance;
  scheme.bvals = Eigen::Map<Eigen::VectorXd>(bvals.data(), bvals.size());
  scheme.bvecs.resize(bvals.size());
  for (size_t i = 0; i < bvals.size(); ++i) {
    Eigen::Vector3d v(bvec_rows[0][i], bvec_rows[1][i], bvec_rows[2][i]);
    if (scheme.bvals[i] <= shell_tolerance) {
      scheme.bvecs[i] = v; // b0 rows keep whatever was written, zero included
    } else {
      double n = v.norm();
      if (n < 1e-12)
        throw FormatError("bvecs: zero direction at non-b0 entry " + std::to_string(i) + " (b=" +
                          std::to_string(scheme.bvals[i]) + ")");
      scheme.bvecs[i] = v / n;
    }
  }
  return scheme;
}

GradientScheme read_gradient_files(const std::string& bval_path, const std::string& bvec_path,
                                   double shell_tolerance) {
  return parse_gradient_table(read_text(bval_path), read_text(bvec_path), shell_tolerance);
}

void write_gradient_files(const GradientScheme& scheme, const std::string& bval_path,
                          const std::string& bvec_path) {
  std::ostringstream bv, bx, by, bz;
  bv.precision(17);
  bx.precision(17);
  by.precision(17);
  bz.precision(17);
  for (int i = 0; i < scheme.size(); ++i) {
    const char* sep = i ? " " : "";
    bv << sep << scheme.bvals[i];
    bx << sep << scheme.bvecs[i].x();
    by << sep << scheme.bvecs[i].y();
    bz << sep << scheme.bvecs[i].z();
  }
  write_text(bval_path, bv.str() + "\n");
  write_text(bvec_path, bx.str() + "\n" + by.str() + "\n" + bz.str() + "\n");
}

NormalizedDwi normalize_by_b0(const Volume4D& dwi, const GradientScheme& scheme, double eps) {
  dwi.check_invariants();
  if (dwi.nv != scheme.size())
    throw FormatError("normalize_by_b0: volume has " + std::to_string(dwi.nv) + " frames but scheme has " +
                      std::to_string(scheme.size()) + " entries");
  auto b0s = scheme.b0_indices();
  if (b0s.empty()) throw FormatError("normalize_by_b0: scheme contains no b0 entries (bval <= tolerance)");

  std::vector<int> dw;
  for (int i = 0; i < scheme.size(); ++i)
    if (!scheme.is_b0(i)) dw.push_back(i);

  NormalizedDwi out;
  out.attenuation = Volume4D::zeros(dwi.nx, dwi.ny, dwi.nz, static_cast<int>(dw.size()), dwi.dtype);
  out.attenuation.voxel_size = dwi.voxel_size;
  out.valid_mask = Volume4D::zeros(dwi.nx, dwi.ny, dwi.nz, 1, Dtype::f32);
  out.valid_mask.voxel_size = dwi.voxel_size;
  out.scheme.shell_tolerance = scheme.shell_tolerance;
  out.scheme.bvals.resize(dw.size());
  for (size_t t = 0; t < dw.size(); ++t) {
    out.scheme.bvals[t] = scheme.bvals[dw[t]];
    out.scheme.bvecs.push_back(scheme.bvecs[dw[t]]);
  }

  for (int k = 0; k < dwi.nz; ++k)
    for (int j = 0; j < dwi.ny; ++j)
      for (int i = 0; i < dwi.nx; ++i) {
        double mean_b0 = 0;
        for (int b : b0s) mean_b0 += dwi.at(i, j, k, b);
        mean_b0 /= b0s.size();
        if (mean_b0 <= eps) continue; // excluded voxel, attenuation stays 0
        out.valid_mask.at(i, j, k) = 1.0;
        for (size_t t = 0; t < dw.size(); ++t)
          out.attenuation.at(i, j, k, static_cast<int>(t)) = dwi.at(i, j, k, dw[t]) / mean_b0;
      }
  return out;
}

std::vector<int> extract_shell(const GradientScheme& scheme, double target_b) {
  std::vector<int> out;
  for (int i = 0; i < scheme.size(); ++i)
    if (std::abs(scheme.bvals[i] - target_b) <= scheme.shell_tolerance) out.push_back(i);
  if (out.empty()) {
    // cluster the available bvals for the message
    std::vector<double> sorted(scheme.bvals.data(), scheme.bvals.data() + scheme.size());
    std::sort(sorted.begin(), sorted.end());
    std::string shells;
    double current = sorted.empty() ? 0 : sorted[0];
    shells += std::to_string(static_cast<long long>(std::llround(current)));
    for (double b : sorted)
      if (b - current > scheme.shell_tolerance) {
        current = b;
        shells += ", " + std::to_string(static_cast<long long>(std::llround(current)));
      }
    throw ConfigError("no shell at b=" + std::to_string(static_cast<long long>(std::llround(target_b))) +
                      " within tolerance " + std::to_string(static_cast<long long>(std::llround(scheme.shell_tolerance))) +
                      "; available shells: " + shells);
  }
  return out;
}

namespace {

void check_assembly_dims(const Volume4D& input_sh, const Volume4D& target_sh, const Volume4D& fractions,
                         const Volume4D& mask) {
  if (!input_sh.same_grid(target_sh) || !input_sh.same_grid(fractions) || !input_sh.same_grid(mask))
    throw FormatError("dataset assembly: volume grids disagree");
  if (input_sh.nv != target_sh.nv)
    throw FormatError("dataset assembly: input SH has " + std::to_string(input_sh.nv) +
                      " coefficients but target has " + std::to_string(target_sh.nv));
  if (fractions.nv != 3)
    throw FormatError("dataset assembly: fraction volume must have 3 components, got " + std::to_string(fractions.nv));
  if (mask.nv != 1) throw FormatError("dataset assembly: mask must have a single component");
}

int order_for_ncoeffs(int nv) {
  for (int order = 0; order <= 8; order += 2)
    if (sh::n_coeffs(order) == nv) return order;
  throw FormatError("dataset assembly: " + std::to_string(nv) + " components is not an even-order SH length");
}

Eigen::Vector3d fractions_at(const Volume4D& fractions, int i, int j, int k) {
  Eigen::Vector3d f(fractions.at(i, j, k, 0), fractions.at(i, j, k, 1), fractions.at(i, j, k, 2));
  for (int t = 0; t < 3; ++t) {
    if (f[t] < -1e-9 || f[t] > 1.0 + 1e-9)
      throw FormatError("dataset assembly: tissue fraction " + std::to_string(f[t]) + " at voxel (" +
                        std::to_string(i) + "," + std::to_string(j) + "," + std::to_string(k) +
                        ") outside [0, 1]");
    f[t] = std::clamp(f[t], 0.0, 1.0);
  }
  return f;
}

} // namespace

std::vector<VoxelSample> assemble_dataset(const Volume4D& input_sh, const Volume4D& target_sh,
                                          const Volume4D& fractions, const Volume4D& mask) {
  check_assembly_dims(input_sh, target_sh, fractions, mask);
  int order = order_for_ncoeffs(input_sh.nv);
  std::vector<VoxelSample> samples;
  for (int k = 0; k < input_sh.nz; ++k)
    for (int j = 0; j < input_sh.ny; ++j)
      for (int i = 0; i < input_sh.nx; ++i) {
        if (mask.at(i, j, k) == 0.0) continue;
        VoxelSample s;
        Eigen::VectorXd in(input_sh.nv), tgt(input_sh.nv);
        for (int v = 0; v < input_sh.nv; ++v) {
          in[v] = input_sh.at(i, j, k, v);
          tgt[v] = target_sh.at(i, j, k, v);
        }
        s.input_sh = sh::Coefficients(order, std::move(in));
        s.target_sh = sh::Coefficients(order, std::move(tgt));
        s.target_fractions = fractions_at(fractions, i, j, k);
        s.i = i;
        s.j = j;
        s.k = k;
        samples.push_back(std::move(s));
      }
  return samples;
}

std::vector<PatchSample> assemble_patches(const Volume4D& input_sh, const Volume4D& target_sh,
                                          const Volume4D& fractions, const Volume4D& mask) {
  check_assembly_dims(input_sh, target_sh, fractions, mask);
  int order = order_for_ncoeffs(input_sh.nv);
  std::vector<PatchSample> samples;
  for (int k = 0; k < input_sh.nz; ++k)
    for (int j = 0; j < input_sh.ny; ++j)
      for (int i = 0; i < input_sh.nx; ++i) {
        if (mask.at(i, j, k) == 0.0) continue;
        PatchSample s;
        s.order = order;
        s.input_patch.resize(27, input_sh.nv);
        int row = 0;
        for (int dk = -1; dk <= 1; ++dk)
          for (int dj = -1; dj <= 1; ++dj)
            for (int di = -1; di <= 1; ++di, ++row) {
              // nearest-edge replication at the borders
              int ii = std::clamp(i + di, 0, input_sh.nx - 1);
              int jj = std::clamp(j + dj, 0, input_sh.ny - 1);
              int kk = std::clamp(k + dk, 0, input_sh.nz - 1);
              for (int v = 0; v < input_sh.nv; ++v) s.input_patch(row, v) = input_sh.at(ii, jj, kk, v);
            }
        Eigen::VectorXd tgt(input_sh.nv);
        for (int v = 0; v < input_sh.nv; ++v) tgt[v] = target_sh.at(i, j, k, v);
        s.target_sh = sh::Coefficients(order, std::move(tgt));
        s.target_fractions = fractions_at(fractions, i, j, k);
        s.i = i;
        s.j = j;
        s.k = k;
        samples.push_back(std::move(s));
      }
  return samples;
}

void save_volume_cache(const std::string& dir, const std::map<std::string, Volume4D>& volumes,
                       const std::map<std::string, std::string>& meta) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  for (const auto& [key, value] : meta) manifest["meta"][key] = value;
  for (const auto& [name, vol] : volumes) {
    vol.check_invariants();
    nlohmann::ordered_json entry;
    entry["dims"] = {vol.nx, vol.ny, vol.nz, vol.nv};
    entry["voxel_size"] = {vol.voxel_size[0], vol.voxel_size[1], vol.voxel_size[2]};
    entry["payload"] = name + ".f32le";
    manifest["volumes"][name] = entry;
    std::vector<uint8_t> bytes(vol.data.size() * 4);
    for (size_t t = 0; t < vol.data.size(); ++t) put_f32(bytes, 4 * t, static_cast<float>(vol.data[t]));
    write_bytes(dir + "/" + name + ".f32le", bytes);
  }
  write_text(dir + "/manifest.json", manifest.dump(2) + "\n");
}

std::map<std::string, Volume4D> load_volume_cache(const std::string& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_text(dir + "/manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(dir + "/manifest.json: " + e.what());
  }
  std::map<std::string, Volume4D> out;
  for (const auto& [name, entry] : manifest.at("volumes").items()) {
    auto dims = entry.at("dims");
    Volume4D vol = Volume4D::zeros(dims.at(0), dims.at(1), dims.at(2), dims.at(3), Dtype::f32);
    if (entry.contains("voxel_size"))
      for (int d = 0; d < 3; ++d) vol.voxel_size[d] = entry.at("voxel_size").at(d);
    auto bytes = read_bytes(dir + "/" + entry.at("payload").get<std::string>());
    if (bytes.size() != vol.data.size() * 4)
      throw FormatError(dir + "/" + name + ".f32le: expected " + std::to_string(vol.data.size() * 4) +
                        " bytes, got " + std::to_string(bytes.size()));
    for (size_t t = 0; t < vol.data.size(); ++t) vol.data[t] = get_f32(bytes, 4 * t, false);
    out[name] = std::move(vol);
  }
  return out;
}

std::vector<uint8_t> read_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw ConfigError("failed writing " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw ConfigError("cannot open " + path + " for writing");
  f << text;
  if (!f) throw ConfigError("failed writing " + path);
}

} // namespace mtfodf::io
