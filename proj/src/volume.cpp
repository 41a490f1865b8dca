#include "oncoclip/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <nlohmann/json.hpp>
#include <ostream>
#include <stdexcept>

#include "oncoclip/error.hpp"
#include "oncoclip/random.hpp"

namespace oncoclip::volume {

namespace {

void validate_geometry(const Index3& dims, const Vec3& spacing, const char* what) {
  for (int r = 0; r < 3; ++r) {
    if (dims[r] < 1) throw std::invalid_argument(std::string(what) + ": dims must be >= 1");
    if (!(spacing[r] > 0.0) || !std::isfinite(spacing[r]))
      throw std::invalid_argument(std::string(what) + ": spacing must be > 0");
  }
}

constexpr std::array<double, 12> kIdentityAffine{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

Vec3 grid_center(const Index3& dims, const Vec3& spacing, const Vec3& origin) {
  Vec3 c{};
  for (int r = 0; r < 3; ++r) c[r] = origin[r] + spacing[r] * (static_cast<double>(dims[r]) - 1.0) / 2.0;
  return c;
}

Vec3 centered_origin(const Vec3& center, const Vec3& spacing, const Index3& dims) {
  Vec3 o{};
  for (int r = 0; r < 3; ++r) o[r] = center[r] - spacing[r] * (static_cast<double>(dims[r]) - 1.0) / 2.0;
  return o;
}

}  // namespace

Volume3D::Volume3D(Index3 d, Vec3 s, Vec3 o, float fill)
    : dims(d), spacing(s), origin(o), voxels(d[0] * d[1] * d[2], fill) {
  validate_geometry(dims, spacing, "Volume3D");
}

Vec3 Volume3D::position(double x, double y, double z) const {
  return {origin[0] + spacing[0] * x, origin[1] + spacing[1] * y, origin[2] + spacing[2] * z};
}

Vec3 Volume3D::center() const { return grid_center(dims, spacing, origin); }

float Volume3D::min_value() const { return *std::min_element(voxels.begin(), voxels.end()); }

void Volume3D::validate() const {
  validate_geometry(dims, spacing, "Volume3D");
  if (voxels.size() != size()) throw std::invalid_argument("Volume3D: voxel count does not match dims");
}

Mask3D::Mask3D(Index3 d, Vec3 s, Vec3 o) : dims(d), spacing(s), origin(o), labels(d[0] * d[1] * d[2], 0) {
  validate_geometry(dims, spacing, "Mask3D");
}

Vec3 Mask3D::position(double x, double y, double z) const {
  return {origin[0] + spacing[0] * x, origin[1] + spacing[1] * y, origin[2] + spacing[2] * z};
}

void Mask3D::validate() const {
  validate_geometry(dims, spacing, "Mask3D");
  if (labels.size() != size()) throw std::invalid_argument("Mask3D: label count does not match dims");
  for (auto l : labels)
    if (l > 3) throw std::invalid_argument("Mask3D: labels must be in {0,1,2,3}");
}

bool Mask3D::matches(const Volume3D& vol) const {
  return dims == vol.dims && spacing == vol.spacing && origin == vol.origin;
}

Volume3D resample_to_grid(const Volume3D& vol, Vec3 target_spacing, Index3 target_dims, Interp interp) {
  vol.validate();
  for (int r = 0; r < 3; ++r) {
    if (target_dims[r] == 0) throw std::invalid_argument("resample_to_grid: target dims must be >= 1");
    if (!(target_spacing[r] > 0.0)) throw std::invalid_argument("resample_to_grid: target spacing must be > 0");
  }
  Volume3D out(target_dims, target_spacing, centered_origin(vol.center(), target_spacing, target_dims));
  kernels::sample_grid(vol.voxels, vol.geometry(), out.voxels, out.geometry(), kIdentityAffine,
                       interp == Interp::nearest, vol.min_value());
  return out;
}

Mask3D resample_to_grid(const Mask3D& mask, Vec3 target_spacing, Index3 target_dims) {
  mask.validate();
  Volume3D as_float(mask.dims, mask.spacing, mask.origin);
  std::transform(mask.labels.begin(), mask.labels.end(), as_float.voxels.begin(),
                 [](std::uint8_t l) { return static_cast<float>(l); });
  Volume3D sampled(target_dims, target_spacing,
                   centered_origin(as_float.center(), target_spacing, target_dims));
  kernels::sample_grid(as_float.voxels, as_float.geometry(), sampled.voxels, sampled.geometry(),
                       kIdentityAffine, true, 0.0f);
  Mask3D out(target_dims, target_spacing, sampled.origin);
  std::transform(sampled.voxels.begin(), sampled.voxels.end(), out.labels.begin(),
                 [](float v) { return static_cast<std::uint8_t>(v); });
  return out;
}

RoiPoint locate_roi_center(const Mask3D& mask, RoiStrategy strategy) {
  mask.validate();
  const auto [nx, ny, nz] = mask.dims;
  if (strategy == RoiStrategy::foreground_centroid) {
    double sx = 0, sy = 0, sz = 0;
    std::size_t count = 0;
    for (std::size_t z = 0; z < nz; ++z)
      for (std::size_t y = 0; y < ny; ++y)
        for (std::size_t x = 0; x < nx; ++x)
          if (mask.at(x, y, z) != 0) {
            sx += static_cast<double>(x);
            sy += static_cast<double>(y);
            sz += static_cast<double>(z);
            ++count;
          }
    if (count == 0) throw NoForeground("locate_roi_center: mask has no foreground voxels");
    const auto n = static_cast<double>(count);
    return {mask.position(sx / n, sy / n, sz / n)};
  }

  // Tumour preferred over cyst.
  const auto has = [&](std::uint8_t l) { return std::find(mask.labels.begin(), mask.labels.end(), l) != mask.labels.end(); };
  std::uint8_t lesion = 0;
  if (has(static_cast<std::uint8_t>(Label::tumor)))
    lesion = static_cast<std::uint8_t>(Label::tumor);
  else if (has(static_cast<std::uint8_t>(Label::cyst)))
    lesion = static_cast<std::uint8_t>(Label::cyst);
  else
    throw NoForeground("locate_roi_center: mask has no tumour or cyst voxels");

  std::size_t best_z = 0;
  std::size_t best_area = 0;
  for (std::size_t z = 0; z < nz; ++z) {
    std::size_t area = 0;
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t x = 0; x < nx; ++x) area += mask.at(x, y, z) == lesion ? 1 : 0;
    if (area > best_area) {
      best_area = area;
      best_z = z;
    }
  }
  double sx = 0, sy = 0;
  for (std::size_t y = 0; y < ny; ++y)
    for (std::size_t x = 0; x < nx; ++x)
      if (mask.at(x, y, best_z) == lesion) {
        sx += static_cast<double>(x);
        sy += static_cast<double>(y);
      }
  const auto n = static_cast<double>(best_area);
  return {mask.position(sx / n, sy / n, static_cast<double>(best_z))};
}

Volume3D crop_physical(const Volume3D& vol, const RoiPoint& center, Vec3 extent_mm) {
  vol.validate();
  Index3 dims{};
  std::array<long long, 3> start{};
  for (int r = 0; r < 3; ++r) {
    if (!(extent_mm[r] > 0.0) || !std::isfinite(extent_mm[r]))
      throw std::invalid_argument("crop_physical: extent must be > 0");
    // The small slack keeps exact multiples (140 / 0.5) from rounding up.
    dims[r] = static_cast<std::size_t>(std::ceil(extent_mm[r] / vol.spacing[r] - 1e-9));
    if (dims[r] == 0) dims[r] = 1;
    const double c = (center.center[r] - vol.origin[r]) / vol.spacing[r];
    start[r] = static_cast<long long>(std::floor(c - (static_cast<double>(dims[r]) - 1.0) / 2.0 + 0.5));
  }
  Vec3 origin{};
  for (int r = 0; r < 3; ++r) origin[r] = vol.origin[r] + vol.spacing[r] * static_cast<double>(start[r]);
  Volume3D out(dims, vol.spacing, origin, vol.min_value());
  const auto inside = [&](long long v, int r) { return v >= 0 && v < static_cast<long long>(vol.dims[r]); };
  for (std::size_t z = 0; z < dims[2]; ++z) {
    const long long sz = start[2] + static_cast<long long>(z);
    if (!inside(sz, 2)) continue;
    for (std::size_t y = 0; y < dims[1]; ++y) {
      const long long sy = start[1] + static_cast<long long>(y);
      if (!inside(sy, 1)) continue;
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const long long sx = start[0] + static_cast<long long>(x);
        if (!inside(sx, 0)) continue;
        out.at(x, y, z) = vol.at(static_cast<std::size_t>(sx), static_cast<std::size_t>(sy), static_cast<std::size_t>(sz));
      }
    }
  }
  return out;
}

double window_value(double hu, double level, double width) {
  if (!(width > 0.0)) throw std::invalid_argument("window_normalize: width must be > 0");
  const double v = (hu - (level - width / 2.0)) / width;
  return std::clamp(v, 0.0, 1.0);
}

Volume3D window_normalize(const Volume3D& vol, double level, double width) {
  vol.validate();
  if (!(width > 0.0)) throw std::invalid_argument("window_normalize: width must be > 0");
  Volume3D out = vol;
  for (auto& v : out.voxels) v = static_cast<float>(window_value(v, level, width));
  return out;
}

Index3 center_crop_offset(Index3 source, Index3 dims) {
  Index3 off{};
  for (int r = 0; r < 3; ++r) {
    if (dims[r] == 0 || dims[r] > source[r])
      throw std::invalid_argument("center_crop: crop dims must be within the volume dims");
    off[r] = (source[r] - dims[r]) / 2;
  }
  return off;
}

Volume3D extract(const Volume3D& vol, Index3 offset, Index3 dims) {
  for (int r = 0; r < 3; ++r)
    if (dims[r] == 0 || offset[r] + dims[r] > vol.dims[r])
      throw std::invalid_argument("extract: region outside the volume");
  Volume3D out(dims, vol.spacing,
               vol.position(static_cast<double>(offset[0]), static_cast<double>(offset[1]),
                            static_cast<double>(offset[2])));
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y) {
      const float* src = &vol.voxels[vol.index(offset[0], offset[1] + y, offset[2] + z)];
      std::copy(src, src + dims[0], &out.voxels[out.index(0, y, z)]);
    }
  return out;
}

Volume3D center_crop(const Volume3D& vol, Index3 dims) {
  vol.validate();
  return extract(vol, center_crop_offset(vol.dims, dims), dims);
}

AugConfig AugConfig::identity(Index3 dims) {
  AugConfig c;
  c.crop_prob = 0.0;
  c.translate_px = {0, 0};
  c.rotate_rad = {0.0, 0.0};
  c.scale = {1.0, 1.0};
  c.flip_prob = 0.0;
  c.intensity_scale = {1.0, 1.0};
  c.intensity_shift = {0.0, 0.0};
  c.gamma_prob = 0.0;
  c.gamma_range = {1.0, 1.0};
  c.crop_dims = dims;
  return c;
}

void AugConfig::validate() const {
  auto ordered = [](const Range& r) { return r.lo <= r.hi; };
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (translate_px.lo > translate_px.hi || !ordered(rotate_rad) || !ordered(scale) ||
      !ordered(intensity_scale) || !ordered(intensity_shift) || !ordered(gamma_range))
    throw std::invalid_argument("AugConfig: ranges must satisfy lo <= hi");
  if (!prob(crop_prob) || !prob(flip_prob) || !prob(gamma_prob))
    throw std::invalid_argument("AugConfig: probabilities must lie in [0, 1]");
  if (scale.lo <= 0.0 || gamma_range.lo <= 0.0)
    throw std::invalid_argument("AugConfig: scale and gamma must be positive");
}

Volume3D augment(const Volume3D& vol, const AugConfig& cfg) {
  vol.validate();
  cfg.validate();
  for (int r = 0; r < 3; ++r)
    if (cfg.crop_dims[r] == 0 || cfg.crop_dims[r] > vol.dims[r])
      throw std::invalid_argument("augment: crop dims larger than the input volume");

  // Every draw is taken unconditionally and in a fixed order, so the stream
  // layout does not depend on which augmentations fire.
  Rng rng(cfg.seed);
  Index3 offset{};
  std::array<double, 3> crop_u{rng.uniform(), rng.uniform(), rng.uniform()};
  const bool random_crop = rng.uniform() < cfg.crop_prob;
  const auto tx = static_cast<double>(rng.integer(cfg.translate_px.lo, cfg.translate_px.hi));
  const auto ty = static_cast<double>(rng.integer(cfg.translate_px.lo, cfg.translate_px.hi));
  const double ax = rng.uniform(cfg.rotate_rad.lo, cfg.rotate_rad.hi);
  const double ay = rng.uniform(cfg.rotate_rad.lo, cfg.rotate_rad.hi);
  const double az = rng.uniform(cfg.rotate_rad.lo, cfg.rotate_rad.hi);
  const double sx = rng.uniform(cfg.scale.lo, cfg.scale.hi);
  const double sy = rng.uniform(cfg.scale.lo, cfg.scale.hi);
  const bool flip = rng.uniform() < cfg.flip_prob;
  const double iscale = rng.uniform(cfg.intensity_scale.lo, cfg.intensity_scale.hi);
  const double ishift = rng.uniform(cfg.intensity_shift.lo, cfg.intensity_shift.hi);
  const bool gamma_on = rng.uniform() < cfg.gamma_prob;
  const double gamma = rng.uniform(cfg.gamma_range.lo, cfg.gamma_range.hi);

  if (random_crop) {
    for (int r = 0; r < 3; ++r) {
      const auto slack = vol.dims[r] - cfg.crop_dims[r];
      offset[r] = std::min<std::size_t>(slack, static_cast<std::size_t>(crop_u[r] * static_cast<double>(slack + 1)));
    }
  } else {
    offset = center_crop_offset(vol.dims, cfg.crop_dims);
  }
  Volume3D out = extract(vol, offset, cfg.crop_dims);

  const bool affine_identity = tx == 0.0 && ty == 0.0 && ax == 0.0 && ay == 0.0 && az == 0.0 && sx == 1.0 && sy == 1.0;
  if (!affine_identity) {
    // Forward map about the centre c: q = c + S R ((p - c) + t). We sample the
    // source at the inverse image p = c + R^T S^-1 (q - c) - t.
    const double cxr = std::cos(ax), sxr = std::sin(ax);
    const double cyr = std::cos(ay), syr = std::sin(ay);
    const double czr = std::cos(az), szr = std::sin(az);
    const double rx[3][3] = {{1, 0, 0}, {0, cxr, -sxr}, {0, sxr, cxr}};
    const double ry[3][3] = {{cyr, 0, syr}, {0, 1, 0}, {-syr, 0, cyr}};
    const double rz[3][3] = {{czr, -szr, 0}, {szr, czr, 0}, {0, 0, 1}};
    double tmp[3][3]{};
    double rot[3][3]{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) tmp[i][j] += rz[i][k] * ry[k][j];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) rot[i][j] += tmp[i][k] * rx[k][j];
    const double inv_scale[3] = {1.0 / sx, 1.0 / sy, 1.0};
    const Vec3 c = out.center();
    const Vec3 t{tx * out.spacing[0], ty * out.spacing[1], 0.0};
    std::array<double, 12> a{};
    for (int i = 0; i < 3; ++i) {
      double off = c[i] - t[i];
      for (int j = 0; j < 3; ++j) {
        const double m = rot[j][i] * inv_scale[j];  // (R^T S^-1)_{ij}
        a[4 * i + j] = m;
        off -= m * c[j];
      }
      a[4 * i + 3] = off;
    }
    Volume3D warped(out.dims, out.spacing, out.origin);
    kernels::sample_grid(out.voxels, out.geometry(), warped.voxels, warped.geometry(), a, false, out.min_value());
    out = std::move(warped);
  }

  if (flip) {
    for (std::size_t z = 0; z < out.dims[2]; ++z)
      for (std::size_t y = 0; y < out.dims[1]; ++y) {
        float* row = &out.voxels[out.index(0, y, z)];
        std::reverse(row, row + out.dims[0]);
      }
  }

  for (auto& v : out.voxels) {
    double x = static_cast<double>(v) * iscale + ishift;
    x = std::clamp(x, 0.0, 1.0);
    if (gamma_on) x = std::pow(x, gamma);
    v = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

Volume3D preprocess(const Volume3D& vol, const RoiPoint& roi, double level, double width) {
  const Volume3D cropped = crop_physical(vol, roi, kCropExtentMm);
  const Volume3D resampled = resample_to_grid(cropped, kTargetSpacing, kTargetDims, Interp::trilinear);
  return window_normalize(resampled, level, width);
}

// ---------------------------------------------------------------------------
// KVOL

namespace {

using nlohmann::json;

json header_for(const Index3& dims, const Vec3& spacing, const Vec3& origin, const char* dtype, bool labels) {
  return json{{"magic", "KVOL1"},
              {"dims", {dims[0], dims[1], dims[2]}},
              {"spacing", {spacing[0], spacing[1], spacing[2]}},
              {"origin", {origin[0], origin[1], origin[2]}},
              {"dtype", dtype},
              {"labels", labels}};
}

template <class T>
void write_le(std::ostream& out, const std::vector<T>& values) {
  static_assert(std::is_arithmetic_v<T>);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else {
    for (T v : values) {
      char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      std::reverse(bytes, bytes + sizeof(T));
      out.write(bytes, sizeof(T));
    }
  }
}

template <class T>
std::vector<T> read_le(std::istream& in, std::size_t count) {
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(T)) throw DataError("KVOL: truncated voxel payload");
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : values) {
      char bytes[sizeof(T)];
      std::memcpy(bytes, &v, sizeof(T));
      std::reverse(bytes, bytes + sizeof(T));
      std::memcpy(&v, bytes, sizeof(T));
    }
  }
  return values;
}

struct Header {
  Index3 dims{};
  Vec3 spacing{};
  Vec3 origin{};
  std::string dtype;
  bool labels = false;
};

Header read_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("KVOL: missing header line");
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw DataError(std::string("KVOL: malformed header: ") + e.what());
  }
  if (h.value("magic", "") != "KVOL1") throw DataError("KVOL: bad magic");
  Header out;
  try {
    for (int r = 0; r < 3; ++r) {
      out.dims[r] = h.at("dims").at(r).get<std::size_t>();
      out.spacing[r] = h.at("spacing").at(r).get<double>();
      out.origin[r] = h.at("origin").at(r).get<double>();
    }
    out.dtype = h.at("dtype").get<std::string>();
    out.labels = h.value("labels", false);
  } catch (const json::exception& e) {
    throw DataError(std::string("KVOL: incomplete header: ") + e.what());
  }
  if (out.dtype != "f32" && out.dtype != "i16") throw DataError("KVOL: dtype must be f32 or i16");
  try {
    validate_geometry(out.dims, out.spacing, "KVOL");
  } catch (const std::invalid_argument& e) {
    throw DataError(e.what());
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open for writing: " + path);
  return f;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open: " + path);
  return f;
}

}  // namespace

void write_kvol(std::ostream& out, const Volume3D& vol) {
  vol.validate();
  out << header_for(vol.dims, vol.spacing, vol.origin, "f32", false).dump() << '\n';
  write_le(out, vol.voxels);
}

void write_kvol(std::ostream& out, const Mask3D& mask) {
  mask.validate();
  out << header_for(mask.dims, mask.spacing, mask.origin, "i16", true).dump() << '\n';
  std::vector<std::int16_t> v(mask.labels.begin(), mask.labels.end());
  write_le(out, v);
}

void write_kvol(const std::string& path, const Volume3D& vol) {
  auto f = open_out(path);
  write_kvol(f, vol);
}

void write_kvol(const std::string& path, const Mask3D& mask) {
  auto f = open_out(path);
  write_kvol(f, mask);
}

Volume3D read_kvol_volume(std::istream& in) {
  const Header h = read_header(in);
  Volume3D vol(h.dims, h.spacing, h.origin);
  if (h.dtype == "f32") {
    vol.voxels = read_le<float>(in, vol.size());
  } else {
    const auto raw = read_le<std::int16_t>(in, vol.size());
    std::transform(raw.begin(), raw.end(), vol.voxels.begin(), [](std::int16_t v) { return static_cast<float>(v); });
  }
  return vol;
}

Mask3D read_kvol_mask(std::istream& in) {
  const Header h = read_header(in);
  Mask3D mask(h.dims, h.spacing, h.origin);
  auto store = [&](auto value) {
    if (value < 0 || value > 3 || value != std::floor(static_cast<double>(value)))
      throw DataError("KVOL mask: labels must be in {0,1,2,3}");
    return static_cast<std::uint8_t>(value);
  };
  if (h.dtype == "i16") {
    const auto raw = read_le<std::int16_t>(in, mask.size());
    for (std::size_t i = 0; i < raw.size(); ++i) mask.labels[i] = store(raw[i]);
  } else {
    const auto raw = read_le<float>(in, mask.size());
    for (std::size_t i = 0; i < raw.size(); ++i) mask.labels[i] = store(raw[i]);
  }
  return mask;
}

Volume3D read_kvol_volume(const std::string& path) {
  auto f = open_in(path);
  return read_kvol_volume(f);
}

Mask3D read_kvol_mask(const std::string& path) {
  auto f = open_in(path);
  return read_kvol_mask(f);
}

}  // namespace oncoclip::volume
