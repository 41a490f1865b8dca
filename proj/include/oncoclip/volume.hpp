#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "oncoclip/kernels.hpp"

namespace oncoclip::volume {

using Index3 = std::array<std::size_t, 3>;
using Vec3 = std::array<double, 3>;

// 3D scalar voxel grid with physical geometry. Voxels are x-fastest:
// index = x + nx * (y + ny * z). Positions refer to voxel centres.
struct Volume3D {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::vector<float> voxels;

  Volume3D() : voxels(1, 0.0f) {}
  Volume3D(Index3 d, Vec3 s, Vec3 o, float fill = 0.0f);

  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + dims[0] * (y + dims[1] * z); }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return voxels[index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)]; }

  Vec3 position(double x, double y, double z) const;
  Vec3 center() const;
  float min_value() const;
  kernels::GridGeometry geometry() const { return {dims, spacing, origin}; }

  // Throws std::invalid_argument when an invariant is violated.
  void validate() const;
};

enum class Label : std::uint8_t { background = 0, kidney = 1, cyst = 2, tumor = 3 };

struct Mask3D {
  Index3 dims{1, 1, 1};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};
  std::vector<std::uint8_t> labels;

  Mask3D() : labels(1, 0) {}
  Mask3D(Index3 d, Vec3 s, Vec3 o);

  std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + dims[0] * (y + dims[1] * z); }
  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t z) { return labels[index(x, y, z)]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t z) const { return labels[index(x, y, z)]; }
  Vec3 position(double x, double y, double z) const;

  void validate() const;
  bool matches(const Volume3D& vol) const;
};

struct RoiPoint {
  Vec3 center{};
};

enum class Interp { trilinear, nearest };
enum class RoiStrategy { foreground_centroid, largest_axial_lesion };

// Thrown when a mask has no usable foreground; the caller is expected to
// supply a manual point instead.
class NoForeground : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Resample onto a grid of `target_dims` at `target_spacing` sharing the
// source's physical centre. Samples outside the source get the source minimum.
Volume3D resample_to_grid(const Volume3D& vol, Vec3 target_spacing, Index3 target_dims,
                          Interp interp = Interp::trilinear);
Mask3D resample_to_grid(const Mask3D& mask, Vec3 target_spacing, Index3 target_dims);

RoiPoint locate_roi_center(const Mask3D& mask, RoiStrategy strategy);

// Crop of ceil(extent / spacing) voxels per axis centred on `center`, at the
// source spacing and aligned to the source grid. Outside voxels get the source
// minimum.
Volume3D crop_physical(const Volume3D& vol, const RoiPoint& center, Vec3 extent_mm);

// clamp((hu - (level - width / 2)) / width, 0, 1).
Volume3D window_normalize(const Volume3D& vol, double level = 50.0, double width = 500.0);
double window_value(double hu, double level = 50.0, double width = 500.0);

Volume3D center_crop(const Volume3D& vol, Index3 dims);
Index3 center_crop_offset(Index3 source, Index3 dims);

// Sub-volume copy starting at voxel `offset`; must lie inside the source.
Volume3D extract(const Volume3D& vol, Index3 offset, Index3 dims);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct IntRange {
  int lo = 0;
  int hi = 0;
};

// Training-time augmentation. Defaults reproduce the CT augmentation table:
// random 128x128x32 crop, +-10 px x/y translation, +-pi/10 rotation about each
// axis, 0.9-1.1 x/y scaling, intensity scale 0.9-1.1, shift +-0.1 and gamma
// 0.5-2.0 with probability 0.5. Horizontal flips are off by default; they are
// a fine-tuning-only option.
struct AugConfig {
  double crop_prob = 1.0;
  IntRange translate_px{-10, 10};
  Range rotate_rad{-std::numbers::pi / 10.0, std::numbers::pi / 10.0};
  Range scale{0.9, 1.1};
  double flip_prob = 0.0;
  Range intensity_scale{0.9, 1.1};
  Range intensity_shift{-0.1, 0.1};
  double gamma_prob = 0.5;
  Range gamma_range{0.5, 2.0};
  Index3 crop_dims{128, 128, 32};
  std::uint64_t seed = 0;

  // A configuration whose only effect is a centre crop to `dims`.
  static AugConfig identity(Index3 dims);
  void validate() const;
};

Volume3D augment(const Volume3D& vol, const AugConfig& cfg);

// Default preprocessing constants.
inline constexpr Vec3 kCropExtentMm{140.0, 140.0, 160.0};
inline constexpr Vec3 kTargetSpacing{1.0, 1.0, 5.0};
inline constexpr Index3 kTargetDims{140, 140, 32};
inline constexpr Index3 kPatchDims{128, 128, 32};
inline constexpr double kWindowLevel = 50.0;
inline constexpr double kWindowWidth = 500.0;

// ROI crop -> resample -> window.
Volume3D preprocess(const Volume3D& vol, const RoiPoint& roi, double level = kWindowLevel,
                    double width = kWindowWidth);

// KVOL: one JSON header line, then raw little-endian voxels (x fastest).
void write_kvol(std::ostream& out, const Volume3D& vol);
void write_kvol(std::ostream& out, const Mask3D& mask);
void write_kvol(const std::string& path, const Volume3D& vol);
void write_kvol(const std::string& path, const Mask3D& mask);
Volume3D read_kvol_volume(std::istream& in);
Mask3D read_kvol_mask(std::istream& in);
Volume3D read_kvol_volume(const std::string& path);
Mask3D read_kvol_mask(const std::string& path);

}  // namespace oncoclip::volume
