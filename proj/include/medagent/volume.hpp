#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace medagent {

/// Millimetres per voxel along x, y, z.
struct Spacing {
  double dx = 1.0;
  double dy = 1.0;
  double dz = 1.0;

  double voxel_mm3() const noexcept { return dx * dy * dz; }
  bool operator==(const Spacing&) const = default;
};

/// Voxel counts along x (h), y (w) and z (d). Storage is x-fastest, z-slowest.
struct Dims {
  std::int64_t h = 1;
  std::int64_t w = 1;
  std::int64_t d = 1;

  std::size_t voxels() const noexcept { return static_cast<std::size_t>(h * w * d); }
  std::size_t slice_voxels() const noexcept { return static_cast<std::size_t>(h * w); }
  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return static_cast<std::size_t>(x + h * (y + w * z));
  }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const noexcept {
    return x >= 0 && y >= 0 && z >= 0 && x < h && y < w && z < d;
  }
  bool operator==(const Dims&) const = default;
};

struct Voxel {
  std::int64_t x = 0, y = 0, z = 0;
};

inline Voxel unravel(const Dims& dims, std::size_t i) noexcept {
  const auto si = static_cast<std::int64_t>(i);
  return {si % dims.h, (si / dims.h) % dims.w, si / (dims.h * dims.w)};
}

/// CT intensities in Hounsfield units.
class ScalarVolume {
 public:
  ScalarVolume() = default;
  ScalarVolume(Dims dims, Spacing spacing, std::vector<float> data);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  const std::vector<float>& data() const noexcept { return data_; }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data_[dims_.index(x, y, z)]; }

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<float> data_;
};

/// Membership grid over a volume; nonzero bytes are members.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(Dims dims, Spacing spacing);
  BinaryMask(Dims dims, Spacing spacing, std::vector<std::uint8_t> data);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  const std::vector<std::uint8_t>& data() const noexcept { return data_; }
  bool at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data_[dims_.index(x, y, z)] != 0; }
  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return dims_.contains(x, y, z) && at(x, y, z);
  }
  std::size_t count() const;
  bool empty() const { return count() == 0; }

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<std::uint8_t> data_;
};

/// Integer label grid with a name for every label that occurs.
class LabelVolume {
 public:
  LabelVolume() = default;
  LabelVolume(Dims dims, Spacing spacing, std::vector<std::uint32_t> data,
              std::map<std::uint32_t, std::string> names);

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  const std::vector<std::uint32_t>& data() const noexcept { return data_; }
  const std::map<std::uint32_t, std::string>& names() const noexcept { return names_; }

  std::optional<std::uint32_t> label_of(const std::string& name) const;
  /// Name for a label, or "label_<id>" when the label has none.
  std::string name_of(std::uint32_t label) const;
  BinaryMask mask(std::uint32_t label) const;
  /// Mask of the named label; empty mask if the name is unknown.
  BinaryMask mask(const std::string& name) const;
  BinaryMask nonzero() const;

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<std::uint32_t> data_;
  std::map<std::uint32_t, std::string> names_;
};

struct ZRange {
  std::int64_t z_min = 0;
  std::int64_t z_max = 0;
  bool operator==(const ZRange&) const = default;
};

enum class HuStat { Mean, Median, TrimmedMean };

// -- depth protocol ---------------------------------------------------------

/// Linear interpolation along z to `target_depth` slices. Sample k of the
/// output sits at source position k·(D−1)/(T−1) (end slices preserved); a
/// single output slice samples the centre. z spacing scales by D/T.
ScalarVolume resample_depth(const ScalarVolume& v, std::int64_t target_depth);

/// k strictly increasing axial indices, one per equal-width bin: the slice
/// containing the centre of bin i, floor((i + 0.5)·D/k).
std::vector<std::int64_t> uniform_slice_sample(std::int64_t depth, std::int64_t k);
std::vector<std::int64_t> uniform_slice_sample(const ScalarVolume& v, std::int64_t k);

// -- mask measurements ------------------------------------------------------

/// Physical volume in millilitres.
double mask_physical_volume(const BinaryMask& m);

double mean_hu(const ScalarVolume& v, const BinaryMask& m);
double median_hu(const ScalarVolume& v, const BinaryMask& m);
/// Mean after dropping floor(tail·n) values from each end of the sorted sample.
double trimmed_mean_hu(const ScalarVolume& v, const BinaryMask& m, double tail = 0.1);
double hu_statistic(const ScalarVolume& v, const BinaryMask& m, HuStat stat);

ZRange z_extent(const BinaryMask& m);

/// Voxels per axial slice.
std::vector<std::size_t> slice_areas(const BinaryMask& m);

// -- mask algebra (dims must match) -------------------------------------------

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b);
BinaryMask mask_minus(const BinaryMask& a, const BinaryMask& b);
std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b);

}  // namespace medagent
