#include "medagent/volume.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "medagent/error.hpp"
#include "medagent/kernels.hpp"

namespace medagent {
namespace {

void check_geometry(const Dims& dims, const Spacing& spacing, std::size_t n) {
  if (dims.h < 1 || dims.w < 1 || dims.d < 1) {
    throw Error(Errc::InvalidArgument, "volume dims must be >= 1");
  }
  for (double s : {spacing.dx, spacing.dy, spacing.dz}) {
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(Errc::InvalidArgument, "spacing must be positive");
  }
  if (n != dims.voxels()) throw Error(Errc::InvalidArgument, "data length does not match dims");
}

void check_pair(const Dims& a, const Dims& b) {
  if (!(a == b)) throw Error(Errc::DimsMismatch, "volume and mask dims differ");
}

std::vector<double> gather(const ScalarVolume& v, const BinaryMask& m) {
  check_pair(v.dims(), m.dims());
  std::vector<double> out;
  const auto& d = v.data();
  const auto& md = m.data();
  for (std::size_t i = 0; i < md.size(); ++i) {
    if (md[i]) out.push_back(d[i]);
  }
  if (out.empty()) throw Error(Errc::EmptyMask, "HU statistic over empty mask");
  return out;
}

}  // namespace

ScalarVolume::ScalarVolume(Dims dims, Spacing spacing, std::vector<float> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_geometry(dims_, spacing_, data_.size());
}

BinaryMask::BinaryMask(Dims dims, Spacing spacing)
    : dims_(dims), spacing_(spacing), data_(dims.voxels(), 0) {
  check_geometry(dims_, spacing_, data_.size());
}

BinaryMask::BinaryMask(Dims dims, Spacing spacing, std::vector<std::uint8_t> data)
    : dims_(dims), spacing_(spacing), data_(std::move(data)) {
  check_geometry(dims_, spacing_, data_.size());
}

std::size_t BinaryMask::count() const {
  return kernels::active().count_nonzero(data_.data(), data_.size());
}

LabelVolume::LabelVolume(Dims dims, Spacing spacing, std::vector<std::uint32_t> data,
                         std::map<std::uint32_t, std::string> names)
    : dims_(dims), spacing_(spacing), data_(std::move(data)), names_(std::move(names)) {
  check_geometry(dims_, spacing_, data_.size());
  std::set<std::uint32_t> present(data_.begin(), data_.end());
  for (std::uint32_t l : present) {
    if (l != 0 && !names_.count(l)) names_[l] = "label_" + std::to_string(l);
  }
}

std::optional<std::uint32_t> LabelVolume::label_of(const std::string& name) const {
  for (const auto& [label, n] : names_) {
    if (n == name) return label;
  }
  return std::nullopt;
}

std::string LabelVolume::name_of(std::uint32_t label) const {
  auto it = names_.find(label);
  return it != names_.end() ? it->second : "label_" + std::to_string(label);
}

BinaryMask LabelVolume::mask(std::uint32_t label) const {
  std::vector<std::uint8_t> out(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) out[i] = data_[i] == label ? 1 : 0;
  return BinaryMask(dims_, spacing_, std::move(out));
}

BinaryMask LabelVolume::mask(const std::string& name) const {
  if (auto l = label_of(name)) return mask(*l);
  return BinaryMask(dims_, spacing_);
}

BinaryMask LabelVolume::nonzero() const {
  std::vector<std::uint8_t> out(data_.size());
  for (std::size_t i = 0; i < data_.size(); ++i) out[i] = data_[i] != 0 ? 1 : 0;
  return BinaryMask(dims_, spacing_, std::move(out));
}

ScalarVolume resample_depth(const ScalarVolume& v, std::int64_t target_depth) {
  if (target_depth < 1) throw Error(Errc::InvalidArgument, "target_depth must be >= 1");
  const Dims in = v.dims();
  if (target_depth == in.d) return v;

  Dims out_dims{in.h, in.w, target_depth};
  Spacing sp = v.spacing();
  sp.dz = sp.dz * static_cast<double>(in.d) / static_cast<double>(target_depth);

  const std::size_t plane = in.slice_voxels();
  std::vector<float> out(out_dims.voxels());
  const auto& src = v.data();
  const auto& k = kernels::active();
  for (std::int64_t z = 0; z < target_depth; ++z) {
    double pos;
    if (target_depth == 1) {
      pos = 0.5 * static_cast<double>(in.d - 1);
    } else {
      pos = static_cast<double>(z) * static_cast<double>(in.d - 1) / static_cast<double>(target_depth - 1);
    }
    auto z0 = static_cast<std::int64_t>(std::floor(pos));
    z0 = std::clamp<std::int64_t>(z0, 0, in.d - 1);
    const std::int64_t z1 = std::min<std::int64_t>(z0 + 1, in.d - 1);
    const auto w = static_cast<float>(pos - static_cast<double>(z0));
    const float* a = src.data() + static_cast<std::size_t>(z0) * plane;
    const float* b = src.data() + static_cast<std::size_t>(z1) * plane;
    k.lerp(a, b, w, out.data() + static_cast<std::size_t>(z) * plane, plane);
  }
  return ScalarVolume(out_dims, sp, std::move(out));
}

std::vector<std::int64_t> uniform_slice_sample(std::int64_t depth, std::int64_t k) {
  if (k < 1 || depth < 1) throw Error(Errc::InvalidArgument, "k and depth must be >= 1");
  if (k > depth) throw Error(Errc::KTooLarge, "k = " + std::to_string(k) + " exceeds depth " + std::to_string(depth));
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    // (2i + 1)·D / 2k in exact integer arithmetic
    const std::int64_t idx = ((2 * i + 1) * depth) / (2 * k);
    out.push_back(std::clamp<std::int64_t>(idx, 0, depth - 1));
  }
  return out;
}

std::vector<std::int64_t> uniform_slice_sample(const ScalarVolume& v, std::int64_t k) {
  return uniform_slice_sample(v.dims().d, k);
}

double mask_physical_volume(const BinaryMask& m) {
  return static_cast<double>(m.count()) * m.spacing().voxel_mm3() / 1000.0;
}

double mean_hu(const ScalarVolume& v, const BinaryMask& m) {
  check_pair(v.dims(), m.dims());
  const auto r = kernels::active().masked_sum(v.data().data(), m.data().data(), m.data().size());
  if (r.count == 0) throw Error(Errc::EmptyMask, "mean HU over empty mask");
  return r.sum / static_cast<double>(r.count);
}

double median_hu(const ScalarVolume& v, const BinaryMask& m) {
  auto vals = gather(v, m);
  const std::size_t n = vals.size();
  const std::size_t mid = n / 2;
  std::nth_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid), vals.end());
  const double hi = vals[mid];
  if (n % 2 == 1) return hi;
  const double lo = *std::max_element(vals.begin(), vals.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double trimmed_mean_hu(const ScalarVolume& v, const BinaryMask& m, double tail) {
  if (!(tail >= 0.0 && tail < 0.5)) throw Error(Errc::InvalidArgument, "trim tail must be in [0, 0.5)");
  auto vals = gather(v, m);
  std::sort(vals.begin(), vals.end());
  const auto cut = static_cast<std::size_t>(std::floor(tail * static_cast<double>(vals.size())));
  double s = 0.0;
  for (std::size_t i = cut; i < vals.size() - cut; ++i) s += vals[i];
  return s / static_cast<double>(vals.size() - 2 * cut);
}

double hu_statistic(const ScalarVolume& v, const BinaryMask& m, HuStat stat) {
  switch (stat) {
    case HuStat::Mean: return mean_hu(v, m);
    case HuStat::Median: return median_hu(v, m);
    case HuStat::TrimmedMean: return trimmed_mean_hu(v, m, 0.1);
  }
  return mean_hu(v, m);
}

std::vector<std::size_t> slice_areas(const BinaryMask& m) {
  const auto& k = kernels::active();
  const std::size_t plane = m.dims().slice_voxels();
  std::vector<std::size_t> out(static_cast<std::size_t>(m.dims().d));
  for (std::size_t z = 0; z < out.size(); ++z) out[z] = k.count_nonzero(m.data().data() + z * plane, plane);
  return out;
}

ZRange z_extent(const BinaryMask& m) {
  const auto areas = slice_areas(m);
  std::int64_t lo = -1, hi = -1;
  for (std::size_t z = 0; z < areas.size(); ++z) {
    if (areas[z] == 0) continue;
    if (lo < 0) lo = static_cast<std::int64_t>(z);
    hi = static_cast<std::int64_t>(z);
  }
  if (lo < 0) throw Error(Errc::EmptyMask, "z extent of empty mask");
  return {lo, hi};
}

namespace {
template <typename Op>
BinaryMask combine(const BinaryMask& a, const BinaryMask& b, Op op) {
  check_pair(a.dims(), b.dims());
  std::vector<std::uint8_t> out(a.data().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = op(a.data()[i] != 0, b.data()[i] != 0) ? 1 : 0;
  return BinaryMask(a.dims(), a.spacing(), std::move(out));
}
}  // namespace

BinaryMask mask_and(const BinaryMask& a, const BinaryMask& b) {
  return combine(a, b, [](bool x, bool y) { return x && y; });
}
BinaryMask mask_or(const BinaryMask& a, const BinaryMask& b) {
  return combine(a, b, [](bool x, bool y) { return x || y; });
}
BinaryMask mask_minus(const BinaryMask& a, const BinaryMask& b) {
  return combine(a, b, [](bool x, bool y) { return x && !y; });
}

std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  check_pair(a.dims(), b.dims());
  return kernels::active().count_both(a.data().data(), b.data().data(), a.data().size());
}

}  // namespace medagent
