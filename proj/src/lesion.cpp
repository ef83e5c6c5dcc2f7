#include "medagent/lesion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "medagent/error.hpp"

namespace medagent {
namespace {

class DisjointSet {
 public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) std::swap(a, b);
    parent_[a] = b;
  }

 private:
  std::vector<std::uint32_t> parent_;
};

struct Offset {
  std::int64_t dx, dy, dz;
};

// Neighbours preceding the current voxel in raster order.
std::vector<Offset> backward_offsets(Connectivity c) {
  if (c == Connectivity::Six) return {{-1, 0, 0}, {0, -1, 0}, {0, 0, -1}};
  std::vector<Offset> out;
  for (std::int64_t dz = -1; dz <= 0; ++dz) {
    for (std::int64_t dy = -1; dy <= 1; ++dy) {
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        out.push_back({dx, dy, dz});
      }
    }
  }
  return out;
}

bool corner_less(const LesionInstance& a, const LesionInstance& b) {
  if (a.voxels.size() != b.voxels.size()) return a.voxels.size() > b.voxels.size();
  const auto ka = std::tie(a.bbox.z0, a.bbox.y0, a.bbox.x0);
  const auto kb = std::tie(b.bbox.z0, b.bbox.y0, b.bbox.x0);
  if (ka != kb) return ka < kb;
  return a.voxels.front() < b.voxels.front();
}

// |a ∩ b| / |b|, or nullopt when b is empty
std::optional<double> occupancy(const BinaryMask& a, const BinaryMask& b) {
  const std::size_t num = intersection_count(a, b);
  const std::size_t den = b.count();
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

std::vector<LesionInstance> connected_components_3d(const BinaryMask& m, Connectivity connectivity) {
  const Dims d = m.dims();
  const auto& data = m.data();
  constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  std::vector<std::uint32_t> label(data.size(), kNone);
  DisjointSet sets;
  const auto offsets = backward_offsets(connectivity);

  for (std::int64_t z = 0; z < d.d; ++z) {
    for (std::int64_t y = 0; y < d.w; ++y) {
      for (std::int64_t x = 0; x < d.h; ++x) {
        const std::size_t i = d.index(x, y, z);
        if (!data[i]) continue;
        std::uint32_t cur = kNone;
        for (const auto& o : offsets) {
          const std::int64_t nx = x + o.dx, ny = y + o.dy, nz = z + o.dz;
          if (!d.contains(nx, ny, nz)) continue;
          const std::uint32_t nl = label[d.index(nx, ny, nz)];
          if (nl == kNone) continue;
          if (cur == kNone) {
            cur = nl;
          } else if (nl != cur) {
            sets.unite(cur, nl);
          }
        }
        label[i] = cur == kNone ? sets.make() : cur;
      }
    }
  }

  std::map<std::uint32_t, std::size_t> root_slot;
  std::vector<LesionInstance> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (label[i] == kNone) continue;
    const std::uint32_t root = sets.find(label[i]);
    auto [it, inserted] = root_slot.try_emplace(root, out.size());
    const Voxel v = unravel(d, i);
    if (inserted) {
      LesionInstance inst;
      inst.bbox = {v.x, v.x, v.y, v.y, v.z, v.z};
      out.push_back(std::move(inst));
    }
    LesionInstance& inst = out[it->second];
    inst.voxels.push_back(i);
    auto& b = inst.bbox;
    b.x0 = std::min(b.x0, v.x);
    b.x1 = std::max(b.x1, v.x);
    b.y0 = std::min(b.y0, v.y);
    b.y1 = std::max(b.y1, v.y);
    b.z0 = std::min(b.z0, v.z);
    b.z1 = std::max(b.z1, v.z);
  }
  const double ml_per_voxel = m.spacing().voxel_mm3() / 1000.0;
  for (auto& inst : out) inst.physical_volume = static_cast<double>(inst.voxels.size()) * ml_per_voxel;
  std::sort(out.begin(), out.end(), corner_less);
  for (std::size_t k = 0; k < out.size(); ++k) out[k].id = static_cast<int>(k + 1);
  return out;
}

std::vector<LesionInstance> filter_min_size(std::vector<LesionInstance> instances, double min_volume_ml) {
  if (!(min_volume_ml >= 0.0)) throw Error(Errc::InvalidArgument, "min volume must be >= 0");
  std::erase_if(instances, [&](const LesionInstance& i) { return i.physical_volume < min_volume_ml; });
  return instances;
}

const LesionInstance& largest_instance(std::span<const LesionInstance> instances) {
  if (instances.empty()) throw Error(Errc::NoLesions, "no lesion instances");
  const LesionInstance* best = &instances.front();
  for (const auto& inst : instances.subspan(1)) {
    if (inst.physical_volume > best->physical_volume ||
        (inst.physical_volume == best->physical_volume && corner_less(inst, *best))) {
      best = &inst;
    }
  }
  return *best;
}

BinaryMask instance_mask(const LesionInstance& inst, const Dims& dims, const Spacing& spacing) {
  std::vector<std::uint8_t> data(dims.voxels(), 0);
  for (std::size_t i : inst.voxels) data[i] = 1;
  return BinaryMask(dims, spacing, std::move(data));
}

double max_inplane_diameter(const LesionInstance& inst, const BinaryMask& m) {
  if (inst.voxels.empty()) throw Error(Errc::EmptyLesion, "empty lesion instance");
  const Dims d = m.dims();
  const std::size_t plane = d.slice_voxels();

  // voxels are ascending, so each slice is a contiguous run
  std::size_t best_begin = 0, best_len = 0;
  for (std::size_t i = 0; i < inst.voxels.size();) {
    const std::size_t z = inst.voxels[i] / plane;
    std::size_t j = i;
    while (j < inst.voxels.size() && inst.voxels[j] / plane == z) ++j;
    if (j - i > best_len) {
      best_begin = i;
      best_len = j - i;
    }
    i = j;
  }
  if (best_len == 1) return 0.0;

  const auto& b = inst.bbox;
  const std::int64_t bw = b.x1 - b.x0 + 1, bh = b.y1 - b.y0 + 1;
  std::vector<std::uint8_t> grid(static_cast<std::size_t>(bw * bh), 0);
  std::vector<std::pair<std::int64_t, std::int64_t>> pts;
  for (std::size_t k = best_begin; k < best_begin + best_len; ++k) {
    const Voxel v = unravel(d, inst.voxels[k]);
    grid[static_cast<std::size_t>((v.x - b.x0) + bw * (v.y - b.y0))] = 1;
    pts.emplace_back(v.x - b.x0, v.y - b.y0);
  }
  auto member = [&](std::int64_t x, std::int64_t y) {
    return x >= 0 && y >= 0 && x < bw && y < bh && grid[static_cast<std::size_t>(x + bw * y)];
  };
  std::vector<std::pair<std::int64_t, std::int64_t>> boundary;
  for (const auto& [x, y] : pts) {
    if (!member(x - 1, y) || !member(x + 1, y) || !member(x, y - 1) || !member(x, y + 1)) {
      boundary.emplace_back(x, y);
    }
  }
  const double sx = m.spacing().dx * m.spacing().dx;
  const double sy = m.spacing().dy * m.spacing().dy;
  double best = 0.0;
  for (std::size_t i = 0; i < boundary.size(); ++i) {
    for (std::size_t j = i + 1; j < boundary.size(); ++j) {
      const auto ex = static_cast<double>(boundary[i].first - boundary[j].first);
      const auto ey = static_cast<double>(boundary[i].second - boundary[j].second);
      best = std::max(best, ex * ex * sx + ey * ey * sy);
    }
  }
  return std::sqrt(best);
}

std::string assign_region(const LesionInstance& inst, const LabelVolume& regions) {
  std::map<std::string, std::size_t> overlap;
  for (std::size_t i : inst.voxels) {
    const std::uint32_t l = regions.data()[i];
    if (l != 0) ++overlap[regions.name_of(l)];
  }
  // every ratio shares the denominator |inst|, so the largest count wins;
  // std::map iteration gives the lexicographic tie-break
  std::string best = kUnassigned;
  std::size_t best_n = 0;
  for (const auto& [name, n] : overlap) {
    if (n > best_n) {
      best = name;
      best_n = n;
    }
  }
  return best;
}

std::size_t count_by_region(std::span<const LesionInstance> instances, const LabelVolume& regions,
                            const std::string& query_region) {
  std::size_t n = 0;
  for (const auto& inst : instances) n += assign_region(inst, regions) == query_region;
  return n;
}

double slice_percentile_of_max_extent(const BinaryMask& m) {
  const auto areas = slice_areas(m);
  std::size_t best = 0;
  for (std::size_t z = 1; z < areas.size(); ++z) {
    if (areas[z] > areas[best]) best = z;
  }
  if (areas[best] == 0) throw Error(Errc::EmptyMask, "slice percentile of empty mask");
  if (areas.size() == 1) return 0.0;
  return 100.0 * static_cast<double>(best) / static_cast<double>(areas.size() - 1);
}

double hu_contrast(const ScalarVolume& hu, const BinaryMask& lesion, const BinaryMask& organ,
                   const BinaryMask& all_lesions, HuStat stat) {
  if (lesion.empty()) throw Error(Errc::EmptyLesion, "lesion mask is empty");
  const BinaryMask normal = mask_minus(organ, all_lesions);
  if (normal.empty()) throw Error(Errc::NoNormalTissue, "organ has no voxels outside the lesions");
  return hu_statistic(hu, lesion, stat) - hu_statistic(hu, normal, stat);
}

double emphysema_index(const BinaryMask& emph, const BinaryMask& lung) {
  const auto r = occupancy(emph, lung);
  if (!r) throw Error(Errc::EmptyLung, "lung mask is empty");
  return *r;
}

double effusion_ratio(const BinaryMask& eff, const BinaryMask& region) {
  const auto r = occupancy(eff, region);
  if (!r) throw Error(Errc::EmptyRegion, "reference region is empty");
  return *r;
}

void GradingBins::validate() const {
  if (upper_bounds.empty() || upper_bounds.size() != labels.size()) {
    throw Error(Errc::InvalidArgument, "grading bins need one label per bound");
  }
  for (std::size_t i = 1; i < upper_bounds.size(); ++i) {
    if (!(upper_bounds[i] > upper_bounds[i - 1])) throw Error(Errc::InvalidArgument, "grading bounds must increase");
  }
  if (!std::isinf(upper_bounds.back()) || upper_bounds.back() < 0) {
    throw Error(Errc::InvalidArgument, "last grading bound must be +inf");
  }
}

GradingBins fixed_bins(const std::vector<double>& cutoffs, std::vector<std::string> labels) {
  GradingBins b{cutoffs, std::move(labels)};
  b.upper_bounds.push_back(std::numeric_limits<double>::infinity());
  b.validate();
  return b;
}

GradingBins quantile_bins(std::vector<double> cohort, int k, std::vector<std::string> labels) {
  if (k < 2) throw Error(Errc::InvalidArgument, "need at least two grades");
  if (cohort.size() < static_cast<std::size_t>(k)) {
    throw Error(Errc::CohortTooSmall, "cohort of " + std::to_string(cohort.size()) + " for " + std::to_string(k) + " grades");
  }
  std::sort(cohort.begin(), cohort.end());
  const auto n = static_cast<double>(cohort.size());
  std::vector<double> cuts;
  for (int i = 1; i < k; ++i) {
    const double h = (n - 1.0) * static_cast<double>(i) / static_cast<double>(k);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, cohort.size() - 1);
    const double frac = h - static_cast<double>(lo);
    cuts.push_back(cohort[lo] + frac * (cohort[hi] - cohort[lo]));
  }
  // the lowest grade must be reachable and bounds strictly increasing
  if (!(cuts.front() > cohort.front())) throw Error(Errc::DegenerateCohort, "quantile bound equals cohort minimum");
  for (std::size_t i = 1; i < cuts.size(); ++i) {
    if (!(cuts[i] > cuts[i - 1])) throw Error(Errc::DegenerateCohort, "repeated quantile bounds");
  }
  return fixed_bins(cuts, std::move(labels));
}

std::size_t grade_index(double value, const GradingBins& bins) {
  for (std::size_t i = 0; i < bins.upper_bounds.size(); ++i) {
    if (value < bins.upper_bounds[i]) return i;
  }
  return bins.upper_bounds.size() - 1;
}

const std::string& grade(double value, const GradingBins& bins) { return bins.labels[grade_index(value, bins)]; }

nlohmann::json export_case_analytics(const CaseAnalyticsInput& in) {
  nlohmann::json j;
  j["case_id"] = in.case_id;
  auto instances = nlohmann::json::array();
  if (in.lesions != nullptr) {
    const auto comps = filter_min_size(connected_components_3d(*in.lesions, in.connectivity), in.min_volume_ml);
    for (const auto& c : comps) {
      nlohmann::json e;
      e["id"] = c.id;
      e["volume_ml"] = c.physical_volume;
      e["voxels"] = c.voxels.size();
      e["diameter_mm"] = max_inplane_diameter(c, *in.lesions);
      e["region"] = in.regions != nullptr ? assign_region(c, *in.regions) : std::string(kUnassigned);
      e["slice_percentile"] =
          slice_percentile_of_max_extent(instance_mask(c, in.lesions->dims(), in.lesions->spacing()));
      e["bbox"] = {c.bbox.x0, c.bbox.x1, c.bbox.y0, c.bbox.y1, c.bbox.z0, c.bbox.z1};
      instances.push_back(std::move(e));
    }
  }
  j["instances"] = std::move(instances);

  nlohmann::json idx = nlohmann::json::object();
  if (in.emphysema != nullptr && in.lung != nullptr && !in.lung->empty()) {
    idx["emphysema_index"] = emphysema_index(*in.emphysema, *in.lung);
  }
  if (in.effusion != nullptr && in.effusion_region != nullptr && !in.effusion_region->empty()) {
    idx["effusion_ratio"] = effusion_ratio(*in.effusion, *in.effusion_region);
  }
  if (in.hu != nullptr && in.lesions != nullptr && in.organ != nullptr && !in.lesions->empty()) {
    const auto comps = connected_components_3d(*in.lesions, in.connectivity);
    const BinaryMask target = instance_mask(largest_instance(comps), in.lesions->dims(), in.lesions->spacing());
    try {
      idx["delta_hu"] = hu_contrast(*in.hu, target, *in.organ, *in.lesions, in.stat);
    } catch (const Error& e) {
      if (e.code() != Errc::NoNormalTissue) throw;
    }
  }
  j["indices"] = std::move(idx);
  return j;
}

}  // namespace medagent
