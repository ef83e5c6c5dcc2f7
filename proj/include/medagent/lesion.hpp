#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "medagent/volume.hpp"

namespace medagent {

enum class Connectivity { Six = 6, TwentySix = 26 };

/// Inclusive voxel index ranges.
struct BoundingBox {
  std::int64_t x0 = 0, x1 = 0, y0 = 0, y1 = 0, z0 = 0, z1 = 0;
  bool operator==(const BoundingBox&) const = default;
};

struct LesionInstance {
  int id = 0;                        // 1-based, in output order
  std::vector<std::size_t> voxels;   // linear indices, ascending
  double physical_volume = 0.0;      // mL
  BoundingBox bbox;
};

inline constexpr double kDefaultMinLesionMl = 0.01;

/// Maximal connected components, ordered by descending volume, then by the
/// lowest (z, y, x) bounding-box corner, then by first voxel index.
std::vector<LesionInstance> connected_components_3d(const BinaryMask& m,
                                                    Connectivity connectivity = Connectivity::TwentySix);

std::vector<LesionInstance> filter_min_size(std::vector<LesionInstance> instances,
                                            double min_volume_ml = kDefaultMinLesionMl);

/// Largest by volume with the component ordering tie-break. Throws NoLesions.
const LesionInstance& largest_instance(std::span<const LesionInstance> instances);

BinaryMask instance_mask(const LesionInstance& inst, const Dims& dims, const Spacing& spacing);

/// Largest in-plane extent in mm: on the axial slice with the most member
/// voxels (lowest z on ties), the maximum centre-to-centre distance between
/// boundary voxels (members with a 4-neighbour outside the component).
double max_inplane_diameter(const LesionInstance& inst, const BinaryMask& m);

inline constexpr const char* kUnassigned = "unassigned";

/// Named region with the largest overlap fraction; ties go to the larger
/// absolute overlap, then the lexicographically smaller name. "unassigned"
/// when the instance touches no region.
std::string assign_region(const LesionInstance& inst, const LabelVolume& regions);

std::size_t count_by_region(std::span<const LesionInstance> instances, const LabelVolume& regions,
                            const std::string& query_region);

/// 100·z*/(D−1) for the slice z* of largest mask area (lowest on ties); 0 when D = 1.
double slice_percentile_of_max_extent(const BinaryMask& m);

/// stat(lesion) − stat(organ \ all_lesions). Throws EmptyLesion, NoNormalTissue.
double hu_contrast(const ScalarVolume& hu, const BinaryMask& lesion, const BinaryMask& organ,
                   const BinaryMask& all_lesions, HuStat stat = HuStat::Median);

/// V(emph ∩ lung) / V(lung). Throws EmptyLung.
double emphysema_index(const BinaryMask& emph, const BinaryMask& lung);
/// V(eff ∩ region) / V(region). Throws EmptyRegion.
double effusion_ratio(const BinaryMask& eff, const BinaryMask& region);

/// Ordered grades; value v falls in the first bin with v < upper_bound.
struct GradingBins {
  std::vector<double> upper_bounds;  // strictly increasing, last is +inf
  std::vector<std::string> labels;

  void validate() const;
};

GradingBins fixed_bins(const std::vector<double>& cutoffs, std::vector<std::string> labels);

/// Bounds at the i/k quantiles of the cohort (linear interpolation between
/// order statistics). Throws CohortTooSmall, DegenerateCohort.
GradingBins quantile_bins(std::vector<double> cohort, int k, std::vector<std::string> labels);

std::size_t grade_index(double value, const GradingBins& bins);
const std::string& grade(double value, const GradingBins& bins);

/// Inputs for the per-case analytics document; absent masks skip the
/// corresponding index.
struct CaseAnalyticsInput {
  std::string case_id;
  const ScalarVolume* hu = nullptr;
  const BinaryMask* lesions = nullptr;       // union of lesion masks for instances
  const LabelVolume* regions = nullptr;      // lobes or other named sub-regions
  const BinaryMask* organ = nullptr;         // parenchyma for the HU contrast
  const BinaryMask* lung = nullptr;
  const BinaryMask* emphysema = nullptr;
  const BinaryMask* effusion = nullptr;
  const BinaryMask* effusion_region = nullptr;
  Connectivity connectivity = Connectivity::TwentySix;
  double min_volume_ml = kDefaultMinLesionMl;
  HuStat stat = HuStat::Median;
};

nlohmann::json export_case_analytics(const CaseAnalyticsInput& in);

}  // namespace medagent
