#pragma once

// Case catalog: one JSON object per line naming a case, its source dataset,
// its finding labels and the files holding its voxels.

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "medagent/volume.hpp"

namespace medagent {

// Organ label names shared by the synthetic data and the generators.
inline const std::vector<std::string> kLobes = {"left upper lobe", "left lower lobe", "right upper lobe",
                                                "right middle lobe", "right lower lobe"};
inline const std::vector<std::string> kLeftLobes = {"left upper lobe", "left lower lobe"};
inline const std::vector<std::string> kRightLobes = {"right upper lobe", "right middle lobe", "right lower lobe"};

struct CaseVoxels {
  ScalarVolume hu;
  LabelVolume organs;   // lobes and other organs
  LabelVolume lesions;  // one label per finding name
};

struct CaseEntry {
  std::string case_id;
  std::string source;
  std::vector<std::string> labels;  // finding labels, sorted
  std::filesystem::path ct, organs, lesions;
  std::optional<std::filesystem::path> features;
  /// Voxel access. Label-only consumers never call it.
  std::function<CaseVoxels()> load;
};

nlohmann::json case_to_json(const CaseEntry& c, const std::filesystem::path& base);
/// Paths resolve against `base`; the loader reads them on demand.
CaseEntry case_from_json(const nlohmann::json& j, const std::filesystem::path& base);

std::vector<CaseEntry> load_catalog(const std::filesystem::path& path);
void save_catalog(const std::filesystem::path& path, const std::vector<CaseEntry>& cases);

/// Union of the named labels as a mask.
BinaryMask union_mask(const LabelVolume& v, const std::vector<std::string>& names);
/// Label volume keeping only the named labels.
LabelVolume restrict_labels(const LabelVolume& v, const std::vector<std::string>& names);

}  // namespace medagent
