#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "medagent/volume.hpp"

namespace medagent {

enum class VolumeFormat {
  Nifti1,          // .nii or .nii.gz, int16/uint8/float32, slope/intercept applied
  RawWithSidecar,  // little-endian float32 voxels plus "<file>.sidecar" text
};

/// .nii and .nii.gz map to Nifti1, anything else to RawWithSidecar.
VolumeFormat format_for_path(const std::filesystem::path& path);

/// Largest accepted extent along any axis.
inline constexpr std::int64_t kMaxDim = 4096;

ScalarVolume load_volume(const std::filesystem::path& path, VolumeFormat format);
ScalarVolume load_volume(const std::filesystem::path& path);

/// Loads an integer label grid. Voxel values must be non-negative integers
/// after scaling. Label names come from the raw sidecar `labels=` key, or from
/// `names` when given (NIfTI carries no names).
LabelVolume load_labels(const std::filesystem::path& path, VolumeFormat format,
                        const std::map<std::uint32_t, std::string>& names = {});
LabelVolume load_labels(const std::filesystem::path& path,
                        const std::map<std::uint32_t, std::string>& names = {});

std::filesystem::path sidecar_path(const std::filesystem::path& data_path);

void save_raw(const std::filesystem::path& path, const ScalarVolume& v);
void save_raw(const std::filesystem::path& path, const LabelVolume& v);

/// Uncompressed single-file NIfTI-1 with float32 voxels and unit scaling.
void save_nifti(const std::filesystem::path& path, const ScalarVolume& v);

/// Parses "1:liver;2:spleen".
std::map<std::uint32_t, std::string> parse_label_names(const std::string& text);
std::string format_label_names(const std::map<std::uint32_t, std::string>& names);

}  // namespace medagent
