#pragma once

// Coarse-to-fine lesion targeting over an externally computed feature field:
// text-conditioned cosine heatmap, organ z-range cropping, patch-level ROI
// scoring and ranked candidate emission.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "medagent/memory.hpp"
#include "medagent/volume.hpp"

namespace medagent {

struct GridDims {
  std::int64_t h = 1, w = 1, d = 1;
  std::size_t cells() const noexcept { return static_cast<std::size_t>(h * w * d); }
  std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const noexcept {
    return static_cast<std::size_t>(i + h * (j + w * k));
  }
  bool operator==(const GridDims&) const = default;
};

struct GridCell {
  std::int64_t i = 0, j = 0, k = 0;
};

/// h×w×d grid of n-dimensional local embeddings, cell-major with i fastest.
class FeatureField {
 public:
  FeatureField() = default;
  FeatureField(GridDims grid, std::size_t embed_dim, Dims voxel_dims, std::vector<float> data);

  const GridDims& grid() const noexcept { return grid_; }
  std::size_t embed_dim() const noexcept { return n_; }
  const Dims& voxel_dims() const noexcept { return voxel_dims_; }
  const std::vector<float>& data() const noexcept { return data_; }
  std::span<const float> vec(std::size_t cell) const { return {data_.data() + cell * n_, n_}; }

 private:
  GridDims grid_;
  std::size_t n_ = 0;
  Dims voxel_dims_;
  std::vector<float> data_;
};

class TextEmbedding {
 public:
  TextEmbedding() = default;
  explicit TextEmbedding(std::vector<float> v);
  const std::vector<float>& values() const noexcept { return v_; }
  std::size_t size() const noexcept { return v_.size(); }

 private:
  std::vector<float> v_;
};

/// Excluded (cropped) cells hold -infinity.
struct Heatmap {
  GridDims grid;
  std::vector<double> values;
  std::size_t zero_norm_cells = 0;
  bool empty_after_crop = false;

  double at(std::int64_t i, std::int64_t j, std::int64_t k) const { return values[grid.index(i, j, k)]; }
  std::size_t finite_cells() const;
};

/// Half-open voxel index box.
struct VoxelBox {
  std::int64_t x0 = 0, x1 = 0, y0 = 0, y1 = 0, z0 = 0, z1 = 0;
  std::size_t size() const noexcept { return static_cast<std::size_t>((x1 - x0) * (y1 - y0) * (z1 - z0)); }
};

/// Maps heatmap cells to the voxel boxes they cover: cell i spans
/// [floor(i·H/h), floor((i+1)·H/h)) along each axis, so boxes tile the volume.
class PatchGridMapping {
 public:
  PatchGridMapping(GridDims grid, Dims voxels);

  const GridDims& grid() const noexcept { return grid_; }
  const Dims& voxels() const noexcept { return voxels_; }
  VoxelBox box(std::int64_t i, std::int64_t j, std::int64_t k) const;
  VoxelBox box(std::size_t cell) const;
  GridCell cell_of(std::int64_t x, std::int64_t y, std::int64_t z) const;
  /// Cell-axis range [first, last] of cells whose z extent meets [z_lo, z_hi].
  std::pair<std::int64_t, std::int64_t> z_cells(std::int64_t z_lo, std::int64_t z_hi) const;

 private:
  GridDims grid_;
  Dims voxels_;
  std::vector<std::int64_t> cx_, cy_, cz_;  // voxel -> cell along each axis
};

/// Cosine of each ℓ2-normalised cell vector with the ℓ2-normalised text
/// vector. Zero-norm cells score 0 and are counted. Throws DimMismatch,
/// ZeroTextEmbedding.
Heatmap similarity_heatmap(const FeatureField& f, const TextEmbedding& t);

/// Min-max rescale of the finite cells to [0, 1]; constant maps become 0.5.
Heatmap normalize_heatmap(const Heatmap& h);

/// Excludes cells whose voxel z-extent lies entirely outside the range.
/// Throws InvalidRange for z_min > z_max or negative z_min. A range past the
/// last slice excludes everything and sets empty_after_crop.
Heatmap crop_by_z_range(const Heatmap& h, ZRange z_range, const PatchGridMapping& mapping);

/// Fraction of the cell's voxel box inside the organ.
double organ_overlap_ratio(GridCell cell, const BinaryMask& organ, const PatchGridMapping& mapping);
/// organ_overlap_ratio for every cell.
std::vector<double> organ_overlap_grid(const BinaryMask& organ, const PatchGridMapping& mapping);

/// Candidate region: a set of axial slices or a named sub-region mask.
struct Roi {
  RoiKind kind = RoiKind::AxialSlice;
  std::vector<std::int64_t> slices;
  std::string region;
  BinaryMask mask;

  static Roi axial(std::int64_t z) { return Roi{RoiKind::AxialSlice, {z}, {}, {}}; }
  static Roi sub_region(std::string name, BinaryMask m) {
    return Roi{RoiKind::SubRegion, {}, std::move(name), std::move(m)};
  }
};

/// Cells whose voxel box intersects the ROI.
std::vector<std::size_t> project_roi(const Roi& roi, const PatchGridMapping& mapping);

/// Sum of ρ(P)·H(P) over projected cells with H(P) ≥ τ. Throws EmptyProjection.
double score_roi(const Roi& roi, const Heatmap& h, const BinaryMask& organ, double tau,
                 const PatchGridMapping& mapping);
double score_roi(const Roi& roi, const Heatmap& h, std::span<const double> overlap, double tau,
                 const PatchGridMapping& mapping);

/// Descending score; ties go to the lower slice index, then the smaller
/// region name (slices before regions). Ranks are 1..min(top_k, n).
std::vector<RoiCandidate> rank_rois(std::span<const Roi> candidates, const Heatmap& h, const BinaryMask& organ,
                                    double tau, const PatchGridMapping& mapping, int top_k);

/// One axial ROI per slice of the range.
std::vector<Roi> slice_candidates(ZRange z_range);

struct CfltOptions {
  double tau = 0.5;
  int top_k = 3;
};

struct CfltResult {
  Heatmap heatmap;  // normalised and cropped
  std::vector<RoiCandidate> ranked;
};

/// Full targeting pass for one organ: heatmap, normalisation, crop to the
/// organ's z-range, slice candidates over that range, ranking. Candidates
/// are appended to `mem` when given.
CfltResult run_targeting(const FeatureField& f, const TextEmbedding& t, const BinaryMask& organ,
                         const CfltOptions& opts, EvidenceMemory* mem = nullptr,
                         std::span<const Roi> extra_candidates = {});

/// Cosine of the spatially averaged field with the text vector.
double volume_level_similarity(const FeatureField& f, const TextEmbedding& t);

// Tensor files: a text line "tensor dims=h,w,d,n voxel_dims=H,W,D" (or
// "tensor dims=n" for an embedding) followed by little-endian float32 data.
FeatureField read_feature_field(const std::filesystem::path& path);
TextEmbedding read_text_embedding(const std::filesystem::path& path);
void write_feature_field(const std::filesystem::path& path, const FeatureField& f);
void write_text_embedding(const std::filesystem::path& path, const TextEmbedding& t);

}  // namespace medagent
