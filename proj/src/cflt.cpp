#include "medagent/cflt.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

#include "medagent/error.hpp"
#include "medagent/kernels.hpp"
#include "medagent/util.hpp"

namespace medagent {
namespace fs = std::filesystem;

namespace {

constexpr double kExcluded = -std::numeric_limits<double>::infinity();

std::vector<std::int64_t> axis_lookup(std::int64_t cells, std::int64_t voxels) {
  std::vector<std::int64_t> out(static_cast<std::size_t>(voxels));
  for (std::int64_t c = 0; c < cells; ++c) {
    const std::int64_t lo = c * voxels / cells, hi = (c + 1) * voxels / cells;
    for (std::int64_t v = lo; v < hi; ++v) out[static_cast<std::size_t>(v)] = c;
  }
  return out;
}

// Unit vector computed so that any exact positive rescaling of the input
// yields bit-identical output: divide by the max magnitude first (exact
// quotient, correctly rounded), then by the ℓ2 norm.
std::vector<double> unit_vector(const std::vector<float>& v) {
  double peak = 0.0;
  for (float x : v) peak = std::max(peak, std::fabs(static_cast<double>(x)));
  if (peak == 0.0) throw Error(Errc::ZeroTextEmbedding, "text embedding has zero norm");
  std::vector<double> u(v.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    u[i] = static_cast<double>(v[i]) / peak;
    ss += u[i] * u[i];
  }
  const double norm = std::sqrt(ss);
  for (double& x : u) x /= norm;
  return u;
}

}  // namespace

FeatureField::FeatureField(GridDims grid, std::size_t embed_dim, Dims voxel_dims, std::vector<float> data)
    : grid_(grid), n_(embed_dim), voxel_dims_(voxel_dims), data_(std::move(data)) {
  if (grid_.h < 1 || grid_.w < 1 || grid_.d < 1 || n_ < 1) {
    throw Error(Errc::InvalidArgument, "feature grid dims must be >= 1");
  }
  if (grid_.h > voxel_dims_.h || grid_.w > voxel_dims_.w || grid_.d > voxel_dims_.d) {
    throw Error(Errc::InvalidArgument, "feature grid is finer than the voxel grid");
  }
  if (data_.size() != grid_.cells() * n_) throw Error(Errc::InvalidArgument, "feature data length mismatch");
  for (float x : data_) {
    if (!std::isfinite(x)) throw Error(Errc::InvalidArgument, "non-finite feature value");
  }
}

TextEmbedding::TextEmbedding(std::vector<float> v) : v_(std::move(v)) {
  if (v_.empty()) throw Error(Errc::InvalidArgument, "empty text embedding");
  bool nonzero = false;
  for (float x : v_) {
    if (!std::isfinite(x)) throw Error(Errc::InvalidArgument, "non-finite embedding value");
    nonzero |= x != 0.0f;
  }
  if (!nonzero) throw Error(Errc::ZeroTextEmbedding, "text embedding has zero norm");
}

std::size_t Heatmap::finite_cells() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](double v) { return std::isfinite(v); }));
}

PatchGridMapping::PatchGridMapping(GridDims grid, Dims voxels)
    : grid_(grid),
      voxels_(voxels),
      cx_(axis_lookup(grid.h, voxels.h)),
      cy_(axis_lookup(grid.w, voxels.w)),
      cz_(axis_lookup(grid.d, voxels.d)) {
  if (grid.h < 1 || grid.w < 1 || grid.d < 1 || grid.h > voxels.h || grid.w > voxels.w || grid.d > voxels.d) {
    throw Error(Errc::InvalidArgument, "patch grid must satisfy 1 <= cells <= voxels per axis");
  }
}

VoxelBox PatchGridMapping::box(std::int64_t i, std::int64_t j, std::int64_t k) const {
  return {i * voxels_.h / grid_.h, (i + 1) * voxels_.h / grid_.h, j * voxels_.w / grid_.w,
          (j + 1) * voxels_.w / grid_.w, k * voxels_.d / grid_.d, (k + 1) * voxels_.d / grid_.d};
}

VoxelBox PatchGridMapping::box(std::size_t cell) const {
  const auto c = static_cast<std::int64_t>(cell);
  return box(c % grid_.h, (c / grid_.h) % grid_.w, c / (grid_.h * grid_.w));
}

GridCell PatchGridMapping::cell_of(std::int64_t x, std::int64_t y, std::int64_t z) const {
  return {cx_[static_cast<std::size_t>(x)], cy_[static_cast<std::size_t>(y)], cz_[static_cast<std::size_t>(z)]};
}

std::pair<std::int64_t, std::int64_t> PatchGridMapping::z_cells(std::int64_t z_lo, std::int64_t z_hi) const {
  z_lo = std::clamp<std::int64_t>(z_lo, 0, voxels_.d - 1);
  z_hi = std::clamp<std::int64_t>(z_hi, 0, voxels_.d - 1);
  return {cz_[static_cast<std::size_t>(z_lo)], cz_[static_cast<std::size_t>(z_hi)]};
}

Heatmap similarity_heatmap(const FeatureField& f, const TextEmbedding& t) {
  if (f.embed_dim() != t.size()) {
    throw Error(Errc::DimMismatch, fmt::format("field dim {} vs embedding dim {}", f.embed_dim(), t.size()));
  }
  const auto unit = unit_vector(t.values());
  Heatmap h;
  h.grid = f.grid();
  h.values.resize(f.grid().cells());
  h.zero_norm_cells =
      kernels::active().cosine_rows(f.data().data(), h.values.size(), f.embed_dim(), unit.data(), h.values.data());
  return h;
}

Heatmap normalize_heatmap(const Heatmap& h) {
  Heatmap out = h;
  double lo = 0.0, hi = 0.0;
  if (!kernels::active().finite_minmax(h.values.data(), h.values.size(), &lo, &hi)) return out;
  const double span = hi - lo;
  for (double& v : out.values) {
    if (!std::isfinite(v)) continue;
    v = span > 0.0 ? (v - lo) / span : 0.5;
  }
  return out;
}

Heatmap crop_by_z_range(const Heatmap& h, ZRange z_range, const PatchGridMapping& mapping) {
  if (z_range.z_min > z_range.z_max || z_range.z_min < 0) {
    throw Error(Errc::InvalidRange, fmt::format("z range [{}, {}]", z_range.z_min, z_range.z_max));
  }
  if (!(h.grid == mapping.grid())) throw Error(Errc::DimMismatch, "heatmap and mapping grids differ");
  Heatmap out = h;
  for (std::int64_t k = 0; k < h.grid.d; ++k) {
    const VoxelBox b = mapping.box(0, 0, k);
    const bool meets = b.z0 <= z_range.z_max && b.z1 - 1 >= z_range.z_min;
    if (meets) continue;
    for (std::int64_t j = 0; j < h.grid.w; ++j) {
      for (std::int64_t i = 0; i < h.grid.h; ++i) out.values[h.grid.index(i, j, k)] = kExcluded;
    }
  }
  out.empty_after_crop = out.finite_cells() == 0;
  return out;
}

double organ_overlap_ratio(GridCell cell, const BinaryMask& organ, const PatchGridMapping& mapping) {
  if (!(organ.dims() == mapping.voxels())) throw Error(Errc::DimsMismatch, "organ mask and mapping differ");
  const VoxelBox b = mapping.box(cell.i, cell.j, cell.k);
  std::size_t inside = 0;
  for (std::int64_t z = b.z0; z < b.z1; ++z) {
    for (std::int64_t y = b.y0; y < b.y1; ++y) {
      for (std::int64_t x = b.x0; x < b.x1; ++x) inside += organ.at(x, y, z);
    }
  }
  return static_cast<double>(inside) / static_cast<double>(b.size());
}

std::vector<double> organ_overlap_grid(const BinaryMask& organ, const PatchGridMapping& mapping) {
  if (!(organ.dims() == mapping.voxels())) throw Error(Errc::DimsMismatch, "organ mask and mapping differ");
  const GridDims g = mapping.grid();
  std::vector<std::size_t> inside(g.cells(), 0);
  const Dims d = organ.dims();
  const auto& data = organ.data();
  for (std::int64_t z = 0; z < d.d; ++z) {
    for (std::int64_t y = 0; y < d.w; ++y) {
      for (std::int64_t x = 0; x < d.h; ++x) {
        if (!data[d.index(x, y, z)]) continue;
        const GridCell c = mapping.cell_of(x, y, z);
        ++inside[g.index(c.i, c.j, c.k)];
      }
    }
  }
  std::vector<double> out(g.cells());
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = static_cast<double>(inside[c]) / static_cast<double>(mapping.box(c).size());
  }
  return out;
}

std::vector<std::size_t> project_roi(const Roi& roi, const PatchGridMapping& mapping) {
  const GridDims g = mapping.grid();
  std::vector<std::uint8_t> hit(g.cells(), 0);
  if (roi.kind == RoiKind::AxialSlice) {
    for (std::int64_t z : roi.slices) {
      if (z < 0 || z >= mapping.voxels().d) continue;
      const std::int64_t k = mapping.cell_of(0, 0, z).k;
      for (std::int64_t j = 0; j < g.w; ++j) {
        for (std::int64_t i = 0; i < g.h; ++i) hit[g.index(i, j, k)] = 1;
      }
    }
  } else {
    if (!(roi.mask.dims() == mapping.voxels())) throw Error(Errc::DimsMismatch, "ROI mask and mapping differ");
    const Dims d = roi.mask.dims();
    const auto& data = roi.mask.data();
    for (std::size_t v = 0; v < data.size(); ++v) {
      if (!data[v]) continue;
      const Voxel p = unravel(d, v);
      const GridCell c = mapping.cell_of(p.x, p.y, p.z);
      hit[g.index(c.i, c.j, c.k)] = 1;
    }
  }
  std::vector<std::size_t> cells;
  for (std::size_t c = 0; c < hit.size(); ++c) {
    if (hit[c]) cells.push_back(c);
  }
  return cells;
}

double score_roi(const Roi& roi, const Heatmap& h, std::span<const double> overlap, double tau,
                 const PatchGridMapping& mapping) {
  if (!(h.grid == mapping.grid()) || overlap.size() != h.values.size()) {
    throw Error(Errc::DimMismatch, "heatmap, overlap grid and mapping disagree");
  }
  const auto cells = project_roi(roi, mapping);
  if (cells.empty()) throw Error(Errc::EmptyProjection, "ROI projects onto no heatmap cells");
  double s = 0.0;
  for (std::size_t c : cells) {
    const double v = h.values[c];
    if (v >= tau) s += overlap[c] * v;
  }
  return s;
}

double score_roi(const Roi& roi, const Heatmap& h, const BinaryMask& organ, double tau,
                 const PatchGridMapping& mapping) {
  const auto overlap = organ_overlap_grid(organ, mapping);
  return score_roi(roi, h, overlap, tau, mapping);
}

std::vector<RoiCandidate> rank_rois(std::span<const Roi> candidates, const Heatmap& h, const BinaryMask& organ,
                                    double tau, const PatchGridMapping& mapping, int top_k) {
  if (candidates.empty()) throw Error(Errc::NoCandidates, "no ROI candidates");
  if (top_k < 1) throw Error(Errc::InvalidArgument, "top_k must be >= 1");
  const auto overlap = organ_overlap_grid(organ, mapping);
  struct Scored {
    double score;
    const Roi* roi;
  };
  std::vector<Scored> scored;
  scored.reserve(candidates.size());
  for (const auto& r : candidates) scored.push_back({score_roi(r, h, overlap, tau, mapping), &r});

  auto key_less = [](const Roi& a, const Roi& b) {
    if (a.kind != b.kind) return a.kind == RoiKind::AxialSlice;
    if (a.kind == RoiKind::AxialSlice) {
      const auto za = a.slices.empty() ? 0 : *std::min_element(a.slices.begin(), a.slices.end());
      const auto zb = b.slices.empty() ? 0 : *std::min_element(b.slices.begin(), b.slices.end());
      return za < zb;
    }
    return a.region < b.region;
  };
  std::stable_sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return key_less(*a.roi, *b.roi);
  });

  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(top_k), scored.size());
  std::vector<RoiCandidate> out;
  for (std::size_t r = 0; r < k; ++r) {
    const Roi& roi = *scored[r].roi;
    RoiCandidate c;
    c.kind = roi.kind;
    if (roi.kind == RoiKind::AxialSlice) {
      c.slice = *std::min_element(roi.slices.begin(), roi.slices.end());
    } else {
      c.region = roi.region;
    }
    c.score = scored[r].score;
    c.rank = static_cast<int>(r + 1);
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<Roi> slice_candidates(ZRange z_range) {
  std::vector<Roi> out;
  for (std::int64_t z = z_range.z_min; z <= z_range.z_max; ++z) out.push_back(Roi::axial(z));
  return out;
}

CfltResult run_targeting(const FeatureField& f, const TextEmbedding& t, const BinaryMask& organ,
                         const CfltOptions& opts, EvidenceMemory* mem, std::span<const Roi> extra_candidates) {
  if (!(organ.dims() == f.voxel_dims())) throw Error(Errc::DimsMismatch, "organ mask and feature field voxel dims differ");
  const PatchGridMapping mapping(f.grid(), f.voxel_dims());
  const ZRange range = z_extent(organ);
  CfltResult out;
  out.heatmap = crop_by_z_range(normalize_heatmap(similarity_heatmap(f, t)), range, mapping);
  auto candidates = slice_candidates(range);
  candidates.insert(candidates.end(), extra_candidates.begin(), extra_candidates.end());
  out.ranked = rank_rois(candidates, out.heatmap, organ, opts.tau, mapping, opts.top_k);
  if (mem != nullptr) {
    for (const auto& c : out.ranked) mem->append(c);
  }
  return out;
}

double volume_level_similarity(const FeatureField& f, const TextEmbedding& t) {
  if (f.embed_dim() != t.size()) throw Error(Errc::DimMismatch, "field and embedding dims differ");
  std::vector<float> mean(f.embed_dim(), 0.0f);
  std::vector<double> acc(f.embed_dim(), 0.0);
  const std::size_t cells = f.grid().cells();
  for (std::size_t c = 0; c < cells; ++c) {
    const auto v = f.vec(c);
    for (std::size_t k = 0; k < v.size(); ++k) acc[k] += v[k];
  }
  for (std::size_t k = 0; k < acc.size(); ++k) mean[k] = static_cast<float>(acc[k] / static_cast<double>(cells));
  const auto unit = unit_vector(t.values());
  double out = 0.0;
  kernels::active().cosine_rows(mean.data(), 1, mean.size(), unit.data(), &out);
  return out;
}

namespace {

std::vector<std::int64_t> parse_ints(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(std::stoll(part));
  return out;
}

struct TensorHeader {
  std::vector<std::int64_t> dims;
  std::vector<std::int64_t> voxel_dims;
};

std::pair<TensorHeader, std::vector<float>> read_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open tensor file " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream hs(line);
  std::string word;
  hs >> word;
  if (word != "tensor") throw Error(Errc::MalformedHeader, "tensor file must start with 'tensor': " + path.string());
  TensorHeader h;
  try {
    while (hs >> word) {
      const auto eq = word.find('=');
      if (eq == std::string::npos) throw Error(Errc::MalformedHeader, "bad tensor header token " + word);
      const auto key = word.substr(0, eq);
      if (key == "dims") {
        h.dims = parse_ints(word.substr(eq + 1));
      } else if (key == "voxel_dims") {
        h.voxel_dims = parse_ints(word.substr(eq + 1));
      }
    }
  } catch (const std::logic_error&) {
    throw Error(Errc::MalformedHeader, "bad tensor header: " + line);
  }
  std::size_t n = 1;
  for (auto v : h.dims) {
    if (v < 1) throw Error(Errc::MalformedHeader, "tensor dims must be >= 1");
    n *= static_cast<std::size_t>(v);
  }
  if (h.dims.empty()) throw Error(Errc::MalformedHeader, "tensor header lacks dims=");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() != n * 4) {
    throw Error(Errc::MalformedHeader, fmt::format("tensor payload {} bytes, expected {}", bytes.size(), n * 4));
  }
  std::vector<float> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t u;
    std::memcpy(&u, bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    std::memcpy(&data[i], &u, 4);
  }
  return {h, std::move(data)};
}

void write_tensor(const fs::path& path, const std::string& header, const std::vector<float>& data) {
  std::string bytes = header + '\n';
  bytes.reserve(bytes.size() + 4 * data.size());
  for (float f : data) {
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    if constexpr (std::endian::native == std::endian::big) u = __builtin_bswap32(u);
    bytes.append(reinterpret_cast<const char*>(&u), 4);
  }
  write_file_atomic(path, bytes);
}

}  // namespace

FeatureField read_feature_field(const fs::path& path) {
  auto [h, data] = read_tensor(path);
  if (h.dims.size() != 4 || h.voxel_dims.size() != 3) {
    throw Error(Errc::MalformedHeader, "feature field needs dims=h,w,d,n and voxel_dims=H,W,D");
  }
  return FeatureField({h.dims[0], h.dims[1], h.dims[2]}, static_cast<std::size_t>(h.dims[3]),
                      {h.voxel_dims[0], h.voxel_dims[1], h.voxel_dims[2]}, std::move(data));
}

TextEmbedding read_text_embedding(const fs::path& path) {
  auto [h, data] = read_tensor(path);
  if (h.dims.size() != 1) throw Error(Errc::MalformedHeader, "embedding needs dims=n");
  return TextEmbedding(std::move(data));
}

void write_feature_field(const fs::path& path, const FeatureField& f) {
  const auto& g = f.grid();
  const auto& v = f.voxel_dims();
  write_tensor(path, fmt::format("tensor dims={},{},{},{} voxel_dims={},{},{}", g.h, g.w, g.d, f.embed_dim(), v.h, v.w, v.d),
               f.data());
}

void write_text_embedding(const fs::path& path, const TextEmbedding& t) {
  write_tensor(path, fmt::format("tensor dims={}", t.size()), t.values());
}

}  // namespace medagent
