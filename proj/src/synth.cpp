#include "medagent/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>

#include <fmt/format.h>

#include "medagent/error.hpp"
#include "medagent/rng.hpp"
#include "medagent/volume_io.hpp"

namespace medagent {
namespace fs = std::filesystem;

namespace {

// Phenotype key groups mirrored from the default rule tables so the cohort
// covers single-group, mixed and phenotype-free cases.
const std::vector<std::vector<std::string>> kGroups = {
    {"emphysema", "bronchiectasis", "peribronchial thickening", "mosaic attenuation pattern"},
    {"pulmonary fibrotic sequela", "interlobular septal thickening"},
    {"consolidation", "lung opacity", "ground glass opacity"},
    {"lung nodule", "lung mass", "pleural effusion"},
};
const std::vector<std::string> kExtras = {"cardiomegaly",      "arterial wall calcification",
                                          "coronary artery wall calcification", "hiatal hernia",
                                          "lymphadenopathy",   "medical material", "pericardial effusion"};

constexpr float kLungHu = -850.0f;

struct Builder {
  Dims dims;
  Spacing spacing;
  Rng& rng;
  std::vector<float> hu;
  std::vector<std::uint32_t> organ;
  std::vector<std::uint32_t> lesion;
  std::map<std::string, std::uint32_t> lesion_ids;

  Builder(Dims d, Spacing s, Rng& r)
      : dims(d), spacing(s), rng(r), hu(d.voxels(), -1000.0f), organ(d.voxels(), 0), lesion(d.voxels(), 0) {}

  std::uint32_t lesion_id(const std::string& name) {
    auto it = lesion_ids.find(name);
    if (it != lesion_ids.end()) return it->second;
    const auto id = static_cast<std::uint32_t>(lesion_ids.size() + 1);
    lesion_ids[name] = id;
    return id;
  }

  bool is_lung(std::size_t i) const { return organ[i] >= 1 && organ[i] <= 5; }

  std::vector<std::size_t> lung_voxels(const std::vector<std::uint32_t>& lobes) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < organ.size(); ++i) {
      if (lesion[i] == 0 && std::find(lobes.begin(), lobes.end(), organ[i]) != lobes.end()) out.push_back(i);
    }
    return out;
  }

  // Paints the n free lung voxels nearest to a random seed voxel of `lobes`.
  std::size_t blob(const std::vector<std::uint32_t>& lobes, std::size_t n, const std::string& name, float value) {
    const auto cands = lung_voxels(lobes);
    if (cands.empty() || n == 0) return 0;
    const Voxel c = unravel(dims, cands[rng.below(cands.size())]);
    std::vector<std::pair<double, std::size_t>> order;
    for (auto i : cands) {
      const Voxel p = unravel(dims, i);
      const double dx = (p.x - c.x) * spacing.dx, dy = (p.y - c.y) * spacing.dy, dz = (p.z - c.z) * spacing.dz;
      order.emplace_back(dx * dx + dy * dy + dz * dz, i);
    }
    std::sort(order.begin(), order.end());
    const auto id = lesion_id(name);
    const std::size_t take = std::min(n, order.size());
    for (std::size_t k = 0; k < take; ++k) {
      lesion[order[k].second] = id;
      hu[order[k].second] = value;
    }
    return take;
  }
};

double normal(Rng& rng) {
  const double u1 = 1.0 - rng.unit(), u2 = rng.unit();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.unit(); }

std::size_t draw_grade(Rng& rng) { return rng.below(3); }

}  // namespace

SynthCase synth_case(std::size_t index, const SynthOptions& opts) {
  const std::string id = fmt::format("case{:04d}", index);
  auto rng = Rng::stream(opts.seed, "synth/" + id);
  const Dims d = opts.dims;

  // Findings first: they drive the anatomy (volume loss) and the masks.
  std::set<std::string> labels;
  const double profile = rng.unit();
  std::vector<std::size_t> groups;
  if (profile < 0.55) {
    groups.push_back(rng.below(kGroups.size()));
  } else if (profile < 0.80) {
    const auto a = rng.below(kGroups.size());
    auto b = rng.below(kGroups.size() - 1);
    if (b >= a) ++b;
    groups = {a, b};
  }
  for (auto g : groups) {
    const auto& keys = kGroups[g];
    std::uint64_t subset = 0;
    while (subset == 0) subset = rng.below(1ULL << keys.size());
    for (std::size_t k = 0; k < keys.size(); ++k) {
      if (subset & (1ULL << k)) labels.insert(keys[k]);
    }
  }
  for (const auto& e : kExtras) {
    if (rng.unit() < 0.12) labels.insert(e);
  }
  // Graded findings also occur outside their phenotype group so every grade
  // has enough cases.
  if (rng.unit() < 0.08) labels.insert("emphysema");
  if (rng.unit() < 0.08) labels.insert("pleural effusion");
  if (rng.unit() < 0.25) labels.insert("atelectasis");
  const bool collapse = labels.count("atelectasis") && rng.unit() < 0.6;
  const bool collapse_right = rng.unit() < 0.5;

  Builder b(d, opts.spacing, rng);
  const double scale = std::clamp(1.0 + 0.12 * normal(rng), 0.75, 1.25);
  const double H = static_cast<double>(d.h), W = static_cast<double>(d.w), D = static_cast<double>(d.d);

  for (std::int64_t z = 0; z < d.d; ++z) {
    for (std::int64_t y = 0; y < d.w; ++y) {
      for (std::int64_t x = 0; x < d.h; ++x) {
        const auto i = d.index(x, y, z);
        const double bx = (x + 0.5 - H / 2) / (0.46 * H), by = (y + 0.5 - W / 2) / (0.42 * W);
        if (bx * bx + by * by <= 1.0) b.hu[i] = 40.0f + static_cast<float>(uniform(rng, -10, 10));
        for (int side = 0; side < 2; ++side) {
          const bool right = side == 0;
          const double s = scale * ((collapse && right == collapse_right) ? 0.7 : 1.0);
          const double cx = (right ? 0.3 : 0.7) * H, rx = 0.14 * H * s, ry = 0.28 * W * s, rz = 0.44 * D;
          const double ex = (x + 0.5 - cx) / rx, ey = (y + 0.5 - W / 2) / ry, ez = (z + 0.5 - D / 2) / rz;
          if (ex * ex + ey * ey + ez * ez > 1.0) continue;
          const double t = (z + 0.5 - (D / 2 - rz)) / (2 * rz);
          // Lobe ids follow kLobes: 1 LUL, 2 LLL, 3 RUL, 4 RML, 5 RLL.
          b.organ[i] = right ? (t < 0.4 ? 3u : t < 0.65 ? 4u : 5u) : (t < 0.55 ? 1u : 2u);
          b.hu[i] = kLungHu + static_cast<float>(uniform(rng, -30, 30));
        }
        const double tx = (x + 0.5 - H / 2) / 1.6, ty = (y + 0.5 - 0.4 * W) / 1.6;
        if (z < 0.3 * D && tx * tx + ty * ty <= 1.0 && b.organ[i] == 0) {
          b.organ[i] = 6;
          b.hu[i] = -1000.0f;
        }
        const double hx = (x + 0.5 - H / 2) / (0.09 * H), hy = (y + 0.5 - 0.62 * W) / (0.14 * W),
                     hz = (z + 0.5 - 0.68 * D) / (0.14 * D);
        if (hx * hx + hy * hy + hz * hz <= 1.0) {
          b.organ[i] = 7;
          b.hu[i] = 40.0f + static_cast<float>(uniform(rng, -10, 10));
        }
      }
    }
  }

  const std::vector<std::uint32_t> all_lobes = {1, 2, 3, 4, 5};
  const std::size_t lung_total = b.lung_voxels(all_lobes).size();

  if (labels.count("pleural effusion")) {
    // Fluid replaces the most dependent (posterior, inferior) lung voxels of one side.
    static const double kRanges[3][2] = {{0.005, 0.015}, {0.03, 0.08}, {0.13, 0.25}};
    const auto g = draw_grade(rng);
    const double target = uniform(rng, kRanges[g][0], kRanges[g][1]);
    const bool right = rng.unit() < 0.5;
    auto side = b.lung_voxels(right ? std::vector<std::uint32_t>{3, 4, 5} : std::vector<std::uint32_t>{1, 2});
    std::sort(side.begin(), side.end(), [&](std::size_t a, std::size_t c) {
      const Voxel pa = unravel(d, a), pc = unravel(d, c);
      return std::tie(pa.y, pa.z, a) > std::tie(pc.y, pc.z, c);
    });
    const auto n = std::min(side.size(), static_cast<std::size_t>(std::llround(target * lung_total)));
    const auto eid = b.lesion_id("pleural effusion");
    for (std::size_t k = 0; k < n; ++k) {
      b.organ[side[k]] = 0;
      b.lesion[side[k]] = eid;
      b.hu[side[k]] = 10.0f;
    }
  }

  if (labels.count("emphysema")) {
    static const double kRanges[3][2] = {{0.015, 0.04}, {0.07, 0.12}, {0.2, 0.3}};
    const auto g = draw_grade(rng);
    const double target = uniform(rng, kRanges[g][0], kRanges[g][1]);
    const std::size_t lung_now = b.lung_voxels(all_lobes).size() + 0;
    const auto want = static_cast<std::size_t>(std::llround(target * static_cast<double>(lung_now)));
    std::size_t painted = 0;
    for (int guard = 0; painted < want && guard < 64; ++guard) {
      painted += b.blob(all_lobes, std::min<std::size_t>(want - painted, 12 + rng.below(40)), "emphysema", -960.0f);
    }
  }

  for (const char* kind : {"lung nodule", "lung mass"}) {
    if (!labels.count(kind)) continue;
    const bool mass = std::string(kind) == "lung mass";
    const auto count = mass ? 1 : 1 + rng.below(4);
    for (std::uint64_t k = 0; k < count; ++k) {
      const std::uint32_t lobe = static_cast<std::uint32_t>(1 + rng.below(5));
      b.blob({lobe}, mass ? 40 + rng.below(40) : 4 + rng.below(20), kind, 30.0f);
    }
  }

  const bool ggo = labels.count("ground glass opacity") > 0, cons = labels.count("consolidation") > 0;
  if (ggo || cons) {
    const std::uint32_t lobe = static_cast<std::uint32_t>(1 + rng.below(5));
    const std::size_t total = 30 + rng.below(90);
    if (ggo && cons) {
      b.blob({lobe}, total / 2, "ground glass opacity", -500.0f);
      b.blob({lobe}, total / 2, "consolidation", 20.0f);
    } else {
      b.blob({lobe}, total, ggo ? "ground glass opacity" : "consolidation", ggo ? -500.0f : 20.0f);
    }
  }
  if (labels.count("lung opacity")) {
    b.blob({static_cast<std::uint32_t>(1 + rng.below(5))}, 20 + rng.below(60), "lung opacity", -200.0f);
  }
  if (labels.count("atelectasis")) {
    const bool right = collapse ? collapse_right : rng.unit() < 0.5;
    b.blob({right ? 5u : 2u}, 20 + rng.below(50), "atelectasis", 20.0f);
  }

  SynthCase out;
  std::map<std::uint32_t, std::string> organ_names;
  for (std::size_t k = 0; k < kLobes.size(); ++k) organ_names[static_cast<std::uint32_t>(k + 1)] = kLobes[k];
  organ_names[6] = "trachea";
  organ_names[7] = "heart";
  std::map<std::uint32_t, std::string> lesion_names;
  for (const auto& [name, lid] : b.lesion_ids) lesion_names[lid] = name;

  out.voxels.hu = ScalarVolume(d, opts.spacing, std::move(b.hu));
  out.voxels.organs = LabelVolume(d, opts.spacing, std::move(b.organ), organ_names);
  out.voxels.lesions = LabelVolume(d, opts.spacing, std::move(b.lesion), lesion_names);
  out.entry.case_id = id;
  out.entry.source = opts.sources.empty() ? "synthetic" : opts.sources[index % opts.sources.size()];
  out.entry.labels.assign(labels.begin(), labels.end());
  out.entry.load = [v = out.voxels] { return v; };
  return out;
}

std::vector<SynthCase> synth_cohort(const SynthOptions& opts) {
  std::vector<SynthCase> out;
  out.reserve(opts.cases);
  for (std::size_t i = 0; i < opts.cases; ++i) out.push_back(synth_case(i, opts));
  return out;
}

namespace {

std::vector<float> lesion_direction(std::size_t n) {
  std::vector<float> v(n, 0.0f);
  for (std::size_t k = 0; k < std::min<std::size_t>(4, n); ++k) v[k] = 1.0f;
  return v;
}

std::vector<float> background_direction(std::size_t n) {
  std::vector<float> v(n, 0.0f);
  for (std::size_t k = 4; k < std::min<std::size_t>(8, n); ++k) v[k] = 1.0f;
  if (n <= 4) v[n - 1] = -1.0f;
  return v;
}

}  // namespace

FeatureField synth_feature_field(const CaseVoxels& v, GridDims grid, std::size_t embed_dim, std::uint64_t seed) {
  if (embed_dim < 2) throw Error(Errc::InvalidArgument, "embedding dimension must be >= 2");
  const PatchGridMapping map(grid, v.hu.dims());
  const auto fg = lesion_direction(embed_dim), bg = background_direction(embed_dim);
  auto rng = Rng::stream(seed, "synth-features");
  std::vector<float> data(grid.cells() * embed_dim);
  const auto& les = v.lesions.data();
  const Dims d = v.hu.dims();
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    const VoxelBox box = map.box(c);
    std::size_t hits = 0;
    for (auto z = box.z0; z < box.z1; ++z) {
      for (auto y = box.y0; y < box.y1; ++y) {
        for (auto x = box.x0; x < box.x1; ++x) hits += les[d.index(x, y, z)] != 0;
      }
    }
    const double w = static_cast<double>(hits) / static_cast<double>(box.size());
    for (std::size_t k = 0; k < embed_dim; ++k) {
      const double val = w * fg[k] + (1.0 - w) * bg[k] + 0.05 * (2.0 * rng.unit() - 1.0);
      data[c * embed_dim + k] = static_cast<float>(val);
    }
  }
  return FeatureField(grid, embed_dim, d, std::move(data));
}

TextEmbedding synth_lesion_embedding(std::size_t embed_dim) { return TextEmbedding(lesion_direction(embed_dim)); }

std::vector<CaseEntry> write_synth_cohort(const fs::path& dir, const SynthOptions& opts) {
  fs::create_directories(dir);
  std::vector<CaseEntry> entries;
  for (std::size_t i = 0; i < opts.cases; ++i) {
    SynthCase c = synth_case(i, opts);
    const fs::path cdir = dir / c.entry.case_id;
    fs::create_directories(cdir);
    c.entry.ct = cdir / "ct.raw";
    c.entry.organs = cdir / "organs.raw";
    c.entry.lesions = cdir / "lesions.raw";
    c.entry.features = cdir / "features.tensor";
    save_raw(c.entry.ct, c.voxels.hu);
    save_raw(c.entry.organs, c.voxels.organs);
    save_raw(c.entry.lesions, c.voxels.lesions);
    write_feature_field(*c.entry.features,
                        synth_feature_field(c.voxels, opts.feature_grid, opts.embed_dim, opts.seed ^ i));
    entries.push_back(c.entry);
  }
  write_text_embedding(dir / "lesion_prompt.tensor", synth_lesion_embedding(opts.embed_dim));
  save_catalog(dir / "catalog.jsonl", entries);
  return load_catalog(dir / "catalog.jsonl");
}

}  // namespace medagent
