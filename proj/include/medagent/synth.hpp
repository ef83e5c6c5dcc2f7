#pragma once

// Synthetic chest CT cases for tests, demos and end-to-end runs: two lungs
// split into five lobes, trachea and heart, plus findings painted as masks
// with matching attenuation.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "medagent/catalog.hpp"
#include "medagent/cflt.hpp"

namespace medagent {

struct SynthOptions {
  Dims dims{40, 40, 28};
  Spacing spacing{1.5, 1.5, 3.0};
  std::uint64_t seed = 0;
  std::size_t cases = 560;
  std::vector<std::string> sources = {"synth-a", "synth-b", "synth-c"};
  GridDims feature_grid{8, 8, 4};
  std::size_t embed_dim = 16;
};

struct SynthCase {
  CaseEntry entry;  // loader returns `voxels`
  CaseVoxels voxels;
};

/// Deterministic in (options.seed, index).
SynthCase synth_case(std::size_t index, const SynthOptions& opts);

std::vector<SynthCase> synth_cohort(const SynthOptions& opts);

/// Each cell blends the lesion and background directions by the fraction of
/// its voxels inside a lesion, plus small seeded noise.
FeatureField synth_feature_field(const CaseVoxels& v, GridDims grid, std::size_t embed_dim, std::uint64_t seed);
/// The lesion direction used by synth_feature_field.
TextEmbedding synth_lesion_embedding(std::size_t embed_dim);

/// Writes every case (raw volumes plus sidecars and a feature field) under
/// `dir` and a catalog at dir/catalog.jsonl. Returns the catalog entries.
std::vector<CaseEntry> write_synth_cohort(const std::filesystem::path& dir, const SynthOptions& opts);

}  // namespace medagent
