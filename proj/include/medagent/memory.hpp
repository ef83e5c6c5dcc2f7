#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "medagent/volume.hpp"

namespace medagent {

using EntryId = std::uint64_t;

/// Per-organ size, mean attenuation and axial extent.
struct OrganRecord {
  std::string organ;
  double size_ml = 0.0;
  double mean_hu = 0.0;
  ZRange z_range;
  bool operator==(const OrganRecord&) const = default;
};

enum class RoiKind { AxialSlice, SubRegion };

struct RoiCandidate {
  RoiKind kind = RoiKind::AxialSlice;
  std::int64_t slice = -1;  // AxialSlice
  std::string region;       // SubRegion
  double score = 0.0;
  int rank = 1;

  /// "slice:<z>" or "region:<name>".
  std::string location() const;
  bool operator==(const RoiCandidate&) const = default;
};

/// One reasoning turn: rationale, current answer, cited evidence ids and
/// stated assumptions. `attached_slice` is set when the turn's routing
/// decision fetched a slice image for the next turn.
struct AgentUpdate {
  int turn = 1;
  std::string rationale;
  std::string answer = "undetermined";
  std::vector<EntryId> evidence_refs;
  std::vector<std::string> assumptions;
  std::optional<std::int64_t> attached_slice;
  bool operator==(const AgentUpdate&) const = default;
};

using MemoryEntry = std::variant<OrganRecord, RoiCandidate, AgentUpdate>;

struct StoredEntry {
  EntryId id = 0;
  MemoryEntry value;
  bool operator==(const StoredEntry&) const = default;
};

/// Append-only evidence store. Entries are never removed or modified; ids are
/// dense from 0. Slice images attached by agent updates can be released with
/// drop_slice, which keeps the textual update. Copying yields an independent
/// snapshot.
class EvidenceMemory {
 public:
  /// Validates the entry against the current contents and appends it.
  /// Throws DanglingEvidenceRef, TurnNotIncreasing, DuplicateRank or
  /// InvalidArgument (non-finite score, rank < 1, turn < 1).
  EntryId append(MemoryEntry entry);

  /// Stores pixels for a slice some update already attached.
  void attach_payload(std::int64_t slice, std::vector<std::uint8_t> bytes);
  /// nullptr when never stored or already dropped.
  const std::vector<std::uint8_t>* payload(std::int64_t slice) const;

  /// Releases the slice's pixels. Idempotent. Throws SliceNeverAttached.
  void drop_slice(std::int64_t slice);

  const std::vector<StoredEntry>& entries() const noexcept { return entries_; }
  const std::set<std::int64_t>& dropped_slices() const noexcept { return dropped_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  /// Turn of the most recent AgentUpdate, 0 if none.
  int last_turn() const noexcept { return last_turn_; }
  /// Slices attached by some update and not yet dropped.
  std::vector<std::int64_t> live_slices() const;

  std::vector<OrganRecord> organ_records() const;
  std::optional<OrganRecord> organ(const std::string& name) const;
  std::vector<RoiCandidate> roi_candidates() const;

  /// Entries and dropped set; pixel payloads are not compared.
  bool operator==(const EvidenceMemory& other) const {
    return entries_ == other.entries_ && dropped_ == other.dropped_;
  }

 private:
  std::vector<StoredEntry> entries_;
  std::set<std::int64_t> dropped_;
  std::set<std::int64_t> attached_;
  std::set<int> ranks_;
  std::map<std::int64_t, std::vector<std::uint8_t>> payloads_;
  int last_turn_ = 0;
};

struct InitResult {
  EvidenceMemory memory;
  std::vector<std::string> omitted;  // requested organs with no voxels
};

/// One OrganRecord per requested organ present in `organs`. Lesions are not
/// recorded here. Throws DimsMismatch, AllOrgansEmpty.
InitResult init_memory(const LabelVolume& organs, const ScalarVolume& hu,
                       const std::vector<std::string>& organ_list);

/// Prompt text, one "[id] ..." line per entry in id order, values to two
/// decimals.
std::string render_memory(const EvidenceMemory& mem);

/// Inverse of render_memory for the rendered fields (rationale is not part
/// of the text form and comes back empty).
EvidenceMemory parse_memory_text(const std::string& text);

nlohmann::json memory_to_json(const EvidenceMemory& mem);
EvidenceMemory memory_from_json(const nlohmann::json& j);

}  // namespace medagent
