#include "medagent/memory.hpp"

#include <cmath>
#include <sstream>

#include <fmt/format.h>

#include "medagent/error.hpp"

namespace medagent {

std::string RoiCandidate::location() const {
  return kind == RoiKind::AxialSlice ? fmt::format("slice:{}", slice) : "region:" + region;
}

EntryId EvidenceMemory::append(MemoryEntry entry) {
  const EntryId next = entries_.size();
  if (auto* roi = std::get_if<RoiCandidate>(&entry)) {
    if (!std::isfinite(roi->score)) throw Error(Errc::InvalidArgument, "ROI score must be finite");
    if (roi->rank < 1) throw Error(Errc::InvalidArgument, "ROI rank must be >= 1");
    if (ranks_.count(roi->rank)) throw Error(Errc::DuplicateRank, fmt::format("rank {} already present", roi->rank));
    ranks_.insert(roi->rank);
  } else if (auto* up = std::get_if<AgentUpdate>(&entry)) {
    if (up->turn < 1) throw Error(Errc::InvalidArgument, "turn must be >= 1");
    if (up->turn <= last_turn_) {
      throw Error(Errc::TurnNotIncreasing, fmt::format("turn {} after turn {}", up->turn, last_turn_));
    }
    for (EntryId ref : up->evidence_refs) {
      if (ref >= next) throw Error(Errc::DanglingEvidenceRef, fmt::format("evidence id {} not in memory of size {}", ref, next));
    }
    last_turn_ = up->turn;
    if (up->attached_slice) attached_.insert(*up->attached_slice);
  } else if (auto* org = std::get_if<OrganRecord>(&entry)) {
    if (!(org->size_ml >= 0.0)) throw Error(Errc::InvalidArgument, "organ size must be >= 0");
    if (org->z_range.z_min > org->z_range.z_max) throw Error(Errc::InvalidArgument, "z_min > z_max");
  }
  entries_.push_back({next, std::move(entry)});
  return next;
}

void EvidenceMemory::attach_payload(std::int64_t slice, std::vector<std::uint8_t> bytes) {
  if (!attached_.count(slice)) throw Error(Errc::SliceNeverAttached, fmt::format("slice {} has no attaching update", slice));
  if (dropped_.count(slice)) throw Error(Errc::InvalidArgument, fmt::format("slice {} already dropped", slice));
  payloads_[slice] = std::move(bytes);
}

const std::vector<std::uint8_t>* EvidenceMemory::payload(std::int64_t slice) const {
  auto it = payloads_.find(slice);
  return it == payloads_.end() ? nullptr : &it->second;
}

void EvidenceMemory::drop_slice(std::int64_t slice) {
  if (!attached_.count(slice)) throw Error(Errc::SliceNeverAttached, fmt::format("slice {} was never attached", slice));
  dropped_.insert(slice);
  payloads_.erase(slice);
}

std::vector<std::int64_t> EvidenceMemory::live_slices() const {
  std::vector<std::int64_t> out;
  for (auto s : attached_) {
    if (!dropped_.count(s)) out.push_back(s);
  }
  return out;
}

std::vector<OrganRecord> EvidenceMemory::organ_records() const {
  std::vector<OrganRecord> out;
  for (const auto& e : entries_) {
    if (auto* o = std::get_if<OrganRecord>(&e.value)) out.push_back(*o);
  }
  return out;
}

std::optional<OrganRecord> EvidenceMemory::organ(const std::string& name) const {
  for (const auto& e : entries_) {
    if (auto* o = std::get_if<OrganRecord>(&e.value); o && o->organ == name) return *o;
  }
  return std::nullopt;
}

std::vector<RoiCandidate> EvidenceMemory::roi_candidates() const {
  std::vector<RoiCandidate> out;
  for (const auto& e : entries_) {
    if (auto* r = std::get_if<RoiCandidate>(&e.value)) out.push_back(*r);
  }
  return out;
}

InitResult init_memory(const LabelVolume& organs, const ScalarVolume& hu,
                       const std::vector<std::string>& organ_list) {
  if (!(organs.dims() == hu.dims())) throw Error(Errc::DimsMismatch, "organ labels and CT dims differ");
  if (organ_list.empty()) throw Error(Errc::InvalidArgument, "organ list is empty");
  InitResult out;
  for (const auto& name : organ_list) {
    const auto label = organs.label_of(name);
    if (!label) {
      out.omitted.push_back(name);
      continue;
    }
    const BinaryMask m = organs.mask(*label);
    if (m.empty()) {
      out.omitted.push_back(name);
      continue;
    }
    out.memory.append(OrganRecord{name, mask_physical_volume(m), mean_hu(hu, m), z_extent(m)});
  }
  if (out.memory.empty()) throw Error(Errc::AllOrgansEmpty, "none of the requested organs has voxels");
  return out;
}

namespace {

std::string render_ids(const std::vector<EntryId>& ids) {
  std::string s = "[";
  for (std::size_t i = 0; i < ids.size(); ++i) s += (i ? "," : "") + std::to_string(ids[i]);
  return s + "]";
}

std::string render_line(const MemoryEntry& e) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, OrganRecord>) {
          return fmt::format("organ={} size_ml={:.2f} mean_hu={:.2f} z=[{},{}]", v.organ, v.size_ml, v.mean_hu,
                             v.z_range.z_min, v.z_range.z_max);
        } else if constexpr (std::is_same_v<T, RoiCandidate>) {
          return fmt::format("roi rank={} loc={} score={:.2f}", v.rank, v.location(), v.score);
        } else {
          return fmt::format("turn={} answer={} evidence={} assumptions={}", v.turn, v.answer,
                             render_ids(v.evidence_refs), nlohmann::json(v.assumptions).dump());
        }
      },
      e);
}

// Splits "k1=v1 k2=v2 ..." where values may contain spaces, given the keys in order.
std::vector<std::string> split_keys(const std::string& line, const std::vector<std::string>& keys) {
  std::vector<std::string> vals;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < keys.size(); ++k) {
    const std::string lead = (k == 0 ? "" : " ") + keys[k] + "=";
    if (line.compare(pos, lead.size(), lead) != 0) throw Error(Errc::InvalidArgument, "bad memory line: " + line);
    pos += lead.size();
    std::size_t end = line.size();
    if (k + 1 < keys.size()) {
      end = line.rfind(" " + keys[k + 1] + "=");
      if (end == std::string::npos || end < pos) throw Error(Errc::InvalidArgument, "bad memory line: " + line);
    }
    vals.push_back(line.substr(pos, end - pos));
    pos = end;
  }
  return vals;
}

std::vector<EntryId> parse_ids(const std::string& s) {
  const auto j = nlohmann::json::parse(s);
  return j.get<std::vector<EntryId>>();
}

}  // namespace

std::string render_memory(const EvidenceMemory& mem) {
  std::string out;
  for (const auto& e : mem.entries()) out += fmt::format("[{}] {}\n", e.id, render_line(e.value));
  return out;
}

EvidenceMemory parse_memory_text(const std::string& text) {
  EvidenceMemory mem;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    // Optional "[id] " prefix; ids are implied by line order.
    if (line.front() == '[') {
      const auto close = line.find("] ");
      if (close == std::string::npos) throw Error(Errc::InvalidArgument, "bad memory line: " + line);
      if (line.substr(1, close - 1) != std::to_string(mem.size())) {
        throw Error(Errc::InvalidArgument, "memory line id out of order: " + line);
      }
      line.erase(0, close + 2);
    }
    try {
      if (line.rfind("organ=", 0) == 0) {
        const auto v = split_keys(line, {"organ", "size_ml", "mean_hu", "z"});
        const auto z = parse_ids(v[3]);
        if (z.size() != 2) throw Error(Errc::InvalidArgument, "bad z range: " + line);
        mem.append(OrganRecord{v[0], std::stod(v[1]), std::stod(v[2]),
                               {static_cast<std::int64_t>(z[0]), static_cast<std::int64_t>(z[1])}});
      } else if (line.rfind("roi ", 0) == 0) {
        const auto v = split_keys(line.substr(4), {"rank", "loc", "score"});
        RoiCandidate r;
        r.rank = std::stoi(v[0]);
        r.score = std::stod(v[2]);
        if (v[1].rfind("slice:", 0) == 0) {
          r.kind = RoiKind::AxialSlice;
          r.slice = std::stoll(v[1].substr(6));
        } else if (v[1].rfind("region:", 0) == 0) {
          r.kind = RoiKind::SubRegion;
          r.region = v[1].substr(7);
        } else {
          throw Error(Errc::InvalidArgument, "bad ROI location: " + line);
        }
        mem.append(r);
      } else if (line.rfind("turn=", 0) == 0) {
        const auto v = split_keys(line, {"turn", "answer", "evidence", "assumptions"});
        AgentUpdate u;
        u.turn = std::stoi(v[0]);
        u.answer = v[1];
        u.evidence_refs = parse_ids(v[2]);
        u.assumptions = nlohmann::json::parse(v[3]).get<std::vector<std::string>>();
        mem.append(u);
      } else {
        throw Error(Errc::InvalidArgument, "unknown memory line: " + line);
      }
    } catch (const std::logic_error& e) {
      throw Error(Errc::InvalidArgument, std::string("bad memory line: ") + line + " (" + e.what() + ")");
    }
  }
  return mem;
}

nlohmann::json memory_to_json(const EvidenceMemory& mem) {
  auto arr = nlohmann::json::array();
  for (const auto& e : mem.entries()) {
    nlohmann::json j;
    j["id"] = e.id;
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, OrganRecord>) {
            j["type"] = "organ";
            j["organ"] = v.organ;
            j["size_ml"] = v.size_ml;
            j["mean_hu"] = v.mean_hu;
            j["z_range"] = {v.z_range.z_min, v.z_range.z_max};
          } else if constexpr (std::is_same_v<T, RoiCandidate>) {
            j["type"] = "roi";
            j["kind"] = v.kind == RoiKind::AxialSlice ? "axial-slice" : "sub-region";
            if (v.kind == RoiKind::AxialSlice) {
              j["slice"] = v.slice;
            } else {
              j["region"] = v.region;
            }
            j["score"] = v.score;
            j["rank"] = v.rank;
          } else {
            j["type"] = "update";
            j["turn"] = v.turn;
            j["rationale"] = v.rationale;
            j["answer"] = v.answer;
            j["evidence"] = v.evidence_refs;
            j["assumptions"] = v.assumptions;
            if (v.attached_slice) {
              j["attached_slice"] = *v.attached_slice;
              j["slice_dropped"] = mem.dropped_slices().count(*v.attached_slice) > 0;
            }
          }
        },
        e.value);
    arr.push_back(std::move(j));
  }
  return arr;
}

EvidenceMemory memory_from_json(const nlohmann::json& arr) {
  EvidenceMemory mem;
  std::vector<std::int64_t> drops;
  try {
    for (const auto& j : arr) {
      const std::string type = j.at("type");
      if (type == "organ") {
        const auto z = j.at("z_range");
        mem.append(OrganRecord{j.at("organ"), j.at("size_ml"), j.at("mean_hu"), {z.at(0), z.at(1)}});
      } else if (type == "roi") {
        RoiCandidate r;
        r.kind = j.at("kind") == "axial-slice" ? RoiKind::AxialSlice : RoiKind::SubRegion;
        if (r.kind == RoiKind::AxialSlice) {
          r.slice = j.at("slice");
        } else {
          r.region = j.at("region");
        }
        r.score = j.at("score");
        r.rank = j.at("rank");
        mem.append(r);
      } else if (type == "update") {
        AgentUpdate u;
        u.turn = j.at("turn");
        u.rationale = j.value("rationale", "");
        u.answer = j.at("answer");
        u.evidence_refs = j.at("evidence").get<std::vector<EntryId>>();
        u.assumptions = j.at("assumptions").get<std::vector<std::string>>();
        if (j.contains("attached_slice")) {
          u.attached_slice = j.at("attached_slice").get<std::int64_t>();
          if (j.value("slice_dropped", false)) drops.push_back(*u.attached_slice);
        }
        mem.append(u);
      } else {
        throw Error(Errc::InvalidArgument, "unknown memory entry type " + type);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidArgument, std::string("bad memory JSON: ") + e.what());
  }
  for (auto s : drops) mem.drop_slice(s);
  return mem;
}

}  // namespace medagent
