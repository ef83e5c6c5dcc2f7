#include "medagent/catalog.hpp"

#include <algorithm>
#include <fstream>

#include "medagent/error.hpp"
#include "medagent/util.hpp"
#include "medagent/volume_io.hpp"

namespace medagent {
namespace fs = std::filesystem;

namespace {

std::string relative_to(const fs::path& p, const fs::path& base) {
  if (p.empty()) return {};
  const auto rel = p.lexically_relative(base);
  return (rel.empty() || *rel.begin() == "..") ? p.string() : rel.string();
}

fs::path resolve(const std::string& p, const fs::path& base) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

nlohmann::json case_to_json(const CaseEntry& c, const fs::path& base) {
  nlohmann::json j = {{"case_id", c.case_id},
                      {"source", c.source},
                      {"labels", c.labels},
                      {"ct", relative_to(c.ct, base)},
                      {"organs", relative_to(c.organs, base)},
                      {"lesions", relative_to(c.lesions, base)}};
  if (c.features) j["features"] = relative_to(*c.features, base);
  return j;
}

CaseEntry case_from_json(const nlohmann::json& j, const fs::path& base) {
  CaseEntry c;
  try {
    c.case_id = j.at("case_id").get<std::string>();
    c.source = j.value("source", "unknown");
    c.labels = j.value("labels", std::vector<std::string>{});
    c.ct = resolve(j.at("ct").get<std::string>(), base);
    c.organs = resolve(j.at("organs").get<std::string>(), base);
    c.lesions = resolve(j.at("lesions").get<std::string>(), base);
    if (j.contains("features")) c.features = resolve(j.at("features").get<std::string>(), base);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("catalog entry: ") + e.what());
  }
  std::sort(c.labels.begin(), c.labels.end());
  c.labels.erase(std::unique(c.labels.begin(), c.labels.end()), c.labels.end());
  c.load = [ct = c.ct, organs = c.organs, lesions = c.lesions] {
    return CaseVoxels{load_volume(ct), load_labels(organs), load_labels(lesions)};
  };
  return c;
}

std::vector<CaseEntry> load_catalog(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open case catalog " + path.string());
  std::vector<CaseEntry> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::ConfigError, path.string() + ":" + std::to_string(lineno) + ": invalid JSON");
    out.push_back(case_from_json(j, path.parent_path()));
  }
  return out;
}

void save_catalog(const fs::path& path, const std::vector<CaseEntry>& cases) {
  std::string text;
  for (const auto& c : cases) text += case_to_json(c, path.parent_path()).dump() + "\n";
  write_file_atomic(path, text);
}

BinaryMask union_mask(const LabelVolume& v, const std::vector<std::string>& names) {
  std::vector<std::uint8_t> want(1, 0);
  for (const auto& n : names) {
    if (auto l = v.label_of(n)) {
      if (want.size() <= *l) want.resize(*l + 1, 0);
      want[*l] = 1;
    }
  }
  std::vector<std::uint8_t> m(v.data().size(), 0);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const auto l = v.data()[i];
    m[i] = l < want.size() ? want[l] : 0;
  }
  return BinaryMask(v.dims(), v.spacing(), std::move(m));
}

LabelVolume restrict_labels(const LabelVolume& v, const std::vector<std::string>& names) {
  std::map<std::uint32_t, std::string> keep;
  for (const auto& n : names) {
    if (auto l = v.label_of(n)) keep[*l] = n;
  }
  std::vector<std::uint32_t> data = v.data();
  for (auto& l : data) {
    if (l != 0 && !keep.count(l)) l = 0;
  }
  return LabelVolume(v.dims(), v.spacing(), std::move(data), std::move(keep));
}

}  // namespace medagent
