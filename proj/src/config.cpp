#include "medagent/config.hpp"

#include <charconv>
#include <sstream>

#include <fmt/format.h>

#include "medagent/error.hpp"
#include "medagent/util.hpp"

namespace medagent {
namespace fs = std::filesystem;

namespace {

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto res = std::from_chars(v.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end) throw Error(Errc::ConfigError, fmt::format("{}: bad number '{}'", key, v));
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used == v.size()) return d;
  } catch (const std::logic_error&) {
  }
  throw Error(Errc::ConfigError, fmt::format("{}: bad number '{}'", key, v));
}

}  // namespace

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const std::string v = trim(value);
  if (key == "catalog") {
    c.catalog = v;
  } else if (key == "manifest") {
    c.manifest = v;
  } else if (key == "answers") {
    c.answers = v;
  } else if (key == "output_dir") {
    c.output_dir = v;
  } else if (key == "rules") {
    c.rules = v;
  } else if (key == "prompt") {
    c.prompt = v;
  } else if (key == "organs") {
    c.organs = split_list(v);
  } else if (key == "tau") {
    c.tau = parse_double(key, v);
  } else if (key == "top_k") {
    c.top_k = parse_number<int>(key, v);
  } else if (key == "max_turns") {
    c.max_turns = parse_number<int>(key, v);
  } else if (key == "router") {
    c.router = v;
  } else if (key == "client") {
    c.client = v;
  } else if (key == "endpoint") {
    c.endpoint = v;
  } else if (key == "model") {
    c.model = v;
  } else if (key == "token_env") {
    c.token_env = v;
  } else if (key == "fixture") {
    c.fixture = v;
  } else if (key == "visual_turns") {
    c.visual_turns = parse_number<int>(key, v);
  } else if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, v);
  } else if (key == "jobs") {
    c.jobs = parse_number<int>(key, v);
  } else if (key == "per_subtype") {
    c.per_subtype = parse_number<std::size_t>(key, v);
  } else if (key == "per_case_cap") {
    c.per_case_cap = parse_number<std::size_t>(key, v);
  } else {
    throw Error(Errc::ConfigError, "unknown config key '" + key + "'");
  }
}

void validate(const RunConfig& c) {
  if (c.max_turns < 1) throw Error(Errc::ConfigError, "max_turns must be >= 1");
  if (c.top_k < 1) throw Error(Errc::ConfigError, "top_k must be >= 1");
  if (c.jobs < 1) throw Error(Errc::ConfigError, "jobs must be >= 1");
  if (c.router != "same" && c.router != "separate") throw Error(Errc::ConfigError, "router must be same or separate");
  if (c.client != "canned" && c.client != "oracle" && c.client != "random" && c.client != "http") {
    throw Error(Errc::ConfigError, "client must be canned, oracle, random or http");
  }
  if (c.per_case_cap < 1) throw Error(Errc::ConfigError, "per_case_cap must be >= 1");
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::ConfigError, fmt::format("config line {}: expected key = value", lineno));
    try {
      set_config_value(c, trim(std::string_view(line).substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(Errc::ConfigError, fmt::format("config line {}: {}", lineno, e.what()));
    }
  }
  validate(c);
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) throw Error(Errc::ConfigError, "config file not found: " + path.string());
  return parse_config(read_file(path));
}

std::string serialize_config(const RunConfig& c) {
  std::string out;
  auto put = [&](const char* k, const std::string& v) { out += fmt::format("{} = {}\n", k, v); };
  put("catalog", c.catalog.string());
  put("manifest", c.manifest.string());
  put("answers", c.answers.string());
  put("output_dir", c.output_dir.string());
  put("rules", c.rules.string());
  put("prompt", c.prompt.string());
  put("organs", join(c.organs, ", "));
  put("tau", fmt::format("{}", c.tau));
  put("top_k", std::to_string(c.top_k));
  put("max_turns", std::to_string(c.max_turns));
  put("router", c.router);
  put("client", c.client);
  put("endpoint", c.endpoint);
  put("model", c.model);
  put("token_env", c.token_env);
  put("fixture", c.fixture.string());
  put("visual_turns", std::to_string(c.visual_turns));
  put("seed", std::to_string(c.seed));
  put("jobs", std::to_string(c.jobs));
  put("per_subtype", std::to_string(c.per_subtype));
  put("per_case_cap", std::to_string(c.per_case_cap));
  return out;
}

void require_paths(const RunConfig& c, const std::vector<std::string>& keys) {
  for (const auto& k : keys) {
    const fs::path p = k == "catalog" ? c.catalog
                       : k == "manifest" ? c.manifest
                       : k == "answers" ? c.answers
                       : k == "rules" ? c.rules
                       : k == "fixture" ? c.fixture
                       : k == "prompt" ? c.prompt
                                        : fs::path();
    if (p.empty()) throw Error(Errc::ConfigError, "missing required path '" + k + "'");
    if (!fs::exists(p)) throw Error(Errc::IoError, k + " not found: " + p.string());
  }
}

}  // namespace medagent
