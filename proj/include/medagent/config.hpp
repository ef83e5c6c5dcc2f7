#pragma once

// Run configuration: a flat "key = value" text file; command-line flags
// override individual keys.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace medagent {

struct RunConfig {
  std::filesystem::path catalog;   // case catalog (JSON lines)
  std::filesystem::path manifest;  // question manifest (JSON lines)
  std::filesystem::path answers;   // agent answers (JSON lines)
  std::filesystem::path output_dir = "out";
  std::filesystem::path rules;     // rule tables; built-in defaults when empty
  std::filesystem::path prompt;    // lesion text embedding for targeting
  std::vector<std::string> organs = {"left upper lobe", "left lower lobe", "right upper lobe",
                                     "right middle lobe", "right lower lobe", "trachea", "heart"};
  double tau = 0.5;
  int top_k = 3;
  int max_turns = 5;
  std::string router = "same";  // same | separate
  std::string client = "oracle";  // canned | oracle | random | http
  std::string endpoint;
  std::string model = "default";
  std::string token_env = "MEDAGENT_API_TOKEN";
  std::filesystem::path fixture;  // canned replies
  int visual_turns = 0;           // oracle client: turns that request a slice
  std::uint64_t seed = 0;
  int jobs = 1;
  std::size_t per_subtype = 60;
  std::size_t per_case_cap = 17;

  bool operator==(const RunConfig&) const = default;
};

/// Throws ConfigError naming the line for unknown keys or bad values.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& c);

/// Applies one "key=value" override.
void set_config_value(RunConfig& c, const std::string& key, const std::string& value);
/// Checks that the input paths a command reads exist.
void require_paths(const RunConfig& c, const std::vector<std::string>& keys);
void validate(const RunConfig& c);

}  // namespace medagent
