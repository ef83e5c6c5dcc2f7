#pragma once

// Model clients: scripted replies, ground-truth answers, seeded guessing and
// an OpenAI-compatible HTTP endpoint.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "medagent/agent.hpp"

namespace medagent {

/// Replays scripted replies. Scripts are keyed by item id, with "*" as the
/// fallback; each session advances its own cursor and repeats the last reply
/// once the script runs out. A reply is either raw text or an object with
/// the structured reply fields.
class CannedClient : public ModelClient {
 public:
  explicit CannedClient(const nlohmann::json& fixture);
  static CannedClient from_file(const std::filesystem::path& path);
  std::string complete(const ModelRequest& req) override;

 private:
  std::map<std::string, std::vector<std::string>> scripts_;
  std::map<std::string, std::size_t> cursor_;  // session id -> next reply
  std::mutex mu_;
};

/// Answers every item with its ground-truth letter. The first
/// `visual_turns` turns of a session ask for a mask overlay.
class OracleClient : public ModelClient {
 public:
  explicit OracleClient(std::map<std::string, std::string> answers, int visual_turns = 0)
      : answers_(std::move(answers)), visual_turns_(visual_turns) {}
  std::string complete(const ModelRequest& req) override;

 private:
  std::map<std::string, std::string> answers_;
  int visual_turns_;
};

/// Uniform option choice. The draw depends only on the seed, session, item
/// and turn, so concurrent sessions stay reproducible.
class RandomClient : public ModelClient {
 public:
  explicit RandomClient(std::uint64_t seed) : seed_(seed) {}
  std::string complete(const ModelRequest& req) override;

 private:
  std::uint64_t seed_;
};

struct HttpClientOptions {
  std::string url;  // full endpoint, e.g. http://host:8000/v1/chat/completions
  std::string model = "default";
  std::string token_env = "MEDAGENT_API_TOKEN";
  int timeout_s = 120;
  int retries = 1;  // extra attempts after a transport failure or 5xx
};

/// Chat-completions request body for a model request.
nlohmann::json chat_request_body(const ModelRequest& req, const std::string& model);
std::string base64_encode(const std::vector<std::uint8_t>& bytes);

class HttpClient : public ModelClient {
 public:
  explicit HttpClient(HttpClientOptions opts);
  std::string complete(const ModelRequest& req) override;

 private:
  HttpClientOptions opts_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

}  // namespace medagent
