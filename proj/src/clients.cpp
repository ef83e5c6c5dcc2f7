#include "medagent/clients.hpp"

#include <openssl/evp.h>

#include <cstdlib>
#include <fstream>

#include <fmt/format.h>
#include <httplib.h>

#include "medagent/error.hpp"
#include "medagent/rng.hpp"

namespace medagent {

namespace {

std::string reply_text(const nlohmann::json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (!j.is_object()) throw Error(Errc::ConfigError, "canned reply must be a string or an object");
  ParsedReply r;
  r.rationale = j.value("rationale", "");
  r.answer = j.value("answer", "undetermined");
  r.evidence = j.value("evidence", std::vector<EntryId>{});
  r.assumptions = j.value("assumptions", std::vector<std::string>{});
  r.need_visual = j.value("need_visual", false);
  r.tool = j.value("tool", r.need_visual ? "mask-overlay" : "none");
  if (j.contains("slice")) r.slice = j.at("slice").get<std::int64_t>();
  return format_reply(r);
}

std::string letter(std::size_t i) { return std::string(1, static_cast<char>('A' + i)); }

}  // namespace

CannedClient::CannedClient(const nlohmann::json& fixture) {
  const auto& scripts = fixture.contains("replies") ? fixture.at("replies") : fixture;
  if (!scripts.is_object()) throw Error(Errc::ConfigError, "canned fixture must map item ids to reply lists");
  for (const auto& [key, list] : scripts.items()) {
    std::vector<std::string> replies;
    if (list.is_array()) {
      for (const auto& r : list) replies.push_back(reply_text(r));
    } else {
      replies.push_back(reply_text(list));
    }
    if (replies.empty()) throw Error(Errc::ConfigError, "empty canned script for " + key);
    scripts_[key] = std::move(replies);
  }
}

CannedClient CannedClient::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open canned fixture " + path.string());
  const auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::ConfigError, "canned fixture is not valid JSON: " + path.string());
  return CannedClient(j);
}

std::string CannedClient::complete(const ModelRequest& req) {
  auto it = scripts_.find(req.item_id);
  if (it == scripts_.end()) it = scripts_.find("*");
  if (it == scripts_.end()) throw Error(Errc::ClientUnavailable, "no canned script for item " + req.item_id);
  std::size_t pos;
  {
    std::lock_guard lock(mu_);
    pos = cursor_[req.session_id]++;
  }
  const auto& replies = it->second;
  return replies[std::min(pos, replies.size() - 1)];
}

std::string OracleClient::complete(const ModelRequest& req) {
  ParsedReply r;
  auto it = answers_.find(req.item_id);
  r.answer = it == answers_.end() ? "undetermined" : it->second;
  r.rationale = "Ground truth lookup.";
  r.need_visual = req.turn <= visual_turns_;
  r.tool = r.need_visual ? "mask-overlay" : "none";
  return format_reply(r);
}

std::string RandomClient::complete(const ModelRequest& req) {
  ParsedReply r;
  r.rationale = "Uniform guess.";
  if (req.options.empty()) {
    r.answer = "undetermined";
  } else {
    auto rng = Rng::stream(seed_, fmt::format("random-client/{}/{}/{}", req.session_id, req.item_id, req.turn));
    r.answer = letter(rng.below(req.options.size()));
  }
  return format_reply(r);
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

nlohmann::json chat_request_body(const ModelRequest& req, const std::string& model) {
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", user_prompt(req)}});
  if (req.image) {
    content.push_back({{"type", "image_url"},
                       {"image_url", {{"url", "data:" + req.image->mime + ";base64," + base64_encode(req.image->bytes)}}}});
  }
  return {{"model", model},
          {"temperature", 0},
          {"messages",
           nlohmann::json::array({{{"role", "system"}, {"content", req.system}}, {{"role", "user"}, {"content", content}}})}};
}

HttpClient::HttpClient(HttpClientOptions opts) : opts_(std::move(opts)) {
  const auto scheme = opts_.url.find("://");
  if (scheme == std::string::npos) throw Error(Errc::ConfigError, "endpoint URL needs a scheme: " + opts_.url);
  const auto slash = opts_.url.find('/', scheme + 3);
  base_ = opts_.url.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : opts_.url.substr(slash);
}

std::string HttpClient::complete(const ModelRequest& req) {
  httplib::Headers headers;
  if (const char* token = std::getenv(opts_.token_env.c_str()); token != nullptr && *token != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }
  const std::string body = chat_request_body(req, opts_.model).dump();

  std::string failure;
  for (int attempt = 0; attempt <= opts_.retries; ++attempt) {
    httplib::Client cli(base_);
    cli.set_connection_timeout(opts_.timeout_s, 0);
    cli.set_read_timeout(opts_.timeout_s, 0);
    cli.set_write_timeout(opts_.timeout_s, 0);
    auto res = cli.Post(path_, headers, body, "application/json");
    if (!res) {
      failure = fmt::format("{}: {}", opts_.url, httplib::to_string(res.error()));
      continue;
    }
    if (res->status >= 500) {
      failure = fmt::format("{}: HTTP {}", opts_.url, res->status);
      continue;
    }
    if (res->status != 200) throw Error(Errc::ClientUnavailable, fmt::format("{}: HTTP {}", opts_.url, res->status));
    const auto j = nlohmann::json::parse(res->body, nullptr, false);
    try {
      if (!j.is_discarded()) return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
    }
    throw Error(Errc::ClientUnavailable, opts_.url + ": response lacks choices[0].message.content");
  }
  throw Error(Errc::ClientUnavailable, failure);
}

}  // namespace medagent
