#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <thread>

#include <fmt/format.h>

#include <httplib.h>

#include "medagent/clients.hpp"
#include "medagent/error.hpp"
#include "support.hpp"

using namespace medagent;

namespace {

ModelRequest request(const std::string& item, int turn = 1, const std::string& session = "s") {
  ModelRequest r;
  r.session_id = session;
  r.item_id = item;
  r.turn = turn;
  r.system = kSystemPrompt;
  r.memory_text = "[0] organ=lung size_ml=1.00 mean_hu=-850.00 z=[0,3]\n";
  r.question = "Is there effusion?";
  r.options = {"yes", "no"};
  return r;
}

std::string chat_response(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}.dump();
}

// Local chat-completions endpoint on an ephemeral port.
struct LocalServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  template <typename Handler>
  explicit LocalServer(Handler h) {
    server.Post("/v1/chat/completions", h);
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    thread.join();
  }
  std::string url() const { return fmt::format("http://127.0.0.1:{}/v1/chat/completions", port); }
};

}  // namespace

TEST_SUITE("clients") {

TEST_CASE("canned client scripts") {
  const auto fixture = nlohmann::json::parse(R"({
    "replies": {
      "a": [{"answer": "B", "need_visual": true, "slice": 3}, "raw text reply"],
      "*": {"answer": "A", "evidence": [0]}
    }})");
  CannedClient c(fixture);
  const auto first = parse_reply(c.complete(request("a")));
  REQUIRE(first);
  CHECK(first->answer == "B");
  CHECK(first->need_visual);
  CHECK(first->tool == "mask-overlay");
  CHECK(first->slice == 3);
  CHECK(c.complete(request("a")) == "raw text reply");
  CHECK(c.complete(request("a")) == "raw text reply");
  // fresh session starts at the beginning again
  CHECK(parse_reply(c.complete(request("a", 1, "other")))->answer == "B");
  const auto fallback = parse_reply(c.complete(request("zzz")));
  REQUIRE(fallback);
  CHECK(fallback->answer == "A");
  CHECK(fallback->evidence == std::vector<EntryId>{0});

  CannedClient strict(nlohmann::json::parse(R"({"a": ["x"]})"));
  CHECK_THROWS_AS(strict.complete(request("b")), Error);
  CHECK_THROWS_AS(CannedClient(nlohmann::json::parse(R"({"a": []})")), Error);
  CHECK_THROWS_AS(CannedClient(nlohmann::json::parse(R"([1, 2])")), Error);

  testsupport::TempDir tmp("canned");
  std::ofstream(tmp / "f.json") << fixture.dump();
  auto fromfile = CannedClient::from_file(tmp / "f.json");
  CHECK(parse_reply(fromfile.complete(request("a")))->answer == "B");
  CHECK_THROWS_AS(CannedClient::from_file(tmp / "none.json"), Error);
}

TEST_CASE("oracle and random clients") {
  OracleClient o({{"x", "C"}}, 1);
  const auto t1 = parse_reply(o.complete(request("x", 1)));
  REQUIRE(t1);
  CHECK(t1->answer == "C");
  CHECK(t1->need_visual);
  const auto t2 = parse_reply(o.complete(request("x", 2)));
  CHECK(t2->answer == "C");
  CHECK_FALSE(t2->need_visual);
  CHECK(parse_reply(o.complete(request("unknown")))->answer == "undetermined");

  RandomClient r(11), r2(11);
  std::map<std::string, int> counts;
  for (int i = 0; i < 2000; ++i) {
    const auto req = request(fmt::format("item{}", i));
    const auto a = parse_reply(r.complete(req))->answer;
    CHECK(a == parse_reply(r2.complete(req))->answer);
    ++counts[a];
  }
  CHECK(counts.size() == 2);
  CHECK(std::abs(counts["A"] - 1000) < 120);
}

TEST_CASE("base64 and request body") {
  CHECK(base64_encode({}) == "");
  CHECK(base64_encode({'f'}) == "Zg==");
  CHECK(base64_encode({'f', 'o'}) == "Zm8=");
  CHECK(base64_encode({'f', 'o', 'o', 'b', 'a', 'r'}) == "Zm9vYmFy");

  auto req = request("x");
  req.image = EncodedImage{"image/png", 4, {'f', 'o', 'o'}};
  const auto body = chat_request_body(req, "m1");
  CHECK(body["model"] == "m1");
  REQUIRE(body["messages"].size() == 2);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][0]["content"] == kSystemPrompt);
  CHECK(body["messages"][1]["role"] == "user");
  const auto& content = body["messages"][1]["content"];
  REQUIRE(content.size() == 2);
  CHECK(content[0]["type"] == "text");
  CHECK(content[0]["text"] == user_prompt(req));
  CHECK(content[1]["type"] == "image_url");
  CHECK(content[1]["image_url"]["url"] == "data:image/png;base64,Zm9v");

  req.image.reset();
  CHECK(chat_request_body(req, "m1")["messages"][1]["content"].size() == 1);
}

TEST_CASE("http client wire contract") {
  ::setenv("MEDAGENT_TEST_TOKEN", "s3cret", 1);
  HttpClientOptions opts;
  opts.token_env = "MEDAGENT_TEST_TOKEN";
  opts.model = "test-model";
  opts.timeout_s = 5;

  SUBCASE("request shape and reply extraction") {
    nlohmann::json seen;
    std::string auth;
    LocalServer srv([&](const httplib::Request& rq, httplib::Response& rs) {
      seen = nlohmann::json::parse(rq.body);
      auth = rq.get_header_value("Authorization");
      rs.set_content(chat_response("hello\n```\nanswer=B\nneed_visual=false\n```"), "application/json");
    });
    opts.url = srv.url();
    HttpClient c(opts);
    auto req = request("x");
    req.image = EncodedImage{"image/png", 2, {1, 2, 3}};
    const auto text = c.complete(req);
    CHECK(parse_reply(text)->answer == "B");
    CHECK(auth == "Bearer s3cret");
    CHECK(seen == chat_request_body(req, "test-model"));
  }

  SUBCASE("one retry after a server error") {
    int calls = 0;
    LocalServer srv([&](const httplib::Request&, httplib::Response& rs) {
      if (++calls == 1) {
        rs.status = 503;
        return;
      }
      rs.set_content(chat_response("ok"), "application/json");
    });
    opts.url = srv.url();
    HttpClient c(opts);
    CHECK(c.complete(request("x")) == "ok");
    CHECK(calls == 2);
  }

  SUBCASE("persistent server errors and bad bodies are ClientUnavailable") {
    int calls = 0;
    LocalServer srv([&](const httplib::Request& rq, httplib::Response& rs) {
      ++calls;
      if (nlohmann::json::parse(rq.body)["messages"][1]["content"][0]["text"].get<std::string>().find("bad-body") !=
          std::string::npos) {
        rs.set_content("{}", "application/json");
        return;
      }
      rs.status = 500;
    });
    opts.url = srv.url();
    HttpClient c(opts);
    try {
      c.complete(request("x"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ClientUnavailable);
      CHECK(std::string(e.what()).find("HTTP 500") != std::string::npos);
    }
    CHECK(calls == 2);
    auto bad = request("x");
    bad.question = "bad-body";
    CHECK_THROWS_AS(c.complete(bad), Error);
  }

  SUBCASE("unreachable endpoint") {
    const int port = testsupport::closed_port();
    opts.url = fmt::format("http://127.0.0.1:{}/v1/chat/completions", port);
    opts.timeout_s = 2;
    HttpClient c(opts);
    try {
      c.complete(request("x"));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ClientUnavailable);
      CHECK(std::string(e.what()).find(opts.url) != std::string::npos);
    }
  }

  CHECK_THROWS_AS(HttpClient(HttpClientOptions{"localhost:80/x"}), Error);
}

}
