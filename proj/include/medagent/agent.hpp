#pragma once

// Iterative text reasoning over the evidence memory with at most one axial
// slice inspected per turn, plus the model-client contract it runs against.

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "medagent/memory.hpp"
#include "medagent/raster.hpp"
#include "medagent/volume.hpp"

namespace medagent {

inline constexpr int kDefaultMaxTurns = 5;

enum class VisualAction { None, MaskOverlay, CropZoom };

std::string action_name(VisualAction a);
/// "mask-overlay", "crop-zoom" or "none"; nullopt for anything else.
std::optional<VisualAction> parse_action(std::string_view s);

struct RouterDecision {
  bool acquire_visual = false;
  VisualAction action = VisualAction::None;
  std::optional<std::int64_t> slice;  // model's slice choice, if any
  bool operator==(const RouterDecision&) const = default;
};

struct Question {
  std::string item_id;
  std::string text;
  std::vector<std::string> options;
  std::string target_organ;
};

struct EncodedImage {
  std::string mime = "image/png";
  std::int64_t slice = -1;
  std::vector<std::uint8_t> bytes;
};

struct ModelRequest {
  std::string session_id;
  std::string item_id;
  int turn = 1;
  std::string system;
  std::string memory_text;
  std::string question;
  std::vector<std::string> options;
  std::optional<EncodedImage> image;  // at most one slice per request
  bool routing_only = false;
  bool reminder = false;  // retry after an unparseable reply
};

/// Stable digest of everything a request carries.
std::string request_digest(const ModelRequest& r);
/// Text of the user turn: rendered memory, question and lettered options.
std::string user_prompt(const ModelRequest& r);
extern const char* const kSystemPrompt;
extern const char* const kReminderPrompt;
extern const char* const kRoutingPrompt;

/// Any model endpoint. Implementations must tolerate concurrent calls from
/// distinct sessions. Transport failures throw Error(ClientUnavailable).
class ModelClient {
 public:
  virtual ~ModelClient() = default;
  virtual std::string complete(const ModelRequest& req) = 0;
};

/// The structured reply: free-text rationale followed by a fenced block of
/// key=value lines (answer, evidence, assumptions, need_visual, tool, slice).
struct ParsedReply {
  std::string rationale;
  std::string answer;
  std::vector<EntryId> evidence;
  std::vector<std::string> assumptions;
  bool need_visual = false;
  std::string tool = "none";
  std::optional<std::int64_t> slice;
};

/// nullopt when the block is missing or a required key (answer, need_visual)
/// is absent or malformed.
std::optional<ParsedReply> parse_reply(const std::string& text);
std::string format_reply(const ParsedReply& r);

/// Router decision from a parsed reply; unknown tools and need_visual
/// without a tool fall back to (false, none) and set `flag`.
RouterDecision decide(const ParsedReply& r, std::string* flag = nullptr);

struct StepResult {
  AgentUpdate update;
  std::optional<ParsedReply> parsed;
  std::vector<std::string> raw;  // one per call, including the retry
  std::vector<std::string> flags;
  std::string request_digest;
};

/// One reasoning call (plus one stricter retry on an unparseable reply) and
/// the resulting update, appended to memory. Evidence ids that do not refer
/// to existing entries are dropped and flagged.
StepResult reason_step(const Question& q, EvidenceMemory& mem, ModelClient& client, int turn,
                       const std::optional<EncodedImage>& image = std::nullopt,
                       const std::string& session_id = "session");

enum class RouterMode { SameResponse, SeparateCall };

/// Routing for a step. In SameResponse mode the decision comes from the
/// step's reply; SeparateCall issues a routing-only request.
RouterDecision route(const StepResult& step, const Question& q, const EvidenceMemory& mem, ModelClient& client,
                     RouterMode mode, std::vector<std::string>* flags = nullptr,
                     const std::string& session_id = "session");

/// mask-overlay: windowed slice with label contours. crop-zoom: 2× zoom of
/// the box. Throws SliceOutOfRange, MissingRoi.
EncodedImage apply_visual_op(VisualAction action, std::int64_t slice, const ScalarVolume& hu,
                             const LabelVolume& masks, const std::optional<PlaneBox>& roi, Window window);

struct TurnRecord {
  int turn = 0;
  std::string request_digest;
  std::vector<std::string> raw;
  AgentUpdate update;
  RouterDecision decision;
  std::optional<std::int64_t> image_slice;  // slice sent with this turn's request
  std::vector<std::string> flags;
  double elapsed_ms = 0.0;
};

struct SessionTranscript {
  std::string session_id;
  std::string item_id;
  std::vector<TurnRecord> turns;
  std::string final_answer = "undetermined";
  std::optional<std::string> error;  // client failure that ended the session

  /// JSON form; timings are omitted unless requested so replays compare equal.
  nlohmann::json to_json(bool with_timing = false) const;
  /// Digest of the timing-free JSON form.
  std::string digest() const;
};

struct LoopOptions {
  int max_turns = kDefaultMaxTurns;
  RouterMode router = RouterMode::SameResponse;
  std::string session_id = "session";
  /// Optional crop box for crop-zoom; defaults to the target organ's in-plane
  /// bounding box, or the whole slice.
  std::optional<PlaneBox> roi;
  /// Monotonic clock in milliseconds; injectable for reproducible timings.
  std::function<double()> clock;
};

struct LoopResult {
  std::string final_answer;
  SessionTranscript transcript;
};

/// Reason, route, fetch at most one slice, repeat until the router declares
/// sufficiency or max_turns is reached. A newly attached slice releases the
/// previous one; every live slice is released when the loop ends. Client
/// failures end the session with the transcript so far and `error` set.
LoopResult run_loop(const Question& q, EvidenceMemory& mem, const ScalarVolume& hu, const LabelVolume& masks,
                    ModelClient& client, const LoopOptions& opts = {});

}  // namespace medagent
