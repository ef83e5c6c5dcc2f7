#include "medagent/agent.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <fmt/format.h>

#include "medagent/error.hpp"
#include "medagent/rng.hpp"
#include "medagent/util.hpp"

namespace medagent {

const char* const kSystemPrompt =
    "You are a radiology assistant answering a multiple-choice question about one chest CT.\n"
    "The memory lists organ measurements, ranked candidate locations and your earlier turns; each\n"
    "memory line is an entry numbered from 0 in the order shown. You may be shown at most one axial\n"
    "slice per turn. Reason briefly, then end with a fenced block of key=value lines:\n"
    "```\n"
    "answer=<option letter or undetermined>\n"
    "evidence=<comma-separated memory entry numbers>\n"
    "assumptions=<JSON array of strings>\n"
    "need_visual=<true|false>\n"
    "tool=<mask-overlay|crop-zoom|none>\n"
    "slice=<axial index, optional>\n"
    "```";

const char* const kReminderPrompt =
    "Your previous reply could not be parsed. Reply again and finish with exactly one fenced block\n"
    "containing at least the answer= and need_visual= lines.";

const char* const kRoutingPrompt =
    "Decide whether one more axial slice is needed to answer. Reply with a fenced block containing\n"
    "answer=, need_visual=, tool= and optionally slice=.";

namespace {

std::optional<std::int64_t> parse_int(const std::string& s) {
  if (s.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const auto v = std::stoll(s, &used);
    if (used != s.size()) return std::nullopt;
    return v;
  } catch (const std::logic_error&) {
    return std::nullopt;
  }
}

std::optional<bool> parse_bool(const std::string& s) {
  const auto v = to_lower(s);
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  return std::nullopt;
}

bool parse_evidence(std::string s, std::vector<EntryId>* out) {
  s.erase(std::remove_if(s.begin(), s.end(), [](char c) { return c == '[' || c == ']'; }), s.end());
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    const auto v = parse_int(part);
    if (!v || *v < 0) return false;
    out->push_back(static_cast<EntryId>(*v));
  }
  return true;
}

bool parse_assumptions(const std::string& s, std::vector<std::string>* out) {
  if (s.empty()) return true;
  if (s.front() == '[') {
    const auto j = nlohmann::json::parse(s, nullptr, false);
    if (j.is_discarded() || !j.is_array()) return false;
    for (const auto& e : j) {
      if (!e.is_string()) return false;
      out->push_back(e.get<std::string>());
    }
    return true;
  }
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ';')) {
    part = trim(part);
    if (!part.empty()) out->push_back(part);
  }
  return true;
}

bool is_fence(const std::string& line) { return trim(line).rfind("```", 0) == 0; }

}  // namespace

std::string action_name(VisualAction a) {
  switch (a) {
    case VisualAction::MaskOverlay: return "mask-overlay";
    case VisualAction::CropZoom: return "crop-zoom";
    case VisualAction::None: break;
  }
  return "none";
}

std::optional<VisualAction> parse_action(std::string_view s) {
  const auto v = to_lower(trim(s));
  if (v == "mask-overlay") return VisualAction::MaskOverlay;
  if (v == "crop-zoom") return VisualAction::CropZoom;
  if (v == "none" || v.empty()) return VisualAction::None;
  return std::nullopt;
}

std::optional<ParsedReply> parse_reply(const std::string& text) {
  std::vector<std::string> lines;
  {
    std::stringstream in(text);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
  }
  // The last complete fenced block wins, so a rationale may quote examples.
  std::optional<std::size_t> open, close;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!is_fence(lines[i])) continue;
    for (std::size_t j = i + 1; j < lines.size(); ++j) {
      if (is_fence(lines[j])) {
        open = i;
        close = j;
        i = j;
        break;
      }
    }
  }
  if (!open) return std::nullopt;

  ParsedReply r;
  std::string rationale;
  for (std::size_t i = 0; i < *open; ++i) rationale += lines[i] + "\n";
  r.rationale = trim(rationale);

  bool have_answer = false, have_visual = false;
  for (std::size_t i = *open + 1; i < *close; ++i) {
    const auto eq = lines[i].find('=');
    if (eq == std::string::npos) continue;
    const auto key = to_lower(trim(std::string_view(lines[i]).substr(0, eq)));
    const auto value = trim(std::string_view(lines[i]).substr(eq + 1));
    if (key == "answer") {
      if (value.empty()) return std::nullopt;
      r.answer = value;
      have_answer = true;
    } else if (key == "evidence") {
      if (!parse_evidence(value, &r.evidence)) return std::nullopt;
    } else if (key == "assumptions") {
      if (!parse_assumptions(value, &r.assumptions)) return std::nullopt;
    } else if (key == "need_visual") {
      const auto b = parse_bool(value);
      if (!b) return std::nullopt;
      r.need_visual = *b;
      have_visual = true;
    } else if (key == "tool") {
      r.tool = to_lower(value);
    } else if (key == "slice") {
      r.slice = parse_int(value);
    }
  }
  if (!have_answer || !have_visual) return std::nullopt;
  return r;
}

std::string format_reply(const ParsedReply& r) {
  std::string ev;
  for (std::size_t i = 0; i < r.evidence.size(); ++i) ev += (i ? "," : "") + std::to_string(r.evidence[i]);
  std::string out = r.rationale;
  if (!out.empty()) out += "\n";
  out += fmt::format("```\nanswer={}\nevidence={}\nassumptions={}\nneed_visual={}\ntool={}\n", r.answer, ev,
                     nlohmann::json(r.assumptions).dump(), r.need_visual ? "true" : "false", r.tool);
  if (r.slice) out += fmt::format("slice={}\n", *r.slice);
  out += "```\n";
  return out;
}

RouterDecision decide(const ParsedReply& r, std::string* flag) {
  if (!r.need_visual) return {};
  const auto action = parse_action(r.tool);
  if (!action) {
    if (flag) *flag = "unknown_tool:" + r.tool;
    return {};
  }
  if (*action == VisualAction::None) {
    if (flag) *flag = "visual_without_tool";
    return {};
  }
  return {true, *action, r.slice};
}

std::string user_prompt(const ModelRequest& r) {
  std::string out = "Memory:\n" + r.memory_text + "\nQuestion: " + r.question + "\n";
  for (std::size_t i = 0; i < r.options.size(); ++i) {
    out += fmt::format("{}. {}\n", static_cast<char>('A' + i), r.options[i]);
  }
  if (r.image) out += fmt::format("Attached: axial slice {}.\n", r.image->slice);
  return out;
}

std::string request_digest(const ModelRequest& r) {
  std::string buf = r.system;
  buf += '\0';
  buf += user_prompt(r);
  buf += '\0';
  buf += fmt::format("{}|{}|{}|{}|{}", r.item_id, r.turn, r.routing_only, r.reminder, r.image ? r.image->mime : "");
  if (r.image) buf.append(r.image->bytes.begin(), r.image->bytes.end());
  return hex64(fnv1a64(buf));
}

namespace {

ModelRequest make_request(const Question& q, const EvidenceMemory& mem, int turn,
                          const std::optional<EncodedImage>& image, const std::string& session_id) {
  ModelRequest req;
  req.session_id = session_id;
  req.item_id = q.item_id;
  req.turn = turn;
  req.system = kSystemPrompt;
  req.memory_text = render_memory(mem);
  req.question = q.text;
  req.options = q.options;
  req.image = image;
  return req;
}

// Drafts the update for a turn without appending it; the loop still has to
// record the slice the router attaches.
StepResult draft_step(const Question& q, const EvidenceMemory& mem, ModelClient& client, int turn,
                      const std::optional<EncodedImage>& image, const std::string& session_id) {
  StepResult out;
  ModelRequest req = make_request(q, mem, turn, image, session_id);
  out.request_digest = request_digest(req);
  out.raw.push_back(client.complete(req));
  out.parsed = parse_reply(out.raw.back());
  if (!out.parsed) {
    out.flags.push_back("unparseable_reply");
    req.reminder = true;
    req.system = std::string(kSystemPrompt) + "\n" + kReminderPrompt;
    out.raw.push_back(client.complete(req));
    out.parsed = parse_reply(out.raw.back());
    if (!out.parsed) out.flags.push_back("unparseable_after_retry");
  }

  AgentUpdate& u = out.update;
  u.turn = turn;
  if (out.parsed) {
    u.rationale = out.parsed->rationale;
    u.answer = out.parsed->answer;
    u.assumptions = out.parsed->assumptions;
    for (EntryId id : out.parsed->evidence) {
      if (id >= mem.size()) {
        out.flags.push_back(fmt::format("dangling_evidence:{}", id));
      } else if (std::find(u.evidence_refs.begin(), u.evidence_refs.end(), id) == u.evidence_refs.end()) {
        u.evidence_refs.push_back(id);
      }
    }
  }
  return out;
}

}  // namespace

StepResult reason_step(const Question& q, EvidenceMemory& mem, ModelClient& client, int turn,
                       const std::optional<EncodedImage>& image, const std::string& session_id) {
  StepResult out = draft_step(q, mem, client, turn, image, session_id);
  mem.append(out.update);
  return out;
}

RouterDecision route(const StepResult& step, const Question& q, const EvidenceMemory& mem, ModelClient& client,
                     RouterMode mode, std::vector<std::string>* flags, const std::string& session_id) {
  auto flag = [&](std::string f) {
    if (flags) flags->push_back(std::move(f));
  };
  std::optional<ParsedReply> reply = step.parsed;
  if (mode == RouterMode::SeparateCall) {
    ModelRequest req = make_request(q, mem, step.update.turn, std::nullopt, session_id);
    req.routing_only = true;
    req.system = kRoutingPrompt;
    reply = parse_reply(client.complete(req));
  }
  if (!reply) {
    flag("router_default");
    return {};
  }
  std::string why;
  const RouterDecision d = decide(*reply, &why);
  if (!why.empty()) flag(why);
  return d;
}

EncodedImage apply_visual_op(VisualAction action, std::int64_t slice, const ScalarVolume& hu,
                             const LabelVolume& masks, const std::optional<PlaneBox>& roi, Window window) {
  if (action == VisualAction::None) throw Error(Errc::InvalidArgument, "no visual action requested");
  if (action == VisualAction::CropZoom && !roi) throw Error(Errc::MissingRoi, "crop-zoom needs an ROI box");
  RgbImage img = render_slice(hu, slice, window);
  if (action == VisualAction::MaskOverlay) {
    if (!(masks.dims() == hu.dims())) throw Error(Errc::DimsMismatch, "label volume and CT differ in shape");
    img = overlay_contours(std::move(img), masks, slice);
  } else {
    img = crop_zoom(img, *roi);
  }
  return {"image/png", slice, encode_png(img)};
}

nlohmann::json SessionTranscript::to_json(bool with_timing) const {
  nlohmann::json turns_j = nlohmann::json::array();
  for (const auto& t : turns) {
    nlohmann::json u = {{"turn", t.update.turn},
                        {"rationale", t.update.rationale},
                        {"answer", t.update.answer},
                        {"evidence", t.update.evidence_refs},
                        {"assumptions", t.update.assumptions}};
    if (t.update.attached_slice) u["attached_slice"] = *t.update.attached_slice;
    nlohmann::json d = {{"acquire_visual", t.decision.acquire_visual}, {"action", action_name(t.decision.action)}};
    if (t.decision.slice) d["slice"] = *t.decision.slice;
    nlohmann::json j = {{"turn", t.turn},     {"request_digest", t.request_digest}, {"raw", t.raw},
                        {"update", u},        {"decision", d},                      {"flags", t.flags}};
    if (t.image_slice) j["image_slice"] = *t.image_slice;
    if (with_timing) j["elapsed_ms"] = t.elapsed_ms;
    turns_j.push_back(std::move(j));
  }
  nlohmann::json out = {{"session_id", session_id}, {"item_id", item_id}, {"turns", turns_j},
                        {"final_answer", final_answer}};
  if (error) out["error"] = *error;
  return out;
}

std::string SessionTranscript::digest() const { return hex64(fnv1a64(to_json(false).dump())); }

namespace {

std::int64_t default_slice(const EvidenceMemory& mem, const Question& q, const ScalarVolume& hu) {
  std::optional<RoiCandidate> best;
  for (const auto& c : mem.roi_candidates()) {
    if (c.kind == RoiKind::AxialSlice && (!best || c.rank < best->rank)) best = c;
  }
  if (best) return best->slice;
  if (auto org = mem.organ(q.target_organ)) return (org->z_range.z_min + org->z_range.z_max) / 2;
  return hu.dims().d / 2;
}

PlaneBox organ_box(const LabelVolume& masks, const std::string& organ, std::int64_t z, const Dims& dims) {
  PlaneBox whole{0, dims.h, 0, dims.w};
  const auto label = masks.label_of(organ);
  if (!label || !(masks.dims() == dims)) return whole;
  auto scan = [&](std::int64_t z0, std::int64_t z1) -> std::optional<PlaneBox> {
    std::optional<PlaneBox> b;
    for (std::int64_t zz = z0; zz < z1; ++zz) {
      for (std::int64_t y = 0; y < dims.w; ++y) {
        for (std::int64_t x = 0; x < dims.h; ++x) {
          if (masks.data()[dims.index(x, y, zz)] != *label) continue;
          if (!b) b = PlaneBox{x, x + 1, y, y + 1};
          b->x0 = std::min(b->x0, x);
          b->x1 = std::max(b->x1, x + 1);
          b->y0 = std::min(b->y0, y);
          b->y1 = std::max(b->y1, y + 1);
        }
      }
    }
    return b;
  };
  if (auto b = scan(z, z + 1)) return *b;
  if (auto b = scan(0, dims.d)) return *b;
  return whole;
}

}  // namespace

LoopResult run_loop(const Question& q, EvidenceMemory& mem, const ScalarVolume& hu, const LabelVolume& masks,
                    ModelClient& client, const LoopOptions& opts) {
  if (opts.max_turns < 1) throw Error(Errc::InvalidArgument, "max_turns must be >= 1");
  auto clock = opts.clock;
  if (!clock) {
    clock = [] {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
    };
  }
  const Window window = window_for_organ(q.target_organ);

  LoopResult res;
  SessionTranscript& tr = res.transcript;
  tr.session_id = opts.session_id;
  tr.item_id = q.item_id;

  std::optional<EncodedImage> pending;
  std::optional<std::int64_t> live;
  for (int t = 1; t <= opts.max_turns; ++t) {
    const double t0 = clock();
    TurnRecord rec;
    rec.turn = t;
    if (pending) rec.image_slice = pending->slice;
    StepResult step;
    RouterDecision decision;
    try {
      step = draft_step(q, mem, client, mem.last_turn() + 1, pending, opts.session_id);
      rec.flags = step.flags;
      if (opts.router == RouterMode::SeparateCall) {
        EvidenceMemory view = mem;
        view.append(step.update);
        decision = route(step, q, view, client, opts.router, &rec.flags, opts.session_id);
      } else {
        decision = route(step, q, mem, client, opts.router, &rec.flags, opts.session_id);
      }
    } catch (const Error& e) {
      if (e.code() != Errc::ClientUnavailable) throw;
      tr.error = e.what();
      break;
    }
    pending.reset();

    if (decision.acquire_visual && t < opts.max_turns) {
      std::int64_t z = default_slice(mem, q, hu);
      if (decision.slice) {
        if (*decision.slice >= 0 && *decision.slice < hu.dims().d) {
          z = *decision.slice;
        } else {
          rec.flags.push_back(fmt::format("slice_out_of_range:{}", *decision.slice));
        }
      }
      const PlaneBox box = opts.roi ? *opts.roi : organ_box(masks, q.target_organ, z, hu.dims());
      EncodedImage img = apply_visual_op(decision.action, z, hu, masks, box, window);
      step.update.attached_slice = z;
      mem.append(step.update);
      if (!mem.dropped_slices().count(z)) mem.attach_payload(z, img.bytes);
      if (live && *live != z) mem.drop_slice(*live);
      live = z;
      pending = std::move(img);
    } else {
      mem.append(step.update);
    }

    rec.raw = step.raw;
    rec.request_digest = step.request_digest;
    rec.update = step.update;
    rec.decision = decision;
    rec.elapsed_ms = clock() - t0;
    tr.turns.push_back(std::move(rec));
    if (!decision.acquire_visual) break;
  }
  for (auto s : mem.live_slices()) mem.drop_slice(s);

  tr.final_answer = tr.turns.empty() ? "undetermined" : tr.turns.back().update.answer;
  res.final_answer = tr.final_answer;
  return res;
}

}  // namespace medagent
