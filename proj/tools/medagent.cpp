// Command-line entry point: analyze, target, agent, qagen, eval and synth.

#include <atomic>
#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "medagent/agent.hpp"
#include "medagent/catalog.hpp"
#include "medagent/cflt.hpp"
#include "medagent/clients.hpp"
#include "medagent/config.hpp"
#include "medagent/error.hpp"
#include "medagent/eval.hpp"
#include "medagent/lesion.hpp"
#include "medagent/memory.hpp"
#include "medagent/qagen.hpp"
#include "medagent/synth.hpp"
#include "medagent/util.hpp"
#include "medagent/volume_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace medagent;

namespace {

// Exit codes: 1 for failures, 2 for missing inputs.
struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  fs::path config;
  std::vector<std::string> overrides;  // key=value
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string output_dir;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(Errc::ConfigError, "override must be key=value: " + kv);
    set_config_value(cfg, trim(kv.substr(0, eq)), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.jobs) cfg.jobs = *c.jobs;
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  validate(cfg);
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "Run configuration file")->check(CLI::ExistingFile);
  app->add_option("--set", c.overrides, "Override a config key (key=value), repeatable");
  app->add_option("--seed", c.seed, "Seed for every random stream");
  app->add_option("-j,--jobs", c.jobs, "Parallel workers");
  app->add_option("-o,--output-dir", c.output_dir, "Output directory");
}

Rules load_rules(const RunConfig& cfg) {
  Rules r = cfg.rules.empty() ? default_rules() : parse_rules(read_file(cfg.rules));
  r.validate();
  return r;
}

std::vector<CaseEntry> catalog_of(const RunConfig& cfg) {
  require_paths(cfg, {"catalog"});
  return load_catalog(cfg.catalog);
}

const CaseEntry& find_case(const std::vector<CaseEntry>& cases, const std::string& id) {
  for (const auto& c : cases) {
    if (c.case_id == id) return c;
  }
  throw Error(Errc::InvalidArgument, "case '" + id + "' is not in the catalog");
}

/// Mask for a question's organ: a label of that name, the lobes for lung and
/// pleura questions, the trachea for airway questions.
BinaryMask organ_mask(const LabelVolume& organs, const std::string& organ) {
  if (organs.label_of(organ)) return organs.mask(organ);
  if (organ == "airway" && organs.label_of("trachea")) return organs.mask("trachea");
  auto m = union_mask(organs, kLobes);
  return m.empty() ? organs.nonzero() : m;
}

std::optional<PlaneBox> inplane_box(const BinaryMask& m) {
  const Dims d = m.dims();
  std::optional<PlaneBox> b;
  for (std::size_t i = 0; i < m.data().size(); ++i) {
    if (!m.data()[i]) continue;
    const Voxel v = unravel(d, i);
    if (!b) b = PlaneBox{v.x, v.x + 1, v.y, v.y + 1};
    b->x0 = std::min(b->x0, v.x);
    b->x1 = std::max(b->x1, v.x + 1);
    b->y0 = std::min(b->y0, v.y);
    b->y1 = std::max(b->y1, v.y + 1);
  }
  return b;
}

/// Organ labels first, then lesion labels above them, for contour overlays.
LabelVolume overlay_labels(const CaseVoxels& v) {
  std::uint32_t offset = 0;
  for (const auto& [l, _] : v.organs.names()) offset = std::max(offset, l);
  for (auto l : v.organs.data()) offset = std::max(offset, l);
  auto data = v.organs.data();
  auto names = v.organs.names();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (v.lesions.data()[i]) data[i] = offset + v.lesions.data()[i];
  }
  for (const auto& [l, n] : v.lesions.names()) names[offset + l] = n;
  return LabelVolume(v.organs.dims(), v.organs.spacing(), std::move(data), std::move(names));
}

json organ_records_json(const EvidenceMemory& mem) {
  auto out = json::array();
  for (const auto& o : mem.organ_records()) {
    out.push_back({{"organ", o.organ}, {"size_ml", o.size_ml}, {"mean_hu", o.mean_hu},
                   {"z_range", {o.z_range.z_min, o.z_range.z_max}}});
  }
  return out;
}

void emit(const json& j, const std::string& out_path) {
  const std::string text = j.dump(2) + "\n";
  if (out_path.empty() || out_path == "-") {
    std::cout << text;
  } else {
    write_file_atomic(out_path, text);
  }
}

// -- analyze -----------------------------------------------------------------

struct AnalyzeArgs {
  std::string case_id;
  fs::path ct, organs, lesions;
  std::string organ_list;
  std::string out;
};

int cmd_analyze(const Common& common, const AnalyzeArgs& a) {
  RunConfig cfg = resolve(common);
  if (!a.organ_list.empty()) cfg.organs = split_list(a.organ_list);
  std::string id = a.case_id;
  CaseVoxels v;
  try {
    if (!a.ct.empty()) {
      for (const auto& p : {a.ct, a.organs}) {
        if (p.empty()) throw MissingInput("--ct and --organ-mask are both required");
        if (!fs::exists(p)) throw MissingInput("file not found: " + p.string());
      }
      if (!a.lesions.empty() && !fs::exists(a.lesions)) throw MissingInput("file not found: " + a.lesions.string());
      if (id.empty()) id = a.ct.stem().string();
      v.hu = load_volume(a.ct);
      v.organs = load_labels(a.organs);
      v.lesions = a.lesions.empty() ? LabelVolume(v.hu.dims(), v.hu.spacing(),
                                                  std::vector<std::uint32_t>(v.hu.dims().voxels(), 0), {})
                                    : load_labels(a.lesions);
    } else {
      if (id.empty()) throw Error(Errc::InvalidArgument, "give --case or --ct/--organ-mask");
      const auto cases = catalog_of(cfg);
      const auto& c = find_case(cases, id);
      for (const auto& p : {c.ct, c.organs, c.lesions}) {
        if (!fs::exists(p)) throw MissingInput("file not found: " + p.string());
      }
      v = c.load();
    }
  } catch (const MissingInput& e) {
    throw MissingInput(id + ": " + e.what());
  }

  try {
    InitResult init = init_memory(v.organs, v.hu, cfg.organs);
    const Rules rules = load_rules(cfg);
    std::vector<std::string> focal;
    for (const auto& [_, name] : v.lesions.names()) {
      if (name != rules.emphysema_label && name != rules.effusion_label) focal.push_back(name);
    }
    const BinaryMask lesions = union_mask(v.lesions, focal);
    const BinaryMask lung = union_mask(v.organs, kLobes);
    const BinaryMask emph = v.lesions.mask(rules.emphysema_label);
    const BinaryMask eff = v.lesions.mask(rules.effusion_label);
    const BinaryMask eff_region = mask_or(lung, eff);
    const LabelVolume regions = restrict_labels(v.organs, kLobes);

    CaseAnalyticsInput in;
    in.case_id = id;
    in.hu = &v.hu;
    in.lesions = &lesions;
    in.regions = &regions;
    in.organ = lung.empty() ? nullptr : &lung;
    in.lung = lung.empty() ? nullptr : &lung;
    in.emphysema = emph.empty() ? nullptr : &emph;
    in.effusion = eff.empty() ? nullptr : &eff;
    in.effusion_region = eff_region.empty() ? nullptr : &eff_region;
    in.connectivity = rules.connectivity;
    in.min_volume_ml = rules.min_lesion_ml;

    json out;
    out["case_id"] = id;
    out["organs"] = organ_records_json(init.memory);
    out["omitted"] = init.omitted;
    out["analytics"] = export_case_analytics(in);
    emit(out, a.out);
  } catch (const Error& e) {
    throw Error(e.code(), id + ": " + e.detail());
  }
  return 0;
}

// -- target ------------------------------------------------------------------

struct TargetArgs {
  std::string case_id;
  fs::path features, prompt, organ_mask_path, memory;
  std::string organ = "lung";
  std::string out;
};

int cmd_target(const Common& common, const TargetArgs& a) {
  const RunConfig cfg = resolve(common);
  fs::path features = a.features;
  const fs::path prompt = a.prompt.empty() ? cfg.prompt : a.prompt;
  std::optional<BinaryMask> organ;
  if (!a.case_id.empty()) {
    const auto cases = catalog_of(cfg);
    const auto& c = find_case(cases, a.case_id);
    if (features.empty()) {
      if (!c.features) throw Error(Errc::InvalidArgument, a.case_id + ": catalog entry has no feature field");
      features = *c.features;
    }
    const auto v = c.load();
    organ = organ_mask(v.organs, a.organ);
  } else if (!a.organ_mask_path.empty()) {
    if (!fs::exists(a.organ_mask_path)) throw MissingInput("file not found: " + a.organ_mask_path.string());
    organ = organ_mask(load_labels(a.organ_mask_path), a.organ);
  }
  if (features.empty() || prompt.empty()) throw Error(Errc::InvalidArgument, "a feature field and a prompt embedding are required");
  for (const auto& p : {features, prompt}) {
    if (!fs::exists(p)) throw MissingInput("file not found: " + p.string());
  }
  const FeatureField field = read_feature_field(features);
  const TextEmbedding text = read_text_embedding(prompt);
  if (!organ) {
    // Without an organ mask the whole volume is the organ.
    const Dims d = field.voxel_dims();
    organ = BinaryMask(d, Spacing{}, std::vector<std::uint8_t>(d.voxels(), 1));
  }
  if (cfg.tau > 1.0) {
    fmt::print(stderr, "warning: tau {} exceeds the normalised heatmap range; every score will be 0\n", cfg.tau);
  }

  EvidenceMemory mem;
  if (!a.memory.empty() && fs::exists(a.memory)) mem = memory_from_json(json::parse(read_file(a.memory)));
  const CfltResult r = run_targeting(field, text, *organ, CfltOptions{cfg.tau, cfg.top_k}, a.memory.empty() ? nullptr : &mem);
  if (!a.memory.empty()) write_file_atomic(a.memory, memory_to_json(mem).dump(2) + "\n");

  auto ranked = json::array();
  for (const auto& c : r.ranked) {
    ranked.push_back({{"rank", c.rank}, {"location", c.location()}, {"score", c.score}});
  }
  json out{{"tau", cfg.tau}, {"top_k", cfg.top_k}, {"ranked", ranked},
           {"finite_cells", r.heatmap.finite_cells()}, {"zero_norm_cells", r.heatmap.zero_norm_cells}};
  if (!a.case_id.empty()) out["case_id"] = a.case_id;
  emit(out, a.out);
  return 0;
}

// -- agent -------------------------------------------------------------------

std::unique_ptr<ModelClient> make_client(const RunConfig& cfg, const std::vector<VqaItem>& manifest) {
  if (cfg.client == "oracle") {
    std::map<std::string, std::string> answers;
    for (const auto& it : manifest) answers[it.item_id] = std::string(1, static_cast<char>('A' + it.answer_index));
    return std::make_unique<OracleClient>(std::move(answers), cfg.visual_turns);
  }
  if (cfg.client == "random") return std::make_unique<RandomClient>(cfg.seed);
  if (cfg.client == "canned") {
    require_paths(cfg, {"fixture"});
    const auto j = json::parse(read_file(cfg.fixture), nullptr, false);
    if (j.is_discarded()) throw Error(Errc::ConfigError, "canned fixture is not valid JSON: " + cfg.fixture.string());
    return std::make_unique<CannedClient>(j);
  }
  if (cfg.endpoint.empty()) throw Error(Errc::ConfigError, "client http needs an endpoint");
  HttpClientOptions o;
  o.url = cfg.endpoint;
  o.model = cfg.model;
  o.token_env = cfg.token_env;
  return std::make_unique<HttpClient>(o);
}

std::string transcript_name(const std::string& item_id) {
  std::string s = item_id;
  for (auto& ch : s) {
    if (ch == '/' || ch == '\\') ch = '_';
  }
  return s + ".json";
}

struct AgentArgs {
  std::vector<std::string> items;
  std::size_t limit = 0;
  bool timing = false;
};

int cmd_agent(const Common& common, const AgentArgs& a) {
  const RunConfig cfg = resolve(common);
  require_paths(cfg, {"manifest", "catalog"});
  auto manifest = load_manifest(cfg.manifest);
  if (!a.items.empty()) {
    std::set<std::string> keep(a.items.begin(), a.items.end());
    std::erase_if(manifest, [&](const VqaItem& it) { return !keep.count(it.item_id); });
  }
  if (a.limit && manifest.size() > a.limit) manifest.resize(a.limit);
  const auto cases = load_catalog(cfg.catalog);
  std::map<std::string, const CaseEntry*> by_id;
  for (const auto& c : cases) by_id[c.case_id] = &c;
  auto client = make_client(cfg, manifest);
  std::optional<TextEmbedding> prompt;
  if (!cfg.prompt.empty()) {
    require_paths(cfg, {"prompt"});
    prompt = read_text_embedding(cfg.prompt);
  }

  // Case-level parallelism: every worker takes whole cases.
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < manifest.size(); ++i) groups[manifest[i].case_id].push_back(i);
  std::vector<std::vector<std::size_t>> work;
  for (auto& [_, g] : groups) work.push_back(std::move(g));

  const fs::path tdir = cfg.output_dir / "transcripts";
  fs::create_directories(tdir);
  std::vector<AnswerRecord> answers(manifest.size());
  std::atomic<std::size_t> next{0};
  const RouterMode router = cfg.router == "separate" ? RouterMode::SeparateCall : RouterMode::SameResponse;

  auto run_item = [&](const VqaItem& it, const CaseVoxels* v, const std::string& load_error) {
    AnswerRecord rec;
    rec.item_id = it.item_id;
    SessionTranscript tr;
    tr.session_id = it.item_id;
    tr.item_id = it.item_id;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (!v) throw Error(Errc::IoError, load_error);
      InitResult init = init_memory(v->organs, v->hu, cfg.organs);
      const BinaryMask organ = organ_mask(v->organs, it.organ);
      const auto* entry = by_id.at(it.case_id);
      if (prompt && entry->features && fs::exists(*entry->features)) {
        try {
          run_targeting(read_feature_field(*entry->features), *prompt, organ, CfltOptions{cfg.tau, cfg.top_k},
                        &init.memory);
        } catch (const Error& e) {
          // Targeting is optional evidence; an empty organ range or a
          // mismatched field leaves the memory with organ records only.
          if (e.code() != Errc::NoCandidates && e.code() != Errc::EmptyMask && e.code() != Errc::DimMismatch) throw;
        }
      }
      LoopOptions lo;
      lo.max_turns = cfg.max_turns;
      lo.router = router;
      lo.session_id = it.item_id;
      lo.roi = inplane_box(organ);
      const LabelVolume labels = overlay_labels(*v);
      LoopResult r = run_loop(Question{it.item_id, it.question, it.options, it.organ}, init.memory, v->hu, labels,
                              *client, lo);
      tr = std::move(r.transcript);
      rec.answer = r.final_answer;
      rec.turns = static_cast<int>(tr.turns.size());
      if (tr.error) rec.error = *tr.error;
    } catch (const Error& e) {
      rec.answer = "undetermined";
      rec.error = fmt::format("{}: {}", it.item_id, e.what());
      tr.error = rec.error;
    }
    if (a.timing) {
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    }
    write_file_atomic(tdir / transcript_name(it.item_id), tr.to_json(a.timing).dump(2) + "\n");
    return rec;
  };

  auto worker = [&] {
    for (std::size_t g; (g = next.fetch_add(1)) < work.size();) {
      const auto& idx = work[g];
      const auto& first = manifest[idx.front()];
      std::optional<CaseVoxels> v;
      std::string load_error;
      try {
        auto it = by_id.find(first.case_id);
        if (it == by_id.end()) throw Error(Errc::InvalidArgument, "case not in catalog");
        v = it->second->load();
      } catch (const std::exception& e) {
        load_error = fmt::format("{}: {}", first.case_id, e.what());
      }
      for (auto i : idx) answers[i] = run_item(manifest[i], v ? &*v : nullptr, load_error);
    }
  };
  const int n = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(work.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();

  write_file_atomic(cfg.output_dir / "answers.jsonl", answers_text(answers));
  std::size_t failed = 0;
  for (const auto& r : answers) {
    if (!r.error.empty()) {
      ++failed;
      fmt::print(stderr, "item failed: {}\n", r.error);
    }
  }
  fmt::print("{} items, {} failed; answers in {}\n", answers.size(), failed, (cfg.output_dir / "answers.jsonl").string());
  return failed ? 1 : 0;
}

// -- qagen -------------------------------------------------------------------

int cmd_qagen(const Common& common) {
  const RunConfig cfg = resolve(common);
  const Rules rules = load_rules(cfg);
  const auto cases = catalog_of(cfg);
  Pool pool = generate_pool(cases, rules, cfg.seed, cfg.jobs);
  SamplingPolicy policy;
  policy.per_subtype = cfg.per_subtype;
  policy.per_case_cap = cfg.per_case_cap;
  policy.seed = cfg.seed;
  const SampleResult s = balance_and_sample(pool.items, policy);

  fs::create_directories(cfg.output_dir);
  const fs::path manifest = cfg.output_dir / "manifest.jsonl";
  write_file_atomic(manifest, manifest_text(s.items));
  json report = s.report();
  report["pool_items"] = pool.items.size();
  report["cases"] = cases.size();
  std::map<std::string, std::size_t> skipped;
  for (const auto& sk : pool.skipped) {
    // "<case> <subtype>: <reason>"
    const auto sp = sk.find(' ');
    ++skipped[sk.substr(sp + 1, sk.find(':') - sp - 1)];
  }
  report["skipped_by_subtype"] = skipped;
  write_file_atomic(cfg.output_dir / "balance_report.json", report.dump(2) + "\n");

  std::map<std::string, std::size_t> per;
  for (const auto& it : s.items) ++per[it.subtype];
  for (const auto& info : subtype_registry()) {
    fmt::print("{:<28} {:>5}\n", info.id, per.count(info.id) ? per[info.id] : 0);
  }
  fmt::print("{} items from {} cases -> {}\n", s.items.size(), cases.size(), manifest.string());
  for (const auto& sf : s.shortfalls) {
    fmt::print(stderr, "shortfall: {}{} wanted {} available {}\n", sf.subtype,
               sf.content.empty() ? "" : " [" + sf.content + "]", sf.wanted, sf.available);
  }
  return 0;
}

// -- eval --------------------------------------------------------------------

struct EvalArgs {
  std::vector<std::string> group_by;
  bool assert_rand = false;
  std::size_t trials = 2000;
  double tolerance = 0.03;
  std::string subtype;
};

int cmd_eval(const Common& common, const EvalArgs& a) {
  const RunConfig cfg = resolve(common);
  if (cfg.manifest.empty() || !fs::exists(cfg.manifest)) throw MissingInput("manifest not found: " + cfg.manifest.string());
  auto manifest = load_manifest(cfg.manifest);
  if (!a.subtype.empty()) std::erase_if(manifest, [&](const VqaItem& it) { return it.subtype != a.subtype; });
  fs::create_directories(cfg.output_dir);

  if (a.assert_rand) {
    const auto rows = random_baseline(manifest, cfg.seed, a.trials);
    bool ok = true;
    json j = json::object();
    fmt::print("{:<28} {:>6} {:>9} {:>9}\n", "subtype", "items", "simulated", "analytic");
    for (const auto& [s, r] : rows) {
      const bool pass = std::abs(r.monte_carlo - r.analytic) <= a.tolerance;
      ok = ok && pass;
      fmt::print("{:<28} {:>6} {:>9.4f} {:>9.4f} {}\n", s, r.items, r.monte_carlo, r.analytic, pass ? "ok" : "FAIL");
      j[s] = {{"items", r.items}, {"monte_carlo", r.monte_carlo}, {"analytic", r.analytic}, {"pass", pass}};
    }
    write_file_atomic(cfg.output_dir / "rand_check.json", j.dump(2) + "\n");
    return ok ? 0 : 1;
  }

  if (cfg.answers.empty() || !fs::exists(cfg.answers)) throw MissingInput("answers not found: " + cfg.answers.string());
  std::vector<GroupBy> groups;
  for (const auto& g : a.group_by) {
    if (g == "source") groups.push_back(GroupBy::Source);
    else if (g == "organ") groups.push_back(GroupBy::Organ);
    else if (g == "type") groups.push_back(GroupBy::Type);
    else throw Error(Errc::ConfigError, "--group-by must be source, organ or type");
  }
  const EvalReport report = aggregate(score(load_answers(cfg.answers), manifest), manifest, groups);
  std::cout << report.table();
  write_file_atomic(cfg.output_dir / "eval.json", report.to_json().dump(2) + "\n");
  return 0;
}

// -- synth -------------------------------------------------------------------

int cmd_synth(const Common& common, std::size_t cases, const fs::path& dir) {
  const RunConfig cfg = resolve(common);
  SynthOptions o;
  o.seed = cfg.seed;
  o.cases = cases;
  const auto entries = write_synth_cohort(dir, o);
  fmt::print("{} cases -> {}\n", entries.size(), (dir / "catalog.jsonl").string());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Organ-aware agent tooling for chest CT question answering"};
  app.require_subcommand(1);
  Common common;

  auto* config_cmd = app.add_subcommand("config", "Print the effective configuration");
  add_common(config_cmd, common);

  AnalyzeArgs analyze;
  auto* analyze_cmd = app.add_subcommand("analyze", "Organ records and lesion analytics for one case");
  add_common(analyze_cmd, common);
  analyze_cmd->add_option("--case", analyze.case_id, "Case id from the catalog");
  analyze_cmd->add_option("--ct", analyze.ct, "CT volume (.nii, .nii.gz or raw with sidecar)");
  analyze_cmd->add_option("--organ-mask", analyze.organs, "Organ label volume");
  analyze_cmd->add_option("--lesion-mask", analyze.lesions, "Lesion label volume");
  analyze_cmd->add_option("--organs", analyze.organ_list, "Comma-separated organ list");
  analyze_cmd->add_option("--out", analyze.out, "Output file (stdout by default)");

  TargetArgs target;
  auto* target_cmd = app.add_subcommand("target", "Rank candidate slices by text-conditioned similarity");
  add_common(target_cmd, common);
  target_cmd->add_option("--case", target.case_id, "Case id from the catalog");
  target_cmd->add_option("--features", target.features, "Feature field tensor");
  target_cmd->add_option("--prompt", target.prompt, "Text embedding tensor");
  target_cmd->add_option("--organ", target.organ, "Organ the candidates are restricted to");
  target_cmd->add_option("--organ-mask", target.organ_mask_path, "Organ label volume");
  target_cmd->add_option("--memory", target.memory, "Memory JSON file to append the candidates to");
  target_cmd->add_option("--tau", [&](const std::vector<std::string>& v) {
    common.overrides.push_back("tau=" + v.front());
    return true;
  }, "Heatmap threshold");
  target_cmd->add_option("--top-k", [&](const std::vector<std::string>& v) {
    common.overrides.push_back("top_k=" + v.front());
    return true;
  }, "Candidates to keep");
  target_cmd->add_option("--out", target.out, "Output file (stdout by default)");

  AgentArgs agent;
  auto* agent_cmd = app.add_subcommand("agent", "Run the reasoning loop over a manifest");
  add_common(agent_cmd, common);
  agent_cmd->add_option("--item", agent.items, "Restrict to these item ids");
  agent_cmd->add_option("--limit", agent.limit, "Run at most this many items");
  agent_cmd->add_option("--client", [&](const std::vector<std::string>& v) {
    common.overrides.push_back("client=" + v.front());
    return true;
  }, "canned, oracle, random or http");
  agent_cmd->add_flag("--timing", agent.timing, "Record wall-clock timings");

  auto* qagen_cmd = app.add_subcommand("qagen", "Generate a balanced question manifest");
  add_common(qagen_cmd, common);

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score answers against a manifest");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--group-by", eval.group_by, "source, organ or type (repeatable)");
  eval_cmd->add_flag("--assert-rand", eval.assert_rand, "Check uniform guessing against the analytic baseline");
  eval_cmd->add_option("--trials", eval.trials, "Passes over the manifest for --assert-rand");
  eval_cmd->add_option("--tolerance", eval.tolerance, "Allowed deviation for --assert-rand");
  eval_cmd->add_option("--subtype", eval.subtype, "Restrict to one subtype");

  std::size_t synth_cases = 560;
  fs::path synth_dir = "synth";
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic cohort and its catalog");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--cases", synth_cases, "Number of cases");
  synth_cmd->add_option("--dir", synth_dir, "Destination directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (config_cmd->parsed()) {
      std::cout << serialize_config(resolve(common));
      return 0;
    }
    if (analyze_cmd->parsed()) return cmd_analyze(common, analyze);
    if (target_cmd->parsed()) return cmd_target(common, target);
    if (agent_cmd->parsed()) return cmd_agent(common, agent);
    if (qagen_cmd->parsed()) return cmd_qagen(common);
    if (eval_cmd->parsed()) return cmd_eval(common, eval);
    if (synth_cmd->parsed()) return cmd_synth(common, synth_cases, synth_dir);
  } catch (const MissingInput& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 1;
}
