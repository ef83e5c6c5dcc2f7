#include "medagent/eval.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <regex>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>

#include "medagent/error.hpp"
#include "medagent/rng.hpp"
#include "medagent/util.hpp"

namespace medagent {

namespace {

bool word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

bool contains_word(const std::string& hay, const std::string& needle) {
  if (needle.empty()) return false;
  for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    const bool left_ok = pos == 0 || !word_char(hay[pos - 1]) || !word_char(needle.front());
    const auto end = pos + needle.size();
    const bool right_ok = end == hay.size() || !word_char(hay[end]) || !word_char(needle.back());
    if (left_ok && right_ok) return true;
  }
  return false;
}

}  // namespace

std::optional<int> parse_answer(const std::string& raw, const std::vector<std::string>& options) {
  if (options.empty()) return std::nullopt;
  static const std::regex kLetter(R"(^\s*(?:answer\s*(?:is)?\s*[:=]?\s*)?[\(\[]?([A-E])(?:[\)\]\.:,]|\s|$))",
                                  std::regex::icase);
  std::smatch m;
  if (std::regex_search(raw, m, kLetter)) {
    const char c = m[1].str()[0];
    if (std::isupper(static_cast<unsigned char>(c))) {
      const int idx = c - 'A';
      if (idx < static_cast<int>(options.size())) return idx;
    }
  }
  const std::string hay = to_lower(raw);
  std::optional<int> best;
  for (std::size_t i = 0; i < options.size(); ++i) {
    const auto opt = to_lower(trim(options[i]));
    if (!contains_word(hay, opt)) continue;
    if (!best || opt.size() > trim(options[static_cast<std::size_t>(*best)]).size()) best = static_cast<int>(i);
  }
  return best;
}

nlohmann::json answer_to_json(const AnswerRecord& a) {
  nlohmann::json j = {{"item_id", a.item_id}, {"answer", a.answer}, {"turns", a.turns}, {"wall_ms", a.wall_ms}};
  if (!a.error.empty()) j["error"] = a.error;
  return j;
}

AnswerRecord answer_from_json(const nlohmann::json& j) {
  AnswerRecord a;
  try {
    a.item_id = j.at("item_id").get<std::string>();
    a.answer = j.value("answer", "");
    a.turns = j.value("turns", 0);
    a.wall_ms = j.value("wall_ms", 0.0);
    a.error = j.value("error", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("answer record: ") + e.what());
  }
  return a;
}

std::vector<AnswerRecord> load_answers(const std::filesystem::path& path) {
  std::vector<AnswerRecord> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::ConfigError, fmt::format("{}:{}: invalid JSON", path.string(), lineno));
    out.push_back(answer_from_json(j));
  }
  return out;
}

std::string answers_text(const std::vector<AnswerRecord>& answers) {
  std::string out;
  for (const auto& a : answers) out += answer_to_json(a).dump() + "\n";
  return out;
}

std::vector<EvalRecord> score(const std::vector<AnswerRecord>& answers, const std::vector<VqaItem>& manifest) {
  std::map<std::string, const VqaItem*> by_id;
  for (const auto& it : manifest) by_id[it.item_id] = &it;
  std::vector<EvalRecord> out;
  for (const auto& a : answers) {
    auto found = by_id.find(a.item_id);
    if (found == by_id.end()) throw Error(Errc::UnknownSubtype, "answer for item not in manifest: " + a.item_id);
    const VqaItem& it = *found->second;
    EvalRecord r;
    r.item_id = it.item_id;
    r.case_id = it.case_id;
    r.subtype = it.subtype;
    r.predicted = a.error.empty() ? parse_answer(a.answer, it.options) : std::nullopt;
    r.correct = r.predicted && *r.predicted == it.answer_index;
    r.turns = a.turns;
    r.wall_ms = a.wall_ms;
    out.push_back(std::move(r));
  }
  return out;
}

double macro_average(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

EvalReport aggregate(std::vector<EvalRecord> records, const std::vector<VqaItem>& manifest,
                     const std::vector<GroupBy>& group_by) {
  std::sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
    return std::tie(a.case_id, a.subtype, a.item_id) < std::tie(b.case_id, b.subtype, b.item_id);
  });
  std::map<std::string, const VqaItem*> by_id;
  for (const auto& it : manifest) by_id[it.item_id] = &it;

  EvalReport rep;
  for (const auto& r : records) {
    auto found = by_id.find(r.item_id);
    if (found == by_id.end() || found->second->subtype != r.subtype) {
      throw Error(Errc::UnknownSubtype, fmt::format("record {} ({}) is not in the manifest", r.item_id, r.subtype));
    }
    const VqaItem& it = *found->second;
    auto& acc = rep.subtypes[it.subtype];
    ++acc.n;
    acc.correct += r.correct;
    acc.rand += 1.0 / static_cast<double>(it.options.size());
    rep.subtype_type[it.subtype] = it.type;
    rep.invalid += !r.predicted;
    for (GroupBy g : group_by) {
      const std::string dim = g == GroupBy::Source ? "source" : g == GroupBy::Organ ? "organ" : "type";
      const std::string key = g == GroupBy::Source ? it.source : g == GroupBy::Organ ? it.organ : it.type;
      auto& ga = rep.groups[dim][key];
      ++ga.n;
      ga.correct += r.correct;
      ga.rand += 1.0 / static_cast<double>(it.options.size());
    }
  }
  auto finish = [](Accuracy& a) {
    a.accuracy = a.n ? static_cast<double>(a.correct) / static_cast<double>(a.n) : 0.0;
    a.rand = a.n ? a.rand / static_cast<double>(a.n) : 0.0;
  };
  for (auto& [s, a] : rep.subtypes) finish(a);
  for (auto& [d, m] : rep.groups) {
    for (auto& [k, a] : m) finish(a);
  }

  std::map<std::string, std::vector<double>> per_type, per_type_rand;
  std::vector<double> all;
  for (const auto& [s, a] : rep.subtypes) {
    per_type[rep.subtype_type[s]].push_back(a.accuracy);
    per_type_rand[rep.subtype_type[s]].push_back(a.rand);
    all.push_back(a.accuracy);
  }
  std::vector<double> types;
  for (const auto& [t, v] : per_type) {
    rep.type_average[t] = macro_average(v);
    rep.type_rand[t] = macro_average(per_type_rand[t]);
    types.push_back(rep.type_average[t]);
  }
  rep.total_macro_subtypes = macro_average(all);
  rep.total_macro_types = macro_average(types);
  return rep;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  for (const auto& [s, a] : subtypes) {
    j["subtypes"][s] = {{"type", subtype_type.at(s)}, {"n", a.n}, {"correct", a.correct}, {"accuracy", a.accuracy},
                        {"rand", a.rand}};
  }
  for (const auto& [t, v] : type_average) j["types"][t] = {{"average", v}, {"rand", type_rand.at(t)}};
  j["total"] = {{"macro_over_subtypes", total_macro_subtypes}, {"macro_over_types", total_macro_types}};
  j["invalid"] = invalid;
  for (const auto& [d, m] : groups) {
    for (const auto& [k, a] : m) j["groups"][d][k] = {{"n", a.n}, {"accuracy", a.accuracy}, {"rand", a.rand}};
  }
  return j;
}

std::string EvalReport::table() const {
  std::string out = fmt::format("{:<20} {:<30} {:>6} {:>6} {:>8}\n", "type", "subtype", "n", "rand", "acc");
  std::map<std::string, std::vector<std::string>> by_type;
  for (const auto& [s, t] : subtype_type) by_type[t].push_back(s);
  for (const auto& [t, subs] : by_type) {
    for (const auto& s : subs) {
      const auto& a = subtypes.at(s);
      out += fmt::format("{:<20} {:<30} {:>6} {:>6.2f} {:>8.2f}\n", t, s, a.n, a.rand, a.accuracy);
    }
    out += fmt::format("{:<20} {:<30} {:>6} {:>6.2f} {:>8.2f}\n", t, "average", "", type_rand.at(t), type_average.at(t));
  }
  out += fmt::format("total (macro over subtypes) {:.4f}\n", total_macro_subtypes);
  out += fmt::format("total (macro over types)    {:.4f}\n", total_macro_types);
  out += fmt::format("invalid answers {}\n", invalid);
  for (const auto& [d, m] : groups) {
    out += fmt::format("\n{:<20} {:>6} {:>6} {:>8}\n", d, "n", "rand", "acc");
    for (const auto& [k, a] : m) out += fmt::format("{:<20} {:>6} {:>6.2f} {:>8.2f}\n", k, a.n, a.rand, a.accuracy);
  }
  return out;
}

std::map<std::string, BaselineRow> random_baseline(const std::vector<VqaItem>& manifest, std::uint64_t seed,
                                                   std::size_t trials) {
  if (trials < 1) throw Error(Errc::InvalidArgument, "trials must be >= 1");
  std::map<std::string, BaselineRow> rows;
  std::map<std::string, std::size_t> hits;
  auto rng = Rng::stream(seed, "random-baseline");
  for (std::size_t t = 0; t < trials; ++t) {
    for (const auto& it : manifest) {
      if (rng.below(it.options.size()) == static_cast<std::uint64_t>(it.answer_index)) ++hits[it.subtype];
    }
  }
  for (const auto& it : manifest) {
    auto& r = rows[it.subtype];
    ++r.items;
    r.analytic += 1.0 / static_cast<double>(it.options.size());
  }
  for (auto& [s, r] : rows) {
    r.analytic /= static_cast<double>(r.items);
    r.monte_carlo = static_cast<double>(hits[s]) / static_cast<double>(r.items * trials);
  }
  return rows;
}

Uniformity answer_position_uniformity(const std::vector<VqaItem>& items) {
  std::map<std::size_t, std::vector<std::size_t>> strata;
  for (const auto& it : items) {
    auto& c = strata[it.options.size()];
    c.resize(it.options.size(), 0);
    ++c[static_cast<std::size_t>(it.answer_index)];
  }
  Uniformity u;
  for (const auto& [k, counts] : strata) {
    if (k < 2) continue;
    const double n = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    const double expected = n / static_cast<double>(k);
    for (auto c : counts) u.statistic += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
    u.dof += static_cast<int>(k) - 1;
    u.n += static_cast<std::size_t>(n);
  }
  if (u.dof > 0) {
    boost::math::chi_squared dist(u.dof);
    u.p_value = boost::math::cdf(boost::math::complement(dist, u.statistic));
  }
  return u;
}

}  // namespace medagent
