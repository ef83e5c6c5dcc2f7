#pragma once

// Scoring of model answers against a manifest, per-subtype/type/group
// aggregation, random baselines and option-position uniformity.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "medagent/qagen.hpp"

namespace medagent {

/// Leading option letter (A-E, optionally bracketed or followed by
/// punctuation) within range, else the longest option text contained
/// case-insensitively at word boundaries (lowest index on ties), else nullopt.
std::optional<int> parse_answer(const std::string& raw, const std::vector<std::string>& options);

/// One model answer as written by the agent command.
struct AnswerRecord {
  std::string item_id;
  std::string answer;  // raw final answer text
  int turns = 0;
  double wall_ms = 0.0;
  std::string error;  // empty when the session completed
};

nlohmann::json answer_to_json(const AnswerRecord& a);
AnswerRecord answer_from_json(const nlohmann::json& j);
std::vector<AnswerRecord> load_answers(const std::filesystem::path& path);
std::string answers_text(const std::vector<AnswerRecord>& answers);

struct EvalRecord {
  std::string item_id;
  std::string case_id;
  std::string subtype;
  std::optional<int> predicted;  // nullopt = invalid
  bool correct = false;
  int turns = 0;
  double wall_ms = 0.0;
};

/// Joins answers to manifest items by item id. Throws UnknownSubtype for
/// answers naming items that are not in the manifest.
std::vector<EvalRecord> score(const std::vector<AnswerRecord>& answers, const std::vector<VqaItem>& manifest);

struct Accuracy {
  std::size_t n = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double rand = 0.0;  // mean of 1/|options|
};

struct EvalReport {
  std::map<std::string, Accuracy> subtypes;
  std::map<std::string, std::string> subtype_type;
  std::map<std::string, double> type_average;  // macro over subtypes
  std::map<std::string, double> type_rand;
  double total_macro_subtypes = 0.0;
  double total_macro_types = 0.0;
  std::size_t invalid = 0;
  std::map<std::string, std::map<std::string, Accuracy>> groups;  // dimension -> value -> item accuracy

  nlohmann::json to_json() const;
  std::string table() const;
};

double macro_average(const std::vector<double>& values);

enum class GroupBy { Source, Organ, Type };

/// Accuracy per subtype, macro averages per type and overall (both over
/// subtypes and over types), plus optional item-level groupings. Records are
/// sorted first, so the result does not depend on their order.
EvalReport aggregate(std::vector<EvalRecord> records, const std::vector<VqaItem>& manifest,
                     const std::vector<GroupBy>& group_by = {});

struct BaselineRow {
  double monte_carlo = 0.0;
  double analytic = 0.0;
  std::size_t items = 0;
};

/// Uniform guessing over the manifest, `trials` passes.
std::map<std::string, BaselineRow> random_baseline(const std::vector<VqaItem>& manifest, std::uint64_t seed,
                                                   std::size_t trials);

struct Uniformity {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  std::size_t n = 0;
};

/// Pearson chi-squared test that answer positions are uniform, summed over
/// strata of equal option count.
Uniformity answer_position_uniformity(const std::vector<VqaItem>& items);

}  // namespace medagent
