#pragma once

// Mask- and label-driven multiple-choice question generation with option
// balancing and seeded shuffling.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "medagent/catalog.hpp"
#include "medagent/lesion.hpp"
#include "medagent/rng.hpp"

namespace medagent {

enum class QuestionType { Recognition, VisualReasoning, MedicalReasoning };
std::string type_name(QuestionType t);

struct SubtypeInfo {
  std::string id;
  QuestionType type;
  bool closed;       // fixed semantic option contents
  bool label_only;   // generated from the label set alone
  std::string organ; // organ the question is about
};

/// All 17 subtypes in reporting order.
const std::vector<SubtypeInfo>& subtype_registry();
const SubtypeInfo& subtype_info(const std::string& id);  // throws UnknownSubtype

struct VqaItem {
  std::string item_id;  // "<case_id>/<subtype>"
  std::string case_id;
  std::string source;
  std::string subtype;
  std::string type;  // question type name
  std::string question;
  std::vector<std::string> options;
  int answer_index = 0;
  std::string organ;
  std::string rule;           // generator rule id
  nlohmann::json values;      // measured values the truth derives from
  double priority = 0.0;      // typicality; higher is preferred when sampling

  const std::string& answer() const { return options.at(static_cast<std::size_t>(answer_index)); }
  bool operator==(const VqaItem&) const = default;
};

nlohmann::json item_to_json(const VqaItem& it);
VqaItem item_from_json(const nlohmann::json& j);
std::string manifest_text(const std::vector<VqaItem>& items);
std::vector<VqaItem> parse_manifest(const std::string& text);
std::vector<VqaItem> load_manifest(const std::filesystem::path& path);

// -- rule tables -----------------------------------------------------------

struct PhenotypeRule {
  std::string name;
  std::set<std::string> key;
  std::set<std::string> disallowed;
  std::set<std::string> extras;  // informational: tolerated co-findings
};

enum class DistractorPolicy { Multiplicative, Count };

struct GradingRule {
  bool quantile = true;         // calibrate equal-population bins on the cohort
  std::vector<double> cutoffs;  // fixed mode, and the fallback for small cohorts
  std::vector<std::string> labels;
};

struct Rules {
  std::map<std::string, std::string> region_of;  // finding label -> region
  std::vector<PhenotypeRule> phenotypes;
  std::map<std::string, DistractorPolicy> distractors;
  std::vector<double> multipliers = {0.5, 2.0, 4.0};
  GradingRule emphysema{true, {0.05, 0.15}, {"mild", "moderate", "severe"}};
  GradingRule effusion{true, {0.02, 0.10}, {"small", "moderate", "large"}};
  std::vector<double> hu_cutoffs = {0.0, 400.0, 800.0};
  std::vector<std::string> nodule_labels = {"lung nodule", "lung mass"};
  std::vector<std::string> ggo_labels = {"ground glass opacity"};
  std::vector<std::string> consolidation_labels = {"consolidation"};
  std::vector<std::string> opacity_labels = {"atelectasis", "consolidation", "lung opacity", "ground glass opacity"};
  std::string emphysema_label = "emphysema";
  std::string effusion_label = "pleural effusion";
  double attenuation_margin = 0.20;
  std::pair<double, double> hu_ggo = {-750.0, -350.0};
  std::pair<double, double> hu_consolidation = {-350.0, 100.0};
  double volume_loss_margin = 0.10;
  double enlargement_percentile = 0.90;
  double atrophy_percentile = 0.10;
  std::size_t min_cohort = 30;
  double min_lesion_ml = kDefaultMinLesionMl;
  Connectivity connectivity = Connectivity::TwentySix;

  std::set<std::string> regions() const;
  /// Throws ConfigError for phenotype key sets that nest, and UnknownRegion
  /// for labels mapped to an empty region.
  void validate() const;
  /// Throws UnknownRegion for labels outside the map.
  void check_labels(const std::vector<std::string>& labels) const;
};

/// Illustrative defaults, not a canonical clinical definition.
const char* default_rules_text();
Rules parse_rules(const std::string& text);
Rules default_rules();
std::string format_rules(const Rules& r);

// -- single-item generators ------------------------------------------------

inline const std::vector<std::string> kYesNo = {"yes", "no"};
inline const std::vector<std::string> kAttenuationOptions = {"GGO-dominant", "consolidation-dominant", "mixed"};
inline const std::vector<std::string> kVolumeLossOptions = {"volume-loss dominant", "no significant volume loss"};
inline const std::vector<double> kSlicePercentOptions = {12.5, 37.5, 62.5, 87.5};

std::vector<std::string> hu_bin_labels(const std::vector<double>& cutoffs);
std::string format_percent(double p);
std::string format_mm(double mm);

/// Options in seeded order with the answer tracked.
struct Mcq {
  std::vector<std::string> options;
  int answer_index = 0;
  bool fallback = false;  // additive distractors replaced colliding ones
};

/// Shuffles `contents` and locates `truth` in the result.
Mcq closed_mcq(const std::vector<std::string>& contents, const std::string& truth, Rng& rng);

/// Truth plus three distractors. Multiplicative sizes use the multipliers
/// and fall back to additive offsets when formatted values collide; counts
/// use t+1, t-1, t+2, t-2, ... skipping negatives.
Mcq gen_numeric_mcq(double truth, DistractorPolicy policy, Rng& rng, const std::vector<double>& multipliers = {0.5, 2.0, 4.0});

/// Label-only existence rule for a region. Throws UnknownRegion.
bool region_present(const std::vector<std::string>& labels, const Rules& rules, const std::string& region);

struct PhenotypeEval {
  std::vector<std::string> active;    // any key label present
  std::vector<std::string> matching;  // key present and nothing disallowed
  int key_hits = 0;
};
PhenotypeEval evaluate_phenotypes(const std::vector<std::string>& labels, const Rules& rules);

std::string attenuation_truth(double ggo, double consolidation, double margin);

/// Measurements a case contributes to mask-based subtypes.
struct CaseMeasurements {
  std::string case_id;
  std::optional<double> lung_ml, left_ml, right_ml;
  bool has_lesion = false;
  double largest_ml = 0.0, diameter_mm = 0.0, slice_percentile = 0.0;
  std::string largest_region;
  std::optional<double> delta_hu;
  std::size_t nodule_count = 0;
  std::map<std::string, std::size_t> nodules_by_lobe;
  double ggo_ml = 0.0, consolidation_ml = 0.0;
  double ggo_hu_ml = 0.0, consolidation_hu_ml = 0.0;
  double opacity_left_ml = 0.0, opacity_right_ml = 0.0;
  std::optional<double> emphysema_index, effusion_ratio;
};

CaseMeasurements measure_case(const std::string& case_id, const CaseVoxels& v, const Rules& rules);

struct Cohort {
  std::vector<double> lung_ml;
  std::vector<double> side_ratio;  // left / right lung volume
  std::vector<double> emphysema_index;
  std::vector<double> effusion_ratio;
};

Cohort build_cohort(const std::vector<CaseMeasurements>& ms);

struct CaseItems {
  std::vector<VqaItem> items;
  std::vector<std::string> skipped;  // "<subtype>: <reason>"
};

/// Label-only subtypes for a case; never touches voxels.
CaseItems generate_label_items(const CaseEntry& c, const Rules& rules, std::uint64_t seed);
/// Mask-based subtypes from precomputed measurements.
CaseItems generate_measured_items(const CaseEntry& c, const CaseMeasurements& m, const Cohort& cohort,
                                  const Rules& rules, std::uint64_t seed);

struct Pool {
  std::vector<VqaItem> items;
  std::vector<std::string> skipped;
  Cohort cohort;
};

/// Measures every case (in parallel with `jobs` workers), then generates all
/// subtypes. The result does not depend on `jobs`.
Pool generate_pool(const std::vector<CaseEntry>& cases, const Rules& rules, std::uint64_t seed, int jobs = 1);

// -- sampling ----------------------------------------------------------------

struct SamplingPolicy {
  std::size_t per_subtype = 60;
  std::map<std::string, std::size_t> per_subtype_override;
  std::size_t per_case_cap = 17;
  std::uint64_t seed = 0;
};

struct Shortfall {
  std::string subtype;
  std::string content;  // empty for open subtypes
  std::size_t wanted = 0;
  std::size_t available = 0;
};

struct SampleResult {
  std::vector<VqaItem> items;
  std::vector<Shortfall> shortfalls;
  nlohmann::json report() const;
};

/// Keeps one item per (case, subtype), at most per_case_cap per case, fills
/// sources round-robin and balances closed subtypes by option content (counts
/// differ by at most one). When supply is short the balanced achievable
/// subset is emitted and the shortfall reported.
SampleResult balance_and_sample(std::vector<VqaItem> pool, const SamplingPolicy& policy);

/// Re-derives the item's answer from its recorded values. Returns an empty
/// string when consistent, otherwise a description of the mismatch.
std::string audit_item(const VqaItem& item, const Rules& rules);

}  // namespace medagent
