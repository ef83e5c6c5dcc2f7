#include <algorithm>
#include <sstream>

#include <fmt/format.h>

#include "medagent/error.hpp"
#include "medagent/qagen.hpp"
#include "medagent/util.hpp"

namespace medagent {

std::string type_name(QuestionType t) {
  switch (t) {
    case QuestionType::Recognition: return "recognition";
    case QuestionType::VisualReasoning: return "visual_reasoning";
    case QuestionType::MedicalReasoning: return "medical_reasoning";
  }
  return "unknown";
}

const std::vector<SubtypeInfo>& subtype_registry() {
  using Q = QuestionType;
  static const std::vector<SubtypeInfo> kRegistry = {
      {"bronchus_lesion_existence", Q::Recognition, true, true, "airway"},
      {"lung_lesion_existence", Q::Recognition, true, true, "lung"},
      {"pleura_lesion_existence", Q::Recognition, true, true, "pleura"},
      {"largest_lesion_diameter", Q::VisualReasoning, false, false, "lung"},
      {"largest_lesion_location", Q::VisualReasoning, true, false, "lung"},
      {"largest_lesion_slice", Q::VisualReasoning, true, false, "lung"},
      {"lesion_count_by_location", Q::VisualReasoning, false, false, "lung"},
      {"lesion_counting", Q::VisualReasoning, false, false, "lung"},
      {"organ_enlargement", Q::VisualReasoning, true, false, "lung"},
      {"organ_atrophy", Q::VisualReasoning, true, false, "lung"},
      {"lesion_organ_hu_difference", Q::VisualReasoning, true, false, "lung"},
      {"attenuation_pattern", Q::MedicalReasoning, true, false, "lung"},
      {"volume_loss", Q::MedicalReasoning, true, false, "lung"},
      {"imaging_phenotype", Q::MedicalReasoning, true, true, "lung"},
      {"phenotype_mixing", Q::MedicalReasoning, true, true, "lung"},
      {"emphysema_grading", Q::MedicalReasoning, true, false, "lung"},
      {"effusion_grading", Q::MedicalReasoning, true, false, "pleura"},
  };
  return kRegistry;
}

const SubtypeInfo& subtype_info(const std::string& id) {
  for (const auto& s : subtype_registry()) {
    if (s.id == id) return s;
  }
  throw Error(Errc::UnknownSubtype, "unknown subtype '" + id + "'");
}

const char* default_rules_text() {
  return R"(# Question generation rules. Illustrative defaults, not a clinical standard.
#
#   region <finding label> = <anatomical region>
#   phenotype <name> key|disallow|extras = <label>, <label>, ...
#   distractor <subtype> = multiplicative | count
#   setting <name> = <value>

region arterial wall calcification = mediastinum
region atelectasis = lung
region bronchiectasis = bronchus
region cardiomegaly = heart
region consolidation = lung
region coronary artery wall calcification = heart
region emphysema = lung
region ground glass opacity = lung
region hiatal hernia = mediastinum
region interlobular septal thickening = lung
region lung mass = lung
region lung nodule = lung
region lung opacity = lung
region lymphadenopathy = mediastinum
region medical material = other
region mosaic attenuation pattern = lung
region peribronchial thickening = bronchus
region pericardial effusion = heart
region pleural effusion = pleura
region pulmonary fibrotic sequela = lung

phenotype obstructive/airway key = emphysema, bronchiectasis, peribronchial thickening, mosaic attenuation pattern
phenotype obstructive/airway disallow = pulmonary fibrotic sequela, interlobular septal thickening, consolidation, lung opacity, ground glass opacity, lung nodule, lung mass, pleural effusion
phenotype obstructive/airway extras = cardiomegaly, arterial wall calcification, coronary artery wall calcification, hiatal hernia, medical material
phenotype fibrotic/interstitial key = pulmonary fibrotic sequela, interlobular septal thickening
phenotype fibrotic/interstitial disallow = emphysema, bronchiectasis, peribronchial thickening, mosaic attenuation pattern, consolidation, lung opacity, ground glass opacity, lung nodule, lung mass, pleural effusion
phenotype fibrotic/interstitial extras = cardiomegaly, arterial wall calcification, coronary artery wall calcification, hiatal hernia, medical material
phenotype alveolar opacity key = consolidation, lung opacity, ground glass opacity
phenotype alveolar opacity disallow = emphysema, bronchiectasis, peribronchial thickening, mosaic attenuation pattern, pulmonary fibrotic sequela, interlobular septal thickening, lung nodule, lung mass, pleural effusion
phenotype alveolar opacity extras = atelectasis, cardiomegaly, lymphadenopathy, medical material
phenotype focal/peripheral key = lung nodule, lung mass, pleural effusion
phenotype focal/peripheral disallow = emphysema, bronchiectasis, peribronchial thickening, mosaic attenuation pattern, pulmonary fibrotic sequela, interlobular septal thickening, consolidation, lung opacity, ground glass opacity
phenotype focal/peripheral extras = atelectasis, lymphadenopathy, cardiomegaly, medical material

distractor largest_lesion_diameter = multiplicative
distractor lesion_counting = count
distractor lesion_count_by_location = count

setting multipliers = 0.5, 2, 4
setting emphysema_grading = quantile 0.05, 0.15
setting emphysema_labels = mild, moderate, severe
setting effusion_grading = quantile 0.02, 0.1
setting effusion_labels = small, moderate, large
setting hu_cutoffs = 0, 400, 800
setting nodule_labels = lung nodule, lung mass
setting ggo_labels = ground glass opacity
setting consolidation_labels = consolidation
setting opacity_labels = atelectasis, consolidation, lung opacity, ground glass opacity
setting emphysema_label = emphysema
setting effusion_label = pleural effusion
setting attenuation_margin = 0.20
setting hu_ggo = -750, -350
setting hu_consolidation = -350, 100
setting volume_loss_margin = 0.10
setting enlargement_percentile = 0.90
setting atrophy_percentile = 0.10
setting min_cohort = 30
setting min_lesion_ml = 0.01
setting connectivity = 26
)";
}

namespace {

std::vector<double> parse_doubles(const std::string& s, const std::string& where) {
  std::vector<double> out;
  for (const auto& p : split_list(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(p, &used));
      if (used != p.size()) throw std::invalid_argument(p);
    } catch (const std::logic_error&) {
      throw Error(Errc::ConfigError, where + ": not a number: " + p);
    }
  }
  return out;
}

std::pair<double, double> parse_pair(const std::string& s, const std::string& where) {
  const auto v = parse_doubles(s, where);
  if (v.size() != 2 || !(v[0] < v[1])) throw Error(Errc::ConfigError, where + ": expected 'low, high'");
  return {v[0], v[1]};
}

GradingRule parse_grading(const std::string& s, std::vector<std::string> labels, const std::string& where) {
  GradingRule g;
  g.labels = std::move(labels);
  const auto t = trim(s);
  if (t.rfind("quantile", 0) == 0) {
    g.quantile = true;
    g.cutoffs = parse_doubles(t.substr(8), where);
  } else if (t.rfind("fixed", 0) == 0) {
    g.cutoffs = parse_doubles(t.substr(5), where);
  } else {
    throw Error(Errc::ConfigError, where + ": expected 'quantile <fallback cutoffs>' or 'fixed <cutoffs>'");
  }
  return g;
}

std::string list_text(const std::vector<double>& v) {
  std::vector<std::string> parts;
  for (double d : v) parts.push_back(fmt::format("{}", d));
  return join(parts, ", ");
}

std::string list_text(const std::set<std::string>& v) { return join({v.begin(), v.end()}, ", "); }

}  // namespace

Rules parse_rules(const std::string& text) {
  Rules r;
  r.distractors.clear();
  std::map<std::string, PhenotypeRule> phen;
  std::vector<std::string> phen_order;
  std::string emph_grading = "quantile 0.05, 0.15", eff_grading = "quantile 0.02, 0.1";
  std::vector<std::string> emph_labels = r.emphysema.labels, eff_labels = r.effusion.labels;

  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = fmt::format("rules line {}", lineno);
    const auto eq = line.find('=');
    const auto sp = line.find(' ');
    if (eq == std::string::npos || sp == std::string::npos || sp > eq) {
      throw Error(Errc::ConfigError, where + ": expected '<section> <name> = <value>'");
    }
    const auto section = line.substr(0, sp);
    const auto name = trim(std::string_view(line).substr(sp + 1, eq - sp - 1));
    const auto value = trim(std::string_view(line).substr(eq + 1));
    if (name.empty()) throw Error(Errc::ConfigError, where + ": missing name");

    if (section == "region") {
      r.region_of[to_lower(name)] = to_lower(value);
    } else if (section == "phenotype") {
      const auto last = name.rfind(' ');
      if (last == std::string::npos) throw Error(Errc::ConfigError, where + ": expected 'phenotype <name> key|disallow|extras'");
      const auto pname = trim(std::string_view(name).substr(0, last));
      const auto field = name.substr(last + 1);
      if (!phen.count(pname)) phen_order.push_back(pname);
      auto& rule = phen[pname];
      rule.name = pname;
      std::set<std::string> labels;
      for (const auto& l : split_list(value)) labels.insert(to_lower(l));
      if (field == "key") {
        rule.key = labels;
      } else if (field == "disallow") {
        rule.disallowed = labels;
      } else if (field == "extras") {
        rule.extras = labels;
      } else {
        throw Error(Errc::ConfigError, where + ": unknown phenotype field '" + field + "'");
      }
    } else if (section == "distractor") {
      subtype_info(name);
      if (value == "multiplicative") {
        r.distractors[name] = DistractorPolicy::Multiplicative;
      } else if (value == "count") {
        r.distractors[name] = DistractorPolicy::Count;
      } else {
        throw Error(Errc::ConfigError, where + ": unknown distractor policy '" + value + "'");
      }
    } else if (section == "setting") {
      if (name == "multipliers") {
        r.multipliers = parse_doubles(value, where);
        if (r.multipliers.size() != 3) throw Error(Errc::ConfigError, where + ": need three multipliers");
      } else if (name == "emphysema_grading") {
        emph_grading = value;
      } else if (name == "emphysema_labels") {
        emph_labels = split_list(value);
      } else if (name == "effusion_grading") {
        eff_grading = value;
      } else if (name == "effusion_labels") {
        eff_labels = split_list(value);
      } else if (name == "hu_cutoffs") {
        r.hu_cutoffs = parse_doubles(value, where);
      } else if (name == "nodule_labels") {
        r.nodule_labels = split_list(value);
      } else if (name == "ggo_labels") {
        r.ggo_labels = split_list(value);
      } else if (name == "consolidation_labels") {
        r.consolidation_labels = split_list(value);
      } else if (name == "opacity_labels") {
        r.opacity_labels = split_list(value);
      } else if (name == "emphysema_label") {
        r.emphysema_label = value;
      } else if (name == "effusion_label") {
        r.effusion_label = value;
      } else if (name == "attenuation_margin") {
        r.attenuation_margin = parse_doubles(value, where).at(0);
      } else if (name == "hu_ggo") {
        r.hu_ggo = parse_pair(value, where);
      } else if (name == "hu_consolidation") {
        r.hu_consolidation = parse_pair(value, where);
      } else if (name == "volume_loss_margin") {
        r.volume_loss_margin = parse_doubles(value, where).at(0);
      } else if (name == "enlargement_percentile") {
        r.enlargement_percentile = parse_doubles(value, where).at(0);
      } else if (name == "atrophy_percentile") {
        r.atrophy_percentile = parse_doubles(value, where).at(0);
      } else if (name == "min_cohort") {
        r.min_cohort = static_cast<std::size_t>(parse_doubles(value, where).at(0));
      } else if (name == "min_lesion_ml") {
        r.min_lesion_ml = parse_doubles(value, where).at(0);
      } else if (name == "connectivity") {
        if (value == "6") {
          r.connectivity = Connectivity::Six;
        } else if (value == "26") {
          r.connectivity = Connectivity::TwentySix;
        } else {
          throw Error(Errc::ConfigError, where + ": connectivity must be 6 or 26");
        }
      } else {
        throw Error(Errc::ConfigError, where + ": unknown setting '" + name + "'");
      }
    } else {
      throw Error(Errc::ConfigError, where + ": unknown section '" + section + "'");
    }
  }
  for (const auto& n : phen_order) r.phenotypes.push_back(phen[n]);
  r.emphysema = parse_grading(emph_grading, emph_labels, "emphysema_grading");
  r.effusion = parse_grading(eff_grading, eff_labels, "effusion_grading");
  r.validate();
  return r;
}

Rules default_rules() { return parse_rules(default_rules_text()); }

std::string format_rules(const Rules& r) {
  std::string out;
  for (const auto& [label, region] : r.region_of) out += fmt::format("region {} = {}\n", label, region);
  for (const auto& p : r.phenotypes) {
    out += fmt::format("phenotype {} key = {}\n", p.name, list_text(p.key));
    if (!p.disallowed.empty()) out += fmt::format("phenotype {} disallow = {}\n", p.name, list_text(p.disallowed));
    if (!p.extras.empty()) out += fmt::format("phenotype {} extras = {}\n", p.name, list_text(p.extras));
  }
  for (const auto& [sub, pol] : r.distractors) {
    out += fmt::format("distractor {} = {}\n", sub, pol == DistractorPolicy::Count ? "count" : "multiplicative");
  }
  auto grading = [](const GradingRule& g) { return (g.quantile ? "quantile " : "fixed ") + list_text(g.cutoffs); };
  out += fmt::format("setting multipliers = {}\n", list_text(r.multipliers));
  out += fmt::format("setting emphysema_grading = {}\n", grading(r.emphysema));
  out += fmt::format("setting emphysema_labels = {}\n", join(r.emphysema.labels, ", "));
  out += fmt::format("setting effusion_grading = {}\n", grading(r.effusion));
  out += fmt::format("setting effusion_labels = {}\n", join(r.effusion.labels, ", "));
  out += fmt::format("setting hu_cutoffs = {}\n", list_text(r.hu_cutoffs));
  out += fmt::format("setting nodule_labels = {}\n", join(r.nodule_labels, ", "));
  out += fmt::format("setting ggo_labels = {}\n", join(r.ggo_labels, ", "));
  out += fmt::format("setting consolidation_labels = {}\n", join(r.consolidation_labels, ", "));
  out += fmt::format("setting opacity_labels = {}\n", join(r.opacity_labels, ", "));
  out += fmt::format("setting emphysema_label = {}\n", r.emphysema_label);
  out += fmt::format("setting effusion_label = {}\n", r.effusion_label);
  out += fmt::format("setting attenuation_margin = {}\n", r.attenuation_margin);
  out += fmt::format("setting hu_ggo = {}, {}\n", r.hu_ggo.first, r.hu_ggo.second);
  out += fmt::format("setting hu_consolidation = {}, {}\n", r.hu_consolidation.first, r.hu_consolidation.second);
  out += fmt::format("setting volume_loss_margin = {}\n", r.volume_loss_margin);
  out += fmt::format("setting enlargement_percentile = {}\n", r.enlargement_percentile);
  out += fmt::format("setting atrophy_percentile = {}\n", r.atrophy_percentile);
  out += fmt::format("setting min_cohort = {}\n", r.min_cohort);
  out += fmt::format("setting min_lesion_ml = {}\n", r.min_lesion_ml);
  out += fmt::format("setting connectivity = {}\n", static_cast<int>(r.connectivity));
  return out;
}

std::set<std::string> Rules::regions() const {
  std::set<std::string> out;
  for (const auto& [label, region] : region_of) out.insert(region);
  return out;
}

void Rules::validate() const {
  for (const auto& [label, region] : region_of) {
    if (region.empty()) throw Error(Errc::UnknownRegion, "label '" + label + "' has no region");
  }
  for (std::size_t i = 0; i < phenotypes.size(); ++i) {
    if (phenotypes[i].key.empty()) throw Error(Errc::ConfigError, "phenotype '" + phenotypes[i].name + "' has no key labels");
    for (const auto& l : phenotypes[i].key) check_labels({l});
    for (std::size_t j = 0; j < phenotypes.size(); ++j) {
      if (i == j) continue;
      const auto& a = phenotypes[i].key;
      const auto& b = phenotypes[j].key;
      if (std::includes(b.begin(), b.end(), a.begin(), a.end())) {
        throw Error(Errc::ConfigError,
                    fmt::format("key labels of '{}' are a subset of '{}'", phenotypes[i].name, phenotypes[j].name));
      }
    }
  }
  if (emphysema.labels.size() < 2 || effusion.labels.size() < 2) throw Error(Errc::ConfigError, "grading needs >= 2 labels");
  auto check_bins = [](const std::vector<double>& cuts, const std::vector<std::string>& labels, const char* what) {
    try {
      fixed_bins(cuts, labels);
    } catch (const Error& e) {
      throw Error(Errc::ConfigError, std::string(what) + ": " + e.detail());
    }
  };
  check_bins(emphysema.cutoffs, emphysema.labels, "emphysema_grading");
  check_bins(effusion.cutoffs, effusion.labels, "effusion_grading");
  if (hu_cutoffs.size() != 3) throw Error(Errc::ConfigError, "hu_cutoffs needs three values (four bins)");
  check_bins(hu_cutoffs, hu_bin_labels(hu_cutoffs), "hu_cutoffs");
  if (!(attenuation_margin >= 0.0) || !(volume_loss_margin >= 0.0) || !(volume_loss_margin < 1.0)) {
    throw Error(Errc::ConfigError, "margins must be in [0, 1)");
  }
  if (!(atrophy_percentile < enlargement_percentile) || atrophy_percentile <= 0.0 || enlargement_percentile >= 1.0) {
    throw Error(Errc::ConfigError, "need 0 < atrophy_percentile < enlargement_percentile < 1");
  }
}

void Rules::check_labels(const std::vector<std::string>& labels) const {
  for (const auto& l : labels) {
    if (!region_of.count(l)) throw Error(Errc::UnknownRegion, "label '" + l + "' is not in the region map");
  }
}

}  // namespace medagent
