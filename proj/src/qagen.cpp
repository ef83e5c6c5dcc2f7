#include "medagent/qagen.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "medagent/error.hpp"
#include "medagent/util.hpp"

namespace medagent {

namespace {

double quantile7(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::string item_id_for(const std::string& case_id, const std::string& subtype) { return case_id + "/" + subtype; }

Rng shuffler(std::uint64_t seed, const std::string& item_id) { return Rng::stream(seed, "shuffler/" + item_id); }

VqaItem base_item(const CaseEntry& c, const std::string& subtype) {
  const auto& info = subtype_info(subtype);
  VqaItem it;
  it.case_id = c.case_id;
  it.source = c.source;
  it.subtype = subtype;
  it.type = type_name(info.type);
  it.item_id = item_id_for(c.case_id, subtype);
  it.organ = info.organ;
  it.rule = subtype;
  return it;
}

void set_mcq(VqaItem& it, const Mcq& m) {
  it.options = m.options;
  it.answer_index = m.answer_index;
  if (m.fallback) it.values["distractor_fallback"] = true;
}

std::size_t nearest_option(double p, const std::vector<double>& opts) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < opts.size(); ++i) {
    if (std::fabs(opts[i] - p) < std::fabs(opts[best] - p)) best = i;
  }
  return best;
}

std::string pct_label(double p) { return format_percent(p); }

// Cohort quantiles when the rule asks for them and the cohort is large
// enough, the fixed cutoffs otherwise.
GradingBins grading_bins(const GradingRule& g, const std::vector<double>& cohort, std::size_t min_cohort) {
  if (g.quantile && cohort.size() >= min_cohort) {
    try {
      return quantile_bins(cohort, static_cast<int>(g.labels.size()), g.labels);
    } catch (const Error& e) {
      if (e.code() != Errc::DegenerateCohort) throw;
    }
  }
  return fixed_bins(g.cutoffs, g.labels);
}

const char* kNoduleText = "lung nodules or masses";

}  // namespace

// -- formatting and option helpers ---------------------------------------------

std::string format_mm(double mm) { return fmt::format("{:.1f} mm", mm); }
std::string format_percent(double p) { return fmt::format("{:.1f}%", p); }

std::vector<std::string> hu_bin_labels(const std::vector<double>& c) {
  if (c.size() != 3) throw Error(Errc::ConfigError, "HU bins need three cutoffs");
  return {fmt::format("below {:g} HU", c[0]), fmt::format("{:g} to {:g} HU", c[0], c[1]),
          fmt::format("{:g} to {:g} HU", c[1], c[2]), fmt::format("above {:g} HU", c[2])};
}

Mcq closed_mcq(const std::vector<std::string>& contents, const std::string& truth, Rng& rng) {
  Mcq m;
  m.options = contents;
  rng.shuffle(m.options);
  const auto it = std::find(m.options.begin(), m.options.end(), truth);
  if (it == m.options.end()) throw Error(Errc::InvalidArgument, "truth '" + truth + "' is not an option");
  m.answer_index = static_cast<int>(it - m.options.begin());
  return m;
}

Mcq gen_numeric_mcq(double truth, DistractorPolicy policy, Rng& rng, const std::vector<double>& multipliers) {
  if (!std::isfinite(truth)) throw Error(Errc::InvalidArgument, "numeric truth must be finite");
  Mcq m;
  std::vector<std::string> opts;
  auto add = [&](const std::string& s) {
    if (opts.size() < 4 && std::find(opts.begin(), opts.end(), s) == opts.end()) opts.push_back(s);
  };
  if (policy == DistractorPolicy::Count) {
    if (truth < 0) throw Error(Errc::InvalidArgument, "count truth must be >= 0");
    const auto t = static_cast<long long>(std::llround(truth));
    add(std::to_string(t));
    for (long long k = 1; opts.size() < 4; ++k) {
      add(std::to_string(t + k));
      if (t - k >= 0) add(std::to_string(t - k));
    }
  } else {
    add(format_mm(truth));
    for (double f : multipliers) add(format_mm(truth * f));
    if (opts.size() < 4) {
      // Collisions (e.g. a zero or tiny truth): fall back to additive offsets.
      m.fallback = true;
      const double step = std::max(1.0, std::fabs(truth) * 0.5);
      for (int k = 1; opts.size() < 4; ++k) add(format_mm(truth + k * step));
    }
  }
  const std::string truth_text = opts.front();
  rng.shuffle(opts);
  m.answer_index = static_cast<int>(std::find(opts.begin(), opts.end(), truth_text) - opts.begin());
  m.options = std::move(opts);
  return m;
}

bool region_present(const std::vector<std::string>& labels, const Rules& rules, const std::string& region) {
  if (!rules.regions().count(region)) throw Error(Errc::UnknownRegion, "region '" + region + "' is not in the map");
  rules.check_labels(labels);
  return std::any_of(labels.begin(), labels.end(), [&](const std::string& l) { return rules.region_of.at(l) == region; });
}

PhenotypeEval evaluate_phenotypes(const std::vector<std::string>& labels, const Rules& rules) {
  PhenotypeEval e;
  const std::set<std::string> have(labels.begin(), labels.end());
  for (const auto& p : rules.phenotypes) {
    int hits = 0;
    for (const auto& k : p.key) hits += static_cast<int>(have.count(k));
    if (hits == 0) continue;
    e.active.push_back(p.name);
    e.key_hits += hits;
    const bool blocked = std::any_of(p.disallowed.begin(), p.disallowed.end(), [&](const auto& d) { return have.count(d) > 0; });
    if (!blocked) e.matching.push_back(p.name);
  }
  return e;
}

std::string attenuation_truth(double ggo, double consolidation, double margin) {
  if (ggo > (1.0 + margin) * consolidation) return kAttenuationOptions[0];
  if (consolidation > (1.0 + margin) * ggo) return kAttenuationOptions[1];
  return kAttenuationOptions[2];
}

// -- manifest ------------------------------------------------------------------

nlohmann::json item_to_json(const VqaItem& it) {
  return {{"item_id", it.item_id},
          {"case_id", it.case_id},
          {"source", it.source},
          {"subtype", it.subtype},
          {"type", it.type},
          {"question", it.question},
          {"options", it.options},
          {"answer_index", it.answer_index},
          {"answer", it.answer()},
          {"organ", it.organ},
          {"rule", it.rule},
          {"values", it.values.is_null() ? nlohmann::json::object() : it.values},
          {"priority", it.priority}};
}

VqaItem item_from_json(const nlohmann::json& j) {
  VqaItem it;
  try {
    it.item_id = j.at("item_id").get<std::string>();
    it.case_id = j.at("case_id").get<std::string>();
    it.source = j.value("source", "unknown");
    it.subtype = j.at("subtype").get<std::string>();
    it.type = j.value("type", "");
    it.question = j.at("question").get<std::string>();
    it.options = j.at("options").get<std::vector<std::string>>();
    it.answer_index = j.at("answer_index").get<int>();
    it.organ = j.value("organ", "");
    it.rule = j.value("rule", it.subtype);
    it.values = j.value("values", nlohmann::json::object());
    it.priority = j.value("priority", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ConfigError, std::string("manifest item: ") + e.what());
  }
  // Subtypes outside the registry (other benchmarks) must name their type.
  const auto& reg = subtype_registry();
  const auto known = std::find_if(reg.begin(), reg.end(), [&](const SubtypeInfo& i) { return i.id == it.subtype; });
  if (known != reg.end()) {
    it.type = type_name(known->type);
  } else if (it.type.empty()) {
    throw Error(Errc::UnknownSubtype, "manifest item " + it.item_id + ": unknown subtype '" + it.subtype + "' without a type");
  }
  if (it.options.empty() || it.answer_index < 0 || it.answer_index >= static_cast<int>(it.options.size())) {
    throw Error(Errc::ConfigError, "manifest item " + it.item_id + ": answer_index out of range");
  }
  return it;
}

std::string manifest_text(const std::vector<VqaItem>& items) {
  std::string out;
  for (const auto& it : items) out += item_to_json(it).dump() + "\n";
  return out;
}

std::vector<VqaItem> parse_manifest(const std::string& text) {
  std::vector<VqaItem> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw Error(Errc::ConfigError, fmt::format("manifest line {}: invalid JSON", lineno));
    out.push_back(item_from_json(j));
  }
  return out;
}

std::vector<VqaItem> load_manifest(const std::filesystem::path& path) { return parse_manifest(read_file(path)); }

// -- label-only generators -------------------------------------------------------

CaseItems generate_label_items(const CaseEntry& c, const Rules& rules, std::uint64_t seed) {
  CaseItems out;
  rules.check_labels(c.labels);

  static const std::vector<std::pair<std::string, std::pair<std::string, std::string>>> kExistence = {
      {"bronchus_lesion_existence", {"bronchus", "Does this chest CT show any bronchus or airway abnormality?"}},
      {"lung_lesion_existence", {"lung", "Does this chest CT show any lung parenchymal abnormality?"}},
      {"pleura_lesion_existence", {"pleura", "Does this chest CT show any pleural abnormality?"}},
  };
  for (const auto& [subtype, spec] : kExistence) {
    VqaItem it = base_item(c, subtype);
    const bool yes = region_present(c.labels, rules, spec.first);
    it.question = spec.second;
    it.values = {{"labels", c.labels}, {"region", spec.first}};
    auto rng = shuffler(seed, it.item_id);
    set_mcq(it, closed_mcq(kYesNo, yes ? "yes" : "no", rng));
    out.items.push_back(std::move(it));
  }

  const auto ev = evaluate_phenotypes(c.labels, rules);
  std::vector<std::string> names;
  for (const auto& p : rules.phenotypes) names.push_back(p.name);
  if (ev.matching.size() == 1 && ev.active.size() == 1) {
    VqaItem it = base_item(c, "imaging_phenotype");
    it.question = "Which imaging phenotype best summarizes this chest CT?";
    it.values = {{"labels", c.labels}};
    it.priority = ev.key_hits;
    auto rng = shuffler(seed, it.item_id);
    set_mcq(it, closed_mcq(names, ev.matching.front(), rng));
    out.items.push_back(std::move(it));
  } else if (!ev.active.empty()) {
    out.skipped.push_back("imaging_phenotype: AmbiguousPhenotype (" + join(ev.active, ", ") + ")");
  } else {
    out.skipped.push_back("imaging_phenotype: no phenotype key labels");
  }

  if (!ev.active.empty()) {
    VqaItem it = base_item(c, "phenotype_mixing");
    it.question = "Does this chest CT show a mixed imaging phenotype, with two or more phenotype groups present?";
    it.values = {{"labels", c.labels}};
    it.priority = 10.0 * static_cast<double>(ev.active.size()) + ev.key_hits;
    auto rng = shuffler(seed, it.item_id);
    set_mcq(it, closed_mcq(kYesNo, ev.active.size() >= 2 ? "yes" : "no", rng));
    out.items.push_back(std::move(it));
  } else {
    out.skipped.push_back("phenotype_mixing: no phenotype key labels");
  }
  return out;
}

// -- measurements ------------------------------------------------------------------

CaseMeasurements measure_case(const std::string& case_id, const CaseVoxels& v, const Rules& rules) {
  CaseMeasurements m;
  m.case_id = case_id;
  if (!(v.hu.dims() == v.organs.dims()) || !(v.hu.dims() == v.lesions.dims())) {
    throw Error(Errc::DimsMismatch, case_id + ": CT, organ and lesion grids differ");
  }
  const BinaryMask lung = union_mask(v.organs, kLobes);
  const BinaryMask left = union_mask(v.organs, kLeftLobes);
  const BinaryMask right = union_mask(v.organs, kRightLobes);
  const LabelVolume lobes = restrict_labels(v.organs, kLobes);
  const bool has_lung = !lung.empty();
  if (has_lung) {
    m.lung_ml = mask_physical_volume(lung);
    m.left_ml = mask_physical_volume(left);
    m.right_ml = mask_physical_volume(right);
  }

  const BinaryMask all = v.lesions.nonzero();
  const auto comps = filter_min_size(connected_components_3d(all, rules.connectivity), rules.min_lesion_ml);
  if (!comps.empty()) {
    const auto& big = largest_instance(comps);
    const BinaryMask big_mask = instance_mask(big, all.dims(), all.spacing());
    m.has_lesion = true;
    m.largest_ml = big.physical_volume;
    m.diameter_mm = max_inplane_diameter(big, all);
    m.largest_region = assign_region(big, lobes);
    m.slice_percentile = slice_percentile_of_max_extent(big_mask);
    if (has_lung) {
      try {
        m.delta_hu = hu_contrast(v.hu, big_mask, lung, all, HuStat::Median);
      } catch (const Error& e) {
        if (e.code() != Errc::NoNormalTissue && e.code() != Errc::EmptyLesion) throw;
      }
    }
  }

  const BinaryMask nod = union_mask(v.lesions, rules.nodule_labels);
  const auto nodules = filter_min_size(connected_components_3d(nod, rules.connectivity), rules.min_lesion_ml);
  m.nodule_count = nodules.size();
  for (const auto& lobe : kLobes) m.nodules_by_lobe[lobe] = 0;
  for (const auto& n : nodules) {
    const auto r = assign_region(n, lobes);
    if (r != kUnassigned) ++m.nodules_by_lobe[r];
  }

  m.ggo_ml = mask_physical_volume(union_mask(v.lesions, rules.ggo_labels));
  m.consolidation_ml = mask_physical_volume(union_mask(v.lesions, rules.consolidation_labels));
  const BinaryMask opacity = union_mask(v.lesions, rules.opacity_labels);
  const double voxel_ml = opacity.spacing().voxel_mm3() / 1000.0;
  for (std::size_t i = 0; i < opacity.data().size(); ++i) {
    if (!opacity.data()[i]) continue;
    const double h = v.hu.data()[i];
    if (h > rules.hu_ggo.first && h <= rules.hu_ggo.second) m.ggo_hu_ml += voxel_ml;
    if (h > rules.hu_consolidation.first && h <= rules.hu_consolidation.second) m.consolidation_hu_ml += voxel_ml;
  }
  m.opacity_left_ml = static_cast<double>(intersection_count(opacity, left)) * voxel_ml;
  m.opacity_right_ml = static_cast<double>(intersection_count(opacity, right)) * voxel_ml;

  const BinaryMask emph = v.lesions.mask(rules.emphysema_label);
  if (has_lung && !emph.empty()) m.emphysema_index = emphysema_index(emph, lung);
  const BinaryMask eff = v.lesions.mask(rules.effusion_label);
  if (!eff.empty()) m.effusion_ratio = effusion_ratio(eff, mask_or(lung, eff));
  return m;
}

Cohort build_cohort(const std::vector<CaseMeasurements>& ms) {
  Cohort c;
  for (const auto& m : ms) {
    if (m.lung_ml) c.lung_ml.push_back(*m.lung_ml);
    if (m.left_ml && m.right_ml && *m.left_ml > 0 && *m.right_ml > 0) c.side_ratio.push_back(*m.left_ml / *m.right_ml);
    if (m.emphysema_index) c.emphysema_index.push_back(*m.emphysema_index);
    if (m.effusion_ratio) c.effusion_ratio.push_back(*m.effusion_ratio);
  }
  return c;
}

// -- mask-based generators ----------------------------------------------------------

CaseItems generate_measured_items(const CaseEntry& c, const CaseMeasurements& m, const Cohort& cohort,
                                  const Rules& rules, std::uint64_t seed) {
  CaseItems out;
  auto skip = [&](const std::string& subtype, const std::string& why) { out.skipped.push_back(subtype + ": " + why); };
  auto emit = [&](VqaItem it, const Mcq& mcq) {
    set_mcq(it, mcq);
    out.items.push_back(std::move(it));
  };
  auto policy = [&](const std::string& subtype, DistractorPolicy dflt) {
    auto it = rules.distractors.find(subtype);
    return it == rules.distractors.end() ? dflt : it->second;
  };

  if (!m.has_lesion) {
    for (const char* s : {"largest_lesion_diameter", "largest_lesion_location", "largest_lesion_slice",
                          "lesion_organ_hu_difference"}) {
      skip(s, "NoLesions");
    }
  } else {
    {
      VqaItem it = base_item(c, "largest_lesion_diameter");
      it.question = "What is the maximum in-plane diameter of the largest lesion?";
      it.values = {{"diameter_mm", m.diameter_mm}, {"volume_ml", m.largest_ml}};
      auto rng = shuffler(seed, it.item_id);
      const auto pol = policy(it.subtype, DistractorPolicy::Multiplicative);
      it.values["policy"] = pol == DistractorPolicy::Count ? "count" : "multiplicative";
      emit(std::move(it), gen_numeric_mcq(m.diameter_mm, pol, rng, rules.multipliers));
    }
    if (m.largest_region == kUnassigned) {
      skip("largest_lesion_location", "largest lesion lies outside every lobe");
    } else {
      VqaItem it = base_item(c, "largest_lesion_location");
      it.question = "Which lung lobe contains the largest lesion?";
      it.values = {{"region", m.largest_region}};
      auto rng = shuffler(seed, it.item_id);
      emit(std::move(it), closed_mcq(kLobes, m.largest_region, rng));
    }
    {
      VqaItem it = base_item(c, "largest_lesion_slice");
      it.question =
          "At what position along the scan, as a percentage of depth from the first slice, does the largest lesion "
          "reach its maximal extent?";
      it.values = {{"percentile", m.slice_percentile}, {"choices", kSlicePercentOptions}};
      std::vector<std::string> opts;
      for (double p : kSlicePercentOptions) opts.push_back(pct_label(p));
      auto rng = shuffler(seed, it.item_id);
      emit(std::move(it), closed_mcq(opts, opts[nearest_option(m.slice_percentile, kSlicePercentOptions)], rng));
    }
    if (!m.delta_hu) {
      skip("lesion_organ_hu_difference", "no normal lung tissue to compare against");
    } else {
      VqaItem it = base_item(c, "lesion_organ_hu_difference");
      it.question =
          "What is the median attenuation difference between the largest lesion and the surrounding normal lung?";
      it.values = {{"delta_hu", *m.delta_hu}, {"cutoffs", rules.hu_cutoffs}};
      const auto labels = hu_bin_labels(rules.hu_cutoffs);
      auto rng = shuffler(seed, it.item_id);
      emit(std::move(it), closed_mcq(labels, grade(*m.delta_hu, fixed_bins(rules.hu_cutoffs, labels)), rng));
    }
  }

  if (!m.lung_ml) {
    for (const char* s : {"lesion_counting", "lesion_count_by_location", "organ_enlargement", "organ_atrophy",
                          "volume_loss", "emphysema_grading"}) {
      skip(s, "EmptyLung");
    }
  } else {
    {
      VqaItem it = base_item(c, "lesion_counting");
      it.question = fmt::format("How many {} are present?", kNoduleText);
      it.values = {{"count", m.nodule_count}};
      auto rng = shuffler(seed, it.item_id);
      emit(std::move(it), gen_numeric_mcq(static_cast<double>(m.nodule_count),
                                          policy("lesion_counting", DistractorPolicy::Count), rng, rules.multipliers));
    }
    {
      VqaItem it = base_item(c, "lesion_count_by_location");
      auto pick = Rng::stream(seed, "generator/" + it.item_id);
      const auto& lobe = kLobes[pick.below(kLobes.size())];
      const auto n = m.nodules_by_lobe.count(lobe) ? m.nodules_by_lobe.at(lobe) : 0;
      it.question = fmt::format("How many {} are in the {}?", kNoduleText, lobe);
      it.values = {{"count", n}, {"lobe", lobe}};
      auto rng = shuffler(seed, it.item_id);
      emit(std::move(it), gen_numeric_mcq(static_cast<double>(n), policy(it.subtype, DistractorPolicy::Count), rng,
                                          rules.multipliers));
    }
    if (cohort.lung_ml.size() < rules.min_cohort) {
      skip("organ_enlargement", fmt::format("CohortTooSmall ({} < {})", cohort.lung_ml.size(), rules.min_cohort));
      skip("organ_atrophy", fmt::format("CohortTooSmall ({} < {})", cohort.lung_ml.size(), rules.min_cohort));
    } else {
      const double hi = quantile7(cohort.lung_ml, rules.enlargement_percentile);
      const double lo = quantile7(cohort.lung_ml, rules.atrophy_percentile);
      VqaItem en = base_item(c, "organ_enlargement");
      en.question = "Are the lungs enlarged compared with the reference cohort?";
      en.values = {{"volume_ml", *m.lung_ml}, {"threshold_ml", hi}, {"percentile", rules.enlargement_percentile}};
      auto r1 = shuffler(seed, en.item_id);
      emit(std::move(en), closed_mcq(kYesNo, *m.lung_ml > hi ? "yes" : "no", r1));
      VqaItem at = base_item(c, "organ_atrophy");
      at.question = "Are the lungs reduced in volume compared with the reference cohort?";
      at.values = {{"volume_ml", *m.lung_ml}, {"threshold_ml", lo}, {"percentile", rules.atrophy_percentile}};
      auto r2 = shuffler(seed, at.item_id);
      emit(std::move(at), closed_mcq(kYesNo, *m.lung_ml < lo ? "yes" : "no", r2));
    }

    const double opacity = m.opacity_left_ml + m.opacity_right_ml;
    if (opacity <= 0.0) {
      skip("volume_loss", "no opacity inside the lungs");
    } else if (cohort.side_ratio.empty() || !(*m.left_ml > 0) || !(*m.right_ml > 0)) {
      skip("volume_loss", "no side-ratio reference");
    } else {
      const double ref = quantile7(cohort.side_ratio, 0.5);
      const bool left_side = m.opacity_left_ml >= m.opacity_right_ml;
      const double ratio = *m.left_ml / *m.right_ml;
      const double normalized = left_side ? ratio / ref : ref / ratio;
      VqaItem it = base_item(c, "volume_loss");
      it.question = "Is the lung opacity accompanied by volume loss of the affected lung?";
      it.values = {{"side", left_side ? "left" : "right"},
                   {"normalized_ratio", normalized},
                   {"reference_ratio", ref},
                   {"margin", rules.volume_loss_margin}};
      auto rng = shuffler(seed, it.item_id);
      emit(std::move(it),
           closed_mcq(kVolumeLossOptions, normalized < 1.0 - rules.volume_loss_margin ? kVolumeLossOptions[0]
                                                                                         : kVolumeLossOptions[1],
                      rng));
    }

    if (!m.emphysema_index) {
      skip("emphysema_grading", "no emphysema mask");
    } else {
      const auto bins = grading_bins(rules.emphysema, cohort.emphysema_index, rules.min_cohort);
      VqaItem it = base_item(c, "emphysema_grading");
      it.question = "How severe is the emphysema, judged by the fraction of lung it occupies?";
      it.values = {{"index", *m.emphysema_index}, {"upper_bounds", bins.upper_bounds}, {"labels", bins.labels}};
      it.values["upper_bounds"].back() = "inf";
      auto rng = shuffler(seed, it.item_id);
      emit(std::move(it), closed_mcq(bins.labels, grade(*m.emphysema_index, bins), rng));
    }
  }

  {
    const bool by_mask = m.ggo_ml + m.consolidation_ml > 0.0;
    const bool by_hu = m.ggo_hu_ml + m.consolidation_hu_ml > 0.0;
    if (!by_mask && !by_hu) {
      skip("attenuation_pattern", "no opacity components");
    } else {
      const double g = by_mask ? m.ggo_ml : m.ggo_hu_ml;
      const double k = by_mask ? m.consolidation_ml : m.consolidation_hu_ml;
      VqaItem it = base_item(c, "attenuation_pattern");
      it.question = "What is the predominant attenuation pattern of the lung opacities?";
      it.values = {{"ggo_ml", g}, {"consolidation_ml", k}, {"margin", rules.attenuation_margin},
                   {"method", by_mask ? "mask" : "hu"}};
      auto rng = shuffler(seed, it.item_id);
      emit(std::move(it), closed_mcq(kAttenuationOptions, attenuation_truth(g, k, rules.attenuation_margin), rng));
    }
  }

  if (!m.effusion_ratio) {
    skip("effusion_grading", "no effusion mask");
  } else {
    const auto bins = grading_bins(rules.effusion, cohort.effusion_ratio, rules.min_cohort);
    VqaItem it = base_item(c, "effusion_grading");
    it.question = "How large is the pleural effusion relative to the hemithorax?";
    it.values = {{"index", *m.effusion_ratio}, {"upper_bounds", bins.upper_bounds}, {"labels", bins.labels}};
    it.values["upper_bounds"].back() = "inf";
    auto rng = shuffler(seed, it.item_id);
    emit(std::move(it), closed_mcq(bins.labels, grade(*m.effusion_ratio, bins), rng));
  }
  return out;
}

Pool generate_pool(const std::vector<CaseEntry>& cases, const Rules& rules, std::uint64_t seed, int jobs) {
  std::vector<CaseMeasurements> ms(cases.size());
  std::vector<std::string> errors(cases.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cases.size(); i = next++) {
      try {
        ms[i] = measure_case(cases[i].case_id, cases[i].load(), rules);
      } catch (const std::exception& e) {
        errors[i] = cases[i].case_id + ": " + e.what();
      }
    }
  };
  const int n = std::max(1, std::min<int>(jobs, static_cast<int>(cases.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < n; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (!e.empty()) throw Error(Errc::IoError, e);
  }

  Pool pool;
  pool.cohort = build_cohort(ms);
  for (std::size_t i = 0; i < cases.size(); ++i) {
    auto a = generate_label_items(cases[i], rules, seed);
    auto b = generate_measured_items(cases[i], ms[i], pool.cohort, rules, seed);
    for (auto* part : {&a, &b}) {
      for (auto& it : part->items) pool.items.push_back(std::move(it));
      for (auto& s : part->skipped) pool.skipped.push_back(cases[i].case_id + " " + s);
    }
  }
  return pool;
}

// -- sampling --------------------------------------------------------------------

nlohmann::json SampleResult::report() const {
  std::map<std::string, std::size_t> totals;
  std::map<std::string, std::map<std::string, std::size_t>> contents;
  const auto& reg = subtype_registry();
  for (const auto& it : items) {
    ++totals[it.subtype];
    const auto info = std::find_if(reg.begin(), reg.end(), [&](const SubtypeInfo& i) { return i.id == it.subtype; });
    if (info != reg.end() && info->closed) ++contents[it.subtype][it.answer()];
  }
  nlohmann::json per_subtype = nlohmann::json::object();
  for (const auto& [s, n] : totals) {
    per_subtype[s]["total"] = n;
    if (contents.count(s)) per_subtype[s]["by_content"] = contents[s];
  }
  nlohmann::json sf = nlohmann::json::array();
  for (const auto& s : shortfalls) {
    sf.push_back({{"subtype", s.subtype}, {"content", s.content}, {"wanted", s.wanted}, {"available", s.available}});
  }
  return {{"items", items.size()}, {"subtypes", per_subtype}, {"shortfalls", sf}};
}

SampleResult balance_and_sample(std::vector<VqaItem> pool, const SamplingPolicy& policy) {
  SampleResult res;
  auto tiebreak = [&](const VqaItem& it) { return splitmix64(policy.seed ^ fnv1a64(it.item_id)); };

  // One item per (case, subtype): the most typical, then the seeded order.
  std::map<std::pair<std::string, std::string>, VqaItem> unique;
  for (auto& it : pool) {
    const auto key = std::make_pair(it.case_id, it.subtype);
    auto found = unique.find(key);
    if (found == unique.end()) {
      unique.emplace(key, std::move(it));
    } else if (it.priority > found->second.priority ||
               (it.priority == found->second.priority && tiebreak(it) < tiebreak(found->second))) {
      found->second = std::move(it);
    }
  }
  std::map<std::string, std::vector<VqaItem>> by_subtype;
  for (auto& [key, it] : unique) by_subtype[key.second].push_back(std::move(it));

  std::map<std::string, std::size_t> usage;  // items already taken per case

  // Orders candidates by typicality, case usage and seeded key, then
  // interleaves sources so each contributes as evenly as supply allows.
  auto ordered = [&](std::vector<VqaItem> items) {
    std::sort(items.begin(), items.end(), [&](const VqaItem& a, const VqaItem& b) {
      if (a.priority != b.priority) return a.priority > b.priority;
      const auto ua = usage[a.case_id], ub = usage[b.case_id];
      if (ua != ub) return ua < ub;
      const auto ta = tiebreak(a), tb = tiebreak(b);
      if (ta != tb) return ta < tb;
      return a.item_id < b.item_id;
    });
    std::map<std::string, std::vector<VqaItem>> by_source;
    for (auto& it : items) by_source[it.source].push_back(std::move(it));
    std::vector<VqaItem> out;
    for (std::size_t round = 0; out.size() < items.size(); ++round) {
      for (auto& [src, list] : by_source) {
        if (round < list.size()) out.push_back(std::move(list[round]));
      }
    }
    return out;
  };

  for (const auto& info : subtype_registry()) {
    auto found = by_subtype.find(info.id);
    std::vector<VqaItem> cands;
    if (found != by_subtype.end()) {
      for (auto& it : found->second) {
        if (usage[it.case_id] < policy.per_case_cap) cands.push_back(std::move(it));
      }
    }
    const auto ov = policy.per_subtype_override.find(info.id);
    const std::size_t target = ov != policy.per_subtype_override.end() ? ov->second : policy.per_subtype;
    if (target == 0) continue;

    std::vector<VqaItem> chosen;
    if (!info.closed) {
      auto list = ordered(std::move(cands));
      if (list.size() < target) res.shortfalls.push_back({info.id, "", target, list.size()});
      for (std::size_t i = 0; i < std::min(target, list.size()); ++i) chosen.push_back(std::move(list[i]));
    } else {
      // Semantic contents come from the options, which are the same set for
      // every item of a closed subtype.
      std::map<std::string, std::vector<VqaItem>> by_content;
      std::vector<std::string> contents;
      for (auto& it : cands) {
        if (contents.empty()) {
          contents = it.options;
          std::sort(contents.begin(), contents.end());
        }
        by_content[it.answer()].push_back(std::move(it));
      }
      if (contents.empty()) {
        res.shortfalls.push_back({info.id, "", target, 0});
        continue;
      }
      const std::size_t k = contents.size();
      std::size_t min_supply = SIZE_MAX;
      for (const auto& c : contents) min_supply = std::min(min_supply, by_content[c].size());
      std::map<std::string, std::size_t> quota;
      const std::size_t base = target / k;
      std::size_t extra = target % k;
      if (min_supply < base || (min_supply == base && extra > 0 &&
                                std::count_if(contents.begin(), contents.end(), [&](const auto& c) {
                                  return by_content[c].size() > base;
                                }) < static_cast<std::ptrdiff_t>(extra))) {
        for (const auto& c : contents) {
          quota[c] = min_supply;
          const std::size_t want = base + (extra > 0 ? 1 : 0);
          if (by_content[c].size() < want) res.shortfalls.push_back({info.id, c, want, by_content[c].size()});
        }
      } else {
        for (const auto& c : contents) {
          quota[c] = base;
          if (extra > 0 && by_content[c].size() > base) {
            ++quota[c];
            --extra;
          }
        }
      }
      for (const auto& c : contents) {
        auto list = ordered(std::move(by_content[c]));
        for (std::size_t i = 0; i < quota[c]; ++i) chosen.push_back(std::move(list[i]));
      }
    }
    for (auto& it : chosen) {
      ++usage[it.case_id];
      res.items.push_back(std::move(it));
    }
  }

  std::stable_sort(res.items.begin(), res.items.end(), [](const VqaItem& a, const VqaItem& b) {
    if (a.subtype != b.subtype) {
      const auto& reg = subtype_registry();
      auto pos = [&](const std::string& s) {
        return std::find_if(reg.begin(), reg.end(), [&](const SubtypeInfo& i) { return i.id == s; }) - reg.begin();
      };
      return pos(a.subtype) < pos(b.subtype);
    }
    return a.case_id < b.case_id;
  });
  return res;
}

// -- audit -------------------------------------------------------------------------

std::string audit_item(const VqaItem& it, const Rules& rules) {
  const auto& v = it.values;
  std::string truth;
  try {
    const auto& s = it.subtype;
    if (s == "bronchus_lesion_existence" || s == "lung_lesion_existence" || s == "pleura_lesion_existence") {
      truth = region_present(v.at("labels").get<std::vector<std::string>>(), rules, v.at("region").get<std::string>())
                  ? "yes"
                  : "no";
    } else if (s == "imaging_phenotype") {
      const auto ev = evaluate_phenotypes(v.at("labels").get<std::vector<std::string>>(), rules);
      if (ev.matching.size() != 1 || ev.active.size() != 1) return "labels do not select a single phenotype";
      truth = ev.matching.front();
    } else if (s == "phenotype_mixing") {
      truth = evaluate_phenotypes(v.at("labels").get<std::vector<std::string>>(), rules).active.size() >= 2 ? "yes" : "no";
    } else if (s == "largest_lesion_diameter") {
      truth = format_mm(v.at("diameter_mm").get<double>());
    } else if (s == "largest_lesion_location") {
      truth = v.at("region").get<std::string>();
    } else if (s == "largest_lesion_slice") {
      const auto choices = v.at("choices").get<std::vector<double>>();
      truth = format_percent(choices[nearest_option(v.at("percentile").get<double>(), choices)]);
    } else if (s == "lesion_counting" || s == "lesion_count_by_location") {
      truth = std::to_string(v.at("count").get<long long>());
    } else if (s == "organ_enlargement") {
      truth = v.at("volume_ml").get<double>() > v.at("threshold_ml").get<double>() ? "yes" : "no";
    } else if (s == "organ_atrophy") {
      truth = v.at("volume_ml").get<double>() < v.at("threshold_ml").get<double>() ? "yes" : "no";
    } else if (s == "lesion_organ_hu_difference") {
      const auto cut = v.at("cutoffs").get<std::vector<double>>();
      truth = grade(v.at("delta_hu").get<double>(), fixed_bins(cut, hu_bin_labels(cut)));
    } else if (s == "attenuation_pattern") {
      truth = attenuation_truth(v.at("ggo_ml").get<double>(), v.at("consolidation_ml").get<double>(),
                                v.at("margin").get<double>());
    } else if (s == "volume_loss") {
      truth = v.at("normalized_ratio").get<double>() < 1.0 - v.at("margin").get<double>() ? kVolumeLossOptions[0]
                                                                                         : kVolumeLossOptions[1];
    } else if (s == "emphysema_grading" || s == "effusion_grading") {
      auto bounds = v.at("upper_bounds");
      std::vector<double> cut;
      for (std::size_t i = 0; i + 1 < bounds.size(); ++i) cut.push_back(bounds[i].get<double>());
      truth = grade(v.at("index").get<double>(), fixed_bins(cut, v.at("labels").get<std::vector<std::string>>()));
    } else {
      return "no audit rule for subtype " + s;
    }
  } catch (const nlohmann::json::exception& e) {
    return std::string("recorded values incomplete: ") + e.what();
  }
  if (truth != it.answer()) return fmt::format("recorded answer '{}' but recorded values give '{}'", it.answer(), truth);
  return {};
}

}  // namespace medagent
