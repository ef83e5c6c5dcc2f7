#include <doctest.h>

#include <atomic>

#include <fmt/format.h>

#include "medagent/error.hpp"
#include "medagent/qagen.hpp"
#include "medagent/synth.hpp"
#include "support.hpp"

using namespace medagent;
using testsupport::Gen;

namespace {

// Upper 1% point of chi-squared with 3 degrees of freedom.
constexpr double kChi2Crit3 = 11.344867;

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return Errc::InvalidArgument;
}

// 20x10x10 grid, spacing 2 mm; the five lobes are 4-voxel strips along x.
struct Scene {
  Dims d{20, 10, 10};
  Spacing s{2.0, 2.0, 2.0};
  std::vector<std::uint32_t> lesion;
  Scene() : lesion(d.voxels(), 0) {}

  void cube(std::int64_t x, std::int64_t y, std::int64_t z, std::int64_t n, std::uint32_t label) {
    for (auto k = z; k < z + n; ++k)
      for (auto j = y; j < y + n; ++j)
        for (auto i = x; i < x + n; ++i) lesion[d.index(i, j, k)] = label;
  }

  CaseVoxels voxels(std::map<std::uint32_t, std::string> names) const {
    std::vector<std::uint32_t> org(d.voxels());
    std::vector<float> hu(d.voxels(), -850.0f);
    for (std::size_t i = 0; i < org.size(); ++i) {
      org[i] = static_cast<std::uint32_t>(unravel(d, i).x / 4 + 1);
      if (lesion[i]) hu[i] = 30.0f;
    }
    std::map<std::uint32_t, std::string> lobes;
    for (std::uint32_t l = 0; l < 5; ++l) lobes[l + 1] = kLobes[l];
    return {ScalarVolume(d, s, hu), LabelVolume(d, s, org, lobes), LabelVolume(d, s, lesion, std::move(names))};
  }
};

CaseEntry entry(const std::string& id, std::vector<std::string> labels, std::function<CaseVoxels()> load = {}) {
  CaseEntry c;
  c.case_id = id;
  c.source = "test";
  std::sort(labels.begin(), labels.end());
  c.labels = std::move(labels);
  c.load = std::move(load);
  return c;
}

const VqaItem* find_item(const CaseItems& ci, const std::string& subtype) {
  for (const auto& it : ci.items)
    if (it.subtype == subtype) return &it;
  return nullptr;
}

VqaItem yes_no_item(const std::string& case_id, bool yes, const std::string& source = "s",
                    const std::string& subtype = "lung_lesion_existence") {
  VqaItem it;
  it.case_id = case_id;
  it.item_id = case_id + "/" + subtype;
  it.source = source;
  it.subtype = subtype;
  it.type = "recognition";
  it.options = kYesNo;
  it.answer_index = yes ? 0 : 1;
  return it;
}

std::vector<std::string> all_labels(const Rules& r) {
  std::vector<std::string> out;
  for (const auto& [l, reg] : r.region_of) out.push_back(l);
  return out;
}

const std::vector<SynthCase>& small_cohort() {
  static const std::vector<SynthCase> cohort = [] {
    SynthOptions o;
    o.cases = 90;
    o.seed = 3;
    return synth_cohort(o);
  }();
  return cohort;
}

std::vector<CaseEntry> small_entries() {
  std::vector<CaseEntry> out;
  for (const auto& c : small_cohort()) out.push_back(c.entry);
  return out;
}

}  // namespace

TEST_SUITE("qagen") {

TEST_CASE("subtype taxonomy has 3 recognition, 8 visual and 6 medical subtypes") {
  const auto& reg = subtype_registry();
  CHECK(reg.size() == 17);
  std::map<QuestionType, int> n;
  std::set<std::string> ids;
  for (const auto& s : reg) {
    ++n[s.type];
    ids.insert(s.id);
  }
  CHECK(ids.size() == 17);
  CHECK(n[QuestionType::Recognition] == 3);
  CHECK(n[QuestionType::VisualReasoning] == 8);
  CHECK(n[QuestionType::MedicalReasoning] == 6);
  CHECK(subtype_info("emphysema_grading").type == QuestionType::MedicalReasoning);
  CHECK(code_of([] { subtype_info("nope"); }) == Errc::UnknownSubtype);
}

TEST_CASE("rules text round trips and validates") {
  const Rules r = default_rules();
  CHECK_NOTHROW(r.validate());
  const Rules back = parse_rules(format_rules(r));
  CHECK(back.region_of == r.region_of);
  CHECK(back.phenotypes.size() == r.phenotypes.size());
  CHECK(back.emphysema.cutoffs == r.emphysema.cutoffs);
  CHECK(back.effusion.cutoffs == std::vector<double>{0.02, 0.10});
  CHECK(back.effusion.quantile);
  CHECK(format_rules(back) == format_rules(r));
  CHECK(r.regions().count("bronchus"));

  CHECK(code_of([] { parse_rules("region x = \nphenotype a key = x\n"); }) != Errc::InvalidArgument);
  CHECK(code_of([] {
          parse_rules("region a = lung\nregion b = lung\nphenotype p key = a\nphenotype q key = a, b\n").validate();
        }) == Errc::ConfigError);
  CHECK(code_of([] {
          auto bad = default_rules();
          bad.emphysema.cutoffs = {0.2, 0.1};
          bad.validate();
        }) == Errc::ConfigError);
  CHECK(code_of([] { parse_rules("bogus line\n"); }) == Errc::ConfigError);
}

TEST_CASE("existence is a label-set rule") {
  const Rules r = default_rules();
  CHECK(region_present({"bronchiectasis"}, r, "bronchus"));
  CHECK_FALSE(region_present({}, r, "bronchus"));
  CHECK_FALSE(region_present({"pleural effusion"}, r, "lung"));
  CHECK(code_of([&] { region_present({}, r, "spleen"); }) == Errc::UnknownRegion);
  CHECK(code_of([&] { region_present({"unicorn horn"}, r, "lung"); }) == Errc::UnknownRegion);

  Gen g(51);
  const auto labels = all_labels(r);
  for (int t = 0; t < 100; ++t) {
    std::vector<std::string> pick;
    for (const auto& l : labels)
      if (g.chance(0.15)) pick.push_back(l);
    for (const char* region : {"bronchus", "lung", "pleura"}) {
      bool want = false;
      for (const auto& l : pick) want = want || r.region_of.at(l) == region;
      CHECK(region_present(pick, r, region) == want);
    }
  }

  const auto items = generate_label_items(entry("c", {"bronchiectasis"}), r, 1);
  const auto* b = find_item(items, "bronchus_lesion_existence");
  REQUIRE(b);
  CHECK(b->answer() == "yes");
  CHECK(as_set(b->options) == as_set(kYesNo));
  CHECK(find_item(items, "lung_lesion_existence")->answer() == "no");
}

TEST_CASE("numeric options") {
  Rng rng = Rng::stream(1, "t");
  const auto sizes = gen_numeric_mcq(12.0, DistractorPolicy::Multiplicative, rng);
  CHECK(as_set(sizes.options) == std::set<std::string>{"6.0 mm", "12.0 mm", "24.0 mm", "48.0 mm"});
  CHECK(sizes.options[sizes.answer_index] == "12.0 mm");
  CHECK_FALSE(sizes.fallback);

  const auto zero = gen_numeric_mcq(0.0, DistractorPolicy::Count, rng);
  CHECK(as_set(zero.options) == std::set<std::string>{"0", "1", "2", "3"});
  CHECK(zero.options[zero.answer_index] == "0");
  const auto five = gen_numeric_mcq(5.0, DistractorPolicy::Count, rng);
  CHECK(as_set(five.options) == std::set<std::string>{"4", "5", "6", "7"});
  const auto one = gen_numeric_mcq(1.0, DistractorPolicy::Count, rng);
  CHECK(as_set(one.options) == std::set<std::string>{"0", "1", "2", "3"});

  const auto tiny = gen_numeric_mcq(0.0, DistractorPolicy::Multiplicative, rng);
  CHECK(tiny.fallback);
  CHECK(as_set(tiny.options).size() == 4);
  CHECK(tiny.options[tiny.answer_index] == "0.0 mm");

  CHECK_THROWS_AS(gen_numeric_mcq(std::nan(""), DistractorPolicy::Multiplicative, rng), Error);
  CHECK_THROWS_AS(gen_numeric_mcq(-1.0, DistractorPolicy::Count, rng), Error);

  std::array<int, 4> pos{};
  for (int i = 0; i < 1000; ++i) {
    Rng r = Rng::stream(99, "pos/" + std::to_string(i));
    ++pos[static_cast<std::size_t>(gen_numeric_mcq(3.0 + i % 7, DistractorPolicy::Multiplicative, r).answer_index)];
  }
  double chi2 = 0.0;
  for (int c : pos) chi2 += (c - 250.0) * (c - 250.0) / 250.0;
  CHECK(chi2 < kChi2Crit3);
}

TEST_CASE("phenotype rules") {
  const Rules r = default_rules();
  SUBCASE("one clean group") {
    const auto ci = generate_label_items(entry("c", {"emphysema", "bronchiectasis", "cardiomegaly"}), r, 2);
    const auto* p = find_item(ci, "imaging_phenotype");
    REQUIRE(p);
    CHECK(p->answer() == "obstructive/airway");
    CHECK(p->options.size() == 4);
    CHECK(p->priority == 2.0);
    CHECK(find_item(ci, "phenotype_mixing")->answer() == "no");
  }
  SUBCASE("two groups") {
    const auto ci = generate_label_items(entry("c", {"emphysema", "consolidation"}), r, 2);
    CHECK_FALSE(find_item(ci, "imaging_phenotype"));
    CHECK(find_item(ci, "phenotype_mixing")->answer() == "yes");
    REQUIRE_FALSE(ci.skipped.empty());
    CHECK(ci.skipped[0].find("AmbiguousPhenotype") != std::string::npos);
  }
  SUBCASE("no key labels") {
    const auto ci = generate_label_items(entry("c", {"cardiomegaly"}), r, 2);
    CHECK_FALSE(find_item(ci, "imaging_phenotype"));
    CHECK_FALSE(find_item(ci, "phenotype_mixing"));
  }
  SUBCASE("random label sets against direct rule evaluation") {
    Gen g(52);
    const auto labels = all_labels(r);
    for (int t = 0; t < 300; ++t) {
      std::vector<std::string> pick;
      for (const auto& l : labels)
        if (g.chance(0.12)) pick.push_back(l);
      std::vector<std::string> active, matching;
      for (const auto& p : r.phenotypes) {
        bool any_key = false, blocked = false;
        for (const auto& l : pick) {
          any_key = any_key || p.key.count(l);
          blocked = blocked || p.disallowed.count(l);
        }
        if (any_key) active.push_back(p.name);
        if (any_key && !blocked) matching.push_back(p.name);
      }
      const auto ev = evaluate_phenotypes(pick, r);
      CHECK(ev.active == active);
      CHECK(ev.matching == matching);
      const auto ci = generate_label_items(entry("c", pick), r, 3);
      const auto* p = find_item(ci, "imaging_phenotype");
      if (active.size() == 1 && matching.size() == 1) {
        REQUIRE(p);
        CHECK(p->answer() == matching[0]);
      } else {
        CHECK_FALSE(p);
      }
      const auto* mx = find_item(ci, "phenotype_mixing");
      if (active.empty()) {
        CHECK_FALSE(mx);
      } else {
        REQUIRE(mx);
        CHECK(mx->answer() == (active.size() >= 2 ? "yes" : "no"));
      }
    }
  }
}

TEST_CASE("label-only generators never load voxels") {
  std::atomic<int> loads{0};
  const Rules r = default_rules();
  Gen g(53);
  const auto labels = all_labels(r);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::string> pick;
    for (const auto& l : labels)
      if (g.chance(0.2)) pick.push_back(l);
    const auto c = entry("c" + std::to_string(t), pick, [&]() -> CaseVoxels {
      ++loads;
      throw Error(Errc::IoError, "voxels must not be read");
    });
    const auto ci = generate_label_items(c, r, 4);
    for (const auto& it : ci.items) CHECK(subtype_info(it.subtype).label_only);
  }
  CHECK(loads == 0);
}

TEST_CASE("largest-lesion items on a hand-built scene") {
  const Rules r = default_rules();
  Scene sc;
  sc.cube(1, 1, 1, 2, 1);   // 8 voxels, left upper lobe
  sc.cube(1, 6, 6, 2, 1);   // 8 voxels, left upper lobe
  sc.cube(8, 1, 1, 2, 1);   // 8 voxels, right upper lobe
  sc.cube(16, 3, 3, 3, 2);  // 27 voxels, right lower lobe, the largest
  const auto v = sc.voxels({{1, "lung nodule"}, {2, "consolidation"}});
  const auto m = measure_case("c", v, r);
  CHECK(m.has_lesion);
  CHECK(m.largest_region == "right lower lobe");
  CHECK(m.largest_ml == doctest::Approx(27 * 8 / 1000.0));
  CHECK(m.diameter_mm == doctest::Approx(std::sqrt(2.0) * 4.0));
  CHECK(m.slice_percentile == doctest::Approx(100.0 * 3 / 9));
  CHECK(m.nodule_count == 3);
  CHECK(m.nodules_by_lobe.at("left upper lobe") == 2);
  CHECK(m.nodules_by_lobe.at("right upper lobe") == 1);
  CHECK(m.nodules_by_lobe.at("right lower lobe") == 0);
  REQUIRE(m.delta_hu);
  CHECK(*m.delta_hu == doctest::Approx(880.0));

  const auto ci = generate_measured_items(entry("c", {"lung nodule", "consolidation"}), m, Cohort{}, r, 5);
  CHECK(find_item(ci, "largest_lesion_location")->answer() == "right lower lobe");
  CHECK(as_set(find_item(ci, "largest_lesion_location")->options) == as_set(kLobes));
  CHECK(find_item(ci, "largest_lesion_diameter")->answer() == format_mm(std::sqrt(2.0) * 4.0));
  CHECK(find_item(ci, "largest_lesion_slice")->answer() == "37.5%");
  CHECK(find_item(ci, "lesion_counting")->answer() == "3");
  const auto* byloc = find_item(ci, "lesion_count_by_location");
  REQUIRE(byloc);
  const auto lobe = byloc->values.at("lobe").get<std::string>();
  CHECK(byloc->answer() == std::to_string(m.nodules_by_lobe.at(lobe)));
  CHECK(byloc->question.find(lobe) != std::string::npos);
  CHECK(find_item(ci, "lesion_organ_hu_difference")->answer() == hu_bin_labels(r.hu_cutoffs)[3]);
  CHECK(find_item(ci, "attenuation_pattern")->answer() == "consolidation-dominant");
  CHECK_FALSE(find_item(ci, "organ_enlargement"));
  bool cohort_skip = false;
  for (const auto& s : ci.skipped) cohort_skip = cohort_skip || s.find("CohortTooSmall") != std::string::npos;
  CHECK(cohort_skip);
  for (const auto& it : ci.items) CHECK(audit_item(it, r) == "");

  SUBCASE("single 10-voxel lesion in the right lower lobe") {
    Scene one;
    for (int i = 0; i < 10; ++i) one.lesion[one.d.index(17, 4, i)] = 1;
    const auto m1 = measure_case("c1", one.voxels({{1, "lung mass"}}), r);
    const auto c1 = generate_measured_items(entry("c1", {"lung mass"}), m1, Cohort{}, r, 5);
    CHECK(find_item(c1, "largest_lesion_location")->answer() == "right lower lobe");
  }

  SUBCASE("no lesions skips lesion-dependent subtypes") {
    Scene none;
    const auto m0 = measure_case("c0", none.voxels({}), r);
    CHECK_FALSE(m0.has_lesion);
    const auto c0 = generate_measured_items(entry("c0", {}), m0, Cohort{}, r, 5);
    CHECK_FALSE(find_item(c0, "largest_lesion_diameter"));
    CHECK(find_item(c0, "lesion_counting")->answer() == "0");
    int nolesion = 0;
    for (const auto& s : c0.skipped) nolesion += s.find("NoLesions") != std::string::npos;
    CHECK(nolesion == 4);
  }
}

TEST_CASE("organ size items against a sorted cohort") {
  const Rules r = default_rules();
  Gen g(54);
  Cohort cohort;
  for (int i = 0; i < 100; ++i) cohort.lung_ml.push_back(g.uniform(3000, 6000));
  auto sorted = cohort.lung_ml;
  std::sort(sorted.begin(), sorted.end());
  auto pct = [&](double p) {
    const double h = (sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(h);
    return sorted[lo] + (h - lo) * (sorted[std::min(lo + 1, sorted.size() - 1)] - sorted[lo]);
  };
  auto items_for = [&](double ml) {
    CaseMeasurements m;
    m.case_id = "c";
    m.lung_ml = ml;
    m.left_ml = ml / 2;
    m.right_ml = ml / 2;
    return generate_measured_items(entry("c", {}), m, cohort, r, 6);
  };
  const auto med = items_for(pct(0.5));
  CHECK(find_item(med, "organ_enlargement")->answer() == "no");
  CHECK(find_item(med, "organ_atrophy")->answer() == "no");
  const auto big = items_for(sorted.back() + 1);
  const auto small = items_for(sorted.front() - 1);
  CHECK(find_item(big, "organ_enlargement")->answer() == "yes");
  CHECK(find_item(small, "organ_atrophy")->answer() == "yes");
  for (int t = 0; t < 200; ++t) {
    const double ml = g.uniform(2800, 6200);
    const auto ci = items_for(ml);
    CHECK(find_item(ci, "organ_enlargement")->answer() == (ml > pct(0.9) ? "yes" : "no"));
    CHECK(find_item(ci, "organ_atrophy")->answer() == (ml < pct(0.1) ? "yes" : "no"));
  }
}

TEST_CASE("grading items") {
  const Rules r = default_rules();
  auto grade_of = [&](std::optional<double> ei, std::optional<double> eff, const Cohort& cohort) {
    CaseMeasurements m;
    m.lung_ml = 4000;
    m.left_ml = m.right_ml = 2000;
    m.emphysema_index = ei;
    m.effusion_ratio = eff;
    return generate_measured_items(entry("c", {}), m, cohort, r, 7);
  };
  auto answer = [&](std::optional<double> ei, std::optional<double> eff, const Cohort& cohort, const char* s) {
    const auto ci = grade_of(ei, eff, cohort);
    const auto* it = find_item(ci, s);
    return it ? it->answer() : std::string("<missing>");
  };
  CHECK(answer(1.0, 0.0, Cohort{}, "emphysema_grading") == "severe");
  CHECK(answer(1.0, 0.0, Cohort{}, "effusion_grading") == "small");
  CHECK(answer(0.10, 0.05, Cohort{}, "effusion_grading") == "moderate");
  CHECK(answer(0.10, 0.10, Cohort{}, "effusion_grading") == "large");
  CHECK(answer(0.05, 0.10, Cohort{}, "emphysema_grading") == "moderate");

  Gen g(55);
  Cohort cohort;
  for (int i = 0; i < 90; ++i) cohort.emphysema_index.push_back(g.uniform(0.0, 0.4));
  auto sorted = cohort.emphysema_index;
  std::sort(sorted.begin(), sorted.end());
  const double t1 = sorted[29] + (89.0 / 3 - 29) * (sorted[30] - sorted[29]);
  const double t2 = sorted[59] + (2 * 89.0 / 3 - 59) * (sorted[60] - sorted[59]);
  for (int t = 0; t < 200; ++t) {
    const double ei = g.uniform(0.0, 0.4);
    const std::string want = ei < t1 ? "mild" : ei < t2 ? "moderate" : "severe";
    const auto ci = grade_of(ei, std::nullopt, cohort);
    const auto* it = find_item(ci, "emphysema_grading");
    REQUIRE(it);
    CHECK(it->answer() == want);
    CHECK(audit_item(*it, r) == "");
  }
  std::map<std::string, int> counts;
  for (double v : cohort.emphysema_index) ++counts[answer(v, std::nullopt, cohort, "emphysema_grading")];
  for (const auto& [k, n] : counts) CHECK(std::abs(n - 30) <= 1);
}

TEST_CASE("balance_and_sample") {
  SamplingPolicy policy;
  policy.per_subtype = 0;

  SUBCASE("30 yes and 30 no, target 40") {
    std::vector<VqaItem> pool;
    for (int i = 0; i < 60; ++i) pool.push_back(yes_no_item(fmt::format("c{:02}", i), i < 30));
    policy.per_subtype_override["lung_lesion_existence"] = 40;
    const auto res = balance_and_sample(pool, policy);
    CHECK(res.items.size() == 40);
    CHECK(res.shortfalls.empty());
    int yes = 0;
    for (const auto& it : res.items) yes += it.answer() == "yes";
    CHECK(yes == 20);
  }

  SUBCASE("50 yes and 10 no, target 40") {
    std::vector<VqaItem> pool;
    for (int i = 0; i < 60; ++i) pool.push_back(yes_no_item(fmt::format("c{:02}", i), i < 50));
    policy.per_subtype_override["lung_lesion_existence"] = 40;
    const auto res = balance_and_sample(pool, policy);
    CHECK(res.items.size() == 20);
    int yes = 0;
    for (const auto& it : res.items) yes += it.answer() == "yes";
    CHECK(yes == 10);
    REQUIRE(res.shortfalls.size() == 1);
    CHECK(res.shortfalls[0].content == "no");
    CHECK(res.shortfalls[0].wanted == 20);
    CHECK(res.shortfalls[0].available == 10);
    CHECK(res.report()["shortfalls"].size() == 1);
  }

  SUBCASE("one item per case and subtype, per-case cap, sources interleaved") {
    std::vector<VqaItem> pool;
    for (int i = 0; i < 40; ++i) {
      const auto src = i % 4 == 0 ? "rare" : "common";
      pool.push_back(yes_no_item(fmt::format("c{:02}", i), i % 2, src));
      pool.push_back(yes_no_item(fmt::format("c{:02}", i), i % 2, src));  // duplicate pair
      pool.push_back(yes_no_item(fmt::format("c{:02}", i), i % 2, src, "pleura_lesion_existence"));
    }
    policy.per_subtype_override = {{"lung_lesion_existence", 20}, {"pleura_lesion_existence", 40}};
    policy.per_case_cap = 1;
    const auto res = balance_and_sample(pool, policy);
    std::map<std::string, int> per_case;
    std::set<std::pair<std::string, std::string>> keys;
    std::map<std::string, int> sources;
    for (const auto& it : res.items) {
      ++per_case[it.case_id];
      CHECK(keys.insert({it.case_id, it.subtype}).second);
      if (it.subtype == "lung_lesion_existence") ++sources[it.source];
    }
    for (const auto& [c, n] : per_case) CHECK(n <= 1);
    // all rare cases answer "no"; that half is interleaved 5/5
    CHECK(sources["rare"] == 5);
    CHECK(sources["common"] == 15);
    CHECK(res.items.size() == 40);
  }

  SUBCASE("deterministic under a fixed seed") {
    std::vector<VqaItem> pool;
    for (int i = 0; i < 100; ++i) pool.push_back(yes_no_item(fmt::format("c{:03}", i), i % 3 == 0));
    policy.per_subtype_override["lung_lesion_existence"] = 30;
    policy.seed = 9;
    const auto a = balance_and_sample(pool, policy);
    auto shuffled = pool;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto b = balance_and_sample(shuffled, policy);
    CHECK(manifest_text(a.items) == manifest_text(b.items));
    policy.seed = 10;
    CHECK(manifest_text(balance_and_sample(pool, policy).items) != manifest_text(a.items));
  }
}

TEST_CASE("generated pool over a synthetic cohort") {
  const Rules r = default_rules();
  const auto cases = small_entries();
  const auto pool = generate_pool(cases, r, 11, 1);
  REQUIRE(pool.items.size() > 500);

  SUBCASE("every item audits and is well formed") {
    std::set<std::string> subtypes;
    for (const auto& it : pool.items) {
      CHECK(audit_item(it, r) == "");
      CHECK(as_set(it.options).size() == it.options.size());
      CHECK(it.answer_index >= 0);
      CHECK(it.answer_index < static_cast<int>(it.options.size()));
      CHECK(it.item_id == it.case_id + "/" + it.subtype);
      subtypes.insert(it.subtype);
    }
    CHECK(subtypes.size() == 17);
    // manifest round trip
    CHECK(parse_manifest(manifest_text(pool.items)) == pool.items);
  }

  SUBCASE("tampered answers fail the audit") {
    auto it = pool.items.front();
    it.answer_index = (it.answer_index + 1) % static_cast<int>(it.options.size());
    CHECK(audit_item(it, r) != "");
  }

  SUBCASE("deterministic and independent of the worker count") {
    const auto again = generate_pool(cases, r, 11, 3);
    CHECK(manifest_text(again.items) == manifest_text(pool.items));
    CHECK(again.skipped == pool.skipped);
    CHECK(manifest_text(generate_pool(cases, r, 12, 1).items) != manifest_text(pool.items));
  }

  SUBCASE("largest-lesion values match flood-fill oracles") {
    const auto& cohort = small_cohort();
    int checked = 0;
    for (std::size_t i = 0; i < cohort.size() && checked < 12; ++i) {
      const auto& v = cohort[i].voxels;
      const auto comps = testsupport::flood_fill(v.lesions.nonzero(), 26);
      std::vector<std::size_t> sizes;
      for (const auto& c : comps) sizes.push_back(c.size());
      std::sort(sizes.rbegin(), sizes.rend());
      if (sizes.empty() || sizes[0] < 2 || (sizes.size() > 1 && sizes[0] == sizes[1])) continue;
      const auto& big = *std::find_if(comps.begin(), comps.end(), [&](const auto& c) { return c.size() == sizes[0]; });
      const auto id = cohort[i].entry.case_id;
      auto item = [&](const std::string& s) {
        return std::find_if(pool.items.begin(), pool.items.end(),
                            [&](const VqaItem& it) { return it.case_id == id && it.subtype == s; });
      };
      const auto dia = item("largest_lesion_diameter");
      REQUIRE(dia != pool.items.end());
      CHECK(dia->values["diameter_mm"].get<double>() ==
            doctest::Approx(testsupport::diameter_all_pairs(big, v.lesions.dims(), v.lesions.spacing())));
      CHECK(dia->values["volume_ml"].get<double>() ==
            doctest::Approx(big.size() * v.lesions.spacing().voxel_mm3() / 1000.0));
      std::map<std::string, std::size_t> hits;
      for (auto idx : big) {
        const auto l = v.organs.data()[idx];
        const auto name = v.organs.name_of(l);
        if (l != 0 && std::find(kLobes.begin(), kLobes.end(), name) != kLobes.end()) ++hits[name];
      }
      const auto loc = item("largest_lesion_location");
      if (hits.empty()) {
        CHECK(loc == pool.items.end());
      } else {
        std::string best;
        std::size_t n = 0;
        for (const auto& [name, c] : hits)
          if (c > n) best = name, n = c;
        REQUIRE(loc != pool.items.end());
        CHECK(loc->answer() == best);
      }
      std::vector<std::size_t> area(static_cast<std::size_t>(v.lesions.dims().d), 0);
      for (auto idx : big) ++area[static_cast<std::size_t>(unravel(v.lesions.dims(), idx).z)];
      const auto zstar = std::max_element(area.begin(), area.end()) - area.begin();
      CHECK(item("largest_lesion_slice")->values["percentile"].get<double>() ==
            doctest::Approx(100.0 * zstar / (v.lesions.dims().d - 1)));
      ++checked;
    }
    CHECK(checked >= 5);
  }

  SUBCASE("balanced sample: closed contents within one and uniform answer positions") {
    SamplingPolicy policy;
    policy.per_subtype = 24;
    policy.seed = 11;
    const auto res = balance_and_sample(pool.items, policy);
    std::map<std::string, std::map<std::string, int>> content;
    std::map<std::string, int> per_case;
    for (const auto& it : res.items) {
      ++per_case[it.case_id];
      if (subtype_info(it.subtype).closed) ++content[it.subtype][it.answer()];
    }
    for (const auto& [c, n] : per_case) CHECK(n <= 17);
    for (const auto& [s, counts] : content) {
      int lo = INT32_MAX, hi = 0;
      for (const auto& o : subtype_info(s).closed ? pool.items : std::vector<VqaItem>{}) {
        if (o.subtype != s) continue;
        for (const auto& opt : o.options) {
          lo = std::min(lo, counts.count(opt) ? counts.at(opt) : 0);
          hi = std::max(hi, counts.count(opt) ? counts.at(opt) : 0);
        }
        break;
      }
      CHECK_MESSAGE(hi - lo <= 1, s);
    }
  }
}

TEST_CASE("answer positions over a large closed-set pool are uniform") {
  // Positions are independent of content for closed subtypes; test the
  // 4-option and 2-option strata separately on the full pool.
  const auto pool = generate_pool(small_entries(), default_rules(), 13, 1);
  std::map<std::size_t, std::vector<int>> by_k;
  for (const auto& it : pool.items) {
    if (!subtype_info(it.subtype).closed) continue;
    auto& v = by_k[it.options.size()];
    v.resize(it.options.size());
    ++v[static_cast<std::size_t>(it.answer_index)];
  }
  REQUIRE(by_k[2].size() == 2);
  int n2 = by_k[2][0] + by_k[2][1];
  CHECK(n2 >= 500);
  const double e = n2 / 2.0;
  const double chi2 = (by_k[2][0] - e) * (by_k[2][0] - e) / e + (by_k[2][1] - e) * (by_k[2][1] - e) / e;
  CHECK(chi2 < 6.634897);  // 1 dof, p = 0.01
}

}
