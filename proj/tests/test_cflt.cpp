#include <doctest.h>

#include <fstream>
#include <limits>
#include <numeric>

#include "medagent/error.hpp"
#include "medagent/cflt.hpp"
#include "medagent/kernels.hpp"
#include "support.hpp"

using namespace medagent;
using testsupport::Box;
using testsupport::Gen;
using testsupport::oracle_box;
using testsupport::oracle_rho;
using testsupport::oracle_score;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Heatmap random_heatmap(Gen& g, GridDims grid) {
  Heatmap h;
  h.grid = grid;
  h.values.resize(grid.cells());
  for (auto& v : h.values) v = g.uniform();
  return h;
}

FeatureField constant_field(GridDims grid, const std::vector<float>& v, Dims voxels) {
  std::vector<float> data;
  for (std::size_t c = 0; c < grid.cells(); ++c) data.insert(data.end(), v.begin(), v.end());
  return FeatureField(grid, v.size(), voxels, std::move(data));
}

}  // namespace

TEST_SUITE("cflt") {

TEST_CASE("similarity_heatmap") {
  const GridDims grid{8, 8, 4};
  const Dims vox{32, 32, 16};
  Gen g(31);
  const auto t = testsupport::random_vector(g, 16);

  SUBCASE("aligned and antipodal fields") {
    const auto h = similarity_heatmap(constant_field(grid, t, vox), TextEmbedding(t));
    for (double v : h.values) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
    std::vector<float> neg(t);
    for (auto& x : neg) x = -x;
    const auto hn = similarity_heatmap(constant_field(grid, neg, vox), TextEmbedding(t));
    for (double v : hn.values) CHECK(v == doctest::Approx(-1.0).epsilon(1e-6));
  }

  SUBCASE("random field matches per-cell cosine on every kernel set") {
    const auto f = testsupport::random_field(g, grid, 16, vox);
    for (auto isa : kernels::available()) {
      kernels::force(isa);
      const auto h = similarity_heatmap(f, TextEmbedding(t));
      for (std::size_t c = 0; c < grid.cells(); ++c) {
        CHECK(h.values[c] == doctest::Approx(testsupport::naive_cosine(f.vec(c), t)).epsilon(1e-6));
        CHECK(h.values[c] >= -1.0);
        CHECK(h.values[c] <= 1.0);
      }
    }
    kernels::force(kernels::available().back());
  }

  SUBCASE("zero-norm cells score 0 and are counted") {
    auto data = testsupport::random_field(g, grid, 16, vox).data();
    std::fill(data.begin(), data.begin() + 16 * 3, 0.0f);
    const auto h = similarity_heatmap(FeatureField(grid, 16, vox, data), TextEmbedding(t));
    CHECK(h.zero_norm_cells == 3);
    CHECK(h.values[0] == 0.0);
    CHECK(h.values[2] == 0.0);
  }

  SUBCASE("positive rescaling of the text vector leaves the heatmap unchanged") {
    const auto f = testsupport::random_field(g, grid, 16, vox);
    // values on a 2^-10 lattice so that 7·t is exact in float
    std::vector<float> tq(t), t7(t);
    for (std::size_t k = 0; k < t.size(); ++k) {
      tq[k] = std::round(t[k] * 1024.0f) / 1024.0f;
      t7[k] = tq[k] * 7.0f;
    }
    const auto a = similarity_heatmap(f, TextEmbedding(tq));
    const auto b = similarity_heatmap(f, TextEmbedding(t7));
    CHECK(a.values == b.values);
    CHECK(normalize_heatmap(a).values == normalize_heatmap(b).values);
  }

  SUBCASE("errors") {
    const auto f = testsupport::random_field(g, grid, 16, vox);
    CHECK_THROWS_AS(similarity_heatmap(f, TextEmbedding(std::vector<float>(8, 1.0f))), Error);
    try {
      similarity_heatmap(f, TextEmbedding(std::vector<float>(16, 0.0f)));
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::ZeroTextEmbedding);
    }
  }
}

TEST_CASE("normalize_heatmap") {
  Heatmap h;
  h.grid = {3, 1, 1};
  h.values = {-1.0, 0.0, 1.0};
  CHECK(normalize_heatmap(h).values == std::vector<double>{0.0, 0.5, 1.0});
  h.values = {0.3, 0.3, 0.3};
  CHECK(normalize_heatmap(h).values == std::vector<double>{0.5, 0.5, 0.5});

  Gen g(32);
  for (int t = 0; t < 20; ++t) {
    Heatmap r = random_heatmap(g, {5, 4, 3});
    for (auto& v : r.values) v = v * 2 - 1;
    r.values[7] = -kInf;
    const auto n = normalize_heatmap(r);
    double lo = kInf, hi = -kInf;
    for (double v : r.values)
      if (std::isfinite(v)) lo = std::min(lo, v), hi = std::max(hi, v);
    for (std::size_t c = 0; c < r.values.size(); ++c) {
      if (c == 7) {
        CHECK(std::isinf(n.values[c]));
        continue;
      }
      CHECK(n.values[c] == doctest::Approx((r.values[c] - lo) / (hi - lo)).epsilon(1e-12));
    }
  }
}

TEST_CASE("PatchGridMapping tiles the volume") {
  Gen g(33);
  for (int t = 0; t < 30; ++t) {
    const Dims v{g.integer(1, 40), g.integer(1, 40), g.integer(1, 30)};
    const GridDims grid{g.integer(1, v.h), g.integer(1, v.w), g.integer(1, v.d)};
    const PatchGridMapping m(grid, v);
    std::vector<int> cover(v.voxels(), 0);
    std::size_t total = 0;
    for (std::int64_t k = 0; k < grid.d; ++k)
      for (std::int64_t j = 0; j < grid.w; ++j)
        for (std::int64_t i = 0; i < grid.h; ++i) {
          const VoxelBox b = m.box(i, j, k);
          const Box o = oracle_box(grid, v, i, j, k);
          CHECK(b.x0 == o.x0);
          CHECK(b.x1 == o.x1);
          CHECK(b.z0 == o.z0);
          CHECK(b.z1 == o.z1);
          total += b.size();
          for (auto z = b.z0; z < b.z1; ++z)
            for (auto y = b.y0; y < b.y1; ++y)
              for (auto x = b.x0; x < b.x1; ++x) {
                ++cover[v.index(x, y, z)];
                const GridCell c = m.cell_of(x, y, z);
                CHECK((c.i == i && c.j == j && c.k == k));
              }
        }
    CHECK(total == v.voxels());
    CHECK(std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; }));
  }
}

TEST_CASE("crop_by_z_range") {
  const GridDims grid{4, 4, 5};
  const Dims vox{8, 8, 23};
  const PatchGridMapping m(grid, vox);
  Gen g(34);
  const Heatmap h = random_heatmap(g, grid);

  const auto full = crop_by_z_range(h, {0, vox.d - 1}, m);
  CHECK(full.values == h.values);
  CHECK_FALSE(full.empty_after_crop);

  const auto none = crop_by_z_range(h, {40, 50}, m);
  CHECK(none.empty_after_crop);
  CHECK(none.finite_cells() == 0);

  CHECK_THROWS_AS(crop_by_z_range(h, {10, 5}, m), Error);
  CHECK_THROWS_AS(crop_by_z_range(h, {-1, 5}, m), Error);

  for (int t = 0; t < 50; ++t) {
    const auto a = g.integer(0, vox.d - 1), b = g.integer(0, vox.d - 1);
    const ZRange r{std::min(a, b), std::max(a, b)};
    const auto c = crop_by_z_range(h, r, m);
    for (std::int64_t k = 0; k < grid.d; ++k) {
      const Box box = oracle_box(grid, vox, 0, 0, k);
      const bool keep = box.z0 <= r.z_max && box.z1 - 1 >= r.z_min;
      for (std::int64_t j = 0; j < grid.w; ++j)
        for (std::int64_t i = 0; i < grid.h; ++i) {
          if (keep) {
            CHECK(c.at(i, j, k) == h.at(i, j, k));
          } else {
            CHECK(c.at(i, j, k) == -kInf);
          }
        }
    }
  }
}

TEST_CASE("organ_overlap_ratio") {
  const GridDims grid{4, 4, 2};
  const Dims vox{16, 16, 8};
  const PatchGridMapping m(grid, vox);
  const BinaryMask full(vox, {}, std::vector<std::uint8_t>(vox.voxels(), 1));
  const BinaryMask none(vox, {});
  CHECK(organ_overlap_ratio({1, 2, 1}, full, m) == 1.0);
  CHECK(organ_overlap_ratio({1, 2, 1}, none, m) == 0.0);

  Gen g(35);
  for (int t = 0; t < 10; ++t) {
    const auto organ = testsupport::random_mask(g, vox, g.uniform());
    const auto grid_rho = organ_overlap_grid(organ, m);
    for (std::int64_t k = 0; k < grid.d; ++k)
      for (std::int64_t j = 0; j < grid.w; ++j)
        for (std::int64_t i = 0; i < grid.h; ++i) {
          const double want = oracle_rho(organ, oracle_box(grid, vox, i, j, k));
          CHECK(organ_overlap_ratio({i, j, k}, organ, m) == doctest::Approx(want).epsilon(1e-15));
          CHECK(grid_rho[grid.index(i, j, k)] == doctest::Approx(want).epsilon(1e-15));
        }
  }
}

TEST_CASE("score_roi") {
  SUBCASE("single cell one-term sum") {
    const GridDims grid{1, 1, 1};
    const Dims vox{2, 2, 1};
    const PatchGridMapping m(grid, vox);
    const BinaryMask organ(vox, {}, {1, 1, 0, 0});
    Heatmap h;
    h.grid = grid;
    h.values = {0.8};
    CHECK(score_roi(Roi::axial(0), h, organ, 0.5, m) == doctest::Approx(0.4));
    CHECK(score_roi(Roi::axial(0), h, organ, 0.9, m) == 0.0);
    CHECK_THROWS_AS(score_roi(Roi::axial(5), h, organ, 0.5, m), Error);
  }

  const GridDims grid{8, 8, 4};
  const Dims vox{24, 24, 18};
  const PatchGridMapping m(grid, vox);
  Gen g(36);

  SUBCASE("random slice and region ROIs match the brute-force sum") {
    for (int t = 0; t < 25; ++t) {
      const Heatmap h = random_heatmap(g, grid);
      const auto organ = testsupport::random_mask(g, vox, 0.4);
      const double tau = g.uniform();
      Roi slice = Roi::axial(g.integer(0, vox.d - 1));
      if (g.chance(0.5)) slice.slices.push_back(g.integer(0, vox.d - 1));
      const Roi region = Roi::sub_region("r", testsupport::random_blob(g, vox, 40));
      for (const Roi* r : {static_cast<const Roi*>(&slice), &region}) {
        CHECK(score_roi(*r, h, organ, tau, m) == doctest::Approx(oracle_score(*r, h, organ, tau, vox)).epsilon(1e-9));
      }
      CHECK(score_roi(slice, h, organ, 1.01, m) == 0.0);
    }
  }

  SUBCASE("lowering tau never decreases the score") {
    const Heatmap h = random_heatmap(g, grid);
    const auto organ = testsupport::random_mask(g, vox, 0.5);
    const Roi r = Roi::axial(9);
    double prev = -1.0;
    for (double tau = 1.0; tau >= 0.0; tau -= 0.05) {
      const double s = score_roi(r, h, organ, tau, m);
      CHECK(s >= prev);
      prev = s;
    }
  }

  SUBCASE("crop then score equals scoring with pruned cells excluded") {
    const Heatmap h = random_heatmap(g, grid);
    const auto organ = testsupport::random_mask(g, vox, 0.5);
    const ZRange range{5, 11};
    const auto cropped = crop_by_z_range(h, range, m);
    Heatmap manual = h;
    for (std::int64_t k = 0; k < grid.d; ++k) {
      const Box b = oracle_box(grid, vox, 0, 0, k);
      if (b.z1 - 1 < range.z_min || b.z0 > range.z_max)
        for (std::int64_t j = 0; j < grid.w; ++j)
          for (std::int64_t i = 0; i < grid.h; ++i) manual.values[grid.index(i, j, k)] = 0.0;
    }
    for (std::int64_t z = 0; z < vox.d; ++z) {
      CHECK(score_roi(Roi::axial(z), cropped, organ, 0.3, m) ==
            doctest::Approx(score_roi(Roi::axial(z), manual, organ, 0.3, m)).epsilon(1e-12));
    }
  }
}

TEST_CASE("rank_rois") {
  const GridDims grid{4, 4, 50};
  const Dims vox{8, 8, 50};
  const PatchGridMapping m(grid, vox);
  const BinaryMask organ(vox, {}, std::vector<std::uint8_t>(vox.voxels(), 1));
  Heatmap h;
  h.grid = grid;
  h.values.assign(grid.cells(), 0.0);

  SUBCASE("one candidate is rank 1 whatever its score") {
    const std::vector<Roi> c{Roi::axial(3)};
    const auto r = rank_rois(c, h, organ, 0.5, m, 3);
    REQUIRE(r.size() == 1);
    CHECK(r[0].rank == 1);
    CHECK(r[0].slice == 3);
    CHECK(r[0].score == 0.0);
  }

  SUBCASE("equal scores go to the lower slice") {
    for (std::int64_t k : {12, 40})
      for (std::int64_t j = 0; j < 4; ++j)
        for (std::int64_t i = 0; i < 4; ++i) h.values[grid.index(i, j, k)] = 0.9;
    const std::vector<Roi> c{Roi::axial(40), Roi::axial(12)};
    const auto r = rank_rois(c, h, organ, 0.5, m, 2);
    REQUIRE(r.size() == 2);
    CHECK(r[0].slice == 12);
    CHECK(r[1].slice == 40);
    CHECK(r[0].score == r[1].score);
    CHECK(r[0].location() == "slice:12");
  }

  SUBCASE("random candidates match full sort then truncate") {
    Gen g(37);
    for (int t = 0; t < 20; ++t) {
      for (auto& v : h.values) v = std::round(g.uniform() * 4) / 4;  // coarse values force ties
      std::vector<Roi> c;
      std::vector<std::int64_t> zs(vox.d);
      std::iota(zs.begin(), zs.end(), 0);
      std::shuffle(zs.begin(), zs.end(), g.eng);
      for (int n = 0; n < 20; ++n) c.push_back(Roi::axial(zs[n]));
      std::vector<std::pair<double, std::int64_t>> want;
      for (const auto& r : c) want.push_back({-oracle_score(r, h, organ, 0.5, vox), r.slices[0]});
      std::sort(want.begin(), want.end());
      const auto got = rank_rois(c, h, organ, 0.5, m, 3);
      REQUIRE(got.size() == 3);
      for (int k = 0; k < 3; ++k) {
        CHECK(got[k].rank == k + 1);
        CHECK(got[k].slice == want[k].second);
        CHECK(got[k].score == doctest::Approx(-want[k].first).epsilon(1e-12));
      }
      CHECK(rank_rois(c, h, organ, 0.5, m, 3) == got);
    }
  }

  SUBCASE("regions sort after slices on ties and by name") {
    const BinaryMask all(vox, {}, std::vector<std::uint8_t>(vox.voxels(), 1));
    const std::vector<Roi> c{Roi::sub_region("zeta", all), Roi::sub_region("alpha", all), Roi::axial(7)};
    const auto r = rank_rois(c, h, organ, 0.5, m, 5);
    REQUIRE(r.size() == 3);
    CHECK(r[0].location() == "slice:7");
    CHECK(r[1].location() == "region:alpha");
    CHECK(r[2].location() == "region:zeta");
  }

  SUBCASE("errors") {
    CHECK_THROWS_AS(rank_rois(std::vector<Roi>{}, h, organ, 0.5, m, 3), Error);
    const std::vector<Roi> c{Roi::axial(3)};
    CHECK_THROWS_AS(rank_rois(c, h, organ, 0.5, m, 0), Error);
  }
}

TEST_CASE("run_targeting finds a planted region and appends to memory") {
  const GridDims grid{8, 8, 10};
  const Dims vox{32, 32, 40};
  const std::size_t n = 16;
  std::vector<float> lesion(n, 0.0f), background(n, 0.0f);
  for (int k = 0; k < 4; ++k) lesion[k] = 1.0f;
  for (int k = 4; k < 8; ++k) background[k] = 1.0f;
  std::vector<float> data;
  for (std::int64_t k = 0; k < grid.d; ++k)
    for (std::int64_t j = 0; j < grid.w; ++j)
      for (std::int64_t i = 0; i < grid.h; ++i) {
        const bool hot = k == 6 && i >= 2 && i < 5 && j >= 3 && j < 6;
        const auto& v = hot ? lesion : background;
        data.insert(data.end(), v.begin(), v.end());
      }
  const FeatureField f(grid, n, vox, data);
  std::vector<std::uint8_t> om(vox.voxels(), 0);
  for (std::int64_t z = 8; z < 32; ++z)
    for (std::int64_t y = 4; y < 28; ++y)
      for (std::int64_t x = 4; x < 28; ++x) om[vox.index(x, y, z)] = 1;
  const BinaryMask organ(vox, {}, om);

  EvidenceMemory mem;
  const auto res = run_targeting(f, TextEmbedding(lesion), organ, {0.5, 3}, &mem);
  REQUIRE(res.ranked.size() == 3);
  for (const auto& c : res.ranked) {
    CHECK(c.slice >= 24);
    CHECK(c.slice < 28);
  }
  CHECK(res.ranked[0].slice == 24);
  CHECK(mem.roi_candidates().size() == 3);
}

TEST_CASE("tensor files round trip") {
  testsupport::TempDir tmp("cflt");
  Gen g(38);
  const auto f = testsupport::random_field(g, {3, 4, 5}, 6, {9, 8, 10});
  write_feature_field(tmp / "f.tensor", f);
  const auto back = read_feature_field(tmp / "f.tensor");
  CHECK(back.grid() == f.grid());
  CHECK(back.embed_dim() == 6);
  CHECK(back.voxel_dims() == f.voxel_dims());
  CHECK(back.data() == f.data());
  {
    std::ifstream in(tmp / "f.tensor", std::ios::binary);
    std::string header;
    std::getline(in, header);
    CHECK(header == "tensor dims=3,4,5,6 voxel_dims=9,8,10");
  }

  const TextEmbedding t(testsupport::random_vector(g, 6));
  write_text_embedding(tmp / "t.tensor", t);
  CHECK(read_text_embedding(tmp / "t.tensor").values() == t.values());

  std::ofstream(tmp / "bad.tensor") << "tensor dims=3,4,5,6 voxel_dims=9,8,10\nshort";
  CHECK_THROWS_AS(read_feature_field(tmp / "bad.tensor"), Error);
  CHECK_THROWS_AS(read_feature_field(tmp / "missing.tensor"), Error);
}

}
