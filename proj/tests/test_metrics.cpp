#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>

#include "voxelgat/graph.hpp"
#include "voxelgat/metrics.hpp"

using namespace voxelgat;

namespace {

struct Coord {
  std::size_t z, y, x;
};

/// All-pairs nearest-voxel oracle, accumulating squared terms in the same
/// order as the distance transform so results can be compared bit-for-bit.
std::optional<double> brute_hd95(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& gt, Dims dims,
                                 std::array<double, 3> spacing) {
  std::vector<Coord> ps, gs;
  for (std::size_t z = 0; z < dims.d; ++z)
    for (std::size_t y = 0; y < dims.h; ++y)
      for (std::size_t x = 0; x < dims.w; ++x) {
        if (pred[dims.index(z, y, x)]) ps.push_back({z, y, x});
        if (gt[dims.index(z, y, x)]) gs.push_back({z, y, x});
      }
  if (ps.empty() && gs.empty()) return 0.0;
  if (ps.empty() || gs.empty()) return std::nullopt;

  auto d2 = [&](const Coord& a, const Coord& b) {
    double dx = (double(a.x) - double(b.x)) * spacing[2];
    double dy = (double(a.y) - double(b.y)) * spacing[1];
    double dz = (double(a.z) - double(b.z)) * spacing[0];
    return dz * dz + (dy * dy + dx * dx);
  };
  std::vector<double> dists;
  for (const Coord& p : ps) {
    double best = std::numeric_limits<double>::infinity();
    for (const Coord& g : gs) best = std::min(best, d2(p, g));
    dists.push_back(std::sqrt(best));
  }
  for (const Coord& g : gs) {
    double best = std::numeric_limits<double>::infinity();
    for (const Coord& p : ps) best = std::min(best, d2(g, p));
    dists.push_back(std::sqrt(best));
  }
  std::sort(dists.begin(), dists.end());
  return percentile_of_sorted(dists, 95.0);
}

std::vector<std::uint8_t> random_mask(Dims dims, double density, Rng& rng) {
  std::vector<std::uint8_t> m(dims.voxels(), 0);
  for (auto& v : m) v = rng.uniform() < density ? 1 : 0;
  return m;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("voxelgat_metrics_" + std::to_string(std::rand()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("overlap scores follow the 2TP over 2TP+FP+FN rule") {
  std::vector<std::uint8_t> a{1, 1, 1, 0, 0, 0, 1, 0};
  SECTION("identical nonempty masks score one") { CHECK(dice(a, a) == 1.0); }
  SECTION("disjoint nonempty masks score zero") {
    std::vector<std::uint8_t> b{0, 0, 0, 1, 1, 0, 0, 1};
    CHECK(dice(a, b) == 0.0);
  }
  SECTION("three hits, one false alarm, two misses") {
    std::vector<std::uint8_t> pred{1, 1, 1, 1, 0, 0, 0, 0, 0};
    std::vector<std::uint8_t> gt{1, 1, 1, 0, 1, 1, 0, 0, 0};
    CHECK(dice(pred, gt) == Catch::Approx(2.0 / 3.0).margin(1e-12));
  }
  SECTION("both empty is perfect, one empty is zero") {
    std::vector<std::uint8_t> empty(8, 0);
    CHECK(dice(empty, empty) == 1.0);
    CHECK(dice(a, empty) == 0.0);
    CHECK(dice(empty, a) == 0.0);
  }
  SECTION("mismatched sizes are rejected") {
    std::vector<std::uint8_t> b{1, 0};
    try {
      dice(a, b);
      FAIL("expected a contract error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::contract);
    }
  }
}

TEST_CASE("overlap score is symmetric and permutation-invariant") {
  Rng rng(5);
  Dims dims{4, 4, 4};
  auto p = random_mask(dims, 0.3, rng);
  auto g = random_mask(dims, 0.4, rng);
  CHECK(dice(p, g) == dice(g, p));

  std::vector<std::size_t> perm(dims.voxels());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  fisher_yates(perm, rng);
  std::vector<std::uint8_t> pp(perm.size()), gp(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    pp[perm[i]] = p[i];
    gp[perm[i]] = g[i];
  }
  CHECK(dice(pp, gp) == dice(p, g));
}

TEST_CASE("distance percentile of identical masks is zero") {
  Rng rng(7);
  Dims dims{5, 5, 5};
  auto m = random_mask(dims, 0.3, rng);
  auto h = hd95(m, m, dims, {1, 1, 1});
  REQUIRE(h.has_value());
  CHECK(*h == 0.0);
}

TEST_CASE("empty-mask conventions for the distance percentile") {
  Dims dims{3, 3, 3};
  std::vector<std::uint8_t> empty(27, 0), one(27, 0);
  one[13] = 1;
  auto both = hd95(empty, empty, dims, {1, 1, 1});
  REQUIRE(both.has_value());
  CHECK(*both == 0.0);
  CHECK(!hd95(one, empty, dims, {1, 1, 1}).has_value());
  CHECK(!hd95(empty, one, dims, {1, 1, 1}).has_value());
}

TEST_CASE("two voxels five apart on one axis are five millimeters apart") {
  Dims dims{1, 1, 8};
  std::vector<std::uint8_t> p(8, 0), g(8, 0);
  p[1] = 1;
  g[6] = 1;
  auto h = hd95(p, g, dims, {1, 1, 1});
  REQUIRE(h.has_value());
  CHECK(*h == 5.0);
}

TEST_CASE("distance transform percentile matches the all-pairs oracle exactly") {
  Dims dims{8, 8, 8};
  std::array<std::array<double, 3>, 2> spacings{{{1.0, 1.0, 1.0}, {2.0, 0.5, 1.25}}};
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto spacing = spacings[trial % 2];
    double density = trial < 4 ? 0.0 : 0.02 + 0.2 * rng.uniform();
    auto p = random_mask(dims, trial == 2 ? 0.1 : density, rng);
    auto g = random_mask(dims, trial == 3 ? 0.1 : density, rng);
    auto fast = hd95(p, g, dims, spacing);
    auto slow = brute_hd95(p, g, dims, spacing);
    REQUIRE(fast.has_value() == slow.has_value());
    if (fast) {
      INFO("trial " << trial);
      CHECK(*fast == *slow);
    }
  }
}

TEST_CASE("distance percentile is symmetric and translation-invariant") {
  Dims dims{10, 10, 10};
  Rng rng(13);
  std::vector<std::uint8_t> p(dims.voxels(), 0), g(dims.voxels(), 0);
  for (std::size_t z = 0; z < 5; ++z)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        if (rng.uniform() < 0.3) p[dims.index(z, y, x)] = 1;
        if (rng.uniform() < 0.3) g[dims.index(z, y, x)] = 1;
      }
  auto a = hd95(p, g, dims, {2, 0.5, 1});
  auto b = hd95(g, p, dims, {2, 0.5, 1});
  REQUIRE(a.has_value());
  CHECK(*a == *b);

  std::vector<std::uint8_t> ps(dims.voxels(), 0), gs(dims.voxels(), 0);
  for (std::size_t z = 0; z < 5; ++z)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 5; ++x) {
        ps[dims.index(z + 2, y + 1, x + 3)] = p[dims.index(z, y, x)];
        gs[dims.index(z + 2, y + 1, x + 3)] = g[dims.index(z, y, x)];
      }
  auto shifted = hd95(ps, gs, dims, {2, 0.5, 1});
  CHECK(*shifted == *a);
}

TEST_CASE("the 95th percentile never exceeds the maximum distance") {
  Dims dims{6, 6, 6};
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    auto p = random_mask(dims, 0.1, rng);
    auto g = random_mask(dims, 0.1, rng);
    auto h = hd95(p, g, dims, {1, 1, 1});
    if (!h) continue;
    auto to_gt = detail::edt2(g, dims, {1, 1, 1});
    auto to_pred = detail::edt2(p, dims, {1, 1, 1});
    double hmax = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (p[i]) hmax = std::max(hmax, std::sqrt(to_gt[i]));
      if (g[i]) hmax = std::max(hmax, std::sqrt(to_pred[i]));
    }
    CHECK(*h <= hmax + 1e-12);
  }
}

namespace {

LabelVolume nested_blocks(Dims dims) {
  LabelVolume lv;
  lv.dims = dims;
  lv.labels.assign(dims.voxels(), 0);
  for (std::size_t z = 2; z < 8; ++z)
    for (std::size_t y = 2; y < 8; ++y)
      for (std::size_t x = 2; x < 8; ++x) lv.labels[dims.index(z, y, x)] = 2;
  for (std::size_t z = 3; z < 7; ++z)
    for (std::size_t y = 3; y < 7; ++y)
      for (std::size_t x = 3; x < 7; ++x) lv.labels[dims.index(z, y, x)] = 3;
  for (std::size_t z = 4; z < 6; ++z)
    for (std::size_t y = 4; y < 6; ++y)
      for (std::size_t x = 4; x < 6; ++x) lv.labels[dims.index(z, y, x)] = 1;
  return lv;
}

}  // namespace

TEST_CASE("evaluating a perfect prediction gives unit overlap and zero distance") {
  LabelVolume gt = nested_blocks({10, 10, 10});
  EvalReport r = evaluate(gt, gt);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.regions[i].dice == 1.0);
    REQUIRE(r.regions[i].hd95.has_value());
    CHECK(*r.regions[i].hd95 == 0.0);
    CHECK(r.regions[i].fp == 0);
    CHECK(r.regions[i].fn == 0);
  }
  CHECK(r.regions[0].tp == 6 * 6 * 6);  // whole tumor
  CHECK(r.regions[1].tp == 4 * 4 * 4);  // tumor core: classes 1 and 3
  CHECK(r.regions[2].tp == 4 * 4 * 4 - 2 * 2 * 2);  // enhancing only
}

TEST_CASE("an all-background prediction scores zero with undefined distances") {
  LabelVolume gt = nested_blocks({10, 10, 10});
  LabelVolume pred;
  pred.dims = gt.dims;
  pred.labels.assign(gt.dims.voxels(), 0);
  EvalReport r = evaluate(pred, gt);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.regions[i].dice == 0.0);
    CHECK(!r.regions[i].hd95.has_value());
    CHECK(r.regions[i].tp == 0);
  }

  SECTION("shape and spacing mismatches are rejected") {
    LabelVolume other = gt;
    other.dims = {10, 10, 9};
    other.labels.resize(other.dims.voxels());
    CHECK_THROWS_AS(evaluate(other, gt), Error);
    other = gt;
    other.spacing = {1, 1, 2};
    CHECK_THROWS_AS(evaluate(other, gt), Error);
  }
}

TEST_CASE("a piecewise-constant labeling survives the graph round trip untouched") {
  Dims dims{6, 6, 6};
  SupervoxelLabeling s;
  s.dims = dims;
  s.assignment.resize(dims.voxels());
  // 2x2x2 grid of 3^3 blocks, one cluster each.
  for (std::size_t z = 0; z < 6; ++z)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 6; ++x)
        s.assignment[dims.index(z, y, x)] =
            std::uint32_t((z / 3) * 4 + (y / 3) * 2 + (x / 3));
  s.centroids.resize(8, {0, 0, 0, 0, 0, 0, 0});
  s.sizes.assign(8, 27);
  s.validate();

  LabelVolume gt;
  gt.dims = dims;
  gt.labels.resize(dims.voxels());
  std::array<std::uint8_t, 8> cls{0, 1, 2, 3, 3, 2, 1, 0};
  for (std::size_t i = 0; i < dims.voxels(); ++i) gt.labels[i] = cls[s.assignment[i]];

  std::vector<std::uint8_t> node_labels = attach_labels(s, gt);
  LabelVolume pred = project_to_voxels(s, node_labels);
  EvalReport r = evaluate(pred, gt);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.regions[i].dice == 1.0);
    CHECK(*r.regions[i].hd95 == 0.0);
  }
}

TEST_CASE("evaluation reports round-trip through JSON") {
  TempDir dir;
  EvalReport r;
  r.id = "case_017";
  r.regions[0] = {0.875, 3.25, 700, 50, 150};
  r.regions[1] = {0.5, std::nullopt, 10, 5, 15};
  r.regions[2] = {1.0, 0.0, 42, 0, 0};
  r.has_node_counts = true;
  r.nodes_actual = {900, 40, 30, 20};
  r.nodes_predicted = {905, 38, 29, 18};

  std::string path = dir.file("eval.json");
  save_eval_json(path, r);
  EvalReport back = load_eval_json(path);
  CHECK(back.id == r.id);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.regions[i].dice == r.regions[i].dice);
    CHECK(back.regions[i].hd95 == r.regions[i].hd95);
    CHECK(back.regions[i].tp == r.regions[i].tp);
    CHECK(back.regions[i].fp == r.regions[i].fp);
    CHECK(back.regions[i].fn == r.regions[i].fn);
  }
  CHECK(back.has_node_counts);
  CHECK(back.nodes_actual == r.nodes_actual);
  CHECK(back.nodes_predicted == r.nodes_predicted);

  SECTION("garbage is rejected as an input error") {
    std::string bad = dir.file("bad.json");
    std::ofstream(bad) << "{ not json";
    try {
      load_eval_json(bad);
      FAIL("expected an io error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::io);
    }
  }
}

TEST_CASE("the CSV row renders undefined distances as empty fields") {
  EvalReport r;
  r.id = "vol1";
  r.regions[0] = {0.5, 2.5, 0, 0, 0};
  r.regions[1] = {0.25, std::nullopt, 0, 0, 0};
  r.regions[2] = {1.0, 0.0, 0, 0, 0};
  CHECK(eval_csv_header() == "id,dice_wt,hd95_wt,dice_tc,hd95_tc,dice_et,hd95_et");
  CHECK(eval_csv_row(r) == "vol1,0.5,2.5,0.25,,1,0");
}

TEST_CASE("aggregation takes means and medians per region, skipping undefined distances") {
  EvalReport a, b, c;
  for (EvalReport* r : {&a, &b, &c})
    for (std::size_t i = 0; i < 3; ++i) r->regions[i] = {0.0, 0.0, 0, 0, 0};
  a.regions[0].dice = 0.8;
  b.regions[0].dice = 0.9;
  c.regions[0].dice = 1.0;
  a.regions[0].hd95 = 2.0;
  b.regions[0].hd95 = 4.0;
  c.regions[0].hd95 = std::nullopt;

  Aggregate agg = aggregate({a, b, c});
  CHECK(agg.count == 3);
  CHECK(agg.regions[0].mean_dice == Catch::Approx(0.9).margin(1e-12));
  CHECK(agg.regions[0].median_dice == Catch::Approx(0.9).margin(1e-12));
  CHECK(agg.regions[0].hd95_defined == 2);
  CHECK(agg.regions[0].mean_hd95 == Catch::Approx(3.0).margin(1e-12));
  CHECK(agg.regions[0].median_hd95 == Catch::Approx(3.0).margin(1e-12));
}
