#include <doctest.h>

#include <fstream>

#include "psigan/synthdata.hpp"
#include "test_util.hpp"

using namespace psigan;
using namespace psigan::synth;

TEST_SUITE("synthdata") {

TEST_CASE("sample_anatomy is deterministic and places K-1 organs") {
  auto a = sample_anatomy(7, 2, 64);
  auto b = sample_anatomy(7, 2, 64);
  CHECK(a.organs.size() == 1);
  REQUIRE(a.organs.size() == b.organs.size());
  CHECK(a.organs[0].cx == b.organs[0].cx);
  CHECK(a.organs[0].cy == b.organs[0].cy);
  CHECK(a.organs[0].rotation == b.organs[0].rotation);
  CHECK(a.organs[0].texture_seed == b.organs[0].texture_seed);
}

TEST_CASE("sample_anatomy rejects bad arguments") {
  CHECK_THROWS_WITH_AS(sample_anatomy(7, 1, 64), "sample_anatomy: K must be >= 2",
                       std::invalid_argument);
  CHECK_THROWS_AS(sample_anatomy(7, 4, 16), std::invalid_argument);
}

TEST_CASE("organs lie fully inside the canvas for 100 seeds") {
  // brute-force bounds check over the perturbed boundary
  int organs_checked = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    auto scene = sample_anatomy(seed, 4, 64);
    REQUIRE(scene.organs.size() == 3);
    for (const auto& organ : scene.organs) {
      ++organs_checked;
      const double r = organ.bounding_radius();
      CHECK(organ.cx - r >= 0.0);
      CHECK(organ.cy - r >= 0.0);
      CHECK(organ.cx + r <= 63.0);
      CHECK(organ.cy + r <= 63.0);
      // no rasterized pixel of this organ may touch the canvas border
      for (int i = 0; i < 64; ++i) {
        CHECK_FALSE(organ.contains(i, 0));
        CHECK_FALSE(organ.contains(i, 63));
        CHECK_FALSE(organ.contains(0, i));
        CHECK_FALSE(organ.contains(63, i));
      }
    }
  }
  CHECK(organs_checked == 300);
}

TEST_CASE("labels are unique per scene") {
  auto scene = sample_anatomy(3, 4, 64);
  std::set<int> labels;
  for (const auto& o : scene.organs) labels.insert(o.label);
  CHECK(labels == std::set<int>{1, 2, 3});
}

TEST_CASE("rasterized mask matches the analytic membership test") {
  auto scene = sample_anatomy(21, 4, 64);
  auto mask = rasterize_mask(scene);
  auto acc = mask.accessor<int64_t, 2>();
  // organs do not overlap, so membership determines the label directly
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      int64_t expected = 0;
      for (const auto& o : scene.organs) {
        if (o.contains(x, y)) expected = o.label;
      }
      REQUIRE(acc[y][x] == expected);
    }
  }
}

TEST_CASE("unperturbed organ pixel count stays within a perimeter of pi*a*b") {
  auto scene = sample_anatomy(33, 3, 64);
  for (auto& o : scene.organs) o.wobble_amp = {0.0, 0.0, 0.0};
  auto mask = rasterize_mask(scene);
  for (const auto& o : scene.organs) {
    const auto count = (mask == o.label).sum().item<int64_t>();
    const double perimeter = M_PI * (3.0 * (o.ax_major + o.ax_minor) -
                                     std::sqrt((3 * o.ax_major + o.ax_minor) *
                                               (o.ax_major + 3 * o.ax_minor)));
    CHECK(std::abs(static_cast<double>(count) - o.ellipse_area()) <= perimeter);
  }
}

TEST_CASE("render: geometry is style-invariant, histograms are not") {
  auto scene = sample_anatomy(5, 4, 64);
  auto sa = render(scene, desk_style_source(4), 99);
  auto sb = render(scene, desk_style_target(4), 99);
  CHECK(torch::equal(sa.mask, sb.mask));
  // different per-label means must shift the image mean noticeably
  const double mean_a = sa.image.mean().item<double>();
  const double mean_b = sb.image.mean().item<double>();
  CHECK(std::abs(mean_a - mean_b) > 100.0);
  CHECK(sa.image.min().item<double>() >= desk_style_source(4).raw_lo);
  CHECK(sa.image.max().item<double>() <= desk_style_source(4).raw_hi);
}

TEST_CASE("render: degenerate style is piecewise constant per label") {
  auto scene = sample_anatomy(5, 3, 64);
  auto style = desk_style_source(3);
  style.noise_amp = 0.0;
  style.texture_amp = 0.0;
  style.bias_amp = 0.0;
  style.label_stddevs.assign(3, 0.0);
  auto s = render(scene, style, 1);
  for (int label = 0; label < 3; ++label) {
    auto sel = s.image.masked_select(s.mask == label);
    if (sel.numel() == 0) continue;
    CHECK(sel.max().item<double>() == doctest::Approx(sel.min().item<double>()));
    CHECK(sel.max().item<double>() == doctest::Approx(style.label_means[label]));
  }
}

TEST_CASE("render: empirical per-label means match the configured style") {
  auto scene = sample_anatomy(8, 4, 64);
  const auto style = desk_style_target(4);  // the harder case: bias field on
  const int n_renders = 50;
  auto mask_full = rasterize_mask(scene);
  for (int label = 0; label < 4; ++label) {
    // per-render means are iid across noise seeds; pixels within one render
    // are correlated through the smooth fields, so pool at the render level
    auto mask = mask_full == label;
    std::vector<double> means;
    for (int r = 0; r < n_renders; ++r) {
      auto s = render(scene, style, 1000 + r);
      means.push_back(s.image.masked_select(mask).to(torch::kFloat64).mean().item<double>());
    }
    double m = 0;
    for (double v : means) m += v;
    m /= n_renders;
    double var = 0;
    for (double v : means) var += (v - m) * (v - m);
    var /= (n_renders - 1);
    const double bound = 3.0 * std::sqrt(var / n_renders);
    CHECK(std::abs(m - style.label_means[label]) <= bound);
  }
}

TEST_CASE("build_dataset: counts, determinism, unpairedness, overwrite guard") {
  auto cfg = testutil::micro_synth_config(123);
  const auto dir_a = testutil::fresh_dir("ds_a");
  const auto dir_b = testutil::fresh_dir("ds_b");
  auto ma = build_dataset(cfg, dir_a);
  auto mb = build_dataset(cfg, dir_b);

  CHECK(ma.source_train.size() == 16);
  CHECK(ma.target_train.size() == 16);
  CHECK(ma.target_val.size() == 4);
  CHECK(ma.target_test.size() == 6);

  SUBCASE("rebuild with the same config is byte-identical") {
    for (const auto* split : {&ma.source_train, &ma.target_train}) {
      for (const auto& e : *split) {
        std::ifstream fa(dir_a / e.image, std::ios::binary);
        std::ifstream fb(dir_b / e.image, std::ios::binary);
        std::stringstream ba, bb;
        ba << fa.rdbuf();
        bb << fb.rdbuf();
        REQUIRE(ba.str() == bb.str());
      }
    }
  }

  SUBCASE("scene ids are disjoint between source and target splits") {
    std::set<int64_t> src_ids, tgt_ids;
    for (const auto& e : ma.source_train) src_ids.insert(e.scene_id);
    for (const auto* split : {&ma.target_train, &ma.target_val, &ma.target_test})
      for (const auto& e : *split) tgt_ids.insert(e.scene_id);
    std::vector<int64_t> overlap;
    std::set_intersection(src_ids.begin(), src_ids.end(), tgt_ids.begin(), tgt_ids.end(),
                          std::back_inserter(overlap));
    CHECK(overlap.empty());
  }

  SUBCASE("target-train masks live only in the eval-only files") {
    for (const auto& e : ma.target_train) {
      CHECK(e.mask.empty());
      CHECK_FALSE(e.eval_mask.empty());
    }
    for (const auto& e : ma.source_train) CHECK_FALSE(e.mask.empty());
  }

  SUBCASE("refuses to overwrite an existing manifest unless forced") {
    CHECK_THROWS_AS(build_dataset(cfg, dir_a), std::runtime_error);
    CHECK_NOTHROW(build_dataset(cfg, dir_a, /*force=*/true));
  }
}

TEST_CASE("manifest round-trips losslessly") {
  const auto& m = testutil::micro_dataset();
  const auto file_a = testutil::fresh_dir("manifest") / "a.json";
  const auto file_b = file_a.parent_path() / "b.json";
  save_manifest(m, file_a);
  auto loaded = load_manifest(file_a);
  save_manifest(loaded, file_b);
  std::ifstream fa(file_a), fb(file_b);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(loaded.num_labels == m.num_labels);
  CHECK(loaded.target_test.size() == m.target_test.size());
}

TEST_CASE("image files quantize and dequantize consistently") {
  const auto& m = testutil::micro_dataset();
  auto raw = load_image_raw(m, m.source_train[0], m.style_source);
  CHECK(raw.min().item<double>() >= m.style_source.raw_lo);
  CHECK(raw.max().item<double>() <= m.style_source.raw_hi);
  auto mask = load_mask(m, m.source_train[0].mask);
  CHECK(mask.max().item<int64_t>() < m.num_labels);
  CHECK(mask.sizes() == raw.sizes());
}

}  // TEST_SUITE
