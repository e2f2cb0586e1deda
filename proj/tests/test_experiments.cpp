#include <doctest.h>

#include "psigan/experiments.hpp"
#include "test_util.hpp"

using namespace psigan;
using namespace psigan::experiments;

TEST_SUITE("experiments") {

TEST_CASE("expand_suite yields one config per entry and seed") {
  const auto manifest_path = (testutil::micro_dataset().root / "manifest.json").string();
  auto suite = desk_loss_suite(manifest_path, "", {1, 2, 3});
  auto runs = expand_suite(suite);
  CHECK(runs.size() == 18);  // 6 settings x 3 seeds

  SUBCASE("setting 2 is the cycle-consistent baseline") {
    auto it = std::find_if(runs.begin(), runs.end(),
                           [](const ResolvedRun& r) { return r.entry == "setting2"; });
    REQUIRE(it != runs.end());
    auto mask = SettingMask::from_setting(it->config.ablation_setting);
    CHECK_FALSE(mask.strct);
    CHECK(mask.cyc);
    CHECK(mask.adv_cm);
    CHECK(mask.adv_mc);
  }
  SUBCASE("setting 3 disables cycle and global adversarial terms") {
    auto it = std::find_if(runs.begin(), runs.end(),
                           [](const ResolvedRun& r) { return r.entry == "setting3"; });
    REQUIRE(it != runs.end());
    auto mask = SettingMask::from_setting(it->config.ablation_setting);
    CHECK(mask.strct);
    CHECK_FALSE(mask.cyc);
    CHECK_FALSE(mask.adv_cm);
    CHECK_FALSE(mask.adv_mc);
  }
}

TEST_CASE("variant suite covers the five discriminator-input designs") {
  const auto manifest_path = (testutil::micro_dataset().root / "manifest.json").string();
  auto suite = desk_variant_suite(manifest_path, "", {1});
  auto runs = expand_suite(suite);
  CHECK(runs.size() == 5);
  std::set<PairVariant> variants;
  for (const auto& r : runs) variants.insert(r.config.pair_variant);
  CHECK(variants.size() == 5);
}

TEST_CASE("unknown setting id is rejected at expansion") {
  const auto manifest_path = (testutil::micro_dataset().root / "manifest.json").string();
  nlohmann::json j{
      {"schema_version", 1},
      {"name", "bad"},
      {"base", train_config_to_json(testutil::micro_train_config())},
      {"seeds", {1}},
      {"entries",
       {{{"name", "oops"}, {"delta", {{"ablation_setting", 9}}}}}}};
  j["base"]["dataset_manifest"] = manifest_path;
  auto suite = suite_from_json(j);
  CHECK_THROWS_AS(expand_suite(suite), std::invalid_argument);
}

TEST_CASE("duplicate entry names are rejected") {
  nlohmann::json j{
      {"schema_version", 1},
      {"name", "dup"},
      {"base", train_config_to_json(testutil::micro_train_config())},
      {"seeds", {1}},
      {"entries",
       {{{"name", "a"}, {"delta", nlohmann::json::object()}},
        {{"name", "a"}, {"delta", nlohmann::json::object()}}}}};
  CHECK_THROWS_AS(suite_from_json(j), std::invalid_argument);
}

TEST_CASE("median helper") {
  CHECK(median({3.0, 1.0, 2.0}) == 2.0);
  CHECK(median({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(median({7.0}) == 7.0);
  CHECK_THROWS_AS(median({}), std::invalid_argument);
}

TEST_CASE("micro suite run emits entries plus the two baseline rows") {
  // two tiny entries, one seed; a smoke run of the whole suite machinery
  auto base = testutil::micro_train_config(1);
  base.epochs_constant = 1;
  base.epochs_decay = 1;
  nlohmann::json j{{"schema_version", 1},
                   {"name", "micro"},
                   {"base", train_config_to_json(base)},
                   {"seeds", {1}},
                   {"entries",
                    {{{"name", "setting6"}, {"delta", {{"ablation_setting", 6}}}},
                     {{"name", "setting2"}, {"delta", {{"ablation_setting", 2}}}}}}};
  auto suite = suite_from_json(j);
  const auto out = testutil::fresh_dir("suite_out");
  auto table = run_suite(suite, base.dataset_manifest, out);

  REQUIRE(table.rows.size() == 4);  // 2 entries + no_adaptation + supervised
  CHECK(table.rows[0].entry == "setting6");
  CHECK(table.rows[1].entry == "setting2");
  CHECK(table.rows[2].entry == "no_adaptation");
  CHECK(table.rows[3].entry == "supervised");
  for (const auto& row : table.rows) {
    INFO(row.entry << ": " << row.error);
    CHECK_FALSE(row.failed);
    CHECK(row.median_overall_dsc >= 0.0);
    CHECK(row.median_overall_dsc <= 1.0);
  }
  // GAN entries carry a KL column, baselines do not
  CHECK(table.rows[0].median_per_label_kl.size() == 3);
  CHECK(table.rows[2].median_per_label_kl.empty());
  CHECK(std::filesystem::exists(out / "comparison.json"));
  CHECK(std::filesystem::exists(out / "comparison.tsv"));

  SUBCASE("rerun skips completed entries via the recorded hash") {
    auto table2 = run_suite(suite, base.dataset_manifest, out);
    REQUIRE(table2.rows.size() == 4);
    CHECK(table2.rows[0].median_overall_dsc ==
          doctest::Approx(table.rows[0].median_overall_dsc));
  }
}

}  // TEST_SUITE
