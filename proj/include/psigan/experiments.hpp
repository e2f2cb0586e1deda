#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "psigan/config.hpp"
#include "psigan/metrics.hpp"
#include "psigan/trainer.hpp"

namespace psigan::experiments {

struct SuiteEntry {
  std::string name;
  nlohmann::json delta;  // keys merged over the base train config
};

struct AblationSuite {
  int schema_version = 1;
  std::string name;
  nlohmann::json base;  // base train config as JSON
  std::vector<uint64_t> seeds;
  std::vector<SuiteEntry> entries;
};

AblationSuite suite_from_json(const nlohmann::json& j);
AblationSuite load_suite(const std::filesystem::path& file);

// The default desk suite: Table-style loss settings 1..6 on a shared base.
AblationSuite desk_loss_suite(const std::string& manifest_path, const std::string& out_root,
                              std::vector<uint64_t> seeds);
// Structure-discriminator input variants i..v.
AblationSuite desk_variant_suite(const std::string& manifest_path, const std::string& out_root,
                                 std::vector<uint64_t> seeds);

struct ResolvedRun {
  std::string entry;
  uint64_t seed = 0;
  TrainConfig config;
};

// Exactly one config per (entry, seed); unknown keys or settings reject.
std::vector<ResolvedRun> expand_suite(const AblationSuite& suite);

struct ComparisonRow {
  std::string entry;
  double median_overall_dsc = 0.0;
  std::vector<double> per_seed_overall;
  std::vector<double> median_per_label_dsc;
  std::vector<double> median_per_label_kl;  // empty when the entry has no generator
  bool failed = false;
  std::string error;
};

struct ComparisonTable {
  std::vector<ComparisonRow> rows;
  nlohmann::json to_json(int num_labels) const;
  std::string to_tsv(int num_labels) const;
};

// Trains every (entry, seed), evaluates on target-test, then appends the
// no-adaptation baseline and the supervised ceiling. Completed runs are
// skipped by config hash; per-entry failures are recorded and the suite
// continues.
ComparisonTable run_suite(const AblationSuite& suite, const std::string& manifest_path,
                          const std::filesystem::path& out_dir);

double median(std::vector<double> values);

// Translate a split through a trained generator and report per-label
// KL(pseudo || real) of in-mask intensities.
struct TranslateResult {
  std::filesystem::path out_dir;
  int translated = 0;
  std::vector<double> kl_per_label;
};

TranslateResult translate_and_report(const std::filesystem::path& checkpoint,
                                     const std::string& direction,  // "c2m" | "m2c"
                                     const std::string& split,
                                     const std::filesystem::path& out_dir,
                                     int max_images = 0);

}  // namespace psigan::experiments
