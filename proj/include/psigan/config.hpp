#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json_fwd.hpp>

#include "psigan/losses.hpp"
#include "psigan/models.hpp"

namespace psigan {

struct TrainConfig {
  int schema_version = 1;
  std::string dataset_manifest;  // path to manifest.json
  std::string out_dir;           // empty -> <output root>/run_<hash>

  int epochs_constant = 30;  // constant-lr phase
  int epochs_decay = 30;     // linear decay to exactly 0
  double lr = 1e-4;
  int batch_size = 2;
  double beta1 = 0.5, beta2 = 0.999;

  GanForm loss_form = GanForm::LeastSquares;
  PairVariant pair_variant = PairVariant::ImgSegAgg;
  SegmentorMode segmentor_mode = SegmentorMode::Split;
  int ablation_setting = 6;
  LossWeights weights;

  uint64_t seed = 1;
  bool deterministic = true;
  int checkpoint_every_epochs = 1;
  int snapshot_every_epochs = 1;
  int max_iters_per_epoch = 0;  // 0 = full epoch; smaller for smoke runs

  // desk-scale model preset; the paper-scale shapes are exercised in tests only
  int gen_base_width = 16;
  int gen_res_blocks = 6;
  int disc_base_width = 16;
  int disc_layers = 4;
  int seg_base_width = 16;

  bool fake_image_buffer = false;  // optional history buffer for D updates
  double grad_clip = 0.0;          // 0 = abort-on-NaN policy, no clipping

  int total_epochs() const { return epochs_constant + epochs_decay; }
  models::BundleSpec bundle_spec(int num_labels) const;
};

// Constant for the first epochs_constant epochs, then linear to exactly 0 at
// the final epoch boundary. Errors outside [0, total).
double lr_at(const TrainConfig& config, int epoch);

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);  // rejects unknown keys
TrainConfig load_train_config(const std::filesystem::path& file);
void save_train_config(const TrainConfig& c, const std::filesystem::path& file);

// Canonical serialization (sorted keys, no whitespace) and its FNV-1a 64 hash;
// the hash names run directories.
std::string canonical_json(const nlohmann::json& j);
std::string fnv1a64_hex(const std::string& s);
std::string config_hash(const TrainConfig& c);

// Output root override for relative paths (PSIGAN_OUTPUT_ROOT).
std::filesystem::path resolve_out_dir(const std::string& dir);

}  // namespace psigan
