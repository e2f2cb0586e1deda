#include "psigan/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace psigan {

using nlohmann::json;

models::BundleSpec TrainConfig::bundle_spec(int num_labels) const {
  models::BundleSpec spec;
  spec.generator = models::desk_generator_spec(gen_base_width, gen_res_blocks);
  spec.disc_base_width = disc_base_width;
  spec.disc_layers = disc_layers;
  spec.seg_base_width = seg_base_width;
  spec.num_labels = num_labels;
  spec.variant = pair_variant;
  spec.mode = segmentor_mode;
  return spec;
}

double lr_at(const TrainConfig& config, int epoch) {
  const int total = config.total_epochs();
  if (epoch < 0 || epoch >= total)
    throw std::out_of_range("lr_at: epoch " + std::to_string(epoch) + " outside [0," +
                            std::to_string(total) + ")");
  if (epoch < config.epochs_constant) return config.lr;
  const int into_decay = epoch - config.epochs_constant;
  return config.lr * static_cast<double>(config.epochs_decay - into_decay) /
         static_cast<double>(config.epochs_decay);
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"schema_version", c.schema_version},
              {"dataset_manifest", c.dataset_manifest},
              {"out_dir", c.out_dir},
              {"epochs_constant", c.epochs_constant},
              {"epochs_decay", c.epochs_decay},
              {"lr", c.lr},
              {"batch_size", c.batch_size},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"loss_form", to_string(c.loss_form)},
              {"pair_variant", to_string(c.pair_variant)},
              {"segmentor_mode", to_string(c.segmentor_mode)},
              {"ablation_setting", c.ablation_setting},
              {"lambda_cyc", c.weights.lambda_cyc},
              {"lambda_struct", c.weights.lambda_struct},
              {"lambda_seg", c.weights.lambda_seg},
              {"seed", c.seed},
              {"deterministic", c.deterministic},
              {"checkpoint_every_epochs", c.checkpoint_every_epochs},
              {"snapshot_every_epochs", c.snapshot_every_epochs},
              {"max_iters_per_epoch", c.max_iters_per_epoch},
              {"gen_base_width", c.gen_base_width},
              {"gen_res_blocks", c.gen_res_blocks},
              {"disc_base_width", c.disc_base_width},
              {"disc_layers", c.disc_layers},
              {"seg_base_width", c.seg_base_width},
              {"fake_image_buffer", c.fake_image_buffer},
              {"grad_clip", c.grad_clip}};
}

TrainConfig train_config_from_json(const json& j) {
  static const std::set<std::string> known = {
      "schema_version",  "dataset_manifest", "out_dir",
      "epochs_constant", "epochs_decay",     "lr",
      "batch_size",      "beta1",            "beta2",
      "loss_form",       "pair_variant",     "segmentor_mode",
      "ablation_setting", "lambda_cyc",      "lambda_struct",
      "lambda_seg",      "seed",             "deterministic",
      "checkpoint_every_epochs", "snapshot_every_epochs", "max_iters_per_epoch",
      "gen_base_width",  "gen_res_blocks",   "disc_base_width",
      "disc_layers",     "seg_base_width",   "fake_image_buffer",
      "grad_clip"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.count(it.key()))
      throw std::invalid_argument("train config: unknown key '" + it.key() + "'");
  }
  TrainConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("schema_version", c.schema_version);
  if (c.schema_version != 1)
    throw std::invalid_argument("train config: unsupported schema_version " +
                                std::to_string(c.schema_version));
  get("dataset_manifest", c.dataset_manifest);
  get("out_dir", c.out_dir);
  get("epochs_constant", c.epochs_constant);
  get("epochs_decay", c.epochs_decay);
  get("lr", c.lr);
  get("batch_size", c.batch_size);
  get("beta1", c.beta1);
  get("beta2", c.beta2);
  if (j.contains("loss_form")) c.loss_form = gan_form_from_string(j.at("loss_form"));
  if (j.contains("pair_variant")) c.pair_variant = pair_variant_from_string(j.at("pair_variant"));
  if (j.contains("segmentor_mode"))
    c.segmentor_mode = segmentor_mode_from_string(j.at("segmentor_mode"));
  get("ablation_setting", c.ablation_setting);
  get("lambda_cyc", c.weights.lambda_cyc);
  get("lambda_struct", c.weights.lambda_struct);
  get("lambda_seg", c.weights.lambda_seg);
  get("seed", c.seed);
  get("deterministic", c.deterministic);
  get("checkpoint_every_epochs", c.checkpoint_every_epochs);
  get("snapshot_every_epochs", c.snapshot_every_epochs);
  get("max_iters_per_epoch", c.max_iters_per_epoch);
  get("gen_base_width", c.gen_base_width);
  get("gen_res_blocks", c.gen_res_blocks);
  get("disc_base_width", c.disc_base_width);
  get("disc_layers", c.disc_layers);
  get("seg_base_width", c.seg_base_width);
  get("fake_image_buffer", c.fake_image_buffer);
  get("grad_clip", c.grad_clip);

  SettingMask::from_setting(c.ablation_setting);  // validate
  if (c.epochs_constant < 0 || c.epochs_decay < 0 || c.total_epochs() == 0)
    throw std::invalid_argument("train config: bad epoch schedule");
  if (c.batch_size <= 0) throw std::invalid_argument("train config: batch_size must be > 0");
  if (c.weights.lambda_cyc < 0 || c.weights.lambda_struct < 0 || c.weights.lambda_seg < 0)
    throw std::invalid_argument("train config: negative loss weight");
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config file " + file.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("config " + file.string() + " is not valid JSON: " + e.what());
  }
  return train_config_from_json(j);
}

void save_train_config(const TrainConfig& c, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw std::runtime_error("cannot write config file " + file.string());
  out << train_config_to_json(c).dump(2) << "\n";
}

std::string canonical_json(const json& j) {
  // nlohmann stores object keys sorted; a compact dump is canonical
  return j.dump();
}

std::string fnv1a64_hex(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const TrainConfig& c) {
  auto j = train_config_to_json(c);
  j.erase("out_dir");  // the hash names the directory; don't self-reference
  return fnv1a64_hex(canonical_json(j));
}

std::filesystem::path resolve_out_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("PSIGAN_OUTPUT_ROOT")) {
    return std::filesystem::path(root) / p;
  }
  return p;
}

}  // namespace psigan
