#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace psigan::synth {

// Rotated ellipse with a low-frequency radial boundary perturbation.
// Membership is analytic so masks can be verified against the shape itself.
struct OrganShape {
  int label = 1;  // 1..K-1, unique per scene
  double cx = 0.0, cy = 0.0;
  double ax_major = 0.0, ax_minor = 0.0;  // semi-axes, px
  double rotation = 0.0;                  // rad
  std::array<double, 3> wobble_amp{};     // harmonics 2..4
  std::array<double, 3> wobble_phase{};
  uint64_t texture_seed = 0;

  bool contains(double x, double y) const;
  double bounding_radius() const;
  double ellipse_area() const;  // unperturbed pi*a*b
};

struct AnatomyScene {
  int canvas = 64;
  int num_labels = 4;  // K, including background
  uint64_t seed = 0;
  std::vector<OrganShape> organs;  // K-1 entries, fully inside the canvas
};

struct DomainStyle {
  std::string tag;                   // "A" source, "B" target
  std::vector<double> label_means;   // raw units, index 0 = background
  std::vector<double> label_stddevs;
  double noise_amp = 0.0;     // white noise, raw units
  double bias_amp = 0.0;      // multiplicative smooth bias field
  double texture_amp = 0.0;   // additive smooth texture, raw units
  double texture_freq = 3.0;  // cycles per canvas width
  double raw_lo = 0.0, raw_hi = 4000.0;  // declared raw intensity range
};

struct DomainSample {
  torch::Tensor image;  // HxW float32, raw intensities within the declared range
  torch::Tensor mask;   // HxW int64, values 0..K-1; defined iff has_mask
  bool has_mask = false;
  std::string domain;
  int64_t scene_id = -1;
};

AnatomyScene sample_anatomy(uint64_t seed, int num_labels, int canvas);
torch::Tensor rasterize_mask(const AnatomyScene& scene);
DomainSample render(const AnatomyScene& scene, const DomainStyle& style, uint64_t noise_seed);

DomainStyle desk_style_source(int num_labels);
DomainStyle desk_style_target(int num_labels);

struct SynthConfig {
  std::string preset = "desk";
  uint64_t seed = 1;
  int num_labels = 4;
  int canvas = 64;
  int n_source_train = 200;
  int n_target_train = 200;
  int n_target_val = 20;
  int n_target_test = 50;
  DomainStyle style_source = desk_style_source(4);
  DomainStyle style_target = desk_style_target(4);
};

SynthConfig desk_preset(uint64_t seed);

struct SampleEntry {
  std::string image;      // path relative to the manifest directory
  std::string mask;       // training-visible mask; empty for target-domain samples
  std::string eval_mask;  // evaluation-only mask, never read by the trainer
  int64_t scene_id = -1;
  std::string domain;
};

struct DatasetManifest {
  int schema_version = 1;
  uint64_t seed = 0;
  int num_labels = 4;
  int canvas = 64;
  DomainStyle style_source, style_target;
  std::vector<SampleEntry> source_train, target_train, target_val, target_test;
  std::filesystem::path root;  // directory holding the manifest; not serialized

  const std::vector<SampleEntry>& split(const std::string& name) const;
};

// Writes every sample plus manifest.json under out_dir. Refuses to overwrite an
// existing manifest unless force. Deterministic: (seed, config) fixes every byte.
DatasetManifest build_dataset(const SynthConfig& config, const std::filesystem::path& out_dir,
                              bool force = false);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest load_manifest(const std::filesystem::path& file);

nlohmann::json style_to_json(const DomainStyle& s);
DomainStyle style_from_json(const nlohmann::json& j);

// Raw-intensity image for an entry (dequantized from its 16-bit file).
torch::Tensor load_image_raw(const DatasetManifest& m, const SampleEntry& e,
                             const DomainStyle& style);
torch::Tensor load_mask(const DatasetManifest& m, const std::string& rel_path);

}  // namespace psigan::synth
