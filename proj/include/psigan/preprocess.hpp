#pragma once

#include <torch/torch.h>

#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace psigan::synth {
struct DatasetManifest;
}

namespace psigan::preprocess {

// Intensity pipeline, applied in fixed order: standardize -> clip -> normalize.
// Landmarks are min, deciles 10..90, max of the reference image (11 values).
struct IntensityPipelineConfig {
  double clip_percentile = 95.0;
  std::vector<double> reference_landmarks;
  double clip_lo = 0.0;   // lower clip bound; raw images are non-negative
  double clip_hi = 0.0;   // = clip_percentile of the reference
  double range_lo = 0.0;  // known input range for signed-unit normalization
  double range_hi = 0.0;
  double out_lo = -1.0, out_hi = 1.0;
};

// Linear-interpolation percentile (numpy convention) of all pixels.
double percentile(const torch::Tensor& image, double q);

// min, 10%..90% deciles, max
std::vector<double> compute_landmarks(const torch::Tensor& image);

// Monotone clamp to [clip_lo, reference_hi]. `pct` documents how reference_hi
// was chosen and is validated to lie in (0, 100].
torch::Tensor percentile_clip(const torch::Tensor& image, double pct, double reference_hi,
                              double clip_lo = 0.0);

struct StandardizeResult {
  torch::Tensor image;
  bool degenerate = false;  // zero intensity spread; input returned unchanged
};

// Piecewise-linear map sending the image's own landmarks onto the reference
// landmarks; outside the landmark span the end segments extrapolate.
StandardizeResult landmark_standardize(const torch::Tensor& image,
                                       const std::vector<double>& reference_landmarks);

torch::Tensor normalize_signed_unit(const torch::Tensor& image, double lo, double hi);
torch::Tensor denormalize_signed_unit(const torch::Tensor& image, double lo, double hi);

torch::Tensor apply_pipeline(const torch::Tensor& image, const IntensityPipelineConfig& cfg);

// Reference is the first target-train sample of the manifest (fixed by seed).
IntensityPipelineConfig pipeline_from_reference(const torch::Tensor& reference,
                                                double clip_percentile = 95.0);
IntensityPipelineConfig pipeline_from_manifest(const synth::DatasetManifest& manifest,
                                               double clip_percentile = 95.0);

nlohmann::json pipeline_to_json(const IntensityPipelineConfig& cfg);
IntensityPipelineConfig pipeline_from_json(const nlohmann::json& j);

}  // namespace psigan::preprocess
