#include "psigan/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "psigan/synthdata.hpp"

namespace psigan::preprocess {

using nlohmann::json;

double percentile(const torch::Tensor& image, double q) {
  if (q < 0.0 || q > 100.0) throw std::invalid_argument("percentile: q out of [0,100]");
  auto flat = image.to(torch::kFloat64).flatten();
  auto sorted = std::get<0>(flat.sort());
  const int64_t n = sorted.numel();
  if (n == 0) throw std::invalid_argument("percentile: empty image");
  const double pos = q / 100.0 * static_cast<double>(n - 1);
  const auto lo = static_cast<int64_t>(std::floor(pos));
  const auto hi = static_cast<int64_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  const double a = sorted[lo].item<double>();
  const double b = sorted[hi].item<double>();
  return a + (b - a) * frac;
}

std::vector<double> compute_landmarks(const torch::Tensor& image) {
  std::vector<double> lm;
  lm.reserve(11);
  lm.push_back(percentile(image, 0.0));
  for (int d = 10; d <= 90; d += 10) lm.push_back(percentile(image, d));
  lm.push_back(percentile(image, 100.0));
  return lm;
}

torch::Tensor percentile_clip(const torch::Tensor& image, double pct, double reference_hi,
                              double clip_lo) {
  if (pct <= 0.0 || pct > 100.0)
    throw std::invalid_argument("percentile_clip: percentile out of (0,100]");
  if (reference_hi <= clip_lo) throw std::invalid_argument("percentile_clip: empty clip range");
  if (!torch::isfinite(image).all().item<bool>())
    throw std::invalid_argument("percentile_clip: non-finite pixels");
  return image.clamp(clip_lo, reference_hi);
}

StandardizeResult landmark_standardize(const torch::Tensor& image,
                                       const std::vector<double>& reference_landmarks) {
  const auto& ref = reference_landmarks;
  if (ref.size() < 2) throw std::invalid_argument("landmark_standardize: need >= 2 landmarks");
  for (size_t i = 1; i < ref.size(); ++i)
    if (ref[i] <= ref[i - 1])
      throw std::invalid_argument("landmark_standardize: reference landmarks not increasing");

  auto own = compute_landmarks(image);
  if (own.back() - own.front() <= 0.0) return {image.clone(), true};

  // Collapse duplicate own-landmarks so segments stay invertible; the paired
  // reference values collapse with them.
  std::vector<double> src, dst;
  for (size_t i = 0; i < own.size() && i < ref.size(); ++i) {
    if (!src.empty() && own[i] <= src.back()) continue;
    src.push_back(own[i]);
    dst.push_back(ref[i]);
  }
  if (src.size() < 2) return {image.clone(), true};

  auto x = image.to(torch::kFloat64);
  auto out = torch::empty_like(x);
  const int m = static_cast<int>(src.size());
  // end segments extrapolate
  {
    auto sel = x <= src[1];
    const double k = (dst[1] - dst[0]) / (src[1] - src[0]);
    out = torch::where(sel, dst[0] + (x - src[0]) * k, out);
  }
  for (int i = 1; i + 1 < m; ++i) {
    auto sel = (x > src[i]) & (x <= src[i + 1]);
    const double k = (dst[i + 1] - dst[i]) / (src[i + 1] - src[i]);
    out = torch::where(sel, dst[i] + (x - src[i]) * k, out);
  }
  {
    auto sel = x > src[m - 1];
    const double k = (dst[m - 1] - dst[m - 2]) / (src[m - 1] - src[m - 2]);
    out = torch::where(sel, dst[m - 1] + (x - src[m - 1]) * k, out);
  }
  return {out.to(image.dtype()), false};
}

torch::Tensor normalize_signed_unit(const torch::Tensor& image, double lo, double hi) {
  if (hi <= lo) throw std::invalid_argument("normalize_signed_unit: hi must exceed lo");
  auto mn = image.min().item<double>();
  auto mx = image.max().item<double>();
  const double slack = 1e-9 * (hi - lo);
  if (mn < lo - slack || mx > hi + slack) {
    auto flat = image.flatten();
    const int64_t idx = (mn < lo - slack ? flat.argmin() : flat.argmax()).item<int64_t>();
    const double v = flat[idx].item<double>();
    throw std::invalid_argument("normalize_signed_unit: pixel " + std::to_string(idx) +
                                " value " + std::to_string(v) + " outside [" +
                                std::to_string(lo) + "," + std::to_string(hi) + "]");
  }
  return (image - lo) / (hi - lo) * 2.0 - 1.0;
}

torch::Tensor denormalize_signed_unit(const torch::Tensor& image, double lo, double hi) {
  if (hi <= lo) throw std::invalid_argument("denormalize_signed_unit: hi must exceed lo");
  return (image + 1.0) / 2.0 * (hi - lo) + lo;
}

torch::Tensor apply_pipeline(const torch::Tensor& image, const IntensityPipelineConfig& cfg) {
  // float64 throughout so the clip bound is honored exactly
  auto std_result = landmark_standardize(image.to(torch::kFloat64), cfg.reference_landmarks);
  auto clipped = percentile_clip(std_result.image, cfg.clip_percentile, cfg.clip_hi, cfg.clip_lo);
  return normalize_signed_unit(clipped, cfg.range_lo, cfg.range_hi).to(torch::kFloat32);
}

IntensityPipelineConfig pipeline_from_reference(const torch::Tensor& reference,
                                                double clip_percentile) {
  IntensityPipelineConfig cfg;
  cfg.clip_percentile = clip_percentile;
  cfg.reference_landmarks = compute_landmarks(reference);
  cfg.clip_lo = std::min(0.0, cfg.reference_landmarks.front());
  cfg.clip_hi = percentile(reference, clip_percentile);
  cfg.range_lo = cfg.clip_lo;
  cfg.range_hi = cfg.clip_hi;
  return cfg;
}

IntensityPipelineConfig pipeline_from_manifest(const synth::DatasetManifest& manifest,
                                               double clip_percentile) {
  if (manifest.target_train.empty())
    throw std::runtime_error("pipeline_from_manifest: manifest has no target-train samples");
  auto reference =
      synth::load_image_raw(manifest, manifest.target_train.front(), manifest.style_target);
  return pipeline_from_reference(reference, clip_percentile);
}

json pipeline_to_json(const IntensityPipelineConfig& cfg) {
  return json{{"clip_percentile", cfg.clip_percentile},
              {"reference_landmarks", cfg.reference_landmarks},
              {"clip_lo", cfg.clip_lo},
              {"clip_hi", cfg.clip_hi},
              {"range_lo", cfg.range_lo},
              {"range_hi", cfg.range_hi},
              {"out_lo", cfg.out_lo},
              {"out_hi", cfg.out_hi}};
}

IntensityPipelineConfig pipeline_from_json(const json& j) {
  IntensityPipelineConfig cfg;
  cfg.clip_percentile = j.at("clip_percentile").get<double>();
  cfg.reference_landmarks = j.at("reference_landmarks").get<std::vector<double>>();
  cfg.clip_lo = j.at("clip_lo").get<double>();
  cfg.clip_hi = j.at("clip_hi").get<double>();
  cfg.range_lo = j.at("range_lo").get<double>();
  cfg.range_hi = j.at("range_hi").get<double>();
  cfg.out_lo = j.at("out_lo").get<double>();
  cfg.out_hi = j.at("out_hi").get<double>();
  return cfg;
}

}  // namespace psigan::preprocess
