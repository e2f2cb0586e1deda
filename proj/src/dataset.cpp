#include "psigan/dataset.hpp"

#include <numeric>
#include <stdexcept>

namespace psigan::data {

SplitTensors load_split(const synth::DatasetManifest& manifest, const std::string& split,
                        const preprocess::IntensityPipelineConfig& pipeline, MaskSource masks) {
  const auto& entries = manifest.split(split);
  SplitTensors out;
  for (const auto& entry : entries) {
    const auto& style = entry.domain == "A" ? manifest.style_source : manifest.style_target;
    auto raw = synth::load_image_raw(manifest, entry, style);
    out.images.push_back(preprocess::apply_pipeline(raw, pipeline).unsqueeze(0));
    out.scene_ids.push_back(entry.scene_id);
    if (masks == MaskSource::TrainerVisible) {
      if (entry.mask.empty())
        throw std::runtime_error("load_split: " + entry.image +
                                 " exposes no mask to the trainer");
      out.masks.push_back(synth::load_mask(manifest, entry.mask));
    } else if (masks == MaskSource::EvalOnly) {
      const std::string path = entry.eval_mask.empty() ? entry.mask : entry.eval_mask;
      if (path.empty()) throw std::runtime_error("load_split: " + entry.image + " has no mask");
      out.masks.push_back(synth::load_mask(manifest, path));
    }
  }
  return out;
}

std::vector<int64_t> epoch_order(int64_t n, std::mt19937_64& rng) {
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  // Fisher-Yates with explicit modulo draws; avoids std::shuffle's
  // unspecified engine consumption.
  for (int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<int64_t>(rng() % static_cast<uint64_t>(i + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

torch::Tensor stack_images(const SplitTensors& split, const std::vector<int64_t>& order,
                           int64_t start, int64_t count) {
  std::vector<torch::Tensor> batch;
  for (int64_t i = 0; i < count; ++i) batch.push_back(split.images[order[start + i]]);
  return torch::stack(batch);
}

torch::Tensor stack_masks(const SplitTensors& split, const std::vector<int64_t>& order,
                          int64_t start, int64_t count) {
  std::vector<torch::Tensor> batch;
  for (int64_t i = 0; i < count; ++i) batch.push_back(split.masks[order[start + i]]);
  return torch::stack(batch);
}

}  // namespace psigan::data
