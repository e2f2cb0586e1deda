#pragma once

#include <torch/torch.h>

#include <random>
#include <string>
#include <vector>

#include "psigan/preprocess.hpp"
#include "psigan/synthdata.hpp"

namespace psigan::data {

// A split loaded into memory with preprocessing applied; desk-scale datasets
// are small enough to hold entirely.
struct SplitTensors {
  std::vector<torch::Tensor> images;  // each 1xHxW float32 in [-1,1]
  std::vector<torch::Tensor> masks;   // each HxW int64; empty if not loaded
  std::vector<int64_t> scene_ids;

  int64_t size() const { return static_cast<int64_t>(images.size()); }
};

enum class MaskSource { None, TrainerVisible, EvalOnly };

SplitTensors load_split(const synth::DatasetManifest& manifest, const std::string& split,
                        const preprocess::IntensityPipelineConfig& pipeline, MaskSource masks);

// Deterministic epoch ordering: a fixed permutation of [0,n) drawn from the
// provided generator, consumed batch_size at a time.
std::vector<int64_t> epoch_order(int64_t n, std::mt19937_64& rng);

torch::Tensor stack_images(const SplitTensors& split, const std::vector<int64_t>& order,
                           int64_t start, int64_t count);
torch::Tensor stack_masks(const SplitTensors& split, const std::vector<int64_t>& order,
                          int64_t start, int64_t count);

}  // namespace psigan::data
