#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psigan/models.hpp"
#include "psigan/preprocess.hpp"
#include "psigan/synthdata.hpp"

namespace psigan::metrics {

// DSC = 2*TP / (FP + 2*TP + FN); both-empty convention returns 1.
double dice(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask);

// Max of the two directed 95th-percentile boundary distances (nearest-rank
// percentile: sorted[ceil(0.95*n)-1]). Boundaries are 4-connectivity pixels.
// Exactly one empty mask -> +inf sentinel; both empty -> 0.
double hd95(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask,
            double spacing_y = 1.0, double spacing_x = 1.0);

// KL(P_pseudo || P_real) over binned in-mask intensities in [-1,1], with 1e-8
// additive smoothing, both histograms renormalized.
double kl_intensity_divergence(const std::vector<torch::Tensor>& pseudo_images,
                               const std::vector<torch::Tensor>& pseudo_masks,
                               const std::vector<torch::Tensor>& real_images,
                               const std::vector<torch::Tensor>& real_masks, int bins = 64);

struct MetricRecord {
  std::vector<double> dsc;   // per foreground label, 1..K-1
  std::vector<double> hd95;  // same order; +inf sentinel possible
  double overall_dsc = 0.0;  // arithmetic mean over evaluated labels
  std::optional<double> kl;
  int64_t scene_id = -1;
};

struct SplitSummary {
  std::vector<MetricRecord> per_sample;
  std::vector<double> mean_dsc, std_dsc;          // per label
  std::vector<double> mean_hd95, std_hd95;        // per label, inf excluded
  std::vector<int> hd95_inf_count;                // per label
  double mean_overall_dsc = 0.0, std_overall_dsc = 0.0;
};

SplitSummary summarize(const std::vector<MetricRecord>& records, int num_labels);

// Argmax segmentation of every sample in a split, scored against eval masks.
SplitSummary evaluate_split(models::SplitSegmentor& seg, Branch branch,
                            const synth::DatasetManifest& manifest, const std::string& split,
                            const preprocess::IntensityPipelineConfig& pipeline);

nlohmann::json summary_to_json(const SplitSummary& s, int num_labels);
std::string summary_to_tsv(const SplitSummary& s, int num_labels);
void write_summary(const SplitSummary& s, int num_labels, const std::filesystem::path& dir,
                   const std::string& stem);

}  // namespace psigan::metrics
