#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "psigan/models.hpp"

namespace psigan {

enum class GanForm { LeastSquares, Log };
enum class GanRole { Discriminator, Generator };

GanForm gan_form_from_string(const std::string& s);
std::string to_string(GanForm f);

struct LossWeights {
  double lambda_cyc = 10.0;
  double lambda_struct = 0.5;
  double lambda_seg = 5.0;
};

// Which loss terms are active for an ablation setting (1..6):
//   1: adv C->M only                 4: struct + adv C->M
//   2: adv both + cycle              5: struct + adv M->C + cycle
//   3: struct only                   6: all (default)
// The segmentation-feedback term in the generator objective rides with the
// structure loss; the segmentor itself trains in every setting.
struct SettingMask {
  bool adv_cm = true;
  bool adv_mc = true;
  bool cyc = true;
  bool strct = true;

  bool seg_feedback() const { return strct; }
  static SettingMask from_setting(int setting);
};

// Per-iteration loss components. *_g fields are the generator-phase fooling
// objectives; *_d fields the discriminator-phase objectives; seg_feedback is
// the cross-entropy through the frozen SCM branch used in the generator
// update; seg_m / seg_mbar are the segmentor-phase branch losses.
struct LossReport {
  double adv_g_cm = 0, adv_g_mc = 0;
  double adv_d_cm = 0, adv_d_mc = 0;
  double cyc = 0;
  double struct_g = 0, struct_d = 0;
  double seg_feedback = 0;
  double seg_m = 0, seg_mbar = 0;
  double total_g = 0, total_d = 0, total_s = 0;
  int64_t iteration = 0;
  int epoch = 0;
  double lr = 0;
  bool finite = true;

  nlohmann::json to_json() const;
  static LossReport from_json(const nlohmann::json& j);
  bool all_finite() const;
};

// ---------------------------------------------------------------------------
// loss functions (pure; differentiable through their tensor inputs)
// ---------------------------------------------------------------------------

// Discriminator role: classification objective to MINIMIZE (real -> 1, fake -> 0).
// Generator role: fooling objective over fake logits only (real_logits ignored).
// Log form reads logits through a sigmoid; least-squares regresses logits to 1/0.
torch::Tensor adversarial_loss(const torch::Tensor& real_logits,
                               const torch::Tensor& fake_logits, GanRole role, GanForm form);

// Mean absolute difference; callers sum the two cycle directions.
torch::Tensor cycle_loss(const torch::Tensor& original, const torch::Tensor& reconstructed);

// Aggregated structure-of-interest probability: sum of foreground channels
// (= 1 - background channel). full: (B,K,H,W) -> (B,1,H,W).
torch::Tensor aggregate_soi_probability(const torch::Tensor& full_map);

// Per-pixel cross-entropy of K-channel probability maps against integer labels,
// probabilities clamped at eps. Returns (loss_SM, loss_SCM).
std::pair<torch::Tensor, torch::Tensor> segmentation_loss(const torch::Tensor& pred_sm,
                                                          const torch::Tensor& pred_scm,
                                                          const torch::Tensor& labels,
                                                          double eps = 1e-7);
torch::Tensor cross_entropy_probs(const torch::Tensor& probs, const torch::Tensor& labels,
                                  double eps = 1e-7);

// Channel-concatenates image and probability content per the discriminator
// input variant. Returns one stack, or K-1 stacks for the per-SOI variant.
std::vector<torch::Tensor> make_joint_pair(const torch::Tensor& image,
                                           const torch::Tensor& prob_map, PairVariant variant);

torch::Tensor structure_discriminator_loss(const torch::Tensor& logits_real_pair,
                                           const torch::Tensor& logits_fake_pair, GanForm form);
torch::Tensor structure_generator_loss(const torch::Tensor& logits_fake_pair, GanForm form);

// adv + lambda_cyc*cyc + lambda_struct*struct_g + lambda_seg*seg, with inactive
// terms zeroed by the setting mask.
double total_generator_objective(double adv, double cyc, double struct_g, double seg,
                                 const LossWeights& weights, const SettingMask& mask);

}  // namespace psigan
