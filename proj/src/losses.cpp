#include "psigan/losses.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace psigan {

using nlohmann::json;

GanForm gan_form_from_string(const std::string& s) {
  if (s == "least_squares") return GanForm::LeastSquares;
  if (s == "log") return GanForm::Log;
  throw std::invalid_argument("unknown gan form: " + s);
}

std::string to_string(GanForm f) {
  return f == GanForm::LeastSquares ? "least_squares" : "log";
}

SettingMask SettingMask::from_setting(int setting) {
  switch (setting) {
    case 1: return {true, false, false, false};
    case 2: return {true, true, true, false};
    case 3: return {false, false, false, true};
    case 4: return {true, false, false, true};
    case 5: return {false, true, true, true};
    case 6: return {true, true, true, true};
    default: throw std::invalid_argument("unknown ablation setting: " + std::to_string(setting));
  }
}

json LossReport::to_json() const {
  return json{{"schema_version", 1},
              {"iteration", iteration},
              {"epoch", epoch},
              {"lr", lr},
              {"adv_g_cm", adv_g_cm},
              {"adv_g_mc", adv_g_mc},
              {"adv_d_cm", adv_d_cm},
              {"adv_d_mc", adv_d_mc},
              {"cyc", cyc},
              {"struct_g", struct_g},
              {"struct_d", struct_d},
              {"seg_feedback", seg_feedback},
              {"seg_m", seg_m},
              {"seg_mbar", seg_mbar},
              {"total_g", total_g},
              {"total_d", total_d},
              {"total_s", total_s},
              {"finite", finite}};
}

LossReport LossReport::from_json(const json& j) {
  LossReport r;
  r.iteration = j.at("iteration").get<int64_t>();
  r.epoch = j.at("epoch").get<int>();
  r.lr = j.at("lr").get<double>();
  r.adv_g_cm = j.at("adv_g_cm").get<double>();
  r.adv_g_mc = j.at("adv_g_mc").get<double>();
  r.adv_d_cm = j.at("adv_d_cm").get<double>();
  r.adv_d_mc = j.at("adv_d_mc").get<double>();
  r.cyc = j.at("cyc").get<double>();
  r.struct_g = j.at("struct_g").get<double>();
  r.struct_d = j.at("struct_d").get<double>();
  r.seg_feedback = j.at("seg_feedback").get<double>();
  r.seg_m = j.at("seg_m").get<double>();
  r.seg_mbar = j.at("seg_mbar").get<double>();
  r.total_g = j.at("total_g").get<double>();
  r.total_d = j.at("total_d").get<double>();
  r.total_s = j.at("total_s").get<double>();
  r.finite = j.at("finite").get<bool>();
  return r;
}

bool LossReport::all_finite() const {
  for (double v : {adv_g_cm, adv_g_mc, adv_d_cm, adv_d_mc, cyc, struct_g, struct_d, seg_feedback,
                   seg_m, seg_mbar, total_g, total_d, total_s}) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

namespace {
void check_finite_logits(const torch::Tensor& t, const char* what) {
  if (!torch::isfinite(t).all().item<bool>())
    throw std::invalid_argument(std::string(what) + ": non-finite logits");
}
}  // namespace

torch::Tensor adversarial_loss(const torch::Tensor& real_logits,
                               const torch::Tensor& fake_logits, GanRole role, GanForm form) {
  check_finite_logits(fake_logits, "adversarial_loss(fake)");
  if (role == GanRole::Generator) {
    if (form == GanForm::LeastSquares) return (fake_logits - 1).square().mean();
    // non-saturating: -log D(fake)
    return -torch::nn::functional::logsigmoid(fake_logits).mean();
  }
  TORCH_CHECK(real_logits.defined(), "adversarial_loss: discriminator role needs real logits");
  check_finite_logits(real_logits, "adversarial_loss(real)");
  // per-map shape must agree; the real and fake batches may differ in size
  TORCH_CHECK(real_logits.dim() == fake_logits.dim() &&
                  real_logits.sizes().slice(1) == fake_logits.sizes().slice(1),
              "adversarial_loss: logit shape mismatch");
  if (form == GanForm::LeastSquares) {
    return (real_logits - 1).square().mean() + fake_logits.square().mean();
  }
  // -E[log D(real)] - E[log(1 - D(fake))]; log(1-sigmoid(x)) = logsigmoid(-x)
  return -torch::nn::functional::logsigmoid(real_logits).mean() -
         torch::nn::functional::logsigmoid(-fake_logits).mean();
}

torch::Tensor cycle_loss(const torch::Tensor& original, const torch::Tensor& reconstructed) {
  TORCH_CHECK(original.sizes() == reconstructed.sizes(), "cycle_loss: shape mismatch");
  return (original - reconstructed).abs().mean();
}

torch::Tensor aggregate_soi_probability(const torch::Tensor& full_map) {
  TORCH_CHECK(full_map.dim() == 4, "aggregate_soi_probability: expected BKHW map");
  TORCH_CHECK(full_map.size(1) >= 2, "aggregate_soi_probability: need >= 2 channels");
  auto sums = full_map.sum(1);
  const double dev = (sums - 1.0).abs().max().item<double>();
  if (dev > 1e-3)
    throw std::invalid_argument("aggregate_soi_probability: channel sums deviate from 1 by " +
                                std::to_string(dev));
  return full_map.narrow(1, 1, full_map.size(1) - 1).sum(1, /*keepdim=*/true);
}

torch::Tensor cross_entropy_probs(const torch::Tensor& probs, const torch::Tensor& labels,
                                  double eps) {
  TORCH_CHECK(probs.dim() == 4, "cross_entropy_probs: expected BKHW probabilities");
  TORCH_CHECK(labels.dim() == 3, "cross_entropy_probs: expected BHW labels");
  const auto k = probs.size(1);
  if ((labels >= k).any().item<bool>() || (labels < 0).any().item<bool>())
    throw std::invalid_argument("cross_entropy_probs: label value out of [0,K)");
  auto gathered = probs.gather(1, labels.unsqueeze(1)).squeeze(1);
  return -gathered.clamp_min(eps).log().mean();
}

std::pair<torch::Tensor, torch::Tensor> segmentation_loss(const torch::Tensor& pred_sm,
                                                          const torch::Tensor& pred_scm,
                                                          const torch::Tensor& labels,
                                                          double eps) {
  return {cross_entropy_probs(pred_sm, labels, eps), cross_entropy_probs(pred_scm, labels, eps)};
}

std::vector<torch::Tensor> make_joint_pair(const torch::Tensor& image,
                                           const torch::Tensor& prob_map, PairVariant variant) {
  TORCH_CHECK(prob_map.dim() == 4, "make_joint_pair: expected BKHW probability map");
  const auto k = prob_map.size(1);
  if (variant != PairVariant::SegMulti && variant != PairVariant::SegAgg) {
    TORCH_CHECK(image.dim() == 4 && image.size(1) == 1, "make_joint_pair: expected B1HW image");
    TORCH_CHECK(image.size(2) == prob_map.size(2) && image.size(3) == prob_map.size(3),
                "make_joint_pair: image and probability map are not spatially aligned");
  }
  switch (variant) {
    case PairVariant::SegMulti:
      return {prob_map.narrow(1, 1, k - 1)};
    case PairVariant::SegAgg:
      return {aggregate_soi_probability(prob_map)};
    case PairVariant::ImgSegMulti:
      return {torch::cat({image, prob_map.narrow(1, 1, k - 1)}, 1)};
    case PairVariant::ImgSegPerSoi: {
      std::vector<torch::Tensor> stacks;
      for (int64_t c = 1; c < k; ++c)
        stacks.push_back(torch::cat({image, prob_map.narrow(1, c, 1)}, 1));
      return stacks;
    }
    case PairVariant::ImgSegAgg:
      return {torch::cat({image, aggregate_soi_probability(prob_map)}, 1)};
  }
  throw std::invalid_argument("make_joint_pair: unknown variant");
}

torch::Tensor structure_discriminator_loss(const torch::Tensor& logits_real_pair,
                                           const torch::Tensor& logits_fake_pair, GanForm form) {
  return adversarial_loss(logits_real_pair, logits_fake_pair, GanRole::Discriminator, form);
}

torch::Tensor structure_generator_loss(const torch::Tensor& logits_fake_pair, GanForm form) {
  return adversarial_loss({}, logits_fake_pair, GanRole::Generator, form);
}

double total_generator_objective(double adv, double cyc, double struct_g, double seg,
                                 const LossWeights& weights, const SettingMask& mask) {
  if (weights.lambda_cyc < 0 || weights.lambda_struct < 0 || weights.lambda_seg < 0)
    throw std::invalid_argument("total_generator_objective: negative weight");
  double total = 0.0;
  if (mask.adv_cm || mask.adv_mc) total += adv;
  if (mask.cyc) total += weights.lambda_cyc * cyc;
  if (mask.strct) total += weights.lambda_struct * struct_g;
  if (mask.seg_feedback()) total += weights.lambda_seg * seg;
  return total;
}

}  // namespace psigan
