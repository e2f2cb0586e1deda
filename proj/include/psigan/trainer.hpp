#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "psigan/config.hpp"
#include "psigan/dataset.hpp"
#include "psigan/losses.hpp"
#include "psigan/models.hpp"

namespace psigan::train {

struct SourceBatch {
  torch::Tensor images;  // B,1,H,W in [-1,1]
  torch::Tensor labels;  // B,H,W int64
};

struct TargetBatch {
  torch::Tensor images;  // B,1,H,W; no labels ever reach the trainer
};

// Gradient-routing audit of one instrumented step. Each update phase lists the
// parameter groups that accumulated nonzero gradient; anything outside the
// allowed set (or the mode-consistent set in single-segmentor mode) is a
// violation naming the leaking group.
struct RoutingReport {
  struct Phase {
    std::string name;
    std::vector<std::string> touched;
    std::vector<std::string> allowed;
    std::vector<std::string> mode_consistent;
    std::vector<std::string> violations;
  };
  std::vector<Phase> phases;
  bool ok = true;
  std::string first_violation;
};

struct TrainState {
  TrainConfig config;
  int num_labels = 4;
  models::ModelBundle bundle;
  std::unique_ptr<torch::optim::Adam> opt_g, opt_d, opt_s;
  int64_t iteration = 0;
  int epoch = 0;
  std::mt19937_64 data_rng;

  // negative-control fixture: leave the structure discriminator unfrozen
  // during the generator phase so the audit must fail
  bool fixture_skip_struct_freeze = false;
};

// Thrown when any phase loss goes non-finite; carries the diagnostic report.
struct NonFiniteLossError : std::runtime_error {
  explicit NonFiniteLossError(LossReport r)
      : std::runtime_error("non-finite loss at iteration " + std::to_string(r.iteration)),
        report(r) {}
  LossReport report;
};

TrainState init_train_state(const TrainConfig& config, int num_labels);

// One iteration in fixed order: (1) translations + cycle, (2) SCM probability
// map, (3) generator update, (4) SM probability maps on constants,
// (5) discriminator updates, (6) segmentor update (shared decoder stepped once
// with both branches' gradients).
LossReport train_step(TrainState& state, const SourceBatch& source, const TargetBatch& target,
                      RoutingReport* audit = nullptr);

void set_lr(TrainState& state, double lr);
void zero_all_grads(models::ModelBundle& bundle);

struct TrainResult {
  std::filesystem::path run_dir;
  int64_t iterations = 0;
  bool aborted = false;
  std::string abort_reason;
  double struct_gap_rolling = 0.0;  // mean |struct_g - struct_d| over last 200 iters
};

TrainResult train(const TrainConfig& config, const std::string& resume_checkpoint = "",
                  bool force_resume = false);

// Plain supervised segmentor training (no adversaries); used for the
// no-adaptation baseline and the supervised ceiling.
models::SplitSegmentor train_supervised(const data::SplitTensors& split, int num_labels,
                                        const TrainConfig& schedule, uint64_t seed);

}  // namespace psigan::train
