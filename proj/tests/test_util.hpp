#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <string>

#include "psigan/config.hpp"
#include "psigan/synthdata.hpp"

namespace testutil {

std::filesystem::path fresh_dir(const std::string& name);

// Small dataset shared across test cases (built once per process):
// 16/16/4/6 samples, K=4, 64px.
const psigan::synth::DatasetManifest& micro_dataset();
psigan::synth::SynthConfig micro_synth_config(uint64_t seed = 11);

psigan::TrainConfig micro_train_config(int iters_per_epoch = 2);

// Central finite difference of f with respect to one element of `param`,
// evaluated by perturbing the parameter data in place. Independent of the
// analytic gradient path it is used to check.
double central_difference(const std::function<double()>& f, torch::Tensor param,
                          int64_t flat_index, double step = 1e-6);

// |a-b| / max(|a|+|b|, floor)
double rel_err(double a, double b, double floor = 1e-8);

// Gradient agreement: either both magnitudes vanish at fp64 resolution (the
// central-difference cancellation floor) or they match to 1e-4 relative.
bool grad_match(double analytic, double fd);

}  // namespace testutil
