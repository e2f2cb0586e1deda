#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace psigan::plots {

struct EmitResult {
  std::vector<std::filesystem::path> written;
  std::vector<std::string> warnings;  // missing snapshots etc.
};

// Renders PNG panels from a completed run directory into <run>/plots/:
//   psi_evolution.png    probability-map snapshots over epochs, color scale [0,1]
//   translation.png      source / pseudo-target / real-target triplets
//   loss_curves.png      per-component curves from history.jsonl
EmitResult emit_plots(const std::filesystem::path& run_dir);

}  // namespace psigan::plots
