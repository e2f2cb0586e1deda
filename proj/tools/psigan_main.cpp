#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "psigan/checkpoint.hpp"
#include "psigan/config.hpp"
#include "psigan/experiments.hpp"
#include "psigan/metrics.hpp"
#include "psigan/plots.hpp"
#include "psigan/synthdata.hpp"
#include "psigan/trainer.hpp"

namespace fs = std::filesystem;
using namespace psigan;

namespace {

// exit codes: 0 success, 1 runtime failure, 2 usage error
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw UsageError(std::string(what) + " not found: " + path);
}

int cmd_synth(const std::string& preset, uint64_t seed, const std::string& out, bool force) {
  if (preset != "desk") throw UsageError("unknown preset: " + preset);
  auto config = synth::desk_preset(seed);
  auto manifest = synth::build_dataset(config, resolve_out_dir(out), force);
  std::cout << "wrote " << manifest.source_train.size() << "+" << manifest.target_train.size()
            << "+" << manifest.target_val.size() << "+" << manifest.target_test.size()
            << " samples under " << manifest.root.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& resume, bool force) {
  require_file(config_path, "config");
  auto config = load_train_config(config_path);
  require_file(config.dataset_manifest, "dataset manifest");
  if (!resume.empty()) require_file(resume, "checkpoint");
  auto result = train::train(config, resume, force);
  if (result.aborted) {
    std::cerr << "error: " << result.abort_reason << " (resume from last checkpoint in "
              << result.run_dir.string() << ")\n";
    return 1;
  }
  std::cout << "run " << result.run_dir.string() << " finished after " << result.iterations
            << " iterations\n";
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& split, const std::string& branch,
             std::string manifest_path, std::string out) {
  require_file(ckpt_path, "checkpoint");
  if (branch != "S_M" && branch != "S_C_M") throw UsageError("branch must be S_M or S_C_M");
  auto state = ckpt::load_checkpoint(ckpt_path);
  if (manifest_path.empty()) manifest_path = state.config.dataset_manifest;
  require_file(manifest_path, "dataset manifest");
  auto manifest = synth::load_manifest(manifest_path);
  auto pipeline = preprocess::pipeline_from_manifest(manifest);
  const Branch b = branch == "S_C_M" ? Branch::SCM : Branch::SM;
  const std::string split_name =
      split == "test" ? "target_test" : split == "val" ? "target_val" : split;
  auto summary = metrics::evaluate_split(state.bundle.seg, b, manifest, split_name, pipeline);
  if (out.empty()) out = (fs::path(ckpt_path).parent_path() / "eval").string();
  const std::string stem = split_name + "_" + (b == Branch::SM ? "SM" : "SCM");
  metrics::write_summary(summary, manifest.num_labels, resolve_out_dir(out), stem);
  std::cout << metrics::summary_to_tsv(summary, manifest.num_labels);
  std::cout << "report written to " << (resolve_out_dir(out) / (stem + ".json")).string()
            << "\n";
  return 0;
}

int cmd_translate(const std::string& ckpt_path, const std::string& direction,
                  const std::string& split, const std::string& out, int max_images) {
  require_file(ckpt_path, "checkpoint");
  auto result = experiments::translate_and_report(ckpt_path, direction, split,
                                                  resolve_out_dir(out), max_images);
  std::cout << "translated " << result.translated << " images to " << result.out_dir.string()
            << "\nkl_per_label:";
  for (double k : result.kl_per_label) std::cout << " " << k;
  std::cout << "\n";
  return 0;
}

int cmd_ablate(const std::string& suite_path, const std::string& manifest_override,
               const std::string& out) {
  require_file(suite_path, "suite");
  auto suite = experiments::load_suite(suite_path);
  std::string manifest_path = manifest_override;
  if (manifest_path.empty()) manifest_path = suite.base.at("dataset_manifest").get<std::string>();
  require_file(manifest_path, "dataset manifest");
  auto table = experiments::run_suite(suite, manifest_path, resolve_out_dir(out));
  auto manifest = synth::load_manifest(manifest_path);
  std::cout << table.to_tsv(manifest.num_labels);
  return 0;
}

int cmd_make_suite(const std::string& kind, const std::string& manifest_path,
                   const std::string& out, std::vector<uint64_t> seeds) {
  require_file(manifest_path, "dataset manifest");
  if (seeds.empty()) seeds = {1, 2, 3};
  experiments::AblationSuite suite;
  if (kind == "loss") {
    suite = experiments::desk_loss_suite(manifest_path, "", seeds);
  } else if (kind == "variants") {
    suite = experiments::desk_variant_suite(manifest_path, "", seeds);
  } else {
    throw UsageError("unknown suite kind: " + kind + " (expected loss|variants)");
  }
  nlohmann::json j{{"schema_version", suite.schema_version},
                   {"name", suite.name},
                   {"base", suite.base},
                   {"seeds", suite.seeds},
                   {"entries", nlohmann::json::array()}};
  for (const auto& e : suite.entries)
    j["entries"].push_back(nlohmann::json{{"name", e.name}, {"delta", e.delta}});
  std::ofstream f(out);
  if (!f) throw std::runtime_error("cannot write " + out);
  f << j.dump(2) << "\n";
  std::cout << "suite written to " << out << "\n";
  return 0;
}

int cmd_plot(const std::string& run_dir) {
  if (!fs::exists(run_dir)) throw UsageError("run directory not found: " + run_dir);
  auto result = plots::emit_plots(run_dir);
  for (const auto& p : result.written) std::cout << "wrote " << p.string() << "\n";
  for (const auto& w : result.warnings) std::cout << "warning: " << w << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unpaired domain-adaptation segmentation workbench"};
  app.require_subcommand(1);

  std::string preset = "desk", out_dir, config_path, resume, ckpt_path, split, branch = "S_M";
  std::string direction, suite_path, manifest_path, run_dir, suite_kind;
  std::vector<uint64_t> seeds;
  uint64_t seed = 1;
  bool force = false;
  int max_images = 0;

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic two-domain dataset");
  synth_cmd->add_option("--preset", preset, "dataset preset")->capture_default_str();
  synth_cmd->add_option("--seed", seed, "generation seed")->capture_default_str();
  synth_cmd->add_option("--out", out_dir, "output directory")->required();
  synth_cmd->add_flag("--force", force, "overwrite an existing manifest");

  auto* train_cmd = app.add_subcommand("train", "train a model from a config file");
  train_cmd->add_option("--config", config_path, "train config JSON")->required();
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");
  train_cmd->add_flag("--force", force, "resume despite a config-hash mismatch");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--split", split, "val|test")->required();
  eval_cmd->add_option("--branch", branch, "S_M|S_C_M")->capture_default_str();
  eval_cmd->add_option("--manifest", manifest_path, "dataset manifest override");
  eval_cmd->add_option("--out", out_dir, "report directory");

  auto* tr_cmd = app.add_subcommand("translate", "translate images through a trained generator");
  tr_cmd->add_option("--ckpt", ckpt_path, "checkpoint file")->required();
  tr_cmd->add_option("--direction", direction, "c2m|m2c")->required();
  tr_cmd->add_option("--split", split, "input split (defaults per direction)");
  tr_cmd->add_option("--out", out_dir, "output directory")->required();
  tr_cmd->add_option("--max-images", max_images, "translate at most N images");

  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation suite");
  ablate_cmd->add_option("--suite", suite_path, "suite JSON")->required();
  ablate_cmd->add_option("--manifest", manifest_path, "dataset manifest override");
  ablate_cmd->add_option("--out", out_dir, "suite output directory")->required();

  auto* ms_cmd = app.add_subcommand("make-suite", "write a preset ablation suite file");
  ms_cmd->add_option("--kind", suite_kind, "loss|variants")->required();
  ms_cmd->add_option("--manifest", manifest_path, "dataset manifest")->required();
  ms_cmd->add_option("--out", out_dir, "suite file to write")->required();
  ms_cmd->add_option("--seeds", seeds, "seed list (default 1 2 3)");

  auto* plot_cmd = app.add_subcommand("plot", "render plots for a finished run");
  plot_cmd->add_option("--run", run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(preset, seed, out_dir, force);
    if (train_cmd->parsed()) return cmd_train(config_path, resume, force);
    if (eval_cmd->parsed()) return cmd_eval(ckpt_path, split, branch, manifest_path, out_dir);
    if (tr_cmd->parsed()) return cmd_translate(ckpt_path, direction, split, out_dir, max_images);
    if (ablate_cmd->parsed()) return cmd_ablate(suite_path, manifest_path, out_dir);
    if (ms_cmd->parsed()) return cmd_make_suite(suite_kind, manifest_path, out_dir, seeds);
    if (plot_cmd->parsed()) return cmd_plot(run_dir);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
