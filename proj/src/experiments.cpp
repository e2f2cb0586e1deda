#include "psigan/experiments.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>

#include "psigan/checkpoint.hpp"
#include "psigan/image_io.hpp"

namespace psigan::experiments {

using nlohmann::json;

AblationSuite suite_from_json(const json& j) {
  AblationSuite s;
  s.schema_version = j.at("schema_version").get<int>();
  if (s.schema_version != 1)
    throw std::invalid_argument("suite: unsupported schema_version " +
                                std::to_string(s.schema_version));
  s.name = j.at("name").get<std::string>();
  s.base = j.at("base");
  train_config_from_json(s.base);  // validate early
  s.seeds = j.at("seeds").get<std::vector<uint64_t>>();
  if (s.seeds.empty()) throw std::invalid_argument("suite: needs at least one seed");
  std::vector<std::string> names;
  for (const auto& je : j.at("entries")) {
    SuiteEntry e;
    e.name = je.at("name").get<std::string>();
    e.delta = je.value("delta", json::object());
    if (std::find(names.begin(), names.end(), e.name) != names.end())
      throw std::invalid_argument("suite: duplicate entry name '" + e.name + "'");
    names.push_back(e.name);
    s.entries.push_back(e);
  }
  if (s.entries.empty()) throw std::invalid_argument("suite: no entries");
  return s;
}

AblationSuite load_suite(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open suite file " + file.string());
  json j;
  in >> j;
  return suite_from_json(j);
}

namespace {

json desk_base(const std::string& manifest_path) {
  TrainConfig base;
  base.dataset_manifest = manifest_path;
  return train_config_to_json(base);
}

}  // namespace

AblationSuite desk_loss_suite(const std::string& manifest_path, const std::string& out_root,
                              std::vector<uint64_t> seeds) {
  json j{{"schema_version", 1},
         {"name", "desk_loss_settings"},
         {"base", desk_base(manifest_path)},
         {"seeds", seeds},
         {"entries", json::array()}};
  for (int setting = 1; setting <= 6; ++setting) {
    j["entries"].push_back(json{{"name", "setting" + std::to_string(setting)},
                                {"delta", json{{"ablation_setting", setting}}}});
  }
  (void)out_root;
  return suite_from_json(j);
}

AblationSuite desk_variant_suite(const std::string& manifest_path, const std::string& out_root,
                                 std::vector<uint64_t> seeds) {
  json j{{"schema_version", 1},
         {"name", "desk_struct_input_variants"},
         {"base", desk_base(manifest_path)},
         {"seeds", seeds},
         {"entries", json::array()}};
  for (const char* v :
       {"seg_multi", "seg_agg", "img_seg_multi", "img_seg_per_soi", "img_seg_agg"}) {
    j["entries"].push_back(json{{"name", std::string("variant_") + v},
                                {"delta", json{{"pair_variant", v}}}});
  }
  (void)out_root;
  return suite_from_json(j);
}

std::vector<ResolvedRun> expand_suite(const AblationSuite& suite) {
  std::vector<ResolvedRun> runs;
  for (const auto& entry : suite.entries) {
    json merged = suite.base;
    for (auto it = entry.delta.begin(); it != entry.delta.end(); ++it)
      merged[it.key()] = it.value();
    for (uint64_t seed : suite.seeds) {
      merged["seed"] = seed;
      ResolvedRun run;
      run.entry = entry.name;
      run.seed = seed;
      run.config = train_config_from_json(merged);
      runs.push_back(run);
    }
  }
  return runs;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of empty set");
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

// ---------------------------------------------------------------------------

namespace {

// Per-label KL(pseudo || real): pseudo-target translations of source-train
// images inside their own labels, against real target-test intensities inside
// the evaluation masks.
std::vector<double> kl_per_label(models::ResnetGenerator& gen_cm,
                                 const synth::DatasetManifest& manifest,
                                 const preprocess::IntensityPipelineConfig& pipeline,
                                 int max_images) {
  torch::NoGradGuard no_grad;
  auto src = data::load_split(manifest, "source_train", pipeline, data::MaskSource::TrainerVisible);
  auto tgt = data::load_split(manifest, "target_test", pipeline, data::MaskSource::EvalOnly);
  const int64_t n_src = max_images > 0 ? std::min<int64_t>(max_images, src.size()) : src.size();

  std::vector<torch::Tensor> pseudo_images, pseudo_masks_all;
  for (int64_t i = 0; i < n_src; ++i) {
    pseudo_images.push_back(gen_cm(src.images[i].unsqueeze(0)).squeeze());
    pseudo_masks_all.push_back(src.masks[i]);
  }
  std::vector<double> out;
  for (int label = 1; label < manifest.num_labels; ++label) {
    std::vector<torch::Tensor> pm, rm, ri;
    for (int64_t i = 0; i < n_src; ++i) pm.push_back(pseudo_masks_all[i] == label);
    for (int64_t i = 0; i < tgt.size(); ++i) {
      ri.push_back(tgt.images[i].squeeze());
      rm.push_back(tgt.masks[i] == label);
    }
    out.push_back(metrics::kl_intensity_divergence(pseudo_images, pm, ri, rm));
  }
  return out;
}

struct EntryOutcome {
  double overall_dsc = 0.0;
  std::vector<double> per_label_dsc;
  std::vector<double> per_label_kl;
};

EntryOutcome eval_run_dir(const std::filesystem::path& run_dir,
                          const synth::DatasetManifest& manifest,
                          const preprocess::IntensityPipelineConfig& pipeline) {
  auto state = ckpt::load_checkpoint(run_dir / "final.pt");
  auto summary =
      metrics::evaluate_split(state.bundle.seg, Branch::SM, manifest, "target_test", pipeline);
  metrics::write_summary(summary, manifest.num_labels, run_dir / "eval", "target_test_SM");

  EntryOutcome outcome;
  outcome.overall_dsc = summary.mean_overall_dsc;
  outcome.per_label_dsc = summary.mean_dsc;
  outcome.per_label_kl = kl_per_label(state.bundle.gen_cm, manifest, pipeline, 32);
  {
    std::ofstream out(run_dir / "eval" / "kl_per_label.json");
    out << json{{"schema_version", 1}, {"kl_per_label", outcome.per_label_kl}}.dump(2) << "\n";
  }
  return outcome;
}

EntryOutcome load_cached_outcome(const std::filesystem::path& run_dir, int num_labels) {
  std::ifstream mfile(run_dir / "eval" / "target_test_SM.json");
  json mj;
  mfile >> mj;
  EntryOutcome outcome;
  outcome.overall_dsc = mj.at("mean_overall_dsc").get<double>();
  outcome.per_label_dsc = mj.at("mean_dsc").get<std::vector<double>>();
  std::ifstream kfile(run_dir / "eval" / "kl_per_label.json");
  if (kfile) {
    json kj;
    kfile >> kj;
    outcome.per_label_kl = kj.at("kl_per_label").get<std::vector<double>>();
  }
  (void)num_labels;
  return outcome;
}

bool run_completed(const std::filesystem::path& run_dir, const std::string& expected_hash) {
  if (!std::filesystem::exists(run_dir / "final.pt") ||
      !std::filesystem::exists(run_dir / "eval" / "target_test_SM.json"))
    return false;
  try {
    return ckpt::checkpoint_config_hash(run_dir / "final.pt") == expected_hash;
  } catch (...) {
    return false;
  }
}

ComparisonRow summarize_entry(const std::string& name,
                              const std::vector<EntryOutcome>& outcomes, int num_labels) {
  ComparisonRow row;
  row.entry = name;
  for (const auto& o : outcomes) row.per_seed_overall.push_back(o.overall_dsc);
  row.median_overall_dsc = median(row.per_seed_overall);
  for (int l = 0; l + 1 < num_labels; ++l) {
    std::vector<double> v;
    for (const auto& o : outcomes) v.push_back(o.per_label_dsc[l]);
    row.median_per_label_dsc.push_back(median(v));
    if (!outcomes.front().per_label_kl.empty()) {
      std::vector<double> kv;
      for (const auto& o : outcomes) kv.push_back(o.per_label_kl[l]);
      row.median_per_label_kl.push_back(median(kv));
    }
  }
  return row;
}

}  // namespace

ComparisonTable run_suite(const AblationSuite& suite, const std::string& manifest_path,
                          const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto manifest = synth::load_manifest(manifest_path);
  auto pipeline = preprocess::pipeline_from_manifest(manifest);
  const int k = manifest.num_labels;

  ComparisonTable table;

  for (const auto& entry : suite.entries) {
    std::vector<EntryOutcome> outcomes;
    std::string error;
    for (uint64_t seed : suite.seeds) {
      try {
        json merged = suite.base;
        for (auto it = entry.delta.begin(); it != entry.delta.end(); ++it)
          merged[it.key()] = it.value();
        merged["seed"] = seed;
        merged["dataset_manifest"] = manifest_path;
        auto config = train_config_from_json(merged);
        const fs::path run_dir =
            out_dir / (entry.name + "_s" + std::to_string(seed));
        config.out_dir = run_dir.string();

        if (run_completed(run_dir, config_hash(config))) {
          std::cout << "[suite] " << entry.name << " seed " << seed << ": cached\n";
          outcomes.push_back(load_cached_outcome(run_dir, k));
          continue;
        }
        std::cout << "[suite] " << entry.name << " seed " << seed << ": training\n";
        auto result = train::train(config);
        if (result.aborted) throw std::runtime_error("training aborted: " + result.abort_reason);
        outcomes.push_back(eval_run_dir(run_dir, manifest, pipeline));
      } catch (const std::exception& e) {
        error = e.what();
        std::cout << "[suite] " << entry.name << " seed " << seed << " failed: " << error
                  << "\n";
      }
    }
    if (outcomes.empty()) {
      ComparisonRow row;
      row.entry = entry.name;
      row.failed = true;
      row.error = error;
      table.rows.push_back(row);
    } else {
      table.rows.push_back(summarize_entry(entry.name, outcomes, k));
    }
  }

  // baselines: no adaptation (train on raw source) and supervised ceiling
  // (train on the labeled validation set), mirrored from the comparison rows
  const auto base_config = train_config_from_json(suite.base);
  auto src = data::load_split(manifest, "source_train", pipeline, data::MaskSource::TrainerVisible);
  auto val = data::load_split(manifest, "target_val", pipeline, data::MaskSource::EvalOnly);

  // Baselines see roughly the same optimizer-step budget as a GAN entry's
  // segmentor; small splits (the supervised ceiling) get more epochs.
  auto scaled_schedule = [&](int64_t split_size) {
    auto schedule = base_config;
    auto capped = [&](int64_t n) {
      int64_t iters = n / schedule.batch_size;
      if (schedule.max_iters_per_epoch > 0)
        iters = std::min<int64_t>(iters, schedule.max_iters_per_epoch);
      return std::max<int64_t>(1, iters);
    };
    const int64_t gan_steps =
        schedule.total_epochs() *
        capped(std::min<int64_t>(manifest.source_train.size(), manifest.target_train.size()));
    const int64_t epochs = (gan_steps + capped(split_size) - 1) / capped(split_size);
    const double const_frac =
        static_cast<double>(schedule.epochs_constant) / schedule.total_epochs();
    schedule.epochs_constant = std::max<int>(1, static_cast<int>(std::lround(epochs * const_frac)));
    schedule.epochs_decay = std::max<int>(0, static_cast<int>(epochs) - schedule.epochs_constant);
    return schedule;
  };

  auto run_baseline = [&](const std::string& name, const data::SplitTensors& split) {
    std::vector<EntryOutcome> outcomes;
    std::string error;
    for (uint64_t seed : suite.seeds) {
      try {
        const fs::path bdir = out_dir / (name + "_s" + std::to_string(seed));
        fs::create_directories(bdir / "eval");
        EntryOutcome outcome;
        if (fs::exists(bdir / "eval" / "target_test_SM.json")) {
          std::cout << "[suite] " << name << " seed " << seed << ": cached\n";
          outcome = load_cached_outcome(bdir, k);
        } else {
          std::cout << "[suite] " << name << " seed " << seed << ": training\n";
          auto seg = train::train_supervised(split, k, scaled_schedule(split.size()), seed);
          auto summary = metrics::evaluate_split(seg, Branch::SM, manifest, "target_test",
                                                 pipeline);
          metrics::write_summary(summary, k, bdir / "eval", "target_test_SM");
          outcome.overall_dsc = summary.mean_overall_dsc;
          outcome.per_label_dsc = summary.mean_dsc;
        }
        outcomes.push_back(outcome);
      } catch (const std::exception& e) {
        error = e.what();
      }
    }
    if (outcomes.empty()) {
      ComparisonRow row;
      row.entry = name;
      row.failed = true;
      row.error = error;
      table.rows.push_back(row);
    } else {
      table.rows.push_back(summarize_entry(name, outcomes, k));
    }
  };
  run_baseline("no_adaptation", src);
  run_baseline("supervised", val);

  std::ofstream jf(out_dir / "comparison.json");
  jf << table.to_json(k).dump(2) << "\n";
  std::ofstream tf(out_dir / "comparison.tsv");
  tf << table.to_tsv(k);
  return table;
}

json ComparisonTable::to_json(int num_labels) const {
  json rows_json = json::array();
  for (const auto& r : rows) {
    rows_json.push_back(json{{"entry", r.entry},
                             {"median_overall_dsc", r.median_overall_dsc},
                             {"per_seed_overall", r.per_seed_overall},
                             {"median_per_label_dsc", r.median_per_label_dsc},
                             {"median_per_label_kl", r.median_per_label_kl},
                             {"failed", r.failed},
                             {"error", r.error}});
  }
  return json{{"schema_version", 1}, {"num_labels", num_labels}, {"rows", rows_json}};
}

std::string ComparisonTable::to_tsv(int num_labels) const {
  std::ostringstream out;
  out << "entry\tmedian_overall_dsc";
  for (int l = 1; l < num_labels; ++l) out << "\tdsc_label" << l;
  out << "\n";
  for (const auto& r : rows) {
    out << r.entry << "\t";
    if (r.failed) {
      out << "FAILED(" << r.error << ")";
    } else {
      out << r.median_overall_dsc;
      for (double d : r.median_per_label_dsc) out << "\t" << d;
    }
    out << "\n";
  }
  return out.str();
}

TranslateResult translate_and_report(const std::filesystem::path& checkpoint,
                                     const std::string& direction, const std::string& split,
                                     const std::filesystem::path& out_dir, int max_images) {
  namespace fs = std::filesystem;
  if (direction != "c2m" && direction != "m2c")
    throw std::invalid_argument("translate: direction must be c2m or m2c");
  auto state = ckpt::load_checkpoint(checkpoint);
  auto manifest = synth::load_manifest(state.config.dataset_manifest);
  auto pipeline = preprocess::pipeline_from_manifest(manifest);
  fs::create_directories(out_dir);

  torch::NoGradGuard no_grad;
  TranslateResult result;
  result.out_dir = out_dir;

  const std::string src_split = direction == "c2m" ? (split.empty() ? "source_train" : split)
                                                   : (split.empty() ? "target_test" : split);
  auto source = data::load_split(manifest, src_split, pipeline,
                                 src_split == "source_train" ? data::MaskSource::TrainerVisible
                                                             : data::MaskSource::EvalOnly);
  auto& gen = direction == "c2m" ? state.bundle.gen_cm : state.bundle.gen_mc;
  const int64_t n =
      max_images > 0 ? std::min<int64_t>(max_images, source.size()) : source.size();
  for (int64_t i = 0; i < n; ++i) {
    auto fake = gen(source.images[i].unsqueeze(0)).squeeze();
    char name[64];
    std::snprintf(name, sizeof(name), "pseudo_%05d.pgm", static_cast<int>(i));
    write_pgm(out_dir / name, ((fake.clamp(-1, 1) + 1) / 2 * 65535).round().to(torch::kInt32),
              65535);
    ++result.translated;
  }

  if (direction == "c2m") {
    result.kl_per_label = kl_per_label(state.bundle.gen_cm, manifest, pipeline,
                                       max_images > 0 ? max_images : 32);
  } else {
    // pseudo-source vs real source, inside evaluation masks
    auto real = data::load_split(manifest, "source_train", pipeline,
                                 data::MaskSource::TrainerVisible);
    std::vector<torch::Tensor> pi, pm;
    for (int64_t i = 0; i < n; ++i) {
      pi.push_back(gen(source.images[i].unsqueeze(0)).squeeze());
      pm.push_back(source.masks[i]);
    }
    for (int label = 1; label < manifest.num_labels; ++label) {
      std::vector<torch::Tensor> pmask, rmask, rimg;
      for (int64_t i = 0; i < n; ++i) pmask.push_back(pm[i] == label);
      for (int64_t i = 0; i < real.size(); ++i) {
        rimg.push_back(real.images[i].squeeze());
        rmask.push_back(real.masks[i] == label);
      }
      result.kl_per_label.push_back(metrics::kl_intensity_divergence(pi, pmask, rimg, rmask));
    }
  }
  std::ofstream out(out_dir / "kl_report.json");
  out << json{{"schema_version", 1},
              {"direction", direction},
              {"split", src_split},
              {"translated", result.translated},
              {"kl_per_label", result.kl_per_label}}
             .dump(2)
      << "\n";
  return result;
}

}  // namespace psigan::experiments
