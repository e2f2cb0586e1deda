#include "psigan/trainer.hpp"

#include <unistd.h>

#include <algorithm>
#include <deque>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "psigan/checkpoint.hpp"
#include "psigan/image_io.hpp"
#include "psigan/rng.hpp"

namespace psigan::train {

using nlohmann::json;

namespace {

// Temporarily drops requires_grad on a set of parameters; gradients still flow
// through them to upstream tensors.
class FreezeGuard {
 public:
  explicit FreezeGuard(const std::vector<torch::Tensor>& params) {
    for (const auto& p : params) {
      saved_.emplace_back(p, p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (auto& [p, rg] : saved_) p.set_requires_grad(rg);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::pair<torch::Tensor, bool>> saved_;
};

std::vector<torch::Tensor> concat(std::initializer_list<std::vector<torch::Tensor>> groups) {
  std::vector<torch::Tensor> all;
  for (const auto& g : groups) all.insert(all.end(), g.begin(), g.end());
  return all;
}

bool group_touched(const std::vector<torch::Tensor>& params) {
  for (const auto& p : params) {
    if (p.grad().defined() && p.grad().abs().max().item<double>() > 0.0) return true;
  }
  return false;
}

void audit_phase(RoutingReport* audit, const models::ModelBundle& bundle,
                 const std::string& phase_name, const std::vector<std::string>& allowed,
                 const std::vector<std::string>& mode_consistent) {
  if (!audit) return;
  RoutingReport::Phase phase;
  phase.name = phase_name;
  phase.allowed = allowed;
  phase.mode_consistent = mode_consistent;
  for (const auto& [name, params] : bundle.named_groups()) {
    if (!group_touched(params)) continue;
    phase.touched.push_back(name);
    const bool is_allowed = std::find(allowed.begin(), allowed.end(), name) != allowed.end();
    const bool is_mode_ok =
        std::find(mode_consistent.begin(), mode_consistent.end(), name) != mode_consistent.end();
    if (!is_allowed && !is_mode_ok) phase.violations.push_back(name);
  }
  if (!phase.violations.empty()) {
    audit->ok = false;
    if (audit->first_violation.empty())
      audit->first_violation = phase_name + " phase leaked into " + phase.violations.front();
  }
  audit->phases.push_back(std::move(phase));
}

std::vector<std::string> struct_group_names(const models::ModelBundle& bundle) {
  std::vector<std::string> names;
  if (bundle.disc_struct.size() == 1) {
    names.push_back("disc_struct");
  } else {
    for (size_t i = 0; i < bundle.disc_struct.size(); ++i)
      names.push_back("disc_struct[" + std::to_string(i) + "]");
  }
  return names;
}

}  // namespace

void zero_all_grads(models::ModelBundle& bundle) {
  for (const auto& [name, params] : bundle.named_groups()) {
    for (const auto& p : params) {
      if (p.grad().defined()) p.mutable_grad().reset();
    }
  }
}

void set_lr(TrainState& state, double lr) {
  for (auto* opt : {state.opt_g.get(), state.opt_d.get(), state.opt_s.get()}) {
    if (!opt) continue;
    for (auto& group : opt->param_groups()) {
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    }
  }
}

TrainState init_train_state(const TrainConfig& config, int num_labels) {
  if (config.deterministic) at::set_num_threads(1);
  TrainState st;
  st.config = config;
  st.num_labels = num_labels;
  torch::manual_seed(config.seed);
  st.bundle = models::ModelBundle::create(config.bundle_spec(num_labels),
                                          derive_seed(config.seed, {0x1417}));
  const auto opts = torch::optim::AdamOptions(config.lr).betas({config.beta1, config.beta2});
  st.opt_g = std::make_unique<torch::optim::Adam>(st.bundle.generator_params(), opts);
  st.opt_d = std::make_unique<torch::optim::Adam>(st.bundle.discriminator_params(), opts);
  st.opt_s = std::make_unique<torch::optim::Adam>(st.bundle.segmentor_params(), opts);
  st.data_rng.seed(derive_seed(config.seed, {0xDA7A}));
  return st;
}

namespace {
// Losses reject non-finite logits by contract; fold that rejection into the
// trainer's abort-with-diagnostic policy.
[[noreturn]] void rethrow_as_abort(LossReport& rep, const std::invalid_argument& e) {
  if (std::string(e.what()).find("non-finite") != std::string::npos) {
    rep.finite = false;
    // no valid totals were produced this step
    rep.total_g = rep.total_d = rep.total_s = std::numeric_limits<double>::quiet_NaN();
    throw NonFiniteLossError(rep);
  }
  throw e;
}
}  // namespace

static LossReport train_step_impl(TrainState& state, const SourceBatch& source,
                                  const TargetBatch& target, RoutingReport* audit);

LossReport train_step(TrainState& state, const SourceBatch& source, const TargetBatch& target,
                      RoutingReport* audit) {
  try {
    return train_step_impl(state, source, target, audit);
  } catch (const std::invalid_argument& e) {
    LossReport rep;
    rep.iteration = state.iteration;
    rep.epoch = state.epoch;
    rethrow_as_abort(rep, e);
  }
}

static LossReport train_step_impl(TrainState& state, const SourceBatch& source,
                                  const TargetBatch& target, RoutingReport* audit) {
  auto& b = state.bundle;
  const auto& cfg = state.config;
  const auto mask = SettingMask::from_setting(cfg.ablation_setting);
  const auto form = cfg.loss_form;
  const bool single = cfg.segmentor_mode == SegmentorMode::Single;
  const auto struct_names = struct_group_names(b);

  LossReport rep;
  rep.iteration = state.iteration;
  rep.epoch = state.epoch;
  rep.lr = static_cast<torch::optim::AdamOptions&>(state.opt_g->param_groups()[0].options()).lr();

  const auto& x_c = source.images;
  const auto& y_c = source.labels;
  const auto& x_m = target.images;

  // ------------------------------------------------------------------
  // phase 1: generator update (discriminators and segmentors frozen;
  // the SCM path stays differentiable through to the generator)
  // ------------------------------------------------------------------
  zero_all_grads(b);
  torch::Tensor x_cm, x_mc;
  {
    std::vector<torch::Tensor> frozen_discs =
        concat({b.disc_m->parameters(), b.disc_c->parameters()});
    if (!state.fixture_skip_struct_freeze) {
      for (const auto& d : b.disc_struct) {
        auto p = d->parameters();
        frozen_discs.insert(frozen_discs.end(), p.begin(), p.end());
      }
    }
    FreezeGuard freeze_discs(frozen_discs);
    std::optional<FreezeGuard> freeze_seg;
    if (!single) freeze_seg.emplace(b.segmentor_params());
    b.seg->eval();  // frozen batch statistics while producing probability maps

    x_cm = models::forward_generator(b.gen_cm, x_c);
    torch::Tensor total = torch::zeros({}, x_c.options());

    if (mask.adv_cm) {
      auto t = adversarial_loss({}, b.disc_m(x_cm), GanRole::Generator, form);
      rep.adv_g_cm = t.item<double>();
      total = total + t;
    }
    if (mask.adv_mc || mask.cyc) x_mc = models::forward_generator(b.gen_mc, x_m);
    if (mask.adv_mc) {
      auto t = adversarial_loss({}, b.disc_c(x_mc), GanRole::Generator, form);
      rep.adv_g_mc = t.item<double>();
      total = total + t;
    }
    if (mask.cyc) {
      auto rec_c = b.gen_mc(x_cm);
      auto rec_m = b.gen_cm(x_mc);
      auto t = cycle_loss(x_c, rec_c) + cycle_loss(x_m, rec_m);
      rep.cyc = t.item<double>();
      total = total + cfg.weights.lambda_cyc * t;
    }
    if (mask.strct) {
      auto probs_scm = b.seg->forward_probs(x_cm, Branch::SCM);
      auto pairs = make_joint_pair(x_cm, probs_scm, cfg.pair_variant);
      torch::Tensor sg = torch::zeros({}, x_c.options());
      for (size_t i = 0; i < pairs.size(); ++i) {
        sg = sg + structure_generator_loss(b.disc_struct[i](pairs[i]), form);
      }
      sg = sg / static_cast<double>(pairs.size());
      rep.struct_g = sg.item<double>();
      total = total + cfg.weights.lambda_struct * sg;

      auto fb = cross_entropy_probs(probs_scm, y_c);
      rep.seg_feedback = fb.item<double>();
      total = total + cfg.weights.lambda_seg * fb;
    }
    rep.total_g = total.item<double>();
    if (!std::isfinite(rep.total_g)) {
      rep.finite = false;
      throw NonFiniteLossError(rep);
    }
    total.backward();
    if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(b.generator_params(), cfg.grad_clip);
  }
  audit_phase(audit, b, "generator", {"gen_cm", "gen_mc"},
              single ? std::vector<std::string>{"enc_m", "decoder"}
                     : std::vector<std::string>{});
  state.opt_g->step();

  // ------------------------------------------------------------------
  // phase 2: discriminator updates; translations and probability maps
  // enter as constants
  // ------------------------------------------------------------------
  zero_all_grads(b);
  auto x_cm_d = x_cm.detach();
  {
    FreezeGuard freeze_rest(concat({b.generator_params(), b.segmentor_params()}));
    torch::Tensor total = torch::zeros({}, x_c.options());
    bool any_d_term = false;

    if (mask.adv_cm) {
      auto t = adversarial_loss(b.disc_m(x_m), b.disc_m(x_cm_d), GanRole::Discriminator, form);
      rep.adv_d_cm = t.item<double>();
      total = total + t;
      any_d_term = true;
    }
    if (mask.adv_mc) {
      auto t = adversarial_loss(b.disc_c(x_c), b.disc_c(x_mc.detach()), GanRole::Discriminator,
                                form);
      rep.adv_d_mc = t.item<double>();
      total = total + t;
      any_d_term = true;
    }
    if (mask.strct) {
      torch::Tensor probs_m, probs_cm;
      {
        torch::NoGradGuard no_grad;
        b.seg->eval();
        probs_m = b.seg->forward_probs(x_m, Branch::SM);
        probs_cm = b.seg->forward_probs(x_cm_d, Branch::SM);
      }
      auto real_pairs = make_joint_pair(x_m, probs_m, cfg.pair_variant);
      auto fake_pairs = make_joint_pair(x_cm_d, probs_cm, cfg.pair_variant);
      torch::Tensor sd = torch::zeros({}, x_c.options());
      for (size_t i = 0; i < real_pairs.size(); ++i) {
        sd = sd + structure_discriminator_loss(b.disc_struct[i](real_pairs[i]),
                                               b.disc_struct[i](fake_pairs[i]), form);
      }
      sd = sd / static_cast<double>(real_pairs.size());
      rep.struct_d = sd.item<double>();
      total = total + cfg.weights.lambda_struct * sd;
      any_d_term = true;
    }
    rep.total_d = total.item<double>();
    if (!std::isfinite(rep.total_d)) {
      rep.finite = false;
      throw NonFiniteLossError(rep);
    }
    if (any_d_term) total.backward();
    if (cfg.grad_clip > 0)
      torch::nn::utils::clip_grad_norm_(b.discriminator_params(), cfg.grad_clip);
  }
  {
    std::vector<std::string> allowed{"disc_m", "disc_c"};
    allowed.insert(allowed.end(), struct_names.begin(), struct_names.end());
    audit_phase(audit, b, "discriminator", allowed, {});
  }
  state.opt_d->step();

  // ------------------------------------------------------------------
  // phase 3: segmentor update on detached pseudo-target images; the shared
  // decoder receives both branches' gradients in one step
  // ------------------------------------------------------------------
  zero_all_grads(b);
  {
    FreezeGuard freeze_rest(concat({b.generator_params(), b.discriminator_params()}));
    b.seg->train();
    torch::Tensor total;
    if (single) {
      auto probs = b.seg->forward_probs(x_cm_d, Branch::SM);
      auto l = cross_entropy_probs(probs, y_c);
      rep.seg_m = l.item<double>();
      rep.seg_mbar = 0.0;
      total = l;
    } else {
      auto probs_sm = b.seg->forward_probs(x_cm_d, Branch::SM);
      auto probs_scm = b.seg->forward_probs(x_cm_d, Branch::SCM);
      auto [l_m, l_mbar] = segmentation_loss(probs_sm, probs_scm, y_c);
      rep.seg_m = l_m.item<double>();
      rep.seg_mbar = l_mbar.item<double>();
      total = l_m + l_mbar;
    }
    rep.total_s = total.item<double>();
    if (!std::isfinite(rep.total_s)) {
      rep.finite = false;
      throw NonFiniteLossError(rep);
    }
    total.backward();
    if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(b.segmentor_params(), cfg.grad_clip);
  }
  audit_phase(audit, b, "segmentor",
              single ? std::vector<std::string>{"enc_m", "decoder"}
                     : std::vector<std::string>{"enc_m", "enc_cm", "decoder"},
              {});
  state.opt_s->step();

  ++state.iteration;
  return rep;
}

// ---------------------------------------------------------------------------
// full training loop
// ---------------------------------------------------------------------------

namespace {

void write_snapshot(const std::filesystem::path& dir, int epoch, TrainState& state,
                    const data::SplitTensors& val, const data::SplitTensors& src,
                    const data::SplitTensors& tgt) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  torch::NoGradGuard no_grad;
  auto& b = state.bundle;
  b.seg->eval();
  char name[64];

  auto to_unit16 = [](const torch::Tensor& t01) {
    return (t01.clamp(0, 1) * 65535).round().to(torch::kInt32);
  };

  // probability-map snapshot of a fixed validation sample
  auto val_img = val.images[0].unsqueeze(0);
  auto probs = b.seg->forward_probs(val_img, Branch::SM);
  auto soi = aggregate_soi_probability(probs).squeeze();
  std::snprintf(name, sizeof(name), "psi_epoch%03d.pgm", epoch);
  write_pgm(dir / name, to_unit16(soi), 65535);

  // translation triplet: source / pseudo-target / real target
  auto src_img = src.images[0].unsqueeze(0);
  auto fake = b.gen_cm(src_img).squeeze();
  auto disp = [&](const torch::Tensor& t) { return to_unit16((t + 1) / 2); };
  std::snprintf(name, sizeof(name), "source_epoch%03d.pgm", epoch);
  write_pgm(dir / name, disp(src_img.squeeze()), 65535);
  std::snprintf(name, sizeof(name), "fake_epoch%03d.pgm", epoch);
  write_pgm(dir / name, disp(fake), 65535);
  std::snprintf(name, sizeof(name), "real_epoch%03d.pgm", epoch);
  write_pgm(dir / name, disp(tgt.images[0].squeeze()), 65535);

  std::snprintf(name, sizeof(name), "meta_epoch%03d.json", epoch);
  std::ofstream meta(dir / name);
  meta << json{{"epoch", epoch}, {"iteration", state.iteration}}.dump() << "\n";
}

std::string file_hash(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return fnv1a64_hex(ss.str());
}

class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (std::filesystem::exists(path_))
      throw std::runtime_error("run directory " + dir.string() +
                               " is locked by another writer (stale? remove .lock)");
    std::ofstream out(path_);
    out << "pid " << ::getpid() << "\n";
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }

 private:
  std::filesystem::path path_;
};

}  // namespace

TrainResult train(const TrainConfig& config, const std::string& resume_checkpoint,
                  bool force_resume) {
  namespace fs = std::filesystem;

  const std::string hash = config_hash(config);
  fs::path run_dir = config.out_dir.empty()
                         ? resolve_out_dir("runs") / ("run_" + hash.substr(0, 12))
                         : resolve_out_dir(config.out_dir);

  auto manifest = synth::load_manifest(config.dataset_manifest);
  auto pipeline = preprocess::pipeline_from_manifest(manifest);

  // a rejected resume must not touch the run directory
  TrainState state = resume_checkpoint.empty()
                         ? init_train_state(config, manifest.num_labels)
                         : ckpt::load_checkpoint(resume_checkpoint, config_hash(config),
                                                 force_resume);
  if (config.deterministic) at::set_num_threads(1);

  RunLock lock(run_dir);

  // run directory is self-describing
  save_train_config(config, run_dir / "config.json");
  {
    std::ofstream out(run_dir / "manifest_hash.txt");
    out << file_hash(config.dataset_manifest) << "\n";
    std::ofstream pj(run_dir / "pipeline.json");
    pj << preprocess::pipeline_to_json(pipeline).dump(2) << "\n";
  }

  auto src = data::load_split(manifest, "source_train", pipeline, data::MaskSource::TrainerVisible);
  auto tgt = data::load_split(manifest, "target_train", pipeline, data::MaskSource::None);
  auto val = data::load_split(manifest, "target_val", pipeline, data::MaskSource::None);

  const fs::path ckpt_dir = run_dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  std::ofstream history(run_dir / "history.jsonl", std::ios::app);

  TrainResult result;
  result.run_dir = run_dir;
  std::deque<double> gap_window;

  const int64_t batch = config.batch_size;
  const int64_t n_pairs = std::min(src.size(), tgt.size());
  int64_t iters_per_epoch = n_pairs / batch;
  if (config.max_iters_per_epoch > 0)
    iters_per_epoch = std::min<int64_t>(iters_per_epoch, config.max_iters_per_epoch);
  if (iters_per_epoch == 0)
    throw std::runtime_error("train: dataset smaller than one batch");

  try {
    for (; state.epoch < config.total_epochs(); ++state.epoch) {
      set_lr(state, lr_at(config, state.epoch));
      auto order_src = data::epoch_order(src.size(), state.data_rng);
      auto order_tgt = data::epoch_order(tgt.size(), state.data_rng);

      for (int64_t it = 0; it < iters_per_epoch; ++it) {
        SourceBatch sb{data::stack_images(src, order_src, it * batch, batch),
                       data::stack_masks(src, order_src, it * batch, batch)};
        TargetBatch tb{data::stack_images(tgt, order_tgt, it * batch, batch)};
        auto rep = train_step(state, sb, tb);
        history << rep.to_json().dump() << "\n";
        gap_window.push_back(std::abs(rep.struct_g - rep.struct_d));
        if (gap_window.size() > 200) gap_window.pop_front();
        ++result.iterations;
      }
      history.flush();

      const int done = state.epoch + 1;
      if (config.snapshot_every_epochs > 0 && done % config.snapshot_every_epochs == 0)
        write_snapshot(run_dir / "snapshots", done, state, val, src, tgt);
      if (config.checkpoint_every_epochs > 0 && done % config.checkpoint_every_epochs == 0) {
        char name[64];
        std::snprintf(name, sizeof(name), "epoch%03d.pt", done);
        // state.epoch must reflect the NEXT epoch on resume
        ++state.epoch;
        ckpt::save_checkpoint(state, ckpt_dir / name);
        --state.epoch;
      }
    }
  } catch (const NonFiniteLossError& e) {
    std::ofstream abort_file(run_dir / "abort.json");
    abort_file << json{{"reason", e.what()}, {"report", e.report.to_json()}}.dump(2) << "\n";
    result.aborted = true;
    result.abort_reason = e.what();
  }

  if (!result.aborted) {
    ckpt::save_checkpoint(state, run_dir / "final.pt");
  }
  if (!gap_window.empty()) {
    double s = 0;
    for (double g : gap_window) s += g;
    result.struct_gap_rolling = s / static_cast<double>(gap_window.size());
  }
  json summary{{"iterations", result.iterations},
               {"aborted", result.aborted},
               {"struct_gap_rolling", result.struct_gap_rolling},
               {"parameters",
                json{{"gen_cm", models::count_parameters(*state.bundle.gen_cm)},
                     {"disc_m", models::count_parameters(*state.bundle.disc_m)},
                     {"segmentor", models::count_parameters(*state.bundle.seg)}}}};
  std::ofstream sf(run_dir / "summary.json");
  sf << summary.dump(2) << "\n";
  return result;
}

models::SplitSegmentor train_supervised(const data::SplitTensors& split, int num_labels,
                                        const TrainConfig& schedule, uint64_t seed) {
  if (schedule.deterministic) at::set_num_threads(1);
  torch::manual_seed(seed);
  models::SegmentorSpec spec;
  spec.num_classes = num_labels;
  spec.base_width = schedule.seg_base_width;
  spec.single_mode = true;
  models::SplitSegmentor seg(spec);
  models::init_weights(*seg, derive_seed(seed, {0x5e6}));

  torch::optim::Adam opt(seg->parameters(), torch::optim::AdamOptions(schedule.lr)
                                                .betas({schedule.beta1, schedule.beta2}));
  std::mt19937_64 rng(derive_seed(seed, {0xDA7A, 2}));
  const int64_t batch = schedule.batch_size;
  seg->train();
  for (int epoch = 0; epoch < schedule.total_epochs(); ++epoch) {
    const double lr = lr_at(schedule, epoch);
    for (auto& group : opt.param_groups())
      static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
    auto order = data::epoch_order(split.size(), rng);
    int64_t iters = split.size() / batch;
    if (schedule.max_iters_per_epoch > 0)
      iters = std::min<int64_t>(iters, schedule.max_iters_per_epoch);
    for (int64_t it = 0; it < iters; ++it) {
      auto images = data::stack_images(split, order, it * batch, batch);
      auto labels = data::stack_masks(split, order, it * batch, batch);
      opt.zero_grad();
      auto probs = seg->forward_probs(images, Branch::SM);
      auto loss = cross_entropy_probs(probs, labels);
      loss.backward();
      opt.step();
    }
  }
  return seg;
}

}  // namespace psigan::train
