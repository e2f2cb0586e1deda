#include <doctest.h>

#include <fstream>

#include "psigan/checkpoint.hpp"
#include "psigan/trainer.hpp"
#include "test_util.hpp"

using namespace psigan;
using namespace psigan::train;

namespace {

std::pair<SourceBatch, TargetBatch> first_batches() {
  const auto& manifest = testutil::micro_dataset();
  auto pipeline = preprocess::pipeline_from_manifest(manifest);
  auto src =
      data::load_split(manifest, "source_train", pipeline, data::MaskSource::TrainerVisible);
  auto tgt = data::load_split(manifest, "target_train", pipeline, data::MaskSource::None);
  std::vector<int64_t> order(src.size());
  std::iota(order.begin(), order.end(), 0);
  return {{data::stack_images(src, order, 0, 2), data::stack_masks(src, order, 0, 2)},
          {data::stack_images(tgt, order, 0, 2)}};
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save -> load -> 10 steps equals uninterrupted 10 steps bit-compatibly") {
  const auto& manifest = testutil::micro_dataset();
  auto [src, tgt] = first_batches();
  auto cfg = testutil::micro_train_config();
  cfg.deterministic = true;

  // uninterrupted reference: 3 warmup + 10 recorded
  auto ref_state = init_train_state(cfg, manifest.num_labels);
  for (int i = 0; i < 3; ++i) train_step(ref_state, src, tgt);
  std::vector<LossReport> reference;
  for (int i = 0; i < 10; ++i) reference.push_back(train_step(ref_state, src, tgt));

  // interrupted: 3 warmup, save, load, 10 steps
  auto state = init_train_state(cfg, manifest.num_labels);
  for (int i = 0; i < 3; ++i) train_step(state, src, tgt);
  const auto path = testutil::fresh_dir("ckpt") / "mid.pt";
  ckpt::save_checkpoint(state, path);
  auto restored = ckpt::load_checkpoint(path);
  CHECK(restored.iteration == 3);
  std::vector<LossReport> replay;
  for (int i = 0; i < 10; ++i) replay.push_back(train_step(restored, src, tgt));

  for (int i = 0; i < 10; ++i) {
    CHECK(replay[i].total_g == reference[i].total_g);
    CHECK(replay[i].total_d == reference[i].total_d);
    CHECK(replay[i].total_s == reference[i].total_s);
    CHECK(replay[i].adv_g_cm == reference[i].adv_g_cm);
    CHECK(replay[i].struct_d == reference[i].struct_d);
    CHECK(replay[i].seg_m == reference[i].seg_m);
  }
}

TEST_CASE("checkpointed forward outputs reproduce bit-identically") {
  const auto& manifest = testutil::micro_dataset();
  auto [src, tgt] = first_batches();
  auto cfg = testutil::micro_train_config();
  auto state = init_train_state(cfg, manifest.num_labels);
  train_step(state, src, tgt);

  const auto path = testutil::fresh_dir("ckpt_fw") / "s.pt";
  ckpt::save_checkpoint(state, path);
  auto restored = ckpt::load_checkpoint(path);

  state.bundle.gen_cm->eval();
  restored.bundle.gen_cm->eval();
  state.bundle.seg->eval();
  restored.bundle.seg->eval();
  CHECK(torch::equal(state.bundle.gen_cm(src.images), restored.bundle.gen_cm(src.images)));
  CHECK(torch::equal(state.bundle.seg->forward_probs(tgt.images, Branch::SM),
                     restored.bundle.seg->forward_probs(tgt.images, Branch::SM)));
}

TEST_CASE("truncated checkpoint fails cleanly") {
  const auto& manifest = testutil::micro_dataset();
  auto cfg = testutil::micro_train_config();
  auto state = init_train_state(cfg, manifest.num_labels);
  const auto dir = testutil::fresh_dir("ckpt_trunc");
  const auto path = dir / "full.pt";
  ckpt::save_checkpoint(state, path);

  std::ifstream in(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto cut = dir / "cut.pt";
  std::ofstream out(cut, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 3));
  out.close();

  CHECK_THROWS_AS(ckpt::load_checkpoint(cut), std::runtime_error);
  CHECK_THROWS_AS(ckpt::load_checkpoint(dir / "missing.pt"), std::runtime_error);
}

TEST_CASE("config-hash mismatch refuses to resume unless forced") {
  const auto& manifest = testutil::micro_dataset();
  auto cfg = testutil::micro_train_config();
  auto state = init_train_state(cfg, manifest.num_labels);
  const auto path = testutil::fresh_dir("ckpt_hash") / "s.pt";
  ckpt::save_checkpoint(state, path);

  auto other = cfg;
  other.seed = cfg.seed + 1;
  CHECK(config_hash(other) != config_hash(cfg));
  CHECK_THROWS_AS(ckpt::load_checkpoint(path, config_hash(other)), std::runtime_error);
  CHECK_NOTHROW(ckpt::load_checkpoint(path, config_hash(other), /*force=*/true));
  CHECK_NOTHROW(ckpt::load_checkpoint(path, config_hash(cfg)));
}

TEST_CASE("atomic write leaves no temp file behind") {
  const auto& manifest = testutil::micro_dataset();
  auto cfg = testutil::micro_train_config();
  auto state = init_train_state(cfg, manifest.num_labels);
  const auto dir = testutil::fresh_dir("ckpt_atomic");
  ckpt::save_checkpoint(state, dir / "s.pt");
  CHECK(std::filesystem::exists(dir / "s.pt"));
  CHECK_FALSE(std::filesystem::exists(dir / "s.pt.tmp"));
}

}  // TEST_SUITE
