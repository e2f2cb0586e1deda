#include "psigan/checkpoint.hpp"

#include <ATen/Context.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace psigan::ckpt {

namespace {

torch::Tensor string_to_tensor(const std::string& s) {
  auto t = torch::empty({static_cast<int64_t>(s.size())}, torch::kUInt8);
  std::memcpy(t.data_ptr<uint8_t>(), s.data(), s.size());
  return t;
}

std::string tensor_to_string(const torch::Tensor& t) {
  auto c = t.to(torch::kUInt8).contiguous();
  return std::string(reinterpret_cast<const char*>(c.data_ptr<uint8_t>()), c.numel());
}

void write_module(torch::serialize::OutputArchive& archive, const std::string& key,
                  const std::shared_ptr<torch::nn::Module>& module) {
  torch::serialize::OutputArchive sub;
  module->save(sub);
  archive.write(key, sub);
}

void read_module(torch::serialize::InputArchive& archive, const std::string& key,
                 const std::shared_ptr<torch::nn::Module>& module) {
  torch::serialize::InputArchive sub;
  archive.read(key, sub);
  module->load(sub);
}

void write_optimizer(torch::serialize::OutputArchive& archive, const std::string& key,
                     torch::optim::Adam& opt) {
  torch::serialize::OutputArchive sub;
  opt.save(sub);
  archive.write(key, sub);
}

void read_optimizer(torch::serialize::InputArchive& archive, const std::string& key,
                    torch::optim::Adam& opt) {
  torch::serialize::InputArchive sub;
  archive.read(key, sub);
  opt.load(sub);
}

}  // namespace

void save_checkpoint(const train::TrainState& state, const std::filesystem::path& path) {
  torch::serialize::OutputArchive archive;
  archive.write("schema_version", torch::IValue(static_cast<int64_t>(kSchemaVersion)));
  archive.write("config_hash", torch::IValue(config_hash(state.config)));
  archive.write("config_json",
                torch::IValue(canonical_json(train_config_to_json(state.config))));
  archive.write("num_labels", torch::IValue(static_cast<int64_t>(state.num_labels)));
  archive.write("epoch", torch::IValue(static_cast<int64_t>(state.epoch)));
  archive.write("iteration", torch::IValue(state.iteration));

  write_module(archive, "gen_cm", state.bundle.gen_cm.ptr());
  write_module(archive, "gen_mc", state.bundle.gen_mc.ptr());
  write_module(archive, "disc_m", state.bundle.disc_m.ptr());
  write_module(archive, "disc_c", state.bundle.disc_c.ptr());
  archive.write("n_disc_struct",
                torch::IValue(static_cast<int64_t>(state.bundle.disc_struct.size())));
  for (size_t i = 0; i < state.bundle.disc_struct.size(); ++i)
    write_module(archive, "disc_struct" + std::to_string(i), state.bundle.disc_struct[i].ptr());
  write_module(archive, "seg", state.bundle.seg.ptr());

  write_optimizer(archive, "opt_g", *state.opt_g);
  write_optimizer(archive, "opt_d", *state.opt_d);
  write_optimizer(archive, "opt_s", *state.opt_s);

  // RNG streams: the default CPU generator plus the data-order engine
  archive.write("torch_rng", at::detail::getDefaultCPUGenerator().get_state());
  std::ostringstream rng_text;
  rng_text << state.data_rng;
  archive.write("data_rng", string_to_tensor(rng_text.str()));

  const auto tmp = path.string() + ".tmp";
  archive.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

namespace {

int64_t read_int(torch::serialize::InputArchive& archive, const std::string& key) {
  torch::IValue v;
  archive.read(key, v);
  return v.toInt();
}

std::string read_string(torch::serialize::InputArchive& archive, const std::string& key) {
  torch::IValue v;
  archive.read(key, v);
  return v.toStringRef();
}

torch::Tensor read_tensor(torch::serialize::InputArchive& archive, const std::string& key) {
  torch::Tensor t;
  archive.read(key, t);
  return t;
}

}  // namespace

std::string checkpoint_config_hash(const std::filesystem::path& path) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  return read_string(archive, "config_hash");
}

train::TrainState load_checkpoint(const std::filesystem::path& path,
                                  const std::string& expected_config_hash, bool force) {
  if (!std::filesystem::exists(path))
    throw std::runtime_error("checkpoint " + path.string() + " does not exist");
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(path.string());
  } catch (const c10::Error& e) {
    throw std::runtime_error("checkpoint " + path.string() +
                             " is unreadable (truncated or not a checkpoint)");
  }

  const auto version = read_int(archive, "schema_version");
  if (version != kSchemaVersion)
    throw std::runtime_error("checkpoint " + path.string() + " has schema_version " +
                             std::to_string(version) + ", expected " +
                             std::to_string(kSchemaVersion) +
                             "; re-train or convert the checkpoint");

  const auto stored_hash = read_string(archive, "config_hash");
  if (!expected_config_hash.empty() && stored_hash != expected_config_hash && !force)
    throw std::runtime_error("checkpoint config hash " + stored_hash +
                             " does not match the requested config " + expected_config_hash +
                             " (use force to override)");

  const auto config =
      train_config_from_json(nlohmann::json::parse(read_string(archive, "config_json")));
  const auto num_labels = static_cast<int>(read_int(archive, "num_labels"));

  auto state = train::init_train_state(config, num_labels);
  state.epoch = static_cast<int>(read_int(archive, "epoch"));
  state.iteration = read_int(archive, "iteration");

  read_module(archive, "gen_cm", state.bundle.gen_cm.ptr());
  read_module(archive, "gen_mc", state.bundle.gen_mc.ptr());
  read_module(archive, "disc_m", state.bundle.disc_m.ptr());
  read_module(archive, "disc_c", state.bundle.disc_c.ptr());
  const auto n_struct = read_int(archive, "n_disc_struct");
  if (n_struct != static_cast<int64_t>(state.bundle.disc_struct.size()))
    throw std::runtime_error("checkpoint structure-discriminator count mismatch");
  for (int64_t i = 0; i < n_struct; ++i)
    read_module(archive, "disc_struct" + std::to_string(i), state.bundle.disc_struct[i].ptr());
  read_module(archive, "seg", state.bundle.seg.ptr());

  read_optimizer(archive, "opt_g", *state.opt_g);
  read_optimizer(archive, "opt_d", *state.opt_d);
  read_optimizer(archive, "opt_s", *state.opt_s);

  auto cpu_gen = at::detail::getDefaultCPUGenerator();
  cpu_gen.set_state(read_tensor(archive, "torch_rng"));
  std::istringstream rng_text(tensor_to_string(read_tensor(archive, "data_rng")));
  rng_text >> state.data_rng;

  return state;
}

}  // namespace psigan::ckpt
