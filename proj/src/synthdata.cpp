#include "psigan/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "psigan/image_io.hpp"
#include "psigan/rng.hpp"

namespace psigan::synth {

using nlohmann::json;

// ---------------------------------------------------------------------------
// shapes
// ---------------------------------------------------------------------------

bool OrganShape::contains(double x, double y) const {
  const double dx = x - cx, dy = y - cy;
  const double c = std::cos(rotation), s = std::sin(rotation);
  const double u = (dx * c + dy * s) / ax_major;
  const double v = (-dx * s + dy * c) / ax_minor;
  const double rho = std::sqrt(u * u + v * v);
  const double theta = std::atan2(v, u);
  double boundary = 1.0;
  for (int h = 0; h < 3; ++h) {
    boundary += wobble_amp[h] * std::cos((h + 2) * theta + wobble_phase[h]);
  }
  return rho <= boundary;
}

double OrganShape::bounding_radius() const {
  double amp = 0.0;
  for (double a : wobble_amp) amp += a;
  return std::max(ax_major, ax_minor) * (1.0 + amp);
}

double OrganShape::ellipse_area() const { return M_PI * ax_major * ax_minor; }

AnatomyScene sample_anatomy(uint64_t seed, int num_labels, int canvas) {
  if (num_labels < 2) throw std::invalid_argument("sample_anatomy: K must be >= 2");
  if (canvas < 32) throw std::invalid_argument("sample_anatomy: canvas must be >= 32");

  AnatomyScene scene;
  scene.canvas = canvas;
  scene.num_labels = num_labels;
  scene.seed = seed;

  Rng rng(derive_seed(seed, {0x5ce3e}));
  const int n_organs = num_labels - 1;
  const int max_tries = 400 * n_organs;
  int tries = 0;
  for (int label = 1; label <= n_organs; ++label) {
    OrganShape organ;
    organ.label = label;
    bool placed = false;
    while (!placed) {
      if (++tries > max_tries)
        throw std::runtime_error(
            "sample_anatomy: canvas too small to place " + std::to_string(n_organs) +
            " non-degenerate shapes (canvas=" + std::to_string(canvas) + ")");
      organ.ax_major = rng.uniform(0.10, 0.20) * canvas;
      organ.ax_minor = std::max(3.0, organ.ax_major * rng.uniform(0.6, 1.0));
      organ.rotation = rng.uniform(0.0, M_PI);
      for (int h = 0; h < 3; ++h) {
        organ.wobble_amp[h] = rng.uniform(0.0, 0.05);
        organ.wobble_phase[h] = rng.uniform(0.0, 2.0 * M_PI);
      }
      organ.texture_seed = rng.next_u64();
      const double margin = organ.bounding_radius() + 2.0;
      if (2.0 * margin >= canvas - 1) continue;
      organ.cx = rng.uniform(margin, canvas - 1 - margin);
      organ.cy = rng.uniform(margin, canvas - 1 - margin);
      placed = true;
      for (const auto& other : scene.organs) {
        const double d = std::hypot(organ.cx - other.cx, organ.cy - other.cy);
        if (d < organ.bounding_radius() + other.bounding_radius() + 2.0) {
          placed = false;
          break;
        }
      }
    }
    scene.organs.push_back(organ);
  }
  return scene;
}

torch::Tensor rasterize_mask(const AnatomyScene& scene) {
  auto mask = torch::zeros({scene.canvas, scene.canvas}, torch::kInt64);
  auto acc = mask.accessor<int64_t, 2>();
  for (const auto& organ : scene.organs) {
    // limit the scan to the organ's bounding box
    const double r = organ.bounding_radius();
    const int x0 = std::max(0, static_cast<int>(std::floor(organ.cx - r)));
    const int x1 = std::min(scene.canvas - 1, static_cast<int>(std::ceil(organ.cx + r)));
    const int y0 = std::max(0, static_cast<int>(std::floor(organ.cy - r)));
    const int y1 = std::min(scene.canvas - 1, static_cast<int>(std::ceil(organ.cy + r)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        if (organ.contains(x, y)) acc[y][x] = organ.label;
      }
    }
  }
  return mask;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

namespace {

// Sum of a few random-direction sinusoids; zero mean over phase draws.
struct SmoothField {
  static constexpr int kWaves = 4;
  double fx[kWaves], fy[kWaves], phase[kWaves];

  SmoothField(uint64_t seed, double freq, int canvas) {
    Rng rng(seed);
    for (int i = 0; i < kWaves; ++i) {
      const double f = freq * rng.uniform(0.6, 1.4);
      const double a = rng.uniform(0.0, 2.0 * M_PI);
      fx[i] = 2.0 * M_PI * f * std::cos(a) / canvas;
      fy[i] = 2.0 * M_PI * f * std::sin(a) / canvas;
      phase[i] = rng.uniform(0.0, 2.0 * M_PI);
    }
  }

  double at(double x, double y) const {
    double v = 0.0;
    for (int i = 0; i < kWaves; ++i) v += std::sin(fx[i] * x + fy[i] * y + phase[i]);
    return v / kWaves;  // in [-1, 1]
  }
};

}  // namespace

DomainSample render(const AnatomyScene& scene, const DomainStyle& style, uint64_t noise_seed) {
  if (static_cast<int>(style.label_means.size()) != scene.num_labels ||
      static_cast<int>(style.label_stddevs.size()) != scene.num_labels)
    throw std::invalid_argument("render: style label tables do not match K");
  if (style.raw_hi <= style.raw_lo) throw std::invalid_argument("render: bad raw range");

  const int n = scene.canvas;
  auto mask = rasterize_mask(scene);
  auto image = torch::empty({n, n}, torch::kFloat32);
  auto macc = mask.accessor<int64_t, 2>();
  auto iacc = image.accessor<float, 2>();

  Rng noise(derive_seed(noise_seed, {0xA015E}));
  const SmoothField texture(derive_seed(noise_seed, {0x7E47}), style.texture_freq, n);
  const SmoothField bias(derive_seed(noise_seed, {0xB1A5}), 1.0, n);

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const auto label = static_cast<size_t>(macc[y][x]);
      double v = style.label_means[label];
      v += style.label_stddevs[label] * noise.normal();
      v += style.noise_amp * noise.normal();
      v += style.texture_amp * texture.at(x, y);
      if (style.bias_amp > 0.0) v *= 1.0 + style.bias_amp * bias.at(x, y);
      iacc[y][x] = static_cast<float>(std::clamp(v, style.raw_lo, style.raw_hi));
    }
  }

  DomainSample sample;
  sample.image = image;
  sample.mask = mask;
  sample.has_mask = true;
  sample.domain = style.tag;
  return sample;
}

DomainStyle desk_style_source(int num_labels) {
  DomainStyle s;
  s.tag = "A";
  s.label_means = {800.0, 1600.0, 2400.0, 3200.0};
  s.label_stddevs = {30.0, 40.0, 40.0, 40.0};
  s.label_means.resize(num_labels >= 1 ? num_labels : 1, 2000.0);
  s.label_stddevs.resize(num_labels >= 1 ? num_labels : 1, 40.0);
  s.noise_amp = 40.0;
  s.bias_amp = 0.0;
  s.texture_amp = 60.0;
  s.texture_freq = 4.0;
  return s;
}

DomainStyle desk_style_target(int num_labels) {
  // Per-label intensity ordering deliberately permuted vs the source style and a
  // multiplicative bias field added, so identity mapping measurably fails.
  DomainStyle s;
  s.tag = "B";
  s.label_means = {2600.0, 1200.0, 3400.0, 600.0};
  s.label_stddevs = {50.0, 60.0, 60.0, 60.0};
  s.label_means.resize(num_labels >= 1 ? num_labels : 1, 1800.0);
  s.label_stddevs.resize(num_labels >= 1 ? num_labels : 1, 60.0);
  s.noise_amp = 60.0;
  s.bias_amp = 0.12;
  s.texture_amp = 90.0;
  s.texture_freq = 3.0;
  return s;
}

SynthConfig desk_preset(uint64_t seed) {
  SynthConfig c;
  c.preset = "desk";
  c.seed = seed;
  c.num_labels = 4;
  c.canvas = 64;
  c.n_source_train = 200;
  c.n_target_train = 200;
  c.n_target_val = 20;
  c.n_target_test = 50;
  c.style_source = desk_style_source(c.num_labels);
  c.style_target = desk_style_target(c.num_labels);
  return c;
}

// ---------------------------------------------------------------------------
// dataset build + manifest
// ---------------------------------------------------------------------------

namespace {

constexpr int kImageMaxval = 65535;

torch::Tensor quantize_raw(const torch::Tensor& image, const DomainStyle& style) {
  auto t = (image - style.raw_lo) / (style.raw_hi - style.raw_lo) * kImageMaxval;
  return t.round().clamp(0, kImageMaxval).to(torch::kInt32);
}

// Scene ids: disjoint ranges per domain make the splits unpaired by construction.
constexpr int64_t kSourceIdBase = 1'000'000;
constexpr int64_t kTargetIdBase = 2'000'000;

struct SplitPlan {
  std::string name;
  int count;
  int64_t id_base;
  const DomainStyle* style;
  bool trainer_sees_mask;
  uint64_t stream;  // rng purpose tag
};

}  // namespace

DatasetManifest build_dataset(const SynthConfig& config, const std::filesystem::path& out_dir,
                              bool force) {
  namespace fs = std::filesystem;
  if (config.n_source_train <= 0 || config.n_target_train <= 0 || config.n_target_val <= 0 ||
      config.n_target_test <= 0)
    throw std::invalid_argument("build_dataset: all split counts must be > 0");

  const fs::path manifest_path = out_dir / "manifest.json";
  if (fs::exists(manifest_path) && !force)
    throw std::runtime_error("build_dataset: refusing to overwrite existing manifest " +
                             manifest_path.string() + " (use force)");

  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  fs::create_directories(out_dir / "masks_eval");

  DatasetManifest m;
  m.seed = config.seed;
  m.num_labels = config.num_labels;
  m.canvas = config.canvas;
  m.style_source = config.style_source;
  m.style_target = config.style_target;
  m.root = out_dir;

  const SplitPlan plans[] = {
      {"source_train", config.n_source_train, kSourceIdBase, &config.style_source, true, 1},
      {"target_train", config.n_target_train, kTargetIdBase, &config.style_target, false, 2},
      {"target_val", config.n_target_val, kTargetIdBase + 100'000, &config.style_target, false, 3},
      {"target_test", config.n_target_test, kTargetIdBase + 200'000, &config.style_target, false,
       4},
  };

  for (const auto& plan : plans) {
    std::vector<SampleEntry>* dst = nullptr;
    if (plan.name == "source_train") dst = &m.source_train;
    if (plan.name == "target_train") dst = &m.target_train;
    if (plan.name == "target_val") dst = &m.target_val;
    if (plan.name == "target_test") dst = &m.target_test;

    for (int i = 0; i < plan.count; ++i) {
      const int64_t scene_id = plan.id_base + i;
      const uint64_t scene_seed = derive_seed(config.seed, {plan.stream, static_cast<uint64_t>(i), 1});
      const uint64_t noise_seed = derive_seed(config.seed, {plan.stream, static_cast<uint64_t>(i), 2});
      auto scene = sample_anatomy(scene_seed, config.num_labels, config.canvas);
      auto sample = render(scene, *plan.style, noise_seed);

      char name[64];
      std::snprintf(name, sizeof(name), "%s_%05d.pgm", plan.name.c_str(), i);

      SampleEntry entry;
      entry.scene_id = scene_id;
      entry.domain = plan.style->tag;
      entry.image = "images/" + std::string(name);
      write_pgm(out_dir / entry.image, quantize_raw(sample.image, *plan.style), kImageMaxval);
      if (plan.trainer_sees_mask) {
        entry.mask = "masks/" + std::string(name);
        write_pgm(out_dir / entry.mask, sample.mask, 255);
      } else {
        entry.eval_mask = "masks_eval/" + std::string(name);
        write_pgm(out_dir / entry.eval_mask, sample.mask, 255);
      }
      dst->push_back(entry);
    }
  }

  save_manifest(m, manifest_path);
  return m;
}

const std::vector<SampleEntry>& DatasetManifest::split(const std::string& name) const {
  if (name == "source_train") return source_train;
  if (name == "target_train") return target_train;
  if (name == "target_val" || name == "val") return target_val;
  if (name == "target_test" || name == "test") return target_test;
  throw std::invalid_argument("unknown split: " + name);
}

json style_to_json(const DomainStyle& s) {
  return json{{"tag", s.tag},
              {"label_means", s.label_means},
              {"label_stddevs", s.label_stddevs},
              {"noise_amp", s.noise_amp},
              {"bias_amp", s.bias_amp},
              {"texture_amp", s.texture_amp},
              {"texture_freq", s.texture_freq},
              {"raw_lo", s.raw_lo},
              {"raw_hi", s.raw_hi}};
}

DomainStyle style_from_json(const json& j) {
  DomainStyle s;
  s.tag = j.at("tag").get<std::string>();
  s.label_means = j.at("label_means").get<std::vector<double>>();
  s.label_stddevs = j.at("label_stddevs").get<std::vector<double>>();
  s.noise_amp = j.at("noise_amp").get<double>();
  s.bias_amp = j.at("bias_amp").get<double>();
  s.texture_amp = j.at("texture_amp").get<double>();
  s.texture_freq = j.at("texture_freq").get<double>();
  s.raw_lo = j.at("raw_lo").get<double>();
  s.raw_hi = j.at("raw_hi").get<double>();
  return s;
}

namespace {

json entries_to_json(const std::vector<SampleEntry>& v) {
  json a = json::array();
  for (const auto& e : v) {
    json je{{"image", e.image}, {"scene_id", e.scene_id}, {"domain", e.domain}};
    if (!e.mask.empty()) je["mask"] = e.mask;
    if (!e.eval_mask.empty()) je["eval_mask"] = e.eval_mask;
    a.push_back(je);
  }
  return a;
}

std::vector<SampleEntry> entries_from_json(const json& a) {
  std::vector<SampleEntry> v;
  for (const auto& je : a) {
    SampleEntry e;
    e.image = je.at("image").get<std::string>();
    e.scene_id = je.at("scene_id").get<int64_t>();
    e.domain = je.at("domain").get<std::string>();
    if (je.contains("mask")) e.mask = je.at("mask").get<std::string>();
    if (je.contains("eval_mask")) e.eval_mask = je.at("eval_mask").get<std::string>();
    v.push_back(e);
  }
  return v;
}

}  // namespace

void save_manifest(const DatasetManifest& m, const std::filesystem::path& file) {
  json j{{"schema_version", m.schema_version},
         {"seed", m.seed},
         {"num_labels", m.num_labels},
         {"canvas", m.canvas},
         {"style_source", style_to_json(m.style_source)},
         {"style_target", style_to_json(m.style_target)},
         {"source_train", entries_to_json(m.source_train)},
         {"target_train", entries_to_json(m.target_train)},
         {"target_val", entries_to_json(m.target_val)},
         {"target_test", entries_to_json(m.target_test)}};
  std::ofstream out(file);
  if (!out) throw std::runtime_error("save_manifest: cannot open " + file.string());
  out << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + file.string());
  json j;
  in >> j;
  DatasetManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != 1)
    throw std::runtime_error("load_manifest: unsupported schema_version " +
                             std::to_string(m.schema_version));
  m.seed = j.at("seed").get<uint64_t>();
  m.num_labels = j.at("num_labels").get<int>();
  m.canvas = j.at("canvas").get<int>();
  m.style_source = style_from_json(j.at("style_source"));
  m.style_target = style_from_json(j.at("style_target"));
  m.source_train = entries_from_json(j.at("source_train"));
  m.target_train = entries_from_json(j.at("target_train"));
  m.target_val = entries_from_json(j.at("target_val"));
  m.target_test = entries_from_json(j.at("target_test"));
  m.root = file.parent_path();
  return m;
}

torch::Tensor load_image_raw(const DatasetManifest& m, const SampleEntry& e,
                             const DomainStyle& style) {
  int maxval = 0;
  auto q = read_pgm(m.root / e.image, &maxval);
  return q.to(torch::kFloat32) / maxval * (style.raw_hi - style.raw_lo) + style.raw_lo;
}

torch::Tensor load_mask(const DatasetManifest& m, const std::string& rel_path) {
  if (rel_path.empty()) throw std::runtime_error("load_mask: entry has no mask");
  return read_pgm(m.root / rel_path).to(torch::kInt64);
}

}  // namespace psigan::synth
