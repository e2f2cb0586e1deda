#include "psigan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

namespace psigan::metrics {

using nlohmann::json;

namespace {

void check_binary_pair(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  TORCH_CHECK(a.dim() == 2 && b.dim() == 2, what, ": expected 2D masks");
  TORCH_CHECK(a.sizes() == b.sizes(), what, ": shape mismatch ", a.sizes(), " vs ", b.sizes());
}

struct Point {
  double y, x;
};

// 4-connectivity boundary: in-mask pixels with an out-of-mask (or off-image)
// 4-neighbor.
std::vector<Point> boundary_points(const torch::Tensor& mask, double sy, double sx) {
  auto m = mask.to(torch::kBool).contiguous();
  const int64_t h = m.size(0), w = m.size(1);
  auto acc = m.accessor<bool, 2>();
  std::vector<Point> pts;
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      if (!acc[y][x]) continue;
      const bool edge = y == 0 || y == h - 1 || x == 0 || x == w - 1 || !acc[y - 1][x] ||
                        !acc[y + 1][x] || !acc[y][x - 1] || !acc[y][x + 1];
      if (edge) pts.push_back({static_cast<double>(y) * sy, static_cast<double>(x) * sx});
    }
  }
  return pts;
}

double directed_percentile_distance(const std::vector<Point>& from, const std::vector<Point>& to,
                                    double q) {
  std::vector<double> dists;
  dists.reserve(from.size());
  for (const auto& a : from) {
    double best = std::numeric_limits<double>::max();
    for (const auto& b : to) {
      const double dy = a.y - b.y, dx = a.x - b.x;
      best = std::min(best, dy * dy + dx * dx);
    }
    dists.push_back(std::sqrt(best));
  }
  std::sort(dists.begin(), dists.end());
  const auto n = static_cast<int64_t>(dists.size());
  const auto rank = std::max<int64_t>(0, static_cast<int64_t>(std::ceil(q * n)) - 1);
  return dists[rank];
}

}  // namespace

double dice(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask) {
  check_binary_pair(pred_mask, gt_mask, "dice");
  auto p = pred_mask.to(torch::kBool);
  auto g = gt_mask.to(torch::kBool);
  const auto tp = (p & g).sum().item<int64_t>();
  const auto fp = (p & ~g).sum().item<int64_t>();
  const auto fn = (~p & g).sum().item<int64_t>();
  if (tp == 0 && fp == 0 && fn == 0) return 1.0;  // both empty: vacuous agreement
  return 2.0 * tp / static_cast<double>(fp + 2 * tp + fn);
}

double hd95(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask, double spacing_y,
            double spacing_x) {
  check_binary_pair(pred_mask, gt_mask, "hd95");
  TORCH_CHECK(spacing_y > 0 && spacing_x > 0, "hd95: spacing must be positive");
  const bool pred_empty = !pred_mask.to(torch::kBool).any().item<bool>();
  const bool gt_empty = !gt_mask.to(torch::kBool).any().item<bool>();
  if (pred_empty && gt_empty) return 0.0;
  if (pred_empty != gt_empty) return std::numeric_limits<double>::infinity();
  const auto bp = boundary_points(pred_mask, spacing_y, spacing_x);
  const auto bg = boundary_points(gt_mask, spacing_y, spacing_x);
  return std::max(directed_percentile_distance(bp, bg, 0.95),
                  directed_percentile_distance(bg, bp, 0.95));
}

double kl_intensity_divergence(const std::vector<torch::Tensor>& pseudo_images,
                               const std::vector<torch::Tensor>& pseudo_masks,
                               const std::vector<torch::Tensor>& real_images,
                               const std::vector<torch::Tensor>& real_masks, int bins) {
  if (bins < 8) throw std::invalid_argument("kl_intensity_divergence: bins must be >= 8");
  if (pseudo_images.size() != pseudo_masks.size() || real_images.size() != real_masks.size())
    throw std::invalid_argument("kl_intensity_divergence: image/mask count mismatch");

  auto histogram = [&](const std::vector<torch::Tensor>& images,
                       const std::vector<torch::Tensor>& masks) {
    std::vector<double> h(bins, 0.0);
    int64_t total = 0;
    for (size_t i = 0; i < images.size(); ++i) {
      auto img = images[i].flatten().to(torch::kFloat64);
      auto sel = masks[i].flatten().to(torch::kBool);
      auto vals = img.masked_select(sel);
      auto acc = vals.accessor<double, 1>();
      for (int64_t k = 0; k < vals.numel(); ++k) {
        int b = static_cast<int>((acc[k] + 1.0) / 2.0 * bins);
        b = std::clamp(b, 0, bins - 1);
        h[b] += 1.0;
        ++total;
      }
    }
    if (total == 0) throw std::invalid_argument("kl_intensity_divergence: empty mask");
    for (auto& v : h) v /= static_cast<double>(total);
    return h;
  };

  auto p = histogram(pseudo_images, pseudo_masks);
  auto q = histogram(real_images, real_masks);
  constexpr double eps = 1e-8;
  double psum = 0, qsum = 0;
  for (int b = 0; b < bins; ++b) {
    p[b] += eps;
    q[b] += eps;
    psum += p[b];
    qsum += q[b];
  }
  double kl = 0.0;
  for (int b = 0; b < bins; ++b) {
    const double pb = p[b] / psum, qb = q[b] / qsum;
    kl += pb * std::log(pb / qb);
  }
  return kl;
}

SplitSummary summarize(const std::vector<MetricRecord>& records, int num_labels) {
  const int nl = num_labels - 1;
  SplitSummary s;
  s.per_sample = records;
  s.mean_dsc.assign(nl, 0.0);
  s.std_dsc.assign(nl, 0.0);
  s.mean_hd95.assign(nl, 0.0);
  s.std_hd95.assign(nl, 0.0);
  s.hd95_inf_count.assign(nl, 0);
  if (records.empty()) return s;

  auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= v.empty() ? 1.0 : static_cast<double>(v.size());
    sd = 0.0;
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
  };

  for (int l = 0; l < nl; ++l) {
    std::vector<double> ds, hs;
    for (const auto& r : records) {
      ds.push_back(r.dsc[l]);
      if (std::isinf(r.hd95[l])) {
        ++s.hd95_inf_count[l];  // sentinel excluded from the mean, counted
      } else {
        hs.push_back(r.hd95[l]);
      }
    }
    mean_std(ds, s.mean_dsc[l], s.std_dsc[l]);
    if (!hs.empty()) mean_std(hs, s.mean_hd95[l], s.std_hd95[l]);
  }
  std::vector<double> overall;
  for (const auto& r : records) overall.push_back(r.overall_dsc);
  mean_std(overall, s.mean_overall_dsc, s.std_overall_dsc);
  return s;
}

SplitSummary evaluate_split(models::SplitSegmentor& seg, Branch branch,
                            const synth::DatasetManifest& manifest, const std::string& split,
                            const preprocess::IntensityPipelineConfig& pipeline) {
  const auto& entries = manifest.split(split);
  const int k = manifest.num_labels;
  const bool was_training = seg->is_training();
  seg->eval();
  torch::NoGradGuard guard;

  std::vector<MetricRecord> records;
  for (const auto& entry : entries) {
    const std::string mask_path = entry.eval_mask.empty() ? entry.mask : entry.eval_mask;
    if (mask_path.empty())
      throw std::runtime_error("evaluate_split: sample " + entry.image + " has no mask");
    const auto& style = entry.domain == "A" ? manifest.style_source : manifest.style_target;
    auto raw = synth::load_image_raw(manifest, entry, style);
    auto img = preprocess::apply_pipeline(raw, pipeline).unsqueeze(0).unsqueeze(0);
    auto gt = synth::load_mask(manifest, mask_path);

    auto probs = seg->forward_probs(img, branch);
    auto pred = probs.argmax(1).squeeze(0);

    MetricRecord rec;
    rec.scene_id = entry.scene_id;
    for (int l = 1; l < k; ++l) {
      auto pm = pred == l;
      auto gm = gt == l;
      rec.dsc.push_back(dice(pm, gm));
      rec.hd95.push_back(hd95(pm, gm));
    }
    double sum = 0.0;
    for (double d : rec.dsc) sum += d;
    rec.overall_dsc = rec.dsc.empty() ? 0.0 : sum / static_cast<double>(rec.dsc.size());
    records.push_back(std::move(rec));
  }
  if (was_training) seg->train();
  return summarize(records, k);
}

json summary_to_json(const SplitSummary& s, int num_labels) {
  json per_sample = json::array();
  for (const auto& r : s.per_sample) {
    json hd = json::array();
    for (double v : r.hd95) {
      if (std::isinf(v)) {
        hd.push_back("inf");
      } else {
        hd.push_back(v);
      }
    }
    per_sample.push_back(json{{"scene_id", r.scene_id},
                              {"dsc", r.dsc},
                              {"hd95", hd},
                              {"overall_dsc", r.overall_dsc}});
  }
  return json{{"schema_version", 1},
              {"num_labels", num_labels},
              {"mean_dsc", s.mean_dsc},
              {"std_dsc", s.std_dsc},
              {"mean_hd95", s.mean_hd95},
              {"std_hd95", s.std_hd95},
              {"hd95_inf_count", s.hd95_inf_count},
              {"mean_overall_dsc", s.mean_overall_dsc},
              {"std_overall_dsc", s.std_overall_dsc},
              {"per_sample", per_sample}};
}

std::string summary_to_tsv(const SplitSummary& s, int num_labels) {
  std::ostringstream out;
  out << "label\tmean_dsc\tstd_dsc\tmean_hd95\tstd_hd95\thd95_inf_count\n";
  for (int l = 0; l + 1 < num_labels; ++l) {
    out << (l + 1) << "\t" << s.mean_dsc[l] << "\t" << s.std_dsc[l] << "\t" << s.mean_hd95[l]
        << "\t" << s.std_hd95[l] << "\t" << s.hd95_inf_count[l] << "\n";
  }
  out << "overall\t" << s.mean_overall_dsc << "\t" << s.std_overall_dsc << "\t-\t-\t-\n";
  return out.str();
}

void write_summary(const SplitSummary& s, int num_labels, const std::filesystem::path& dir,
                   const std::string& stem) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / (stem + ".json"));
    out << summary_to_json(s, num_labels).dump(2) << "\n";
  }
  {
    std::ofstream out(dir / (stem + ".tsv"));
    out << summary_to_tsv(s, num_labels);
  }
}

}  // namespace psigan::metrics
