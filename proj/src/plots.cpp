#include "psigan/plots.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <regex>

#include <nlohmann/json.hpp>

#include "psigan/image_io.hpp"
#include "psigan/losses.hpp"

namespace psigan::plots {

using nlohmann::json;

namespace {

#include "bitmap_font.inc"

struct Canvas {
  int h = 0, w = 0;
  std::vector<unsigned char> rgb;

  Canvas(int h_, int w_, unsigned char bg = 255) : h(h_), w(w_) {
    rgb.assign(static_cast<size_t>(h) * w * 3, bg);
  }
  void set(int y, int x, unsigned char r, unsigned char g, unsigned char b) {
    if (y < 0 || y >= h || x < 0 || x >= w) return;
    auto* p = &rgb[(static_cast<size_t>(y) * w + x) * 3];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }
  void text(int y, int x, const std::string& s, unsigned char r = 0, unsigned char g = 0,
            unsigned char b = 0) {
    int cx = x;
    for (char ch : s) {
      if (ch < 32 || ch > 126) ch = '?';
      const auto& rows = kGlyphRows[ch - 32];
      for (int gy = 0; gy < 13; ++gy)
        for (int gx = 0; gx < 8; ++gx)
          if (rows[gy] & (1 << gx)) set(y + gy, cx + gx, r, g, b);
      cx += 7;
    }
  }
  void line(int y0, int x0, int y1, int x1, unsigned char r, unsigned char g, unsigned char b) {
    const int steps = std::max(std::abs(y1 - y0), std::abs(x1 - x0)) + 1;
    for (int i = 0; i < steps; ++i) {
      const double t = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
      set(static_cast<int>(std::lround(y0 + t * (y1 - y0))),
          static_cast<int>(std::lround(x0 + t * (x1 - x0))), r, g, b);
    }
  }
};

// blue (0) -> cyan -> green -> yellow -> red (1)
void colormap(double t, unsigned char& r, unsigned char& g, unsigned char& b) {
  t = std::clamp(t, 0.0, 1.0);
  const double r4 = std::clamp(1.5 - std::abs(4.0 * t - 3.0), 0.0, 1.0);
  const double g4 = std::clamp(1.5 - std::abs(4.0 * t - 2.0), 0.0, 1.0);
  const double b4 = std::clamp(1.5 - std::abs(4.0 * t - 1.0), 0.0, 1.0);
  r = static_cast<unsigned char>(255 * r4);
  g = static_cast<unsigned char>(255 * g4);
  b = static_cast<unsigned char>(255 * b4);
}

struct Snapshot {
  int epoch;
  std::filesystem::path path;
};

std::vector<Snapshot> find_snapshots(const std::filesystem::path& dir,
                                     const std::string& prefix) {
  std::vector<Snapshot> snaps;
  if (!std::filesystem::exists(dir)) return snaps;
  const std::regex re(prefix + "_epoch(\\d+)\\.pgm");
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, re)) snaps.push_back({std::stoi(m[1]), e.path()});
  }
  std::sort(snaps.begin(), snaps.end(),
            [](const auto& a, const auto& b) { return a.epoch < b.epoch; });
  return snaps;
}

void blit_gray(Canvas& canvas, const torch::Tensor& t01, int y0, int x0) {
  auto acc = t01.accessor<float, 2>();
  for (int y = 0; y < t01.size(0); ++y)
    for (int x = 0; x < t01.size(1); ++x) {
      const auto v = static_cast<unsigned char>(std::clamp(acc[y][x], 0.0f, 1.0f) * 255);
      canvas.set(y0 + y, x0 + x, v, v, v);
    }
}

void blit_colormapped(Canvas& canvas, const torch::Tensor& t01, int y0, int x0) {
  auto acc = t01.accessor<float, 2>();
  for (int y = 0; y < t01.size(0); ++y)
    for (int x = 0; x < t01.size(1); ++x) {
      unsigned char r, g, b;
      colormap(acc[y][x], r, g, b);
      canvas.set(y0 + y, x0 + x, r, g, b);
    }
}

torch::Tensor load_unit_pgm(const std::filesystem::path& p) {
  int maxval = 0;
  auto t = read_pgm(p, &maxval);
  return t.to(torch::kFloat32) / static_cast<float>(maxval);
}

constexpr int kMargin = 8;
constexpr int kLabelBand = 16;

}  // namespace

EmitResult emit_plots(const std::filesystem::path& run_dir) {
  namespace fs = std::filesystem;
  EmitResult result;
  const fs::path plots_dir = run_dir / "plots";
  fs::create_directories(plots_dir);
  const fs::path snap_dir = run_dir / "snapshots";

  // --- (a) probability-map evolution, fixed [0,1] color scale ---
  auto psi = find_snapshots(snap_dir, "psi");
  if (psi.empty()) {
    result.warnings.push_back("no psi snapshots under " + snap_dir.string());
  } else {
    auto first = load_unit_pgm(psi[0].path);
    const int th = static_cast<int>(first.size(0));
    const int tw = static_cast<int>(first.size(1));
    const int cols = static_cast<int>(psi.size());
    const int bar_w = 24;
    Canvas canvas(th + kLabelBand + 2 * kMargin,
                  cols * (tw + kMargin) + kMargin + bar_w + 48);
    for (int c = 0; c < cols; ++c) {
      auto img = load_unit_pgm(psi[c].path);
      const int x0 = kMargin + c * (tw + kMargin);
      blit_colormapped(canvas, img, kMargin + kLabelBand, x0);
      canvas.text(kMargin, x0, "epoch " + std::to_string(psi[c].epoch));
    }
    // color bar annotated with its 0 and 1 endpoints
    const int bx = cols * (tw + kMargin) + kMargin;
    for (int y = 0; y < th; ++y) {
      unsigned char r, g, b;
      colormap(1.0 - static_cast<double>(y) / (th - 1), r, g, b);
      for (int x = 0; x < bar_w; ++x) canvas.set(kMargin + kLabelBand + y, bx + x, r, g, b);
    }
    canvas.text(kMargin + kLabelBand - 2, bx + bar_w + 4, "1");
    canvas.text(kMargin + kLabelBand + th - 11, bx + bar_w + 4, "0");
    const auto out = plots_dir / "psi_evolution.png";
    write_png_rgb8(out, canvas.h, canvas.w, canvas.rgb);
    result.written.push_back(out);
  }

  // --- (b) source / pseudo-target / real-target triplets ---
  auto sources = find_snapshots(snap_dir, "source");
  auto fakes = find_snapshots(snap_dir, "fake");
  auto reals = find_snapshots(snap_dir, "real");
  if (fakes.empty()) {
    result.warnings.push_back("no translation snapshots under " + snap_dir.string());
  } else {
    const auto& last = fakes.back();
    auto src_img = load_unit_pgm(sources.back().path);
    auto fake_img = load_unit_pgm(last.path);
    auto real_img = load_unit_pgm(reals.back().path);
    const int th = static_cast<int>(src_img.size(0));
    const int tw = static_cast<int>(src_img.size(1));
    Canvas canvas(th + kLabelBand + 2 * kMargin, 3 * (tw + kMargin) + kMargin);
    const char* names[3] = {"source", "pseudo-target", "real target"};
    const torch::Tensor imgs[3] = {src_img, fake_img, real_img};
    for (int c = 0; c < 3; ++c) {
      const int x0 = kMargin + c * (tw + kMargin);
      blit_gray(canvas, imgs[c], kMargin + kLabelBand, x0);
      canvas.text(kMargin, x0, names[c]);
    }
    const auto out = plots_dir / "translation.png";
    write_png_rgb8(out, canvas.h, canvas.w, canvas.rgb);
    result.written.push_back(out);
  }

  // --- (c) loss curves over iterations ---
  std::ifstream hist(run_dir / "history.jsonl");
  if (!hist) {
    result.warnings.push_back("no history.jsonl in " + run_dir.string());
  } else {
    const std::vector<std::pair<std::string, std::array<unsigned char, 3>>> series = {
        {"adv_g_cm", {200, 40, 40}},  {"adv_g_mc", {240, 140, 40}}, {"cyc", {40, 120, 220}},
        {"struct_g", {40, 170, 60}},  {"struct_d", {140, 60, 180}}, {"seg_m", {120, 120, 120}},
        {"seg_mbar", {200, 160, 40}},
    };
    std::map<std::string, std::vector<double>> values;
    std::string line;
    while (std::getline(hist, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line, nullptr, false);
      if (j.is_discarded()) continue;
      for (const auto& [name, color] : series) {
        if (j.contains(name)) values[name].push_back(j.at(name).get<double>());
      }
    }
    const auto n = values.empty() ? 0 : values.begin()->second.size();
    if (n == 0) {
      result.warnings.push_back("history.jsonl has no parseable records");
    } else {
      const int ph = 240, pw = 640, legend = 130;
      Canvas canvas(ph + 2 * kMargin + kLabelBand, pw + 2 * kMargin + legend);
      double vmax = 1e-9;
      for (const auto& [k, v] : values)
        for (double x : v) vmax = std::max(vmax, x);
      const int oy = kMargin + kLabelBand, ox = kMargin;
      canvas.line(oy, ox, oy + ph, ox, 0, 0, 0);
      canvas.line(oy + ph, ox, oy + ph, ox + pw, 0, 0, 0);
      canvas.text(kMargin, ox, "loss vs iteration (n=" + std::to_string(n) + ")");
      int li = 0;
      for (const auto& [name, color] : series) {
        const auto it = values.find(name);
        if (it == values.end() || it->second.empty()) continue;
        const auto& v = it->second;
        int py = -1, px = -1;
        for (size_t i = 0; i < v.size(); ++i) {
          const int x = ox + static_cast<int>(static_cast<double>(i) / std::max<size_t>(1, n - 1) * (pw - 1));
          const int y = oy + ph - 1 - static_cast<int>(std::clamp(v[i] / vmax, 0.0, 1.0) * (ph - 1));
          if (px >= 0) canvas.line(py, px, y, x, color[0], color[1], color[2]);
          py = y;
          px = x;
        }
        canvas.text(oy + 14 * li, ox + pw + 10, name, color[0], color[1], color[2]);
        ++li;
      }
      const auto out = plots_dir / "loss_curves.png";
      write_png_rgb8(out, canvas.h, canvas.w, canvas.rgb);
      result.written.push_back(out);
    }
  }

  return result;
}

}  // namespace psigan::plots
