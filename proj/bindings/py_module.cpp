#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <torch/torch.h>

#include "psigan/checkpoint.hpp"
#include "psigan/config.hpp"
#include "psigan/experiments.hpp"
#include "psigan/losses.hpp"
#include "psigan/metrics.hpp"
#include "psigan/models.hpp"
#include "psigan/preprocess.hpp"
#include "psigan/synthdata.hpp"
#include "psigan/trainer.hpp"

namespace py = pybind11;
using namespace psigan;

namespace {

torch::Tensor tensor_from_array(const py::array_t<double, py::array::c_style |
                                                              py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = a.shape(i);
  auto t = torch::from_blob(const_cast<double*>(a.data()), shape, torch::kFloat64);
  return t.clone();
}

torch::Tensor mask_from_array(
    const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& a) {
  std::vector<int64_t> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[i] = a.shape(i);
  auto t = torch::from_blob(const_cast<int64_t*>(a.data()), shape, torch::kInt64);
  return t.clone();
}

py::array_t<double> array_from_tensor(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<double> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<double>(),
              sizeof(double) * static_cast<size_t>(c.numel()));
  return out;
}

py::array_t<int64_t> int_array_from_tensor(const torch::Tensor& t) {
  auto c = t.to(torch::kInt64).contiguous();
  std::vector<py::ssize_t> shape(c.sizes().begin(), c.sizes().end());
  py::array_t<int64_t> out(shape);
  std::memcpy(out.mutable_data(), c.data_ptr<int64_t>(),
              sizeof(int64_t) * static_cast<size_t>(c.numel()));
  return out;
}

GanForm form_of(const std::string& s) { return gan_form_from_string(s); }
GanRole role_of(const std::string& s) {
  if (s == "discriminator") return GanRole::Discriminator;
  if (s == "generator") return GanRole::Generator;
  throw std::invalid_argument("role must be discriminator|generator");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "unpaired domain-adaptation segmentation workbench (C++ core)";

  // ---- synthetic data ----
  m.def(
      "build_dataset",
      [](const std::string& out_dir, uint64_t seed, bool force) {
        auto manifest = synth::build_dataset(synth::desk_preset(seed), out_dir, force);
        return (manifest.root / "manifest.json").string();
      },
      py::arg("out_dir"), py::arg("seed") = 1, py::arg("force") = false);

  m.def(
      "render_sample",
      [](uint64_t seed, int num_labels, int canvas, const std::string& domain) {
        auto scene = synth::sample_anatomy(seed, num_labels, canvas);
        const auto style = domain == "A" ? synth::desk_style_source(num_labels)
                                         : synth::desk_style_target(num_labels);
        auto sample = synth::render(scene, style, seed + 1);
        return py::make_tuple(array_from_tensor(sample.image),
                              int_array_from_tensor(sample.mask));
      },
      py::arg("seed"), py::arg("num_labels") = 4, py::arg("canvas") = 64,
      py::arg("domain") = "A");

  // ---- preprocessing ----
  m.def(
      "percentile_clip",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, double pct,
         double hi, double lo) {
        return array_from_tensor(preprocess::percentile_clip(tensor_from_array(img), pct, hi, lo));
      },
      py::arg("image"), py::arg("percentile"), py::arg("reference_hi"), py::arg("clip_lo") = 0.0);

  m.def("landmark_standardize",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img,
           const std::vector<double>& landmarks) {
          auto r = preprocess::landmark_standardize(tensor_from_array(img), landmarks);
          return py::make_tuple(array_from_tensor(r.image), r.degenerate);
        });

  m.def("normalize_signed_unit",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img, double lo,
           double hi) {
          return array_from_tensor(preprocess::normalize_signed_unit(tensor_from_array(img), lo, hi));
        });

  m.def("compute_landmarks",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& img) {
          return preprocess::compute_landmarks(tensor_from_array(img));
        });

  // ---- losses ----
  m.def(
      "adversarial_loss",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& real,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& fake,
         const std::string& role, const std::string& form) {
        torch::Tensor real_t;
        if (real.size() > 0) real_t = tensor_from_array(real);
        return adversarial_loss(real_t, tensor_from_array(fake), role_of(role), form_of(form))
            .item<double>();
      },
      py::arg("real_logits"), py::arg("fake_logits"), py::arg("role"),
      py::arg("form") = "least_squares");

  m.def("cycle_loss",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& b) {
          return cycle_loss(tensor_from_array(a), tensor_from_array(b)).item<double>();
        });

  m.def("aggregate_soi_probability",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& p) {
          auto t = tensor_from_array(p);
          if (t.dim() == 3) t = t.unsqueeze(0);
          return array_from_tensor(aggregate_soi_probability(t).squeeze(0).squeeze(0));
        });

  m.def(
      "cross_entropy",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& probs,
         const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& labels) {
        auto p = tensor_from_array(probs);
        auto l = mask_from_array(labels);
        if (p.dim() == 3) p = p.unsqueeze(0);
        if (l.dim() == 2) l = l.unsqueeze(0);
        return cross_entropy_probs(p, l).item<double>();
      },
      py::arg("probs"), py::arg("labels"));

  m.def("total_generator_objective",
        [](double adv, double cyc, double struct_g, double seg, double lambda_cyc,
           double lambda_struct, double lambda_seg, int setting) {
          LossWeights w{lambda_cyc, lambda_struct, lambda_seg};
          return total_generator_objective(adv, cyc, struct_g, seg, w,
                                           SettingMask::from_setting(setting));
        },
        py::arg("adv"), py::arg("cyc"), py::arg("struct_g"), py::arg("seg"),
        py::arg("lambda_cyc") = 10.0, py::arg("lambda_struct") = 0.5,
        py::arg("lambda_seg") = 5.0, py::arg("setting") = 6);

  m.def("pair_channels", [](const std::string& variant, int num_labels) {
    return pair_channels(pair_variant_from_string(variant), num_labels);
  });
  m.def("pair_stacks", [](const std::string& variant, int num_labels) {
    return pair_stacks(pair_variant_from_string(variant), num_labels);
  });

  // ---- models ----
  m.def("receptive_field", [](const std::vector<int>& kernels, const std::vector<int>& strides) {
    return models::receptive_field(kernels, strides);
  });
  m.def("receptive_field_paper",
        [] { return models::receptive_field(models::paper_discriminator_spec()); });

  // ---- metrics ----
  m.def("dice",
        [](const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& b) {
          return metrics::dice(mask_from_array(a), mask_from_array(b));
        });
  m.def(
      "hd95",
      [](const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& a,
         const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& b, double sy,
         double sx) { return metrics::hd95(mask_from_array(a), mask_from_array(b), sy, sx); },
      py::arg("pred"), py::arg("gt"), py::arg("spacing_y") = 1.0, py::arg("spacing_x") = 1.0);

  m.def(
      "kl_intensity_divergence",
      [](const py::array_t<double, py::array::c_style | py::array::forcecast>& pseudo,
         const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& pseudo_mask,
         const py::array_t<double, py::array::c_style | py::array::forcecast>& real,
         const py::array_t<int64_t, py::array::c_style | py::array::forcecast>& real_mask,
         int bins) {
        return metrics::kl_intensity_divergence({tensor_from_array(pseudo)},
                                                {mask_from_array(pseudo_mask)},
                                                {tensor_from_array(real)},
                                                {mask_from_array(real_mask)}, bins);
      },
      py::arg("pseudo"), py::arg("pseudo_mask"), py::arg("real"), py::arg("real_mask"),
      py::arg("bins") = 64);

  // ---- training / evaluation / translation ----
  m.def(
      "train",
      [](const std::string& config_path, const std::string& resume, bool force) {
        auto config = load_train_config(config_path);
        auto result = train::train(config, resume, force);
        if (result.aborted) throw std::runtime_error("training aborted: " + result.abort_reason);
        return result.run_dir.string();
      },
      py::arg("config_path"), py::arg("resume") = "", py::arg("force") = false);

  m.def(
      "lr_at",
      [](int epochs_constant, int epochs_decay, double lr, int epoch) {
        TrainConfig c;
        c.epochs_constant = epochs_constant;
        c.epochs_decay = epochs_decay;
        c.lr = lr;
        return lr_at(c, epoch);
      },
      py::arg("epochs_constant"), py::arg("epochs_decay"), py::arg("lr"), py::arg("epoch"));

  m.def(
      "evaluate",
      [](const std::string& ckpt_path, const std::string& split, const std::string& branch) {
        auto state = ckpt::load_checkpoint(ckpt_path);
        auto manifest = synth::load_manifest(state.config.dataset_manifest);
        auto pipeline = preprocess::pipeline_from_manifest(manifest);
        const Branch b = branch == "S_C_M" ? Branch::SCM : Branch::SM;
        const std::string split_name =
            split == "test" ? "target_test" : split == "val" ? "target_val" : split;
        auto summary = metrics::evaluate_split(state.bundle.seg, b, manifest, split_name, pipeline);
        py::dict out;
        out["mean_overall_dsc"] = summary.mean_overall_dsc;
        out["mean_dsc"] = summary.mean_dsc;
        out["mean_hd95"] = summary.mean_hd95;
        out["hd95_inf_count"] = summary.hd95_inf_count;
        return out;
      },
      py::arg("ckpt"), py::arg("split") = "test", py::arg("branch") = "S_M");

  m.def(
      "translate",
      [](const std::string& ckpt_path, const std::string& direction, const std::string& out_dir,
         int max_images) {
        auto r = experiments::translate_and_report(ckpt_path, direction, "", out_dir, max_images);
        py::dict out;
        out["out_dir"] = r.out_dir.string();
        out["translated"] = r.translated;
        out["kl_per_label"] = r.kl_per_label;
        return out;
      },
      py::arg("ckpt"), py::arg("direction"), py::arg("out_dir"), py::arg("max_images") = 0);

  m.attr("__version__") = "0.1.0";
}
