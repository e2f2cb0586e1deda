#include "psigan/models.hpp"

#include <stdexcept>

namespace psigan {

PairVariant pair_variant_from_string(const std::string& s) {
  if (s == "seg_multi") return PairVariant::SegMulti;
  if (s == "seg_agg") return PairVariant::SegAgg;
  if (s == "img_seg_multi") return PairVariant::ImgSegMulti;
  if (s == "img_seg_per_soi") return PairVariant::ImgSegPerSoi;
  if (s == "img_seg_agg") return PairVariant::ImgSegAgg;
  throw std::invalid_argument("unknown pair variant: " + s);
}

std::string to_string(PairVariant v) {
  switch (v) {
    case PairVariant::SegMulti: return "seg_multi";
    case PairVariant::SegAgg: return "seg_agg";
    case PairVariant::ImgSegMulti: return "img_seg_multi";
    case PairVariant::ImgSegPerSoi: return "img_seg_per_soi";
    case PairVariant::ImgSegAgg: return "img_seg_agg";
  }
  return "?";
}

SegmentorMode segmentor_mode_from_string(const std::string& s) {
  if (s == "split") return SegmentorMode::Split;
  if (s == "single") return SegmentorMode::Single;
  throw std::invalid_argument("unknown segmentor mode: " + s);
}

std::string to_string(SegmentorMode m) {
  return m == SegmentorMode::Split ? "split" : "single";
}

int pair_channels(PairVariant v, int num_labels) {
  switch (v) {
    case PairVariant::SegMulti: return num_labels - 1;
    case PairVariant::SegAgg: return 1;
    case PairVariant::ImgSegMulti: return num_labels;
    case PairVariant::ImgSegPerSoi: return 2;
    case PairVariant::ImgSegAgg: return 2;
  }
  return 0;
}

int pair_stacks(PairVariant v, int num_labels) {
  return v == PairVariant::ImgSegPerSoi ? num_labels - 1 : 1;
}

}  // namespace psigan

namespace psigan::models {

namespace nn = torch::nn;

std::vector<int> PatchDiscriminatorSpec::channel_ladder() const {
  std::vector<int> ch;
  for (int i = 0; i + 1 < layers; ++i) ch.push_back(std::min(base_width << i, 512));
  ch.push_back(1);
  return ch;
}

std::vector<int> PatchDiscriminatorSpec::stride_ladder() const {
  // all but the last two layers downsample
  std::vector<int> st;
  for (int i = 0; i < layers; ++i) st.push_back(i < layers - 2 ? 2 : 1);
  return st;
}

GeneratorSpec paper_generator_spec() { return GeneratorSpec{1, 1, 64, 9, 2}; }

PatchDiscriminatorSpec paper_discriminator_spec(int in_channels) {
  return PatchDiscriminatorSpec{in_channels, 64, 5, 4};
}

GeneratorSpec desk_generator_spec(int base_width, int res_blocks) {
  return GeneratorSpec{1, 1, base_width, res_blocks, 2};
}

PatchDiscriminatorSpec desk_discriminator_spec(int in_channels, int base_width, int layers) {
  return PatchDiscriminatorSpec{in_channels, base_width, layers, 4};
}

int receptive_field(const std::vector<int>& kernels, const std::vector<int>& strides) {
  if (kernels.size() != strides.size())
    throw std::invalid_argument("receptive_field: kernel/stride length mismatch");
  int rf = 1, jump = 1;
  for (size_t i = 0; i < kernels.size(); ++i) {
    rf += (kernels[i] - 1) * jump;
    jump *= strides[i];
  }
  return rf;
}

int receptive_field(const PatchDiscriminatorSpec& spec) {
  std::vector<int> kernels(spec.layers, spec.kernel);
  return receptive_field(kernels, spec.stride_ladder());
}

// ---------------------------------------------------------------------------
// generator
// ---------------------------------------------------------------------------

namespace {

nn::Conv2d reflect_conv(int in_ch, int out_ch, int kernel, int stride, int pad) {
  return nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, kernel)
                        .stride(stride)
                        .padding(pad)
                        .padding_mode(torch::kReflect));
}

nn::InstanceNorm2d inorm(int ch) {
  return nn::InstanceNorm2d(
      nn::InstanceNorm2dOptions(ch).affine(false).track_running_stats(false));
}

// Discriminator norms track running statistics: inference mode is then a
// per-channel affine, so one patch logit depends on exactly its convolutional
// receptive field (the masking probes rely on this).
nn::InstanceNorm2d inorm_tracked(int ch) {
  return nn::InstanceNorm2d(
      nn::InstanceNorm2dOptions(ch).affine(false).track_running_stats(true));
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int width) {
  conv1 = register_module("conv1", reflect_conv(width, width, 3, 1, 1));
  norm1 = register_module("norm1", inorm(width));
  conv2 = register_module("conv2", reflect_conv(width, width, 3, 1, 1));
  norm2 = register_module("norm2", inorm(width));
}

torch::Tensor ResidualBlockImpl::forward(torch::Tensor x) {
  auto y = torch::relu(norm1(conv1(x)));
  return x + norm2(conv2(y));
}

ResnetGeneratorImpl::ResnetGeneratorImpl(const GeneratorSpec& s) : spec(s) {
  nn::Sequential seq;
  seq->push_back(reflect_conv(s.in_channels, s.base_width, 7, 1, 3));
  seq->push_back(inorm(s.base_width));
  seq->push_back(nn::ReLU());
  int w = s.base_width;
  for (int i = 0; i < s.down_stages; ++i) {
    seq->push_back(reflect_conv(w, w * 2, 3, 2, 1));
    seq->push_back(inorm(w * 2));
    seq->push_back(nn::ReLU());
    w *= 2;
  }
  for (int i = 0; i < s.res_blocks; ++i) seq->push_back(ResidualBlock(w));
  for (int i = 0; i < s.down_stages; ++i) {
    seq->push_back(nn::ConvTranspose2d(
        nn::ConvTranspose2dOptions(w, w / 2, 3).stride(2).padding(1).output_padding(1)));
    seq->push_back(inorm(w / 2));
    seq->push_back(nn::ReLU());
    w /= 2;
  }
  seq->push_back(reflect_conv(w, s.out_channels, 7, 1, 3));
  seq->push_back(nn::Tanh());
  body = register_module("body", seq);
}

torch::Tensor ResnetGeneratorImpl::forward(torch::Tensor x) { return body->forward(x); }

// ---------------------------------------------------------------------------
// discriminator
// ---------------------------------------------------------------------------

PatchDiscriminatorImpl::PatchDiscriminatorImpl(const PatchDiscriminatorSpec& s) : spec(s) {
  const auto channels = s.channel_ladder();
  const auto strides = s.stride_ladder();
  nn::Sequential seq;
  int in_ch = s.in_channels;
  for (int i = 0; i < s.layers; ++i) {
    seq->push_back(nn::Conv2d(
        nn::Conv2dOptions(in_ch, channels[i], s.kernel).stride(strides[i]).padding(1)));
    const bool is_head = i == s.layers - 1;
    if (!is_head) {
      if (i > 0) seq->push_back(inorm_tracked(channels[i]));
      seq->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    }
    in_ch = channels[i];
  }
  body = register_module("body", seq);
}

torch::Tensor PatchDiscriminatorImpl::forward(torch::Tensor x) {
  TORCH_CHECK(x.dim() == 4, "discriminator expects BCHW input");
  TORCH_CHECK(x.size(1) == spec.in_channels, "discriminator channel mismatch: expected ",
              spec.in_channels, " got ", x.size(1));
  return body->forward(x);
}

// ---------------------------------------------------------------------------
// split segmentor
// ---------------------------------------------------------------------------

DoubleConvImpl::DoubleConvImpl(int in_ch, int out_ch) {
  conv1 = register_module("conv1", nn::Conv2d(nn::Conv2dOptions(in_ch, out_ch, 3).padding(1)));
  bn1 = register_module("bn1", nn::BatchNorm2d(out_ch));
  conv2 = register_module("conv2", nn::Conv2d(nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)));
  bn2 = register_module("bn2", nn::BatchNorm2d(out_ch));
}

torch::Tensor DoubleConvImpl::forward(torch::Tensor x) {
  x = torch::relu(bn1(conv1(x)));
  return torch::relu(bn2(conv2(x)));
}

UnetEncoderImpl::UnetEncoderImpl(int in_ch, int base_width, int stages) {
  int w = base_width;
  int c = in_ch;
  for (int i = 0; i < stages; ++i) {
    stage_convs.push_back(
        register_module("stage" + std::to_string(i), DoubleConv(c, w)));
    c = w;
    w *= 2;
  }
  bottom_conv = register_module("bottom", DoubleConv(c, c));
}

EncoderFeatures UnetEncoderImpl::forward(torch::Tensor x) {
  EncoderFeatures f;
  for (auto& stage : stage_convs) {
    x = stage(x);
    f.skips.push_back(x);
    x = torch::max_pool2d(x, 2);
  }
  f.bottom = bottom_conv(x);
  return f;
}

UnetDecoderImpl::UnetDecoderImpl(int base_width, int stages, int num_classes) {
  // deepest first: cat(upsampled, skip) -> conv back down the width ladder
  int above = base_width << (stages - 1);  // bottom block width
  for (int i = stages - 1; i >= 0; --i) {
    const int skip_w = base_width << i;
    const int out_w = std::max(base_width, skip_w / 2);
    up_convs.push_back(
        register_module("up" + std::to_string(i), DoubleConv(above + skip_w, out_w)));
    above = out_w;
  }
  head = register_module(
      "head", nn::Conv2d(nn::Conv2dOptions(base_width, num_classes, 1)));
}

torch::Tensor UnetDecoderImpl::forward(const EncoderFeatures& f) {
  namespace F = torch::nn::functional;
  auto x = f.bottom;
  const int stages = static_cast<int>(f.skips.size());
  for (int i = 0; i < stages; ++i) {
    const auto& skip = f.skips[stages - 1 - i];
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = up_convs[i](torch::cat({x, skip}, 1));
  }
  return head(x);
}

SplitSegmentorImpl::SplitSegmentorImpl(const SegmentorSpec& s) : spec(s) {
  enc_m = register_module("enc_m", UnetEncoder(s.in_channels, s.base_width, s.pool_stages));
  if (!s.single_mode) {
    enc_cm = register_module("enc_cm", UnetEncoder(s.in_channels, s.base_width, s.pool_stages));
  }
  decoder = register_module("decoder",
                            UnetDecoder(s.base_width, s.pool_stages, s.num_classes));
}

torch::Tensor SplitSegmentorImpl::forward_logits(torch::Tensor x, Branch branch) {
  TORCH_CHECK(x.dim() == 4, "segmentor expects BCHW input");
  auto& enc = (branch == Branch::SM || spec.single_mode) ? enc_m : enc_cm;
  return decoder(enc(x));
}

torch::Tensor SplitSegmentorImpl::forward_probs(torch::Tensor x, Branch branch) {
  return torch::softmax(forward_logits(x, branch), 1);
}

// ---------------------------------------------------------------------------
// init + bundle
// ---------------------------------------------------------------------------

void init_weights(torch::nn::Module& module, uint64_t seed) {
  torch::NoGradGuard guard;
  torch::manual_seed(seed);
  for (auto& m : module.modules(/*include_self=*/true)) {
    if (auto* conv = m->as<nn::Conv2d>()) {
      conv->weight.normal_(0.0, 0.02);
      if (conv->bias.defined()) conv->bias.zero_();
    } else if (auto* tconv = m->as<nn::ConvTranspose2d>()) {
      tconv->weight.normal_(0.0, 0.02);
      if (tconv->bias.defined()) tconv->bias.zero_();
    } else if (auto* bn = m->as<nn::BatchNorm2d>()) {
      bn->weight.fill_(1.0);
      bn->bias.zero_();
    }
  }
}

int64_t count_parameters(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

ModelBundle ModelBundle::create(const BundleSpec& spec, uint64_t init_seed) {
  ModelBundle b;
  b.spec = spec;
  b.gen_cm = ResnetGenerator(spec.generator);
  b.gen_mc = ResnetGenerator(spec.generator);
  b.disc_m = PatchDiscriminator(
      desk_discriminator_spec(1, spec.disc_base_width, spec.disc_layers));
  b.disc_c = PatchDiscriminator(
      desk_discriminator_spec(1, spec.disc_base_width, spec.disc_layers));
  const int n_struct = pair_stacks(spec.variant, spec.num_labels);
  const int struct_ch = pair_channels(spec.variant, spec.num_labels);
  for (int i = 0; i < n_struct; ++i) {
    b.disc_struct.push_back(PatchDiscriminator(
        desk_discriminator_spec(struct_ch, spec.disc_base_width, spec.disc_layers)));
  }
  SegmentorSpec seg_spec;
  seg_spec.in_channels = 1;
  seg_spec.num_classes = spec.num_labels;
  seg_spec.base_width = spec.seg_base_width;
  seg_spec.single_mode = spec.mode == SegmentorMode::Single;
  b.seg = SplitSegmentor(seg_spec);

  uint64_t s = init_seed;
  init_weights(*b.gen_cm, s++);
  init_weights(*b.gen_mc, s++);
  init_weights(*b.disc_m, s++);
  init_weights(*b.disc_c, s++);
  for (auto& d : b.disc_struct) init_weights(*d, s++);
  init_weights(*b.seg, s++);
  return b;
}

namespace {
std::vector<torch::Tensor> params_of(const torch::nn::Module& m) {
  return m.parameters();
}
}  // namespace

std::vector<torch::Tensor> ModelBundle::generator_params() const {
  auto v = params_of(*gen_cm);
  auto w = params_of(*gen_mc);
  v.insert(v.end(), w.begin(), w.end());
  return v;
}

std::vector<torch::Tensor> ModelBundle::discriminator_params() const {
  auto v = params_of(*disc_m);
  auto w = params_of(*disc_c);
  v.insert(v.end(), w.begin(), w.end());
  for (const auto& d : disc_struct) {
    auto u = params_of(*d);
    v.insert(v.end(), u.begin(), u.end());
  }
  return v;
}

std::vector<torch::Tensor> ModelBundle::segmentor_params() const {
  return params_of(*seg);  // both encoders plus the decoder exactly once
}

std::vector<std::pair<std::string, std::vector<torch::Tensor>>> ModelBundle::named_groups()
    const {
  std::vector<std::pair<std::string, std::vector<torch::Tensor>>> g;
  g.emplace_back("gen_cm", params_of(*gen_cm));
  g.emplace_back("gen_mc", params_of(*gen_mc));
  g.emplace_back("disc_m", params_of(*disc_m));
  g.emplace_back("disc_c", params_of(*disc_c));
  for (size_t i = 0; i < disc_struct.size(); ++i) {
    g.emplace_back(disc_struct.size() == 1 ? "disc_struct"
                                           : "disc_struct[" + std::to_string(i) + "]",
                   params_of(*disc_struct[i]));
  }
  g.emplace_back("enc_m", params_of(*seg->enc_m));
  if (!seg->spec.single_mode) g.emplace_back("enc_cm", params_of(*seg->enc_cm));
  g.emplace_back("decoder", params_of(*seg->decoder));
  return g;
}

void ModelBundle::train_mode(bool on) {
  gen_cm->train(on);
  gen_mc->train(on);
  disc_m->train(on);
  disc_c->train(on);
  for (auto& d : disc_struct) d->train(on);
  seg->train(on);
}

torch::Tensor forward_generator(ResnetGenerator& gen, const torch::Tensor& image) {
  TORCH_CHECK(image.dim() == 4, "generator expects BCHW input");
  TORCH_CHECK(image.size(2) == image.size(3), "generator expects square input");
  TORCH_CHECK(image.size(2) % 4 == 0, "generator input size must be divisible by 4, got ",
              image.size(2));
  return gen(image);
}

torch::Tensor forward_discriminator(PatchDiscriminator& disc, const torch::Tensor& stack) {
  return disc(stack);
}

torch::Tensor forward_segmentor(SplitSegmentor& seg, const torch::Tensor& image, Branch branch) {
  return seg->forward_probs(image, branch);
}

}  // namespace psigan::models
