#pragma once

#include <torch/torch.h>

#include <string>
#include <vector>

namespace psigan {

enum class PairVariant {
  SegMulti,      // (i)   multi-channel foreground probabilities only
  SegAgg,        // (ii)  aggregated probability map only
  ImgSegMulti,   // (iii) image + multi-channel foreground probabilities
  ImgSegPerSoi,  // (iv)  one discriminator per SOI, image + that SOI's channel
  ImgSegAgg,     // (v)   image + aggregated map (default)
};

enum class SegmentorMode { Split, Single };
enum class Branch { SM, SCM };

PairVariant pair_variant_from_string(const std::string& s);
std::string to_string(PairVariant v);
SegmentorMode segmentor_mode_from_string(const std::string& s);
std::string to_string(SegmentorMode m);

// Structure-discriminator input channels for one stack under a variant.
int pair_channels(PairVariant v, int num_labels);
// Number of structure discriminators (K-1 for the per-SOI variant, else 1).
int pair_stacks(PairVariant v, int num_labels);

}  // namespace psigan

namespace psigan::models {

struct GeneratorSpec {
  int in_channels = 1;
  int out_channels = 1;
  int base_width = 64;
  int res_blocks = 9;
  int down_stages = 2;  // stride-2 convs; mirrored by fractional-stride convs
};

struct PatchDiscriminatorSpec {
  int in_channels = 1;
  int base_width = 64;
  int layers = 5;  // conv layers including the 1-channel head
  int kernel = 4;

  std::vector<int> channel_ladder() const;  // e.g. 64,128,256,512,1
  std::vector<int> stride_ladder() const;   // 2,...,2,1,1
};

struct SegmentorSpec {
  int in_channels = 1;
  int num_classes = 4;
  int base_width = 64;
  int pool_stages = 4;
  bool single_mode = false;
};

GeneratorSpec paper_generator_spec();
PatchDiscriminatorSpec paper_discriminator_spec(int in_channels = 1);
GeneratorSpec desk_generator_spec(int base_width = 16, int res_blocks = 6);
PatchDiscriminatorSpec desk_discriminator_spec(int in_channels, int base_width = 16,
                                               int layers = 4);

// Analytic receptive field of one output unit from the kernel/stride recurrence.
int receptive_field(const std::vector<int>& kernels, const std::vector<int>& strides);
int receptive_field(const PatchDiscriminatorSpec& spec);

// ---------------------------------------------------------------------------
// networks
// ---------------------------------------------------------------------------

struct ResidualBlockImpl : torch::nn::Module {
  explicit ResidualBlockImpl(int width);
  torch::Tensor forward(torch::Tensor x);
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::InstanceNorm2d norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Translation generator: stride-2 downsampling stack, residual core,
// fractional-stride upsampling, tanh output. Reflection padding throughout.
struct ResnetGeneratorImpl : torch::nn::Module {
  explicit ResnetGeneratorImpl(const GeneratorSpec& spec);
  torch::Tensor forward(torch::Tensor x);
  GeneratorSpec spec;
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(ResnetGenerator);

// PatchGAN: emits one real/fake logit per overlapping patch, no final activation.
struct PatchDiscriminatorImpl : torch::nn::Module {
  explicit PatchDiscriminatorImpl(const PatchDiscriminatorSpec& spec);
  torch::Tensor forward(torch::Tensor x);
  PatchDiscriminatorSpec spec;
  torch::nn::Sequential body{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

struct DoubleConvImpl : torch::nn::Module {
  DoubleConvImpl(int in_ch, int out_ch);
  torch::Tensor forward(torch::Tensor x);
  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr};
};
TORCH_MODULE(DoubleConv);

struct EncoderFeatures {
  std::vector<torch::Tensor> skips;
  torch::Tensor bottom;
};

struct UnetEncoderImpl : torch::nn::Module {
  UnetEncoderImpl(int in_ch, int base_width, int stages);
  EncoderFeatures forward(torch::Tensor x);
  std::vector<DoubleConv> stage_convs;
  DoubleConv bottom_conv{nullptr};
};
TORCH_MODULE(UnetEncoder);

struct UnetDecoderImpl : torch::nn::Module {
  UnetDecoderImpl(int base_width, int stages, int num_classes);
  torch::Tensor forward(const EncoderFeatures& f);
  std::vector<DoubleConv> up_convs;
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(UnetDecoder);

// Split segmentor: two encoders with identical topology, one shared decoder.
// Branch SM routes through enc_m, branch SCM through enc_cm; in single mode
// one encoder serves both branches.
struct SplitSegmentorImpl : torch::nn::Module {
  explicit SplitSegmentorImpl(const SegmentorSpec& spec);
  torch::Tensor forward_logits(torch::Tensor x, Branch branch);
  torch::Tensor forward_probs(torch::Tensor x, Branch branch);
  SegmentorSpec spec;
  UnetEncoder enc_m{nullptr};
  UnetEncoder enc_cm{nullptr};  // null in single mode
  UnetDecoder decoder{nullptr};
};
TORCH_MODULE(SplitSegmentor);

// Zero-mean Gaussian (sigma 0.02) conv weights, zero biases, unit norm scales.
void init_weights(torch::nn::Module& module, uint64_t seed);

int64_t count_parameters(const torch::nn::Module& module);

// ---------------------------------------------------------------------------
// bundle
// ---------------------------------------------------------------------------

struct BundleSpec {
  GeneratorSpec generator = desk_generator_spec();
  int disc_base_width = 16;
  int disc_layers = 4;
  int seg_base_width = 16;
  int num_labels = 4;
  PairVariant variant = PairVariant::ImgSegAgg;
  SegmentorMode mode = SegmentorMode::Split;
};

// Parameters of the six networks. The shared decoder is stored once and is a
// member of both segmentor branches' parameter groups.
struct ModelBundle {
  BundleSpec spec;
  ResnetGenerator gen_cm{nullptr}, gen_mc{nullptr};
  PatchDiscriminator disc_m{nullptr}, disc_c{nullptr};
  std::vector<PatchDiscriminator> disc_struct;
  SplitSegmentor seg{nullptr};

  static ModelBundle create(const BundleSpec& spec, uint64_t init_seed);

  std::vector<torch::Tensor> generator_params() const;
  std::vector<torch::Tensor> discriminator_params() const;
  std::vector<torch::Tensor> segmentor_params() const;  // decoder included once

  // Named groups for gradient-routing inspection.
  std::vector<std::pair<std::string, std::vector<torch::Tensor>>> named_groups() const;

  void train_mode(bool on = true);
};

torch::Tensor forward_generator(ResnetGenerator& gen, const torch::Tensor& image);
torch::Tensor forward_discriminator(PatchDiscriminator& disc, const torch::Tensor& stack);
torch::Tensor forward_segmentor(SplitSegmentor& seg, const torch::Tensor& image, Branch branch);

}  // namespace psigan::models
