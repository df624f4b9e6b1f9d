#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <ATen/core/Generator.h>
#include <torch/nn/module.h>
#include <torch/nn/modules/container/modulelist.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/conv.h>
#include <torch/nn/modules/linear.h>
#include <torch/types.h>

#include "matchgan/conditioning.hpp"
#include "matchgan/random.hpp"

namespace matchgan {

// ---------------------------------------------------------------------------
// Layer vocabulary

enum class LayerKind {
    conv,
    upsample_nearest,
    downsample_average,
    fully_connected,
    residual_block,
    batch_norm,
    layer_norm,
    activation,
    embed_concat_depth,
    to_rgb,
    from_rgb,
    multiplicative_noise,
};

enum class Activation { relu, leaky_relu, tanh, sigmoid, linear };

struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    int kernel = 0;
    int filters = 0;
    int stride = 1;
    Activation activation = Activation::linear;

    static LayerSpec conv(int kernel, int filters, int stride = 1) { return {LayerKind::conv, kernel, filters, stride}; }
    static LayerSpec act(Activation a) { return {LayerKind::activation, 0, 0, 1, a}; }
    static LayerSpec of(LayerKind kind, int filters = 0) { return {kind, 0, filters, 1}; }
};

std::string to_string(LayerKind kind);
std::string to_string(Activation activation);
std::string describe(const LayerSpec& spec);

// ---------------------------------------------------------------------------
// Configuration

enum class Family { gan_cls, stackgan_stage1, stackgan_stage2, wgan_cls, cpggan };
enum class LossFamily { gan, wasserstein, least_squares };
enum class Normalization { automatic, none, batch, layer };

std::string to_string(Family family);
std::string to_string(LossFamily loss);
std::string to_string(Normalization norm);
Family parse_family(const std::string& text);
LossFamily parse_loss_family(const std::string& text);
Normalization parse_normalization(const std::string& text);

struct ArchitectureConfig {
    Family family = Family::gan_cls;
    int base_resolution = 4;
    int max_resolution = 64;
    int noise_dim = 128;
    int compressed_embed_dim = 128;
    int embedding_dim = 1024;
    // Channels per resolution level, starting at base_resolution. Empty
    // selects the family default (desk scale unless full_scale is set).
    std::vector<int> channel_schedule;
    bool full_scale = false;
    bool noise_hack = false;
    double noise_strength = 0.2;
    Normalization critic_normalization = Normalization::automatic;

    // Number of resolution levels from base to max inclusive.
    int levels() const;
    // Resolved channel list (explicit schedule or family default).
    std::vector<int> channels() const;
};

// Throws InvalidArgument for resolution chains the builders cannot realise.
void validate(const ArchitectureConfig& cfg);

// Family default channels; desk scale divides the full schedule by 8.
std::vector<int> default_channel_schedule(Family family, int levels, bool full_scale);

// Flat `key = value` lines, and back. Unknown keys are rejected.
std::string serialize(const ArchitectureConfig& cfg);
ArchitectureConfig parse_architecture(const std::string& text);

// ---------------------------------------------------------------------------
// Building blocks

// Multiplies activations by (1 + strength * g), g ~ N(0, 1) elementwise.
torch::Tensor apply_multiplicative_noise(const torch::Tensor& activations, double strength, Rng& rng);
torch::Tensor apply_multiplicative_noise(const torch::Tensor& activations, double strength, at::Generator& gen);

struct MultiplicativeNoiseImpl : torch::nn::Module {
    explicit MultiplicativeNoiseImpl(double strength);
    // Identity in eval mode or when strength is zero.
    torch::Tensor forward(const torch::Tensor& x);
    void reseed(std::uint64_t seed);

    double strength;
    at::Generator generator;
};
TORCH_MODULE(MultiplicativeNoise);

// Per-sample layer normalisation over C x H x W (no affine parameters).
struct LayerNormImpl : torch::nn::Module {
    torch::Tensor forward(const torch::Tensor& x);
};
TORCH_MODULE(LayerNorm);

struct ResidualBlockImpl : torch::nn::Module {
    ResidualBlockImpl(int channels, Normalization norm, Activation activation);
    torch::Tensor forward(const torch::Tensor& x);

    torch::nn::Sequential body{nullptr};
    Activation activation;
};
TORCH_MODULE(ResidualBlock);

struct BuildContext {
    Normalization norm = Normalization::none;
    double noise_strength = 0.0;
};

// Instantiates a sequential stack from specs. `channels` is the input depth
// on entry and the output depth on return. embed_concat_depth is a model-level
// operation and is rejected here.
torch::nn::Sequential instantiate(const std::vector<LayerSpec>& specs, int& channels, const BuildContext& ctx);

// Spatially replicates a B x N embedding and appends it to B x C x H x W features.
torch::Tensor concat_embedding_depth(const torch::Tensor& features, const torch::Tensor& embedding);

// N x C x R x R -> N x C x 2R x 2R by pixel replication.
torch::Tensor upscale_nearest(const torch::Tensor& images);
torch::Tensor downscale_average(const torch::Tensor& images);

// Normal(0, 1 / fan_in) weights and zero biases for every conv/linear layer.
void initialize_weights(torch::nn::Module& module);

// ---------------------------------------------------------------------------
// Models

struct GeneratorOutput {
    torch::Tensor images;
    // Populated for families with conditioning augmentation.
    std::optional<AugmentedEmbedding> conditioning;
    // Progressive generators: per-stage RGB outputs up to the current stage.
    std::vector<torch::Tensor> stage_outputs;
};

class GeneratorBase : public torch::nn::Module {
public:
    // `embedding` is the raw text embedding (B x N_phi). `epsilon` (B x N_c)
    // drives conditioning augmentation; an undefined tensor means epsilon = 0.
    virtual GeneratorOutput generate(const torch::Tensor& noise, const torch::Tensor& embedding,
                                     const torch::Tensor& epsilon) = 0;
    virtual int output_resolution() const = 0;
    virtual bool uses_conditioning_augmentation() const = 0;
    virtual std::vector<LayerSpec> layers() const = 0;
    // Parameters the optimiser should update (frozen sub-networks excluded).
    virtual std::vector<torch::Tensor> trainable_parameters() { return parameters(); }
    const ArchitectureConfig& config() const { return cfg_; }

protected:
    explicit GeneratorBase(ArchitectureConfig cfg) : cfg_(std::move(cfg)) {}
    ArchitectureConfig cfg_;
};

class CriticBase : public torch::nn::Module {
public:
    // Compresses the raw text embedding to B x N_c.
    virtual torch::Tensor embed(const torch::Tensor& embedding) = 0;
    // One score per sample from images and compressed embeddings.
    virtual torch::Tensor score(const torch::Tensor& images, const torch::Tensor& compressed) = 0;
    virtual int input_resolution() const = 0;
    virtual std::vector<LayerSpec> layers() const = 0;

    torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& embedding) {
        return score(images, embed(embedding));
    }
    LossFamily loss_family() const { return loss_; }
    Normalization normalization() const { return norm_; }
    const ArchitectureConfig& config() const { return cfg_; }

protected:
    CriticBase(ArchitectureConfig cfg, LossFamily loss, Normalization norm)
        : cfg_(std::move(cfg)), loss_(loss), norm_(norm) {}
    ArchitectureConfig cfg_;
    LossFamily loss_;
    Normalization norm_;
};

// DCGAN-style generator shared by gan-cls, StackGAN Stage-I and wgan-cls.
class ConvGenerator : public GeneratorBase {
public:
    explicit ConvGenerator(const ArchitectureConfig& cfg);
    GeneratorOutput generate(const torch::Tensor& noise, const torch::Tensor& embedding,
                             const torch::Tensor& epsilon) override;
    int output_resolution() const override { return cfg_.max_resolution; }
    bool uses_conditioning_augmentation() const override { return cfg_.family != Family::gan_cls; }
    std::vector<LayerSpec> layers() const override { return specs_; }

private:
    EmbeddingCompressor compressor_{nullptr};
    ConditioningAugmentation ca_{nullptr};
    torch::nn::Linear projection_{nullptr};
    torch::nn::Sequential body_{nullptr};
    std::vector<LayerSpec> specs_;
    int base_channels_ = 0;
};

// StackGAN Stage-II: refines a frozen Stage-I image to 4x its resolution.
class RefinerGenerator : public GeneratorBase {
public:
    RefinerGenerator(const ArchitectureConfig& cfg, std::shared_ptr<ConvGenerator> stage1);
    GeneratorOutput generate(const torch::Tensor& noise, const torch::Tensor& embedding,
                             const torch::Tensor& epsilon) override;
    // Refines an existing Stage-I image batch.
    GeneratorOutput refine(const torch::Tensor& stage1_images, const torch::Tensor& embedding,
                           const torch::Tensor& epsilon);
    int output_resolution() const override { return cfg_.max_resolution; }
    bool uses_conditioning_augmentation() const override { return true; }
    std::vector<LayerSpec> layers() const override { return specs_; }
    std::vector<torch::Tensor> trainable_parameters() override;
    std::shared_ptr<ConvGenerator> stage1() const { return stage1_; }

private:
    std::shared_ptr<ConvGenerator> stage1_;
    ConditioningAugmentation ca_{nullptr};
    torch::nn::Sequential encoder_{nullptr};
    torch::nn::Sequential joint_{nullptr};
    torch::nn::Sequential decoder_{nullptr};
    std::vector<LayerSpec> specs_;
};

// DCGAN-style critic with the embedding joined at the 4x4 block.
class ConvCritic : public CriticBase {
public:
    ConvCritic(const ArchitectureConfig& cfg, LossFamily loss, Normalization norm);
    torch::Tensor embed(const torch::Tensor& embedding) override;
    torch::Tensor score(const torch::Tensor& images, const torch::Tensor& compressed) override;
    int input_resolution() const override { return cfg_.max_resolution; }
    std::vector<LayerSpec> layers() const override { return specs_; }

private:
    EmbeddingCompressor compressor_{nullptr};
    torch::nn::Sequential features_{nullptr};
    torch::nn::Sequential joint_{nullptr};
    std::vector<LayerSpec> specs_;
};

// Progressive generator. Stage k (1-based) outputs base * 2^(k-1) pixels.
class ProgressiveGenerator : public GeneratorBase {
public:
    explicit ProgressiveGenerator(const ArchitectureConfig& cfg);
    GeneratorOutput generate(const torch::Tensor& noise, const torch::Tensor& embedding,
                             const torch::Tensor& epsilon) override;
    int output_resolution() const override;
    bool uses_conditioning_augmentation() const override { return true; }
    std::vector<LayerSpec> layers() const override;

    void set_growth(int stage, double alpha);
    int stage() const { return stage_; }
    double alpha() const { return alpha_; }
    int max_stage() const { return cfg_.levels(); }
    // Parameters belonging to stages up to and including `stage`.
    std::vector<torch::Tensor> stage_parameters(int stage);
    std::vector<torch::Tensor> trainable_parameters() override { return stage_parameters(stage_); }

private:
    ConditioningAugmentation ca_{nullptr};
    torch::nn::Linear projection_{nullptr};
    std::vector<torch::nn::Sequential> blocks_;
    std::vector<torch::nn::Conv2d> to_rgb_;
    std::vector<std::vector<LayerSpec>> block_specs_;
    int stage_ = 1;
    double alpha_ = 1.0;
};

// Junction of a progressive critic during a transition phase.
struct CriticInputBlend {
    torch::Tensor full_resolution_path;  // newest block applied to fromRGB(x) at R/2
    torch::Tensor downscaled_path;       // fromRGB of the average-pooled image at R/2
    double alpha = 1.0;
    torch::Tensor blended;               // alpha * full + (1 - alpha) * downscaled
};

class ProgressiveCritic : public CriticBase {
public:
    ProgressiveCritic(const ArchitectureConfig& cfg, LossFamily loss, Normalization norm);
    torch::Tensor embed(const torch::Tensor& embedding) override;
    torch::Tensor score(const torch::Tensor& images, const torch::Tensor& compressed) override;
    int input_resolution() const override;
    std::vector<LayerSpec> layers() const override;

    void set_growth(int stage, double alpha);
    int stage() const { return stage_; }
    double alpha() const { return alpha_; }
    int max_stage() const { return cfg_.levels(); }

    CriticInputBlend blend_input(const torch::Tensor& images, double alpha);
    // Runs the stack from the junction (features at R/2 for the current
    // stage) down to the score.
    torch::Tensor score_from_junction(const torch::Tensor& junction, const torch::Tensor& compressed);
    std::vector<torch::Tensor> stage_parameters(int stage);
    void reseed_noise(std::uint64_t seed);

private:
    torch::Tensor from_rgb(int stage, const torch::Tensor& images);
    EmbeddingCompressor compressor_{nullptr};
    std::vector<torch::nn::Sequential> from_rgb_;
    std::vector<torch::nn::Sequential> blocks_;  // blocks_[0] is the final 4x4 block (pre-concat part)
    torch::nn::Sequential head_{nullptr};
    std::vector<std::vector<LayerSpec>> block_specs_;
    int stage_ = 1;
    double alpha_ = 1.0;
};

std::shared_ptr<GeneratorBase> build_generator(const ArchitectureConfig& cfg);
// For stackgan-stage2 the Stage-I generator is built from `cfg` with
// max_resolution / 4 unless one is supplied.
std::shared_ptr<GeneratorBase> build_generator(const ArchitectureConfig& cfg, std::shared_ptr<ConvGenerator> stage1);

// Throws InvalidConfig when batch norm is requested together with a
// gradient penalty, or when the head does not suit the loss family.
std::shared_ptr<CriticBase> build_discriminator(const ArchitectureConfig& cfg, LossFamily loss, bool gradient_penalty);

// Stage-I architecture implied by a Stage-II config.
ArchitectureConfig stage1_config(const ArchitectureConfig& stage2);

}  // namespace matchgan
