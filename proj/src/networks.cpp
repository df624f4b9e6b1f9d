#include "matchgan/networks.hpp"

#include <cmath>
#include <sstream>

#include <ATen/CPUGeneratorImpl.h>
#include <torch/torch.h>

#include "matchgan/errors.hpp"
#include "matchgan/progressive.hpp"

namespace matchgan {

// ---------------------------------------------------------------------------
// Names

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv: return "conv";
        case LayerKind::upsample_nearest: return "upsample-nearest";
        case LayerKind::downsample_average: return "downsample-average";
        case LayerKind::fully_connected: return "fully-connected";
        case LayerKind::residual_block: return "residual-block";
        case LayerKind::batch_norm: return "batch-norm";
        case LayerKind::layer_norm: return "layer-norm";
        case LayerKind::activation: return "activation";
        case LayerKind::embed_concat_depth: return "embed-concat-depth";
        case LayerKind::to_rgb: return "to-rgb";
        case LayerKind::from_rgb: return "from-rgb";
        case LayerKind::multiplicative_noise: return "multiplicative-noise";
    }
    return "?";
}

std::string to_string(Activation a) {
    switch (a) {
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky-relu";
        case Activation::tanh: return "tanh";
        case Activation::sigmoid: return "sigmoid";
        case Activation::linear: return "linear";
    }
    return "?";
}

std::string describe(const LayerSpec& s) {
    std::ostringstream out;
    out << to_string(s.kind);
    if (s.kind == LayerKind::activation) out << '(' << to_string(s.activation) << ')';
    if (s.kernel > 0) out << " k" << s.kernel;
    if (s.filters > 0) out << " f" << s.filters;
    if (s.stride > 1) out << " s" << s.stride;
    return out.str();
}

std::string to_string(Family f) {
    switch (f) {
        case Family::gan_cls: return "gan-cls";
        case Family::stackgan_stage1: return "stackgan-stage1";
        case Family::stackgan_stage2: return "stackgan-stage2";
        case Family::wgan_cls: return "wgan-cls";
        case Family::cpggan: return "cpggan";
    }
    return "?";
}

std::string to_string(LossFamily l) {
    switch (l) {
        case LossFamily::gan: return "gan";
        case LossFamily::wasserstein: return "wasserstein";
        case LossFamily::least_squares: return "least-squares";
    }
    return "?";
}

std::string to_string(Normalization n) {
    switch (n) {
        case Normalization::automatic: return "automatic";
        case Normalization::none: return "none";
        case Normalization::batch: return "batch";
        case Normalization::layer: return "layer";
    }
    return "?";
}

Family parse_family(const std::string& t) {
    for (auto f : {Family::gan_cls, Family::stackgan_stage1, Family::stackgan_stage2, Family::wgan_cls, Family::cpggan})
        if (to_string(f) == t) return f;
    throw InvalidArgument("unknown model family '" + t + "'");
}

LossFamily parse_loss_family(const std::string& t) {
    for (auto l : {LossFamily::gan, LossFamily::wasserstein, LossFamily::least_squares})
        if (to_string(l) == t) return l;
    throw InvalidArgument("unknown loss family '" + t + "'");
}

Normalization parse_normalization(const std::string& t) {
    for (auto n : {Normalization::automatic, Normalization::none, Normalization::batch, Normalization::layer})
        if (to_string(n) == t) return n;
    throw InvalidArgument("unknown normalization '" + t + "'");
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_int(int v) {
    int k = 0;
    while ((1 << k) < v) ++k;
    return k;
}

std::vector<int> full_schedule(Family family) {
    switch (family) {
        case Family::cpggan: return {512, 512, 512, 512, 256, 128, 64};
        case Family::stackgan_stage2: return {512, 512, 512, 256, 128, 64, 32};
        default: return {1024, 512, 256, 128, 64, 32, 16};
    }
}

}  // namespace

int ArchitectureConfig::levels() const {
    if (base_resolution <= 0 || max_resolution < base_resolution) return 0;
    return log2_int(max_resolution / base_resolution) + 1;
}

std::vector<int> ArchitectureConfig::channels() const {
    if (!channel_schedule.empty()) return channel_schedule;
    return default_channel_schedule(family, levels(), full_scale);
}

std::vector<int> default_channel_schedule(Family family, int levels, bool full_scale) {
    auto full = full_schedule(family);
    while (static_cast<int>(full.size()) < levels) full.push_back(std::max(8, full.back() / 2));
    full.resize(static_cast<std::size_t>(std::max(levels, 0)));
    if (!full_scale)
        for (auto& c : full) c = std::max(4, c / 8);
    return full;
}

void validate(const ArchitectureConfig& cfg) {
    if (cfg.base_resolution != 4) throw InvalidArgument("base_resolution must be 4 (the embedding joins at 4x4)");
    if (cfg.max_resolution < cfg.base_resolution || cfg.max_resolution % cfg.base_resolution != 0 ||
        !is_power_of_two(cfg.max_resolution / cfg.base_resolution))
        throw InvalidArgument("max_resolution " + std::to_string(cfg.max_resolution) +
                              " is not base_resolution * 2^k");
    if (cfg.family == Family::stackgan_stage2 && cfg.max_resolution < 16)
        throw InvalidArgument("stackgan-stage2 needs max_resolution >= 16 (Stage-I runs at a quarter of it)");
    if (cfg.noise_dim <= 0 || cfg.compressed_embed_dim <= 0 || cfg.embedding_dim <= 0)
        throw InvalidArgument("noise, embedding and compressed dimensions must be positive");
    if (cfg.noise_strength < 0) throw InvalidArgument("noise_strength must be nonnegative");
    const auto ch = cfg.channels();
    if (static_cast<int>(ch.size()) < cfg.levels())
        throw InvalidArgument("channel_schedule needs " + std::to_string(cfg.levels()) + " entries");
    for (int c : ch)
        if (c <= 0) throw InvalidArgument("channel counts must be positive");
}

std::string serialize(const ArchitectureConfig& cfg) {
    std::ostringstream out;
    out << "family = " << to_string(cfg.family) << '\n';
    out << "base_resolution = " << cfg.base_resolution << '\n';
    out << "max_resolution = " << cfg.max_resolution << '\n';
    out << "noise_dim = " << cfg.noise_dim << '\n';
    out << "compressed_embed_dim = " << cfg.compressed_embed_dim << '\n';
    out << "embedding_dim = " << cfg.embedding_dim << '\n';
    out << "channel_schedule = ";
    for (std::size_t i = 0; i < cfg.channel_schedule.size(); ++i) out << (i ? "," : "") << cfg.channel_schedule[i];
    out << '\n';
    out << "full_scale = " << (cfg.full_scale ? "true" : "false") << '\n';
    out << "noise_hack = " << (cfg.noise_hack ? "true" : "false") << '\n';
    out << "noise_strength = " << cfg.noise_strength << '\n';
    out << "critic_normalization = " << to_string(cfg.critic_normalization) << '\n';
    return out.str();
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

bool parse_bool(const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InvalidArgument("expected true/false, got '" + v + "'");
}

}  // namespace

ArchitectureConfig parse_architecture(const std::string& text) {
    ArchitectureConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InvalidArgument("malformed architecture line: " + line);
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key == "family") cfg.family = parse_family(value);
        else if (key == "base_resolution") cfg.base_resolution = std::stoi(value);
        else if (key == "max_resolution") cfg.max_resolution = std::stoi(value);
        else if (key == "noise_dim") cfg.noise_dim = std::stoi(value);
        else if (key == "compressed_embed_dim") cfg.compressed_embed_dim = std::stoi(value);
        else if (key == "embedding_dim") cfg.embedding_dim = std::stoi(value);
        else if (key == "channel_schedule") {
            cfg.channel_schedule.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!trim(item).empty()) cfg.channel_schedule.push_back(std::stoi(trim(item)));
        } else if (key == "full_scale") cfg.full_scale = parse_bool(value);
        else if (key == "noise_hack") cfg.noise_hack = parse_bool(value);
        else if (key == "noise_strength") cfg.noise_strength = std::stod(value);
        else if (key == "critic_normalization") cfg.critic_normalization = parse_normalization(value);
        else throw InvalidArgument("unknown architecture key '" + key + "'");
    }
    return cfg;
}

ArchitectureConfig stage1_config(const ArchitectureConfig& stage2) {
    ArchitectureConfig s1 = stage2;
    s1.family = Family::stackgan_stage1;
    s1.max_resolution = stage2.max_resolution / 4;
    s1.channel_schedule.clear();
    return s1;
}

// ---------------------------------------------------------------------------
// Building blocks

torch::Tensor apply_multiplicative_noise(const torch::Tensor& activations, double strength, at::Generator& gen) {
    if (strength < 0) throw InvalidArgument("noise strength must be nonnegative");
    if (strength == 0.0) return activations;
    const auto g = at::randn(activations.sizes(), gen, activations.options().requires_grad(false));
    return activations * (1.0 + strength * g);
}

torch::Tensor apply_multiplicative_noise(const torch::Tensor& activations, double strength, Rng& rng) {
    auto gen = at::make_generator<at::CPUGeneratorImpl>(rng.next_u64());
    return apply_multiplicative_noise(activations, strength, gen);
}

MultiplicativeNoiseImpl::MultiplicativeNoiseImpl(double s)
    : strength(s), generator(at::make_generator<at::CPUGeneratorImpl>(0)) {}

torch::Tensor MultiplicativeNoiseImpl::forward(const torch::Tensor& x) {
    if (!is_training() || strength == 0.0) return x;
    return apply_multiplicative_noise(x, strength, generator);
}

void MultiplicativeNoiseImpl::reseed(std::uint64_t seed) { generator = at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor LayerNormImpl::forward(const torch::Tensor& x) {
    std::vector<std::int64_t> shape(x.sizes().begin() + 1, x.sizes().end());
    return torch::layer_norm(x, shape, {}, {}, 1e-5);
}

namespace {

torch::nn::AnyModule activation_module(Activation a) {
    switch (a) {
        case Activation::relu: return torch::nn::AnyModule(torch::nn::ReLU());
        case Activation::leaky_relu:
            return torch::nn::AnyModule(torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(kLeakySlope)));
        case Activation::tanh: return torch::nn::AnyModule(torch::nn::Tanh());
        case Activation::sigmoid: return torch::nn::AnyModule(torch::nn::Sigmoid());
        case Activation::linear: return torch::nn::AnyModule(torch::nn::Identity());
    }
    throw InvalidArgument("unknown activation");
}

torch::Tensor activate(const torch::Tensor& x, Activation a) {
    switch (a) {
        case Activation::relu: return torch::relu(x);
        case Activation::leaky_relu: return torch::leaky_relu(x, kLeakySlope);
        case Activation::tanh: return torch::tanh(x);
        case Activation::sigmoid: return torch::sigmoid(x);
        case Activation::linear: return x;
    }
    return x;
}

int conv_padding(int kernel, int stride) {
    if (kernel % 2 == 1) return kernel / 2;
    return stride == 2 ? 1 : 0;
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int channels, Normalization norm, Activation act) : activation(act) {
    std::vector<LayerSpec> specs = {LayerSpec::conv(3, channels)};
    if (norm == Normalization::batch) specs.push_back(LayerSpec::of(LayerKind::batch_norm));
    if (norm == Normalization::layer) specs.push_back(LayerSpec::of(LayerKind::layer_norm));
    specs.push_back(LayerSpec::act(act));
    specs.push_back(LayerSpec::conv(3, channels));
    if (norm == Normalization::batch) specs.push_back(LayerSpec::of(LayerKind::batch_norm));
    if (norm == Normalization::layer) specs.push_back(LayerSpec::of(LayerKind::layer_norm));
    int c = channels;
    body = register_module("body", instantiate(specs, c, BuildContext{norm, 0.0}));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return activate(x + body->forward(x), activation); }

torch::nn::Sequential instantiate(const std::vector<LayerSpec>& specs, int& channels, const BuildContext& ctx) {
    torch::nn::Sequential seq;
    for (const auto& s : specs) {
        switch (s.kind) {
            case LayerKind::conv:
            case LayerKind::to_rgb:
            case LayerKind::from_rgb: {
                const int kernel = s.kernel > 0 ? s.kernel : 1;
                const int filters = s.kind == LayerKind::to_rgb ? 3 : s.filters;
                const int in = s.kind == LayerKind::from_rgb ? 3 : channels;
                if (filters <= 0 || s.stride <= 0) throw InvalidArgument("conv needs positive filters and stride");
                seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, filters, kernel)
                                                     .stride(s.stride)
                                                     .padding(conv_padding(kernel, s.stride))));
                channels = filters;
                break;
            }
            case LayerKind::upsample_nearest:
                seq->push_back(torch::nn::Functional(upscale_nearest));
                break;
            case LayerKind::downsample_average:
                seq->push_back(torch::nn::Functional(downscale_average));
                break;
            case LayerKind::fully_connected:
                seq->push_back(torch::nn::Flatten());
                seq->push_back(torch::nn::Linear(channels, s.filters));
                channels = s.filters;
                break;
            case LayerKind::residual_block:
                seq->push_back(ResidualBlock(channels, ctx.norm == Normalization::automatic ? Normalization::none : ctx.norm,
                                             s.activation));
                break;
            case LayerKind::batch_norm:
                seq->push_back(torch::nn::BatchNorm2d(channels));
                break;
            case LayerKind::layer_norm:
                seq->push_back(LayerNorm());
                break;
            case LayerKind::activation:
                seq->push_back(activation_module(s.activation));
                break;
            case LayerKind::multiplicative_noise:
                seq->push_back(MultiplicativeNoise(ctx.noise_strength));
                break;
            case LayerKind::embed_concat_depth:
                throw InvalidArgument("embed-concat-depth is handled by the model, not a sequential stack");
        }
    }
    return seq;
}

torch::Tensor concat_embedding_depth(const torch::Tensor& features, const torch::Tensor& embedding) {
    if (features.dim() != 4 || embedding.dim() != 2 || features.size(0) != embedding.size(0))
        throw InvalidArgument("cannot join embedding of shape " + std::to_string(embedding.dim()) + "-d to features");
    const auto tiled = embedding.view({embedding.size(0), embedding.size(1), 1, 1})
                           .expand({embedding.size(0), embedding.size(1), features.size(2), features.size(3)});
    return torch::cat({features, tiled}, 1);
}

torch::Tensor upscale_nearest(const torch::Tensor& images) {
    return images.repeat_interleave(2, 2).repeat_interleave(2, 3);
}

torch::Tensor downscale_average(const torch::Tensor& images) { return torch::avg_pool2d(images, 2); }

void initialize_weights(torch::nn::Module& module) {
    torch::NoGradGuard guard;
    for (auto& m : module.modules(/*include_self=*/false)) {
        torch::Tensor weight, bias;
        if (auto* conv = m->as<torch::nn::Conv2d>()) {
            weight = conv->weight;
            bias = conv->bias;
        } else if (auto* fc = m->as<torch::nn::Linear>()) {
            weight = fc->weight;
            bias = fc->bias;
        } else {
            continue;
        }
        const double fan_in = static_cast<double>(weight[0].numel());
        weight.normal_(0.0, 1.0 / std::sqrt(fan_in));
        if (bias.defined()) bias.zero_();
    }
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

void check_generator_inputs(const ArchitectureConfig& cfg, const torch::Tensor& noise, const torch::Tensor& embedding) {
    if (noise.dim() != 2 || noise.size(1) != cfg.noise_dim)
        throw InvalidArgument("noise must be B x " + std::to_string(cfg.noise_dim));
    if (embedding.dim() != 2 || embedding.size(1) != cfg.embedding_dim || embedding.size(0) != noise.size(0))
        throw InvalidArgument("embedding must be B x " + std::to_string(cfg.embedding_dim));
}

void append_norm(std::vector<LayerSpec>& specs, Normalization norm) {
    if (norm == Normalization::batch) specs.push_back(LayerSpec::of(LayerKind::batch_norm));
    else if (norm == Normalization::layer) specs.push_back(LayerSpec::of(LayerKind::layer_norm));
}

AugmentedEmbedding condition(ConditioningAugmentation& ca, const torch::Tensor& embedding, const torch::Tensor& epsilon) {
    return epsilon.defined() ? ca->forward(embedding, epsilon) : ca->mean(embedding);
}

}  // namespace

// ---------------------------------------------------------------------------
// ConvGenerator

ConvGenerator::ConvGenerator(const ArchitectureConfig& cfg) : GeneratorBase(cfg) {
    validate(cfg_);
    const auto ch = cfg_.channels();
    const int levels = cfg_.levels();
    const auto act = cfg_.family == Family::gan_cls ? Activation::leaky_relu : Activation::relu;

    if (cfg_.family == Family::gan_cls)
        compressor_ = register_module("compressor", EmbeddingCompressor(cfg_.embedding_dim, cfg_.compressed_embed_dim));
    else
        ca_ = register_module("ca", ConditioningAugmentation(cfg_.embedding_dim, cfg_.compressed_embed_dim));

    base_channels_ = ch[0];
    projection_ = register_module("projection", torch::nn::Linear(cfg_.noise_dim + cfg_.compressed_embed_dim,
                                                                  base_channels_ * cfg_.base_resolution * cfg_.base_resolution));
    specs_.push_back(LayerSpec::of(LayerKind::fully_connected, base_channels_ * 16));

    std::vector<LayerSpec> body;
    body.push_back(LayerSpec::of(LayerKind::batch_norm));
    body.push_back(LayerSpec::act(act));
    for (int r = 0; r < 2; ++r) body.push_back({LayerKind::residual_block, 3, ch[0], 1, act});
    for (int l = 1; l < levels; ++l) {
        body.push_back(LayerSpec::of(LayerKind::upsample_nearest));
        body.push_back(LayerSpec::conv(3, ch[l]));
        body.push_back(LayerSpec::of(LayerKind::batch_norm));
        body.push_back(LayerSpec::act(act));
    }
    body.push_back({LayerKind::to_rgb, 3, 3, 1});
    body.push_back(LayerSpec::act(Activation::tanh));
    int c = base_channels_;
    body_ = register_module("body", instantiate(body, c, BuildContext{Normalization::batch, 0.0}));
    specs_.insert(specs_.end(), body.begin(), body.end());
    initialize_weights(*this);
}

GeneratorOutput ConvGenerator::generate(const torch::Tensor& noise, const torch::Tensor& embedding,
                                        const torch::Tensor& epsilon) {
    check_generator_inputs(cfg_, noise, embedding);
    GeneratorOutput out;
    torch::Tensor c;
    if (cfg_.family == Family::gan_cls) {
        c = compressor_->forward(embedding);
    } else {
        out.conditioning = condition(ca_, embedding, epsilon);
        c = out.conditioning->sample;
    }
    auto x = projection_->forward(torch::cat({noise, c}, 1))
                 .view({noise.size(0), base_channels_, cfg_.base_resolution, cfg_.base_resolution});
    out.images = body_->forward(x);
    return out;
}

// ---------------------------------------------------------------------------
// RefinerGenerator

RefinerGenerator::RefinerGenerator(const ArchitectureConfig& cfg, std::shared_ptr<ConvGenerator> stage1)
    : GeneratorBase(cfg), stage1_(std::move(stage1)) {
    validate(cfg_);
    if (!stage1_) throw InvalidArgument("Stage-II generator needs a Stage-I generator");
    if (stage1_->output_resolution() * 4 != cfg_.max_resolution)
        throw InvalidArgument("Stage-II resolution must be 4x the Stage-I resolution");
    register_module("stage1", stage1_);
    for (auto& p : stage1_->parameters()) p.set_requires_grad(false);

    const auto ch = cfg_.channels();
    const int levels = cfg_.levels();
    const int input_level = levels - 3;  // Stage-I resolution
    ca_ = register_module("ca", ConditioningAugmentation(cfg_.embedding_dim, cfg_.compressed_embed_dim));

    std::vector<LayerSpec> enc = {{LayerKind::from_rgb, 3, ch[input_level], 1}, LayerSpec::act(Activation::relu)};
    for (int l = input_level; l > 0; --l) {
        enc.push_back(LayerSpec::conv(4, ch[l - 1], 2));
        enc.push_back(LayerSpec::of(LayerKind::batch_norm));
        enc.push_back(LayerSpec::act(Activation::relu));
    }
    int c = 3;
    encoder_ = register_module("encoder", instantiate(enc, c, BuildContext{Normalization::batch, 0.0}));

    std::vector<LayerSpec> joint = {LayerSpec::conv(3, ch[0]), LayerSpec::of(LayerKind::batch_norm),
                                    LayerSpec::act(Activation::relu)};
    for (int r = 0; r < 3; ++r) joint.push_back({LayerKind::residual_block, 3, ch[0], 1, Activation::relu});
    c = ch[0] + cfg_.compressed_embed_dim;
    joint_ = register_module("joint", instantiate(joint, c, BuildContext{Normalization::batch, 0.0}));

    std::vector<LayerSpec> dec;
    for (int l = 1; l < levels; ++l) {
        dec.push_back(LayerSpec::of(LayerKind::upsample_nearest));
        dec.push_back(LayerSpec::conv(3, ch[l]));
        dec.push_back(LayerSpec::of(LayerKind::batch_norm));
        dec.push_back(LayerSpec::act(Activation::relu));
    }
    dec.push_back({LayerKind::to_rgb, 3, 3, 1});
    dec.push_back(LayerSpec::act(Activation::tanh));
    decoder_ = register_module("decoder", instantiate(dec, c, BuildContext{Normalization::batch, 0.0}));

    specs_ = enc;
    specs_.push_back(LayerSpec::of(LayerKind::embed_concat_depth, cfg_.compressed_embed_dim));
    specs_.insert(specs_.end(), joint.begin(), joint.end());
    specs_.insert(specs_.end(), dec.begin(), dec.end());

    // Initialise only the refiner; Stage-I keeps whatever weights it came with.
    initialize_weights(*ca_);
    initialize_weights(*encoder_);
    initialize_weights(*joint_);
    initialize_weights(*decoder_);
}

std::vector<torch::Tensor> RefinerGenerator::trainable_parameters() {
    std::vector<torch::Tensor> out;
    for (auto* m : {static_cast<torch::nn::Module*>(ca_.get()), static_cast<torch::nn::Module*>(encoder_.get()),
                    static_cast<torch::nn::Module*>(joint_.get()), static_cast<torch::nn::Module*>(decoder_.get())})
        for (auto& p : m->parameters()) out.push_back(p);
    return out;
}

GeneratorOutput RefinerGenerator::generate(const torch::Tensor& noise, const torch::Tensor& embedding,
                                           const torch::Tensor& epsilon) {
    check_generator_inputs(cfg_, noise, embedding);
    torch::Tensor low;
    {
        torch::NoGradGuard guard;
        const bool was_training = stage1_->is_training();
        stage1_->eval();
        low = stage1_->generate(noise, embedding, epsilon).images;
        stage1_->train(was_training);
    }
    return refine(low, embedding, epsilon);
}

GeneratorOutput RefinerGenerator::refine(const torch::Tensor& stage1_images, const torch::Tensor& embedding,
                                         const torch::Tensor& epsilon) {
    const int r1 = cfg_.max_resolution / 4;
    if (stage1_images.dim() != 4 || stage1_images.size(2) != r1 || stage1_images.size(3) != r1)
        throw InvalidArgument("Stage-II expects " + std::to_string(r1) + "x" + std::to_string(r1) + " input images");
    GeneratorOutput out;
    out.conditioning = condition(ca_, embedding, epsilon);
    auto h = encoder_->forward(stage1_images);
    h = concat_embedding_depth(h, out.conditioning->sample);
    h = joint_->forward(h);
    out.images = decoder_->forward(h);
    return out;
}

// ---------------------------------------------------------------------------
// ConvCritic

ConvCritic::ConvCritic(const ArchitectureConfig& cfg, LossFamily loss, Normalization norm)
    : CriticBase(cfg, loss, norm) {
    validate(cfg_);
    const auto ch = cfg_.channels();
    const int levels = cfg_.levels();
    compressor_ = register_module("compressor", EmbeddingCompressor(cfg_.embedding_dim, cfg_.compressed_embed_dim));

    std::vector<LayerSpec> feats;
    if (levels == 1) {
        feats = {{LayerKind::from_rgb, 3, ch[0], 1}, LayerSpec::act(Activation::leaky_relu)};
    } else {
        // The first down-sampling layer carries no normalisation.
        feats = {{LayerKind::from_rgb, 4, ch[levels - 2], 2}, LayerSpec::act(Activation::leaky_relu)};
        for (int l = levels - 2; l > 0; --l) {
            feats.push_back(LayerSpec::conv(4, ch[l - 1], 2));
            append_norm(feats, norm);
            feats.push_back(LayerSpec::act(Activation::leaky_relu));
        }
    }
    feats.push_back({LayerKind::residual_block, 3, ch[0], 1, Activation::leaky_relu});
    int c = 3;
    features_ = register_module("features", instantiate(feats, c, BuildContext{norm, 0.0}));

    std::vector<LayerSpec> joint = {LayerSpec::conv(3, ch[0])};
    append_norm(joint, norm);
    joint.push_back(LayerSpec::act(Activation::leaky_relu));
    if (loss != LossFamily::gan) {
        joint.push_back(LayerSpec::conv(3, ch[0]));
        joint.push_back(LayerSpec::act(Activation::leaky_relu));
    }
    joint.push_back(LayerSpec::conv(4, 1, 1));
    joint.push_back(LayerSpec::act(loss == LossFamily::gan ? Activation::sigmoid : Activation::linear));
    c = ch[0] + cfg_.compressed_embed_dim;
    joint_ = register_module("joint", instantiate(joint, c, BuildContext{norm, 0.0}));

    specs_ = feats;
    specs_.push_back(LayerSpec::of(LayerKind::embed_concat_depth, cfg_.compressed_embed_dim));
    specs_.insert(specs_.end(), joint.begin(), joint.end());
    initialize_weights(*this);
}

torch::Tensor ConvCritic::embed(const torch::Tensor& embedding) {
    if (embedding.dim() != 2 || embedding.size(1) != cfg_.embedding_dim)
        throw InvalidArgument("embedding must be B x " + std::to_string(cfg_.embedding_dim));
    return compressor_->forward(embedding);
}

torch::Tensor ConvCritic::score(const torch::Tensor& images, const torch::Tensor& compressed) {
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != cfg_.max_resolution ||
        images.size(3) != cfg_.max_resolution)
        throw InvalidArgument("critic expects B x 3 x " + std::to_string(cfg_.max_resolution) + " x " +
                              std::to_string(cfg_.max_resolution) + " images");
    auto h = features_->forward(images);
    h = concat_embedding_depth(h, compressed);
    return joint_->forward(h).view({images.size(0)});
}

// ---------------------------------------------------------------------------
// ProgressiveGenerator

ProgressiveGenerator::ProgressiveGenerator(const ArchitectureConfig& cfg) : GeneratorBase(cfg) {
    validate(cfg_);
    const auto ch = cfg_.channels();
    const int stages = cfg_.levels();
    ca_ = register_module("ca", ConditioningAugmentation(cfg_.embedding_dim, cfg_.compressed_embed_dim));
    projection_ = register_module("projection",
                                  torch::nn::Linear(cfg_.noise_dim + cfg_.compressed_embed_dim, ch[0] * 16));
    const BuildContext ctx{Normalization::layer, 0.0};
    for (int s = 1; s <= stages; ++s) {
        std::vector<LayerSpec> block;
        if (s > 1) block.push_back(LayerSpec::of(LayerKind::upsample_nearest));
        for (int k = 0; k < 2; ++k) {
            block.push_back(LayerSpec::conv(3, ch[s - 1]));
            block.push_back(LayerSpec::of(LayerKind::layer_norm));
            block.push_back(LayerSpec::act(Activation::relu));
        }
        int c = s == 1 ? ch[0] : ch[s - 2];
        blocks_.push_back(register_module("block" + std::to_string(s), instantiate(block, c, ctx)));
        to_rgb_.push_back(register_module("to_rgb" + std::to_string(s),
                                          torch::nn::Conv2d(torch::nn::Conv2dOptions(ch[s - 1], 3, 1))));
        block_specs_.push_back(std::move(block));
    }
    initialize_weights(*this);
}

int ProgressiveGenerator::output_resolution() const { return stage_resolution(stage_, cfg_.base_resolution); }

std::vector<LayerSpec> ProgressiveGenerator::layers() const {
    std::vector<LayerSpec> out = {LayerSpec::of(LayerKind::fully_connected, cfg_.channels()[0] * 16)};
    for (int s = 1; s <= stage_; ++s) out.insert(out.end(), block_specs_[s - 1].begin(), block_specs_[s - 1].end());
    out.push_back({LayerKind::to_rgb, 1, 3, 1});
    out.push_back(LayerSpec::act(Activation::tanh));
    return out;
}

void ProgressiveGenerator::set_growth(int stage, double alpha) {
    if (stage < 1 || stage > max_stage()) throw InvalidArgument("stage outside [1, " + std::to_string(max_stage()) + "]");
    if (!(alpha >= 0 && alpha <= 1)) throw InvalidArgument("fade weight outside [0, 1]");
    stage_ = stage;
    alpha_ = stage == 1 ? 1.0 : alpha;
}

std::vector<torch::Tensor> ProgressiveGenerator::stage_parameters(int stage) {
    std::vector<torch::Tensor> out;
    auto add = [&](torch::nn::Module& m) {
        for (auto& p : m.parameters()) out.push_back(p);
    };
    add(*ca_);
    add(*projection_);
    for (int s = 1; s <= stage; ++s) {
        add(*blocks_[s - 1]);
        add(*to_rgb_[s - 1]);
    }
    return out;
}

GeneratorOutput ProgressiveGenerator::generate(const torch::Tensor& noise, const torch::Tensor& embedding,
                                               const torch::Tensor& epsilon) {
    check_generator_inputs(cfg_, noise, embedding);
    GeneratorOutput out;
    out.conditioning = condition(ca_, embedding, epsilon);
    const auto ch0 = cfg_.channels()[0];
    auto x = projection_->forward(torch::cat({noise, out.conditioning->sample}, 1)).view({noise.size(0), ch0, 4, 4});
    torch::Tensor prev;
    for (int s = 1; s <= stage_; ++s) {
        prev = x;
        x = blocks_[s - 1]->forward(x);
        out.stage_outputs.push_back(torch::tanh(to_rgb_[s - 1]->forward(x)));
    }
    const auto& current = out.stage_outputs.back();
    if (stage_ == 1 || alpha_ == 1.0) {
        out.images = current;
    } else {
        const auto& previous = out.stage_outputs[stage_ - 2];
        out.images = blend_generator_output(previous, current, FadeWeight{alpha_});
    }
    return out;
}

// ---------------------------------------------------------------------------
// ProgressiveCritic

ProgressiveCritic::ProgressiveCritic(const ArchitectureConfig& cfg, LossFamily loss, Normalization norm)
    : CriticBase(cfg, loss, norm) {
    validate(cfg_);
    const auto ch = cfg_.channels();
    const int stages = cfg_.levels();
    const BuildContext ctx{norm, cfg_.noise_hack ? cfg_.noise_strength : 0.0};
    compressor_ = register_module("compressor", EmbeddingCompressor(cfg_.embedding_dim, cfg_.compressed_embed_dim));

    auto activation_then_noise = [&](std::vector<LayerSpec>& specs) {
        specs.push_back(LayerSpec::act(Activation::relu));
        if (cfg_.noise_hack) specs.push_back(LayerSpec::of(LayerKind::multiplicative_noise));
    };

    for (int s = 1; s <= stages; ++s) {
        std::vector<LayerSpec> rgb = {{LayerKind::from_rgb, 1, ch[s - 1], 1}};
        activation_then_noise(rgb);
        int c = 3;
        from_rgb_.push_back(register_module("from_rgb" + std::to_string(s), instantiate(rgb, c, ctx)));

        std::vector<LayerSpec> block;
        if (s > 1) {
            block.push_back(LayerSpec::conv(3, ch[s - 1]));
            append_norm(block, norm);
            activation_then_noise(block);
            block.push_back(LayerSpec::conv(3, ch[s - 2]));
            append_norm(block, norm);
            activation_then_noise(block);
            block.push_back(LayerSpec::of(LayerKind::downsample_average));
            c = ch[s - 1];
            blocks_.push_back(register_module("block" + std::to_string(s), instantiate(block, c, ctx)));
        } else {
            blocks_.push_back(nullptr);
        }
        block_specs_.push_back(std::move(block));
    }

    std::vector<LayerSpec> head = {LayerSpec::conv(3, ch[0])};
    append_norm(head, norm);
    activation_then_noise(head);
    head.push_back(LayerSpec::conv(4, ch[0], 1));
    head.push_back(LayerSpec::act(Activation::relu));
    head.push_back(LayerSpec::of(LayerKind::fully_connected, 1));
    head.push_back(LayerSpec::act(loss == LossFamily::gan ? Activation::sigmoid : Activation::linear));
    int c = ch[0] + cfg_.compressed_embed_dim;
    head_ = register_module("head", instantiate(head, c, ctx));
    block_specs_[0] = {LayerSpec::of(LayerKind::embed_concat_depth, cfg_.compressed_embed_dim)};
    block_specs_[0].insert(block_specs_[0].end(), head.begin(), head.end());
    initialize_weights(*this);
}

int ProgressiveCritic::input_resolution() const { return stage_resolution(stage_, cfg_.base_resolution); }

std::vector<LayerSpec> ProgressiveCritic::layers() const {
    std::vector<LayerSpec> out = {{LayerKind::from_rgb, 1, cfg_.channels()[stage_ - 1], 1}};
    for (int s = stage_; s >= 1; --s) out.insert(out.end(), block_specs_[s - 1].begin(), block_specs_[s - 1].end());
    return out;
}

void ProgressiveCritic::set_growth(int stage, double alpha) {
    if (stage < 1 || stage > max_stage()) throw InvalidArgument("stage outside [1, " + std::to_string(max_stage()) + "]");
    if (!(alpha >= 0 && alpha <= 1)) throw InvalidArgument("fade weight outside [0, 1]");
    stage_ = stage;
    alpha_ = stage == 1 ? 1.0 : alpha;
}

torch::Tensor ProgressiveCritic::embed(const torch::Tensor& embedding) {
    if (embedding.dim() != 2 || embedding.size(1) != cfg_.embedding_dim)
        throw InvalidArgument("embedding must be B x " + std::to_string(cfg_.embedding_dim));
    return compressor_->forward(embedding);
}

torch::Tensor ProgressiveCritic::from_rgb(int stage, const torch::Tensor& images) {
    return from_rgb_[stage - 1]->forward(images);
}

CriticInputBlend ProgressiveCritic::blend_input(const torch::Tensor& images, double alpha) {
    if (stage_ < 2) throw InvalidArgument("input blending needs stage >= 2");
    const int r = input_resolution();
    if (images.dim() != 4 || images.size(2) != r || images.size(3) != r)
        throw InvalidArgument("critic expects " + std::to_string(r) + "x" + std::to_string(r) + " images");
    CriticInputBlend out;
    out.alpha = alpha;
    out.full_resolution_path = blocks_[stage_ - 1]->forward(from_rgb(stage_, images));
    out.downscaled_path = from_rgb(stage_ - 1, downscale_average(images));
    out.blended = blend_critic_paths(out.full_resolution_path, out.downscaled_path, FadeWeight{alpha});
    return out;
}

torch::Tensor ProgressiveCritic::score_from_junction(const torch::Tensor& junction, const torch::Tensor& compressed) {
    auto h = junction;
    for (int s = stage_ - 1; s >= 2; --s) h = blocks_[s - 1]->forward(h);
    h = concat_embedding_depth(h, compressed);
    return head_->forward(h).view({junction.size(0)});
}

torch::Tensor ProgressiveCritic::score(const torch::Tensor& images, const torch::Tensor& compressed) {
    const int r = input_resolution();
    if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != r || images.size(3) != r)
        throw InvalidArgument("critic at stage " + std::to_string(stage_) + " expects " + std::to_string(r) + "x" +
                              std::to_string(r) + " images");
    if (stage_ == 1) return score_from_junction(from_rgb(1, images), compressed);
    torch::Tensor junction;
    if (alpha_ == 1.0)
        junction = blocks_[stage_ - 1]->forward(from_rgb(stage_, images));
    else
        junction = blend_input(images, alpha_).blended;
    return score_from_junction(junction, compressed);
}

std::vector<torch::Tensor> ProgressiveCritic::stage_parameters(int stage) {
    std::vector<torch::Tensor> out;
    auto add = [&](torch::nn::Module& m) {
        for (auto& p : m.parameters()) out.push_back(p);
    };
    add(*compressor_);
    add(*head_);
    for (int s = 1; s <= stage; ++s) {
        add(*from_rgb_[s - 1]);
        if (s > 1) add(*blocks_[s - 1]);
    }
    return out;
}

void ProgressiveCritic::reseed_noise(std::uint64_t seed) {
    std::uint64_t k = 0;
    for (auto& m : modules(/*include_self=*/false))
        if (auto* noise = m->as<MultiplicativeNoise>()) noise->reseed(seed + 7919 * ++k);
}

// ---------------------------------------------------------------------------
// Builders

std::shared_ptr<GeneratorBase> build_generator(const ArchitectureConfig& cfg) { return build_generator(cfg, nullptr); }

std::shared_ptr<GeneratorBase> build_generator(const ArchitectureConfig& cfg, std::shared_ptr<ConvGenerator> stage1) {
    validate(cfg);
    switch (cfg.family) {
        case Family::gan_cls:
        case Family::stackgan_stage1:
        case Family::wgan_cls: return std::make_shared<ConvGenerator>(cfg);
        case Family::stackgan_stage2:
            if (!stage1) stage1 = std::make_shared<ConvGenerator>(stage1_config(cfg));
            return std::make_shared<RefinerGenerator>(cfg, std::move(stage1));
        case Family::cpggan: return std::make_shared<ProgressiveGenerator>(cfg);
    }
    throw InvalidArgument("unknown family");
}

std::shared_ptr<CriticBase> build_discriminator(const ArchitectureConfig& cfg, LossFamily loss, bool gradient_penalty) {
    validate(cfg);
    const bool probability_family = cfg.family == Family::gan_cls || cfg.family == Family::stackgan_stage1 ||
                                    cfg.family == Family::stackgan_stage2;
    if (probability_family && loss != LossFamily::gan)
        throw InvalidConfig(to_string(cfg.family) + " requires the probability-head gan loss");
    if (cfg.family == Family::wgan_cls && loss != LossFamily::wasserstein)
        throw InvalidConfig("wgan-cls requires the wasserstein loss");
    if (cfg.family == Family::cpggan && loss == LossFamily::gan)
        throw InvalidConfig("cpggan supports the wasserstein and least-squares losses");

    Normalization norm = cfg.critic_normalization;
    if (norm == Normalization::batch && gradient_penalty)
        throw InvalidConfig("batch normalisation cannot be combined with a gradient penalty");
    if (norm == Normalization::automatic) {
        if (cfg.family == Family::cpggan)
            norm = loss == LossFamily::least_squares ? Normalization::layer : Normalization::none;
        else
            norm = gradient_penalty ? Normalization::none : Normalization::batch;
    }
    if (cfg.family == Family::cpggan) return std::make_shared<ProgressiveCritic>(cfg, loss, norm);
    return std::make_shared<ConvCritic>(cfg, loss, norm);
}

}  // namespace matchgan
