#include "matchgan/conditioning.hpp"

#include <cmath>

#include <torch/torch.h>

#include "matchgan/errors.hpp"

namespace matchgan {

namespace {

void init_linear(torch::nn::Linear& fc) {
    torch::NoGradGuard guard;
    const double fan_in = static_cast<double>(fc->weight.size(1));
    fc->weight.normal_(0.0, 1.0 / std::sqrt(fan_in));
    fc->bias.zero_();
}

}  // namespace

torch::Tensor compress_embedding(const torch::Tensor& embedding, const torch::Tensor& weight, const torch::Tensor& bias) {
    if (weight.dim() != 2 || bias.dim() != 1 || bias.size(0) != weight.size(0))
        throw InvalidArgument("compression weights must be out x in with a matching bias");
    if (embedding.dim() < 1 || embedding.size(-1) != weight.size(1))
        throw InvalidArgument("embedding dimension " + std::to_string(embedding.size(-1)) +
                              " does not match compression input " + std::to_string(weight.size(1)));
    return torch::leaky_relu(torch::nn::functional::linear(embedding, weight, bias), kLeakySlope);
}

EmbeddingCompressorImpl::EmbeddingCompressorImpl(int in_dim, int out_dim) {
    fc = register_module("fc", torch::nn::Linear(in_dim, out_dim));
    init_linear(fc);
}

torch::Tensor EmbeddingCompressorImpl::forward(const torch::Tensor& embedding) {
    return compress_embedding(embedding, fc->weight, fc->bias);
}

ConditioningAugmentationImpl::ConditioningAugmentationImpl(int embedding_dim, int compressed_dim)
    : compressed_dim_(compressed_dim) {
    mu_head = register_module("mu_head", torch::nn::Linear(embedding_dim, compressed_dim));
    log_variance_head = register_module("log_variance_head", torch::nn::Linear(embedding_dim, compressed_dim));
    init_linear(mu_head);
    init_linear(log_variance_head);
    // Start near sigma = 1 rather than at a random scale.
    torch::NoGradGuard guard;
    log_variance_head->weight.mul_(0.1);
}

AugmentedEmbedding ConditioningAugmentationImpl::forward(const torch::Tensor& embedding, const torch::Tensor& epsilon) {
    if (!torch::isfinite(epsilon).all().item<bool>()) throw InvalidArgument("epsilon has non-finite entries");
    AugmentedEmbedding out;
    out.mu = compress_embedding(embedding, mu_head->weight, mu_head->bias);
    const auto raw = compress_embedding(embedding, log_variance_head->weight, log_variance_head->bias);
    out.sigma = torch::exp(0.5 * raw);
    if (epsilon.sizes() != out.mu.sizes())
        throw InvalidArgument("epsilon shape does not match the compressed embedding");
    out.epsilon = epsilon.detach().to(out.mu.dtype());
    out.sample = out.mu + out.sigma * out.epsilon;
    return out;
}

AugmentedEmbedding ConditioningAugmentationImpl::sample(const torch::Tensor& embedding, Rng& rng) {
    const auto rows = embedding.dim() == 1 ? 1 : embedding.size(0);
    auto eps = torch::empty({rows, compressed_dim_}, torch::kFloat32);
    auto acc = eps.accessor<float, 2>();
    for (std::int64_t i = 0; i < rows; ++i)
        for (int j = 0; j < compressed_dim_; ++j) acc[i][j] = static_cast<float>(rng.normal());
    if (embedding.dim() == 1) eps = eps.squeeze(0);
    return forward(embedding, eps.to(embedding.dtype()));
}

AugmentedEmbedding ConditioningAugmentationImpl::mean(const torch::Tensor& embedding) {
    auto shape = embedding.sizes().vec();
    shape.back() = compressed_dim_;
    return forward(embedding, torch::zeros(shape, embedding.options().requires_grad(false)));
}

AugmentedEmbedding augment_embedding(const torch::Tensor& embedding, ConditioningAugmentation& ca,
                                     const torch::Tensor& epsilon) {
    return ca->forward(embedding, epsilon);
}

std::string to_string(KlDirection direction) {
    return direction == KlDirection::standard_to_embedding ? "standard_to_embedding" : "embedding_to_standard";
}

KlDirection parse_kl_direction(const std::string& text) {
    if (text == "standard_to_embedding") return KlDirection::standard_to_embedding;
    if (text == "embedding_to_standard") return KlDirection::embedding_to_standard;
    throw InvalidArgument("unknown kl_direction '" + text + "'");
}

torch::Tensor ca_kl_regularizer(const torch::Tensor& mu, const torch::Tensor& sigma, KlDirection direction) {
    if (mu.sizes() != sigma.sizes()) throw InvalidArgument("mu and sigma shapes differ");
    if (mu.dim() < 1 || mu.dim() > 2) throw InvalidArgument("KL expects a vector or a batch of vectors");
    if (!(sigma > 0).all().item<bool>()) throw InvalidArgument("sigma must be strictly positive");
    const auto var = sigma * sigma;
    const auto log_var = 2.0 * torch::log(sigma);
    torch::Tensor terms;
    if (direction == KlDirection::standard_to_embedding)
        terms = log_var + (1.0 + mu * mu) / var - 1.0;
    else
        terms = var + mu * mu - 1.0 - log_var;
    const auto per_row = 0.5 * terms.sum(-1);
    return mu.dim() == 1 ? per_row : per_row.mean();
}

}  // namespace matchgan
