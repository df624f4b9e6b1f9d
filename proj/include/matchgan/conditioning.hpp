#pragma once

#include <string>

#include <torch/nn/module.h>
#include <torch/nn/modules/linear.h>
#include <torch/types.h>

#include "matchgan/random.hpp"

namespace matchgan {

inline constexpr double kLeakySlope = 0.2;

// Fully connected map followed by leaky ReLU (slope 0.2). `weight` is
// out x in, as in torch::nn::Linear. Works on a single vector or a batch.
torch::Tensor compress_embedding(const torch::Tensor& embedding, const torch::Tensor& weight, const torch::Tensor& bias);

struct EmbeddingCompressorImpl : torch::nn::Module {
    EmbeddingCompressorImpl(int in_dim, int out_dim);
    torch::Tensor forward(const torch::Tensor& embedding);

    torch::nn::Linear fc{nullptr};
};
TORCH_MODULE(EmbeddingCompressor);

// Reparametrised conditioning vector. `sample == mu + sigma * epsilon`
// holds exactly; epsilon never carries gradient.
struct AugmentedEmbedding {
    torch::Tensor sample;
    torch::Tensor mu;
    torch::Tensor sigma;
    torch::Tensor epsilon;
};

// Conditioning augmentation: two leaky-ReLU heads produce mu and a raw
// log-variance; sigma = exp(raw / 2).
struct ConditioningAugmentationImpl : torch::nn::Module {
    ConditioningAugmentationImpl(int embedding_dim, int compressed_dim);

    AugmentedEmbedding forward(const torch::Tensor& embedding, const torch::Tensor& epsilon);
    // Draws epsilon from `rng`.
    AugmentedEmbedding sample(const torch::Tensor& embedding, Rng& rng);
    // epsilon = 0, i.e. the conditioning mean.
    AugmentedEmbedding mean(const torch::Tensor& embedding);

    int compressed_dim() const { return compressed_dim_; }

    torch::nn::Linear mu_head{nullptr};
    torch::nn::Linear log_variance_head{nullptr};

private:
    int compressed_dim_;
};
TORCH_MODULE(ConditioningAugmentation);

AugmentedEmbedding augment_embedding(const torch::Tensor& embedding, ConditioningAugmentation& ca,
                                     const torch::Tensor& epsilon);

// Which way round the Gaussian KL is taken. `standard_to_embedding` is
// KL(N(0, I) || N(mu, diag sigma^2)); `embedding_to_standard` is the
// reverse, the usual VAE/StackGAN term.
enum class KlDirection { standard_to_embedding, embedding_to_standard };

std::string to_string(KlDirection direction);
KlDirection parse_kl_direction(const std::string& text);

// Closed-form diagonal Gaussian KL. For a vector input the coordinates are
// summed; for a B x N batch the per-row sums are averaged over rows.
//   standard_to_embedding: 1/2 sum(log sigma^2 + (1 + mu^2) / sigma^2 - 1)
//   embedding_to_standard: 1/2 sum(sigma^2 + mu^2 - 1 - log sigma^2)
torch::Tensor ca_kl_regularizer(const torch::Tensor& mu, const torch::Tensor& sigma,
                                KlDirection direction = KlDirection::standard_to_embedding);

}  // namespace matchgan
