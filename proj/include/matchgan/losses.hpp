#pragma once

#include <functional>

#include <torch/types.h>

namespace matchgan {

// Critic outputs on the three streams of a matching-aware batch.
struct CriticOutputs {
    torch::Tensor on_real_matched;
    torch::Tensor on_fake;
    torch::Tensor on_real_mismatched;
};

// -mean(log D(G(z))). Entries must lie in (0, 1).
torch::Tensor gan_generator_loss_nonsaturating(const torch::Tensor& on_fake);

// Matching-aware GAN discriminator loss:
//   -mean log D(x, e_mat) - 1/2 [mean log(1 - D(G, e)) + mean log(1 - D(x, e_mis))]
torch::Tensor gan_cls_discriminator_loss(const CriticOutputs& c);

// Matching-aware conditional Wasserstein critic loss:
//   mean D_fake + alpha mean D_mis - (1 + alpha) mean D_mat + lambda * penalty
// `penalty` may be a tensor carrying graph (from lipschitz_penalty_lp).
torch::Tensor wgan_cls_critic_loss(const CriticOutputs& c, double alpha, double lambda, const torch::Tensor& penalty);

// Unconditional critic loss mean D_fake - mean D_real + lambda * penalty.
torch::Tensor wgan_critic_loss(const torch::Tensor& on_real, const torch::Tensor& on_fake, double lambda,
                               const torch::Tensor& penalty);

// -mean D_fake + rho * kl_term.
torch::Tensor wgan_cls_generator_loss(const torch::Tensor& on_fake, const torch::Tensor& kl_term, double rho);

// One-sided penalty: mean over rows of max(0, |g_x| - 1)^2 + max(0, |g_e| - 1)^2.
torch::Tensor lipschitz_penalty_lp(const torch::Tensor& norms_x, const torch::Tensor& norms_e);

// Two-sided penalty: mean (|g| - 1)^2.
torch::Tensor gradient_penalty_gp(const torch::Tensor& norms);

// Row-wise t * fake + (1 - t) * real with one t per row, t in [0, 1].
torch::Tensor interpolate_real_fake(const torch::Tensor& real, const torch::Tensor& fake, const torch::Tensor& t);

struct LeastSquaresLosses {
    torch::Tensor critic;
    torch::Tensor generator;
};

// Least-squares losses with labels a (fake), b (real), cc (generator target).
// The conditional form also pushes mismatched real pairs toward a.
LeastSquaresLosses lsgan_losses(const CriticOutputs& c, double a, double b, double cc, bool conditional);

// Generator half of the least-squares objective: mean (D_fake - cc)^2.
torch::Tensor lsgan_generator_loss(const torch::Tensor& on_fake, double cc);

// Per-row Euclidean norms of the critic gradient with respect to its image
// and embedding inputs, evaluated at (x_hat, e). The graph is kept so the
// norms can be differentiated again. sqrt(sum g^2 + 1e-12).
struct GradientNorms {
    torch::Tensor image;
    torch::Tensor embedding;
};

using CriticFn = std::function<torch::Tensor(const torch::Tensor& images, const torch::Tensor& embeddings)>;

GradientNorms critic_gradient_norms(const CriticFn& critic, const torch::Tensor& x_hat, const torch::Tensor& embeddings);

// Per-row gradient norm of `outputs.sum()` with respect to `inputs`.
torch::Tensor row_gradient_norms(const torch::Tensor& outputs, const torch::Tensor& inputs);

inline constexpr double kNormEpsilon = 1e-12;

}  // namespace matchgan
