#include "matchgan/losses.hpp"

#include <torch/torch.h>

#include "matchgan/errors.hpp"

namespace matchgan {

namespace {

void require_probabilities(const torch::Tensor& t, const char* what) {
    if (!t.defined() || t.numel() == 0) throw InvalidArgument(std::string(what) + " is empty");
    if (!((t > 0) & (t < 1)).all().item<bool>())
        throw InvalidArgument(std::string(what) + " must lie strictly inside (0, 1)");
}

void require_nonnegative(const torch::Tensor& t, const char* what) {
    if (!t.defined() || t.numel() == 0) throw InvalidArgument(std::string(what) + " is empty");
    if (!(t >= 0).all().item<bool>()) throw InvalidArgument(std::string(what) + " must be nonnegative");
}

void require_same_length(const CriticOutputs& c) {
    const auto n = c.on_real_matched.numel();
    if (c.on_fake.numel() != n || c.on_real_mismatched.numel() != n)
        throw InvalidArgument("critic output streams differ in length");
}

}  // namespace

torch::Tensor gan_generator_loss_nonsaturating(const torch::Tensor& on_fake) {
    require_probabilities(on_fake, "on_fake");
    return -torch::log(on_fake).mean();
}

torch::Tensor gan_cls_discriminator_loss(const CriticOutputs& c) {
    require_same_length(c);
    require_probabilities(c.on_real_matched, "on_real_matched");
    require_probabilities(c.on_fake, "on_fake");
    require_probabilities(c.on_real_mismatched, "on_real_mismatched");
    return -torch::log(c.on_real_matched).mean() -
           0.5 * (torch::log1p(-c.on_fake).mean() + torch::log1p(-c.on_real_mismatched).mean());
}

torch::Tensor wgan_cls_critic_loss(const CriticOutputs& c, double alpha, double lambda, const torch::Tensor& penalty) {
    if (alpha < 0 || lambda < 0) throw InvalidArgument("alpha and lambda must be nonnegative");
    require_same_length(c);
    auto loss = c.on_fake.mean() + alpha * c.on_real_mismatched.mean() - (1.0 + alpha) * c.on_real_matched.mean();
    if (penalty.defined()) loss = loss + lambda * penalty;
    return loss;
}

torch::Tensor wgan_critic_loss(const torch::Tensor& on_real, const torch::Tensor& on_fake, double lambda,
                               const torch::Tensor& penalty) {
    if (lambda < 0) throw InvalidArgument("lambda must be nonnegative");
    auto loss = on_fake.mean() - on_real.mean();
    if (penalty.defined()) loss = loss + lambda * penalty;
    return loss;
}

torch::Tensor wgan_cls_generator_loss(const torch::Tensor& on_fake, const torch::Tensor& kl_term, double rho) {
    if (kl_term.defined() && kl_term.item<double>() < 0) throw InvalidArgument("kl_term must be nonnegative");
    auto loss = -on_fake.mean();
    if (kl_term.defined() && rho != 0.0) loss = loss + rho * kl_term;
    return loss;
}

torch::Tensor lipschitz_penalty_lp(const torch::Tensor& norms_x, const torch::Tensor& norms_e) {
    require_nonnegative(norms_x, "norms_x");
    require_nonnegative(norms_e, "norms_e");
    if (norms_x.numel() != norms_e.numel()) throw InvalidArgument("norm vectors differ in length");
    const auto excess_x = torch::clamp_min(norms_x - 1.0, 0.0);
    const auto excess_e = torch::clamp_min(norms_e - 1.0, 0.0);
    return (excess_x * excess_x + excess_e * excess_e).mean();
}

torch::Tensor gradient_penalty_gp(const torch::Tensor& norms) {
    require_nonnegative(norms, "norms");
    return (norms - 1.0).pow(2).mean();
}

torch::Tensor interpolate_real_fake(const torch::Tensor& real, const torch::Tensor& fake, const torch::Tensor& t) {
    if (real.sizes() != fake.sizes()) throw InvalidArgument("real and fake shapes differ");
    if (t.dim() != 1 || t.size(0) != real.size(0)) throw InvalidArgument("need exactly one t per batch row");
    if (!((t >= 0) & (t <= 1)).all().item<bool>()) throw InvalidArgument("t must lie in [0, 1]");
    std::vector<std::int64_t> shape(static_cast<std::size_t>(real.dim()), 1);
    shape[0] = real.size(0);
    const auto tt = t.to(real.dtype()).view(shape);
    return tt * fake + (1.0 - tt) * real;
}

LeastSquaresLosses lsgan_losses(const CriticOutputs& c, double a, double b, double cc, bool conditional) {
    LeastSquaresLosses out;
    out.critic = (c.on_real_matched - b).pow(2).mean() + (c.on_fake - a).pow(2).mean();
    if (conditional) {
        require_same_length(c);
        out.critic = out.critic + (c.on_real_mismatched - a).pow(2).mean();
    }
    out.generator = lsgan_generator_loss(c.on_fake, cc);
    return out;
}

torch::Tensor lsgan_generator_loss(const torch::Tensor& on_fake, double cc) { return (on_fake - cc).pow(2).mean(); }

torch::Tensor row_gradient_norms(const torch::Tensor& outputs, const torch::Tensor& inputs) {
    const auto grads = torch::autograd::grad({outputs.sum()}, {inputs}, {}, /*retain_graph=*/true,
                                             /*create_graph=*/true, /*allow_unused=*/true);
    const auto g = grads[0].defined() ? grads[0] : torch::zeros_like(inputs);
    return torch::sqrt(g.flatten(1).pow(2).sum(1) + kNormEpsilon);
}

GradientNorms critic_gradient_norms(const CriticFn& critic, const torch::Tensor& x_hat, const torch::Tensor& embeddings) {
    auto x = x_hat.requires_grad() ? x_hat : x_hat.detach().requires_grad_(true);
    auto e = embeddings.requires_grad() ? embeddings : embeddings.detach().requires_grad_(true);
    const auto out = critic(x, e);
    const auto grads = torch::autograd::grad({out.sum()}, {x, e}, {}, true, true, true);
    GradientNorms norms;
    const auto gx = grads[0].defined() ? grads[0] : torch::zeros_like(x);
    const auto ge = grads[1].defined() ? grads[1] : torch::zeros_like(e);
    norms.image = torch::sqrt(gx.flatten(1).pow(2).sum(1) + kNormEpsilon);
    norms.embedding = torch::sqrt(ge.flatten(1).pow(2).sum(1) + kNormEpsilon);
    return norms;
}

}  // namespace matchgan
