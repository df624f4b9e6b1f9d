#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <torch/optim/adam.h>

#include "matchgan/checkpoint.hpp"
#include "matchgan/config.hpp"
#include "matchgan/data.hpp"
#include "matchgan/networks.hpp"
#include "matchgan/progressive.hpp"
#include "matchgan/random.hpp"

namespace matchgan {

struct Models {
    std::shared_ptr<GeneratorBase> generator;
    std::shared_ptr<CriticBase> critic;
    std::unique_ptr<torch::optim::Adam> generator_optimizer;
    std::unique_ptr<torch::optim::Adam> critic_optimizer;
    std::int64_t step = 0;
    std::int64_t critic_updates = 0;
    std::int64_t generator_updates = 0;
};

// Builds generator, critic and their Adam optimisers from `cfg`. For
// stackgan-stage2 a trained Stage-I generator may be supplied; its
// parameters are frozen. Progressive models start at stage 1.
Models build_models(const ExperimentConfig& cfg, std::shared_ptr<ConvGenerator> stage1 = nullptr);

void set_learning_rates(Models& models, double generator_lr, double critic_lr);

struct StepMetrics {
    std::int64_t step = 0;
    int resolution = 0;
    int batch_size = 0;
    double alpha = 1.0;
    double learning_rate_generator = 0;
    double learning_rate_critic = 0;
    int critic_updates = 0;
    int generator_updates = 0;

    double critic_loss = 0;
    double critic_adversarial = 0;
    double penalty = 0;
    double generator_loss = 0;
    double generator_adversarial = 0;
    double kl = 0;

    double d_matched = 0;
    double d_mismatched = 0;
    double d_fake = 0;
    // mean D(x, e_mat) - mean D(x, e_mis)
    double matching_gap = 0;
    // mean D(x, e_mat) - mean D(G(z), e_mat)
    double wasserstein_estimate = 0;

    // Mean critic input-gradient norms at the interpolates (penalty losses only).
    double grad_norm_image = 0;
    double grad_norm_embedding = 0;
    double critic_param_grad_norm = 0;
    double generator_param_grad_norm = 0;
};

// n_critic critic updates, one per batch, then one generator update that
// reuses the last batch's embeddings and noise. `batches.size()` must equal
// cfg.n_critic. Throws TrainingDiverged when a loss is non-finite.
StepMetrics train_step(Models& models, std::span<const MatchingBatch> batches, const ExperimentConfig& cfg, Rng& rng);

struct TrainResult {
    std::int64_t steps = 0;
    std::filesystem::path output_dir;
    std::vector<std::filesystem::path> checkpoints;
    StepMetrics last;
};

// Runs the configured schedule and writes into cfg.output_dir:
//   config.ini       resolved configuration
//   provenance.json  seed, versions, dataset summary
//   metrics.jsonl    one record per step (deterministic given the seed)
//   timing.jsonl     wall-clock seconds per step
//   checkpoints/     step_NNNNNNN.ckpt and final.ckpt
TrainResult train(const ExperimentConfig& cfg);

// Number of optimisation steps `cfg` asks for on a dataset of `dataset_size`
// images (epochs are converted with ceil(epochs * size / batch)).
std::int64_t planned_steps(const ExperimentConfig& cfg, std::size_t dataset_size);

// Steps between learning-rate halvings, 0 for none.
std::int64_t halving_period_steps(const ExperimentConfig& cfg, std::size_t dataset_size);

// Learning-rate multiplier in effect at (0-based) `step`.
double learning_rate_factor(std::int64_t step, std::int64_t halving_period);

// Generator (and its growth state) from a training checkpoint.
std::shared_ptr<GeneratorBase> load_generator(const std::filesystem::path& path);

// Dataset described by the data section (manifest or synthetic), training
// and test splits.
std::pair<Dataset, Dataset> load_training_data(const ExperimentConfig& cfg);

}  // namespace matchgan
