#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "matchgan/conditioning.hpp"
#include "matchgan/networks.hpp"
#include "matchgan/progressive.hpp"

namespace matchgan {

enum class LossKind { gan, wasserstein_lp, wasserstein_gp, least_squares };

std::string to_string(LossKind kind);
LossKind parse_loss_kind(const std::string& text);
LossFamily loss_family(LossKind kind);
inline bool has_gradient_penalty(LossKind k) { return k == LossKind::wasserstein_lp || k == LossKind::wasserstein_gp; }

struct LossConfig {
    LossKind kind = LossKind::gan;
    double alpha_match = 1.0;
    double lambda_lp = 150.0;
    double lambda_gp = 10.0;
    double rho_kl = 0.0;
    KlDirection kl_direction = KlDirection::standard_to_embedding;
    double ls_a = -1.0;
    double ls_b = 1.0;
    double ls_c = 0.0;
};

struct OptimizerConfig {
    double learning_rate_generator = 2e-4;
    double learning_rate_critic = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.9;
};

struct DataConfig {
    // Either a manifest path or the synthetic generator is used.
    std::filesystem::path manifest;
    int synthetic_classes = 4;
    int synthetic_images_per_class = 64;
    int synthetic_embedding_dim = 16;
    int synthetic_test_classes = 0;
    int image_size = 16;
    bool augment = false;
};

struct ProgressiveConfig {
    std::int64_t images_per_phase = 20000;
    BatchSchedule batches;
};

enum class EvalConditioning { mean, sample };

struct EvaluationConfig {
    int samples = 5000;
    int n_splits = 10;
    int classifier_epochs = 8;
    EvalConditioning conditioning = EvalConditioning::mean;
};

struct ExperimentConfig {
    Family family = Family::gan_cls;
    ArchitectureConfig architecture;
    LossConfig loss;
    OptimizerConfig optimizer;
    int n_critic = 1;
    int batch_size = 64;
    std::int64_t total_steps = 0;
    double epochs = 0.0;
    std::int64_t lr_halving_period = 0;
    double lr_halving_epochs = 0.0;
    std::uint64_t seed = 0;
    std::int64_t checkpoint_every = 500;
    std::filesystem::path output_dir = "runs/default";
    std::filesystem::path stage1_checkpoint;
    DataConfig data;
    ProgressiveConfig progressive;
    EvaluationConfig evaluation;
    // "section.key=value" overrides in the order they were applied.
    std::vector<std::string> applied_overrides;
};

// Paper hyperparameters for each family (learning rates, betas, alpha,
// lambda, rho, batch size, schedule length).
ExperimentConfig defaults_for(Family family);

// Family/loss pairing and value ranges. Throws InvalidConfig.
void validate(const ExperimentConfig& cfg);

// Parses INI-style text (sections [experiment], [data], [model], [loss],
// [optimizer], [progressive], [evaluation]). `family` in [experiment]
// selects the defaults the remaining keys override. Overrides use
// "section.key=value" and are applied after the file. Unknown keys are
// reported together in one InvalidConfig. The result is validated.
ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

// Fully resolved configuration in the same INI format.
std::string to_ini(const ExperimentConfig& cfg);

}  // namespace matchgan
