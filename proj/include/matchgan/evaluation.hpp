#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <torch/nn/module.h>
#include <torch/nn/modules/container/sequential.h>
#include <torch/nn/modules/linear.h>
#include <torch/types.h>

#include "matchgan/config.hpp"
#include "matchgan/data.hpp"
#include "matchgan/networks.hpp"
#include "matchgan/random.hpp"

namespace matchgan {

// N x C class posteriors. Rows must be nonnegative and sum to 1 (1e-6).
void validate_probabilities(const torch::Tensor& probs);

struct InceptionScoreReport {
    double mean = 1.0;
    // Population standard deviation over splits.
    double std = 0.0;
    std::vector<double> per_split;
};

// Rows are shuffled with `rng` and cut into n_splits equal sets; each split
// scores exp(mean_i KL(p_i || split marginal)) in nats.
InceptionScoreReport inception_score(const torch::Tensor& probs, int n_splits, Rng& rng);

// Small convolutional classifier standing in for the Inception network.
struct ToyClassifierImpl : torch::nn::Module {
    ToyClassifierImpl(int num_classes, int width = 16);
    // Logits for N x 3 x H x W images (any H = W >= 4).
    torch::Tensor forward(const torch::Tensor& images);
    torch::Tensor probabilities(const torch::Tensor& images);

    torch::nn::Sequential features{nullptr};
    torch::nn::Linear head{nullptr};
};
TORCH_MODULE(ToyClassifier);

struct TrainedClassifier {
    ToyClassifier model{nullptr};
    // Dataset class id for each output column.
    std::vector<int> class_ids;
    int resolution = 0;
    double held_out_accuracy = 0.0;
    // False when accuracy fell below kClassifierAccuracyThreshold.
    bool reliable = false;

    // Resamples to the training resolution when needed.
    torch::Tensor probabilities(const torch::Tensor& images);
};

inline constexpr double kClassifierAccuracyThreshold = 0.9;

// Holds out every fifth image of each class, trains on the rest and reports
// held-out accuracy.
TrainedClassifier train_eval_classifier(const Dataset& dataset, int epochs, Rng& rng);

// G(z, (1 - t) e1 + t e2) for t = k / (steps - 1), k = 0..steps-1, with the
// conditioning mean. `noise` is 1 x Nz, embeddings 1 x N_phi.
torch::Tensor interpolation_sweep(GeneratorBase& generator, const torch::Tensor& noise, const torch::Tensor& e1,
                                  const torch::Tensor& e2, int steps);

struct NeighborMatch {
    std::size_t index = 0;
    double distance = 0.0;
};

// Euclidean pixel distance; ties go to the lowest training index.
std::vector<NeighborMatch> nearest_neighbor_analysis(const torch::Tensor& samples, const torch::Tensor& train_images);

struct ReferenceScore {
    const char* dataset;
    const char* model;
    int resolution;
    double mean;
    double std;
};

// Published full-scale scores, kept for documentation only.
inline constexpr std::array<ReferenceScore, 3> kReferenceScores{{
    {"flowers", "CWPGGAN", 64, 3.70, 0.03},
    {"flowers", "CWPGGAN", 256, 3.86, 0.02},
    {"birds", "CWPGGAN", 256, 4.09, 0.03},
}};

struct EvaluationReport {
    InceptionScoreReport score;
    int samples = 0;
    int n_splits = 0;
    double classifier_accuracy = 0.0;
    bool classifier_reliable = false;
    std::string conditioning;
};

// Generates cfg.evaluation.samples images conditioned on captions drawn from
// `dataset`, classifies them and scores the result.
EvaluationReport evaluate_generator(GeneratorBase& generator, const Dataset& dataset, const EvaluationConfig& cfg,
                                    Rng& rng);

std::string format_report(const EvaluationReport& report);

}  // namespace matchgan
