#include "matchgan/evaluation.hpp"

#include <cmath>
#include <numeric>

#include <torch/torch.h>

#include <json.hpp>

#include "matchgan/errors.hpp"

namespace matchgan {

void validate_probabilities(const torch::Tensor& probs) {
    if (!probs.defined() || probs.dim() != 2 || probs.size(0) == 0 || probs.size(1) == 0)
        throw InvalidArgument("class probabilities must be a non-empty N x C matrix");
    const auto p = probs.to(torch::kFloat64);
    if (!torch::isfinite(p).all().item<bool>() || (p < 0).any().item<bool>())
        throw InvalidArgument("class probabilities must be finite and nonnegative");
    if (((p.sum(1) - 1.0).abs() > 1e-6).any().item<bool>()) throw InvalidArgument("probability rows must sum to 1");
}

InceptionScoreReport inception_score(const torch::Tensor& probs, int n_splits, Rng& rng) {
    validate_probabilities(probs);
    const auto n = probs.size(0);
    if (n_splits < 1 || n % n_splits != 0)
        throw InvalidArgument(std::to_string(n) + " rows cannot be split into " + std::to_string(n_splits) + " equal sets");
    const auto p = probs.to(torch::kFloat64).contiguous();
    const auto c = p.size(1);
    const auto* data = p.data_ptr<double>();

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    InceptionScoreReport report;
    const auto per = n / n_splits;
    for (int s = 0; s < n_splits; ++s) {
        std::vector<double> marginal(static_cast<std::size_t>(c), 0.0);
        for (std::int64_t r = 0; r < per; ++r) {
            const double* row = data + order[static_cast<std::size_t>(s * per + r)] * c;
            for (std::int64_t j = 0; j < c; ++j) marginal[j] += row[j];
        }
        for (auto& m : marginal) m /= static_cast<double>(per);
        double kl = 0.0;
        for (std::int64_t r = 0; r < per; ++r) {
            const double* row = data + order[static_cast<std::size_t>(s * per + r)] * c;
            for (std::int64_t j = 0; j < c; ++j)
                if (row[j] > 0) kl += row[j] * (std::log(row[j]) - std::log(marginal[j]));
        }
        report.per_split.push_back(std::exp(kl / static_cast<double>(per)));
    }
    const double k = static_cast<double>(n_splits);
    report.mean = std::accumulate(report.per_split.begin(), report.per_split.end(), 0.0) / k;
    double var = 0.0;
    for (double v : report.per_split) var += (v - report.mean) * (v - report.mean);
    report.std = std::sqrt(var / k);
    return report;
}

// ---------------------------------------------------------------------------

ToyClassifierImpl::ToyClassifierImpl(int num_classes, int width) {
    namespace nn = torch::nn;
    features = register_module(
        "features",
        nn::Sequential(nn::Conv2d(nn::Conv2dOptions(3, width, 3).padding(1)), nn::ReLU(),
                       nn::Conv2d(nn::Conv2dOptions(width, width, 3).padding(1)), nn::ReLU(),
                       nn::AvgPool2d(nn::AvgPool2dOptions(2)),
                       nn::Conv2d(nn::Conv2dOptions(width, 2 * width, 3).padding(1)), nn::ReLU(),
                       nn::AdaptiveAvgPool2d(nn::AdaptiveAvgPool2dOptions(1))));
    head = register_module("head", nn::Linear(2 * width, num_classes));
}

torch::Tensor ToyClassifierImpl::forward(const torch::Tensor& images) {
    return head->forward(features->forward(images).flatten(1));
}

torch::Tensor ToyClassifierImpl::probabilities(const torch::Tensor& images) {
    return torch::softmax(forward(images), 1);
}

torch::Tensor TrainedClassifier::probabilities(const torch::Tensor& images) {
    auto x = images;
    while (x.size(2) > resolution) x = downscale_average(x);
    while (x.size(2) < resolution) x = upscale_nearest(x);
    torch::NoGradGuard guard;
    model->eval();
    return model->probabilities(x);
}

TrainedClassifier train_eval_classifier(const Dataset& dataset, int epochs, Rng& rng) {
    if (dataset.class_ids().size() < 2) throw InvalidArgument("classifier needs at least two classes");
    if (epochs < 1) throw InvalidArgument("classifier epochs must be positive");
    TrainedClassifier out;
    out.class_ids = dataset.class_ids();
    out.resolution = dataset.image_size();

    std::vector<CaptionedImage> train_images, held_images;
    std::vector<std::int64_t> train_labels, held_labels;
    for (std::size_t k = 0; k < out.class_ids.size(); ++k) {
        const auto& idx = dataset.indices_of_class(out.class_ids[k]);
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const bool hold = i % 5 == 4;
            (hold ? held_images : train_images).push_back(dataset.images()[idx[i]]);
            (hold ? held_labels : train_labels).push_back(static_cast<std::int64_t>(k));
        }
    }
    if (held_images.empty() || train_images.empty()) throw InvalidArgument("classifier needs at least 5 images per class");

    torch::manual_seed(rng.next_u64());
    out.model = ToyClassifier(static_cast<int>(out.class_ids.size()));
    torch::optim::Adam opt(out.model->parameters(), torch::optim::AdamOptions(1e-3));
    const auto x = to_tensor(train_images);
    const auto y = torch::tensor(train_labels, torch::kInt64);
    const std::int64_t n = x.size(0);
    const std::int64_t batch = 32;

    out.model->train();
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (int e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), 0);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        for (std::int64_t b = 0; b < n; b += batch) {
            const auto idx = torch::tensor(std::vector<std::int64_t>(order.begin() + b, order.begin() + std::min(n, b + batch)));
            // Random flips keep the classifier from keying on orientation.
            auto xb = x.index_select(0, idx);
            if (rng.uniform() < 0.5) xb = xb.flip({3});
            opt.zero_grad();
            const auto loss = torch::nn::functional::cross_entropy(out.model->forward(xb), y.index_select(0, idx));
            loss.backward();
            opt.step();
        }
    }

    const auto probs = out.probabilities(to_tensor(held_images));
    const auto predicted = probs.argmax(1);
    out.held_out_accuracy = predicted.eq(torch::tensor(held_labels, torch::kInt64)).to(torch::kFloat64).mean().item<double>();
    out.reliable = out.held_out_accuracy >= kClassifierAccuracyThreshold;
    return out;
}

// ---------------------------------------------------------------------------

torch::Tensor interpolation_sweep(GeneratorBase& generator, const torch::Tensor& noise, const torch::Tensor& e1,
                                  const torch::Tensor& e2, int steps) {
    if (steps < 2) throw InvalidArgument("interpolation needs at least 2 steps");
    if (noise.dim() != 2 || noise.size(0) != 1) throw InvalidArgument("noise must be 1 x Nz");
    if (e1.sizes() != e2.sizes() || e1.dim() != 2 || e1.size(0) != 1)
        throw InvalidArgument("endpoint embeddings must both be 1 x N");
    std::vector<torch::Tensor> rows;
    for (int k = 0; k < steps; ++k) {
        const double t = static_cast<double>(k) / (steps - 1);
        // Exact endpoints rather than 1 * e + 0 * e'.
        rows.push_back(k == 0 ? e1 : k == steps - 1 ? e2 : (1.0 - t) * e1 + t * e2);
    }
    const auto embeddings = torch::cat(rows, 0);
    torch::NoGradGuard guard;
    const bool was_training = generator.is_training();
    generator.eval();
    auto images = generator.generate(noise.expand({steps, noise.size(1)}).contiguous(), embeddings, {}).images;
    generator.train(was_training);
    return images;
}

std::vector<NeighborMatch> nearest_neighbor_analysis(const torch::Tensor& samples, const torch::Tensor& train_images) {
    if (!train_images.defined() || train_images.size(0) == 0) throw InvalidArgument("training set is empty");
    if (samples.dim() != 4 || train_images.dim() != 4 || samples.sizes().slice(1) != train_images.sizes().slice(1))
        throw InvalidArgument("samples and training images differ in shape");
    const auto s = samples.to(torch::kFloat64).flatten(1).contiguous();
    const auto t = train_images.to(torch::kFloat64).flatten(1).contiguous();
    const auto dim = s.size(1);
    const auto* sp = s.data_ptr<double>();
    const auto* tp = t.data_ptr<double>();
    std::vector<NeighborMatch> out(static_cast<std::size_t>(s.size(0)));
    for (std::int64_t i = 0; i < s.size(0); ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_j = 0;
        for (std::int64_t j = 0; j < t.size(0); ++j) {
            double d = 0.0;
            for (std::int64_t k = 0; k < dim; ++k) {
                const double diff = sp[i * dim + k] - tp[j * dim + k];
                d += diff * diff;
            }
            if (d < best) {
                best = d;
                best_j = static_cast<std::size_t>(j);
            }
        }
        out[static_cast<std::size_t>(i)] = {best_j, std::sqrt(best)};
    }
    return out;
}

// ---------------------------------------------------------------------------

EvaluationReport evaluate_generator(GeneratorBase& generator, const Dataset& dataset, const EvaluationConfig& cfg,
                                    Rng& rng) {
    if (cfg.samples < 1 || cfg.n_splits < 1 || cfg.samples % cfg.n_splits != 0)
        throw InvalidArgument("samples must be a positive multiple of n_splits");
    auto classifier = train_eval_classifier(dataset, cfg.classifier_epochs, rng);

    const bool sample_ca = cfg.conditioning == EvalConditioning::sample && generator.uses_conditioning_augmentation();
    const int nz = generator.config().noise_dim;
    const int nc = generator.config().compressed_embed_dim;
    std::vector<torch::Tensor> probs;
    torch::NoGradGuard guard;
    generator.eval();
    for (int done = 0; done < cfg.samples;) {
        const int b = std::min(100, cfg.samples - done);
        std::vector<torch::Tensor> emb;
        for (int i = 0; i < b; ++i) {
            const auto& img = dataset.images()[rng.index(dataset.size())];
            const auto& cap = img.embeddings[rng.index(img.embeddings.size())];
            emb.push_back(torch::tensor(cap).unsqueeze(0));
        }
        const auto noise = normal_noise(b, nz, rng);
        const auto eps = sample_ca ? normal_noise(b, nc, rng) : torch::Tensor{};
        const auto images = generator.generate(noise, torch::cat(emb, 0), eps).images;
        probs.push_back(classifier.probabilities(images).to(torch::kFloat64));
        done += b;
    }
    EvaluationReport r;
    // Renormalise in double so float32 softmax rounding passes validation.
    auto p = torch::cat(probs, 0);
    p = p / p.sum(1, true);
    r.score = inception_score(p, cfg.n_splits, rng);
    r.samples = cfg.samples;
    r.n_splits = cfg.n_splits;
    r.classifier_accuracy = classifier.held_out_accuracy;
    r.classifier_reliable = classifier.reliable;
    r.conditioning = sample_ca ? "sample" : "mean";
    return r;
}

std::string format_report(const EvaluationReport& r) {
    nlohmann::ordered_json j;
    j["inception_score"] = {{"mean", r.score.mean}, {"std", r.score.std}, {"per_split", r.score.per_split}};
    j["samples"] = r.samples;
    j["n_splits"] = r.n_splits;
    j["conditioning"] = r.conditioning;
    j["classifier_accuracy"] = r.classifier_accuracy;
    j["classifier_reliable"] = r.classifier_reliable;
    if (!r.classifier_reliable)
        j["warning"] = "evaluation unreliable: classifier held-out accuracy below " +
                       std::to_string(kClassifierAccuracyThreshold);
    auto refs = nlohmann::ordered_json::array();
    for (const auto& ref : kReferenceScores)
        refs.push_back({{"dataset", ref.dataset}, {"model", ref.model}, {"resolution", ref.resolution},
                        {"mean", ref.mean}, {"std", ref.std}});
    j["reference_full_scale"] = refs;
    return j.dump(2) + "\n";
}

}  // namespace matchgan
