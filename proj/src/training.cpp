#include "matchgan/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <torch/torch.h>

#include <json.hpp>

#include "matchgan/errors.hpp"
#include "matchgan/losses.hpp"

namespace matchgan {

namespace {

using json = nlohmann::ordered_json;

std::vector<torch::Tensor> optimised_generator_parameters(GeneratorBase& g) {
    // Progressive models keep one optimiser for their whole life; parameters
    // of stages not yet attached simply receive no gradient.
    if (auto* p = dynamic_cast<ProgressiveGenerator*>(&g)) return p->stage_parameters(p->max_stage());
    return g.trainable_parameters();
}

torch::optim::AdamOptions adam_options(double lr, const OptimizerConfig& o) {
    return torch::optim::AdamOptions(lr).betas({o.beta1, o.beta2}).eps(1e-8);
}

double grad_norm(const std::vector<torch::Tensor>& params) {
    double total = 0.0;
    for (const auto& p : params)
        if (p.grad().defined()) total += p.grad().pow(2).sum().item<double>();
    return std::sqrt(total);
}

void require_finite(const torch::Tensor& t, const char* component, std::int64_t step) {
    if (!std::isfinite(t.item<double>())) throw TrainingDiverged(component, static_cast<long>(step));
}

double current_lr(const torch::optim::Adam& opt) {
    return static_cast<const torch::optim::AdamOptions&>(opt.param_groups().front().options()).lr();
}

// Sigmoid outputs can round to exactly 0 or 1 in float32; the probability
// losses need the open interval.
torch::Tensor open_interval(const torch::Tensor& p) { return p.clamp(1e-6, 1.0 - 1e-6); }

void check_batch(const MatchingBatch& b, const Models& m, const ExperimentConfig& cfg) {
    const auto& a = m.generator->config();
    const int r = m.critic->input_resolution();
    if (b.images.dim() != 4 || b.images.size(2) != r || b.images.size(3) != r)
        throw InvalidArgument("batch images are not " + std::to_string(r) + "x" + std::to_string(r));
    if (b.matched_embeddings.size(1) != a.embedding_dim || b.mismatched_embeddings.size(1) != a.embedding_dim)
        throw InvalidArgument("batch embedding width differs from the model");
    if (b.noise.size(1) != a.noise_dim) throw InvalidArgument("batch noise width differs from the model");
    (void)cfg;
}

torch::Tensor epsilon_for(const GeneratorBase& g, std::int64_t rows, Rng& rng) {
    if (!g.uses_conditioning_augmentation()) return {};
    return normal_noise(rows, g.config().compressed_embed_dim, rng);
}

torch::Tensor kl_term(const GeneratorOutput& out, const ExperimentConfig& cfg) {
    if (!out.conditioning) return torch::zeros({});
    return ca_kl_regularizer(out.conditioning->mu, out.conditioning->sigma, cfg.loss.kl_direction);
}

}  // namespace

Models build_models(const ExperimentConfig& cfg, std::shared_ptr<ConvGenerator> stage1) {
    Models m;
    m.generator = cfg.family == Family::stackgan_stage2 ? build_generator(cfg.architecture, std::move(stage1))
                                                        : build_generator(cfg.architecture);
    m.critic = build_discriminator(cfg.architecture, loss_family(cfg.loss.kind), has_gradient_penalty(cfg.loss.kind));
    m.generator_optimizer = std::make_unique<torch::optim::Adam>(
        optimised_generator_parameters(*m.generator),
        adam_options(cfg.optimizer.learning_rate_generator, cfg.optimizer));
    m.critic_optimizer = std::make_unique<torch::optim::Adam>(
        m.critic->parameters(), adam_options(cfg.optimizer.learning_rate_critic, cfg.optimizer));
    return m;
}

void set_learning_rates(Models& m, double g, double d) {
    for (auto& group : m.generator_optimizer->param_groups())
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(g);
    for (auto& group : m.critic_optimizer->param_groups())
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(d);
}

StepMetrics train_step(Models& m, std::span<const MatchingBatch> batches, const ExperimentConfig& cfg, Rng& rng) {
    if (static_cast<int>(batches.size()) != cfg.n_critic)
        throw InvalidArgument("train_step needs exactly n_critic = " + std::to_string(cfg.n_critic) + " batches");
    for (const auto& b : batches) check_batch(b, m, cfg);

    auto& G = *m.generator;
    auto& D = *m.critic;
    G.train();
    D.train();
    const auto family = loss_family(cfg.loss.kind);
    const auto& L = cfg.loss;

    StepMetrics s;
    s.step = m.step;
    s.resolution = D.input_resolution();
    s.batch_size = static_cast<int>(batches.front().size());
    if (auto* pg = dynamic_cast<ProgressiveGenerator*>(&G)) s.alpha = pg->alpha();
    s.learning_rate_generator = current_lr(*m.generator_optimizer);
    s.learning_rate_critic = current_lr(*m.critic_optimizer);

    for (const auto& b : batches) {
        torch::Tensor fake;
        {
            torch::NoGradGuard guard;
            fake = G.generate(b.noise, b.matched_embeddings, epsilon_for(G, b.size(), rng)).images;
        }
        m.critic_optimizer->zero_grad();
        const auto c_mat = D.embed(b.matched_embeddings);
        const auto c_mis = D.embed(b.mismatched_embeddings);
        CriticOutputs out{D.score(b.images, c_mat), D.score(fake, c_mat), D.score(b.images, c_mis)};

        torch::Tensor adversarial;
        torch::Tensor penalty = torch::zeros({});
        torch::Tensor loss;
        switch (family) {
            case LossFamily::gan: {
                const CriticOutputs p{open_interval(out.on_real_matched), open_interval(out.on_fake),
                                      open_interval(out.on_real_mismatched)};
                adversarial = gan_cls_discriminator_loss(p);
                loss = adversarial;
                break;
            }
            case LossFamily::wasserstein: {
                std::vector<float> t(static_cast<std::size_t>(b.size()));
                for (auto& v : t) v = static_cast<float>(rng.uniform());
                const auto tw = torch::tensor(t);
                const auto x_hat = interpolate_real_fake(b.images, fake, tw);
                const auto norms = critic_gradient_norms(
                    [&D](const torch::Tensor& x, const torch::Tensor& e) { return D.score(x, e); }, x_hat, c_mat);
                double lambda = 0;
                if (cfg.loss.kind == LossKind::wasserstein_lp) {
                    penalty = lipschitz_penalty_lp(norms.image, norms.embedding);
                    lambda = L.lambda_lp;
                } else {
                    penalty = gradient_penalty_gp(norms.image);
                    lambda = L.lambda_gp;
                }
                adversarial = wgan_cls_critic_loss(out, L.alpha_match, 0.0, torch::zeros({}));
                loss = adversarial + lambda * penalty;
                s.grad_norm_image = norms.image.mean().item<double>();
                s.grad_norm_embedding = norms.embedding.mean().item<double>();
                break;
            }
            case LossFamily::least_squares:
                adversarial = lsgan_losses(out, L.ls_a, L.ls_b, L.ls_c, true).critic;
                loss = adversarial;
                break;
        }
        require_finite(loss, "critic_loss", m.step);
        loss.backward();
        s.critic_param_grad_norm = grad_norm(D.parameters());
        m.critic_optimizer->step();
        ++m.critic_updates;
        ++s.critic_updates;

        s.critic_loss = loss.item<double>();
        s.critic_adversarial = adversarial.item<double>();
        s.penalty = penalty.item<double>();
        s.d_matched = out.on_real_matched.mean().item<double>();
        s.d_mismatched = out.on_real_mismatched.mean().item<double>();
        s.d_fake = out.on_fake.mean().item<double>();
    }
    s.matching_gap = s.d_matched - s.d_mismatched;
    s.wasserstein_estimate = s.d_matched - s.d_fake;

    const auto& b = batches.back();
    m.generator_optimizer->zero_grad();
    const auto gen = G.generate(b.noise, b.matched_embeddings, epsilon_for(G, b.size(), rng));
    const auto on_fake = D.score(gen.images, D.embed(b.matched_embeddings));
    const auto kl = kl_term(gen, cfg);
    torch::Tensor adversarial;
    switch (family) {
        case LossFamily::gan: adversarial = gan_generator_loss_nonsaturating(open_interval(on_fake)); break;
        case LossFamily::wasserstein: adversarial = -on_fake.mean(); break;
        case LossFamily::least_squares: adversarial = lsgan_generator_loss(on_fake, L.ls_c); break;
    }
    const auto loss = adversarial + L.rho_kl * kl;
    require_finite(kl, "kl", m.step);
    require_finite(loss, "generator_loss", m.step);
    loss.backward();
    s.generator_param_grad_norm = grad_norm(optimised_generator_parameters(G));
    m.generator_optimizer->step();
    // The generator pass leaves gradients on the critic; they must not leak
    // into the next critic update.
    m.critic_optimizer->zero_grad();
    ++m.generator_updates;
    ++s.generator_updates;

    s.generator_loss = loss.item<double>();
    s.generator_adversarial = adversarial.item<double>();
    s.kl = kl.item<double>();
    ++m.step;
    return s;
}

// ---------------------------------------------------------------------------

std::int64_t planned_steps(const ExperimentConfig& cfg, std::size_t n) {
    if (cfg.total_steps > 0) return cfg.total_steps;
    return static_cast<std::int64_t>(std::ceil(cfg.epochs * static_cast<double>(n) / cfg.batch_size));
}

std::int64_t halving_period_steps(const ExperimentConfig& cfg, std::size_t n) {
    if (cfg.lr_halving_period > 0) return cfg.lr_halving_period;
    if (cfg.lr_halving_epochs > 0)
        return std::max<std::int64_t>(
            1, static_cast<std::int64_t>(std::ceil(cfg.lr_halving_epochs * static_cast<double>(n) / cfg.batch_size)));
    return 0;
}

double learning_rate_factor(std::int64_t step, std::int64_t period) {
    if (period <= 0) return 1.0;
    return std::ldexp(1.0, -static_cast<int>(step / period));
}

std::pair<Dataset, Dataset> load_training_data(const ExperimentConfig& cfg) {
    Dataset all;
    if (!cfg.data.manifest.empty()) {
        all = load_dataset(cfg.data.manifest);
        if (all.image_size() != cfg.data.image_size)
            throw InvalidConfig("dataset images are " + std::to_string(all.image_size()) + " px but data.image_size is " +
                                std::to_string(cfg.data.image_size));
        if (all.manifest().split == Split::test) throw InvalidConfig("refusing to train on a test-split manifest");
        return {all, Dataset{}};
    }
    SyntheticOptions o;
    o.num_classes = cfg.data.synthetic_classes;
    o.images_per_class = cfg.data.synthetic_images_per_class;
    o.image_size = cfg.data.image_size;
    o.embedding_dim = cfg.data.synthetic_embedding_dim;
    o.seed = cfg.seed;
    all = make_synthetic_dataset(o);
    if (cfg.data.synthetic_test_classes == 0) return {all, Dataset{}};
    return split_by_class(all, cfg.data.synthetic_test_classes);
}

namespace {

std::string growth_metadata(const Models& m, const std::string& family) {
    std::ostringstream o;
    o << "family=" << family << "\nstep=" << m.step << '\n';
    if (auto* pg = dynamic_cast<ProgressiveGenerator*>(m.generator.get()))
        o << "stage=" << pg->stage() << "\nalpha=" << pg->alpha() << '\n';
    return o.str();
}

std::map<std::string, std::string> parse_metadata(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return out;
}

void save_models(const Models& m, const ExperimentConfig& cfg, const std::filesystem::path& path) {
    Checkpoint ck;
    ck.architecture = m.generator->config();
    ck.metadata = growth_metadata(m, to_string(cfg.family));
    collect_state(*m.generator, "generator", ck);
    collect_state(*m.critic, "critic", ck);
    write_checkpoint(path, ck);
}

std::shared_ptr<ConvGenerator> load_stage1(const ExperimentConfig& cfg) {
    if (cfg.stage1_checkpoint.empty()) return nullptr;
    const auto ck = read_checkpoint(cfg.stage1_checkpoint);
    const auto expected = stage1_config(cfg.architecture);
    if (ck.architecture.family != Family::stackgan_stage1 ||
        ck.architecture.max_resolution != expected.max_resolution ||
        ck.architecture.embedding_dim != expected.embedding_dim)
        throw InvalidConfig("stage1 checkpoint " + cfg.stage1_checkpoint.string() +
                            " does not match the Stage-II configuration");
    auto g = std::make_shared<ConvGenerator>(ck.architecture);
    restore_state(*g, "generator", ck);
    return g;
}

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : path_(path), out_(path) {
        if (!out_) throw IoError("cannot write " + path.string());
    }
    void line(const std::string& s) {
        out_ << s << '\n';
        out_.flush();
        if (!out_) throw IoError("write failed for " + path_.string());
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

json to_json(const StepMetrics& s) {
    return json{{"step", s.step},
                {"resolution", s.resolution},
                {"batch_size", s.batch_size},
                {"alpha", s.alpha},
                {"lr_generator", s.learning_rate_generator},
                {"lr_critic", s.learning_rate_critic},
                {"critic_updates", s.critic_updates},
                {"generator_updates", s.generator_updates},
                {"critic_loss", s.critic_loss},
                {"critic_adversarial", s.critic_adversarial},
                {"penalty", s.penalty},
                {"generator_loss", s.generator_loss},
                {"generator_adversarial", s.generator_adversarial},
                {"kl", s.kl},
                {"d_matched", s.d_matched},
                {"d_mismatched", s.d_mismatched},
                {"d_fake", s.d_fake},
                {"matching_gap", s.matching_gap},
                {"wasserstein_estimate", s.wasserstein_estimate},
                {"grad_norm_image", s.grad_norm_image},
                {"grad_norm_embedding", s.grad_norm_embedding},
                {"critic_param_grad_norm", s.critic_param_grad_norm},
                {"generator_param_grad_norm", s.generator_param_grad_norm}};
}

constexpr int kDivergencePatience = 3;

}  // namespace

std::shared_ptr<GeneratorBase> load_generator(const std::filesystem::path& path) {
    const auto ck = read_checkpoint(path);
    auto g = build_generator(ck.architecture);
    restore_state(*g, "generator", ck);
    const auto meta = parse_metadata(ck.metadata);
    if (auto* pg = dynamic_cast<ProgressiveGenerator*>(g.get())) {
        const auto stage = meta.count("stage") ? std::stoi(meta.at("stage")) : pg->max_stage();
        const auto alpha = meta.count("alpha") ? std::stod(meta.at("alpha")) : 1.0;
        pg->set_growth(stage, alpha);
    }
    g->eval();
    return g;
}

TrainResult train(const ExperimentConfig& cfg) {
    validate(cfg);
    torch::set_num_threads(1);
    torch::manual_seed(cfg.seed);
    Rng rng(cfg.seed);

    auto [train_set, test_set] = load_training_data(cfg);
    if (train_set.class_ids().size() < 2) throw InvalidConfig("training split needs at least two classes");
    ExperimentConfig run = cfg;
    run.architecture.embedding_dim = train_set.embedding_dim();
    validate(run);

    namespace fs = std::filesystem;
    const fs::path out_dir = run.output_dir;
    std::error_code ec;
    fs::create_directories(out_dir / "checkpoints", ec);
    if (ec) throw IoError("cannot create " + (out_dir / "checkpoints").string() + ": " + ec.message());

    Models m = build_models(run, run.family == Family::stackgan_stage2 ? load_stage1(run) : nullptr);
    auto* pg = dynamic_cast<ProgressiveGenerator*>(m.generator.get());
    auto* pc = dynamic_cast<ProgressiveCritic*>(m.critic.get());
    if (pc) pc->reseed_noise(rng.next_u64());

    write_text(out_dir / "config.ini", to_ini(run));
    {
        json prov{{"version", "0.3.0"},
                  {"family", to_string(run.family)},
                  {"seed", run.seed},
                  {"torch_threads", 1},
                  {"overrides", run.applied_overrides},
                  {"dataset",
                   {{"source", run.data.manifest.empty() ? "synthetic" : run.data.manifest.string()},
                    {"images", train_set.size()},
                    {"classes", train_set.class_ids().size()},
                    {"test_classes", test_set.class_ids().size()},
                    {"image_size", train_set.image_size()},
                    {"embedding_dim", train_set.embedding_dim()}}},
                  {"stage1_checkpoint", run.stage1_checkpoint.string()}};
        write_text(out_dir / "provenance.json", prov.dump(2) + "\n");
    }
    Writer metrics(out_dir / "metrics.jsonl");
    Writer timing(out_dir / "timing.jsonl");

    TrainResult result;
    result.output_dir = out_dir;
    const auto checkpoint = [&](const std::string& name) {
        const auto path = out_dir / "checkpoints" / name;
        save_models(m, run, path);
        result.checkpoints.push_back(path);
    };
    const auto step_name = [&] {
        char buf[32];
        std::snprintf(buf, sizeof buf, "step_%07lld.ckpt", static_cast<long long>(m.step));
        return std::string(buf);
    };

    // Progressive runs are driven by the growth schedule; the others by a
    // step budget.
    const int max_stage = run.architecture.levels();
    GrowthState growth = initial_growth_state(run.progressive.images_per_phase);
    std::int64_t budget = planned_steps(run, train_set.size());
    if (pg && run.total_steps == 0) budget = -1;
    const auto period = pg ? run.lr_halving_period : halving_period_steps(run, train_set.size());

    std::map<int, Dataset> by_resolution;
    const auto data_at = [&](int resolution) -> const Dataset& {
        auto it = by_resolution.find(resolution);
        if (it == by_resolution.end())
            it = by_resolution.emplace(resolution, resolution == train_set.image_size() ? train_set
                                                                                         : train_set.downsampled(resolution))
                     .first;
        return it->second;
    };

    int consecutive_failures = 0;
    const auto start = std::chrono::steady_clock::now();
    while (budget < 0 ? !fully_trained(growth, max_stage) : m.step < budget) {
        int resolution = run.architecture.max_resolution;
        int batch_size = run.batch_size;
        if (pg) {
            const double alpha = fade_alpha(growth).value;
            pg->set_growth(growth.stage, alpha);
            pc->set_growth(growth.stage, alpha);
            resolution = stage_resolution(growth.stage, run.architecture.base_resolution);
            batch_size = run.progressive.batches.batch_for(resolution);
        }
        const double factor = learning_rate_factor(m.step, period);
        set_learning_rates(m, run.optimizer.learning_rate_generator * factor, run.optimizer.learning_rate_critic * factor);

        const Dataset& data = data_at(resolution);
        std::vector<MatchingBatch> batches;
        for (int i = 0; i < run.n_critic; ++i)
            batches.push_back(sample_batch(data, batch_size, run.architecture.noise_dim, rng, run.data.augment));

        const auto before = std::chrono::steady_clock::now();
        StepMetrics s;
        try {
            s = train_step(m, batches, run, rng);
            consecutive_failures = 0;
        } catch (const TrainingDiverged&) {
            if (++consecutive_failures >= kDivergencePatience) {
                checkpoint("diverged.ckpt");
                throw;
            }
            ++m.step;
            continue;
        }
        const auto after = std::chrono::steady_clock::now();
        metrics.line(to_json(s).dump());
        timing.line(json{{"step", s.step},
                         {"seconds", std::chrono::duration<double>(after - before).count()},
                         {"elapsed", std::chrono::duration<double>(after - start).count()}}
                        .dump());
        result.last = s;

        bool boundary = false;
        if (pg) {
            const auto next = advance(growth, static_cast<std::int64_t>(batch_size) * run.n_critic, max_stage);
            boundary = next.stage != growth.stage || next.phase != growth.phase;
            growth = next;
        }
        if (boundary || (run.checkpoint_every > 0 && m.step % run.checkpoint_every == 0)) checkpoint(step_name());
    }
    if (pg) {
        pg->set_growth(growth.stage, fade_alpha(growth).value);
        pc->set_growth(growth.stage, fade_alpha(growth).value);
    }
    checkpoint("final.ckpt");
    result.steps = m.step;
    return result;
}

}  // namespace matchgan
