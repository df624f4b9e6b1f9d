#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "doctest_torch.hpp"

#include "matchgan/errors.hpp"
#include "matchgan/training.hpp"

using namespace matchgan;
namespace fs = std::filesystem;

namespace {

const char* kTinyWgan = R"(
[experiment]
family = wgan-cls
seed = 3
total_steps = 6
checkpoint_every = 0

[data]
synthetic_classes = 3
synthetic_images_per_class = 8
synthetic_embedding_dim = 6
image_size = 8

[model]
max_resolution = 8
noise_dim = 8
compressed_embed_dim = 4
channel_schedule = 8,4

[optimizer]
batch_size = 4
)";

const char* kTinyCpggan = R"(
[experiment]
family = cpggan
seed = 5
checkpoint_every = 0

[data]
synthetic_classes = 3
synthetic_images_per_class = 8
synthetic_embedding_dim = 6
image_size = 16

[model]
max_resolution = 16
noise_dim = 8
compressed_embed_dim = 4
channel_schedule = 8,8,4

[optimizer]
batch_size = 16

[progressive]
images_per_phase = 64
)";

std::vector<torch::Tensor> snapshot(const std::vector<torch::Tensor>& params) {
    std::vector<torch::Tensor> out;
    for (const auto& p : params) out.push_back(p.detach().clone());
    return out;
}

bool all_equal(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!torch::equal(a[i], b[i])) return false;
    return true;
}

std::vector<MatchingBatch> batches_for(const ExperimentConfig& cfg, Rng& rng) {
    const auto [train, test] = load_training_data(cfg);
    std::vector<MatchingBatch> out;
    for (int i = 0; i < cfg.n_critic; ++i)
        out.push_back(sample_batch(train, cfg.batch_size, cfg.architecture.noise_dim, rng));
    return out;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("matchgan_test_" + name)) {
        fs::remove_all(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("wgan-cls defaults follow the published hyperparameters") {
    const auto c = defaults_for(Family::wgan_cls);
    CHECK(c.optimizer.learning_rate_generator == 1e-4);
    CHECK(c.optimizer.learning_rate_critic == 3e-4);
    CHECK(c.optimizer.beta1 == 0.0);
    CHECK(c.optimizer.beta2 == 0.99);
    CHECK(c.loss.kind == LossKind::wasserstein_lp);
    CHECK(c.loss.rho_kl == 10.0);
    CHECK(c.loss.lambda_lp == 150.0);
    CHECK(c.loss.alpha_match == 1.0);
    CHECK(c.batch_size == 64);
    CHECK(c.total_steps == 120000);
    CHECK(c.lr_halving_period == 0);
    CHECK(c.lr_halving_epochs == 0.0);
}

TEST_CASE("gan-cls defaults follow the published hyperparameters") {
    const auto c = defaults_for(Family::gan_cls);
    CHECK(c.optimizer.learning_rate_generator == 2e-4);
    CHECK(c.optimizer.learning_rate_critic == 2e-4);
    CHECK(c.optimizer.beta1 == 0.5);
    CHECK(c.optimizer.beta2 == 0.9);
    CHECK(c.epochs == 600);
    CHECK(c.batch_size == 64);
    CHECK(c.loss.kind == LossKind::gan);
    CHECK(c.architecture.max_resolution == 64);
}

TEST_CASE("stackgan and progressive defaults") {
    CHECK(defaults_for(Family::stackgan_stage1).lr_halving_epochs == 100);
    CHECK(defaults_for(Family::stackgan_stage2).lr_halving_epochs == 100);
    CHECK(defaults_for(Family::stackgan_stage2).architecture.max_resolution == 256);
    const auto p = defaults_for(Family::cpggan);
    CHECK(p.loss.rho_kl == 8.0);
    CHECK(p.architecture.max_resolution == 256);
    CHECK(p.progressive.batches.low_resolution_batch == 16);
    CHECK(p.progressive.batches.high_resolution_batch == 8);
    CHECK(p.progressive.batches.threshold_resolution == 64);
    CHECK(p.optimizer.learning_rate_generator == 1e-4);
    CHECK(p.optimizer.learning_rate_critic == 1e-4);
}

TEST_CASE("unknown keys are reported together") {
    try {
        parse_config("[experiment]\nfamily = wgan-cls\ntotal_steps = 5\ncolour = red\n[loss]\nflavour = sweet\n");
        FAIL("expected InvalidConfig");
    } catch (const InvalidConfig& e) {
        const std::string msg = e.what();
        CHECK(msg.find("colour") != std::string::npos);
        CHECK(msg.find("flavour") != std::string::npos);
    }
}

TEST_CASE("family and loss must agree") {
    CHECK_THROWS_AS(parse_config("[experiment]\nfamily = gan-cls\n[loss]\nkind = wasserstein-lp\n"), InvalidConfig);
    CHECK_THROWS_AS(parse_config("[experiment]\nfamily = wgan-cls\n[loss]\nkind = gan\n"), InvalidConfig);
    CHECK_NOTHROW(parse_config("[experiment]\nfamily = cpggan\n[loss]\nkind = least-squares\n"));
}

TEST_CASE("value ranges are enforced") {
    CHECK_THROWS_AS(parse_config(kTinyWgan, {"optimizer.lr_generator=0"}), InvalidConfig);
    CHECK_THROWS_AS(parse_config(kTinyWgan, {"optimizer.beta2=1"}), InvalidConfig);
    CHECK_THROWS_AS(parse_config(kTinyWgan, {"optimizer.n_critic=0"}), InvalidConfig);
    CHECK_THROWS_AS(parse_config(kTinyWgan, {"model.critic_normalization=batch"}), InvalidConfig);
    CHECK_THROWS_AS(parse_config(kTinyWgan, {"data.image_size=16"}), InvalidConfig);
    CHECK_THROWS_AS(parse_config(kTinyWgan, {"loss.kind=sideways"}), InvalidConfig);
}

TEST_CASE("overrides apply after the file and are recorded") {
    const auto c = parse_config(kTinyWgan, {"experiment.seed=99", "optimizer.n_critic=5"});
    CHECK(c.seed == 99);
    CHECK(c.n_critic == 5);
    CHECK(c.applied_overrides == std::vector<std::string>{"experiment.seed=99", "optimizer.n_critic=5"});
    CHECK_THROWS_AS(parse_config(kTinyWgan, {"seed"}), InvalidConfig);
    CHECK_THROWS_AS(parse_config(kTinyWgan, {"nosuch.key=1"}), InvalidConfig);
}

TEST_CASE("resolved configuration text parses back to itself") {
    for (const char* text : {kTinyWgan, kTinyCpggan}) {
        const auto c = parse_config(text);
        CHECK(to_ini(parse_config(to_ini(c))) == to_ini(c));
    }
}

TEST_CASE("one critic update per generator update by default") {
    auto cfg = parse_config(kTinyWgan);
    auto m = build_models(cfg);
    Rng rng(1);
    auto batches = batches_for(cfg, rng);
    const auto s = train_step(m, batches, cfg, rng);
    CHECK(s.critic_updates == 1);
    CHECK(s.generator_updates == 1);
    CHECK(m.critic_updates == 1);
    CHECK(m.generator_updates == 1);
    CHECK(m.step == 1);
}

TEST_CASE("five critic updates per generator update when asked") {
    auto cfg = parse_config(kTinyWgan, {"optimizer.n_critic=5"});
    auto m = build_models(cfg);
    Rng rng(2);
    for (int call = 0; call < 2; ++call) {
        auto batches = batches_for(cfg, rng);
        train_step(m, batches, cfg, rng);
    }
    CHECK(m.critic_updates == 10);
    CHECK(m.generator_updates == 2);
    auto wrong = batches_for(parse_config(kTinyWgan), rng);
    CHECK_THROWS_AS(train_step(m, wrong, cfg, rng), InvalidArgument);
}

TEST_CASE("zero learning rates leave every parameter bit-identical") {
    for (const char* text : {kTinyWgan, kTinyCpggan}) {
        auto cfg = parse_config(text);
        auto m = build_models(cfg);
        set_learning_rates(m, 0.0, 0.0);
        const auto g0 = snapshot(m.generator->parameters());
        const auto d0 = snapshot(m.critic->parameters());
        Rng rng(4);
        const auto [train, test] = load_training_data(cfg);
        const int r = m.critic->input_resolution();
        const auto data = train.image_size() == r ? train : train.downsampled(r);
        std::vector<MatchingBatch> batches{sample_batch(data, 4, cfg.architecture.noise_dim, rng)};
        for (int i = 0; i < 3; ++i) train_step(m, batches, cfg, rng);
        CHECK(all_equal(g0, snapshot(m.generator->parameters())));
        CHECK(all_equal(d0, snapshot(m.critic->parameters())));
    }
}

TEST_CASE("applied learning rates and betas are those of the configuration") {
    auto cfg = parse_config(kTinyWgan);
    auto m = build_models(cfg);
    const auto& g = static_cast<const torch::optim::AdamOptions&>(m.generator_optimizer->param_groups()[0].options());
    const auto& d = static_cast<const torch::optim::AdamOptions&>(m.critic_optimizer->param_groups()[0].options());
    CHECK(g.lr() == 1e-4);
    CHECK(d.lr() == 3e-4);
    CHECK(std::get<0>(g.betas()) == 0.0);
    CHECK(std::get<1>(g.betas()) == 0.99);
    CHECK(std::get<0>(d.betas()) == 0.0);
    CHECK(std::get<1>(d.betas()) == 0.99);
    Rng rng(5);
    auto batches = batches_for(cfg, rng);
    const auto s = train_step(m, batches, cfg, rng);
    CHECK(s.learning_rate_generator == 1e-4);
    CHECK(s.learning_rate_critic == 3e-4);
}

TEST_CASE("the second stage never updates the first") {
    const char* text = R"(
[experiment]
family = stackgan-stage2
seed = 1
total_steps = 2

[data]
synthetic_classes = 3
synthetic_images_per_class = 4
synthetic_embedding_dim = 6
image_size = 32

[model]
max_resolution = 32
noise_dim = 8
compressed_embed_dim = 4

[optimizer]
batch_size = 2
)";
    auto cfg = parse_config(text);
    auto m = build_models(cfg);
    auto refiner = std::dynamic_pointer_cast<RefinerGenerator>(m.generator);
    REQUIRE(refiner);
    const auto s1 = snapshot(refiner->stage1()->parameters());
    const auto own = snapshot(refiner->trainable_parameters());
    for (const auto& p : refiner->stage1()->parameters()) CHECK_FALSE(p.requires_grad());
    Rng rng(6);
    for (int i = 0; i < 2; ++i) {
        auto batches = batches_for(cfg, rng);
        train_step(m, batches, cfg, rng);
    }
    CHECK(all_equal(s1, snapshot(refiner->stage1()->parameters())));
    CHECK_FALSE(all_equal(own, snapshot(refiner->trainable_parameters())));
}

TEST_CASE("learning rate halves on step boundaries") {
    CHECK(learning_rate_factor(0, 100) == 1.0);
    CHECK(learning_rate_factor(99, 100) == 1.0);
    CHECK(learning_rate_factor(100, 100) == 0.5);
    CHECK(learning_rate_factor(250, 100) == 0.25);
    CHECK(learning_rate_factor(1000000, 0) == 1.0);

    auto cfg = defaults_for(Family::stackgan_stage1);
    CHECK(halving_period_steps(cfg, 1000) == 1563);  // ceil(100 * 1000 / 64)
    CHECK(planned_steps(cfg, 1000) == 9375);         // 600 * 1000 / 64
    cfg.lr_halving_period = 10;
    CHECK(halving_period_steps(cfg, 1000) == 10);
}

TEST_CASE("non-finite inputs raise a divergence naming the loss") {
    auto cfg = parse_config(kTinyWgan);
    auto m = build_models(cfg);
    Rng rng(7);
    auto batches = batches_for(cfg, rng);
    batches[0].images = batches[0].images.clone();
    batches[0].images[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
    try {
        train_step(m, batches, cfg, rng);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK_FALSE(e.component().empty());
    }
}

TEST_CASE("short runs write their artefacts and repeat exactly") {
    TempDir a("run_a"), b("run_b");
    auto ca = parse_config(kTinyWgan, {"experiment.output_dir=" + a.path.string(), "experiment.checkpoint_every=3"});
    auto cb = parse_config(kTinyWgan, {"experiment.output_dir=" + b.path.string(), "experiment.checkpoint_every=3"});
    const auto ra = train(ca);
    const auto rb = train(cb);
    CHECK(ra.steps == 6);
    for (const char* f : {"config.ini", "provenance.json", "metrics.jsonl", "timing.jsonl", "checkpoints/final.ckpt",
                          "checkpoints/step_0000003.ckpt", "checkpoints/step_0000006.ckpt"})
        CHECK(fs::exists(a.path / f));
    CHECK(slurp(a.path / "metrics.jsonl") == slurp(b.path / "metrics.jsonl"));
    std::istringstream lines(slurp(a.path / "metrics.jsonl"));
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.contains("matching_gap"));
        CHECK(j.contains("critic_loss"));
        ++n;
    }
    CHECK(n == 6);
    auto g = load_generator(a.path / "checkpoints/final.ckpt");
    CHECK(g->output_resolution() == 8);
}

TEST_CASE("progressive runs sample data at the current stage resolution") {
    TempDir dir("run_pg");
    auto cfg = parse_config(kTinyCpggan, {"experiment.output_dir=" + dir.path.string()});
    const auto r = train(cfg);
    // 5 phases of 64 images at 16 images per step
    CHECK(r.steps == 20);
    std::istringstream lines(slurp(dir.path / "metrics.jsonl"));
    std::string line;
    int i = 0;
    while (std::getline(lines, line)) {
        const auto j = nlohmann::json::parse(line);
        const int phase = i * 16 / 64;
        const int stage = 1 + (phase + 1) / 2;
        const bool transition = phase % 2 == 1;
        CAPTURE(i);
        CHECK(j["resolution"].get<int>() == 4 << (stage - 1));
        CHECK(j["batch_size"].get<int>() == 16);
        CHECK(j["alpha"].get<double>() == doctest::Approx(transition ? (i * 16 % 64) / 64.0 : 1.0));
        ++i;
    }
    CHECK(i == 20);
    // one checkpoint per phase boundary plus the final one
    CHECK(r.checkpoints.size() == 5);
}
