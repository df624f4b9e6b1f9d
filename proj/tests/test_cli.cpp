#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest_torch.hpp"

#include "matchgan/cli.hpp"
#include "matchgan/image_io.hpp"

namespace fs = std::filesystem;
using matchgan::cli::run;

namespace {

const char* kConfig = R"(
[experiment]
family = wgan-cls
seed = 4
total_steps = 4
checkpoint_every = 0
output_dir = out

[data]
synthetic_classes = 4
synthetic_images_per_class = 10
synthetic_embedding_dim = 6
synthetic_test_classes = 1
image_size = 8

[model]
max_resolution = 8
noise_dim = 8
compressed_embed_dim = 4
channel_schedule = 8,4

[optimizer]
batch_size = 4

[evaluation]
samples = 20
n_splits = 2
classifier_epochs = 1
)";

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result call(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int count_lines(const std::string& text, const std::string& prefix = "") {
    std::istringstream in(text);
    std::string line;
    int n = 0;
    while (std::getline(in, line)) n += line.rfind(prefix, 0) == 0;
    return n;
}

// A scratch directory holding the tiny config and one trained run.
struct Workspace {
    fs::path root = fs::temp_directory_path() / "matchgan_test_cli";
    fs::path config = root / "tiny.ini";
    Workspace() {
        fs::remove_all(root);
        fs::create_directories(root);
        std::ofstream(config) << kConfig;
    }
    ~Workspace() { fs::remove_all(root); }
};

Workspace& trained() {
    static Workspace w;
    static const bool done = [] {
        const auto r = call({"train", "-c", w.config.string(), "-o", (w.root / "run").string()});
        REQUIRE_MESSAGE(r.code == 0, r.err);
        return true;
    }();
    (void)done;
    return w;
}

}  // namespace

TEST_CASE("no subcommand or an unknown one is a validation error") {
    CHECK(call({}).code == matchgan::cli::kValidationError);
    CHECK(call({"paint"}).code == matchgan::cli::kValidationError);
    CHECK(call({"train"}).code == matchgan::cli::kValidationError);
    CHECK(call({"--help"}).code == matchgan::cli::kOk);
}

TEST_CASE("bad configuration values exit with the validation status") {
    auto& w = trained();
    const auto r = call({"train", "-c", w.config.string(), "--set", "optimizer.n_critic=0"});
    CHECK(r.code == matchgan::cli::kValidationError);
    CHECK(r.err.find("n_critic") != std::string::npos);
    CHECK(call({"train", "-c", w.config.string(), "--set", "loss.colour=red"}).code == matchgan::cli::kValidationError);
}

TEST_CASE("runtime failures exit with the runtime status") {
    auto& w = trained();
    CHECK(call({"train", "-c", (w.root / "missing.ini").string()}).code == matchgan::cli::kRuntimeFailure);
    CHECK(call({"sample", "-c", w.config.string(), "--checkpoint", (w.root / "none.ckpt").string()}).code ==
          matchgan::cli::kRuntimeFailure);
}

TEST_CASE("training writes the run directory") {
    auto& w = trained();
    for (const char* f : {"config.ini", "provenance.json", "metrics.jsonl", "timing.jsonl", "checkpoints/final.ckpt"})
        CHECK(fs::exists(w.root / "run" / f));
    CHECK(count_lines(slurp(w.root / "run" / "metrics.jsonl")) == 4);
}

TEST_CASE("the output directory comes from the environment unless a flag overrides it") {
    auto& w = trained();
    const auto env_dir = w.root / "from_env";
    ::setenv(matchgan::cli::kOutputDirEnv, env_dir.string().c_str(), 1);
    const auto a = call({"train", "-c", w.config.string(), "--set", "experiment.total_steps=1"});
    const auto b = call({"train", "-c", w.config.string(), "--set", "experiment.total_steps=1", "-o",
                         (w.root / "from_flag").string()});
    ::unsetenv(matchgan::cli::kOutputDirEnv);
    CHECK(a.code == 0);
    CHECK(b.code == 0);
    CHECK(fs::exists(env_dir / "metrics.jsonl"));
    CHECK(fs::exists(w.root / "from_flag" / "metrics.jsonl"));
}

TEST_CASE("sample mosaics have one row per class and a sidecar") {
    auto& w = trained();
    const auto png = w.root / "s.png";
    const auto r = call({"sample", "-c", w.config.string(), "-o", (w.root / "run").string(), "--cols", "5", "--out",
                         png.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto img = matchgan::read_png(png);
    // the test split holds one class
    CHECK(img.height == 8);
    CHECK(img.width == 5 * 8);
    const auto meta = slurp(png.string() + ".txt");
    CHECK(meta.find("rows\t1\n") != std::string::npos);
    CHECK(meta.find("cols\t5\n") != std::string::npos);
}

TEST_CASE("interpolation mosaics have one column per step") {
    auto& w = trained();
    const auto png = w.root / "i.png";
    // the held-out split has one class, so sweep across the training classes
    const auto synth = w.root / "synthetic";
    REQUIRE(call({"make-synthetic", "-c", w.config.string(), "--out", synth.string()}).code == 0);
    const auto r2 = call({"interpolate", "-c", w.config.string(), "-o", (w.root / "run").string(), "--steps", "8",
                          "--pairs", "2", "--data", (synth / "train" / "manifest.txt").string(), "--out", png.string()});
    REQUIRE_MESSAGE(r2.code == 0, r2.err);
    const auto img = matchgan::read_png(png);
    CHECK(img.width == 8 * 8);
    CHECK(img.height == 2 * 8);
    const auto meta = slurp(png.string() + ".txt");
    CHECK(meta.find("cols\t8\n") != std::string::npos);
    CHECK(count_lines(meta, "col\t") == 8);
    CHECK(meta.find("t=0.000") != std::string::npos);
    CHECK(meta.find("t=1.000") != std::string::npos);
    CHECK(call({"interpolate", "-c", w.config.string(), "--steps", "1"}).code == matchgan::cli::kValidationError);
}

TEST_CASE("nearest-neighbour analysis prints one line per sample") {
    auto& w = trained();
    const auto r = call({"nn", "-c", w.config.string(), "-o", (w.root / "run").string(), "--samples", "3", "--out",
                         (w.root / "nn.png").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(count_lines(r.out) == 4);
    CHECK(r.out.rfind("sample\ttrain_index\tclass\tdistance\n", 0) == 0);
    CHECK(matchgan::read_png(w.root / "nn.png").width == 2 * 8);
}

TEST_CASE("evaluation writes a report") {
    auto& w = trained();
    // the classifier needs several classes, more than the held-out split has
    const auto synth = w.root / "synthetic_eval";
    REQUIRE(call({"make-synthetic", "-c", w.config.string(), "--out", synth.string()}).code == 0);
    const auto r = call({"evaluate", "-c", w.config.string(), "-o", (w.root / "run").string(), "--data",
                         (synth / "train" / "manifest.txt").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(w.root / "run" / "evaluation.json"));
    CHECK(r.out.find("inception_score") != std::string::npos);
}

TEST_CASE("synthetic data lands in disjoint train and test directories") {
    auto& w = trained();
    const auto dir = w.root / "synth2";
    const auto r = call({"make-synthetic", "--out", dir.string(), "--classes", "5", "--images-per-class", "3", "--size",
                         "8", "--embedding-dim", "6", "--test-classes", "2"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(dir / "train" / "manifest.txt"));
    CHECK(fs::exists(dir / "test" / "manifest.txt"));
    CHECK(call({"make-synthetic", "--out", dir.string(), "--classes", "3", "--test-classes", "2"}).code ==
          matchgan::cli::kValidationError);
}

TEST_CASE("a six stage schedule has eleven phases") {
    const auto r = call({"inspect-schedule", "--stages", "6", "--images-per-phase", "100"});
    REQUIRE(r.code == 0);
    CHECK(count_lines(r.out) == 12);
    CHECK(r.out.rfind("stage\tphase\t", 0) == 0);
    CHECK(call({"inspect-schedule"}).code == matchgan::cli::kValidationError);
    auto& w = trained();
    CHECK(call({"inspect-schedule", "-c", w.config.string()}).code == matchgan::cli::kValidationError);
}
