#include "matchgan/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include <torch/torch.h>

#include <CLI11.hpp>

#include "matchgan/config.hpp"
#include "matchgan/data.hpp"
#include "matchgan/errors.hpp"
#include "matchgan/evaluation.hpp"
#include "matchgan/image_io.hpp"
#include "matchgan/progressive.hpp"
#include "matchgan/training.hpp"

namespace matchgan::cli {

namespace {

namespace fs = std::filesystem;

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string output;
};

void add_common(CLI::App* app, Common& c, bool config_required) {
    auto* opt = app->add_option("-c,--config", c.config, "Experiment config file");
    if (config_required) opt->required();
    app->add_option("--set", c.sets, "Override as section.key=value (repeatable)");
    app->add_option("--seed", c.seed, "Replaces experiment.seed");
    app->add_option("-o,--output", c.output, "Replaces experiment.output_dir");
}

ExperimentConfig resolve(const Common& c) {
    auto overrides = c.sets;
    if (c.seed) overrides.push_back("experiment.seed=" + std::to_string(*c.seed));
    if (const char* env = std::getenv(kOutputDirEnv); env && *env)
        overrides.push_back(std::string("experiment.output_dir=") + env);
    if (!c.output.empty()) overrides.push_back("experiment.output_dir=" + c.output);
    return load_config(c.config, overrides);
}

struct GeneratorInputs {
    std::shared_ptr<GeneratorBase> generator;
    Dataset dataset;
};

GeneratorInputs open_generator(const ExperimentConfig& cfg, const std::string& checkpoint, const std::string& data) {
    GeneratorInputs g;
    const fs::path ck = checkpoint.empty() ? cfg.output_dir / "checkpoints" / "final.ckpt" : fs::path(checkpoint);
    g.generator = load_generator(ck);
    if (g.generator->config().family != cfg.family)
        throw InvalidConfig("checkpoint holds a " + to_string(g.generator->config().family) + " model but the config is " +
                            to_string(cfg.family));
    if (!data.empty()) {
        g.dataset = load_dataset(data);
    } else {
        auto [train, test] = load_training_data(cfg);
        g.dataset = test.size() > 0 ? test : train;
    }
    if (static_cast<int>(g.dataset.embedding_dim()) != g.generator->config().embedding_dim)
        throw InvalidConfig("dataset embeddings do not match the checkpoint's embedding width");
    return g;
}

torch::Tensor caption(const CaptionedImage& img, std::size_t k = 0) {
    return torch::tensor(img.embeddings[k % img.embeddings.size()]).unsqueeze(0);
}

std::string class_label(int id) { return "class " + std::to_string(id); }

fs::path output_path(const ExperimentConfig& cfg, const std::string& flag, const char* name) {
    fs::path p = flag.empty() ? cfg.output_dir / name : fs::path(flag);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    return p;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Text-conditioned GAN training and evaluation", "matchgan"};
    app.require_subcommand(1);

    // make-synthetic
    auto* synth = app.add_subcommand("make-synthetic", "Write the procedural dataset to disk");
    Common synth_common;
    add_common(synth, synth_common, false);
    std::string synth_out;
    SyntheticOptions synth_opts;
    int synth_test = 0;
    synth->add_option("--out", synth_out, "Destination directory")->required();
    synth->add_option("--classes", synth_opts.num_classes);
    synth->add_option("--images-per-class", synth_opts.images_per_class);
    synth->add_option("--size", synth_opts.image_size);
    synth->add_option("--embedding-dim", synth_opts.embedding_dim);
    synth->add_option("--test-classes", synth_test);

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a model");
    Common train_common;
    add_common(train_cmd, train_common, true);

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "Inception Score of a checkpoint");
    Common eval_common;
    add_common(eval_cmd, eval_common, true);
    std::string eval_ckpt, eval_data, eval_report;
    eval_cmd->add_option("--checkpoint", eval_ckpt);
    eval_cmd->add_option("--data", eval_data, "Manifest to draw captions from");
    eval_cmd->add_option("--report", eval_report, "Report path (default <output_dir>/evaluation.json)");

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "Mosaic of samples, one row per class");
    Common sample_common;
    add_common(sample_cmd, sample_common, true);
    std::string sample_ckpt, sample_data, sample_out;
    int sample_rows = 8, sample_cols = 8;
    sample_cmd->add_option("--checkpoint", sample_ckpt);
    sample_cmd->add_option("--data", sample_data);
    sample_cmd->add_option("--rows", sample_rows);
    sample_cmd->add_option("--cols", sample_cols);
    sample_cmd->add_option("--out", sample_out);

    // interpolate
    auto* interp_cmd = app.add_subcommand("interpolate", "Caption interpolation sweeps");
    Common interp_common;
    add_common(interp_cmd, interp_common, true);
    std::string interp_ckpt, interp_data, interp_out;
    int interp_steps = 8, interp_pairs = 4;
    interp_cmd->add_option("--checkpoint", interp_ckpt);
    interp_cmd->add_option("--data", interp_data);
    interp_cmd->add_option("--steps", interp_steps);
    interp_cmd->add_option("--pairs", interp_pairs);
    interp_cmd->add_option("--out", interp_out);

    // nn
    auto* nn_cmd = app.add_subcommand("nn", "Nearest training image for generated samples");
    Common nn_common;
    add_common(nn_cmd, nn_common, true);
    std::string nn_ckpt, nn_data, nn_out;
    int nn_samples = 8;
    nn_cmd->add_option("--checkpoint", nn_ckpt);
    nn_cmd->add_option("--data", nn_data, "Training manifest to search");
    nn_cmd->add_option("--samples", nn_samples);
    nn_cmd->add_option("--out", nn_out);

    // inspect-schedule
    auto* sched_cmd = app.add_subcommand("inspect-schedule", "Print the progressive phase table");
    Common sched_common;
    add_common(sched_cmd, sched_common, false);
    std::optional<int> sched_stages;
    std::optional<std::int64_t> sched_images;
    sched_cmd->add_option("--stages", sched_stages);
    sched_cmd->add_option("--images-per-phase", sched_images);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        if (app.get_subcommands().empty()) err << app.help();
        return kValidationError;
    }

    try {
        torch::set_num_threads(1);

        if (synth->parsed()) {
            if (!synth_common.config.empty()) {
                const auto cfg = resolve(synth_common);
                synth_opts.num_classes = cfg.data.synthetic_classes;
                synth_opts.images_per_class = cfg.data.synthetic_images_per_class;
                synth_opts.image_size = cfg.data.image_size;
                synth_opts.embedding_dim = cfg.data.synthetic_embedding_dim;
                synth_opts.seed = cfg.seed;
                synth_test = cfg.data.synthetic_test_classes;
            } else if (synth_common.seed) {
                synth_opts.seed = *synth_common.seed;
            }
            if (synth_test < 0 || synth_test > synth_opts.num_classes - 2)
                throw InvalidConfig("--test-classes must leave at least two training classes");
            const auto all = make_synthetic_dataset(synth_opts);
            if (synth_test == 0) {
                save_dataset(all, fs::path(synth_out) / "train");
            } else {
                auto [tr, te] = split_by_class(all, synth_test);
                check_disjoint(tr.manifest(), te.manifest());
                save_dataset(tr, fs::path(synth_out) / "train");
                save_dataset(te, fs::path(synth_out) / "test");
            }
            out << "wrote " << all.size() << " images to " << synth_out << '\n';
            return kOk;
        }

        if (train_cmd->parsed()) {
            const auto cfg = resolve(train_common);
            const auto r = train(cfg);
            out << "trained " << r.steps << " steps; outputs in " << r.output_dir.string() << '\n';
            return kOk;
        }

        if (eval_cmd->parsed()) {
            auto cfg = resolve(eval_common);
            auto g = open_generator(cfg, eval_ckpt, eval_data);
            torch::manual_seed(cfg.seed);
            Rng rng(cfg.seed);
            const auto report = evaluate_generator(*g.generator, g.dataset, cfg.evaluation, rng);
            const auto text = format_report(report);
            const auto path = output_path(cfg, eval_report, "evaluation.json");
            std::ofstream f(path);
            f << text;
            if (!f) throw IoError("cannot write " + path.string());
            out << text;
            if (!report.classifier_reliable)
                err << "warning: classifier accuracy " << report.classifier_accuracy << " is below "
                    << kClassifierAccuracyThreshold << "; the score is unreliable\n";
            return kOk;
        }

        if (sample_cmd->parsed()) {
            auto cfg = resolve(sample_common);
            if (sample_rows < 1 || sample_cols < 1) throw InvalidConfig("--rows and --cols must be positive");
            auto g = open_generator(cfg, sample_ckpt, sample_data);
            Rng rng(cfg.seed);
            const auto& classes = g.dataset.class_ids();
            const int rows = std::min<int>(sample_rows, static_cast<int>(classes.size()));
            const auto noise = normal_noise(sample_cols, g.generator->config().noise_dim, rng);
            std::vector<torch::Tensor> tiles;
            MosaicLayout layout{rows, sample_cols, {}, {}};
            torch::NoGradGuard guard;
            for (int r = 0; r < rows; ++r) {
                const auto& img = g.dataset.images()[g.dataset.indices_of_class(classes[r]).front()];
                const auto e = caption(img).expand({sample_cols, -1}).contiguous();
                tiles.push_back(g.generator->generate(noise, e, {}).images);
                layout.row_labels.push_back(class_label(classes[r]));
            }
            for (int c = 0; c < sample_cols; ++c) layout.col_labels.push_back("z" + std::to_string(c));
            const auto path = output_path(cfg, sample_out, "samples.png");
            write_mosaic(path, torch::cat(tiles, 0), layout);
            out << "wrote " << path.string() << '\n';
            return kOk;
        }

        if (interp_cmd->parsed()) {
            auto cfg = resolve(interp_common);
            if (interp_steps < 2) throw InvalidConfig("--steps must be at least 2");
            if (interp_pairs < 1) throw InvalidConfig("--pairs must be positive");
            auto g = open_generator(cfg, interp_ckpt, interp_data);
            Rng rng(cfg.seed);
            const auto& classes = g.dataset.class_ids();
            if (classes.size() < 2) throw InvalidConfig("interpolation needs two classes");
            std::vector<torch::Tensor> rows;
            MosaicLayout layout{interp_pairs, interp_steps, {}, {}};
            for (int p = 0; p < interp_pairs; ++p) {
                const auto a = classes[static_cast<std::size_t>(p) % classes.size()];
                const auto b = classes[(static_cast<std::size_t>(p) + 1) % classes.size()];
                const auto& ia = g.dataset.images()[g.dataset.indices_of_class(a).front()];
                const auto& ib = g.dataset.images()[g.dataset.indices_of_class(b).front()];
                const auto z = normal_noise(1, g.generator->config().noise_dim, rng);
                rows.push_back(interpolation_sweep(*g.generator, z, caption(ia), caption(ib), interp_steps));
                layout.row_labels.push_back(class_label(a) + " -> " + class_label(b));
            }
            for (int k = 0; k < interp_steps; ++k) {
                std::ostringstream t;
                t << std::fixed << std::setprecision(3) << static_cast<double>(k) / (interp_steps - 1);
                layout.col_labels.push_back("t=" + t.str());
            }
            const auto path = output_path(cfg, interp_out, "interpolation.png");
            write_mosaic(path, torch::cat(rows, 0), layout);
            out << "wrote " << path.string() << '\n';
            return kOk;
        }

        if (nn_cmd->parsed()) {
            auto cfg = resolve(nn_common);
            if (nn_samples < 1) throw InvalidConfig("--samples must be positive");
            std::shared_ptr<GeneratorBase> generator;
            Dataset train_set;
            {
                auto g = open_generator(cfg, nn_ckpt, nn_data);
                generator = g.generator;
                train_set = nn_data.empty() ? load_training_data(cfg).first : g.dataset;
            }
            Rng rng(cfg.seed);
            std::vector<torch::Tensor> emb;
            for (int i = 0; i < nn_samples; ++i) {
                const auto& img = train_set.images()[rng.index(train_set.size())];
                emb.push_back(caption(img, rng.index(img.embeddings.size())));
            }
            torch::Tensor samples;
            {
                torch::NoGradGuard guard;
                samples = generator->generate(normal_noise(nn_samples, generator->config().noise_dim, rng),
                                              torch::cat(emb, 0), {})
                              .images;
            }
            const int res = static_cast<int>(samples.size(2));
            const auto& pool = res == train_set.image_size() ? train_set : train_set.downsampled(res);
            const auto train_images = to_tensor(pool.images());
            const auto matches = nearest_neighbor_analysis(samples, train_images);
            std::vector<torch::Tensor> tiles;
            MosaicLayout layout{nn_samples, 2, {}, {"sample", "nearest"}};
            out << "sample\ttrain_index\tclass\tdistance\n";
            for (int i = 0; i < nn_samples; ++i) {
                const auto& m = matches[static_cast<std::size_t>(i)];
                tiles.push_back(samples[i].unsqueeze(0));
                tiles.push_back(train_images[static_cast<std::int64_t>(m.index)].unsqueeze(0));
                layout.row_labels.push_back("sample " + std::to_string(i) + " d=" + std::to_string(m.distance));
                out << i << '\t' << m.index << '\t' << pool.images()[m.index].class_id << '\t' << m.distance << '\n';
            }
            const auto path = output_path(cfg, nn_out, "nearest.png");
            write_mosaic(path, torch::cat(tiles, 0), layout);
            return kOk;
        }

        if (sched_cmd->parsed()) {
            int stages = 0;
            std::int64_t per_phase = 0;
            int base = 4;
            BatchSchedule batches;
            if (!sched_common.config.empty()) {
                const auto cfg = resolve(sched_common);
                if (cfg.family != Family::cpggan) throw InvalidConfig("inspect-schedule needs a cpggan config");
                stages = cfg.architecture.levels();
                per_phase = cfg.progressive.images_per_phase;
                base = cfg.architecture.base_resolution;
                batches = cfg.progressive.batches;
            }
            if (sched_stages) stages = *sched_stages;
            if (sched_images) per_phase = *sched_images;
            if (stages < 1 || per_phase < 1)
                throw InvalidConfig("give a cpggan config or --stages and --images-per-phase");
            out << format_phase_table(phase_table(stages, per_phase, base, batches));
            return kOk;
        }
    } catch (const InvalidConfig& e) {
        err << "invalid config: " << e.what() << '\n';
        return kValidationError;
    } catch (const InvalidArgument& e) {
        err << "invalid argument: " << e.what() << '\n';
        return kValidationError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntimeFailure;
    }
    return kValidationError;
}

}  // namespace matchgan::cli
