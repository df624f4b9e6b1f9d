#include "matchgan/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "matchgan/errors.hpp"

namespace matchgan {

namespace pt = boost::property_tree;

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::gan: return "gan";
        case LossKind::wasserstein_lp: return "wasserstein-lp";
        case LossKind::wasserstein_gp: return "wasserstein-gp";
        case LossKind::least_squares: return "least-squares";
    }
    return "?";
}

LossKind parse_loss_kind(const std::string& t) {
    for (auto k : {LossKind::gan, LossKind::wasserstein_lp, LossKind::wasserstein_gp, LossKind::least_squares})
        if (to_string(k) == t) return k;
    throw InvalidConfig("unknown loss kind '" + t + "'");
}

LossFamily loss_family(LossKind k) {
    switch (k) {
        case LossKind::gan: return LossFamily::gan;
        case LossKind::wasserstein_lp:
        case LossKind::wasserstein_gp: return LossFamily::wasserstein;
        case LossKind::least_squares: return LossFamily::least_squares;
    }
    return LossFamily::gan;
}

ExperimentConfig defaults_for(Family family) {
    ExperimentConfig c;
    c.family = family;
    c.architecture.family = family;
    switch (family) {
        case Family::gan_cls:
            c.architecture.max_resolution = 64;
            c.epochs = 600;
            break;
        case Family::stackgan_stage1:
            c.architecture.max_resolution = 64;
            c.loss.rho_kl = 1.0;
            c.epochs = 600;
            c.lr_halving_epochs = 100;
            break;
        case Family::stackgan_stage2:
            c.architecture.max_resolution = 256;
            c.loss.rho_kl = 1.0;
            c.batch_size = 32;
            c.epochs = 600;
            c.lr_halving_epochs = 100;
            break;
        case Family::wgan_cls:
            c.architecture.max_resolution = 64;
            c.loss.kind = LossKind::wasserstein_lp;
            c.loss.rho_kl = 10.0;
            c.optimizer = {1e-4, 3e-4, 0.0, 0.99};
            c.total_steps = 120000;
            break;
        case Family::cpggan:
            c.architecture.max_resolution = 256;
            c.loss.kind = LossKind::wasserstein_lp;
            c.loss.rho_kl = 8.0;
            c.optimizer = {1e-4, 1e-4, 0.0, 0.99};
            c.batch_size = 16;
            c.progressive.batches = {16, 8, 64};
            c.total_steps = 0;
            break;
    }
    c.data.image_size = c.architecture.max_resolution;
    return c;
}

void validate(const ExperimentConfig& c) {
    const auto lf = loss_family(c.loss.kind);
    switch (c.family) {
        case Family::gan_cls:
        case Family::stackgan_stage1:
        case Family::stackgan_stage2:
            if (lf != LossFamily::gan)
                throw InvalidConfig(to_string(c.family) + " requires loss.kind = gan (probability-head critic)");
            break;
        case Family::wgan_cls:
            if (lf != LossFamily::wasserstein)
                throw InvalidConfig("wgan-cls requires loss.kind = wasserstein-lp or wasserstein-gp");
            break;
        case Family::cpggan:
            if (lf == LossFamily::gan)
                throw InvalidConfig("cpggan requires loss.kind = wasserstein-lp, wasserstein-gp or least-squares");
            break;
    }
    if (c.architecture.family != c.family) throw InvalidConfig("architecture family differs from experiment family");
    try {
        validate(c.architecture);
    } catch (const InvalidArgument& e) {
        throw InvalidConfig(e.what());
    }
    if (c.architecture.critic_normalization == Normalization::batch && has_gradient_penalty(c.loss.kind))
        throw InvalidConfig("model.critic_normalization = batch cannot be combined with a gradient penalty");
    if (c.loss.alpha_match < 0 || c.loss.lambda_lp < 0 || c.loss.lambda_gp < 0 || c.loss.rho_kl < 0)
        throw InvalidConfig("alpha_match, lambda_lp, lambda_gp and rho_kl must be nonnegative");
    if (c.family == Family::gan_cls && c.loss.rho_kl != 0)
        throw InvalidConfig("gan-cls has no conditioning augmentation; rho_kl must be 0");
    const auto& o = c.optimizer;
    if (!(o.learning_rate_generator > 0) || !(o.learning_rate_critic > 0))
        throw InvalidConfig("learning rates must be positive");
    if (!(o.beta1 >= 0 && o.beta1 < 1) || !(o.beta2 >= 0 && o.beta2 < 1))
        throw InvalidConfig("beta1 and beta2 must lie in [0, 1)");
    if (c.n_critic < 1) throw InvalidConfig("n_critic must be at least 1");
    if (c.batch_size < 1) throw InvalidConfig("batch_size must be positive");
    if (c.total_steps < 0 || c.epochs < 0) throw InvalidConfig("total_steps and epochs must be nonnegative");
    // Progressive runs default to the growth schedule's length.
    if (c.family != Family::cpggan && c.total_steps == 0 && c.epochs == 0)
        throw InvalidConfig("set experiment.total_steps or experiment.epochs");
    if (c.lr_halving_period < 0 || c.lr_halving_epochs < 0) throw InvalidConfig("lr halving period must be nonnegative");
    if (c.checkpoint_every < 0) throw InvalidConfig("checkpoint_every must be nonnegative");
    if (c.progressive.images_per_phase <= 0) throw InvalidConfig("images_per_phase must be positive");
    if (c.progressive.batches.low_resolution_batch < 1 || c.progressive.batches.high_resolution_batch < 1)
        throw InvalidConfig("progressive batch sizes must be positive");

    const auto& d = c.data;
    if (d.manifest.empty()) {
        if (d.synthetic_classes < 2) throw InvalidConfig("synthetic data needs at least two classes");
        if (d.synthetic_test_classes < 0 || d.synthetic_test_classes > d.synthetic_classes - 2)
            throw InvalidConfig("synthetic_test_classes must leave at least two training classes");
        if (d.synthetic_images_per_class < 1) throw InvalidConfig("synthetic_images_per_class must be positive");
        if (d.synthetic_embedding_dim < d.synthetic_classes)
            throw InvalidConfig("synthetic_embedding_dim must be at least synthetic_classes");
    }
    if (c.family == Family::cpggan) {
        if (d.image_size < c.architecture.max_resolution || d.image_size % c.architecture.max_resolution != 0)
            throw InvalidConfig("data.image_size must be a power-of-two multiple of model.max_resolution");
    } else if (d.image_size != c.architecture.max_resolution) {
        throw InvalidConfig("data.image_size must equal model.max_resolution for " + to_string(c.family));
    }
    const auto& e = c.evaluation;
    if (e.samples < 1 || e.n_splits < 1 || e.samples % e.n_splits != 0)
        throw InvalidConfig("evaluation.samples must be a positive multiple of evaluation.n_splits");
    if (e.classifier_epochs < 1) throw InvalidConfig("classifier_epochs must be positive");
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

std::int64_t to_int(const std::string& v) {
    std::size_t used = 0;
    const auto r = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    const auto r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::invalid_argument(v);
}

std::vector<int> to_int_list(const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ','))
        if (item.find_first_not_of(" \t") != std::string::npos) out.push_back(static_cast<int>(to_int(item)));
    return out;
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"experiment.family", [](ExperimentConfig&, const std::string&) {}},
        {"experiment.seed", [](ExperimentConfig& c, const std::string& v) { c.seed = static_cast<std::uint64_t>(to_int(v)); }},
        {"experiment.total_steps", [](ExperimentConfig& c, const std::string& v) { c.total_steps = to_int(v); }},
        {"experiment.epochs", [](ExperimentConfig& c, const std::string& v) { c.epochs = to_double(v); }},
        {"experiment.checkpoint_every", [](ExperimentConfig& c, const std::string& v) { c.checkpoint_every = to_int(v); }},
        {"experiment.output_dir", [](ExperimentConfig& c, const std::string& v) { c.output_dir = v; }},

        {"data.manifest", [](ExperimentConfig& c, const std::string& v) { c.data.manifest = v; }},
        {"data.synthetic_classes", [](ExperimentConfig& c, const std::string& v) { c.data.synthetic_classes = static_cast<int>(to_int(v)); }},
        {"data.synthetic_images_per_class", [](ExperimentConfig& c, const std::string& v) { c.data.synthetic_images_per_class = static_cast<int>(to_int(v)); }},
        {"data.synthetic_embedding_dim", [](ExperimentConfig& c, const std::string& v) { c.data.synthetic_embedding_dim = static_cast<int>(to_int(v)); }},
        {"data.synthetic_test_classes", [](ExperimentConfig& c, const std::string& v) { c.data.synthetic_test_classes = static_cast<int>(to_int(v)); }},
        {"data.image_size", [](ExperimentConfig& c, const std::string& v) { c.data.image_size = static_cast<int>(to_int(v)); }},
        {"data.augment", [](ExperimentConfig& c, const std::string& v) { c.data.augment = to_bool(v); }},

        {"model.max_resolution", [](ExperimentConfig& c, const std::string& v) { c.architecture.max_resolution = static_cast<int>(to_int(v)); }},
        {"model.base_resolution", [](ExperimentConfig& c, const std::string& v) { c.architecture.base_resolution = static_cast<int>(to_int(v)); }},
        {"model.noise_dim", [](ExperimentConfig& c, const std::string& v) { c.architecture.noise_dim = static_cast<int>(to_int(v)); }},
        {"model.compressed_embed_dim", [](ExperimentConfig& c, const std::string& v) { c.architecture.compressed_embed_dim = static_cast<int>(to_int(v)); }},
        {"model.channel_schedule", [](ExperimentConfig& c, const std::string& v) { c.architecture.channel_schedule = to_int_list(v); }},
        {"model.full_scale", [](ExperimentConfig& c, const std::string& v) { c.architecture.full_scale = to_bool(v); }},
        {"model.noise_hack", [](ExperimentConfig& c, const std::string& v) { c.architecture.noise_hack = to_bool(v); }},
        {"model.noise_strength", [](ExperimentConfig& c, const std::string& v) { c.architecture.noise_strength = to_double(v); }},
        {"model.critic_normalization", [](ExperimentConfig& c, const std::string& v) { c.architecture.critic_normalization = parse_normalization(v); }},
        {"model.stage1_checkpoint", [](ExperimentConfig& c, const std::string& v) { c.stage1_checkpoint = v; }},

        {"loss.kind", [](ExperimentConfig& c, const std::string& v) { c.loss.kind = parse_loss_kind(v); }},
        {"loss.alpha_match", [](ExperimentConfig& c, const std::string& v) { c.loss.alpha_match = to_double(v); }},
        {"loss.lambda_lp", [](ExperimentConfig& c, const std::string& v) { c.loss.lambda_lp = to_double(v); }},
        {"loss.lambda_gp", [](ExperimentConfig& c, const std::string& v) { c.loss.lambda_gp = to_double(v); }},
        {"loss.rho_kl", [](ExperimentConfig& c, const std::string& v) { c.loss.rho_kl = to_double(v); }},
        {"loss.kl_direction", [](ExperimentConfig& c, const std::string& v) { c.loss.kl_direction = parse_kl_direction(v); }},
        {"loss.ls_a", [](ExperimentConfig& c, const std::string& v) { c.loss.ls_a = to_double(v); }},
        {"loss.ls_b", [](ExperimentConfig& c, const std::string& v) { c.loss.ls_b = to_double(v); }},
        {"loss.ls_c", [](ExperimentConfig& c, const std::string& v) { c.loss.ls_c = to_double(v); }},

        {"optimizer.lr_generator", [](ExperimentConfig& c, const std::string& v) { c.optimizer.learning_rate_generator = to_double(v); }},
        {"optimizer.lr_critic", [](ExperimentConfig& c, const std::string& v) { c.optimizer.learning_rate_critic = to_double(v); }},
        {"optimizer.beta1", [](ExperimentConfig& c, const std::string& v) { c.optimizer.beta1 = to_double(v); }},
        {"optimizer.beta2", [](ExperimentConfig& c, const std::string& v) { c.optimizer.beta2 = to_double(v); }},
        {"optimizer.n_critic", [](ExperimentConfig& c, const std::string& v) { c.n_critic = static_cast<int>(to_int(v)); }},
        {"optimizer.batch_size", [](ExperimentConfig& c, const std::string& v) {
             c.batch_size = static_cast<int>(to_int(v));
             c.progressive.batches.low_resolution_batch = c.batch_size;
         }},
        {"optimizer.lr_halving_period", [](ExperimentConfig& c, const std::string& v) { c.lr_halving_period = to_int(v); }},
        {"optimizer.lr_halving_epochs", [](ExperimentConfig& c, const std::string& v) { c.lr_halving_epochs = to_double(v); }},

        {"progressive.images_per_phase", [](ExperimentConfig& c, const std::string& v) { c.progressive.images_per_phase = to_int(v); }},
        {"progressive.batch_size_high_res", [](ExperimentConfig& c, const std::string& v) { c.progressive.batches.high_resolution_batch = static_cast<int>(to_int(v)); }},
        {"progressive.batch_threshold_resolution", [](ExperimentConfig& c, const std::string& v) { c.progressive.batches.threshold_resolution = static_cast<int>(to_int(v)); }},

        {"evaluation.samples", [](ExperimentConfig& c, const std::string& v) { c.evaluation.samples = static_cast<int>(to_int(v)); }},
        {"evaluation.n_splits", [](ExperimentConfig& c, const std::string& v) { c.evaluation.n_splits = static_cast<int>(to_int(v)); }},
        {"evaluation.classifier_epochs", [](ExperimentConfig& c, const std::string& v) { c.evaluation.classifier_epochs = static_cast<int>(to_int(v)); }},
        {"evaluation.conditioning", [](ExperimentConfig& c, const std::string& v) {
             if (v == "mean") c.evaluation.conditioning = EvalConditioning::mean;
             else if (v == "sample") c.evaluation.conditioning = EvalConditioning::sample;
             else throw std::invalid_argument(v);
         }},
    };
    return table;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw InvalidConfig(std::string("config syntax error: ") + e.what());
    }

    // Ordered key/value list: file entries first, then overrides.
    std::vector<std::pair<std::string, std::string>> entries;
    std::vector<std::string> unknown;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) {
            unknown.push_back(section);
            continue;
        }
        for (const auto& [key, value] : body) entries.emplace_back(section + "." + key, value.data());
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || o.substr(0, eq).find('.') == std::string::npos)
            throw InvalidConfig("override '" + o + "' is not section.key=value");
        entries.emplace_back(o.substr(0, eq), o.substr(eq + 1));
    }
    const auto& table = setters();
    for (const auto& [key, value] : entries)
        if (!table.count(key)) unknown.push_back(key);
    if (!unknown.empty()) {
        std::string msg = "unknown config keys:";
        for (const auto& k : unknown) msg += " " + k;
        throw InvalidConfig(msg);
    }

    Family family = Family::gan_cls;
    bool image_size_set = false;
    for (const auto& [key, value] : entries) {
        if (key == "experiment.family") {
            try {
                family = parse_family(value);
            } catch (const InvalidArgument& e) {
                throw InvalidConfig(e.what());
            }
        }
        if (key == "data.image_size") image_size_set = true;
    }

    ExperimentConfig cfg = defaults_for(family);
    for (const auto& [key, value] : entries) {
        try {
            table.at(key)(cfg, value);
        } catch (const InvalidConfig&) {
            throw;
        } catch (const std::exception&) {
            throw InvalidConfig("invalid value '" + value + "' for " + key);
        }
    }
    for (const auto& o : overrides) cfg.applied_overrides.push_back(o);
    if (!image_size_set) cfg.data.image_size = cfg.architecture.max_resolution;
    if (cfg.data.manifest.empty()) cfg.architecture.embedding_dim = cfg.data.synthetic_embedding_dim;
    validate(cfg);
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    auto cfg = parse_config(ss.str(), overrides);
    if (!cfg.data.manifest.empty() && cfg.data.manifest.is_relative())
        cfg.data.manifest = path.parent_path() / cfg.data.manifest;
    return cfg;
}

std::string to_ini(const ExperimentConfig& c) {
    std::ostringstream o;
    o.precision(17);
    const auto& a = c.architecture;
    o << "[experiment]\n"
      << "family = " << to_string(c.family) << '\n'
      << "seed = " << c.seed << '\n'
      << "total_steps = " << c.total_steps << '\n'
      << "epochs = " << c.epochs << '\n'
      << "checkpoint_every = " << c.checkpoint_every << '\n'
      << "output_dir = " << c.output_dir.string() << "\n\n";
    o << "[data]\n";
    if (!c.data.manifest.empty()) o << "manifest = " << c.data.manifest.string() << '\n';
    o << "synthetic_classes = " << c.data.synthetic_classes << '\n'
      << "synthetic_images_per_class = " << c.data.synthetic_images_per_class << '\n'
      << "synthetic_embedding_dim = " << c.data.synthetic_embedding_dim << '\n'
      << "synthetic_test_classes = " << c.data.synthetic_test_classes << '\n'
      << "image_size = " << c.data.image_size << '\n'
      << "augment = " << (c.data.augment ? "true" : "false") << "\n\n";
    o << "[model]\n"
      << "base_resolution = " << a.base_resolution << '\n'
      << "max_resolution = " << a.max_resolution << '\n'
      << "noise_dim = " << a.noise_dim << '\n'
      << "compressed_embed_dim = " << a.compressed_embed_dim << '\n'
      << "channel_schedule = ";
    const auto ch = a.channels();
    for (std::size_t i = 0; i < ch.size(); ++i) o << (i ? "," : "") << ch[i];
    o << '\n'
      << "full_scale = " << (a.full_scale ? "true" : "false") << '\n'
      << "noise_hack = " << (a.noise_hack ? "true" : "false") << '\n'
      << "noise_strength = " << a.noise_strength << '\n'
      << "critic_normalization = " << to_string(a.critic_normalization) << '\n';
    if (!c.stage1_checkpoint.empty()) o << "stage1_checkpoint = " << c.stage1_checkpoint.string() << '\n';
    o << "\n[loss]\n"
      << "kind = " << to_string(c.loss.kind) << '\n'
      << "alpha_match = " << c.loss.alpha_match << '\n'
      << "lambda_lp = " << c.loss.lambda_lp << '\n'
      << "lambda_gp = " << c.loss.lambda_gp << '\n'
      << "rho_kl = " << c.loss.rho_kl << '\n'
      << "kl_direction = " << to_string(c.loss.kl_direction) << '\n'
      << "ls_a = " << c.loss.ls_a << '\n'
      << "ls_b = " << c.loss.ls_b << '\n'
      << "ls_c = " << c.loss.ls_c << "\n\n";
    o << "[optimizer]\n"
      << "lr_generator = " << c.optimizer.learning_rate_generator << '\n'
      << "lr_critic = " << c.optimizer.learning_rate_critic << '\n'
      << "beta1 = " << c.optimizer.beta1 << '\n'
      << "beta2 = " << c.optimizer.beta2 << '\n'
      << "n_critic = " << c.n_critic << '\n'
      << "batch_size = " << c.batch_size << '\n'
      << "lr_halving_period = " << c.lr_halving_period << '\n'
      << "lr_halving_epochs = " << c.lr_halving_epochs << "\n\n";
    o << "[progressive]\n"
      << "images_per_phase = " << c.progressive.images_per_phase << '\n'
      << "batch_size_high_res = " << c.progressive.batches.high_resolution_batch << '\n'
      << "batch_threshold_resolution = " << c.progressive.batches.threshold_resolution << "\n\n";
    o << "[evaluation]\n"
      << "samples = " << c.evaluation.samples << '\n'
      << "n_splits = " << c.evaluation.n_splits << '\n'
      << "classifier_epochs = " << c.evaluation.classifier_epochs << '\n'
      << "conditioning = " << (c.evaluation.conditioning == EvalConditioning::mean ? "mean" : "sample") << '\n';
    return o.str();
}

}  // namespace matchgan
