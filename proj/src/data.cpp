#include "matchgan/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <torch/torch.h>

#include "matchgan/errors.hpp"
#include "matchgan/image_io.hpp"

namespace matchgan {

namespace fs = std::filesystem;

void validate(const CaptionedImage& image) {
    if (image.height <= 0 || image.width <= 0)
        throw InvalidArgument("image dimensions must be positive");
    if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width * 3)
        throw InvalidArgument("pixel buffer does not match height x width x 3");
    for (float v : image.pixels)
        if (!(v >= -1.0f && v <= 1.0f)) throw InvalidArgument("pixel value outside [-1, 1]");
    if (image.embeddings.empty()) throw InvalidArgument("image has no caption embeddings");
    const auto dim = image.embeddings.front().size();
    if (dim == 0) throw InvalidArgument("empty caption embedding");
    for (const auto& e : image.embeddings)
        if (e.size() != dim) throw InvalidArgument("caption embeddings differ in dimension");
    if (image.class_id < 0) throw InvalidArgument("negative class id");
}

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(const std::string& text) {
    if (text == "train") return Split::train;
    if (text == "test") return Split::test;
    throw InvalidArgument("unknown split '" + text + "'");
}

// ----------------------------------------------------------------------------
// Manifest

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << "root = " << manifest.root.string() << '\n';
    out << "split = " << to_string(manifest.split) << '\n';
    out << "image_size = " << manifest.image_size << '\n';
    out << "embedding_dim = " << manifest.embedding_dim << '\n';
    out << "classes =";
    bool first = true;
    for (int c : manifest.class_ids) {
        out << (first ? " " : ",") << c;
        first = false;
    }
    out << '\n';
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

int parse_int(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw InvalidArgument("cannot parse " + what + " '" + text + "'");
    }
}

}  // namespace

DatasetManifest read_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest " + path.string());
    DatasetManifest m;
    bool have_root = false;
    std::string line;
    while (std::getline(in, line)) {
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw InvalidArgument("malformed manifest line: " + line);
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (key == "root") {
            m.root = value;
            have_root = true;
        } else if (key == "split") {
            m.split = parse_split(value);
        } else if (key == "image_size") {
            m.image_size = parse_int(value, key);
        } else if (key == "embedding_dim") {
            m.embedding_dim = parse_int(value, key);
        } else if (key == "classes") {
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ','))
                if (!trim(item).empty()) m.class_ids.insert(parse_int(trim(item), "class id"));
        } else {
            throw InvalidArgument("unknown manifest key '" + key + "'");
        }
    }
    if (!have_root) m.root = ".";
    if (m.root.is_relative()) m.root = path.parent_path() / m.root;
    if (m.image_size <= 0 || m.embedding_dim <= 0)
        throw InvalidArgument("manifest needs positive image_size and embedding_dim");
    return m;
}

void check_disjoint(const DatasetManifest& train, const DatasetManifest& test) {
    for (int c : train.class_ids)
        if (test.class_ids.count(c))
            throw InvalidArgument("class " + std::to_string(c) + " appears in both train and test splits");
}

// ----------------------------------------------------------------------------
// Dataset

Dataset::Dataset(std::vector<CaptionedImage> images, DatasetManifest manifest)
    : images_(std::move(images)), manifest_(std::move(manifest)) {
    std::set<int> seen;
    for (const auto& img : images_) {
        validate(img);
        if (img.height != manifest_.image_size || img.width != manifest_.image_size)
            throw InvalidArgument("image size does not match manifest");
        if (static_cast<int>(img.embedding_dim()) != manifest_.embedding_dim)
            throw InvalidArgument("embedding dimension does not match manifest");
        seen.insert(img.class_id);
    }
    if (manifest_.class_ids.empty()) manifest_.class_ids = seen;
    for (int c : seen)
        if (!manifest_.class_ids.count(c))
            throw InvalidArgument("image class " + std::to_string(c) + " missing from manifest");
    classes_.assign(seen.begin(), seen.end());
    by_class_.resize(classes_.size());
    for (std::size_t i = 0; i < images_.size(); ++i) {
        const auto pos = std::lower_bound(classes_.begin(), classes_.end(), images_[i].class_id) - classes_.begin();
        by_class_[pos].push_back(i);
    }
}

const std::vector<std::size_t>& Dataset::indices_of_class(int class_id) const {
    const auto it = std::lower_bound(classes_.begin(), classes_.end(), class_id);
    if (it == classes_.end() || *it != class_id)
        throw InvalidArgument("class " + std::to_string(class_id) + " not in dataset");
    return by_class_[it - classes_.begin()];
}

Dataset Dataset::subset(const std::set<int>& classes, Split split) const {
    std::vector<CaptionedImage> kept;
    for (const auto& img : images_)
        if (classes.count(img.class_id)) kept.push_back(img);
    DatasetManifest m = manifest_;
    m.split = split;
    m.class_ids = classes;
    return Dataset(std::move(kept), std::move(m));
}

Dataset Dataset::downsampled(int resolution) const {
    const int size = manifest_.image_size;
    if (resolution <= 0 || resolution > size || size % resolution != 0 ||
        ((size / resolution) & (size / resolution - 1)) != 0)
        throw InvalidArgument("cannot downsample " + std::to_string(size) + " to " + std::to_string(resolution));
    const int f = size / resolution;
    if (f == 1) return *this;
    std::vector<CaptionedImage> out;
    out.reserve(images_.size());
    for (const auto& img : images_) {
        CaptionedImage small;
        small.height = small.width = resolution;
        small.pixels.assign(static_cast<std::size_t>(resolution) * resolution * 3, 0.0f);
        small.embeddings = img.embeddings;
        small.class_id = img.class_id;
        const float inv = 1.0f / static_cast<float>(f * f);
        for (int y = 0; y < resolution; ++y)
            for (int x = 0; x < resolution; ++x)
                for (int c = 0; c < 3; ++c) {
                    float acc = 0.0f;
                    for (int dy = 0; dy < f; ++dy)
                        for (int dx = 0; dx < f; ++dx) acc += img.at(y * f + dy, x * f + dx, c);
                    small.at(y, x, c) = std::clamp(acc * inv, -1.0f, 1.0f);
                }
        out.push_back(std::move(small));
    }
    DatasetManifest m = manifest_;
    m.image_size = resolution;
    return Dataset(std::move(out), std::move(m));
}

std::pair<Dataset, Dataset> split_by_class(const Dataset& dataset, int test_classes) {
    const auto& classes = dataset.class_ids();
    if (test_classes <= 0 || test_classes >= static_cast<int>(classes.size()))
        throw InvalidArgument("test split must leave at least one class on each side");
    const auto cut = classes.size() - static_cast<std::size_t>(test_classes);
    const std::set<int> train(classes.begin(), classes.begin() + static_cast<long>(cut));
    const std::set<int> test(classes.begin() + static_cast<long>(cut), classes.end());
    auto a = dataset.subset(train, Split::train);
    auto b = dataset.subset(test, Split::test);
    check_disjoint(a.manifest(), b.manifest());
    return {std::move(a), std::move(b)};
}

// ----------------------------------------------------------------------------
// Augmentation

namespace {

constexpr std::array<int, 8> kColumnSteps = {0, 1, 2, 3, -1, -2, -3, -4};
constexpr std::array<int, 6> kRowSteps = {0, 1, 2, -1, -2, -3};

}  // namespace

CaptionedImage flip_horizontal(const CaptionedImage& image) {
    CaptionedImage out = image;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(y, image.width - 1 - x, c);
    return out;
}

CaptionedImage augment(const CaptionedImage& image, int variant_index) {
    if (variant_index < 0 || variant_index >= kAugmentVariants)
        throw InvalidArgument("augmentation variant " + std::to_string(variant_index) + " outside [0, 96)");
    const bool flip = variant_index % 2 == 1;
    const int crop = variant_index / 2;
    const int dx = kColumnSteps[crop % 8] * std::max(1, image.width / 32);
    const int dy = kRowSteps[crop / 8] * std::max(1, image.height / 24);

    CaptionedImage out = image;
    for (int y = 0; y < image.height; ++y) {
        const int sy = std::clamp(y + dy, 0, image.height - 1);
        for (int x = 0; x < image.width; ++x) {
            const int xx = flip ? image.width - 1 - x : x;
            const int sx = std::clamp(xx + dx, 0, image.width - 1);
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = image.at(sy, sx, c);
        }
    }
    return out;
}

// ----------------------------------------------------------------------------
// Synthetic dataset

namespace {

enum class Shape { circle, square, triangle, diamond, cross, ring };
constexpr int kShapeCount = 6;

constexpr std::array<std::array<float, 3>, 8> kPalette = {{
    {0.9f, -0.8f, -0.8f},   // red
    {-0.8f, 0.85f, -0.8f},  // green
    {-0.7f, -0.6f, 0.95f},  // blue
    {0.95f, 0.9f, -0.85f},  // yellow
    {0.9f, -0.8f, 0.9f},    // magenta
    {-0.8f, 0.9f, 0.9f},    // cyan
    {0.95f, 0.2f, -0.9f},   // orange
    {0.95f, 0.95f, 0.95f},  // white
}};

bool inside(Shape shape, double u, double v) {
    // (u, v) are coordinates relative to the shape centre in units of its radius.
    switch (shape) {
        case Shape::circle: return u * u + v * v <= 1.0;
        case Shape::square: return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
        case Shape::triangle: return v <= 0.8 && v >= -1.0 + 2.0 * std::abs(u) * 0.9;
        case Shape::diamond: return std::abs(u) + std::abs(v) <= 1.0;
        case Shape::cross: return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
        case Shape::ring: {
            const double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.36;
        }
    }
    return false;
}

}  // namespace

Dataset make_synthetic_dataset(const SyntheticOptions& o) {
    if (o.num_classes <= 0 || o.images_per_class <= 0 || o.image_size <= 0 || o.embedding_dim <= 0 ||
        o.captions_per_image <= 0)
        throw InvalidArgument("synthetic dataset arguments must be positive");
    if (o.embedding_dim < o.num_classes) throw InvalidArgument("embedding_dim must be at least num_classes");
    if (o.num_classes > kShapeCount * static_cast<int>(kPalette.size()))
        throw InvalidArgument("at most 48 synthetic classes are supported");

    Rng rng(o.seed);
    const auto dim = static_cast<std::size_t>(o.embedding_dim);

    std::vector<std::vector<float>> prototypes(o.num_classes, std::vector<float>(dim));
    for (int c = 0; c < o.num_classes; ++c)
        for (std::size_t d = 0; d < dim; ++d)
            prototypes[c][d] = static_cast<float>((static_cast<int>(d) == c ? 2.0 : 0.0) + 0.4 * rng.normal());

    std::vector<CaptionedImage> images;
    images.reserve(static_cast<std::size_t>(o.num_classes) * o.images_per_class);
    const double s = o.image_size;
    for (int c = 0; c < o.num_classes; ++c) {
        const auto shape = static_cast<Shape>(c % kShapeCount);
        const auto& colour = kPalette[(c / kShapeCount + c) % kPalette.size()];
        for (int i = 0; i < o.images_per_class; ++i) {
            CaptionedImage img;
            img.height = img.width = o.image_size;
            img.class_id = c;
            img.pixels.resize(static_cast<std::size_t>(o.image_size) * o.image_size * 3);
            const float bg = static_cast<float>(-0.75 + 0.3 * rng.uniform());
            const double radius = s * (0.25 + 0.12 * rng.uniform());
            const double cx = s * (0.5 + 0.15 * (2.0 * rng.uniform() - 1.0));
            const double cy = s * (0.5 + 0.15 * (2.0 * rng.uniform() - 1.0));
            const float shade = static_cast<float>(0.9 + 0.1 * rng.uniform());
            for (int y = 0; y < o.image_size; ++y)
                for (int x = 0; x < o.image_size; ++x) {
                    const bool hit = inside(shape, (x + 0.5 - cx) / radius, (y + 0.5 - cy) / radius);
                    for (int ch = 0; ch < 3; ++ch)
                        img.at(y, x, ch) = hit ? std::clamp(colour[ch] * shade, -1.0f, 1.0f) : bg;
                }
            for (int k = 0; k < o.captions_per_image; ++k) {
                std::vector<float> e(dim);
                for (std::size_t d = 0; d < dim; ++d)
                    e[d] = prototypes[c][d] + static_cast<float>(0.5 * rng.normal());
                img.embeddings.push_back(std::move(e));
            }
            images.push_back(std::move(img));
        }
    }

    DatasetManifest m;
    m.root = ".";
    m.split = Split::train;
    m.image_size = o.image_size;
    m.embedding_dim = o.embedding_dim;
    for (int c = 0; c < o.num_classes; ++c) m.class_ids.insert(c);
    return Dataset(std::move(images), std::move(m));
}

// ----------------------------------------------------------------------------
// On-disk layout

namespace {

constexpr char kEmbeddingMagic[4] = {'M', 'G', 'E', 'M'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("truncated embedding file");
    return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
           static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

std::string class_dir_name(int class_id) {
    std::ostringstream ss;
    ss << "class_" << std::setw(3) << std::setfill('0') << class_id;
    return ss.str();
}

std::string item_name(std::size_t index) {
    std::ostringstream ss;
    ss << std::setw(5) << std::setfill('0') << index;
    return ss.str();
}

}  // namespace

void write_embeddings(const fs::path& path, const std::vector<std::vector<float>>& embeddings) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    const auto dim = embeddings.empty() ? 0 : embeddings.front().size();
    out.write(kEmbeddingMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(embeddings.size()));
    put_u32(out, static_cast<std::uint32_t>(dim));
    for (const auto& e : embeddings) {
        if (e.size() != dim) throw InvalidArgument("embeddings differ in dimension");
        for (float v : e) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    }
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<std::vector<float>> read_embeddings(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kEmbeddingMagic, 4) != 0)
        throw IoError("bad embedding magic in " + path.string());
    const auto count = get_u32(in);
    const auto dim = get_u32(in);
    std::vector<std::vector<float>> out(count, std::vector<float>(dim));
    for (auto& e : out)
        for (auto& v : e) {
            const auto bits = get_u32(in);
            std::memcpy(&v, &bits, 4);
        }
    return out;
}

void save_dataset(const Dataset& dataset, const fs::path& root) {
    fs::create_directories(root);
    std::vector<std::size_t> counter(dataset.class_ids().size(), 0);
    for (int c : dataset.class_ids()) {
        const auto dir = root / class_dir_name(c);
        fs::create_directories(dir);
        std::size_t n = 0;
        for (auto idx : dataset.indices_of_class(c)) {
            const auto& img = dataset.images()[idx];
            write_png(dir / (item_name(n) + ".png"), img.pixels, img.height, img.width);
            write_embeddings(dir / (item_name(n) + ".emb"), img.embeddings);
            ++n;
        }
    }
    DatasetManifest m = dataset.manifest();
    m.root = ".";
    write_manifest(m, root / "manifest.txt");
}

Dataset load_dataset(const fs::path& manifest_path) {
    const auto manifest = read_manifest(manifest_path);
    std::vector<CaptionedImage> images;
    for (int c : manifest.class_ids) {
        const auto dir = manifest.root / class_dir_name(c);
        if (!fs::is_directory(dir)) throw IoError("missing class directory " + dir.string());
        std::vector<fs::path> pngs;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.path().extension() == ".png") pngs.push_back(entry.path());
        std::sort(pngs.begin(), pngs.end());
        for (const auto& png : pngs) {
            auto rgb = read_png(png);
            CaptionedImage img;
            img.height = rgb.height;
            img.width = rgb.width;
            img.pixels = std::move(rgb.pixels);
            img.class_id = c;
            auto emb = png;
            emb.replace_extension(".emb");
            img.embeddings = read_embeddings(emb);
            images.push_back(std::move(img));
        }
    }
    return Dataset(std::move(images), manifest);
}

// ----------------------------------------------------------------------------
// Batches

torch::Tensor to_tensor(const CaptionedImage& image) {
    auto t = torch::empty({3, image.height, image.width}, torch::kFloat32);
    auto acc = t.accessor<float, 3>();
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < 3; ++c) acc[c][y][x] = image.at(y, x, c);
    return t;
}

torch::Tensor to_tensor(const std::vector<CaptionedImage>& images) {
    if (images.empty()) throw InvalidArgument("no images to convert");
    std::vector<torch::Tensor> parts;
    parts.reserve(images.size());
    for (const auto& img : images) parts.push_back(to_tensor(img));
    return torch::stack(parts);
}

torch::Tensor normal_noise(std::int64_t rows, std::int64_t cols, Rng& rng) {
    auto t = torch::empty({rows, cols}, torch::kFloat32);
    auto acc = t.accessor<float, 2>();
    for (std::int64_t i = 0; i < rows; ++i)
        for (std::int64_t j = 0; j < cols; ++j) acc[i][j] = static_cast<float>(rng.normal());
    return t;
}

namespace {

torch::Tensor embedding_row(const std::vector<float>& e) {
    return torch::from_blob(const_cast<float*>(e.data()), {static_cast<std::int64_t>(e.size())}, torch::kFloat32).clone();
}

}  // namespace

MatchingBatch sample_batch(const Dataset& dataset, int batch_size, int noise_dim, Rng& rng, bool augment_images) {
    if (dataset.class_ids().size() < 2)
        throw CannotFormMismatch("sample_batch needs at least two classes to form mismatched pairs");
    if (batch_size <= 0 || noise_dim <= 0) throw InvalidArgument("batch_size and noise_dim must be positive");

    const auto& classes = dataset.class_ids();
    const auto& images = dataset.images();
    std::vector<CaptionedImage> chosen;
    std::vector<torch::Tensor> matched, mismatched;
    std::vector<std::int64_t> labels;
    MatchingBatch batch;
    chosen.reserve(batch_size);

    for (int row = 0; row < batch_size; ++row) {
        const auto& img = images[rng.index(images.size())];
        matched.push_back(embedding_row(img.embeddings[rng.index(img.embeddings.size())]));
        labels.push_back(img.class_id);

        // Uniform over images outside img's class: index into the
        // concatenation of the other classes' index lists.
        const auto own = dataset.indices_of_class(img.class_id).size();
        auto k = rng.index(images.size() - own);
        const CaptionedImage* other = nullptr;
        for (int c : classes) {
            if (c == img.class_id) continue;
            const auto& members = dataset.indices_of_class(c);
            if (k < members.size()) {
                other = &images[members[k]];
                break;
            }
            k -= members.size();
        }
        mismatched.push_back(embedding_row(other->embeddings[rng.index(other->embeddings.size())]));
        batch.mismatch_class_ids.push_back(other->class_id);

        chosen.push_back(augment_images ? augment(img, static_cast<int>(rng.index(kAugmentVariants))) : img);
    }

    batch.images = to_tensor(chosen);
    batch.matched_embeddings = torch::stack(matched);
    batch.mismatched_embeddings = torch::stack(mismatched);
    batch.noise = normal_noise(batch_size, noise_dim, rng);
    batch.class_ids = torch::tensor(labels, torch::kInt64);
    return batch;
}

}  // namespace matchgan
