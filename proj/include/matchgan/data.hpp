#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <torch/types.h>

#include "matchgan/random.hpp"

namespace matchgan {

// An RGB image stored row-major as height x width x 3 with values in [-1, 1],
// together with its precomputed caption embeddings.
struct CaptionedImage {
    int height = 0;
    int width = 0;
    std::vector<float> pixels;
    std::vector<std::vector<float>> embeddings;
    int class_id = 0;

    float at(int y, int x, int c) const { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    float& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
    std::size_t embedding_dim() const { return embeddings.empty() ? 0 : embeddings.front().size(); }
};

// Throws InvalidArgument when pixel range, embedding list or dimensions are off.
void validate(const CaptionedImage& image);

enum class Split { train, test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct DatasetManifest {
    std::filesystem::path root;
    Split split = Split::train;
    int image_size = 0;
    int embedding_dim = 0;
    std::set<int> class_ids;
};

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
// Relative `root` entries are resolved against the manifest's directory.
DatasetManifest read_manifest(const std::filesystem::path& path);

// Throws InvalidArgument when the two manifests share a class.
void check_disjoint(const DatasetManifest& train, const DatasetManifest& test);

// Immutable collection of captioned images with a per-class index.
class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<CaptionedImage> images, DatasetManifest manifest);

    const std::vector<CaptionedImage>& images() const { return images_; }
    const DatasetManifest& manifest() const { return manifest_; }
    std::size_t size() const { return images_.size(); }
    int image_size() const { return manifest_.image_size; }
    int embedding_dim() const { return manifest_.embedding_dim; }
    const std::vector<int>& class_ids() const { return classes_; }
    const std::vector<std::size_t>& indices_of_class(int class_id) const;

    // Keeps only the listed classes; the manifest is updated to match.
    Dataset subset(const std::set<int>& classes, Split split) const;

    // Average-pools every image down to `resolution` (must divide the
    // current size by a power of two).
    Dataset downsampled(int resolution) const;

private:
    std::vector<CaptionedImage> images_;
    DatasetManifest manifest_;
    std::vector<int> classes_;
    std::vector<std::vector<std::size_t>> by_class_;
};

// Splits off the last `test_classes` classes (by sorted class id) as the test split.
std::pair<Dataset, Dataset> split_by_class(const Dataset& dataset, int test_classes);

// ---------------------------------------------------------------------------
// Augmentation: 48 crop offsets (8 horizontal x 6 vertical) x 2 flip states.
// Variant 0 is the identity and variant 1 a pure horizontal flip. Offsets are
// taken in steps of max(1, W/32) horizontally and max(1, H/24) vertically so
// the largest shift is 12.5% of the side; uncovered border pixels replicate
// the edge.

inline constexpr int kCropOffsets = 48;
inline constexpr int kAugmentVariants = kCropOffsets * 2;

CaptionedImage augment(const CaptionedImage& image, int variant_index);
CaptionedImage flip_horizontal(const CaptionedImage& image);

// ---------------------------------------------------------------------------

struct SyntheticOptions {
    int num_classes = 4;
    int images_per_class = 50;
    int image_size = 16;
    int embedding_dim = 16;
    std::uint64_t seed = 0;
    int captions_per_image = 5;
};

// Procedural desk-scale dataset: each class is a distinct (shape, colour)
// pair drawn on a plain background; caption embeddings are noisy copies of a
// per-class prototype. Supports up to 48 classes.
Dataset make_synthetic_dataset(const SyntheticOptions& options);

// Writes one directory per class holding NNNNN.png images and NNNNN.emb
// embedding files, plus `manifest.txt` at the root.
void save_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& manifest_path);

// Embedding file: "MGEM" magic, u32 count, u32 dim, then count*dim
// little-endian float32 values.
void write_embeddings(const std::filesystem::path& path, const std::vector<std::vector<float>>& embeddings);
std::vector<std::vector<float>> read_embeddings(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

// One training step's worth of triples. Tensors are float32; images are
// laid out N x 3 x H x W.
struct MatchingBatch {
    torch::Tensor images;
    torch::Tensor matched_embeddings;
    torch::Tensor mismatched_embeddings;
    torch::Tensor noise;
    torch::Tensor class_ids;
    std::vector<int> mismatch_class_ids;

    std::int64_t size() const { return images.size(0); }
};

// Matched captions are drawn uniformly among the image's captions; the
// mismatched caption comes from a uniformly chosen image of another class.
// With `augment` each image passes through a uniformly drawn variant.
MatchingBatch sample_batch(const Dataset& dataset, int batch_size, int noise_dim, Rng& rng,
                           bool augment = false);

// N x 3 x H x W tensor from images (all the same size).
torch::Tensor to_tensor(const std::vector<CaptionedImage>& images);
torch::Tensor to_tensor(const CaptionedImage& image);

// Standard-normal noise drawn from `rng`.
torch::Tensor normal_noise(std::int64_t rows, std::int64_t cols, Rng& rng);

}  // namespace matchgan
