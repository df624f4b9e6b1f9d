#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest_torch.hpp"

#include "matchgan/data.hpp"
#include "matchgan/errors.hpp"

using namespace matchgan;
namespace fs = std::filesystem;

namespace {

CaptionedImage gradient_image(int h, int w) {
    CaptionedImage img;
    img.height = h;
    img.width = w;
    img.pixels.resize(static_cast<std::size_t>(h) * w * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = -1.0f + 2.0f * static_cast<float>((y * 7 + x * 3 + c * 11) % 29) / 28.0f;
    img.embeddings = {{1.0f, 2.0f}};
    return img;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    double ab = 0, aa = 0, bb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("matchgan_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

SyntheticOptions small_options(int classes = 4, int per_class = 10) {
    SyntheticOptions o;
    o.num_classes = classes;
    o.images_per_class = per_class;
    o.image_size = 16;
    o.embedding_dim = 8;
    o.seed = 42;
    return o;
}

}  // namespace

TEST_CASE("augmentation multiplies the flowers training split by ninety-six") {
    CHECK(kAugmentVariants == 96);
    CHECK(7034 * kAugmentVariants == 675264);
}

TEST_CASE("variant zero is the identity") {
    const auto img = gradient_image(16, 16);
    CHECK(augment(img, 0).pixels == img.pixels);
}

TEST_CASE("variant one is a pure horizontal flip") {
    const auto img = gradient_image(16, 16);
    CHECK(augment(img, 1).pixels == flip_horizontal(img).pixels);
}

TEST_CASE("flipping twice restores the image") {
    const auto img = gradient_image(12, 20);
    CHECK(flip_horizontal(flip_horizontal(img)).pixels == img.pixels);
}

TEST_CASE("all ninety-six variants of a non-constant image are distinct") {
    for (int size : {16, 64}) {
        const auto img = gradient_image(size, size);
        std::set<std::vector<float>> seen;
        for (int v = 0; v < kAugmentVariants; ++v) {
            const auto out = augment(img, v);
            CHECK(out.height == img.height);
            CHECK(out.width == img.width);
            CHECK(out.embeddings == img.embeddings);
            const auto [lo, hi] = std::minmax_element(out.pixels.begin(), out.pixels.end());
            CHECK(*lo >= -1.0f);
            CHECK(*hi <= 1.0f);
            seen.insert(out.pixels);
        }
        CHECK(seen.size() == 96);
    }
}

TEST_CASE("crop shifts stay within an eighth of each side") {
    const auto img = gradient_image(64, 64);
    for (int v = 0; v < kAugmentVariants; v += 2) {
        const auto out = augment(img, v);
        // the centre pixel must come from within 8 pixels of the centre
        bool found = false;
        for (int dy = -8; dy <= 8 && !found; ++dy)
            for (int dx = -8; dx <= 8 && !found; ++dx) {
                bool same = true;
                for (int c = 0; c < 3; ++c) same = same && out.at(32, 32, c) == img.at(32 + dy, 32 + dx, c);
                found = same;
            }
        CHECK(found);
    }
}

TEST_CASE("augmentation variants outside the range are rejected") {
    const auto img = gradient_image(8, 8);
    CHECK_THROWS_AS(augment(img, -1), InvalidArgument);
    CHECK_THROWS_AS(augment(img, 96), InvalidArgument);
}

TEST_CASE("synthetic dataset has the requested cardinality and disjoint classes") {
    const auto ds = make_synthetic_dataset(SyntheticOptions{4, 50, 16, 16, 1, 5});
    CHECK(ds.size() == 200);
    CHECK(ds.class_ids().size() == 4);
    CHECK(std::set<int>(ds.class_ids().begin(), ds.class_ids().end()).size() == 4);
    for (int c : ds.class_ids()) CHECK(ds.indices_of_class(c).size() == 50);
    for (const auto& img : ds.images()) {
        CHECK_NOTHROW(validate(img));
        CHECK(img.embeddings.size() == 5);
    }
}

TEST_CASE("synthetic dataset is a pure function of its seed") {
    const auto a = make_synthetic_dataset(small_options());
    const auto b = make_synthetic_dataset(small_options());
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.images()[i].pixels == b.images()[i].pixels);
        CHECK(a.images()[i].embeddings == b.images()[i].embeddings);
        CHECK(a.images()[i].class_id == b.images()[i].class_id);
    }
    auto other = small_options();
    other.seed = 43;
    const auto c = make_synthetic_dataset(other);
    bool differs = false;
    for (std::size_t i = 0; i < a.size(); ++i) differs = differs || a.images()[i].embeddings != c.images()[i].embeddings;
    CHECK(differs);
}

TEST_CASE("captions of one class are closer to each other than to other classes") {
    const auto ds = make_synthetic_dataset(SyntheticOptions{6, 12, 16, 16, 5, 5});
    std::vector<std::pair<int, const std::vector<float>*>> all;
    for (const auto& img : ds.images())
        for (const auto& e : img.embeddings) all.emplace_back(img.class_id, &e);
    double within = 0, across = 0;
    long n_within = 0, n_across = 0;
    for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = i + 1; j < all.size(); ++j) {
            const double s = cosine(*all[i].second, *all[j].second);
            if (all[i].first == all[j].first) {
                within += s;
                ++n_within;
            } else {
                across += s;
                ++n_across;
            }
        }
    MESSAGE("within " << within / n_within << " across " << across / n_across);
    CHECK(within / n_within > across / n_across);
}

TEST_CASE("each synthetic class has its own look") {
    const auto ds = make_synthetic_dataset(small_options(6, 3));
    std::set<std::vector<float>> first_images;
    for (int c : ds.class_ids()) first_images.insert(ds.images()[ds.indices_of_class(c).front()].pixels);
    CHECK(first_images.size() == 6);
}

TEST_CASE("synthetic options are checked") {
    CHECK_THROWS_AS(make_synthetic_dataset(SyntheticOptions{0, 5, 16, 16, 1, 5}), InvalidArgument);
    CHECK_THROWS_AS(make_synthetic_dataset(SyntheticOptions{8, 5, 16, 4, 1, 5}), InvalidArgument);
    CHECK_THROWS_AS(make_synthetic_dataset(SyntheticOptions{49, 1, 16, 64, 1, 5}), InvalidArgument);
}

TEST_CASE("two-class batches always mismatch with the other class") {
    const auto ds = make_synthetic_dataset(small_options(2, 10));
    Rng rng(1);
    const auto b = sample_batch(ds, 64, 8, rng);
    for (int i = 0; i < 64; ++i) {
        const int c = b.class_ids[i].item<int>();
        CHECK(b.mismatch_class_ids[i] == 1 - c);
    }
}

TEST_CASE("batch tensors have the documented layout") {
    const auto ds = make_synthetic_dataset(small_options());
    Rng rng(2);
    const auto b = sample_batch(ds, 5, 7, rng, true);
    CHECK(b.images.sizes() == torch::IntArrayRef{5, 3, 16, 16});
    CHECK(b.matched_embeddings.sizes() == torch::IntArrayRef{5, 8});
    CHECK(b.mismatched_embeddings.sizes() == torch::IntArrayRef{5, 8});
    CHECK(b.noise.sizes() == torch::IntArrayRef{5, 7});
    CHECK(b.images.dtype() == torch::kFloat32);
    CHECK(b.images.abs().max().item<float>() <= 1.0f);
    CHECK(b.size() == 5);
}

TEST_CASE("matched captions belong to the image's class and mismatched ones never do") {
    const auto ds = make_synthetic_dataset(small_options(5, 8));
    std::map<std::vector<float>, int> owner;
    for (const auto& img : ds.images())
        for (const auto& e : img.embeddings) owner[e] = img.class_id;
    Rng rng(3);
    for (int round = 0; round < 20; ++round) {
        const auto b = sample_batch(ds, 32, 4, rng);
        for (int i = 0; i < 32; ++i) {
            const auto row = [&](const torch::Tensor& t) {
                const auto r = t[i].contiguous();
                return std::vector<float>(r.data_ptr<float>(), r.data_ptr<float>() + r.numel());
            };
            const int c = b.class_ids[i].item<int>();
            CHECK(owner.at(row(b.matched_embeddings)) == c);
            CHECK(owner.at(row(b.mismatched_embeddings)) == b.mismatch_class_ids[i]);
            CHECK(b.mismatch_class_ids[i] != c);
        }
    }
}

TEST_CASE("mismatch sources are uniform over classes") {
    const auto ds = make_synthetic_dataset(small_options(4, 10));
    Rng rng(4);
    std::map<int, int> counts;
    const int total = 10000;
    for (int k = 0; k < total / 100; ++k) {
        const auto b = sample_batch(ds, 100, 1, rng);
        for (int c : b.mismatch_class_ids) ++counts[c];
    }
    for (auto [c, n] : counts) {
        const double freq = static_cast<double>(n) / total;
        CAPTURE(c);
        CHECK(std::abs(freq - 0.25) <= 0.05 * 0.25);
    }
}

TEST_CASE("noise is standard normal") {
    Rng rng(5);
    const auto z = normal_noise(20000, 10, rng).to(torch::kFloat64);
    CHECK(std::abs(z.mean().item<double>()) < 0.01);
    CHECK(std::abs(z.std().item<double>() - 1.0) < 0.01);
}

TEST_CASE("same random state gives the same batch") {
    const auto ds = make_synthetic_dataset(small_options());
    Rng a(9), b(9);
    const auto x = sample_batch(ds, 16, 8, a, true);
    const auto y = sample_batch(ds, 16, 8, b, true);
    CHECK(torch::equal(x.images, y.images));
    CHECK(torch::equal(x.matched_embeddings, y.matched_embeddings));
    CHECK(torch::equal(x.mismatched_embeddings, y.mismatched_embeddings));
    CHECK(torch::equal(x.noise, y.noise));
    CHECK(x.mismatch_class_ids == y.mismatch_class_ids);
}

TEST_CASE("a single class cannot form mismatched pairs") {
    const auto ds = make_synthetic_dataset(small_options(3, 4)).subset({1}, Split::train);
    Rng rng(0);
    CHECK_THROWS_AS(sample_batch(ds, 4, 4, rng), CannotFormMismatch);
}

TEST_CASE("class split leaves disjoint manifests") {
    const auto ds = make_synthetic_dataset(small_options(5, 4));
    const auto [train, test] = split_by_class(ds, 2);
    CHECK(train.class_ids().size() == 3);
    CHECK(test.class_ids().size() == 2);
    CHECK(test.manifest().split == Split::test);
    CHECK_NOTHROW(check_disjoint(train.manifest(), test.manifest()));
    CHECK_THROWS_AS(check_disjoint(train.manifest(), train.manifest()), InvalidArgument);
    CHECK_THROWS_AS(split_by_class(ds, 5), InvalidArgument);
}

TEST_CASE("downsampling averages blocks") {
    const auto ds = make_synthetic_dataset(small_options(2, 2));
    const auto small = ds.downsampled(4);
    CHECK(small.image_size() == 4);
    const auto& big = ds.images()[0];
    const auto& s = small.images()[0];
    double acc = 0;
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) acc += big.at(4 + y, 8 + x, 1);
    CHECK(s.at(1, 2, 1) == doctest::Approx(acc / 16).epsilon(1e-6));
    CHECK_THROWS_AS(ds.downsampled(6), InvalidArgument);
}

TEST_CASE("embedding files round-trip exactly") {
    TempDir dir("emb");
    const std::vector<std::vector<float>> e = {{1.5f, -2.25f, 3.0f}, {0.0f, 1e-7f, -1e7f}};
    write_embeddings(dir.path / "x.emb", e);
    CHECK(read_embeddings(dir.path / "x.emb") == e);
    CHECK(fs::file_size(dir.path / "x.emb") == 4 + 4 + 4 + 6 * 4);
    std::ofstream(dir.path / "bad.emb") << "NOPE";
    CHECK_THROWS_AS(read_embeddings(dir.path / "bad.emb"), IoError);
}

TEST_CASE("manifests round-trip") {
    TempDir dir("manifest");
    DatasetManifest m;
    m.root = dir.path / "data";
    m.split = Split::test;
    m.image_size = 32;
    m.embedding_dim = 12;
    m.class_ids = {3, 7, 11};
    write_manifest(m, dir.path / "manifest.txt");
    const auto r = read_manifest(dir.path / "manifest.txt");
    CHECK(fs::weakly_canonical(r.root) == fs::weakly_canonical(m.root));
    CHECK(r.split == m.split);
    CHECK(r.image_size == 32);
    CHECK(r.embedding_dim == 12);
    CHECK(r.class_ids == m.class_ids);
    std::ofstream(dir.path / "bad.txt") << "colour=blue\n";
    CHECK_THROWS_AS(read_manifest(dir.path / "bad.txt"), InvalidArgument);
    CHECK_THROWS_AS(read_manifest(dir.path / "missing.txt"), IoError);
}

TEST_CASE("datasets saved to disk load back up to PNG quantisation") {
    TempDir dir("dataset");
    const auto ds = make_synthetic_dataset(small_options(3, 4));
    save_dataset(ds, dir.path);
    const auto back = load_dataset(dir.path / "manifest.txt");
    REQUIRE(back.size() == ds.size());
    CHECK(back.class_ids() == ds.class_ids());
    for (std::size_t i = 0; i < ds.size(); ++i) {
        const auto& a = ds.images()[i];
        const auto& b = back.images()[i];
        CHECK(a.class_id == b.class_id);
        CHECK(a.embeddings == b.embeddings);
        double worst = 0;
        for (std::size_t k = 0; k < a.pixels.size(); ++k) worst = std::max(worst, std::abs(double(a.pixels[k]) - b.pixels[k]));
        CHECK(worst <= 1.0 / 255 + 1e-6);
    }
}

TEST_CASE("invalid images are rejected") {
    auto img = gradient_image(4, 4);
    CHECK_NOTHROW(validate(img));
    img.pixels[5] = 1.5f;
    CHECK_THROWS_AS(validate(img), InvalidArgument);
    img = gradient_image(4, 4);
    img.embeddings.clear();
    CHECK_THROWS_AS(validate(img), InvalidArgument);
    img = gradient_image(4, 4);
    img.embeddings.push_back({1.0f});
    CHECK_THROWS_AS(validate(img), InvalidArgument);
}
