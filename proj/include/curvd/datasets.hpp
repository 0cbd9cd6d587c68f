#ifndef CURVD_DATASETS_HPP
#define CURVD_DATASETS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "curvature.hpp"
#include "error.hpp"
#include "nn.hpp"
#include "random.hpp"

namespace curvd {

enum class Provenance { mnist, spiral, synthetic };

inline const char* to_string(Provenance p)
{
    switch (p) {
    case Provenance::mnist: return "mnist";
    case Provenance::spiral: return "spiral";
    case Provenance::synthetic: return "synthetic";
    }
    return "?";
}

struct ImageShape {
    int rows = 0;
    int cols = 0;
};

/// Samples are the columns of `inputs` (D x N); sample i has index i.
struct Dataset {
    Matrix inputs;
    std::vector<int> labels;
    int num_classes = 2;
    Provenance provenance = Provenance::synthetic;
    std::optional<ImageShape> image;

    std::size_t size() const { return labels.size(); }
    Eigen::Index dim() const { return inputs.rows(); }

    void validate() const
    {
        if (static_cast<std::size_t>(inputs.cols()) != labels.size())
            throw ConsistencyError("dataset has " + std::to_string(inputs.cols()) + " inputs but " +
                                   std::to_string(labels.size()) + " labels");
        for (int y : labels)
            if (y < 0 || y >= num_classes)
                throw LabelError("dataset label " + std::to_string(y) + " outside [0, " +
                                 std::to_string(num_classes) + ")");
        if (image && (inputs.size() > 0) && (inputs.minCoeff() < 0.0 || inputs.maxCoeff() > 1.0))
            throw ConsistencyError("image dataset pixels must lie in [0, 1]");
    }
};

// ---------------------------------------------------------------------------
// MNIST IDX

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset,
                               const std::filesystem::path& path)
{
    if (bytes.size() < offset + 4)
        throw IoError(path.string() + ": truncated header");
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

} // namespace detail

constexpr std::uint32_t idx_images_magic = 0x00000803;
constexpr std::uint32_t idx_labels_magic = 0x00000801;

inline Dataset load_mnist_idx(const std::filesystem::path& image_path, const std::filesystem::path& label_path)
{
    const auto images = detail::read_file(image_path);
    const auto label_bytes = detail::read_file(label_path);

    if (detail::read_be32(images, 0, image_path) != idx_images_magic)
        throw FormatError(image_path.string() + ": not an IDX image file (bad magic)");
    if (detail::read_be32(label_bytes, 0, label_path) != idx_labels_magic)
        throw FormatError(label_path.string() + ": not an IDX label file (bad magic)");

    const std::uint32_t count = detail::read_be32(images, 4, image_path);
    const std::uint32_t rows = detail::read_be32(images, 8, image_path);
    const std::uint32_t cols = detail::read_be32(images, 12, image_path);
    const std::uint32_t label_count = detail::read_be32(label_bytes, 4, label_path);
    if (count != label_count)
        throw ConsistencyError("image file holds " + std::to_string(count) + " images, label file " +
                               std::to_string(label_count) + " labels");
    const std::size_t pixels = std::size_t{rows} * cols;
    if (images.size() < 16 + std::size_t{count} * pixels)
        throw IoError(image_path.string() + ": truncated pixel data");
    if (label_bytes.size() < 8 + std::size_t{count})
        throw IoError(label_path.string() + ": truncated label data");

    Dataset ds;
    ds.provenance = Provenance::mnist;
    ds.num_classes = 10;
    ds.image = ImageShape{static_cast<int>(rows), static_cast<int>(cols)};
    ds.inputs.resize(static_cast<Eigen::Index>(pixels), count);
    ds.labels.resize(count);
    for (std::uint32_t n = 0; n < count; ++n) {
        const unsigned char* px = images.data() + 16 + std::size_t{n} * pixels;
        for (std::size_t p = 0; p < pixels; ++p)
            ds.inputs(static_cast<Eigen::Index>(p), n) = px[p] / 255.0;
        ds.labels[n] = label_bytes[8 + n];
    }
    for (int y : ds.labels)
        ds.num_classes = std::max(ds.num_classes, y + 1);
    return ds;
}

/// Loads `train-images-idx3-ubyte` / `train-labels-idx1-ubyte` from dir.
inline Dataset load_mnist_dir(const std::filesystem::path& dir)
{
    return load_mnist_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
}

/// Keeps the first floor(n / C) samples of every class (fewer if a class is
/// short), preserving the original order.
inline Dataset balanced_subset(const Dataset& ds, std::size_t n)
{
    const std::size_t quota = n / static_cast<std::size_t>(ds.num_classes);
    std::vector<std::size_t> taken(static_cast<std::size_t>(ds.num_classes), 0);
    std::vector<Eigen::Index> keep;
    for (std::size_t i = 0; i < ds.size(); ++i) {
        auto& t = taken[static_cast<std::size_t>(ds.labels[i])];
        if (t < quota) {
            ++t;
            keep.push_back(static_cast<Eigen::Index>(i));
        }
    }
    Dataset out;
    out.num_classes = ds.num_classes;
    out.provenance = ds.provenance;
    out.image = ds.image;
    out.inputs = ds.inputs(Eigen::all, keep);
    for (auto i : keep)
        out.labels.push_back(ds.labels[static_cast<std::size_t>(i)]);
    return out;
}

// ---------------------------------------------------------------------------
// Two-arm spiral

enum class SpiralNoise {
    coordinate, // Gaussian jitter on the chosen points
    label,      // the chosen points get the other class
};

struct SpiralConfig {
    int points_per_class_train = 15;
    int points_per_class_test = 100;
    double noise_fraction = 0.3;
    double noise_sigma = 0.3;
    SpiralNoise noise = SpiralNoise::coordinate;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (points_per_class_train < 1 || points_per_class_test < 1)
            throw ConfigError("spiral: point counts must be >= 1");
        if (!(noise_fraction >= 0.0 && noise_fraction <= 1.0))
            throw ConfigError("spiral: noise_fraction must lie in [0, 1]");
        if (!(noise_sigma >= 0.0))
            throw ConfigError("spiral: noise_sigma must be >= 0");
    }
};

constexpr double spiral_theta_min = std::numbers::pi / 4.0;
constexpr double spiral_theta_max = 3.5 * std::numbers::pi;

/// Point of arm k at angle theta; radius grows linearly to 1 at theta_max.
inline std::array<double, 2> spiral_point(double theta, int arm)
{
    const double r = theta / spiral_theta_max;
    const double phase = theta + arm * std::numbers::pi;
    return {r * std::sin(phase), r * std::cos(phase)};
}

struct SpiralSplit {
    Dataset train;
    Dataset test;
    std::vector<bool> noised; // per train sample
};

namespace detail {

inline Dataset spiral_samples(int per_class, Stream& rng)
{
    Dataset ds;
    ds.provenance = Provenance::spiral;
    ds.num_classes = 2;
    ds.inputs.resize(2, 2 * per_class);
    ds.labels.resize(static_cast<std::size_t>(2 * per_class));
    for (int arm = 0; arm < 2; ++arm)
        for (int i = 0; i < per_class; ++i) {
            const auto [px, py] = spiral_point(uniform(rng, spiral_theta_min, spiral_theta_max), arm);
            const int col = arm * per_class + i;
            ds.inputs(0, col) = px;
            ds.inputs(1, col) = py;
            ds.labels[static_cast<std::size_t>(col)] = arm;
        }
    return ds;
}

} // namespace detail

inline SpiralSplit gen_spiral(const SpiralConfig& cfg)
{
    cfg.validate();
    Stream train_rng = make_stream(cfg.seed, 0x7370, 1);
    Stream test_rng = make_stream(cfg.seed, 0x7370, 2);
    Stream noise_rng = make_stream(cfg.seed, 0x7370, 3);
    SpiralSplit split{detail::spiral_samples(cfg.points_per_class_train, train_rng),
                      detail::spiral_samples(cfg.points_per_class_test, test_rng), {}};

    const std::size_t n = split.train.size();
    const auto noisy = static_cast<std::size_t>(std::floor(cfg.noise_fraction * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;
    shuffle(std::span<std::size_t>(order), noise_rng);
    split.noised.assign(n, false);
    for (std::size_t k = 0; k < noisy; ++k) {
        const auto i = order[k];
        split.noised[i] = true;
        if (cfg.noise == SpiralNoise::coordinate) {
            split.train.inputs(0, static_cast<Eigen::Index>(i)) += cfg.noise_sigma * standard_normal(noise_rng);
            split.train.inputs(1, static_cast<Eigen::Index>(i)) += cfg.noise_sigma * standard_normal(noise_rng);
        } else {
            split.train.labels[i] = 1 - split.train.labels[i];
        }
    }
    return split;
}

// ---------------------------------------------------------------------------
// Label corruption

struct CorruptionMask {
    std::vector<bool> corrupted;
    std::vector<int> original_labels; // for every sample
    std::vector<int> assigned_labels; // for every sample
    double fraction = 0.0;
    std::uint64_t seed = 0;

    std::size_t count() const { return static_cast<std::size_t>(std::count(corrupted.begin(), corrupted.end(), true)); }
};

struct Corrupted {
    Dataset dataset;
    CorruptionMask mask;
};

/// In every class, floor(fraction * class size) samples drawn by a seeded
/// shuffle get a label drawn uniformly from the other C - 1 classes.
inline Corrupted corrupt_labels(const Dataset& ds, double fraction, std::uint64_t seed)
{
    if (!(fraction > 0.0 && fraction < 1.0))
        throw ConfigError("corruption fraction must lie in (0, 1)");
    if (ds.num_classes < 2)
        throw ConfigError("corruption needs at least two classes");
    Corrupted out{ds, {}};
    auto& mask = out.mask;
    mask.fraction = fraction;
    mask.seed = seed;
    mask.corrupted.assign(ds.size(), false);
    mask.original_labels = ds.labels;
    Stream rng = make_stream(seed, 0x636f7272);
    for (int c = 0; c < ds.num_classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t i = 0; i < ds.size(); ++i)
            if (ds.labels[i] == c)
                members.push_back(i);
        shuffle(std::span<std::size_t>(members), rng);
        const auto flips = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(members.size())));
        for (std::size_t k = 0; k < flips; ++k) {
            const auto i = members[k];
            const auto draw = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(ds.num_classes - 1)));
            out.dataset.labels[i] = draw < c ? draw : draw + 1;
            mask.corrupted[i] = true;
        }
    }
    mask.assigned_labels = out.dataset.labels;
    return out;
}

// ---------------------------------------------------------------------------
// Normalization

/// Raw dataset plus the model-input view (x - mean) / std.
struct NormalizedView {
    const Dataset* raw = nullptr;
    Normalizer normalizer;
    Matrix model_inputs;
};

inline NormalizedView normalize(const Dataset& ds, double mean, double std)
{
    Normalizer norm{mean, std};
    norm.validate();
    return {&ds, norm, norm.apply(ds.inputs)};
}

inline Matrix denormalize(const NormalizedView& view)
{
    return view.normalizer.invert(view.model_inputs);
}

/// Canonical MNIST training-set pixel statistics.
constexpr Normalizer mnist_normalizer{0.1307, 0.3081};

} // namespace curvd

#endif // CURVD_DATASETS_HPP
