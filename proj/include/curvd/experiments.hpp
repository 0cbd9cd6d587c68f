#ifndef CURVD_EXPERIMENTS_HPP
#define CURVD_EXPERIMENTS_HPP

// Training runs with a per-epoch curvature hook, and the three studies built
// on them: spiral dynamics, label-corruption detection, score comparison.
// Every artifact is a pure function of the ExperimentConfig.

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "curvature.hpp"
#include "datasets.hpp"
#include "error.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "report_io.hpp"

namespace curvd {

enum class DatasetKind { mnist, spiral, fixture };

/// Two Gaussian blobs in the plane, one per class, for small end-to-end runs.
struct FixtureConfig {
    int per_class = 20;
    double separation = 4.0; // distance between blob centres
    double sigma = 0.5;
    /// Redraw points closer than this to an earlier point (0 disables).
    double min_spacing = 0.0;
};

struct DatasetConfig {
    DatasetKind kind = DatasetKind::spiral;
    std::string mnist_dir = "data/mnist";
    std::size_t subset = 0; // 0 keeps everything
    SpiralConfig spiral;
    FixtureConfig fixture;
};

struct ModelConfig {
    std::vector<int> hidden_widths;
    bool batchnorm = false;
};

struct ExperimentConfig {
    DatasetConfig dataset;
    ModelConfig model;
    OptimizerConfig optimizer;
    int epochs = 1;
    std::size_t batch_size = 0; // 0 = full batch
    CurvatureConfig curvature;
    int stride = 1;
    std::optional<double> corruption_fraction;
    std::uint64_t seed = 0;
    /// Scoring workers; 0 defers to CURVD_THREADS / hardware concurrency.
    unsigned threads = 0;

    void validate() const
    {
        if (epochs < 1)
            throw ConfigError("epochs must be >= 1");
        if (stride < 1)
            throw ConfigError("stride must be >= 1");
        if (dataset.kind == DatasetKind::spiral)
            dataset.spiral.validate();
        if (dataset.kind == DatasetKind::fixture && dataset.fixture.per_class < 1)
            throw ConfigError("fixture per_class must be >= 1");
        for (int w : model.hidden_widths)
            if (w < 1)
                throw ConfigError("hidden widths must be >= 1");
        optimizer.validate();
        curvature.validate();
        if (corruption_fraction && !(*corruption_fraction > 0.0 && *corruption_fraction < 1.0))
            throw ConfigError("corruption fraction must lie in (0, 1)");
    }
};

// ---------------------------------------------------------------------------
// JSON mapping

NLOHMANN_JSON_SERIALIZE_ENUM(DatasetKind, {{DatasetKind::mnist, "mnist"},
                                           {DatasetKind::spiral, "spiral"},
                                           {DatasetKind::fixture, "fixture"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PerturbSpace, {{PerturbSpace::raw_pixel, "raw_pixel"},
                                            {PerturbSpace::model_input, "model_input"}})
NLOHMANN_JSON_SERIALIZE_ENUM(SpiralNoise, {{SpiralNoise::coordinate, "coordinate"},
                                           {SpiralNoise::label, "label"}})

inline void to_json(nlohmann::json& j, const ExperimentConfig& c)
{
    const auto& s = c.dataset.spiral;
    const auto& f = c.dataset.fixture;
    j = {
        {"dataset",
         {{"kind", c.dataset.kind},
          {"mnist_dir", c.dataset.mnist_dir},
          {"subset", c.dataset.subset},
          {"spiral",
           {{"points_per_class_train", s.points_per_class_train},
            {"points_per_class_test", s.points_per_class_test},
            {"noise_fraction", s.noise_fraction},
            {"noise_sigma", s.noise_sigma},
            {"noise", s.noise},
            {"seed", s.seed}}},
          {"fixture",
           {{"per_class", f.per_class},
            {"separation", f.separation},
            {"sigma", f.sigma},
            {"min_spacing", f.min_spacing}}}}},
        {"model", {{"hidden_widths", c.model.hidden_widths}, {"batchnorm", c.model.batchnorm}}},
        {"optimizer",
         {{"learning_rate", c.optimizer.learning_rate},
          {"momentum", c.optimizer.momentum},
          {"weight_decay", c.optimizer.weight_decay},
          {"lr_schedule", c.optimizer.lr_schedule}}},
        {"epochs", c.epochs},
        {"batch_size", c.batch_size},
        {"curvature",
         {{"probes", c.curvature.probes},
          {"step", c.curvature.step},
          {"space", c.curvature.space},
          {"probe_seed", c.curvature.probe_seed},
          {"stride", c.stride}}},
        {"corruption_fraction", c.corruption_fraction ? nlohmann::json(*c.corruption_fraction) : nlohmann::json()},
        {"seed", c.seed},
    };
}

namespace detail {

/// Enum from its JSON name; unknown names are errors instead of falling back
/// to the first enumerator.
template <typename E>
E enum_from(const nlohmann::json& j)
{
    const E e = j.get<E>();
    if (nlohmann::json(e) != j)
        throw ConfigError("config: unknown value " + j.dump());
    return e;
}

} // namespace detail

/// Reads a config; absent keys keep the values already in `c`.
inline void merge_json(const nlohmann::json& j, ExperimentConfig& c)
{
    try {
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            if (d.contains("kind")) c.dataset.kind = detail::enum_from<DatasetKind>(d.at("kind"));
            if (d.contains("mnist_dir")) c.dataset.mnist_dir = d.at("mnist_dir").get<std::string>();
            if (d.contains("subset")) c.dataset.subset = d.at("subset").get<std::size_t>();
            if (d.contains("spiral")) {
                const auto& s = d.at("spiral");
                auto& t = c.dataset.spiral;
                t.points_per_class_train = s.value("points_per_class_train", t.points_per_class_train);
                t.points_per_class_test = s.value("points_per_class_test", t.points_per_class_test);
                t.noise_fraction = s.value("noise_fraction", t.noise_fraction);
                t.noise_sigma = s.value("noise_sigma", t.noise_sigma);
                if (s.contains("noise")) t.noise = detail::enum_from<SpiralNoise>(s.at("noise"));
                t.seed = s.value("seed", t.seed);
            }
            if (d.contains("fixture")) {
                const auto& f = d.at("fixture");
                auto& t = c.dataset.fixture;
                t.per_class = f.value("per_class", t.per_class);
                t.separation = f.value("separation", t.separation);
                t.sigma = f.value("sigma", t.sigma);
                t.min_spacing = f.value("min_spacing", t.min_spacing);
            }
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            c.model.hidden_widths = m.value("hidden_widths", c.model.hidden_widths);
            c.model.batchnorm = m.value("batchnorm", c.model.batchnorm);
        }
        if (j.contains("optimizer")) {
            const auto& o = j.at("optimizer");
            c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
            c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
            c.optimizer.weight_decay = o.value("weight_decay", c.optimizer.weight_decay);
            c.optimizer.lr_schedule = o.value("lr_schedule", c.optimizer.lr_schedule);
        }
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("curvature")) {
            const auto& v = j.at("curvature");
            c.curvature.probes = v.value("probes", c.curvature.probes);
            c.curvature.step = v.value("step", c.curvature.step);
            if (v.contains("space")) c.curvature.space = detail::enum_from<PerturbSpace>(v.at("space"));
            c.curvature.probe_seed = v.value("probe_seed", c.curvature.probe_seed);
            c.stride = v.value("stride", c.stride);
        }
        if (j.contains("corruption_fraction")) {
            const auto& f = j.at("corruption_fraction");
            c.corruption_fraction = f.is_null() ? std::nullopt : std::optional<double>(f.get<double>());
        }
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
}

inline std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// FNV-1a of the canonical config JSON (thread count excluded).
inline std::string config_digest(const ExperimentConfig& c)
{
    const std::string text = nlohmann::json(c).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return hex64(h);
}

// ---------------------------------------------------------------------------
// Presets

/// 2-D two-spiral toy: 15+15 training points (30% jittered), 100+100 clean
/// test points; six batch-normed hidden layers; one full batch per epoch.
inline ExperimentConfig spiral_preset(std::uint64_t seed)
{
    ExperimentConfig c;
    c.dataset.kind = DatasetKind::spiral;
    c.dataset.spiral.seed = seed;
    c.model.hidden_widths = {100, 100, 500, 200, 100, 1000};
    c.model.batchnorm = true;
    c.optimizer = {0.1, 0.9, 5e-4, {}};
    c.epochs = 150;
    c.batch_size = 0;
    c.curvature.probe_seed = derive_seed(seed, 0x70726f6265);
    c.seed = seed;
    return c;
}

/// MNIST label-corruption run on the dense 784-512-512-10 substitute network.
inline ExperimentConfig mnist_corruption_preset(std::uint64_t seed, double fraction)
{
    ExperimentConfig c;
    c.dataset.kind = DatasetKind::mnist;
    c.model.hidden_widths = {512, 512};
    c.model.batchnorm = false;
    c.epochs = 30;
    c.optimizer = {0.1, 0.9, 1e-4, {{16, 0.1}, {24, 0.01}}};
    c.batch_size = 128;
    c.corruption_fraction = fraction;
    c.curvature.probe_seed = derive_seed(seed, 0x70726f6265);
    c.seed = seed;
    return c;
}

/// 40-point two-blob fixture with 10% of each class flipped.
inline ExperimentConfig fixture_corruption_preset(std::uint64_t seed)
{
    ExperimentConfig c;
    c.dataset.kind = DatasetKind::fixture;
    c.dataset.fixture = {20, 4.0, 0.6, 0.4};
    c.model.hidden_widths = {128, 128};
    c.optimizer = {0.05, 0.9, 1e-4, {}};
    c.epochs = 1000;
    c.batch_size = 0;
    c.corruption_fraction = 0.1;
    c.curvature.probe_seed = derive_seed(seed, 0x70726f6265);
    c.stride = 10;
    c.seed = seed;
    return c;
}

// ---------------------------------------------------------------------------
// Data preparation

struct TrainingData {
    Dataset train; // labels as trained on (after corruption)
    std::optional<Dataset> heldout;
    std::optional<CorruptionMask> mask;
    Normalizer normalizer;
    /// Samples to track separately in the history (corrupted or noised).
    std::vector<bool> flagged;
};

inline Dataset make_fixture(const FixtureConfig& f, std::uint64_t seed)
{
    Stream rng = make_stream(seed, 0x666978);
    Dataset ds;
    ds.provenance = Provenance::synthetic;
    ds.num_classes = 2;
    ds.inputs.resize(2, 2 * f.per_class);
    for (int k = 0; k < 2; ++k)
        for (int i = 0; i < f.per_class; ++i) {
            const int col = k * f.per_class + i;
            const double centre = (k == 0 ? -0.5 : 0.5) * f.separation;
            for (int attempt = 0;; ++attempt) {
                if (attempt == 10000)
                    throw ConfigError("fixture: cannot place points " + std::to_string(f.min_spacing) + " apart");
                ds.inputs(0, col) = centre + f.sigma * standard_normal(rng);
                ds.inputs(1, col) = f.sigma * standard_normal(rng);
                bool clear = true;
                for (int j = 0; j < col && clear; ++j)
                    clear = (ds.inputs.col(j) - ds.inputs.col(col)).norm() >= f.min_spacing;
                if (clear)
                    break;
            }
            ds.labels.push_back(k);
        }
    return ds;
}

inline TrainingData prepare_data(const ExperimentConfig& cfg)
{
    TrainingData data;
    switch (cfg.dataset.kind) {
    case DatasetKind::mnist:
        data.train = load_mnist_dir(cfg.dataset.mnist_dir);
        if (cfg.dataset.subset > 0)
            data.train = balanced_subset(data.train, cfg.dataset.subset);
        data.normalizer = mnist_normalizer;
        break;
    case DatasetKind::spiral: {
        auto split = gen_spiral(cfg.dataset.spiral);
        data.train = std::move(split.train);
        data.heldout = std::move(split.test);
        data.flagged = std::move(split.noised);
        break;
    }
    case DatasetKind::fixture:
        data.train = make_fixture(cfg.dataset.fixture, cfg.seed);
        break;
    }
    data.train.validate();
    if (cfg.corruption_fraction) {
        auto corrupted = corrupt_labels(data.train, *cfg.corruption_fraction, derive_seed(cfg.seed, 0x6d61736b));
        data.train = std::move(corrupted.dataset);
        data.flagged = corrupted.mask.corrupted;
        data.mask = std::move(corrupted.mask);
    }
    return data;
}

// ---------------------------------------------------------------------------
// Training

struct HistoryRow {
    int epoch = 0;
    double train_loss = 0.0;
    std::optional<double> heldout_loss;
    double train_accuracy = 0.0;
    std::optional<double> curvature_train;
    std::optional<double> curvature_heldout;
    std::optional<double> curvature_flagged;
};

using RunHistory = std::vector<HistoryRow>;

struct TrainingResult {
    CurvatureLedger ledger{0};
    RunHistory history;
    Network network;
    ScoreReport curvature;
    ScoreReport inconfidence;
};

struct Evaluation {
    double mean_loss = 0.0;
    double accuracy = 0.0;
    std::vector<double> inconfidence;
};

/// Evaluation-mode loss, accuracy and per-sample inconfidence.
inline Evaluation evaluate(const Network& net, const Matrix& model_inputs, std::span<const int> labels)
{
    Evaluation ev;
    const Eigen::Index n = model_inputs.cols();
    ev.inconfidence.resize(static_cast<std::size_t>(n));
    constexpr Eigen::Index chunk = 1024;
    double total = 0.0;
    std::size_t correct = 0;
    for (Eigen::Index start = 0; start < n; start += chunk) {
        const Eigen::Index len = std::min(chunk, n - start);
        const Matrix logits = forward_batch(net, model_inputs.middleCols(start, len));
        for (Eigen::Index j = 0; j < len; ++j) {
            const auto i = static_cast<std::size_t>(start + j);
            const double l = loss(logits.col(j), labels[i]);
            total += l;
            ev.inconfidence[i] = -std::expm1(-l);
            Eigen::Index arg;
            logits.col(j).maxCoeff(&arg);
            correct += arg == labels[i];
        }
    }
    if (n > 0) {
        ev.mean_loss = total / static_cast<double>(n);
        ev.accuracy = static_cast<double>(correct) / static_cast<double>(n);
    }
    return ev;
}

inline NetworkSpec network_spec_for(const ExperimentConfig& cfg, const Dataset& ds)
{
    NetworkSpec spec;
    spec.layer_widths.push_back(static_cast<int>(ds.dim()));
    for (int w : cfg.model.hidden_widths)
        spec.layer_widths.push_back(w);
    spec.num_classes = ds.num_classes;
    if (cfg.model.batchnorm)
        spec.use_batchnorm.assign(cfg.model.hidden_widths.size(), true);
    return spec;
}

/// Progress callback, invoked after each epoch.
using EpochLogger = std::function<void(const HistoryRow&)>;

struct RunOptions {
    bool keep_epoch_scores = false;
    EpochLogger logger;
};

inline TrainingResult run_training(const ExperimentConfig& cfg, const TrainingData& data, RunOptions options = {})
{
    cfg.validate();
    const Dataset& train = data.train;
    const std::size_t n = train.size();
    if (n == 0)
        throw ConfigError("training set is empty");

    const NetworkSpec spec = network_spec_for(cfg, train);
    Network net = init_network(spec, derive_seed(cfg.seed, 0x696e6974));
    Gradients velocity = zeros_like(net);
    const Matrix model_train = data.normalizer.apply(train.inputs);
    const std::optional<Matrix> model_heldout =
        data.heldout ? std::optional<Matrix>(data.normalizer.apply(data.heldout->inputs)) : std::nullopt;
    const std::size_t batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
    const PassOptions pass{8, cfg.threads == 0 ? default_threads() : cfg.threads};

    CurvatureConfig heldout_curv = cfg.curvature;
    heldout_curv.probe_seed = derive_seed(cfg.curvature.probe_seed, 0x68656c64);

    TrainingResult result;
    result.ledger = CurvatureLedger(n, options.keep_epoch_scores);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i)
        order[i] = i;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Stream shuffle_rng = make_stream(cfg.seed, 0x73687566, static_cast<std::uint64_t>(epoch));
        shuffle(std::span<std::size_t>(order), shuffle_rng);
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t len = std::min(batch, n - start);
            std::vector<Eigen::Index> cols(len);
            std::vector<int> labels(len);
            for (std::size_t k = 0; k < len; ++k) {
                cols[k] = static_cast<Eigen::Index>(order[start + k]);
                labels[k] = train.labels[order[start + k]];
            }
            const Matrix inputs = model_train(Eigen::all, cols);
            train_step(net, inputs, labels, cfg.optimizer, velocity, epoch);
        }

        // Scoring and evaluation see the network with batch-norm statistics
        // of the whole (un-augmented) training set.
        recalibrate_batchnorm(net, model_train);
        net.mode = Mode::evaluation;
        HistoryRow row;
        row.epoch = epoch;
        const Evaluation ev = evaluate(net, model_train, train.labels);
        row.train_loss = ev.mean_loss;
        row.train_accuracy = ev.accuracy;
        if (model_heldout)
            row.heldout_loss = evaluate(net, *model_heldout, data.heldout->labels).mean_loss;
        if (!std::isfinite(row.train_loss) || (row.heldout_loss && !std::isfinite(*row.heldout_loss)))
            throw DivergenceError("loss became non-finite at epoch " + std::to_string(epoch));

        if (epoch % cfg.stride == 0) {
            const auto scores = score_epoch(net, data.normalizer, train.inputs, train.labels, cfg.curvature, epoch, pass);
            std::optional<double> heldout_mean;
            if (data.heldout) {
                const auto held = score_epoch(net, data.normalizer, data.heldout->inputs, data.heldout->labels,
                                              heldout_curv, epoch, pass);
                double total = 0.0;
                for (double s : held)
                    total += s;
                heldout_mean = total / static_cast<double>(held.size());
            }
            result.ledger.accumulate(scores, epoch, heldout_mean, data.flagged);
            const LedgerRow& lr = result.ledger.history().back();
            row.curvature_train = lr.train_mean;
            row.curvature_heldout = lr.heldout_mean;
            row.curvature_flagged = lr.flagged_mean;
        }
        result.history.push_back(row);
        if (options.logger)
            options.logger(row);
        net.mode = Mode::training;
    }

    net.mode = Mode::evaluation;
    std::optional<std::vector<bool>> corrupted;
    if (data.mask)
        corrupted = data.mask->corrupted;
    const std::string digest = config_digest(cfg);
    if (result.ledger.epochs() == 0)
        throw ConfigError("stride " + std::to_string(cfg.stride) + " exceeds the epoch count; nothing was scored");
    result.curvature = make_report(result.ledger.finalize(), train.labels, ScoreKind::curvature, corrupted);
    result.curvature.epochs_averaged = result.ledger.epochs();
    result.curvature.config_digest = digest;
    result.inconfidence =
        make_report(evaluate(net, model_train, train.labels).inconfidence, train.labels, ScoreKind::inconfidence, corrupted);
    result.inconfidence.config_digest = digest;
    result.network = std::move(net);
    return result;
}

inline TrainingResult run_training(const ExperimentConfig& cfg, RunOptions options = {})
{
    return run_training(cfg, prepare_data(cfg), std::move(options));
}

// ---------------------------------------------------------------------------
// Spiral dynamics

struct TrendVerdict {
    int peak_epoch = 0;
    double peak_curvature = 0.0;
    double final_curvature = 0.0;
    std::optional<double> heldout_first;
    std::optional<double> heldout_last;
    bool rise_then_fall = false;
    bool heldout_increasing = false;
};

/// Rise-then-fall: the per-epoch mean train curvature peaks at an epoch m
/// with 3 <= m <= 0.8 T and ends below that peak.
inline TrendVerdict trend_verdict(const RunHistory& history, int total_epochs)
{
    TrendVerdict v;
    bool any = false;
    for (const auto& row : history) {
        if (!row.curvature_train)
            continue;
        if (!any || *row.curvature_train > v.peak_curvature) {
            v.peak_curvature = *row.curvature_train;
            v.peak_epoch = row.epoch;
        }
        v.final_curvature = *row.curvature_train;
        if (row.curvature_heldout) {
            if (!v.heldout_first)
                v.heldout_first = row.curvature_heldout;
            v.heldout_last = row.curvature_heldout;
        }
        any = true;
    }
    if (!any)
        return v;
    v.rise_then_fall = v.peak_epoch >= 3 && v.peak_epoch <= 0.8 * total_epochs && v.final_curvature < v.peak_curvature;
    v.heldout_increasing = v.heldout_first && v.heldout_last && *v.heldout_last > *v.heldout_first;
    return v;
}

struct SpiralResult {
    TrainingResult run;
    TrendVerdict verdict;
};

inline SpiralResult run_spiral_dynamics(const ExperimentConfig& cfg, RunOptions options = {})
{
    if (cfg.dataset.kind != DatasetKind::spiral)
        throw ConfigError("spiral dynamics needs a spiral dataset");
    SpiralResult r{run_training(cfg, std::move(options)), {}};
    r.verdict = trend_verdict(r.run.history, cfg.epochs);
    return r;
}

// ---------------------------------------------------------------------------
// Label corruption

constexpr double memorization_accuracy = 0.995;
constexpr int histogram_bins = 30;

struct CorruptionResult {
    TrainingResult run;
    CorruptionMask mask;
    double train_accuracy = 0.0;
    bool memorized = false;
    double auroc_curvature = 0.0;
    double auroc_inconfidence = 0.0;
    /// Median over corrupted samples of their rank fraction (0 = top).
    double corrupted_median_rank = 0.0;
    double corrupted_mean = 0.0;
    double clean_mean = 0.0;
    Histogram histogram;
    Histogram histogram_corrupted;
};

inline CorruptionResult summarize_corruption(TrainingResult run, CorruptionMask mask)
{
    CorruptionResult r;
    const auto& scores = run.curvature.scores;
    r.train_accuracy = run.history.back().train_accuracy;
    r.memorized = r.train_accuracy >= memorization_accuracy;
    const std::vector<bool>& flags = mask.corrupted;
    r.auroc_curvature = auroc(scores, flags);
    r.auroc_inconfidence = auroc(run.inconfidence.scores, flags);

    const auto ranks = rank_fraction(scores);
    std::vector<double> corrupted_ranks, corrupted_scores, clean_scores;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (flags[i]) {
            corrupted_ranks.push_back(ranks[i]);
            corrupted_scores.push_back(scores[i]);
        } else {
            clean_scores.push_back(scores[i]);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        double t = 0.0;
        for (double x : v)
            t += x;
        return v.empty() ? 0.0 : t / static_cast<double>(v.size());
    };
    r.corrupted_median_rank = median(corrupted_ranks);
    r.corrupted_mean = mean(corrupted_scores);
    r.clean_mean = mean(clean_scores);

    double lo = 0.0, hi = 0.0;
    bool any = false;
    for (double s : scores)
        if (s > 0.0) {
            lo = any ? std::min(lo, s) : s;
            hi = any ? std::max(hi, s) : s;
            any = true;
        }
    std::optional<std::pair<double, double>> range;
    if (any) range.emplace(lo, hi);
    r.histogram = histogram(scores, histogram_bins, BinScale::log, range);
    r.histogram_corrupted = histogram(corrupted_scores, histogram_bins, BinScale::log, range);
    r.run = std::move(run);
    r.mask = std::move(mask);
    return r;
}

inline CorruptionResult run_corruption_experiment(const ExperimentConfig& cfg, RunOptions options = {})
{
    if (!cfg.corruption_fraction)
        throw ConfigError("corruption experiment needs a corruption fraction");
    TrainingData data = prepare_data(cfg);
    CorruptionMask mask = *data.mask;
    return summarize_corruption(run_training(cfg, data, std::move(options)), std::move(mask));
}

// ---------------------------------------------------------------------------
// Score comparison

struct CompareResult {
    std::size_t samples = 0;
    double cosine = 0.0;
    std::vector<std::pair<std::size_t, double>> topk; // (k, cosine)
};

inline CompareResult compare_scores(const ScoreReport& ours, const ScoreReport& reference, std::vector<std::size_t> ks)
{
    detail::check_aligned(ours, reference);
    CompareResult r;
    r.samples = ours.size();
    r.cosine = cosine_similarity(ours.scores, reference.scores);
    for (auto k : ks)
        r.topk.emplace_back(k, topk_cosine(ours, reference, k));
    return r;
}

/// Top-K sizes used when none are requested: 5000 for CIFAR-100-sized
/// files, else a tenth of the samples; N itself is always included.
inline std::vector<std::size_t> default_topk(std::size_t samples)
{
    std::vector<std::size_t> ks;
    const std::size_t k = samples >= 50000 ? 5000 : std::max<std::size_t>(1, samples / 10);
    if (k < samples)
        ks.push_back(k);
    ks.push_back(samples);
    return ks;
}

// ---------------------------------------------------------------------------
// Artifacts

inline void write_history_csv(const RunHistory& history, const std::filesystem::path& path)
{
    auto out = detail::open_output(path);
    out << "epoch,train_loss,heldout_loss,train_accuracy,curvature_train,curvature_heldout,curvature_flagged\n";
    for (const auto& r : history)
        out << r.epoch << ',' << format_double(r.train_loss) << ',' << format_optional(r.heldout_loss) << ','
            << format_double(r.train_accuracy) << ',' << format_optional(r.curvature_train) << ','
            << format_optional(r.curvature_heldout) << ',' << format_optional(r.curvature_flagged) << '\n';
}

inline void write_json(const nlohmann::json& j, const std::filesystem::path& path)
{
    auto out = detail::open_output(path);
    out << j.dump(2) << '\n';
}

inline nlohmann::json histogram_json(const Histogram& h)
{
    return {{"scale", h.scale == BinScale::log ? "log" : "linear"},
            {"edges", h.edges},
            {"counts", h.counts},
            {"underflow", h.underflow}};
}

inline nlohmann::json run_metadata(const ExperimentConfig& cfg, const TrainingResult& run)
{
    nlohmann::json j = {{"config", cfg},
                        {"config_digest", config_digest(cfg)},
                        {"epochs", cfg.epochs},
                        {"epochs_scored", run.ledger.epochs()},
                        {"samples", run.curvature.size()},
                        {"final_train_loss", run.history.back().train_loss},
                        {"final_train_accuracy", run.history.back().train_accuracy}};
    if (cfg.dataset.kind == DatasetKind::mnist)
        j["network_note"] = "dense ReLU substitute for the ResNet18 used at full scale";
    return j;
}

inline void write_run_artifacts(const TrainingResult& run, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    write_score_csv(run.curvature, dir / "scores_curvature.csv");
    write_score_csv(run.inconfidence, dir / "scores_inconfidence.csv");
    write_history_csv(run.history, dir / "history.csv");
}

inline nlohmann::json spiral_summary(const ExperimentConfig& cfg, const SpiralResult& r)
{
    nlohmann::json j = run_metadata(cfg, r.run);
    j["experiment"] = "spiral";
    const auto& v = r.verdict;
    j["trend"] = {{"peak_epoch", v.peak_epoch},
                  {"peak_curvature", v.peak_curvature},
                  {"final_curvature", v.final_curvature},
                  {"rise_then_fall", v.rise_then_fall},
                  {"heldout_first", v.heldout_first ? nlohmann::json(*v.heldout_first) : nlohmann::json()},
                  {"heldout_last", v.heldout_last ? nlohmann::json(*v.heldout_last) : nlohmann::json()},
                  {"heldout_increasing", v.heldout_increasing}};
    return j;
}

inline nlohmann::json corruption_summary(const ExperimentConfig& cfg, const CorruptionResult& r)
{
    nlohmann::json j = run_metadata(cfg, r.run);
    j["experiment"] = "corrupt";
    j["corruption"] = {{"fraction", r.mask.fraction},
                       {"corrupted", r.mask.count()},
                       {"status", r.memorized ? "memorized" : "not memorized"},
                       {"memorized", r.memorized},
                       {"train_accuracy", r.train_accuracy},
                       {"auroc_curvature", r.auroc_curvature},
                       {"auroc_inconfidence", r.auroc_inconfidence},
                       {"corrupted_median_rank_fraction", r.corrupted_median_rank},
                       {"corrupted_mean_curvature", r.corrupted_mean},
                       {"clean_mean_curvature", r.clean_mean}};
    j["histogram"] = histogram_json(r.histogram);
    j["histogram"]["corrupted_counts"] = r.histogram_corrupted.counts;
    j["histogram"]["corrupted_underflow"] = r.histogram_corrupted.underflow;
    return j;
}

inline nlohmann::json compare_summary(const CompareResult& r)
{
    nlohmann::json topk = nlohmann::json::array();
    for (const auto& [k, cs] : r.topk)
        topk.push_back({{"k", k}, {"cosine", cs}});
    return {{"experiment", "compare"}, {"samples", r.samples}, {"cosine", r.cosine}, {"topk", topk}};
}

} // namespace curvd

#endif // CURVD_EXPERIMENTS_HPP
