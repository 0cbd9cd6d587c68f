#ifndef CURVD_CURVATURE_HPP
#define CURVD_CURVATURE_HPP

// Input-loss curvature scores.
//
// For a sample x with label y and input gradient g(x) = dL/dx, the per-epoch
// score is the probe mean of |g(x + h v) - g(x)|^2 over Rademacher vectors v.
// Up to the dropped factor 1/h^2 that is a Hutchinson estimate of Tr(H^2),
// H being the input Hessian of the loss. The memorization score of a sample
// is the mean of its per-epoch scores over the epochs at which it was scored.
//
// Gradient sources are callables of the form
//     Matrix grad(const Matrix& points, std::span<const int> labels)
// returning one gradient column per point column. A network gradient is one
// such source; the tests plug in analytic quadratics.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "nn.hpp"
#include "parallel.hpp"
#include "random.hpp"

namespace curvd {

/// Where the ±h perturbation is applied.
enum class PerturbSpace {
    raw_pixel,   // on the [0,1] input, before mean/std normalization
    model_input, // on the normalized tensor the network consumes
};

struct CurvatureConfig {
    int probes = 10;
    double step = 1e-3;
    PerturbSpace space = PerturbSpace::raw_pixel;
    std::uint64_t probe_seed = 0;

    void validate() const
    {
        if (probes < 1)
            throw ConfigError("curvature: probe count must be >= 1");
        if (!(step > 0.0))
            throw ConfigError("curvature: step must be > 0");
    }
};

/// A vector with every entry exactly +1 or -1.
class DirectionVector {
public:
    explicit DirectionVector(Vector values) : values_(std::move(values))
    {
        for (Eigen::Index i = 0; i < values_.size(); ++i)
            if (values_(i) != 1.0 && values_(i) != -1.0)
                throw ConfigError("direction vector entries must be +1 or -1");
    }

    const Vector& values() const { return values_; }
    Eigen::Index size() const { return values_.size(); }
    DirectionVector operator-() const { return DirectionVector(-values_); }

private:
    Vector values_;
};

/// i.i.d. fair signs, one stream bit per entry.
inline DirectionVector sample_rademacher(Eigen::Index dim, Stream& rng)
{
    if (dim < 1)
        throw ConfigError("rademacher dimension must be >= 1");
    Vector v(dim);
    std::uint64_t bits = 0;
    for (Eigen::Index i = 0; i < dim; ++i) {
        if (i % 64 == 0)
            bits = rng();
        v(i) = (bits & 1u) ? 1.0 : -1.0;
        bits >>= 1;
    }
    return DirectionVector(std::move(v));
}

/// g(x + h v) - g(x): the unscaled finite-difference Hessian-vector product.
template <typename GradFn>
Vector hvp_fd(GradFn&& grad, const Vector& x, int label, const DirectionVector& v, double step)
{
    if (v.size() != x.size())
        throw ShapeError("direction has dimension " + std::to_string(v.size()) + ", input has " +
                         std::to_string(x.size()));
    Matrix points(x.size(), 2);
    points.col(0) = x;
    points.col(1) = x + step * v.values();
    const int labels[2] = {label, label};
    const Matrix g = grad(points, std::span<const int>(labels));
    if (g.rows() != x.size() || g.cols() != 2)
        throw ShapeError("gradient source returned the wrong shape");
    return g.col(1) - g.col(0);
}

namespace detail {

/// Fills columns [offset, offset + probes + 1) with x and its probes.
inline void write_probe_block(Matrix& points, Eigen::Index offset, const Eigen::Ref<const Vector>& x,
                              const CurvatureConfig& cfg, Stream& rng)
{
    points.col(offset) = x;
    for (int p = 0; p < cfg.probes; ++p)
        points.col(offset + 1 + p) = x + cfg.step * sample_rademacher(x.size(), rng).values();
}

/// Probe mean of |g_p - g_0|^2 for the block starting at offset.
inline double reduce_probe_block(const Matrix& grads, Eigen::Index offset, int probes)
{
    double total = 0.0;
    for (int p = 0; p < probes; ++p)
        total += (grads.col(offset + 1 + p) - grads.col(offset)).squaredNorm();
    return total / probes;
}

} // namespace detail

/// Per-epoch curvature of one sample: n fresh probes drawn from rng, with
/// g(x) evaluated once and shared by all of them (n + 1 gradient columns).
template <typename GradFn>
double curvature_single(GradFn&& grad, const Vector& x, int label, const CurvatureConfig& cfg, Stream& rng)
{
    cfg.validate();
    Matrix points(x.size(), cfg.probes + 1);
    detail::write_probe_block(points, 0, x, cfg, rng);
    const std::vector<int> labels(static_cast<std::size_t>(cfg.probes) + 1, label);
    const Matrix g = grad(points, std::span<const int>(labels));
    if (g.rows() != x.size() || g.cols() != points.cols())
        throw ShapeError("gradient source returned the wrong shape");
    return detail::reduce_probe_block(g, 0, cfg.probes);
}

/// Stream for sample `index` at `epoch`. Independent of scheduling.
inline Stream probe_stream(const CurvatureConfig& cfg, std::size_t index, int epoch)
{
    return make_stream(cfg.probe_seed, static_cast<std::uint64_t>(epoch), index);
}

struct PassOptions {
    /// Samples whose probes share one gradient call. Fixed so the arithmetic
    /// does not depend on the thread count.
    std::size_t samples_per_block = 8;
    unsigned threads = 1;
};

/// Per-epoch scores of every column of `inputs`, in column order.
template <typename GradFn>
std::vector<double> epoch_pass(GradFn&& grad, const Matrix& inputs, std::span<const int> labels,
                               const CurvatureConfig& cfg, int epoch, PassOptions options = {})
{
    cfg.validate();
    const auto count = static_cast<std::size_t>(inputs.cols());
    if (labels.size() != count)
        throw ShapeError("label count does not match sample count");
    std::vector<double> scores(count, 0.0);
    if (count == 0)
        return scores;
    const std::size_t per_block = std::max<std::size_t>(1, options.samples_per_block);
    const std::size_t blocks = (count + per_block - 1) / per_block;
    const Eigen::Index width = cfg.probes + 1;
    parallel_for(blocks, options.threads, [&](std::size_t block) {
        const std::size_t first = block * per_block;
        const std::size_t last = std::min(count, first + per_block);
        Matrix points(inputs.rows(), static_cast<Eigen::Index>(last - first) * width);
        std::vector<int> block_labels;
        block_labels.reserve(static_cast<std::size_t>(points.cols()));
        for (std::size_t i = first; i < last; ++i) {
            Stream rng = probe_stream(cfg, i, epoch);
            detail::write_probe_block(points, static_cast<Eigen::Index>(i - first) * width,
                                      inputs.col(static_cast<Eigen::Index>(i)), cfg, rng);
            block_labels.insert(block_labels.end(), static_cast<std::size_t>(width), labels[i]);
        }
        const Matrix g = grad(points, std::span<const int>(block_labels));
        if (g.rows() != points.rows() || g.cols() != points.cols())
            throw ShapeError("gradient source returned the wrong shape");
        for (std::size_t i = first; i < last; ++i)
            scores[i] = detail::reduce_probe_block(g, static_cast<Eigen::Index>(i - first) * width, cfg.probes);
    });
    return scores;
}

// ---------------------------------------------------------------------------
// Network gradient source

/// Per-feature affine map from raw inputs to model inputs, (x - mean) / std.
struct Normalizer {
    double mean = 0.0;
    double std = 1.0;

    void validate() const
    {
        if (!(std > 0.0))
            throw ConfigError("normalizer: std must be > 0");
    }
    Matrix apply(const Matrix& raw) const { return (raw.array() - mean) / std; }
    Matrix invert(const Matrix& model) const { return model.array() * std + mean; }
};

/// dL/d(input) of a frozen network. In raw_pixel space the points are raw
/// inputs and the gradient is taken with respect to them (chain rule through
/// the normalizer); in model_input space points feed the network directly.
class NetworkGradient {
public:
    NetworkGradient(const Network& net, Normalizer norm, PerturbSpace space)
        : net_(&net), norm_(norm), space_(space)
    {
        norm_.validate();
        if (net.mode != Mode::evaluation)
            for (const auto& bn : net.norms)
                if (bn)
                    throw ConfigError("curvature requires the network in evaluation mode");
    }

    Matrix operator()(const Matrix& points, std::span<const int> labels) const
    {
        if (space_ == PerturbSpace::model_input)
            return input_gradients(*net_, points, labels);
        return input_gradients(*net_, norm_.apply(points), labels) / norm_.std;
    }

private:
    const Network* net_;
    Normalizer norm_;
    PerturbSpace space_;
};

/// Per-epoch scores of a frozen network over raw samples (columns of `raw`).
inline std::vector<double> score_epoch(const Network& net, const Normalizer& norm, const Matrix& raw,
                                       std::span<const int> labels, const CurvatureConfig& cfg, int epoch,
                                       PassOptions options = {})
{
    const NetworkGradient grad(net, norm, cfg.space);
    if (cfg.space == PerturbSpace::model_input)
        return epoch_pass(grad, norm.apply(raw), labels, cfg, epoch, options);
    return epoch_pass(grad, raw, labels, cfg, epoch, options);
}

// ---------------------------------------------------------------------------
// Ledger

struct LedgerRow {
    int epoch = 0;
    double train_mean = 0.0;
    std::optional<double> heldout_mean;
    std::optional<double> flagged_mean;
};

/// Running per-sample sum of per-epoch scores.
class CurvatureLedger {
public:
    explicit CurvatureLedger(std::size_t samples, bool keep_epochs = false)
        : sums_(samples, 0.0), keep_epochs_(keep_epochs)
    {
    }

    /// Adds one epoch. `flagged` (optional, same length) selects the subset
    /// whose mean is logged separately.
    void accumulate(std::span<const double> scores, int epoch = 0,
                    std::optional<double> heldout_mean = std::nullopt,
                    const std::vector<bool>& flagged = {})
    {
        if (scores.size() != sums_.size())
            throw LedgerError("ledger holds " + std::to_string(sums_.size()) + " samples, got " +
                              std::to_string(scores.size()) + " scores");
        if (!flagged.empty() && flagged.size() != sums_.size())
            throw LedgerError("flag mask length does not match the ledger");
        LedgerRow row;
        row.epoch = epoch;
        row.heldout_mean = heldout_mean;
        double total = 0.0;
        double flagged_total = 0.0;
        std::size_t flagged_count = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (!(scores[i] >= 0.0))
                throw LedgerError("per-epoch score " + std::to_string(i) + " is negative or NaN");
            sums_[i] += scores[i];
            total += scores[i];
            if (!flagged.empty() && flagged[i]) {
                flagged_total += scores[i];
                ++flagged_count;
            }
        }
        row.train_mean = scores.empty() ? 0.0 : total / static_cast<double>(scores.size());
        if (flagged_count > 0)
            row.flagged_mean = flagged_total / static_cast<double>(flagged_count);
        history_.push_back(row);
        ++epochs_;
        if (keep_epochs_)
            per_epoch_.emplace_back(scores.begin(), scores.end());
    }

    /// Cumulative score: per-sample sum divided by the accumulated epoch count.
    std::vector<double> finalize() const
    {
        if (epochs_ == 0)
            throw LedgerError("cannot finalize a ledger with no accumulated epochs");
        std::vector<double> out(sums_.size());
        for (std::size_t i = 0; i < sums_.size(); ++i)
            out[i] = sums_[i] / static_cast<double>(epochs_);
        return out;
    }

    std::size_t samples() const { return sums_.size(); }
    int epochs() const { return epochs_; }
    const std::vector<LedgerRow>& history() const { return history_; }
    /// Stored per-epoch vectors; empty unless constructed with keep_epochs.
    const std::vector<std::vector<double>>& per_epoch() const { return per_epoch_; }

private:
    std::vector<double> sums_;
    int epochs_ = 0;
    bool keep_epochs_ = false;
    std::vector<LedgerRow> history_;
    std::vector<std::vector<double>> per_epoch_;
};

} // namespace curvd

#endif // CURVD_CURVATURE_HPP
