#ifndef CURVD_METRICS_HPP
#define CURVD_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "nn.hpp"

namespace curvd {

enum class ScoreKind { curvature, inconfidence, external };

inline const char* to_string(ScoreKind k)
{
    switch (k) {
    case ScoreKind::curvature: return "curvature";
    case ScoreKind::inconfidence: return "inconfidence";
    case ScoreKind::external: return "external";
    }
    return "?";
}

/// Index-aligned per-sample scores, the unit of CSV exchange.
struct ScoreReport {
    std::vector<std::size_t> indices;
    std::vector<int> labels;
    std::optional<std::vector<bool>> corrupted;
    std::vector<double> scores;

    ScoreKind kind = ScoreKind::external;
    int epochs_averaged = 0;
    std::string config_digest;

    std::size_t size() const { return scores.size(); }

    void validate() const
    {
        if (indices.size() != scores.size() || labels.size() != scores.size() ||
            (corrupted && corrupted->size() != scores.size()))
            throw ShapeError("score report columns have different lengths");
        for (std::size_t i = 1; i < indices.size(); ++i)
            if (indices[i] <= indices[i - 1])
                throw ConsistencyError("score report indices must be strictly increasing");
        for (double s : scores)
            if (!std::isfinite(s))
                throw ConsistencyError("score report contains a non-finite score");
    }
};

/// Report with indices 0..N-1.
inline ScoreReport make_report(std::vector<double> scores, std::vector<int> labels, ScoreKind kind,
                               std::optional<std::vector<bool>> corrupted = std::nullopt)
{
    ScoreReport r;
    r.indices.resize(scores.size());
    std::iota(r.indices.begin(), r.indices.end(), std::size_t{0});
    r.labels = std::move(labels);
    r.scores = std::move(scores);
    r.corrupted = std::move(corrupted);
    r.kind = kind;
    r.validate();
    return r;
}

// ---------------------------------------------------------------------------
// AUROC

/// Mann-Whitney AUROC: P(pos > neg) + P(tie) / 2. Computed from midranks in
/// integer arithmetic, so it equals exhaustive pair counting exactly.
inline double auroc(std::span<const double> scores, const std::vector<bool>& positives)
{
    if (scores.size() != positives.size())
        throw ShapeError("auroc: scores and mask differ in length");
    const auto n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

    std::int64_t pos = 0;
    // Sum over positives of twice the (1-based) midrank.
    std::int64_t twice_rank_sum = 0;
    for (std::size_t start = 0; start < n;) {
        std::size_t end = start;
        while (end < n && scores[order[end]] == scores[order[start]])
            ++end;
        const auto twice_midrank = static_cast<std::int64_t>(start + 1 + end);
        for (std::size_t k = start; k < end; ++k)
            if (positives[order[k]]) {
                twice_rank_sum += twice_midrank;
                ++pos;
            }
        start = end;
    }
    const auto neg = static_cast<std::int64_t>(n) - pos;
    if (pos == 0 || neg == 0)
        throw MetricError("auroc needs at least one positive and one negative");
    const std::int64_t twice_u = twice_rank_sum - pos * (pos + 1);
    return static_cast<double>(twice_u) / static_cast<double>(2 * pos * neg);
}

// ---------------------------------------------------------------------------
// Cosine similarity

inline double cosine_similarity(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size())
        throw ShapeError("cosine similarity: vectors differ in length");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0)
        throw MetricError("cosine similarity of a zero vector is undefined");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Positions of the k largest scores, descending, ties by ascending position.
inline std::vector<std::size_t> top_positions(std::span<const double> scores, std::size_t k)
{
    if (k > scores.size())
        throw ConfigError("top-k: k = " + std::to_string(k) + " exceeds " + std::to_string(scores.size()) + " samples");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto before = [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), before);
    order.resize(k);
    return order;
}

namespace detail {

inline void check_aligned(const ScoreReport& a, const ScoreReport& b)
{
    if (a.size() != b.size())
        throw AlignmentError("reports hold " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                             " samples");
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a.indices[i] != b.indices[i])
            throw AlignmentError("reports disagree at row " + std::to_string(i) + ": index " +
                                 std::to_string(a.indices[i]) + " vs " + std::to_string(b.indices[i]));
}

} // namespace detail

/// Cosine similarity restricted to the k samples with the highest reference
/// scores.
inline double topk_cosine(const ScoreReport& scores, const ScoreReport& reference, std::size_t k)
{
    detail::check_aligned(scores, reference);
    const auto picked = top_positions(reference.scores, k);
    std::vector<double> ours, theirs;
    ours.reserve(k);
    theirs.reserve(k);
    // Position order keeps the summation order identical to the full cosine when k = N.
    std::vector<std::size_t> sorted = picked;
    std::sort(sorted.begin(), sorted.end());
    for (auto i : sorted) {
        ours.push_back(scores.scores[i]);
        theirs.push_back(reference.scores[i]);
    }
    return cosine_similarity(ours, theirs);
}

// ---------------------------------------------------------------------------
// Inconfidence

/// 1 - softmax(logits)[label].
inline double inconfidence_from_logits(const Eigen::Ref<const Vector>& logits, int label)
{
    if (label < 0 || label >= logits.size())
        throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
    return -std::expm1(-loss(logits, label));
}

inline double inconfidence(const Network& net, const Vector& x, int label)
{
    return inconfidence_from_logits(forward(net, x), label);
}

// ---------------------------------------------------------------------------
// Histogram

enum class BinScale { linear, log };

struct Histogram {
    std::vector<double> edges; // bins + 1, increasing
    std::vector<std::size_t> counts;
    /// Log scale only: non-positive scores, which have no log bin.
    std::size_t underflow = 0;
    BinScale scale = BinScale::linear;
};

/// Equal-width bins over [lo, hi] (log10 space for BinScale::log). Without
/// an explicit range the data range is used. Values outside the range are
/// clamped into the end bins.
inline Histogram histogram(std::span<const double> scores, int bins, BinScale scale,
                           std::optional<std::pair<double, double>> range = std::nullopt)
{
    if (bins < 1)
        throw ConfigError("histogram needs at least one bin");
    Histogram h;
    h.scale = scale;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    auto transform = [&](double v) { return scale == BinScale::log ? std::log10(v) : v; };

    double lo = 0.0, hi = 1.0;
    if (range) {
        lo = transform(range->first);
        hi = transform(range->second);
    } else {
        bool any = false;
        for (double s : scores) {
            if (scale == BinScale::log && !(s > 0.0))
                continue;
            const double t = transform(s);
            lo = any ? std::min(lo, t) : t;
            hi = any ? std::max(hi, t) : t;
            any = true;
        }
    }
    if (!(hi > lo))
        hi = lo + 1.0;

    const double width = (hi - lo) / bins;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) {
        const double t = i == bins ? hi : lo + width * i;
        h.edges[static_cast<std::size_t>(i)] = scale == BinScale::log ? std::pow(10.0, t) : t;
    }
    for (double s : scores) {
        if (scale == BinScale::log && !(s > 0.0)) {
            ++h.underflow;
            continue;
        }
        const double pos = (transform(s) - lo) / width;
        const auto bin = static_cast<long>(std::floor(pos));
        ++h.counts[static_cast<std::size_t>(std::clamp(bin, 0L, static_cast<long>(bins) - 1))];
    }
    return h;
}

// ---------------------------------------------------------------------------
// Ranking

/// Sample indices of the k highest scores (descending, ties by lower index).
/// With lowest = true, the k lowest instead (ascending, ties by lower index).
inline std::vector<std::size_t> rank_top(const ScoreReport& report, std::size_t k, bool lowest = false)
{
    if (k > report.size())
        throw ConfigError("rank: k = " + std::to_string(k) + " exceeds " + std::to_string(report.size()) + " samples");
    std::vector<double> keyed = report.scores;
    if (lowest)
        for (double& s : keyed)
            s = -s;
    std::vector<std::size_t> out;
    for (auto pos : top_positions(keyed, k))
        out.push_back(report.indices[pos]);
    return out;
}

/// Fraction of samples scoring strictly higher plus half the ties, per
/// sample; 0 is the top of the ranking.
inline std::vector<double> rank_fraction(std::span<const double> scores)
{
    const auto n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    std::vector<double> out(n);
    for (std::size_t start = 0; start < n;) {
        std::size_t end = start;
        while (end < n && scores[order[end]] == scores[order[start]])
            ++end;
        const double mid = (static_cast<double>(start) + static_cast<double>(end - 1)) / 2.0;
        for (std::size_t k = start; k < end; ++k)
            out[order[k]] = n > 1 ? mid / static_cast<double>(n) : 0.0;
        start = end;
    }
    return out;
}

inline double median(std::vector<double> values)
{
    if (values.empty())
        throw MetricError("median of an empty set");
    std::sort(values.begin(), values.end());
    const auto m = values.size() / 2;
    return values.size() % 2 ? values[m] : 0.5 * (values[m - 1] + values[m]);
}

} // namespace curvd

#endif // CURVD_METRICS_HPP
