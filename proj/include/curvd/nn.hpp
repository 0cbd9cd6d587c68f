#ifndef CURVD_NN_HPP
#define CURVD_NN_HPP

// Dense rectified-linear classifier with optional batch normalization.
//
// Batches are column-major: an input batch is a D x B matrix with one sample
// per column, logits are C x B. Everything is double precision because the
// curvature estimator differences two nearby input gradients.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "random.hpp"

namespace curvd {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

struct NetworkSpec {
    /// First entry is the input dimension, the rest are hidden widths. A
    /// num_classes-wide head always follows the last entry.
    std::vector<int> layer_widths;
    int num_classes = 2;
    /// One flag per hidden layer (layer_widths.size() - 1 entries), or empty
    /// for no batch norm anywhere.
    std::vector<bool> use_batchnorm;

    int input_dim() const { return layer_widths.front(); }
    std::size_t hidden_layers() const { return layer_widths.size() - 1; }
    bool batchnorm_at(std::size_t hidden) const
    {
        return !use_batchnorm.empty() && use_batchnorm[hidden];
    }

    void validate() const
    {
        if (layer_widths.empty())
            throw ConfigError("network spec: layer_widths is empty");
        for (int w : layer_widths)
            if (w < 1)
                throw ConfigError("network spec: layer widths must be >= 1");
        if (num_classes < 2)
            throw ConfigError("network spec: num_classes must be >= 2");
        if (!use_batchnorm.empty() && use_batchnorm.size() != hidden_layers())
            throw ConfigError("network spec: use_batchnorm needs one flag per hidden layer");
    }
};

enum class Mode { training, evaluation };

struct Dense {
    Matrix weight; // out x in
    Vector bias;
};

struct BatchNorm {
    Vector scale;
    Vector shift;
    Vector running_mean;
    Vector running_var;
    double momentum = 0.1;
    double eps = 1e-5;
};

/// Parameters and batch-norm state. Layer i < hidden_layers() is hidden; the
/// last layer is the classification head and never carries batch norm.
struct Network {
    NetworkSpec spec;
    std::vector<Dense> layers;
    std::vector<std::optional<BatchNorm>> norms; // one per hidden layer
    Mode mode = Mode::training;
};

struct NormGradient {
    Vector scale;
    Vector shift;
};

/// Parameter-shaped buffer. Also used as SGD velocity.
struct Gradients {
    std::vector<Dense> layers;
    std::vector<std::optional<NormGradient>> norms;
    /// dL/dx, one column per sample of the batch the gradient came from.
    std::optional<Matrix> input;
};

struct OptimizerConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0;
    /// (epoch, multiplier): from that 1-based epoch on, the rate is
    /// learning_rate * multiplier.
    std::vector<std::pair<int, double>> lr_schedule;

    void validate() const
    {
        if (!(learning_rate >= 0.0))
            throw ConfigError("optimizer: learning_rate must be >= 0");
        if (!(momentum >= 0.0 && momentum < 1.0))
            throw ConfigError("optimizer: momentum must lie in [0, 1)");
        if (!(weight_decay >= 0.0))
            throw ConfigError("optimizer: weight_decay must be >= 0");
        for (std::size_t i = 1; i < lr_schedule.size(); ++i)
            if (lr_schedule[i].first <= lr_schedule[i - 1].first)
                throw ConfigError("optimizer: schedule epochs must be strictly increasing");
    }

    double rate_at(int epoch) const
    {
        double rate = learning_rate;
        for (const auto& [start, multiplier] : lr_schedule)
            if (epoch >= start)
                rate = learning_rate * multiplier;
        return rate;
    }
};

// ---------------------------------------------------------------------------
// Construction

inline Network init_network(const NetworkSpec& spec, std::uint64_t seed)
{
    spec.validate();
    Network net;
    net.spec = spec;
    Stream rng = make_stream(seed, 0x6e6574);
    const std::size_t hidden = spec.hidden_layers();
    for (std::size_t i = 0; i <= hidden; ++i) {
        const int fan_in = spec.layer_widths[i];
        const int fan_out = i < hidden ? spec.layer_widths[i + 1] : spec.num_classes;
        // He-uniform bound for layers feeding a ReLU, LeCun-uniform for the head.
        const double bound = i < hidden ? std::sqrt(6.0 / fan_in) : std::sqrt(1.0 / fan_in);
        Dense layer{Matrix(fan_out, fan_in), Vector::Zero(fan_out)};
        for (Eigen::Index c = 0; c < layer.weight.cols(); ++c)
            for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
                layer.weight(r, c) = uniform(rng, -bound, bound);
        net.layers.push_back(std::move(layer));
    }
    for (std::size_t i = 0; i < hidden; ++i) {
        if (!spec.batchnorm_at(i)) {
            net.norms.emplace_back();
            continue;
        }
        const int width = spec.layer_widths[i + 1];
        net.norms.push_back(BatchNorm{Vector::Ones(width), Vector::Zero(width),
                                      Vector::Zero(width), Vector::Ones(width)});
    }
    return net;
}

/// Zero buffer with the parameter shapes of net.
inline Gradients zeros_like(const Network& net)
{
    Gradients g;
    for (const auto& layer : net.layers)
        g.layers.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                            Vector::Zero(layer.bias.size())});
    for (const auto& norm : net.norms) {
        if (norm)
            g.norms.push_back(NormGradient{Vector::Zero(norm->scale.size()), Vector::Zero(norm->shift.size())});
        else
            g.norms.emplace_back();
    }
    return g;
}

namespace detail {

inline void check_congruent(const Network& net, const Gradients& g)
{
    if (g.layers.size() != net.layers.size() || g.norms.size() != net.norms.size())
        throw ShapeError("gradients are not congruent with the network");
    for (std::size_t i = 0; i < net.layers.size(); ++i)
        if (g.layers[i].weight.rows() != net.layers[i].weight.rows() ||
            g.layers[i].weight.cols() != net.layers[i].weight.cols() ||
            g.layers[i].bias.size() != net.layers[i].bias.size())
            throw ShapeError("gradients are not congruent with the network (layer " + std::to_string(i) + ")");
    for (std::size_t i = 0; i < net.norms.size(); ++i)
        if (net.norms[i].has_value() != g.norms[i].has_value() ||
            (net.norms[i] && g.norms[i]->scale.size() != net.norms[i]->scale.size()))
            throw ShapeError("gradients are not congruent with the network (norm " + std::to_string(i) + ")");
}

} // namespace detail

/// Calls fn(param, grad, velocity) for every trainable tensor, in a fixed order.
template <typename Fn>
void for_each_parameter(Network& net, const Gradients& grads, Gradients& velocity, Fn&& fn)
{
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        fn(net.layers[i].weight, grads.layers[i].weight, velocity.layers[i].weight);
        fn(net.layers[i].bias, grads.layers[i].bias, velocity.layers[i].bias);
    }
    for (std::size_t i = 0; i < net.norms.size(); ++i) {
        if (!net.norms[i])
            continue;
        fn(net.norms[i]->scale, grads.norms[i]->scale, velocity.norms[i]->scale);
        fn(net.norms[i]->shift, grads.norms[i]->shift, velocity.norms[i]->shift);
    }
}

// ---------------------------------------------------------------------------
// Forward

/// Intermediate values kept for backpropagation.
struct Tape {
    std::vector<Matrix> activations; // activations[i] is the input of layer i
    std::vector<Matrix> normalized;  // x-hat of each batch-norm layer (empty otherwise)
    std::vector<Vector> inv_std;     // 1/sqrt(var + eps) used for that x-hat
    std::vector<Vector> batch_mean;  // training mode only
    std::vector<Vector> batch_var;   // training mode only, biased
    Matrix logits;
};

inline Tape forward_tape(const Network& net, const Matrix& inputs)
{
    if (inputs.rows() != net.spec.input_dim())
        throw ShapeError("input has dimension " + std::to_string(inputs.rows()) + ", network expects " +
                         std::to_string(net.spec.input_dim()));
    const std::size_t hidden = net.spec.hidden_layers();
    Tape tape;
    tape.activations.reserve(hidden + 1);
    tape.normalized.resize(hidden);
    tape.inv_std.resize(hidden);
    tape.batch_mean.resize(hidden);
    tape.batch_var.resize(hidden);
    tape.activations.push_back(inputs);
    for (std::size_t i = 0; i < hidden; ++i) {
        const Dense& layer = net.layers[i];
        Matrix z = layer.weight * tape.activations.back();
        z.colwise() += layer.bias;
        if (const auto& norm = net.norms[i]) {
            Vector mean;
            Vector var;
            if (net.mode == Mode::training) {
                mean = z.rowwise().mean();
                var = (z.colwise() - mean).array().square().rowwise().mean();
                tape.batch_mean[i] = mean;
                tape.batch_var[i] = var;
            } else {
                mean = norm->running_mean;
                var = norm->running_var;
            }
            Vector inv_std = (var.array() + norm->eps).rsqrt();
            Matrix xhat = (z.colwise() - mean).array().colwise() * inv_std.array();
            z = (xhat.array().colwise() * norm->scale.array()).colwise() + norm->shift.array();
            tape.normalized[i] = std::move(xhat);
            tape.inv_std[i] = std::move(inv_std);
        }
        tape.activations.push_back(z.cwiseMax(0.0));
    }
    const Dense& head = net.layers.back();
    tape.logits = head.weight * tape.activations.back();
    tape.logits.colwise() += head.bias;
    return tape;
}

inline Matrix forward_batch(const Network& net, const Matrix& inputs)
{
    return forward_tape(net, inputs).logits;
}

inline Vector forward(const Network& net, const Vector& x)
{
    return forward_batch(net, Matrix(x)).col(0);
}

// ---------------------------------------------------------------------------
// Loss

inline double log_sum_exp(const Eigen::Ref<const Vector>& logits)
{
    const double top = logits.maxCoeff();
    return top + std::log((logits.array() - top).exp().sum());
}

/// Per-sample cross-entropy, -log softmax(logits)[label].
inline double loss(const Eigen::Ref<const Vector>& logits, int label)
{
    if (label < 0 || label >= logits.size())
        throw LabelError("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
    return log_sum_exp(logits) - logits(label);
}

inline Vector softmax(const Eigen::Ref<const Vector>& logits)
{
    Vector p = (logits.array() - logits.maxCoeff()).exp();
    return p / p.sum();
}

/// Per-sample losses of a batch of logits.
inline Vector losses(const Matrix& logits, std::span<const int> labels)
{
    if (static_cast<Eigen::Index>(labels.size()) != logits.cols())
        throw ShapeError("label count does not match batch size");
    Vector out(logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j)
        out(j) = loss(logits.col(j), labels[static_cast<std::size_t>(j)]);
    return out;
}

// ---------------------------------------------------------------------------
// Backward

enum class Reduction {
    mean, // objective is the batch-mean loss (training)
    sum,  // objective is the sum; in evaluation mode column j of the input
          // gradient is then exactly dL_j/dx_j
};

struct BackwardOptions {
    Reduction reduction = Reduction::sum;
    bool parameter_gradients = true;
};

/// Backpropagates through a tape recorded by forward_tape on the same network.
inline Gradients backward_tape(const Network& net, const Tape& tape, std::span<const int> labels,
                               BackwardOptions options = {})
{
    const auto batch = tape.logits.cols();
    if (static_cast<Eigen::Index>(labels.size()) != batch)
        throw ShapeError("label count does not match batch size");
    const double weight = options.reduction == Reduction::mean ? 1.0 / static_cast<double>(batch) : 1.0;

    // dL/dlogits = softmax - onehot
    Matrix delta(tape.logits.rows(), batch);
    for (Eigen::Index j = 0; j < batch; ++j) {
        const int y = labels[static_cast<std::size_t>(j)];
        if (y < 0 || y >= tape.logits.rows())
            throw LabelError("label " + std::to_string(y) + " outside [0, " + std::to_string(tape.logits.rows()) + ")");
        delta.col(j) = softmax(tape.logits.col(j));
        delta(y, j) -= 1.0;
    }
    delta *= weight;

    Gradients grads;
    if (options.parameter_gradients) {
        grads.layers.resize(net.layers.size());
        grads.norms.resize(net.norms.size());
    }
    const std::size_t hidden = net.spec.hidden_layers();
    for (std::size_t i = hidden + 1; i-- > 0;) {
        const Dense& layer = net.layers[i];
        if (options.parameter_gradients)
            grads.layers[i] = {delta * tape.activations[i].transpose(), delta.rowwise().sum()};
        Matrix upstream = layer.weight.transpose() * delta;
        if (i == 0) {
            grads.input = std::move(upstream);
            break;
        }
        // Back through ReLU and batch norm of hidden layer i - 1.
        const std::size_t h = i - 1;
        upstream = (tape.activations[i].array() > 0.0).select(upstream, 0.0);
        if (const auto& norm = net.norms[h]) {
            const Matrix& xhat = tape.normalized[h];
            if (options.parameter_gradients)
                grads.norms[h] = NormGradient{(upstream.array() * xhat.array()).rowwise().sum(),
                                              upstream.rowwise().sum()};
            Matrix dxhat = upstream.array().colwise() * norm->scale.array();
            if (net.mode == Mode::training) {
                const double b = static_cast<double>(batch);
                Vector sum_dxhat = dxhat.rowwise().sum();
                Vector sum_dxhat_xhat = (dxhat.array() * xhat.array()).rowwise().sum();
                Matrix centered = (b * dxhat).colwise() - sum_dxhat;
                centered -= (xhat.array().colwise() * sum_dxhat_xhat.array()).matrix();
                delta = centered.array().colwise() * (tape.inv_std[h].array() / b);
            } else {
                delta = dxhat.array().colwise() * tape.inv_std[h].array();
            }
        } else {
            delta = std::move(upstream);
        }
    }
    return grads;
}

inline Gradients backward_batch(const Network& net, const Matrix& inputs, std::span<const int> labels,
                                BackwardOptions options = {})
{
    return backward_tape(net, forward_tape(net, inputs), labels, options);
}

/// Single-sample parameter and input gradients.
inline Gradients backward(const Network& net, const Vector& x, int y)
{
    const int labels[1] = {y};
    return backward_batch(net, Matrix(x), labels, {Reduction::sum, true});
}

/// Input gradients only, one column per sample. Requires evaluation mode
/// (or a network without batch norm) for the columns to be independent.
inline Matrix input_gradients(const Network& net, const Matrix& inputs, std::span<const int> labels)
{
    return *backward_batch(net, inputs, labels, {Reduction::sum, false}).input;
}

// ---------------------------------------------------------------------------
// Optimization

/// v <- momentum*v + grad + weight_decay*param; param <- param - rate*v.
/// The rate is taken from the schedule at the given 1-based epoch.
inline void sgd_step(Network& net, const Gradients& grads, const OptimizerConfig& cfg, Gradients& velocity,
                     int epoch = 1)
{
    detail::check_congruent(net, grads);
    detail::check_congruent(net, velocity);
    const double rate = cfg.rate_at(epoch);
    for_each_parameter(net, grads, velocity, [&](auto& param, const auto& grad, auto& vel) {
        vel = cfg.momentum * vel + grad + cfg.weight_decay * param;
        param -= rate * vel;
    });
}

/// Folds the batch statistics recorded on a training-mode tape into the
/// running estimates (unbiased variance, floored at eps).
inline void update_running_stats(Network& net, const Tape& tape)
{
    for (std::size_t i = 0; i < net.norms.size(); ++i) {
        auto& norm = net.norms[i];
        if (!norm || tape.batch_mean[i].size() == 0)
            continue;
        const double b = static_cast<double>(tape.activations.front().cols());
        const double unbias = b > 1.0 ? b / (b - 1.0) : 1.0;
        norm->running_mean = (1.0 - norm->momentum) * norm->running_mean + norm->momentum * tape.batch_mean[i];
        norm->running_var = ((1.0 - norm->momentum) * norm->running_var + norm->momentum * unbias * tape.batch_var[i])
                                .cwiseMax(norm->eps);
    }
}

/// Replaces every running mean/variance with the exact population statistics
/// of `inputs` under the current weights, so that evaluation mode reproduces
/// the training-mode function on that set.
inline void recalibrate_batchnorm(Network& net, const Matrix& inputs)
{
    const Mode saved = net.mode;
    net.mode = Mode::training;
    const Tape tape = forward_tape(net, inputs);
    net.mode = saved;
    for (std::size_t i = 0; i < net.norms.size(); ++i) {
        if (!net.norms[i])
            continue;
        net.norms[i]->running_mean = tape.batch_mean[i];
        net.norms[i]->running_var = tape.batch_var[i];
    }
}

struct StepResult {
    double mean_loss = 0.0;
    int correct = 0;
};

/// One minibatch update in training mode: forward, batch-mean backward,
/// running-stat update, SGD step.
inline StepResult train_step(Network& net, const Matrix& inputs, std::span<const int> labels,
                             const OptimizerConfig& cfg, Gradients& velocity, int epoch)
{
    net.mode = Mode::training;
    Tape tape = forward_tape(net, inputs);
    StepResult result;
    const Vector per_sample = losses(tape.logits, labels);
    result.mean_loss = per_sample.mean();
    for (Eigen::Index j = 0; j < tape.logits.cols(); ++j) {
        Eigen::Index arg;
        tape.logits.col(j).maxCoeff(&arg);
        result.correct += arg == labels[static_cast<std::size_t>(j)];
    }
    Gradients grads = backward_tape(net, tape, labels, {Reduction::mean, true});
    update_running_stats(net, tape);
    sgd_step(net, grads, cfg, velocity, epoch);
    return result;
}

} // namespace curvd

#endif // CURVD_NN_HPP
