#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "actionvlad/error.hpp"
#include "actionvlad/feature_map.hpp"

namespace actionvlad {

/// Linear classifier: logits = W v + b, W stored row-major (classes x input_dim).
template <std::floating_point Scalar = double>
struct ClassifierModel {
    std::size_t classes = 0;
    std::size_t input_dim = 0;
    std::vector<Scalar> weights;
    std::vector<Scalar> bias;
    Scalar dropout_rate = Scalar(0.5);

    static ClassifierModel zeros(std::size_t classes, std::size_t input_dim, Scalar dropout_rate)
    {
        require(classes >= 1 && input_dim >= 1, ErrorKind::invalid_argument, "classifier shape must be positive");
        require(dropout_rate >= 0 && dropout_rate < 1, ErrorKind::invalid_argument, "dropout rate must lie in [0, 1)");
        return {classes, input_dim, std::vector<Scalar>(classes * input_dim, Scalar(0)),
                std::vector<Scalar>(classes, Scalar(0)), dropout_rate};
    }

    std::span<const Scalar> row(std::size_t c) const noexcept
    {
        return std::span<const Scalar>(weights).subspan(c * input_dim, input_dim);
    }

    bool operator==(const ClassifierModel&) const = default;
};

template <std::floating_point Scalar>
std::vector<Scalar> classifier_forward(std::span<const Scalar> v, const ClassifierModel<Scalar>& m)
{
    require(v.size() == m.input_dim, ErrorKind::dimension_mismatch,
            "classifier expects " + std::to_string(m.input_dim) + " inputs, got " + std::to_string(v.size()));
    std::vector<Scalar> logits(m.classes);
    for (std::size_t c = 0; c < m.classes; ++c) {
        auto w = m.row(c);
        Scalar sum = 0;
        for (std::size_t j = 0; j < v.size(); ++j)
            sum += w[j] * v[j];
        logits[c] = sum + m.bias[c];
    }
    return logits;
}

template <std::floating_point Scalar>
struct LossAndGradient {
    Scalar loss = 0;
    std::vector<Scalar> grad_logits;
};

/// -log softmax(logits)[label] via log-sum-exp; gradient softmax - onehot.
template <std::floating_point Scalar>
LossAndGradient<Scalar> softmax_cross_entropy(std::span<const Scalar> logits, std::size_t label)
{
    require(label < logits.size(), ErrorKind::label_error,
            "label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) + " classes");
    const Scalar top = *std::ranges::max_element(logits);
    LossAndGradient<Scalar> out{0, std::vector<Scalar>(logits.size())};
    Scalar total = 0;
    for (std::size_t c = 0; c < logits.size(); ++c) {
        out.grad_logits[c] = std::exp(logits[c] - top);
        total += out.grad_logits[c];
    }
    out.loss = std::log(total) - (logits[label] - top);
    for (auto& g : out.grad_logits)
        g /= total;
    out.grad_logits[label] -= Scalar(1);
    return out;
}

/// Inverted-dropout scale factors: 0 with probability `rate`, otherwise
/// 1 / (1 - rate). Outside training every factor is 1.
template <std::floating_point Scalar>
std::vector<Scalar> dropout_mask(std::size_t size, Scalar rate, std::mt19937_64& rng, bool training)
{
    require(rate >= 0 && rate < 1, ErrorKind::invalid_argument, "dropout rate must lie in [0, 1)");
    std::vector<Scalar> mask(size, Scalar(1));
    if (!training || rate == 0)
        return mask;
    std::bernoulli_distribution keep(1.0 - static_cast<double>(rate));
    const Scalar scale = Scalar(1) / (Scalar(1) - rate);
    for (auto& m : mask)
        m = keep(rng) ? scale : Scalar(0);
    return mask;
}

template <std::floating_point Scalar>
std::vector<Scalar> apply_dropout(std::span<const Scalar> v, Scalar rate, std::mt19937_64& rng, bool training)
{
    auto mask = dropout_mask<Scalar>(v.size(), rate, rng, training);
    for (std::size_t j = 0; j < v.size(); ++j)
        mask[j] *= v[j];
    return mask;
}

/// A set of gradient (or parameter) tensors, each flattened.
template <std::floating_point Scalar>
using TensorList = std::vector<std::vector<Scalar>>;

template <std::floating_point Scalar>
Scalar global_norm(const TensorList<Scalar>& tensors) noexcept
{
    Scalar sum = 0;
    for (const auto& t : tensors)
        for (Scalar g : t)
            sum += g * g;
    return std::sqrt(sum);
}

/// Rescales all tensors jointly so their global L2 norm is at most
/// max_norm. Returns the norm before clipping.
template <std::floating_point Scalar>
Scalar clip_gradients(TensorList<Scalar>& grads, Scalar max_norm)
{
    require(max_norm > 0, ErrorKind::invalid_argument, "clip norm must be positive");
    const Scalar norm = global_norm(grads);
    if (norm > max_norm) {
        const Scalar scale = max_norm / norm;
        for (auto& t : grads)
            for (Scalar& g : t)
                g *= scale;
    }
    return norm;
}

/// Element-wise mean of several micro-batch gradients.
template <std::floating_point Scalar>
TensorList<Scalar> accumulate_gradients(std::span<const TensorList<Scalar>> micro)
{
    require(!micro.empty(), ErrorKind::invalid_argument, "no gradients to accumulate");
    TensorList<Scalar> out = micro.front();
    for (std::size_t m = 1; m < micro.size(); ++m) {
        require(micro[m].size() == out.size(), ErrorKind::dimension_mismatch, "gradient lists differ in length");
        for (std::size_t t = 0; t < out.size(); ++t) {
            require(micro[m][t].size() == out[t].size(), ErrorKind::dimension_mismatch,
                    "gradient tensors differ in shape");
            for (std::size_t e = 0; e < out[t].size(); ++e)
                out[t][e] += micro[m][t][e];
        }
    }
    const Scalar inv = Scalar(1) / static_cast<Scalar>(micro.size());
    for (auto& t : out)
        for (Scalar& g : t)
            g *= inv;
    return out;
}

template <std::floating_point Scalar = double>
struct AdamState {
    TensorList<Scalar> first_moment;
    TensorList<Scalar> second_moment;
    std::uint64_t step = 0;

    bool operator==(const AdamState&) const = default;
};

struct AdamOptions {
    double learning_rate = 0.01;
    double epsilon = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
};

/// One bias-corrected Adam update:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2,
///   p <- p - lr * m_hat / (sqrt(v_hat) + eps).
/// A fresh (empty) state is sized from the parameters on first use.
template <std::floating_point Scalar>
void adam_step(std::span<const std::span<Scalar>> params, const TensorList<Scalar>& grads, AdamState<Scalar>& state,
               const AdamOptions& options)
{
    require(params.size() == grads.size(), ErrorKind::dimension_mismatch, "parameter and gradient lists differ");
    if (state.first_moment.empty() && state.step == 0) {
        for (const auto& p : params) {
            state.first_moment.emplace_back(p.size(), Scalar(0));
            state.second_moment.emplace_back(p.size(), Scalar(0));
        }
    }
    require(state.first_moment.size() == params.size() && state.second_moment.size() == params.size(),
            ErrorKind::dimension_mismatch, "optimizer state does not match parameter list");
    for (std::size_t t = 0; t < params.size(); ++t)
        require(params[t].size() == grads[t].size() && state.first_moment[t].size() == params[t].size(),
                ErrorKind::dimension_mismatch, "parameter tensor " + std::to_string(t) + " shape mismatch");

    ++state.step;
    const double b1 = options.beta1;
    const double b2 = options.beta2;
    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        auto& m = state.first_moment[t];
        auto& v = state.second_moment[t];
        for (std::size_t e = 0; e < params[t].size(); ++e) {
            const Scalar g = grads[t][e];
            m[e] = Scalar(b1) * m[e] + Scalar(1 - b1) * g;
            v[e] = Scalar(b2) * v[e] + Scalar(1 - b2) * g * g;
            const double m_hat = m[e] / correction1;
            const double v_hat = v[e] / correction2;
            params[t][e] -= Scalar(options.learning_rate * m_hat / (std::sqrt(v_hat) + options.epsilon));
        }
    }
}

} // namespace actionvlad
