#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "actionvlad/aggregation.hpp"
#include "actionvlad/classifier.hpp"
#include "actionvlad/codebook.hpp"
#include "actionvlad/error.hpp"
#include "actionvlad/feature_map.hpp"
#include "actionvlad/parallel.hpp"

namespace actionvlad {

enum class Pooling { vlad, avg, max };

constexpr std::string_view to_string(Pooling p) noexcept
{
    switch (p) {
    case Pooling::vlad: return "vlad";
    case Pooling::avg: return "avg";
    case Pooling::max: return "max";
    }
    return "vlad";
}

inline Pooling parse_pooling(std::string_view name)
{
    if (name == "vlad")
        return Pooling::vlad;
    if (name == "avg")
        return Pooling::avg;
    if (name == "max")
        return Pooling::max;
    fail(ErrorKind::invalid_argument, "unknown pooling mode '" + std::string(name) + "'");
}

struct TrainConfig {
    double alpha = 1000.0;
    std::size_t cells = 64;
    double dropout = 0.5;
    double clip_norm = 5.0;
    double stage1_lr = 0.01;
    double stage2_lr = 1e-4;
    double adam_epsilon = 1e-4;
    std::size_t batch_size = 4;          ///< videos per micro-batch
    std::size_t accumulation_steps = 4;  ///< micro-batches averaged per update
    std::size_t stage1_epochs = 60;
    std::size_t stage2_epochs = 30;
    std::uint64_t seed = 0;
    /// Whether layers below the aggregation would be trained. Features are
    /// precomputed here, so the flag is only recorded in checkpoints.
    bool freeze_boundary = true;
    /// Keep assignment anchors equal to residual anchors in stage 2.
    bool tie_anchors = false;
    Pooling pooling = Pooling::vlad;
    /// Worker threads for per-video work; 1 runs everything serially.
    std::size_t threads = 0;

    void validate() const
    {
        require(std::isfinite(alpha) && alpha > 0, ErrorKind::invalid_argument, "alpha must be positive");
        require(cells >= 1, ErrorKind::invalid_argument, "K must be at least 1");
        require(dropout >= 0 && dropout < 1, ErrorKind::invalid_argument, "dropout must lie in [0, 1)");
        require(clip_norm > 0, ErrorKind::invalid_argument, "clip norm must be positive");
        require(stage1_lr >= 0 && stage2_lr >= 0, ErrorKind::invalid_argument, "learning rates must be non-negative");
        require(adam_epsilon > 0, ErrorKind::invalid_argument, "Adam epsilon must be positive");
        require(batch_size >= 1 && accumulation_steps >= 1, ErrorKind::invalid_argument,
                "batch size and accumulation steps must be at least 1");
    }

    bool operator==(const TrainConfig&) const = default;
};

enum class Split { train, val, test };

constexpr std::string_view to_string(Split s) noexcept
{
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "train";
}

inline std::optional<Split> parse_split(std::string_view name) noexcept
{
    if (name == "train")
        return Split::train;
    if (name == "val")
        return Split::val;
    if (name == "test")
        return Split::test;
    return std::nullopt;
}

struct Sample {
    FeatureMap<double> features;
    std::size_t label = 0;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    int stage = 1;
    double train_loss = 0;
    double val_accuracy = std::numeric_limits<double>::quiet_NaN();
};

/// Video representation fed to the classifier for the given pooling mode.
inline std::vector<double> pool_descriptor(const FeatureMap<double>& f, Pooling pooling, const Codebook<double>* cb)
{
    switch (pooling) {
    case Pooling::avg: return average_pool(f);
    case Pooling::max: return max_pool(f);
    case Pooling::vlad: break;
    }
    require(cb != nullptr, ErrorKind::invalid_argument, "VLAD pooling needs a codebook");
    return actionvlad_encode(f, *cb).values;
}

inline std::vector<std::vector<double>> pool_all(std::span<const Sample> samples, Pooling pooling,
                                                 const Codebook<double>* cb, std::size_t threads)
{
    std::vector<std::vector<double>> out(samples.size());
    parallel_for(samples.size(), threads,
                 [&](std::size_t i) { out[i] = pool_descriptor(samples[i].features, pooling, cb); });
    return out;
}

inline std::size_t predict_class(std::span<const double> descriptor, const ClassifierModel<double>& model)
{
    auto logits = classifier_forward(descriptor, model);
    return static_cast<std::size_t>(std::ranges::max_element(logits) - logits.begin());
}

inline double accuracy(std::span<const std::vector<double>> descriptors, std::span<const std::size_t> labels,
                       const ClassifierModel<double>& model)
{
    if (descriptors.empty())
        return std::numeric_limits<double>::quiet_NaN();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < descriptors.size(); ++i)
        correct += predict_class(descriptors[i], model) == labels[i];
    return static_cast<double>(correct) / static_cast<double>(descriptors.size());
}

inline std::vector<std::size_t> labels_of(std::span<const Sample> samples)
{
    std::vector<std::size_t> labels(samples.size());
    std::ranges::transform(samples, labels.begin(), &Sample::label);
    return labels;
}

namespace detail {

/// Splits a shuffled epoch into optimizer steps, each a list of
/// micro-batches of sample indices.
inline std::vector<std::vector<std::vector<std::size_t>>> epoch_schedule(std::size_t count, const TrainConfig& cfg,
                                                                         std::mt19937_64& rng)
{
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::vector<std::size_t>>> steps;
    for (std::size_t pos = 0; pos < count;) {
        auto& step = steps.emplace_back();
        for (std::size_t m = 0; m < cfg.accumulation_steps && pos < count; ++m) {
            const std::size_t end = std::min(count, pos + cfg.batch_size);
            step.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                              order.begin() + static_cast<std::ptrdiff_t>(end));
            pos = end;
        }
    }
    return steps;
}

} // namespace detail

struct LinearTrainResult {
    ClassifierModel<double> model;
    AdamState<double> adam;
    std::vector<EpochMetrics> curve;
};

/**
 * Trains a linear softmax classifier over fixed video descriptors with
 * dropout on the input, micro-batch gradient averaging, global-norm
 * clipping and Adam. Order per update: average micro-batches, clip, step.
 */
inline LinearTrainResult train_linear(std::span<const std::vector<double>> train,
                                      std::span<const std::size_t> train_labels,
                                      std::span<const std::vector<double>> val, std::span<const std::size_t> val_labels,
                                      std::size_t classes, const TrainConfig& cfg, double learning_rate,
                                      std::size_t epochs, int stage = 1,
                                      std::optional<ClassifierModel<double>> initial = std::nullopt)
{
    cfg.validate();
    require(!train.empty(), ErrorKind::invalid_argument, "training set is empty");
    require(train.size() == train_labels.size() && val.size() == val_labels.size(), ErrorKind::dimension_mismatch,
            "descriptor and label counts differ");
    const std::size_t dim = train.front().size();
    for (std::size_t l : train_labels)
        require(l < classes, ErrorKind::label_error, "training label out of range");

    LinearTrainResult result{initial ? *initial : ClassifierModel<double>::zeros(classes, dim, cfg.dropout), {}, {}};
    auto& model = result.model;
    require(model.classes == classes && model.input_dim == dim, ErrorKind::dimension_mismatch,
            "initial classifier does not match descriptor shape");
    model.dropout_rate = cfg.dropout;
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(stage));
    const AdamOptions adam{learning_rate, cfg.adam_epsilon};

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        double loss_sum = 0;
        for (const auto& step : detail::epoch_schedule(train.size(), cfg, rng)) {
            std::vector<TensorList<double>> micro;
            for (const auto& batch : step) {
                TensorList<double> grads{std::vector<double>(classes * dim, 0.0), std::vector<double>(classes, 0.0)};
                for (std::size_t idx : batch) {
                    auto input = apply_dropout<double>(train[idx], cfg.dropout, rng, true);
                    auto logits = classifier_forward<double>(input, model);
                    auto lg = softmax_cross_entropy<double>(logits, train_labels[idx]);
                    loss_sum += lg.loss;
                    for (std::size_t c = 0; c < classes; ++c) {
                        const double g = lg.grad_logits[c];
                        if (g == 0.0)
                            continue;
                        double* row = grads[0].data() + c * dim;
                        for (std::size_t j = 0; j < dim; ++j)
                            row[j] += g * input[j];
                        grads[1][c] += g;
                    }
                }
                const double inv = 1.0 / static_cast<double>(batch.size());
                for (auto& t : grads)
                    for (double& g : t)
                        g *= inv;
                micro.push_back(std::move(grads));
            }
            auto grads = accumulate_gradients<double>(micro);
            clip_gradients(grads, cfg.clip_norm);
            const std::span<double> params[] = {model.weights, model.bias};
            adam_step<double>(params, grads, result.adam, adam);
        }
        result.curve.push_back({epoch + 1, stage, loss_sum / static_cast<double>(train.size()),
                                accuracy(val, val_labels, model)});
    }
    return result;
}

/// Stage 1: the codebook stays fixed, so every video is encoded once and
/// only the classifier is trained (learning rate cfg.stage1_lr).
inline LinearTrainResult train_stage1(std::span<const Sample> train, std::span<const Sample> val,
                                      const Codebook<double>* cb, std::size_t classes, const TrainConfig& cfg)
{
    require(!train.empty(), ErrorKind::invalid_argument, "training set is empty");
    auto train_desc = pool_all(train, cfg.pooling, cb, cfg.threads);
    auto val_desc = pool_all(val, cfg.pooling, cb, cfg.threads);
    return train_linear(train_desc, labels_of(train), val_desc, labels_of(val), classes, cfg, cfg.stage1_lr,
                        cfg.stage1_epochs, 1);
}

/// Loss and parameter gradients for one video through the whole chain.
struct VideoGradients {
    double loss = 0;
    std::vector<double> weights;
    std::vector<double> bias;
    std::vector<double> residual_anchors;
    std::vector<double> assign_anchors;
};

inline VideoGradients video_gradients(const FeatureMap<double>& f, std::size_t label, const Codebook<double>& cb,
                                      const ClassifierModel<double>& model, std::span<const double> dropout)
{
    auto fwd = actionvlad_forward_cached(f, cb);
    auto v = flatten_l2_normalize(intra_normalize(fwd.raw)).values;
    require(dropout.size() == v.size(), ErrorKind::dimension_mismatch, "dropout mask has the wrong length");
    for (std::size_t j = 0; j < v.size(); ++j)
        v[j] *= dropout[j];
    auto logits = classifier_forward<double>(v, model);
    auto lg = softmax_cross_entropy<double>(logits, label);

    VideoGradients out;
    out.loss = lg.loss;
    out.weights.assign(model.weights.size(), 0.0);
    out.bias = lg.grad_logits;
    std::vector<double> grad_v(v.size(), 0.0);
    for (std::size_t c = 0; c < model.classes; ++c) {
        const double g = lg.grad_logits[c];
        auto w = model.row(c);
        double* gw = out.weights.data() + c * model.input_dim;
        for (std::size_t j = 0; j < v.size(); ++j) {
            gw[j] = g * v[j];
            grad_v[j] += g * w[j];
        }
    }
    for (std::size_t j = 0; j < v.size(); ++j)
        grad_v[j] *= dropout[j];
    auto vg = actionvlad_backward<double>(f, cb, fwd, grad_v, false);
    out.residual_anchors = std::move(vg.residual_anchors);
    out.assign_anchors = std::move(vg.assign_anchors);
    return out;
}

struct Stage2Result {
    Codebook<double> codebook;
    ClassifierModel<double> model;
    AdamState<double> adam;
    std::vector<EpochMetrics> curve;
};

/**
 * Stage 2: joint fine-tuning of the classifier and both anchor sets
 * (learning rate cfg.stage2_lr). Per-video gradients within a micro-batch
 * may be computed concurrently; they are reduced in sample order, so the
 * result does not depend on the thread count.
 */
inline Stage2Result train_stage2(std::span<const Sample> train, std::span<const Sample> val,
                                 const Codebook<double>& cb, const ClassifierModel<double>& model,
                                 const TrainConfig& cfg)
{
    cfg.validate();
    require(!train.empty(), ErrorKind::invalid_argument, "training set is empty");
    require(cfg.pooling == Pooling::vlad, ErrorKind::invalid_argument, "joint fine-tuning requires VLAD pooling");
    require(model.input_dim == cb.cells() * cb.dim(), ErrorKind::dimension_mismatch,
            "classifier input does not match codebook K * D");
    for (const auto& s : train)
        require(s.label < model.classes, ErrorKind::label_error, "training label out of range");

    Stage2Result result{cb, model, {}, {}};
    result.model.dropout_rate = cfg.dropout;
    auto& book = result.codebook;
    auto& clf = result.model;
    std::mt19937_64 rng(cfg.seed * 0x9E3779B97F4A7C15ull + 2u);
    const AdamOptions adam{cfg.stage2_lr, cfg.adam_epsilon};
    const auto val_labels = labels_of(val);
    const std::size_t width = clf.input_dim;

    for (std::size_t epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
        double loss_sum = 0;
        for (const auto& step : detail::epoch_schedule(train.size(), cfg, rng)) {
            std::vector<TensorList<double>> micro;
            for (const auto& batch : step) {
                std::vector<std::vector<double>> masks;
                for (std::size_t b = 0; b < batch.size(); ++b)
                    masks.push_back(dropout_mask<double>(width, cfg.dropout, rng, true));
                std::vector<VideoGradients> per_video(batch.size());
                parallel_for(batch.size(), cfg.threads, [&](std::size_t b) {
                    const auto& s = train[batch[b]];
                    per_video[b] = video_gradients(s.features, s.label, book, clf, masks[b]);
                });
                TensorList<double> grads{std::vector<double>(clf.weights.size(), 0.0),
                                         std::vector<double>(clf.classes, 0.0),
                                         std::vector<double>(width, 0.0), std::vector<double>(width, 0.0)};
                for (const auto& g : per_video) {
                    loss_sum += g.loss;
                    const std::vector<double>* parts[] = {&g.weights, &g.bias, &g.residual_anchors, &g.assign_anchors};
                    for (std::size_t t = 0; t < grads.size(); ++t)
                        for (std::size_t e = 0; e < grads[t].size(); ++e)
                            grads[t][e] += (*parts[t])[e];
                }
                const double inv = 1.0 / static_cast<double>(batch.size());
                for (auto& t : grads)
                    for (double& g : t)
                        g *= inv;
                micro.push_back(std::move(grads));
            }
            auto grads = accumulate_gradients<double>(micro);
            if (cfg.tie_anchors) {
                for (std::size_t e = 0; e < width; ++e)
                    grads[2][e] += grads[3][e];
                grads.pop_back();
                clip_gradients(grads, cfg.clip_norm);
                const std::span<double> params[] = {clf.weights, clf.bias, book.residual_anchors()};
                adam_step<double>(params, grads, result.adam, adam);
                std::ranges::copy(book.residual_anchors(), book.assign_anchors().begin());
            } else {
                clip_gradients(grads, cfg.clip_norm);
                const std::span<double> params[] = {clf.weights, clf.bias, book.residual_anchors(),
                                                    book.assign_anchors()};
                adam_step<double>(params, grads, result.adam, adam);
            }
        }
        require(all_finite<double>(book.residual_anchors()) && all_finite<double>(book.assign_anchors()),
                ErrorKind::non_finite, "codebook diverged during fine-tuning");
        auto val_desc = pool_all(val, Pooling::vlad, &book, cfg.threads);
        result.curve.push_back({epoch + 1, 2, loss_sum / static_cast<double>(train.size()),
                                accuracy(val_desc, val_labels, clf)});
    }
    return result;
}

} // namespace actionvlad
