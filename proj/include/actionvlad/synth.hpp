#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "actionvlad/error.hpp"
#include "actionvlad/feature_map.hpp"
#include "actionvlad/training.hpp"

namespace actionvlad {

/**
 * Synthetic videos composed of sub-actions. Every class owns a multiset of
 * sub-action indices into a shared vocabulary of prototype descriptors. For
 * each frame one sub-action is drawn uniformly from the multiset (so
 * multiplicity acts as weight) and every descriptor of the frame is that
 * prototype plus isotropic Gaussian noise.
 */
struct SynthConfig {
    std::size_t classes = 10;
    std::vector<std::vector<double>> prototypes;         ///< S x D
    std::vector<std::vector<double>> motion_prototypes;  ///< optional second stream, S x D
    std::vector<std::vector<std::size_t>> class_subactions;
    std::size_t frames = 25;
    std::size_t locations = 9;
    std::size_t dim = 32;
    double sigma = 0.3;
    std::size_t train_per_class = 40;
    std::size_t val_per_class = 10;
    std::uint64_t seed = 0;

    std::size_t subactions() const noexcept { return prototypes.size(); }
    bool two_stream() const noexcept { return !motion_prototypes.empty(); }

    void validate() const
    {
        require(classes >= 2, ErrorKind::invalid_argument, "synthetic data needs at least 2 classes");
        require(prototypes.size() >= 2, ErrorKind::invalid_argument, "synthetic data needs at least 2 sub-actions");
        require(frames >= 1 && locations >= 1 && dim >= 1, ErrorKind::invalid_argument,
                "frames, locations and dim must be positive");
        require(sigma >= 0 && std::isfinite(sigma), ErrorKind::invalid_argument, "noise sigma must be non-negative");
        require(train_per_class + val_per_class >= 1, ErrorKind::invalid_argument, "no videos requested");
        require(class_subactions.size() == classes, ErrorKind::invalid_argument,
                "need one sub-action multiset per class");
        for (const auto& p : prototypes)
            require(p.size() == dim && all_finite<double>(p), ErrorKind::dimension_mismatch,
                    "prototype has wrong dimension or non-finite values");
        require(motion_prototypes.empty() || motion_prototypes.size() == prototypes.size(),
                ErrorKind::invalid_argument, "motion vocabulary must match the appearance vocabulary size");
        for (const auto& p : motion_prototypes)
            require(p.size() == dim && all_finite<double>(p), ErrorKind::dimension_mismatch,
                    "motion prototype has wrong dimension or non-finite values");
        for (const auto& ms : class_subactions) {
            require(!ms.empty(), ErrorKind::invalid_argument, "every class needs at least one sub-action");
            for (std::size_t s : ms)
                require(s < prototypes.size(), ErrorKind::invalid_argument, "sub-action index out of range");
        }
    }

    /// True if some pair of classes has a sub-action in common.
    bool classes_share_subactions() const
    {
        for (std::size_t a = 0; a < class_subactions.size(); ++a)
            for (std::size_t b = a + 1; b < class_subactions.size(); ++b) {
                std::set<std::size_t> sa(class_subactions[a].begin(), class_subactions[a].end());
                for (std::size_t s : class_subactions[b])
                    if (sa.contains(s))
                        return true;
            }
        return false;
    }
};

/// Knobs for the default shared-sub-action benchmark.
struct SynthShape {
    std::size_t classes = 10;
    std::size_t subactions = 12;
    std::size_t frames = 25;
    std::size_t locations = 9;
    std::size_t dim = 32;
    double sigma = 0.3;
    std::size_t train_per_class = 40;
    std::size_t val_per_class = 10;
    std::uint64_t seed = 0;
    bool two_stream = false;
    double offset = 1.5;      ///< height of the two square offsets
    double base_scale = 0.25; ///< spread of the per-square base points
};

namespace detail {

/// Square vocabulary: group g has corners b_g, b_g+u, b_g+w, b_g+u+w where
/// u and w are non-negative with disjoint supports on dims [lo, mid) and
/// [mid, hi). Prototypes beyond 4 * groups are unused random points.
inline std::vector<std::vector<double>> square_vocabulary(std::size_t subactions, std::size_t dim, std::size_t lo,
                                                          std::size_t mid, std::size_t hi, double offset,
                                                          double base_scale, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<double>> protos;
    const std::size_t groups = subactions / 4;
    for (std::size_t g = 0; g < groups; ++g) {
        std::vector<double> base(dim);
        for (double& v : base)
            v = base_scale * normal(rng);
        for (int corner = 0; corner < 4; ++corner) {
            auto p = base;
            if (corner & 1)
                for (std::size_t j = lo; j < mid; ++j)
                    p[j] += offset;
            if (corner & 2)
                for (std::size_t j = mid; j < hi; ++j)
                    p[j] += offset;
            protos.push_back(std::move(p));
        }
    }
    while (protos.size() < subactions) {
        std::vector<double> p(dim);
        for (double& v : p)
            v = offset * normal(rng);
        protos.push_back(std::move(p));
    }
    return protos;
}

} // namespace detail

/**
 * Benchmark where average and max pooling are provably confused within a
 * group of classes. Classes in the same square use corner multisets
 *   {10, 01, 00}, {11, 00, 00}, {11, 10, 01}, {11, 11, 00}
 * (corner bits say which offsets are added). The first two have the same
 * expected mean, as do the last two, and all four have the same component
 * wise maximum because the offsets have disjoint non-negative supports, so
 * a linear model over mean- or max-pooled descriptors can only resolve the
 * square and the mean pair. Which corners are present, and in what mix,
 * is visible to per-cell residual aggregation.
 */
inline SynthConfig make_shared_subaction_config(const SynthShape& shape)
{
    require(shape.classes >= 2 && shape.subactions >= 2, ErrorKind::invalid_argument,
            "synthetic data needs at least 2 classes and 2 sub-actions");
    require(shape.dim >= 4, ErrorKind::invalid_argument, "shared-sub-action design needs dim >= 4");
    const std::size_t groups = shape.subactions / 4;
    require(groups >= 1 && shape.classes <= 4 * groups, ErrorKind::invalid_argument,
            "shared-sub-action design needs S >= 4 and at most 4 classes per group of 4 sub-actions");

    SynthConfig cfg;
    cfg.classes = shape.classes;
    cfg.frames = shape.frames;
    cfg.locations = shape.locations;
    cfg.dim = shape.dim;
    cfg.sigma = shape.sigma;
    cfg.train_per_class = shape.train_per_class;
    cfg.val_per_class = shape.val_per_class;
    cfg.seed = shape.seed;

    std::mt19937_64 rng(shape.seed ^ 0x5EEDF00Dull);
    const std::size_t d = shape.dim;
    if (shape.two_stream) {
        // the two streams use disjoint halves for their offsets
        cfg.prototypes = detail::square_vocabulary(shape.subactions, d, 0, d / 4, d / 2, shape.offset,
                                                   shape.base_scale, rng);
        cfg.motion_prototypes = detail::square_vocabulary(shape.subactions, d, d / 2, 3 * d / 4, d, shape.offset,
                                                          shape.base_scale, rng);
    } else {
        cfg.prototypes = detail::square_vocabulary(shape.subactions, d, 0, d / 4, d / 2, shape.offset,
                                                   shape.base_scale, rng);
    }
    static constexpr std::size_t patterns[4][3] = {{1, 2, 0}, {3, 0, 0}, {3, 1, 2}, {3, 3, 0}};
    for (std::size_t c = 0; c < shape.classes; ++c) {
        const std::size_t group = c % groups;
        const auto& pattern = patterns[c / groups];
        cfg.class_subactions.push_back({group * 4 + pattern[0], group * 4 + pattern[1], group * 4 + pattern[2]});
    }
    return cfg;
}

/// C=10, S=12, 3 sub-actions per class, T=25, N=9, D=32, sigma=0.3,
/// 40 train + 10 val videos per class.
inline SynthConfig default_synth_config(std::uint64_t seed = 0)
{
    SynthShape shape;
    shape.seed = seed;
    return make_shared_subaction_config(shape);
}

struct SynthVideo {
    std::string id;
    std::size_t label = 0;
    Split split = Split::train;
    FeatureMap<double> appearance;
    std::optional<FeatureMap<double>> motion;
    std::vector<std::size_t> frame_subactions;
};

struct SynthDataset {
    std::size_t classes = 0;
    std::vector<SynthVideo> videos;

    std::vector<Sample> samples(Split split, bool motion = false) const
    {
        std::vector<Sample> out;
        for (const auto& v : videos)
            if (v.split == split) {
                require(!motion || v.motion.has_value(), ErrorKind::invalid_argument, "dataset has no motion stream");
                out.push_back({motion ? *v.motion : v.appearance, v.label});
            }
        return out;
    }
};

inline SynthDataset synth_generate(const SynthConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    SynthDataset out;
    out.classes = cfg.classes;
    const std::size_t per_class = cfg.train_per_class + cfg.val_per_class;
    auto draw = [&](const std::vector<std::vector<double>>& vocab, const std::vector<std::size_t>& frame_sub) {
        FeatureMap<double> f(cfg.frames, cfg.locations, cfg.dim);
        for (std::size_t t = 0; t < cfg.frames; ++t) {
            const auto& proto = vocab[frame_sub[t]];
            for (std::size_t i = 0; i < cfg.locations; ++i) {
                auto x = f.descriptor(t, i);
                for (std::size_t j = 0; j < cfg.dim; ++j)
                    x[j] = proto[j] + cfg.sigma * noise(rng);
            }
        }
        return f;
    };
    for (std::size_t c = 0; c < cfg.classes; ++c) {
        const auto& multiset = cfg.class_subactions[c];
        std::uniform_int_distribution<std::size_t> pick(0, multiset.size() - 1);
        for (std::size_t v = 0; v < per_class; ++v) {
            SynthVideo video;
            video.id = "c" + std::to_string(c) + "_v" + std::to_string(v);
            video.label = c;
            video.split = v < cfg.train_per_class ? Split::train : Split::val;
            for (std::size_t t = 0; t < cfg.frames; ++t)
                video.frame_subactions.push_back(multiset[pick(rng)]);
            video.appearance = draw(cfg.prototypes, video.frame_subactions);
            if (cfg.two_stream())
                video.motion = draw(cfg.motion_prototypes, video.frame_subactions);
            out.videos.push_back(std::move(video));
        }
    }
    return out;
}

} // namespace actionvlad
