#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "actionvlad/error.hpp"
#include "actionvlad/feature_map.hpp"

namespace actionvlad {

enum class ScoreKind { probability, raw };

/// Per-class scores for one video.
struct ScoreVector {
    std::vector<double> values;
    ScoreKind kind = ScoreKind::raw;

    std::size_t classes() const noexcept { return values.size(); }
    std::size_t argmax() const noexcept
    {
        return static_cast<std::size_t>(std::ranges::max_element(values) - values.begin());
    }
    bool operator==(const ScoreVector&) const = default;
};

/// Numerically stable softmax of raw scores.
inline ScoreVector to_probabilities(const ScoreVector& scores)
{
    if (scores.kind == ScoreKind::probability)
        return scores;
    require(!scores.values.empty(), ErrorKind::invalid_argument, "empty score vector");
    ScoreVector out{scores.values, ScoreKind::probability};
    const double top = *std::ranges::max_element(out.values);
    double total = 0;
    for (double& v : out.values) {
        v = std::exp(v - top);
        total += v;
    }
    for (double& v : out.values)
        v /= total;
    return out;
}

/// Channel-wise concatenation of spatially corresponding descriptors.
template <std::floating_point Scalar>
FeatureMap<Scalar> concat_fuse(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b)
{
    require(a.frames() == b.frames() && a.locations() == b.locations(), ErrorKind::dimension_mismatch,
            "concat fusion needs equal frame and location counts (" + std::to_string(a.frames()) + "x" +
                std::to_string(a.locations()) + " vs " + std::to_string(b.frames()) + "x" +
                std::to_string(b.locations()) + ")");
    const std::size_t dim = a.dim() + b.dim();
    std::vector<Scalar> data;
    data.reserve(a.count() * dim);
    for (std::size_t n = 0; n < a.count(); ++n) {
        auto x = a.descriptor(n);
        auto y = b.descriptor(n);
        data.insert(data.end(), x.begin(), x.end());
        data.insert(data.end(), y.begin(), y.end());
    }
    return FeatureMap<Scalar>(a.frames(), a.locations(), dim, std::move(data));
}

/// Union of the descriptor sets of several maps. Maps with no descriptors
/// are ignored. If every remaining map has the same location count the
/// frames are stacked in order; otherwise all descriptors go into a single
/// pseudo-frame. Aggregation is order-free, so both layouts pool the same.
template <std::floating_point Scalar>
FeatureMap<Scalar> union_fuse(std::span<const FeatureMap<Scalar>> parts)
{
    std::vector<const FeatureMap<Scalar>*> live;
    for (const auto& part : parts)
        if (part.count() > 0 && part.dim() > 0)
            live.push_back(&part);
    if (live.empty())
        return parts.empty() ? FeatureMap<Scalar>() : parts.front();
    const std::size_t dim = live.front()->dim();
    bool same_locations = true;
    std::size_t frames = 0;
    std::size_t total = 0;
    for (const auto* part : live) {
        require(part->dim() == dim, ErrorKind::dimension_mismatch,
                "fused streams must share descriptor dimension (" + std::to_string(dim) + " vs " +
                    std::to_string(part->dim()) + ")");
        same_locations = same_locations && part->locations() == live.front()->locations();
        frames += part->frames();
        total += part->count();
    }
    std::vector<Scalar> data;
    data.reserve(total * dim);
    for (const auto* part : live)
        data.insert(data.end(), part->data().begin(), part->data().end());
    if (same_locations)
        return FeatureMap<Scalar>(frames, live.front()->locations(), dim, std::move(data));
    return FeatureMap<Scalar>(1, total, dim, std::move(data));
}

/// Pools both streams with one codebook by taking the union of descriptors.
template <std::floating_point Scalar>
FeatureMap<Scalar> early_fuse(const FeatureMap<Scalar>& a, const FeatureMap<Scalar>& b)
{
    const FeatureMap<Scalar> parts[] = {a, b};
    return union_fuse<Scalar>(parts);
}

/// Joint descriptor set of several spatial crops of the same video.
template <std::floating_point Scalar>
FeatureMap<Scalar> multicrop_pool(std::span<const FeatureMap<Scalar>> crops)
{
    require(!crops.empty(), ErrorKind::invalid_argument, "multi-crop pooling needs at least one crop");
    for (const auto& crop : crops)
        require(crop.dim() == crops.front().dim(), ErrorKind::dimension_mismatch,
                "all crops must share descriptor dimension");
    return union_fuse(crops);
}

/// w * a + (1 - w) * b. Probability inputs give a probability output.
inline ScoreVector late_fuse(const ScoreVector& a, const ScoreVector& b, double w)
{
    require(a.classes() == b.classes(), ErrorKind::dimension_mismatch,
            "score vectors have " + std::to_string(a.classes()) + " and " + std::to_string(b.classes()) +
                " classes");
    require(a.kind == b.kind, ErrorKind::invalid_argument, "cannot fuse probabilities with raw scores");
    require(w >= 0.0 && w <= 1.0, ErrorKind::invalid_argument, "fusion weight must lie in [0, 1]");
    ScoreVector out{std::vector<double>(a.classes()), a.kind};
    for (std::size_t c = 0; c < a.classes(); ++c)
        out.values[c] = w * a.values[c] + (1.0 - w) * b.values[c];
    return out;
}

/// Rescales scores to [0, 1] by their own min and max. A constant vector
/// maps to all zeros.
inline ScoreVector min_max_normalize(const ScoreVector& s)
{
    require(!s.values.empty(), ErrorKind::invalid_argument, "empty score vector");
    auto [lo, hi] = std::ranges::minmax(s.values);
    ScoreVector out{std::vector<double>(s.classes(), 0.0), ScoreKind::raw};
    if (hi > lo)
        for (std::size_t c = 0; c < s.classes(); ++c)
            out.values[c] = (s.values[c] - lo) / (hi - lo);
    return out;
}

/// Weighted average of model scores with scores from an external system
/// (possibly uncalibrated margins); both are min-max normalised first.
inline ScoreVector score_fuse_external(const ScoreVector& model, const ScoreVector& external, double w)
{
    require(model.classes() == external.classes(), ErrorKind::dimension_mismatch,
            "external scores have " + std::to_string(external.classes()) + " classes, model has " +
                std::to_string(model.classes()));
    return late_fuse(min_max_normalize(model), min_max_normalize(external), w);
}

/// How two streams are combined before (concat, early) or after (late)
/// classification.
enum class Fusion { none, concat, early, late };

constexpr std::string_view to_string(Fusion f) noexcept
{
    switch (f) {
    case Fusion::none: return "none";
    case Fusion::concat: return "concat";
    case Fusion::early: return "early";
    case Fusion::late: return "late";
    }
    return "none";
}

inline Fusion parse_fusion(std::string_view name)
{
    if (name == "none")
        return Fusion::none;
    if (name == "concat")
        return Fusion::concat;
    if (name == "early")
        return Fusion::early;
    if (name == "late")
        return Fusion::late;
    fail(ErrorKind::invalid_argument, "unknown fusion mode '" + std::string(name) + "'");
}

} // namespace actionvlad
