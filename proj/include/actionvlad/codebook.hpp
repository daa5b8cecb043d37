#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "actionvlad/error.hpp"
#include "actionvlad/feature_map.hpp"

namespace actionvlad {

/**
 * K cells over R^D. Each cell has a residual anchor (the centre residuals are
 * measured against) and an assignment anchor (used only inside the
 * soft-assignment). Both sets start out identical and are allowed to drift
 * apart during joint training. `alpha` scales the negative squared distances
 * fed to the soft-assignment softmax.
 */
template <std::floating_point Scalar = double>
class Codebook {
public:
    using value_type = Scalar;

    Codebook() = default;

    Codebook(std::size_t cells, std::size_t dim, Scalar alpha, std::vector<Scalar> residual_anchors,
             std::vector<Scalar> assign_anchors)
        : cells_(cells), dim_(dim), alpha_(alpha), residual_(std::move(residual_anchors)),
          assign_(std::move(assign_anchors))
    {
        require(cells_ >= 1, ErrorKind::invalid_argument, "codebook needs at least one cell");
        require(dim_ >= 1, ErrorKind::invalid_argument, "codebook dimension must be positive");
        require(std::isfinite(alpha_) && alpha_ > 0, ErrorKind::invalid_argument,
                "alpha must be finite and positive");
        require(residual_.size() == cells_ * dim_ && assign_.size() == cells_ * dim_,
                ErrorKind::dimension_mismatch, "anchor arrays must hold cells * dim values");
        require(all_finite<Scalar>(residual_) && all_finite<Scalar>(assign_), ErrorKind::non_finite,
                "codebook anchors must be finite");
    }

    std::size_t cells() const noexcept { return cells_; }
    std::size_t dim() const noexcept { return dim_; }
    Scalar alpha() const noexcept { return alpha_; }

    std::span<const Scalar> residual_anchors() const noexcept { return residual_; }
    std::span<const Scalar> assign_anchors() const noexcept { return assign_; }
    /// Mutable views for optimizers. Callers must keep the values finite.
    std::span<Scalar> residual_anchors() noexcept { return residual_; }
    std::span<Scalar> assign_anchors() noexcept { return assign_; }

    std::span<const Scalar> residual_anchor(std::size_t k) const noexcept
    {
        return residual_anchors().subspan(k * dim_, dim_);
    }
    std::span<const Scalar> assign_anchor(std::size_t k) const noexcept
    {
        return assign_anchors().subspan(k * dim_, dim_);
    }

    bool anchors_tied() const noexcept { return residual_ == assign_; }

    bool operator==(const Codebook&) const = default;

private:
    std::size_t cells_ = 0;
    std::size_t dim_ = 0;
    Scalar alpha_ = Scalar(1);
    std::vector<Scalar> residual_;
    std::vector<Scalar> assign_;
};

/// Codebook whose residual and assignment anchors are both copies of
/// `anchors` (cells x dim, row-major).
template <std::floating_point Scalar>
Codebook<Scalar> build_codebook(std::span<const Scalar> anchors, std::size_t cells, Scalar alpha)
{
    require(!anchors.empty() && cells >= 1, ErrorKind::invalid_argument, "codebook anchors must not be empty");
    require(anchors.size() % cells == 0, ErrorKind::dimension_mismatch,
            "anchor array length is not a multiple of the cell count");
    std::vector<Scalar> copy(anchors.begin(), anchors.end());
    return Codebook<Scalar>(cells, anchors.size() / cells, alpha, copy, copy);
}

template <std::floating_point Scalar>
Scalar squared_distance(std::span<const Scalar> a, std::span<const Scalar> b) noexcept
{
    Scalar sum = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        const Scalar d = a[j] - b[j];
        sum += d * d;
    }
    return sum;
}

struct KMeansOptions {
    std::size_t max_iters = 100;
    std::uint64_t seed = 0;
};

template <std::floating_point Scalar>
struct KMeansResult {
    std::vector<Scalar> centers;          ///< cells x dim, row-major
    std::vector<std::size_t> assignment;  ///< cell index per sample
    /// Within-cluster sum of squares after seeding and after every iteration.
    std::vector<Scalar> cost_history;
    std::size_t iterations = 0;
    bool converged = false;
};

namespace detail {

template <std::floating_point Scalar>
std::size_t nearest_center(std::span<const Scalar> x, std::span<const Scalar> centers, std::size_t cells,
                           Scalar& best_distance) noexcept
{
    const std::size_t dim = x.size();
    std::size_t best = 0;
    best_distance = std::numeric_limits<Scalar>::infinity();
    for (std::size_t k = 0; k < cells; ++k) {
        const Scalar d = squared_distance(x, centers.subspan(k * dim, dim));
        if (d < best_distance) {  // strict: lowest index wins ties
            best_distance = d;
            best = k;
        }
    }
    return best;
}

template <std::floating_point Scalar>
Scalar assign_all(std::span<const Scalar> samples, std::size_t dim, std::span<const Scalar> centers,
                  std::size_t cells, std::vector<std::size_t>& assignment, std::vector<Scalar>& distance)
{
    const std::size_t count = samples.size() / dim;
    Scalar cost = 0;
    for (std::size_t n = 0; n < count; ++n) {
        assignment[n] = nearest_center(samples.subspan(n * dim, dim), centers, cells, distance[n]);
        cost += distance[n];
    }
    return cost;
}

} // namespace detail

/**
 * Lloyd's algorithm with k-means++ seeding. `samples` is count x dim,
 * row-major. An empty cluster is moved onto the sample farthest from its
 * current centre. Iteration stops when no assignment changes or after
 * `max_iters` updates. The result depends only on (samples, cells, seed).
 */
template <std::floating_point Scalar>
KMeansResult<Scalar> kmeans(std::span<const Scalar> samples, std::size_t dim, std::size_t cells,
                            const KMeansOptions& options = {})
{
    require(cells >= 1, ErrorKind::invalid_argument, "k-means needs K >= 1");
    require(dim >= 1 && samples.size() % dim == 0, ErrorKind::dimension_mismatch,
            "sample array length is not a multiple of the dimension");
    const std::size_t count = samples.size() / dim;
    require(count >= cells, ErrorKind::invalid_argument,
            "k-means needs at least K samples (got " + std::to_string(count) + " for K=" +
                std::to_string(cells) + ")");
    require(all_finite(samples), ErrorKind::non_finite, "k-means samples must be finite");

    KMeansResult<Scalar> result;
    result.centers.assign(cells * dim, Scalar(0));
    result.assignment.assign(count, 0);
    std::vector<Scalar> distance(count, std::numeric_limits<Scalar>::infinity());
    auto sample = [&](std::size_t n) { return samples.subspan(n * dim, dim); };
    auto center = [&](std::size_t k) { return std::span<Scalar>(result.centers).subspan(k * dim, dim); };

    std::mt19937_64 rng(options.seed);
    std::size_t first = std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
    std::ranges::copy(sample(first), center(0).begin());
    for (std::size_t k = 1; k < cells; ++k) {
        Scalar total = 0;
        for (std::size_t n = 0; n < count; ++n) {
            distance[n] = std::min(distance[n], squared_distance<Scalar>(sample(n), center(k - 1)));
            total += distance[n];
        }
        std::size_t chosen = 0;
        if (total > 0) {
            const Scalar target = std::uniform_real_distribution<Scalar>(0, total)(rng);
            Scalar running = 0;
            chosen = count;
            for (std::size_t n = 0; n < count; ++n) {
                running += distance[n];
                if (distance[n] > 0 && running >= target) {
                    chosen = n;
                    break;
                }
            }
            if (chosen == count)  // target landed past the rounding tail
                for (std::size_t n = count; n-- > 0;)
                    if (distance[n] > 0) {
                        chosen = n;
                        break;
                    }
        } else {
            // every sample already sits on a centre; duplicates are unavoidable
            chosen = std::uniform_int_distribution<std::size_t>(0, count - 1)(rng);
        }
        std::ranges::copy(sample(chosen), center(k).begin());
    }

    Scalar cost = detail::assign_all<Scalar>(samples, dim, result.centers, cells, result.assignment, distance);
    result.cost_history.push_back(cost);

    std::vector<Scalar> sums(cells * dim);
    std::vector<std::size_t> sizes(cells);
    std::vector<std::size_t> previous;
    for (std::size_t iter = 0; iter < options.max_iters; ++iter) {
        std::ranges::fill(sums, Scalar(0));
        std::ranges::fill(sizes, 0);
        for (std::size_t n = 0; n < count; ++n) {
            const std::size_t k = result.assignment[n];
            ++sizes[k];
            auto x = sample(n);
            for (std::size_t j = 0; j < dim; ++j)
                sums[k * dim + j] += x[j];
        }
        for (std::size_t k = 0; k < cells; ++k) {
            if (sizes[k] == 0) {
                auto farthest = std::ranges::max_element(distance) - distance.begin();
                std::ranges::copy(sample(static_cast<std::size_t>(farthest)), center(k).begin());
                distance[static_cast<std::size_t>(farthest)] = 0;
                continue;
            }
            for (std::size_t j = 0; j < dim; ++j)
                center(k)[j] = sums[k * dim + j] / static_cast<Scalar>(sizes[k]);
        }
        previous = result.assignment;
        cost = detail::assign_all<Scalar>(samples, dim, result.centers, cells, result.assignment, distance);
        result.cost_history.push_back(cost);
        result.iterations = iter + 1;
        if (result.assignment == previous) {
            result.converged = true;
            break;
        }
    }
    return result;
}

/// k-means initialisation of a codebook; both anchor sets receive the final
/// centres.
template <std::floating_point Scalar>
Codebook<Scalar> kmeans_init(std::span<const Scalar> samples, std::size_t dim, std::size_t cells, Scalar alpha,
                             const KMeansOptions& options = {})
{
    auto result = kmeans(samples, dim, cells, options);
    return build_codebook<Scalar>(result.centers, cells, alpha);
}

/// Uniformly subsamples at most `limit` descriptors (without replacement)
/// from a collection of feature maps into a flat count x dim array.
template <std::floating_point Scalar>
std::vector<Scalar> sample_descriptors(std::span<const FeatureMap<Scalar>> maps, std::size_t limit,
                                       std::uint64_t seed)
{
    require(!maps.empty(), ErrorKind::invalid_argument, "no feature maps to sample from");
    const std::size_t dim = maps.front().dim();
    std::vector<std::pair<std::size_t, std::size_t>> index;
    for (std::size_t m = 0; m < maps.size(); ++m) {
        require(maps[m].dim() == dim, ErrorKind::dimension_mismatch, "feature maps disagree on dimension");
        for (std::size_t n = 0; n < maps[m].count(); ++n)
            index.emplace_back(m, n);
    }
    if (index.size() > limit) {
        std::mt19937_64 rng(seed);
        // partial Fisher-Yates; the chosen prefix is then restored to file order
        for (std::size_t s = 0; s < limit; ++s) {
            const std::size_t pick = std::uniform_int_distribution<std::size_t>(s, index.size() - 1)(rng);
            std::swap(index[s], index[pick]);
        }
        index.resize(limit);
        std::ranges::sort(index);
    }
    std::vector<Scalar> out;
    out.reserve(index.size() * dim);
    for (auto [m, n] : index) {
        auto x = maps[m].descriptor(n);
        out.insert(out.end(), x.begin(), x.end());
    }
    return out;
}

} // namespace actionvlad
