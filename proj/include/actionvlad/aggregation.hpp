#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "actionvlad/codebook.hpp"
#include "actionvlad/error.hpp"
#include "actionvlad/feature_map.hpp"

namespace actionvlad {

/// Vectors (and columns) whose L2 norm falls below this are treated as zero
/// by every normalisation step, and pass zero gradient back.
inline constexpr double norm_epsilon = 1e-12;

/**
 * The D x K aggregation matrix. Column k (the aggregate of cell k) is stored
 * contiguously, so the flattened layout is already the stacked descriptor:
 * column k occupies [k * dim, (k + 1) * dim).
 */
template <std::floating_point Scalar = double>
class RawVlad {
public:
    RawVlad() = default;
    RawVlad(std::size_t dim, std::size_t cells) : dim_(dim), cells_(cells), values_(dim * cells, Scalar(0)) {}
    RawVlad(std::size_t dim, std::size_t cells, std::vector<Scalar> values)
        : dim_(dim), cells_(cells), values_(std::move(values))
    {
        require(values_.size() == dim_ * cells_, ErrorKind::size_mismatch, "raw VLAD must hold dim * cells values");
    }

    std::size_t dim() const noexcept { return dim_; }
    std::size_t cells() const noexcept { return cells_; }

    Scalar operator()(std::size_t j, std::size_t k) const noexcept { return values_[k * dim_ + j]; }
    Scalar& operator()(std::size_t j, std::size_t k) noexcept { return values_[k * dim_ + j]; }

    std::span<const Scalar> column(std::size_t k) const noexcept
    {
        return std::span<const Scalar>(values_).subspan(k * dim_, dim_);
    }
    std::span<Scalar> column(std::size_t k) noexcept { return std::span<Scalar>(values_).subspan(k * dim_, dim_); }

    std::span<const Scalar> values() const noexcept { return values_; }
    std::span<Scalar> values() noexcept { return values_; }

    bool operator==(const RawVlad&) const = default;

private:
    std::size_t dim_ = 0;
    std::size_t cells_ = 0;
    std::vector<Scalar> values_;
};

/// Final video representation: K * D values with unit L2 norm, or all zeros.
template <std::floating_point Scalar = double>
struct VladDescriptor {
    std::size_t dim = 0;
    std::size_t cells = 0;
    std::vector<Scalar> values;

    std::span<const Scalar> block(std::size_t k) const noexcept
    {
        return std::span<const Scalar>(values).subspan(k * dim, dim);
    }
};

template <std::floating_point Scalar>
Scalar l2_norm(std::span<const Scalar> v) noexcept
{
    Scalar sum = 0;
    for (Scalar x : v)
        sum += x * x;
    return std::sqrt(sum);
}

/// Divides v by its norm in place; vectors below norm_epsilon become exact
/// zeros. Returns the norm before scaling.
template <std::floating_point Scalar>
Scalar normalize_in_place(std::span<Scalar> v) noexcept
{
    const Scalar norm = l2_norm<Scalar>(v);
    if (norm < Scalar(norm_epsilon)) {
        std::ranges::fill(v, Scalar(0));
        return norm;
    }
    for (Scalar& x : v)
        x /= norm;
    return norm;
}

/// Gradient of y = x / |x| w.r.t. x, given y, |x| and dL/dy. Overwrites
/// `grad` (which holds dL/dy on entry) with dL/dx.
template <std::floating_point Scalar>
void normalize_backward(std::span<const Scalar> normalized, Scalar norm, std::span<Scalar> grad) noexcept
{
    if (norm < Scalar(norm_epsilon)) {
        std::ranges::fill(grad, Scalar(0));
        return;
    }
    Scalar dot = 0;
    for (std::size_t j = 0; j < grad.size(); ++j)
        dot += normalized[j] * grad[j];
    for (std::size_t j = 0; j < grad.size(); ++j)
        grad[j] = (grad[j] - normalized[j] * dot) / norm;
}

namespace detail {

/// p_k proportional to exp(-alpha |x - a_k|^2), max-shifted before exp.
template <std::floating_point Scalar>
void soft_assign_into(std::span<const Scalar> x, const Codebook<Scalar>& cb, std::span<Scalar> out) noexcept
{
    const std::size_t cells = cb.cells();
    Scalar top = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t k = 0; k < cells; ++k) {
        out[k] = -cb.alpha() * squared_distance<Scalar>(x, cb.assign_anchor(k));
        top = std::max(top, out[k]);
    }
    Scalar total = 0;
    for (std::size_t k = 0; k < cells; ++k) {
        out[k] = std::exp(out[k] - top);
        total += out[k];
    }
    for (std::size_t k = 0; k < cells; ++k)
        out[k] /= total;
}

template <std::floating_point Scalar>
void check_descriptor(std::span<const Scalar> x, const Codebook<Scalar>& cb)
{
    require(x.size() == cb.dim(), ErrorKind::dimension_mismatch,
            "descriptor has dimension " + std::to_string(x.size()) + ", codebook expects " +
                std::to_string(cb.dim()));
    require(all_finite(x), ErrorKind::non_finite, "descriptor contains NaN or Inf");
}

} // namespace detail

/// Soft-assignment of one descriptor over the codebook's cells.
template <std::floating_point Scalar>
std::vector<Scalar> soft_assign(std::span<const Scalar> x, const Codebook<Scalar>& cb)
{
    detail::check_descriptor(x, cb);
    std::vector<Scalar> p(cb.cells());
    detail::soft_assign_into<Scalar>(x, cb, p);
    return p;
}

/// Raw aggregation plus the per-descriptor assignments (count x K) it used.
template <std::floating_point Scalar>
struct VladForward {
    RawVlad<Scalar> raw;
    std::vector<Scalar> assignments;
};

/**
 * V[j,k] = sum_t sum_i p_k(x_ti) (x_ti[j] - c_k[j]).
 *
 * Contributions are accumulated per frame (locations in order) and each
 * frame total is then added to V in frame order, so the result is
 * reproducible for a given input order. Cells whose assignment underflows to
 * exactly zero are skipped.
 */
template <std::floating_point Scalar>
VladForward<Scalar> actionvlad_forward_cached(const FeatureMap<Scalar>& f, const Codebook<Scalar>& cb)
{
    require(f.empty() || f.dim() == cb.dim(), ErrorKind::dimension_mismatch,
            "feature dimension " + std::to_string(f.dim()) + " does not match codebook dimension " +
                std::to_string(cb.dim()));
    const std::size_t dim = cb.dim();
    const std::size_t cells = cb.cells();
    VladForward<Scalar> out{RawVlad<Scalar>(dim, cells), std::vector<Scalar>(f.count() * cells)};
    std::vector<Scalar> frame(dim * cells);
    auto total = out.raw.values();
    for (std::size_t t = 0; t < f.frames(); ++t) {
        std::ranges::fill(frame, Scalar(0));
        for (std::size_t i = 0; i < f.locations(); ++i) {
            const std::size_t n = t * f.locations() + i;
            auto x = f.descriptor(n);
            detail::check_descriptor(x, cb);
            auto p = std::span<Scalar>(out.assignments).subspan(n * cells, cells);
            detail::soft_assign_into<Scalar>(x, cb, p);
            for (std::size_t k = 0; k < cells; ++k) {
                const Scalar pk = p[k];
                if (pk == Scalar(0))
                    continue;
                auto c = cb.residual_anchor(k);
                Scalar* acc = frame.data() + k * dim;
                for (std::size_t j = 0; j < dim; ++j)
                    acc[j] += pk * (x[j] - c[j]);
            }
        }
        for (std::size_t e = 0; e < total.size(); ++e)
            total[e] += frame[e];
    }
    return out;
}

template <std::floating_point Scalar>
RawVlad<Scalar> actionvlad_forward(const FeatureMap<Scalar>& f, const Codebook<Scalar>& cb)
{
    return actionvlad_forward_cached(f, cb).raw;
}

/// Per-column L2 normalisation; near-zero columns become exact zeros.
template <std::floating_point Scalar>
RawVlad<Scalar> intra_normalize(RawVlad<Scalar> v)
{
    for (std::size_t k = 0; k < v.cells(); ++k)
        normalize_in_place(v.column(k));
    return v;
}

/// Stacks the columns in cell order and L2-normalises the whole vector.
template <std::floating_point Scalar>
VladDescriptor<Scalar> flatten_l2_normalize(const RawVlad<Scalar>& v)
{
    VladDescriptor<Scalar> out{v.dim(), v.cells(), std::vector<Scalar>(v.values().begin(), v.values().end())};
    normalize_in_place<Scalar>(out.values);
    return out;
}

/// Full encoding chain: aggregate, intra-normalise, flatten, L2-normalise.
template <std::floating_point Scalar>
VladDescriptor<Scalar> actionvlad_encode(const FeatureMap<Scalar>& f, const Codebook<Scalar>& cb)
{
    return flatten_l2_normalize(intra_normalize(actionvlad_forward(f, cb)));
}

template <std::floating_point Scalar>
struct VladGradients {
    std::vector<Scalar> features;          ///< same layout as FeatureMap::data(); empty if not requested
    std::vector<Scalar> residual_anchors;  ///< K x D
    std::vector<Scalar> assign_anchors;    ///< K x D
};

/**
 * Backpropagates dL/dv (v the final descriptor) through flatten+L2,
 * intra-normalisation and the aggregation to the descriptors and both
 * anchor sets.
 *
 * With G_k = dL/dV[:,k] and p_nk the assignment of descriptor n:
 *   dL/dc_k  = -(sum_n p_nk) G_k
 *   dL/dz_nk = p_nk (g_nk - sum_k' p_nk' g_nk'),  g_nk = G_k . (x_n - c_k)
 *   dL/dx_n  = sum_k p_nk G_k - 2 alpha sum_k dL/dz_nk (x_n - a_k)
 *   dL/da_k  = 2 alpha sum_n dL/dz_nk (x_n - a_k)
 */
template <std::floating_point Scalar>
VladGradients<Scalar> actionvlad_backward(const FeatureMap<Scalar>& f, const Codebook<Scalar>& cb,
                                          const VladForward<Scalar>& fwd, std::span<const Scalar> upstream,
                                          bool feature_gradients = true)
{
    const std::size_t dim = cb.dim();
    const std::size_t cells = cb.cells();
    require(upstream.size() == dim * cells, ErrorKind::dimension_mismatch,
            "upstream gradient must have K * D = " + std::to_string(dim * cells) + " entries");
    require(fwd.raw.dim() == dim && fwd.raw.cells() == cells && fwd.assignments.size() == f.count() * cells,
            ErrorKind::dimension_mismatch, "cached forward pass does not match inputs");

    RawVlad<Scalar> intra = fwd.raw;
    std::vector<Scalar> column_norm(cells);
    for (std::size_t k = 0; k < cells; ++k)
        column_norm[k] = normalize_in_place(intra.column(k));
    std::vector<Scalar> flat(intra.values().begin(), intra.values().end());
    const Scalar flat_norm = normalize_in_place<Scalar>(flat);

    // dL/dV, column by column
    std::vector<Scalar> grad_v(upstream.begin(), upstream.end());
    normalize_backward<Scalar>(flat, flat_norm, grad_v);
    for (std::size_t k = 0; k < cells; ++k)
        normalize_backward<Scalar>(intra.column(k), column_norm[k],
                                   std::span<Scalar>(grad_v).subspan(k * dim, dim));

    VladGradients<Scalar> out;
    out.residual_anchors.assign(cells * dim, Scalar(0));
    out.assign_anchors.assign(cells * dim, Scalar(0));
    if (feature_gradients)
        out.features.assign(f.data().size(), Scalar(0));

    std::vector<Scalar> mass(cells, Scalar(0));
    std::vector<Scalar> dz(cells);
    const Scalar two_alpha = Scalar(2) * cb.alpha();
    for (std::size_t n = 0; n < f.count(); ++n) {
        auto x = f.descriptor(n);
        auto p = std::span<const Scalar>(fwd.assignments).subspan(n * cells, cells);
        Scalar mean_dp = 0;
        for (std::size_t k = 0; k < cells; ++k) {
            dz[k] = 0;
            if (p[k] == Scalar(0))
                continue;
            mass[k] += p[k];
            auto c = cb.residual_anchor(k);
            const Scalar* g = grad_v.data() + k * dim;
            Scalar dp = 0;
            for (std::size_t j = 0; j < dim; ++j)
                dp += g[j] * (x[j] - c[j]);
            dz[k] = dp;
            mean_dp += p[k] * dp;
        }
        for (std::size_t k = 0; k < cells; ++k)
            dz[k] = p[k] * (dz[k] - mean_dp);

        Scalar* gx = feature_gradients ? out.features.data() + n * dim : nullptr;
        for (std::size_t k = 0; k < cells; ++k) {
            if (p[k] == Scalar(0))
                continue;
            auto a = cb.assign_anchor(k);
            const Scalar* g = grad_v.data() + k * dim;
            Scalar* ga = out.assign_anchors.data() + k * dim;
            const Scalar w = two_alpha * dz[k];
            for (std::size_t j = 0; j < dim; ++j) {
                const Scalar diff = x[j] - a[j];
                ga[j] += w * diff;
                if (gx)
                    gx[j] += p[k] * g[j] - w * diff;
            }
        }
    }
    for (std::size_t k = 0; k < cells; ++k)
        for (std::size_t j = 0; j < dim; ++j)
            out.residual_anchors[k * dim + j] = -mass[k] * grad_v[k * dim + j];
    return out;
}

template <std::floating_point Scalar>
VladGradients<Scalar> actionvlad_backward(const FeatureMap<Scalar>& f, const Codebook<Scalar>& cb,
                                          std::span<const Scalar> upstream, bool feature_gradients = true)
{
    return actionvlad_backward(f, cb, actionvlad_forward_cached(f, cb), upstream, feature_gradients);
}

/// Mean of all descriptors, L2-normalised (zero rule as above).
template <std::floating_point Scalar>
std::vector<Scalar> average_pool(const FeatureMap<Scalar>& f)
{
    require(f.count() > 0 && f.dim() > 0, ErrorKind::invalid_argument, "average pooling needs at least one descriptor");
    std::vector<Scalar> out(f.dim(), Scalar(0));
    for (std::size_t n = 0; n < f.count(); ++n) {
        auto x = f.descriptor(n);
        for (std::size_t j = 0; j < out.size(); ++j)
            out[j] += x[j];
    }
    for (Scalar& v : out)
        v /= static_cast<Scalar>(f.count());
    normalize_in_place<Scalar>(out);
    return out;
}

/// Index of the first descriptor attaining the maximum of each component.
template <std::floating_point Scalar>
std::vector<std::size_t> max_pool_argmax(const FeatureMap<Scalar>& f)
{
    require(f.count() > 0 && f.dim() > 0, ErrorKind::invalid_argument, "max pooling needs at least one descriptor");
    std::vector<std::size_t> arg(f.dim(), 0);
    for (std::size_t n = 1; n < f.count(); ++n) {
        auto x = f.descriptor(n);
        for (std::size_t j = 0; j < f.dim(); ++j)
            if (x[j] > f.descriptor(arg[j])[j])
                arg[j] = n;
    }
    return arg;
}

/// Component-wise maximum over all descriptors, L2-normalised.
template <std::floating_point Scalar>
std::vector<Scalar> max_pool(const FeatureMap<Scalar>& f)
{
    auto arg = max_pool_argmax(f);
    std::vector<Scalar> out(f.dim());
    for (std::size_t j = 0; j < f.dim(); ++j)
        out[j] = f.descriptor(arg[j])[j];
    normalize_in_place<Scalar>(out);
    return out;
}

/// dL/dfeatures for max_pool: each component's gradient goes to its argmax.
template <std::floating_point Scalar>
std::vector<Scalar> max_pool_backward(const FeatureMap<Scalar>& f, std::span<const Scalar> upstream)
{
    require(upstream.size() == f.dim(), ErrorKind::dimension_mismatch, "upstream gradient must have D entries");
    auto arg = max_pool_argmax(f);
    std::vector<Scalar> pooled(f.dim());
    for (std::size_t j = 0; j < f.dim(); ++j)
        pooled[j] = f.descriptor(arg[j])[j];
    const Scalar norm = normalize_in_place<Scalar>(pooled);
    std::vector<Scalar> grad(upstream.begin(), upstream.end());
    normalize_backward<Scalar>(pooled, norm, grad);
    std::vector<Scalar> out(f.data().size(), Scalar(0));
    for (std::size_t j = 0; j < f.dim(); ++j)
        out[arg[j] * f.dim() + j] = grad[j];
    return out;
}

/// Hard assignment map: argmax_k of the soft-assignment for each descriptor,
/// laid out frame-major (t * locations + i). Lowest index wins ties.
template <std::floating_point Scalar>
std::vector<std::size_t> assignment_map(const FeatureMap<Scalar>& f, const Codebook<Scalar>& cb)
{
    std::vector<std::size_t> map(f.count());
    std::vector<Scalar> p(cb.cells());
    for (std::size_t n = 0; n < f.count(); ++n) {
        auto x = f.descriptor(n);
        detail::check_descriptor(x, cb);
        detail::soft_assign_into<Scalar>(x, cb, p);
        map[n] = static_cast<std::size_t>(std::ranges::max_element(p) - p.begin());
    }
    return map;
}

} // namespace actionvlad
