#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "actionvlad/error.hpp"

namespace actionvlad {

template <std::floating_point Scalar>
bool all_finite(std::span<const Scalar> values) noexcept
{
    for (Scalar v : values)
        if (!std::isfinite(v))
            return false;
    return true;
}

/**
 * Local descriptors of one video: `frames` x `locations` descriptors of
 * `dim` values each, stored row-major with the frame index outermost and the
 * descriptor component innermost.
 *
 * A map with zero frames, locations or dim is "empty"; the fusion operators
 * accept empty maps as identity elements, the pooling operators reject them
 * where the result would be undefined.
 */
template <std::floating_point Scalar = double>
class FeatureMap {
public:
    using value_type = Scalar;

    FeatureMap() = default;

    FeatureMap(std::size_t frames, std::size_t locations, std::size_t dim)
        : frames_(frames), locations_(locations), dim_(dim), data_(frames * locations * dim, Scalar(0))
    {
    }

    FeatureMap(std::size_t frames, std::size_t locations, std::size_t dim, std::vector<Scalar> data)
        : frames_(frames), locations_(locations), dim_(dim), data_(std::move(data))
    {
        require(data_.size() == frames * locations * dim, ErrorKind::size_mismatch,
                "feature map holds " + std::to_string(data_.size()) + " values, expected " +
                    std::to_string(frames * locations * dim));
        require(all_finite<Scalar>(data_), ErrorKind::non_finite, "feature map contains NaN or Inf");
    }

    std::size_t frames() const noexcept { return frames_; }
    std::size_t locations() const noexcept { return locations_; }
    std::size_t dim() const noexcept { return dim_; }
    /// Number of descriptors, frames() * locations().
    std::size_t count() const noexcept { return frames_ * locations_; }
    bool empty() const noexcept { return data_.empty(); }

    std::span<const Scalar> data() const noexcept { return data_; }
    std::span<Scalar> data() noexcept { return data_; }

    /// Descriptor by flat index n = t * locations() + i.
    std::span<const Scalar> descriptor(std::size_t n) const noexcept
    {
        return std::span<const Scalar>(data_).subspan(n * dim_, dim_);
    }
    std::span<Scalar> descriptor(std::size_t n) noexcept
    {
        return std::span<Scalar>(data_).subspan(n * dim_, dim_);
    }
    std::span<const Scalar> descriptor(std::size_t t, std::size_t i) const noexcept
    {
        return descriptor(t * locations_ + i);
    }
    std::span<Scalar> descriptor(std::size_t t, std::size_t i) noexcept
    {
        return descriptor(t * locations_ + i);
    }

    template <std::floating_point Other>
    FeatureMap<Other> cast() const
    {
        std::vector<Other> converted(data_.begin(), data_.end());
        return FeatureMap<Other>(frames_, locations_, dim_, std::move(converted));
    }

    bool operator==(const FeatureMap&) const = default;

private:
    std::size_t frames_ = 0;
    std::size_t locations_ = 0;
    std::size_t dim_ = 0;
    std::vector<Scalar> data_;
};

} // namespace actionvlad
