#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "specgeo/spectral_features.hpp"

namespace specgeo {

/// Ring buffer over the most recent `capacity` activation vectors of a stream.
/// Holds at most capacity * width scalars.
class SlidingBuffer {
public:
    SlidingBuffer(std::size_t capacity, std::size_t width);

    void push(std::span<const double> row);
    void push(std::span<const float> row);

    /// The last `capacity` rows in arrival order, or nothing while underfull.
    std::optional<ActivationWindow> current_window() const;

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t width() const noexcept { return width_; }
    std::size_t step_counter() const noexcept { return steps_; }
    std::size_t stored_rows() const noexcept { return std::min(steps_, capacity_); }

private:
    std::size_t capacity_;
    std::size_t width_;
    std::size_t steps_ = 0;
    std::vector<double> ring_;
};

struct DescriptorSeries {
    std::vector<FeatureVector> vectors;
    std::size_t stride = 1;

    std::size_t size() const noexcept { return vectors.size(); }
    bool empty() const noexcept { return vectors.empty(); }
};

struct WindowConfig {
    std::size_t capacity = 32;
    std::size_t stride = 1;
    DescriptorOptions descriptor{};
};

/// Pull-style activation stream: returns the next row, or nothing at the end.
using ActivationSource = std::function<std::optional<std::vector<double>>()>;

/// Source over the rows of a T x D matrix.
ActivationSource matrix_source(const RowMatrix& rows);

/// Feeds the stream through a sliding buffer and emits a descriptor vector at
/// every step t (1-based) with t >= capacity and (t - capacity) % stride == 0.
/// FeatureVector::window_index is that step t. A width change throws
/// DataError naming the offending step.
DescriptorSeries descriptor_series(const ActivationSource& source, const WindowConfig& config);
DescriptorSeries descriptor_series(const RowMatrix& rows, const WindowConfig& config);

/// Number of windows emitted for a stream of `steps` rows.
std::size_t expected_window_count(std::size_t steps, std::size_t capacity, std::size_t stride);

}  // namespace specgeo
