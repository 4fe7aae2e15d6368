#include "specgeo/stream_window.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "specgeo/errors.hpp"

namespace specgeo {

SlidingBuffer::SlidingBuffer(std::size_t capacity, std::size_t width)
    : capacity_(capacity), width_(width), ring_(capacity * width, 0.0) {
    if (capacity < 2 || width < 2) {
        throw std::invalid_argument("sliding buffer needs capacity >= 2 and width >= 2");
    }
}

void SlidingBuffer::push(std::span<const double> row) {
    if (row.size() != width_) {
        throw DataError("activation width " + std::to_string(row.size()) + " does not match buffer width " +
                        std::to_string(width_));
    }
    if (!std::all_of(row.begin(), row.end(), [](double v) { return std::isfinite(v); })) {
        throw DataError("activation vector contains non-finite entries");
    }
    const std::size_t slot = steps_ % capacity_;
    std::copy(row.begin(), row.end(), ring_.begin() + static_cast<std::ptrdiff_t>(slot * width_));
    ++steps_;
}

void SlidingBuffer::push(std::span<const float> row) {
    std::vector<double> widened(row.begin(), row.end());
    push(std::span<const double>(widened));
}

std::optional<ActivationWindow> SlidingBuffer::current_window() const {
    if (steps_ < capacity_) return std::nullopt;
    RowMatrix window(capacity_, width_);
    const std::size_t oldest = steps_ % capacity_;
    for (std::size_t r = 0; r < capacity_; ++r) {
        const std::size_t slot = (oldest + r) % capacity_;
        std::copy_n(ring_.begin() + static_cast<std::ptrdiff_t>(slot * width_), width_,
                    window.row(static_cast<Eigen::Index>(r)).data());
    }
    return ActivationWindow(std::move(window));
}

ActivationSource matrix_source(const RowMatrix& rows) {
    return [&rows, next = Eigen::Index{0}]() mutable -> std::optional<std::vector<double>> {
        if (next >= rows.rows()) return std::nullopt;
        const auto r = rows.row(next++);
        return std::vector<double>(r.data(), r.data() + r.size());
    };
}

DescriptorSeries descriptor_series(const ActivationSource& source, const WindowConfig& config) {
    if (config.stride == 0) throw std::invalid_argument("stride must be at least 1");
    DescriptorSeries series;
    series.stride = config.stride;
    std::optional<SlidingBuffer> buffer;
    std::size_t step = 0;
    while (auto row = source()) {
        ++step;
        if (!buffer) {
            buffer.emplace(config.capacity, row->size());
        } else if (row->size() != buffer->width()) {
            throw DataError("activation width changed from " + std::to_string(buffer->width()) + " to " +
                            std::to_string(row->size()) + " at step " + std::to_string(step));
        }
        buffer->push(std::span<const double>(*row));
        if (step >= config.capacity && (step - config.capacity) % config.stride == 0) {
            auto features = descriptor_vector(*buffer->current_window(), config.descriptor);
            features.window_index = step;
            series.vectors.push_back(features);
        }
    }
    return series;
}

DescriptorSeries descriptor_series(const RowMatrix& rows, const WindowConfig& config) {
    return descriptor_series(matrix_source(rows), config);
}

std::size_t expected_window_count(std::size_t steps, std::size_t capacity, std::size_t stride) {
    if (steps < capacity) return 0;
    return (steps - capacity) / stride + 1;
}

}  // namespace specgeo
