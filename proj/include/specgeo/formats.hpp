#pragma once

// Binary container formats. Everything is little-endian regardless of host.
//
// Activation container "SPAC" (version 1):
//   offset 0   char[4]  "SPAC"
//   offset 4   u16      version (1)
//   offset 6   u16      flags (bit 0: structured sequence)
//   offset 8   u32      T (time steps)
//   offset 12  u32      D (row width)
//   offset 16  f32[T*D] rows, time-major
//
// Stream frame: u32 payload length in bytes (= 4 D), then D f32 values.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "specgeo/errors.hpp"

namespace specgeo {

using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ByteWriter {
public:
    void put_bytes(std::string_view bytes) { buf_.append(bytes); }
    void put_u16(std::uint16_t v);
    void put_u32(std::uint32_t v);
    void put_f32(float v);
    void put_f64(double v);

    const std::string& bytes() const noexcept { return buf_; }

private:
    std::string buf_;
};

/// Bounds-checked reader; every failure reports the byte offset.
class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::string_view get_bytes(std::size_t n, const char* what);
    std::uint16_t get_u16(const char* what);
    std::uint32_t get_u32(const char* what);
    float get_f32(const char* what);
    double get_f64(const char* what);

    std::size_t offset() const noexcept { return offset_; }
    std::size_t remaining() const noexcept { return bytes_.size() - offset_; }

private:
    std::string_view bytes_;
    std::size_t offset_ = 0;
};

std::string read_file_bytes(const std::filesystem::path& path);
/// Truncates and writes; errors carry the path.
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

inline constexpr std::uint16_t kContainerVersion = 1;
inline constexpr std::uint16_t kFlagStructured = 0x1;
inline constexpr std::size_t kContainerHeaderBytes = 16;

struct ActivationContainer {
    std::uint16_t flags = 0;
    RowMatrixF rows;  // T x D

    bool structured() const noexcept { return (flags & kFlagStructured) != 0; }
    std::size_t steps() const noexcept { return static_cast<std::size_t>(rows.rows()); }
    std::size_t width() const noexcept { return static_cast<std::size_t>(rows.cols()); }
};

std::string encode_container(const ActivationContainer& container);
ActivationContainer decode_container(std::string_view bytes);
void write_container(const std::filesystem::path& path, const ActivationContainer& container);
ActivationContainer read_container(const std::filesystem::path& path);

std::string encode_frame(std::span<const float> row);

/// Reads frames from a byte stream. Returns nothing on a clean end of stream
/// (EOF exactly at a frame boundary); throws FormatError on truncation or a
/// length that is not a positive multiple of 4.
class FrameReader {
public:
    explicit FrameReader(std::istream& in) : in_(in) {}

    std::optional<std::vector<float>> next();
    std::size_t offset() const noexcept { return offset_; }
    std::size_t frames_read() const noexcept { return frames_; }

private:
    std::istream& in_;
    std::size_t offset_ = 0;
    std::size_t frames_ = 0;
};

}  // namespace specgeo
