#include "specgeo/formats.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

namespace specgeo {

namespace {

constexpr std::string_view kContainerMagic = "SPAC";

template <typename U>
void put_le(std::string& buf, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
    }
}

template <typename U>
U get_le(std::string_view bytes) {
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
        v |= static_cast<U>(static_cast<unsigned char>(bytes[i])) << (8 * i);
    }
    return v;
}

}  // namespace

void ByteWriter::put_u16(std::uint16_t v) { put_le(buf_, v); }
void ByteWriter::put_u32(std::uint32_t v) { put_le(buf_, v); }
void ByteWriter::put_f32(float v) { put_le(buf_, std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::put_f64(double v) { put_le(buf_, std::bit_cast<std::uint64_t>(v)); }

std::string_view ByteReader::get_bytes(std::size_t n, const char* what) {
    if (remaining() < n) {
        throw FormatError(std::string("truncated input while reading ") + what, offset_);
    }
    auto out = bytes_.substr(offset_, n);
    offset_ += n;
    return out;
}

std::uint16_t ByteReader::get_u16(const char* what) { return get_le<std::uint16_t>(get_bytes(2, what)); }
std::uint32_t ByteReader::get_u32(const char* what) { return get_le<std::uint32_t>(get_bytes(4, what)); }
float ByteReader::get_f32(const char* what) {
    return std::bit_cast<float>(get_le<std::uint32_t>(get_bytes(4, what)));
}
double ByteReader::get_f64(const char* what) {
    return std::bit_cast<double>(get_le<std::uint64_t>(get_bytes(8, what)));
}

std::string read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw DataError("read failed for " + path.string());
    return std::move(buf).str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw DataError("write failed for " + path.string());
}

std::string encode_container(const ActivationContainer& container) {
    ByteWriter w;
    w.put_bytes(kContainerMagic);
    w.put_u16(kContainerVersion);
    w.put_u16(container.flags);
    w.put_u32(static_cast<std::uint32_t>(container.steps()));
    w.put_u32(static_cast<std::uint32_t>(container.width()));
    const float* data = container.rows.data();
    for (Eigen::Index i = 0; i < container.rows.size(); ++i) w.put_f32(data[i]);
    return w.bytes();
}

ActivationContainer decode_container(std::string_view bytes) {
    ByteReader r(bytes);
    if (r.get_bytes(4, "magic") != kContainerMagic) throw FormatError("bad container magic", 0);
    const auto version = r.get_u16("version");
    if (version != kContainerVersion) {
        throw FormatError("unsupported container version " + std::to_string(version), 4);
    }
    ActivationContainer c;
    c.flags = r.get_u16("flags");
    const std::uint64_t steps = r.get_u32("T");
    const std::uint64_t width = r.get_u32("D");
    const std::uint64_t payload = steps * width * 4;
    if (r.remaining() < payload) {
        throw FormatError("container payload truncated: expected " + std::to_string(payload) + " bytes",
                          bytes.size());
    }
    if (r.remaining() > payload) {
        throw FormatError("trailing bytes after container payload", kContainerHeaderBytes + payload);
    }
    c.rows.resize(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(width));
    float* data = c.rows.data();
    for (std::uint64_t i = 0; i < steps * width; ++i) {
        const auto at = r.offset();
        const float v = r.get_f32("row data");
        if (!std::isfinite(v)) throw FormatError("non-finite activation value", at);
        data[i] = v;
    }
    return c;
}

void write_container(const std::filesystem::path& path, const ActivationContainer& container) {
    write_file_bytes(path, encode_container(container));
}

ActivationContainer read_container(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_container(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

std::string encode_frame(std::span<const float> row) {
    ByteWriter w;
    w.put_u32(static_cast<std::uint32_t>(row.size() * 4));
    for (float v : row) w.put_f32(v);
    return w.bytes();
}

std::optional<std::vector<float>> FrameReader::next() {
    char header[4];
    in_.read(header, 4);
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got == 0) return std::nullopt;
    if (got < 4) throw FormatError("truncated frame header", offset_ + got);
    const std::uint32_t length = get_le<std::uint32_t>(std::string_view(header, 4));
    if (length == 0 || length % 4 != 0) {
        throw FormatError("frame length " + std::to_string(length) + " is not a positive multiple of 4",
                          offset_);
    }
    std::string payload(length, '\0');
    in_.read(payload.data(), length);
    if (static_cast<std::size_t>(in_.gcount()) < length) {
        throw FormatError("truncated frame payload", offset_ + 4 + static_cast<std::size_t>(in_.gcount()));
    }
    std::vector<float> row(length / 4);
    for (std::size_t i = 0; i < row.size(); ++i) {
        row[i] = std::bit_cast<float>(get_le<std::uint32_t>(std::string_view(payload).substr(4 * i, 4)));
    }
    offset_ += 4 + length;
    ++frames_;
    return row;
}

}  // namespace specgeo
