#pragma once

#include <stdexcept>
#include <string>

namespace specgeo {

// Malformed or degenerate input data (non-finite entries, bad containers,
// all-zero spectra). Invalid parameters use std::invalid_argument instead.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public DataError {
public:
    FormatError(const std::string& what, std::size_t offset)
        : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace specgeo
