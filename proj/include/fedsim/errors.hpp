#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fedsim {

// Error taxonomy shared across the library. Format errors carry the byte
// offset of the offending field so parser failures are diagnosable.

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : Error { using Error::Error; };
struct ArchitectureError : Error { using Error::Error; };
struct LabelError : Error { using Error::Error; };
struct TraceError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct PartitionError : Error { using Error::Error; };
struct AggregationError : Error { using Error::Error; };
struct MetricError : Error { using Error::Error; };
struct IoError : Error { using Error::Error; };

struct FormatError : Error {
    FormatError(const std::string& msg, std::size_t byte_offset)
        : Error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    std::size_t offset;
};

}  // namespace fedsim
