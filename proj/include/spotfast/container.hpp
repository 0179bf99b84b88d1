#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "spotfast/tensor.hpp"

// Binary tensor container:
//   8-byte magic "SFTENS01"
//   one UTF-8 JSON header line, e.g. {"shape":[29,32,32,3],"dtype":"u8","order":"THWC"}\n
//   row-major little-endian payload
// Extra header keys (boundary, name, ...) follow the three standard ones.
namespace spotfast::container {

inline constexpr std::string_view kMagic = "SFTENS01";

enum class DType { U8, F32, F64 };

std::string_view dtype_name(DType t);
std::size_t dtype_size(DType t);

struct Header {
  Shape shape;
  DType dtype = DType::F32;
  std::string order;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

struct Record {
  Header header;
  std::vector<std::uint8_t> payload;
};

Record from_u8(Shape shape, std::string order, std::span<const std::uint8_t> values);
Record from_f32(Shape shape, std::string order, std::span<const float> values);
Record from_f64(Shape shape, std::string order, std::span<const double> values);

/// Decodes any dtype to doubles / floats.
std::vector<double> to_f64(const Record& r);
std::vector<float> to_f32(const Record& r);

std::string encode(const Record& r);
void write(std::ostream& os, const Record& r);

/// Throws Error(Io) on truncation, bad magic or malformed header.
Header read_header(std::istream& is);
Record read(std::istream& is);

Record read_file(const std::string& path);
Header read_file_header(const std::string& path);

}  // namespace spotfast::container
