#include "spotfast/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "spotfast/error.hpp"

namespace spotfast::container {

static_assert(std::endian::native == std::endian::little,
              "payload encoding assumes a little-endian host");

std::string_view dtype_name(DType t) {
  switch (t) {
    case DType::U8: return "u8";
    case DType::F32: return "f32";
    case DType::F64: return "f64";
  }
  return "?";
}

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::U8: return 1;
    case DType::F32: return 4;
    case DType::F64: return 8;
  }
  return 0;
}

namespace {

DType parse_dtype(const std::string& s) {
  if (s == "u8") return DType::U8;
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  fail(ErrorKind::Io, "container: unknown dtype '" + s + "'");
}

template <class T>
Record pack(Shape shape, std::string order, std::span<const T> values, DType dtype) {
  require(static_cast<std::int64_t>(values.size()) == numel(shape),
          "container: value count does not match shape " + shape_str(shape));
  Record r;
  r.header.shape = std::move(shape);
  r.header.dtype = dtype;
  r.header.order = std::move(order);
  r.payload.resize(values.size_bytes());
  if (!values.empty()) std::memcpy(r.payload.data(), values.data(), values.size_bytes());
  return r;
}

template <class Out>
std::vector<Out> unpack(const Record& r) {
  const auto n = static_cast<std::size_t>(numel(r.header.shape));
  std::vector<Out> out(n);
  const std::uint8_t* p = r.payload.data();
  switch (r.header.dtype) {
    case DType::U8:
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<Out>(p[i]);
      break;
    case DType::F32:
      for (std::size_t i = 0; i < n; ++i) {
        float v;
        std::memcpy(&v, p + 4 * i, 4);
        out[i] = static_cast<Out>(v);
      }
      break;
    case DType::F64:
      for (std::size_t i = 0; i < n; ++i) {
        double v;
        std::memcpy(&v, p + 8 * i, 8);
        out[i] = static_cast<Out>(v);
      }
      break;
  }
  return out;
}

}  // namespace

Record from_u8(Shape shape, std::string order, std::span<const std::uint8_t> values) {
  return pack(std::move(shape), std::move(order), values, DType::U8);
}
Record from_f32(Shape shape, std::string order, std::span<const float> values) {
  return pack(std::move(shape), std::move(order), values, DType::F32);
}
Record from_f64(Shape shape, std::string order, std::span<const double> values) {
  return pack(std::move(shape), std::move(order), values, DType::F64);
}

std::vector<double> to_f64(const Record& r) { return unpack<double>(r); }
std::vector<float> to_f32(const Record& r) { return unpack<float>(r); }

std::string encode(const Record& r) {
  nlohmann::ordered_json h;
  h["shape"] = r.header.shape;
  h["dtype"] = dtype_name(r.header.dtype);
  h["order"] = r.header.order;
  for (const auto& [k, v] : r.header.extra.items()) h[k] = v;
  std::string out(kMagic);
  out += h.dump();
  out += '\n';
  out.append(reinterpret_cast<const char*>(r.payload.data()), r.payload.size());
  return out;
}

void write(std::ostream& os, const Record& r) {
  const std::string bytes = encode(r);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) fail(ErrorKind::Io, "container: write failed");
}

Header read_header(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::string_view(magic, 8) != kMagic)
    fail(ErrorKind::Io, "container: bad or missing magic");
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::Io, "container: missing header line");
  nlohmann::ordered_json h;
  try {
    h = nlohmann::ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("container: malformed header: ") + e.what());
  }
  if (!h.is_object() || !h.contains("shape") || !h.contains("dtype"))
    fail(ErrorKind::Io, "container: header lacks shape/dtype");
  Header out;
  try {
    out.shape = h.at("shape").get<Shape>();
    out.dtype = parse_dtype(h.at("dtype").get<std::string>());
    out.order = h.value("order", std::string());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::Io, std::string("container: bad header field: ") + e.what());
  }
  for (const auto& [k, v] : h.items())
    if (k != "shape" && k != "dtype" && k != "order") out.extra[k] = v;
  return out;
}

Record read(std::istream& is) {
  Record r;
  r.header = read_header(is);
  std::int64_t n = 0;
  try {
    n = numel(r.header.shape);
  } catch (const std::invalid_argument&) {
    fail(ErrorKind::Io, "container: negative dimension in header");
  }
  r.payload.resize(static_cast<std::size_t>(n) * dtype_size(r.header.dtype));
  if (!r.payload.empty() &&
      !is.read(reinterpret_cast<char*>(r.payload.data()), static_cast<std::streamsize>(r.payload.size())))
    fail(ErrorKind::Io, "container: truncated payload");
  return r;
}

Record read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open " + path);
  try {
    return read(f);
  } catch (const Error& e) {
    fail(ErrorKind::Io, path + ": " + e.what());
  }
}

Header read_file_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::Io, "cannot open " + path);
  try {
    return read_header(f);
  } catch (const Error& e) {
    fail(ErrorKind::Io, path + ": " + e.what());
  }
}

}  // namespace spotfast::container
