#include "alignmamba/mat1.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

namespace alignmamba {
namespace {

constexpr char kMagic[4] = {'M', 'A', 'T', '1'};
constexpr std::size_t kHeader = 6;

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

template <class U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace

std::vector<std::uint8_t> encode_mat1(const Tensor& t) {
  if (t.rank() > 255) throw ShapeError("MAT1 supports rank <= 255");
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(static_cast<std::uint8_t>(t.dtype()));
  out.push_back(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw ShapeError("MAT1 dimension exceeds u32: " + to_string(t.shape()));
    }
    put_le(out, static_cast<std::uint32_t>(d));
  }
  const std::size_t width = t.dtype() == DType::f32 ? 4 : 8;
  out.reserve(out.size() + t.size() * width);
  for (double v : t.data()) {
    if (t.dtype() == DType::f32) {
      put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le(out, std::bit_cast<std::uint64_t>(v));
    }
  }
  return out;
}

Tensor decode_mat1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError(0, "bad MAT1 magic");
  }
  if (bytes.size() < kHeader) throw ParseError(bytes.size(), "truncated MAT1 header");
  const std::uint8_t code = bytes[4];
  if (code > 1) throw ParseError(4, "unknown MAT1 dtype code " + std::to_string(code));
  const DType dtype = static_cast<DType>(code);
  const std::size_t rank = bytes[5];
  const std::size_t dims_end = kHeader + 4 * rank;
  if (bytes.size() < dims_end) {
    throw ParseError(bytes.size(), "truncated MAT1 dimensions: expected " +
                                       std::to_string(dims_end) + " header bytes, got " +
                                       std::to_string(bytes.size()));
  }
  Shape shape(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = get_le<std::uint32_t>(bytes.data() + kHeader + 4 * i);
  }
  const std::size_t width = dtype == DType::f32 ? 4 : 8;
  const std::size_t expected = dims_end + numel(shape) * width;
  if (bytes.size() != expected) {
    throw ParseError(bytes.size(), std::string(bytes.size() < expected ? "truncated" : "oversized") +
                                       " MAT1 payload: expected " + std::to_string(expected) +
                                       " bytes, got " + std::to_string(bytes.size()));
  }
  std::vector<double> values(numel(shape));
  const std::uint8_t* p = bytes.data() + dims_end;
  for (std::size_t i = 0; i < values.size(); ++i, p += width) {
    values[i] = dtype == DType::f32
                    ? static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(p)))
                    : std::bit_cast<double>(get_le<std::uint64_t>(p));
  }
  return Tensor(std::move(shape), std::move(values), dtype);
}

void save_mat1(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_mat1(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

Tensor load_mat1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_mat1(bytes);
}

}  // namespace alignmamba
