// SPDX-License-Identifier: Apache-2.0
#include "mgf/tensor_io.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "mgf/errors.hpp"

namespace mgf::io {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

void ByteReader::need(std::size_t n) const {
  if (pos_ + n > bytes_.size())
    throw IoError(what_ + ": corrupt length (truncated at byte " + std::to_string(pos_) + ")");
}

std::uint32_t ByteReader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}

std::uint64_t ByteReader::u64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str(std::size_t n) {
  need(n);
  std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return s;
}

std::vector<std::uint8_t> encode_ten(const Tensor& t) {
  std::vector<std::uint8_t> out{'T', 'E', 'N', '1'};
  out.reserve(8 + 4 * t.rank() + 8 * t.size());
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.values()) put_f64(out, v);
  return out;
}

Tensor decode_ten(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes, ".ten");
  if (r.str(4) != "TEN1") throw IoError(".ten: bad magic");
  const auto rank = r.u32();
  if (rank > 4) throw IoError(".ten: rank " + std::to_string(rank) + " above 4");
  Shape shape;
  for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(r.u32());
  const std::size_t n = shape_volume(shape);
  if (r.remaining() != 8 * n) throw IoError(".ten: corrupt length");
  std::vector<double> v(n);
  for (auto& x : v) x = r.f64();
  return Tensor(std::move(shape), std::move(v));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename to " + path.string() + " failed: " + ec.message());
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

void write_ten(const std::filesystem::path& path, const Tensor& t) { write_atomic(path, encode_ten(t)); }

Tensor read_ten(const std::filesystem::path& path) {
  try {
    return decode_ten(read_file(path));
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != width * height) throw ContractError("write_pgm: pixel count mismatch");
  const std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  write_atomic(path, bytes);
}

Tensor read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
    std::string s;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) s.push_back(static_cast<char>(bytes[pos++]));
    return s;
  };
  if (token() != "P5") throw IoError(path.string() + ": not a P5 graymap");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw IoError(path.string() + ": malformed PGM header");
  }
  if (maxval != 255) throw IoError(path.string() + ": only maxval 255 is supported");
  ++pos;  // single whitespace after maxval
  if (bytes.size() - pos != w * h) throw IoError(path.string() + ": corrupt length");
  Tensor t({1, h, w});
  for (std::size_t i = 0; i < w * h; ++i) t[i] = bytes[pos + i] / 255.0;
  return t;
}

std::vector<std::uint8_t> to_gray8(const Tensor& image) {
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::clamp(image[i], 0.0, 1.0);
    px[i] = static_cast<std::uint8_t>(std::floor(v * 255.0 + 0.5));
  }
  return px;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace mgf::io
