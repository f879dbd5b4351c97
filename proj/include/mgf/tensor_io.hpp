// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mgf/tensor.hpp"

namespace mgf::io {

// ".ten": "TEN1", u32 rank, u32 dims..., f64 data; all little-endian.
std::vector<std::uint8_t> encode_ten(const Tensor& t);
Tensor decode_ten(const std::vector<std::uint8_t>& bytes);

void write_ten(const std::filesystem::path& path, const Tensor& t);
Tensor read_ten(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255). `pixels` is row-major, height*width long.
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               const std::vector<std::uint8_t>& pixels);
/// Reads a P5 graymap into a [1,H,W] tensor scaled to [0,1] by /255.
Tensor read_pgm(const std::filesystem::path& path);

/// Image in [0,1] to 8-bit: floor(clamp(v,0,1)*255 + 0.5). Channels are
/// stacked vertically so a [C,H,W] tensor renders as a (C*H) x W graymap.
std::vector<std::uint8_t> to_gray8(const Tensor& image);

/// Writes `bytes` to a sibling temp file then renames over `path`.
void write_atomic(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Little-endian primitives shared with the checkpoint format.
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str(std::size_t n);
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const;
  const std::vector<std::uint8_t>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

/// Shortest round-trip text form of a double ("%.17g").
std::string format_double(double v);

}  // namespace mgf::io
