#pragma once

#include "biopsym/error.hpp"

#include <array>
#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <vector>

namespace biopsym {

/// Binary slice-frame message: little-endian header followed by w*h grayscale bytes.
///
///   offset  size  field
///   0       8     frame_seq (u64)
///   8       4     view      (u32: 0 probe, 1 axial, 2 sagittal, 3 coronal)
///   12      4     width     (u32)
///   16      4     height    (u32)
///   20      w*h   pixels, row-major
struct FrameHeader {
  std::uint64_t frame_seq = 0;
  std::uint32_t view = 0;
  std::uint32_t width = 0;
  std::uint32_t height = 0;

  friend bool operator==(const FrameHeader&, const FrameHeader&) = default;
};

inline constexpr std::size_t kFrameHeaderSize = 20;

namespace detail {
template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t off) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(in[off + i]) << (8 * i);
  return v;
}
}  // namespace detail

inline std::vector<std::uint8_t> encode_frame(const FrameHeader& h, std::span<const std::uint8_t> pixels) {
  if (pixels.size() != static_cast<std::size_t>(h.width) * h.height) throw InvalidParams("pixel count does not match header");
  std::vector<std::uint8_t> out;
  out.reserve(kFrameHeaderSize + pixels.size());
  detail::put_le(out, h.frame_seq);
  detail::put_le(out, h.view);
  detail::put_le(out, h.width);
  detail::put_le(out, h.height);
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

inline FrameHeader decode_frame_header(std::span<const std::uint8_t> msg) {
  if (msg.size() < kFrameHeaderSize) throw FormatError("frame shorter than its header");
  FrameHeader h{detail::get_le<std::uint64_t>(msg, 0), detail::get_le<std::uint32_t>(msg, 8),
                detail::get_le<std::uint32_t>(msg, 12), detail::get_le<std::uint32_t>(msg, 16)};
  if (msg.size() != kFrameHeaderSize + static_cast<std::size_t>(h.width) * h.height)
    throw FormatError("frame payload size does not match header");
  return h;
}

/// 64-bit FNV-1a, hex-encoded. Stable across platforms; used for frame digests.
inline std::string digest_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace biopsym
