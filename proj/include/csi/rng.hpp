#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "csi/image.hpp"

namespace csi {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Labeled substream seed: every stochastic stage (datagen, train, sample)
/// draws from derive_seed(master, "<label>", index...) so commands can be
/// re-run independently and still reproduce each other's streams.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the label
  for (unsigned char c : label) h = (h ^ c) * 0x100000001b3ULL;
  std::uint64_t s = mix64(master ^ mix64(h));
  s = mix64(s ^ mix64(a + 0x632be59bd9b4e019ULL));
  s = mix64(s ^ mix64(b + 0x8cb92ba72f3d8dd7ULL));
  return s;
}

inline Image2D normal_image(int rows, int cols, Rng& rng) {
  Image2D img(rows, cols);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  for (float& v : img.values()) v = nd(rng);
  return img;
}

}  // namespace csi
