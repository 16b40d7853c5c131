#include "csi/masks.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace csi {

std::string to_string(MaskFamily f) {
  switch (f) {
    case MaskFamily::Metal: return "metal";
    case MaskFamily::Circle: return "circle";
    case MaskFamily::HRect: return "hrect";
    case MaskFamily::VRect: return "vrect";
  }
  return "unknown";
}

std::optional<MaskFamily> parse_mask_family(std::string_view name) {
  if (name == "metal") return MaskFamily::Metal;
  if (name == "circle") return MaskFamily::Circle;
  if (name == "hrect") return MaskFamily::HRect;
  if (name == "vrect") return MaskFamily::VRect;
  return std::nullopt;
}

Image2D synthetic_mask(MaskFamily kind, int size_px, std::uint64_t seed, int rows, int cols) {
  Rng rng(derive_seed(seed, "mask", static_cast<std::uint64_t>(kind)));
  Image2D mask(rows, cols, 1.0f);
  switch (kind) {
    case MaskFamily::Circle: {
      if (size_px < kCircleMinPx || size_px > kCircleMaxPx)
        throw std::invalid_argument("circle diameter must be in [20, 60] px");
      if (size_px > std::min(rows, cols)) throw std::invalid_argument("circle does not fit in image");
      const double r = 0.5 * size_px;
      const double cy = std::uniform_real_distribution<double>(r, rows - r)(rng);
      const double cx = std::uniform_real_distribution<double>(r, cols - r)(rng);
      for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
          const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
          if (dx * dx + dy * dy <= r * r) mask(y, x) = 0.0f;
        }
      break;
    }
    case MaskFamily::HRect:
    case MaskFamily::VRect: {
      if (size_px < kRectMinPx || size_px > kRectMaxPx)
        throw std::invalid_argument("rectangle width must be in [20, 50] px");
      const bool horizontal = kind == MaskFamily::HRect;
      const int extent = horizontal ? rows : cols;
      if (size_px > extent) throw std::invalid_argument("rectangle does not fit in image");
      const int start = std::uniform_int_distribution<int>(0, extent - size_px)(rng);
      for (int y = 0; y < rows; ++y)
        for (int x = 0; x < cols; ++x) {
          const int along = horizontal ? y : x;
          if (along >= start && along < start + size_px) mask(y, x) = 0.0f;
        }
      break;
    }
    case MaskFamily::Metal:
      throw std::invalid_argument("metal masks come from render_mask, not synthetic_mask");
  }
  return mask;
}

int sample_mask_size(MaskFamily kind, int rows, int cols, Rng& rng) {
  int lo = 0, hi = 0;
  switch (kind) {
    case MaskFamily::Circle:
      lo = kCircleMinPx;
      hi = std::min(kCircleMaxPx, std::min(rows, cols));
      break;
    case MaskFamily::HRect:
      lo = kRectMinPx;
      hi = std::min(kRectMaxPx, rows);
      break;
    case MaskFamily::VRect:
      lo = kRectMinPx;
      hi = std::min(kRectMaxPx, cols);
      break;
    case MaskFamily::Metal:
      throw std::invalid_argument("metal masks have no size parameter");
  }
  if (hi < lo) throw std::invalid_argument("image too small for synthetic masks");
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace csi
