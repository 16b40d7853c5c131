#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "csi/image.hpp"
#include "csi/rng.hpp"

namespace csi {

enum class MaskFamily { Metal, Circle, HRect, VRect };

std::string to_string(MaskFamily f);
std::optional<MaskFamily> parse_mask_family(std::string_view name);

/// Accepted shape sizes in pixels: circle diameter, rectangle width.
inline constexpr int kCircleMinPx = 20;
inline constexpr int kCircleMaxPx = 60;
inline constexpr int kRectMinPx = 20;
inline constexpr int kRectMaxPx = 50;

/// Binary mask with zeros inside a circle (diameter `size_px`) or a
/// full-length horizontal / vertical band of width `size_px`. Placement is
/// uniform over positions where the shape fits inside the image.
Image2D synthetic_mask(MaskFamily kind, int size_px, std::uint64_t seed, int rows, int cols);

/// Size drawn uniformly from the accepted range, capped at what fits.
int sample_mask_size(MaskFamily kind, int rows, int cols, Rng& rng);

}  // namespace csi
