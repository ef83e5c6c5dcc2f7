#pragma once

// Axial slice rendering for the visual tools: HU windowing, label contour
// overlay, crop-and-zoom, and PNG encoding.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "medagent/volume.hpp"

namespace medagent {

struct Window {
  double center = 40.0;
  double width = 400.0;
};

inline constexpr Window kLungWindow{-600.0, 1500.0};
inline constexpr Window kSoftTissueWindow{40.0, 400.0};

/// Lung window for lung, airway, pleura and bronchus targets; soft tissue
/// otherwise.
Window window_for_organ(const std::string& organ);

/// 8-bit RGB raster, row-major; row y holds voxels (x = 0..width-1, y).
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  std::array<std::uint8_t, 3> pixel(int x, int y) const {
    const auto* p = &rgb[3 * (static_cast<std::size_t>(y) * width + x)];
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    auto* p = &rgb[3 * (static_cast<std::size_t>(y) * width + x)];
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }
  bool operator==(const RgbImage&) const = default;
};

/// In-plane half-open box on an axial slice.
struct PlaneBox {
  std::int64_t x0 = 0, x1 = 0, y0 = 0, y1 = 0;
};

std::uint8_t window_level(double hu, Window w) noexcept;

/// Grey-level rendering of slice z.
RgbImage render_slice(const ScalarVolume& hu, std::int64_t z, Window w);

/// Colour for label id (1-based); never grey.
std::array<std::uint8_t, 3> label_color(std::uint32_t label) noexcept;

/// Recolours every labelled pixel with a 4-neighbour of a different label or
/// outside the slice.
RgbImage overlay_contours(RgbImage base, const LabelVolume& labels, std::int64_t z);

/// Nearest-neighbour 2× upscale of the box.
RgbImage crop_zoom(const RgbImage& img, PlaneBox box);

std::vector<std::uint8_t> encode_png(const RgbImage& img);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

}  // namespace medagent
