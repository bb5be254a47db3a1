#pragma once

#include <cstdint>
#include <vector>

#include "mopt/core.h"

namespace mopt {

// Half-open box [x0, x1) x [y0, y1) in element coordinates.
struct Box {
  std::int32_t x0 = 0;
  std::int32_t y0 = 0;
  std::int32_t x1 = 0;
  std::int32_t y1 = 0;

  std::int64_t width() const { return x1 - x0; }
  std::int64_t height() const { return y1 - y0; }
  std::int64_t area() const {
    return width() > 0 && height() > 0 ? width() * height() : 0;
  }
  bool empty() const { return area() == 0; }

  Box Clipped(std::uint32_t frame_width, std::uint32_t frame_height) const;

  friend bool operator==(const Box&, const Box&) = default;
};

// One detected object as emitted by an instance head.
struct InstanceCandidate {
  ClassId class_id = 0;
  double score = 0.0;
  Box box;
  // Row-major mask logits over a patch_height x patch_width grid spanning
  // the box corner to corner.
  std::uint32_t patch_width = 28;
  std::uint32_t patch_height = 28;
  std::vector<float> mask_logits;
  TrackId track_id = kNoTrack;  // kNoTrack until associated
  std::vector<float> embedding;

  friend bool operator==(const InstanceCandidate&,
                         const InstanceCandidate&) = default;
};

}  // namespace mopt
