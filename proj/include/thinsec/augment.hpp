#pragma once

#include <cstdint>
#include <optional>

#include "thinsec/corpus.hpp"
#include "thinsec/rng.hpp"

namespace thinsec {

struct AugmentPolicy {
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double jitter = 0.2;       // brightness, contrast and saturation factors ~ U[1 - j, 1 + j]
  double crop_min = 0.8;     // crop area fraction ~ U[crop_min, crop_max]
  double crop_max = 1.0;
  bool enabled = true;

  void validate() const;
  static AugmentPolicy none();
};

struct Augmented {
  FloatImage image;           // 224 x 224 x 3, values in [0, 1]
  std::optional<Image> mask;  // 224 x 224 x 1, values 0/1
};

// Order: horizontal flip, vertical flip, color jitter (brightness, contrast,
// saturation), square-aspect crop covering an area fraction drawn from
// [crop_min, crop_max] at a uniform position, resize to 224. The mask follows
// the flips and crop with nearest-neighbour sampling and skips the jitter.
Augmented augment(const Sample& sample, const AugmentPolicy& policy, RngStream& rng);

// Stream for sample `index` in `epoch`; serial and parallel runs draw identical values.
inline RngStream augment_stream(std::uint64_t seed, std::uint64_t epoch, std::uint64_t index) {
  return RngStream(mix64(seed ^ 0x61756775ull), epoch, index);
}

}  // namespace thinsec
