#include "thinsec/augment.hpp"

#include <algorithm>
#include <cmath>

namespace thinsec {

void AugmentPolicy::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(hflip_p) || !prob(vflip_p)) throw ConfigError("flip probabilities must lie in [0, 1]");
  if (!(jitter >= 0.0 && jitter < 1.0)) throw ConfigError("jitter strength must lie in [0, 1)");
  if (!(crop_min > 0.0 && crop_min <= crop_max && crop_max <= 1.0)) {
    throw ConfigError("crop area range must satisfy 0 < min <= max <= 1");
  }
}

AugmentPolicy AugmentPolicy::none() {
  AugmentPolicy p;
  p.hflip_p = 0.0;
  p.vflip_p = 0.0;
  p.jitter = 0.0;
  p.crop_min = 1.0;
  p.crop_max = 1.0;
  p.enabled = false;
  return p;
}

namespace {

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void color_jitter(FloatImage& img, double brightness, double contrast, double saturation) {
  for (auto& v : img.data) v = std::clamp(static_cast<float>(v * brightness), 0.0f, 1.0f);
  double mean = 0.0;
  const std::size_t n = img.data.size() / 3;
  for (std::size_t p = 0; p < n; ++p) mean += luma(img.data[3 * p], img.data[3 * p + 1], img.data[3 * p + 2]);
  mean /= static_cast<double>(n);
  const auto m = static_cast<float>(mean), c = static_cast<float>(contrast), s = static_cast<float>(saturation);
  for (auto& v : img.data) v = std::clamp(m + c * (v - m), 0.0f, 1.0f);
  for (std::size_t p = 0; p < n; ++p) {
    float* px = &img.data[3 * p];
    const float g = luma(px[0], px[1], px[2]);
    for (int k = 0; k < 3; ++k) px[k] = std::clamp(g + s * (px[k] - g), 0.0f, 1.0f);
  }
}

}  // namespace

Augmented augment(const Sample& sample, const AugmentPolicy& policy, RngStream& rng) {
  FloatImage img = to_float(sample.image);
  std::optional<Image> mask = sample.mask;
  // Every draw happens regardless of outcome so streams stay aligned across policies.
  const bool hflip = rng.bernoulli(policy.hflip_p);
  const bool vflip = rng.bernoulli(policy.vflip_p);
  const double b = rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter);
  const double c = rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter);
  const double s = rng.uniform(1.0 - policy.jitter, 1.0 + policy.jitter);
  const double area = rng.uniform(policy.crop_min, policy.crop_max);
  const double fx = rng.uniform(), fy = rng.uniform();

  if (hflip) {
    img = flip_horizontal(img);
    if (mask) mask = flip_horizontal(*mask);
  }
  if (vflip) {
    img = flip_vertical(img);
    if (mask) mask = flip_vertical(*mask);
  }
  if (policy.jitter > 0.0) color_jitter(img, b, c, s);

  const double scale = std::sqrt(area);
  const Window w{fx * img.width * (1.0 - scale), fy * img.height * (1.0 - scale), img.width * scale,
                 img.height * scale};
  Augmented out;
  out.image = resample_bilinear(img, w, kInputSize, kInputSize);
  if (mask) out.mask = resample_nearest(*mask, w, kInputSize, kInputSize);
  return out;
}

}  // namespace thinsec
