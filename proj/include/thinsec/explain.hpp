#pragma once

#include <functional>
#include <string>
#include <vector>

#include "thinsec/corpus.hpp"
#include "thinsec/image.hpp"
#include "thinsec/model.hpp"

namespace thinsec {

enum class SaliencyMethod { gradcam, guided_bp, guided_gradcam, attention };
const char* method_name(SaliencyMethod m);  // gradcam | guided_bp | guided_gradcam | attention
SaliencyMethod parse_method(const std::string& name);

struct SaliencyMap {
  FloatImage values;  // single channel, min-max normalized to [0, 1]
  SaliencyMethod method = SaliencyMethod::gradcam;
  int target_class = 0;
  std::string source;  // "<arch>:<layer>"
};

// Per-map min-max normalization; a constant map becomes all zeros.
void normalize_minmax(FloatImage& map);

// Grad-CAM on a captured feature stack A (C x h x w) and dlogit/dA (same
// shape): alpha_k = spatial mean of the gradient, L = ReLU(sum_k alpha_k A_k).
FloatImage grad_cam_coarse(const Tensor& features, const Tensor& gradients);

struct GradCamDetail {
  FloatImage coarse;     // h x w, unnormalized
  FloatImage upsampled;  // 224 x 224, unnormalized
  SaliencyMap map;
};

// `input` is one standardized image, 1 x 3 x 224 x 224. Throws
// UnsupportedArchitectureError for a vit (use attention_maps).
GradCamDetail grad_cam_detail(const Model& model, const Tensor& input, int target_class);
SaliencyMap grad_cam(const Model& model, const Tensor& input, int target_class);

// Input gradient of the target logit of f under the guided ReLU backward
// (gradient passes where the forward input and the upstream gradient are both
// positive), reduced by channel max over dimension 1 and clamped at zero.
// Unnormalized, H x W.
FloatImage guided_backprop_raw(const std::function<Tensor(const Tensor&)>& f, const Tensor& input, int target_class);
SaliencyMap guided_backprop(const Model& model, const Tensor& input, int target_class);

// Product of the upsampled Grad-CAM map and the guided map, both taken before
// normalization, then normalized.
SaliencyMap guided_grad_cam(const Model& model, const Tensor& input, int target_class);

struct AttentionStack {
  std::vector<Tensor> layers;  // heads x T x T per layer
  int heads = 0;
  int tokens = 0;
  int grid = 0;  // patches per side

  // CLS row without the CLS column, patch raster order, grid x grid.
  FloatImage cls_grid(int layer, int head) const;
  // Entropy (nats) of the CLS grid renormalized to sum 1.
  double cls_entropy(int layer, int head) const;
  double mean_cls_entropy(int layer) const;
  // Head-averaged CLS grid of one layer.
  FloatImage mean_cls_grid(int layer) const;
  // Attention rollout: product over layers of 0.5 (mean-head attention) + 0.5 I,
  // rows renormalized; returns the CLS grid of the product.
  FloatImage rollout() const;
};

AttentionStack attention_maps(const Model& model, const Tensor& input);
// Upsampled (bilinear, 224) and normalized.
SaliencyMap attention_saliency(const AttentionStack& stack, int layer, int head);  // head -1: mean over heads

// Dispatches on method; attention uses the head-averaged last layer.
SaliencyMap explain(const Model& model, const Tensor& input, SaliencyMethod method, int target_class);

// Standardized 1 x 3 x 224 x 224 tensor from an RGB image in [0, 1] of any size.
Tensor model_input(const FloatImage& rgb, const NormStats& norm);

int predict_class(const Model& model, const Tensor& input);

struct AngleResult {
  double angle = 0.0;
  int predicted = 0;
  SaliencyMap map;  // rotated back into the base frame
};

struct RotationStability {
  std::vector<AngleResult> per_angle;
  double stability = 1.0;  // mean pairwise IoU of the top-10% masks
  bool class_invariant = true;
};

// Each angle: rotate the base image about its center (reflection padding),
// center-crop to 224, explain the class predicted at angle 0, rotate
// the map back. Masks compare the top 10% of pixels inside the disc inscribed
// in the 224 frame, the region every rotation keeps in view. Angles must
// include 0.
RotationStability rotation_stability(const Model& model, const FloatImage& base, const std::vector<double>& angles,
                                     SaliencyMethod method);
// Pixels inside the inscribed disc whose value is at least the value of the
// ceil(10%)-th largest disc pixel.
std::vector<bool> top_decile_mask(const FloatImage& map);
double mask_iou(const std::vector<bool>& a, const std::vector<bool>& b);

enum class RenderMode { overlay, masked, raw };
const char* render_mode_name(RenderMode m);

struct Rgb8 {
  std::uint8_t r, g, b;
};
// R = round(255 v), G = round(255 (1 - |2 v - 1|)), B = round(255 (1 - v)).
Rgb8 colormap(float v);

// overlay: round((1 - alpha) I + alpha colormap(v)); masked: I where v >= threshold,
// black elsewhere; raw: the colormap alone. Image and map must share extent.
Image render(const Image& rgb, const FloatImage& map, RenderMode mode, double alpha = 0.5, double threshold = 0.5);

// Hit iff the first (raster order) maximum of the map lies inside the mask.
bool pointing_game(const FloatImage& map, const Image& mask);
double corpus_pointing_score(const std::vector<FloatImage>& maps, const std::vector<Image>& masks);

}  // namespace thinsec
