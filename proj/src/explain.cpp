#include "thinsec/explain.hpp"

#include <algorithm>
#include <cmath>

#include "thinsec/metrics.hpp"

namespace thinsec {

const char* method_name(SaliencyMethod m) {
  switch (m) {
    case SaliencyMethod::gradcam: return "gradcam";
    case SaliencyMethod::guided_bp: return "guided_bp";
    case SaliencyMethod::guided_gradcam: return "guided_gradcam";
    case SaliencyMethod::attention: return "attention";
  }
  return "?";
}

SaliencyMethod parse_method(const std::string& name) {
  for (auto m : {SaliencyMethod::gradcam, SaliencyMethod::guided_bp, SaliencyMethod::guided_gradcam,
                 SaliencyMethod::attention}) {
    if (name == method_name(m)) return m;
  }
  throw ConfigError("unknown explanation method '" + name +
                    "' (expected gradcam, guided_bp, guided_gradcam or attention)");
}

const char* render_mode_name(RenderMode m) {
  switch (m) {
    case RenderMode::overlay: return "overlay";
    case RenderMode::masked: return "masked";
    case RenderMode::raw: return "raw";
  }
  return "?";
}

void normalize_minmax(FloatImage& map) {
  if (map.data.empty()) return;
  const auto [lo, hi] = std::minmax_element(map.data.begin(), map.data.end());
  const float mn = *lo, mx = *hi;
  if (!(mx > mn)) {
    std::fill(map.data.begin(), map.data.end(), 0.0f);
    return;
  }
  const double range = static_cast<double>(mx) - mn;
  for (auto& v : map.data) v = static_cast<float>((static_cast<double>(v) - mn) / range);
}

namespace {

void check_single(const Tensor& input) {
  if (input.ndim() != 4 || input.dim(0) != 1) {
    throw DimensionError("explanations take one image (1 x 3 x H x W), got " + shape_str(input.shape()));
  }
}

void check_target(const Model& model, int target) {
  if (target < 0 || target >= model.spec.num_classes) {
    throw IndexError("target class " + std::to_string(target) + " outside [0, " +
                     std::to_string(model.spec.num_classes) + ")");
  }
}

Tensor target_logit(const Tensor& logits, int target) { return sum(slice(logits, 1, target, 1)); }

FloatImage finalize(FloatImage m) {
  normalize_minmax(m);
  return m;
}

}  // namespace

FloatImage grad_cam_coarse(const Tensor& features, const Tensor& gradients) {
  if (features.shape() != gradients.shape()) throw DimensionError("grad_cam: feature/gradient shape mismatch");
  Shape s = features.shape();
  if (s.size() == 4 && s[0] == 1) s.erase(s.begin());
  if (s.size() != 3) throw DimensionError("grad_cam expects C x h x w features, got " + shape_str(features.shape()));
  const std::int64_t C = s[0], h = s[1], w = s[2], hw = h * w;
  FloatImage out(static_cast<int>(w), static_cast<int>(h), 1);
  std::vector<double> acc(static_cast<std::size_t>(hw), 0.0);
  for (std::int64_t k = 0; k < C; ++k) {
    double alpha = 0.0;
    for (std::int64_t j = 0; j < hw; ++j) alpha += gradients[k * hw + j];
    alpha /= static_cast<double>(hw);
    for (std::int64_t j = 0; j < hw; ++j) acc[j] += alpha * features[k * hw + j];
  }
  for (std::int64_t j = 0; j < hw; ++j) out.data[j] = static_cast<float>(std::max(acc[j], 0.0));
  return out;
}

GradCamDetail grad_cam_detail(const Model& model, const Tensor& input, int target_class) {
  if (model.spec.kind != Arch::resnet18) {
    throw UnsupportedArchitectureError("grad_cam needs a convolutional model; use attention_maps for a vit");
  }
  check_single(input);
  check_target(model, target_class);
  Tape tape;
  Tensor features, scalar;
  {
    TapeScope scope(tape);
    ForwardOptions opt{NormMode::eval, {"features"}, false};
    ForwardResult fr = forward(model, input, opt);
    features = fr.features.at("features");
    scalar = target_logit(fr.logits, target_class);
  }
  const Tensor grads = tape.grad_of_output_wrt(features, scalar);
  GradCamDetail d;
  d.coarse = grad_cam_coarse(features, grads);
  d.upsampled = resize_bilinear(d.coarse, static_cast<int>(input.dim(3)), static_cast<int>(input.dim(2)));
  d.map.values = finalize(d.upsampled);
  d.map.method = SaliencyMethod::gradcam;
  d.map.target_class = target_class;
  d.map.source = std::string(arch_name(model.spec.kind)) + ":layer4";
  return d;
}

SaliencyMap grad_cam(const Model& model, const Tensor& input, int target_class) {
  return grad_cam_detail(model, input, target_class).map;
}

FloatImage guided_backprop_raw(const std::function<Tensor(const Tensor&)>& f, const Tensor& input, int target_class) {
  if (input.ndim() != 4 || input.dim(0) != 1) {
    throw DimensionError("guided backprop takes 1 x C x H x W input, got " + shape_str(input.shape()));
  }
  Tape tape(ReluBackward::guided);
  const Tensor x = input.detach().requiring_grad(true);
  Tensor scalar;
  {
    TapeScope scope(tape);
    const Tensor logits = f(x);
    if (target_class < 0 || target_class >= logits.dim(1)) throw IndexError("target class out of range");
    scalar = target_logit(logits, target_class);
  }
  const Tensor g = tape.backward(scalar).of(x);
  const std::int64_t C = input.dim(1), H = input.dim(2), W = input.dim(3), plane = H * W;
  FloatImage out(static_cast<int>(W), static_cast<int>(H), 1);
  for (std::int64_t p = 0; p < plane; ++p) {
    float m = g[p];
    for (std::int64_t c = 1; c < C; ++c) m = std::max(m, g[c * plane + p]);
    out.data[p] = std::max(m, 0.0f);
  }
  return out;
}

namespace {

FloatImage guided_raw(const Model& model, const Tensor& input, int target_class) {
  check_single(input);
  check_target(model, target_class);
  return guided_backprop_raw(
      [&](const Tensor& x) { return forward(model, x, ForwardOptions{NormMode::eval, {}, false}).logits; }, input,
      target_class);
}

}  // namespace

SaliencyMap guided_backprop(const Model& model, const Tensor& input, int target_class) {
  SaliencyMap m;
  m.values = finalize(guided_raw(model, input, target_class));
  m.method = SaliencyMethod::guided_bp;
  m.target_class = target_class;
  m.source = std::string(arch_name(model.spec.kind)) + ":input";
  return m;
}

SaliencyMap guided_grad_cam(const Model& model, const Tensor& input, int target_class) {
  const GradCamDetail cam = grad_cam_detail(model, input, target_class);
  FloatImage g = guided_raw(model, input, target_class);
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= cam.upsampled.data[i];
  SaliencyMap m;
  m.values = finalize(std::move(g));
  m.method = SaliencyMethod::guided_gradcam;
  m.target_class = target_class;
  m.source = cam.map.source;
  return m;
}

FloatImage AttentionStack::cls_grid(int layer, int head) const {
  const Tensor& a = layers.at(static_cast<std::size_t>(layer));
  if (head < 0 || head >= heads) throw IndexError("attention head out of range");
  FloatImage g(grid, grid, 1);
  const std::int64_t row = static_cast<std::int64_t>(head) * tokens * tokens;  // CLS query is token 0
  for (int j = 1; j < tokens; ++j) g.data[j - 1] = a[row + j];
  return g;
}

FloatImage AttentionStack::mean_cls_grid(int layer) const {
  FloatImage g(grid, grid, 1);
  for (int h = 0; h < heads; ++h) {
    const FloatImage one = cls_grid(layer, h);
    for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += one.data[i] / static_cast<float>(heads);
  }
  return g;
}

double AttentionStack::cls_entropy(int layer, int head) const {
  const FloatImage g = cls_grid(layer, head);
  double total = 0.0;
  for (float v : g.data) total += v;
  double h = 0.0;
  for (float v : g.data) {
    const double p = v / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double AttentionStack::mean_cls_entropy(int layer) const {
  double s = 0.0;
  for (int h = 0; h < heads; ++h) s += cls_entropy(layer, h);
  return s / heads;
}

FloatImage AttentionStack::rollout() const {
  const auto T = static_cast<std::size_t>(tokens);
  std::vector<double> acc(T * T, 0.0), layer(T * T), next(T * T);
  for (std::size_t i = 0; i < T; ++i) acc[i * T + i] = 1.0;
  for (const Tensor& a : layers) {
    for (std::size_t i = 0; i < T * T; ++i) {
      double m = 0.0;
      for (int h = 0; h < heads; ++h) m += a[static_cast<std::size_t>(h) * T * T + i];
      layer[i] = 0.5 * m / heads + (i / T == i % T ? 0.5 : 0.0);
    }
    for (std::size_t r = 0; r < T; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < T; ++c) s += layer[r * T + c];
      for (std::size_t c = 0; c < T; ++c) layer[r * T + c] /= s;
    }
    // next = layer * acc
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t r = 0; r < T; ++r)
      for (std::size_t k = 0; k < T; ++k) {
        const double l = layer[r * T + k];
        for (std::size_t c = 0; c < T; ++c) next[r * T + c] += l * acc[k * T + c];
      }
    acc.swap(next);
  }
  FloatImage g(grid, grid, 1);
  for (std::size_t j = 1; j < T; ++j) g.data[j - 1] = static_cast<float>(acc[j]);
  return g;
}

AttentionStack attention_maps(const Model& model, const Tensor& input) {
  if (model.spec.kind != Arch::vit) {
    throw UnsupportedArchitectureError("attention maps need a vit model; use gradcam or guided_gradcam for resnet18");
  }
  check_single(input);
  ForwardResult fr = forward(model, input, ForwardOptions{NormMode::eval, {"attention"}, false});
  AttentionStack s;
  s.heads = static_cast<int>(model.spec.vit.heads);
  s.tokens = static_cast<int>(model.spec.vit_tokens());
  s.grid = static_cast<int>(model.spec.input_resolution / model.spec.vit.patch_size);
  for (auto& a : fr.attention) s.layers.push_back(reshape(a, {s.heads, s.tokens, s.tokens}));
  return s;
}

SaliencyMap attention_saliency(const AttentionStack& stack, int layer, int head) {
  const FloatImage g = head < 0 ? stack.mean_cls_grid(layer) : stack.cls_grid(layer, head);
  SaliencyMap m;
  m.values = finalize(resize_bilinear(g, kInputSize, kInputSize));
  m.method = SaliencyMethod::attention;
  m.source = "vit:blocks." + std::to_string(layer) + (head < 0 ? std::string(".mean") : ".head" + std::to_string(head));
  return m;
}

SaliencyMap explain(const Model& model, const Tensor& input, SaliencyMethod method, int target_class) {
  switch (method) {
    case SaliencyMethod::gradcam: return grad_cam(model, input, target_class);
    case SaliencyMethod::guided_bp: return guided_backprop(model, input, target_class);
    case SaliencyMethod::guided_gradcam: return guided_grad_cam(model, input, target_class);
    case SaliencyMethod::attention: {
      const AttentionStack s = attention_maps(model, input);
      SaliencyMap m = attention_saliency(s, static_cast<int>(s.layers.size()) - 1, -1);
      m.target_class = target_class;
      return m;
    }
  }
  throw ConfigError("unknown method");
}

Tensor model_input(const FloatImage& rgb, const NormStats& norm) {
  std::vector<float> data(3 * static_cast<std::size_t>(kInputSize) * kInputSize);
  write_standardized(resize_bilinear(rgb, kInputSize, kInputSize), norm, data.data());
  return Tensor::from({1, 3, kInputSize, kInputSize}, std::move(data));
}

int predict_class(const Model& model, const Tensor& input) {
  const Tensor logits = forward(model, input).logits;
  return argmax(logits.data().subspan(0, static_cast<std::size_t>(logits.dim(1))));
}

std::vector<bool> top_decile_mask(const FloatImage& map) {
  const double cx = map.width / 2.0, cy = map.height / 2.0, r = std::min(cx, cy);
  std::vector<bool> disc(map.data.size(), false);
  std::vector<float> values;
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= r * r) {
        disc[static_cast<std::size_t>(y) * map.width + x] = true;
        values.push_back(map.at(x, y));
      }
    }
  }
  std::vector<bool> mask(map.data.size(), false);
  if (values.empty()) return mask;
  const auto k = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(values.size())));
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1), values.end(),
                   std::greater<float>());
  const float thr = values[k - 1];
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = disc[i] && map.data[i] >= thr;
  return mask;
}

double mask_iou(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw DimensionError("mask_iou: size mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += a[i] && b[i];
    uni += a[i] || b[i];
  }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

RotationStability rotation_stability(const Model& model, const FloatImage& base, const std::vector<double>& angles,
                                     SaliencyMethod method) {
  if (angles.empty()) throw ConfigError("rotation stability needs at least one angle");
  if (std::find(angles.begin(), angles.end(), 0.0) == angles.end()) {
    throw ConfigError("rotation angles must include 0");
  }
  RotationStability out;
  // the class predicted on the unrotated view is explained at every angle
  const int target =
      predict_class(model, model_input(center_square(base, kInputSize), model.norm));
  std::vector<std::vector<bool>> masks;
  for (double angle : angles) {
    const FloatImage view = center_square(rotate_bilinear(base, angle, Border::reflect), kInputSize);
    const Tensor input = model_input(view, model.norm);
    AngleResult r;
    r.angle = angle;
    r.predicted = predict_class(model, input);
    out.class_invariant = out.class_invariant && r.predicted == target;
    r.map = explain(model, input, method, target);
    r.map.values = rotate_bilinear(r.map.values, -angle, Border::zero);
    masks.push_back(top_decile_mask(r.map.values));
    out.per_angle.push_back(std::move(r));
  }
  double s = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (std::size_t j = i + 1; j < masks.size(); ++j) {
      s += mask_iou(masks[i], masks[j]);
      ++pairs;
    }
  }
  out.stability = pairs ? s / pairs : 1.0;
  return out;
}

Rgb8 colormap(float v) {
  v = std::clamp(v, 0.0f, 1.0f);
  const auto b = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * x)); };
  return {b(v), b(1.0 - std::abs(2.0 * v - 1.0)), b(1.0 - v)};
}

Image render(const Image& rgb, const FloatImage& map, RenderMode mode, double alpha, double threshold) {
  if (rgb.channels != 3 || map.channels != 1 || rgb.width != map.width || rgb.height != map.height) {
    throw DimensionError("render: image and map extents differ");
  }
  Image out(rgb.width, rgb.height, 3);
  for (int y = 0; y < rgb.height; ++y) {
    for (int x = 0; x < rgb.width; ++x) {
      const float v = map.at(x, y);
      const Rgb8 c = colormap(v);
      const std::uint8_t cm[3] = {c.r, c.g, c.b};
      for (int ch = 0; ch < 3; ++ch) {
        switch (mode) {
          case RenderMode::overlay:
            out.at(x, y, ch) =
                static_cast<std::uint8_t>(std::lround((1.0 - alpha) * rgb.at(x, y, ch) + alpha * cm[ch]));
            break;
          case RenderMode::masked: out.at(x, y, ch) = v >= threshold ? rgb.at(x, y, ch) : 0; break;
          case RenderMode::raw: out.at(x, y, ch) = cm[ch]; break;
        }
      }
    }
  }
  return out;
}

bool pointing_game(const FloatImage& map, const Image& mask) {
  if (mask.channels != 1 || mask.width != map.width || mask.height != map.height) {
    throw DimensionError("pointing_game: map and mask extents differ");
  }
  const auto it = std::max_element(map.data.begin(), map.data.end());  // first maximum
  return mask.data[static_cast<std::size_t>(it - map.data.begin())] != 0;
}

double corpus_pointing_score(const std::vector<FloatImage>& maps, const std::vector<Image>& masks) {
  if (maps.size() != masks.size() || maps.empty()) throw DimensionError("pointing score needs matching, non-empty sets");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) hits += pointing_game(maps[i], masks[i]);
  return static_cast<double>(hits) / static_cast<double>(maps.size());
}

}  // namespace thinsec
