#include "thinsec/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <regex>
#include <set>

namespace thinsec {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kShellHalfThickness = 0.18;
constexpr int kPlacementAttempts = 1000;

double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2 * kPi);
  if (a < 0) a += 2 * kPi;
  return a - kPi;
}

Rgb rgb(float r, float g, float b) { return {r, g, b}; }

}  // namespace

const char* shape_family_name(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::rhomb: return "rhomb";
    case ShapeFamily::angular: return "angular";
    case ShapeFamily::rounded: return "rounded";
    case ShapeFamily::elongated_shell: return "elongated-shell";
    case ShapeFamily::vesicular: return "vesicular";
  }
  return "?";
}

ShapeFamily parse_shape_family(const std::string& name) {
  for (auto f : {ShapeFamily::rhomb, ShapeFamily::angular, ShapeFamily::rounded, ShapeFamily::elongated_shell,
                 ShapeFamily::vesicular}) {
    if (name == shape_family_name(f)) return f;
  }
  throw ConfigError("unknown shape family '" + name + "'");
}

void SynthSpec::validate() const {
  if (classes.size() < 2) throw ConfigError("synthetic corpus needs at least two classes");
  if (image_size < 32) throw ConfigError("synth image size must be at least 32");
  if (sections_per_class < 1) throw ConfigError("sections per class must be positive");
  if (polarizations.empty() || magnifications.empty()) throw ConfigError("synth needs at least one view");
  static const std::regex name_re("^[A-Za-z0-9][A-Za-z0-9_.-]*$");
  std::set<std::string> names;
  for (const auto& c : classes) {
    if (!std::regex_match(c.name, name_re) || c.name.find("__") != std::string::npos) {
      throw ConfigError("invalid class name '" + c.name + "'");
    }
    if (!names.insert(c.name).second) throw ConfigError("duplicate class name '" + c.name + "'");
    const auto& in = c.inclusion;
    // An empty section would have an empty mask, which samples may not carry.
    if (in.density_min < 1 || in.density_max < in.density_min) {
      throw ConfigError("class '" + c.name + "': density range must satisfy 1 <= min <= max");
    }
    if (!(in.size_min > 0.0) || in.size_max < in.size_min) {
      throw ConfigError("class '" + c.name + "': size range must satisfy 0 < min <= max");
    }
    if (in.xpl_palette.empty()) throw ConfigError("class '" + c.name + "': empty cross-polarized palette");
  }
  for (std::size_t i = 0; i < classes.size(); ++i) {
    for (std::size_t j = i + 1; j < classes.size(); ++j) {
      if (classes[i].inclusion == classes[j].inclusion) {
        throw ConfigError("classes '" + classes[i].name + "' and '" + classes[j].name + "' have identical recipes");
      }
    }
  }
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"calcite",    "carbonate_a", "carbonate_b", "carbonate_c", "carbonate_d",
                                              "dolomite_a", "dolomite_b",  "quartz",      "shell",       "basalt"};
  return names;
}

ClassRecipe preset_recipe(const std::string& name) {
  InclusionRecipe r;
  const std::vector<Rgb> pastel{rgb(0.95f, 0.75f, 0.85f), rgb(0.75f, 0.92f, 0.80f), rgb(0.96f, 0.93f, 0.78f),
                                rgb(0.80f, 0.85f, 0.97f)};
  const std::vector<Rgb> first_order{rgb(0.55f, 0.55f, 0.57f), rgb(0.85f, 0.85f, 0.86f), rgb(0.95f, 0.93f, 0.80f),
                                     rgb(0.35f, 0.36f, 0.40f)};
  const std::vector<Rgb> vivid{rgb(0.90f, 0.35f, 0.55f), rgb(0.30f, 0.75f, 0.55f), rgb(0.35f, 0.50f, 0.95f),
                               rgb(0.95f, 0.80f, 0.30f)};
  const std::vector<Rgb> dark{rgb(0.05f, 0.05f, 0.06f), rgb(0.10f, 0.09f, 0.08f)};
  if (name == "calcite") {
    r = {ShapeFamily::rhomb, rgb(0.90f, 0.88f, 0.82f), rgb(0.98f, 0.96f, 0.92f), pastel, 5, 8, 16, 26};
  } else if (name == "carbonate_a") {
    r = {ShapeFamily::rounded, rgb(0.45f, 0.33f, 0.22f), rgb(0.55f, 0.42f, 0.30f), vivid, 8, 12, 8, 12};
  } else if (name == "carbonate_b") {
    r = {ShapeFamily::rounded, rgb(0.78f, 0.78f, 0.76f), rgb(0.88f, 0.88f, 0.86f), first_order, 3, 5, 18, 28};
  } else if (name == "carbonate_c") {
    r = {ShapeFamily::angular, rgb(0.72f, 0.60f, 0.45f), rgb(0.80f, 0.68f, 0.52f), pastel, 5, 8, 12, 18};
  } else if (name == "carbonate_d") {
    r = {ShapeFamily::elongated_shell, rgb(0.80f, 0.80f, 0.78f), rgb(0.90f, 0.90f, 0.88f), first_order, 4, 6, 15, 21};
  } else if (name == "dolomite_a") {
    r = {ShapeFamily::rhomb, rgb(0.86f, 0.84f, 0.80f), rgb(0.94f, 0.92f, 0.88f), pastel, 10, 14, 7, 11};
  } else if (name == "dolomite_b") {
    r = {ShapeFamily::rhomb, rgb(0.58f, 0.48f, 0.38f), rgb(0.68f, 0.58f, 0.46f), pastel, 6, 9, 10, 15};
  } else if (name == "quartz") {
    r = {ShapeFamily::angular, rgb(0.86f, 0.88f, 0.92f), rgb(0.95f, 0.96f, 0.98f), first_order, 5, 8, 14, 22};
  } else if (name == "shell") {
    r = {ShapeFamily::elongated_shell, rgb(0.40f, 0.26f, 0.14f), rgb(0.52f, 0.36f, 0.22f), vivid, 3, 5, 17, 24};
  } else if (name == "basalt") {
    r = {ShapeFamily::vesicular, rgb(0.10f, 0.10f, 0.11f), rgb(0.18f, 0.17f, 0.17f), dark, 3, 5, 18, 26};
  } else {
    throw ConfigError("unknown synthetic class preset '" + name + "'");
  }
  return {name, r};
}

SynthSpec preset_spec(const std::vector<std::string>& class_names, int sections_per_class, std::uint64_t seed) {
  SynthSpec s;
  for (const auto& n : class_names) s.classes.push_back(preset_recipe(n));
  s.sections_per_class = sections_per_class;
  s.seed = seed;
  return s;
}

double Inclusion::bound() const {
  switch (family) {
    case ShapeFamily::elongated_shell: return r * (1.0 + kShellHalfThickness);
    default: return r;
  }
}

double Inclusion::area() const {
  switch (family) {
    case ShapeFamily::rounded:
    case ShapeFamily::vesicular: return kPi * q * r * r;
    case ShapeFamily::rhomb: return 2.0 * q * r * r;
    case ShapeFamily::elongated_shell: return 2.0 * kShellHalfThickness * span * r * r;
    case ShapeFamily::angular: {
      double a = 0.0;
      for (std::size_t i = 0; i < polygon.size(); ++i) {
        const auto& p = polygon[i];
        const auto& n = polygon[(i + 1) % polygon.size()];
        a += p.first * n.second - n.first * p.second;
      }
      return 0.5 * std::abs(a);
    }
  }
  return 0.0;
}

bool Inclusion::contains(double x, double y) const {
  const double du = x - cx, dv = y - cy;
  if (du * du + dv * dv > bound() * bound()) return false;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = c * du + s * dv, v = -s * du + c * dv;
  switch (family) {
    case ShapeFamily::rounded:
    case ShapeFamily::vesicular: {
      const double a = u / r, b = v / (q * r);
      return a * a + b * b <= 1.0;
    }
    case ShapeFamily::rhomb: return std::abs(u) / r + std::abs(v) / (q * r) <= 1.0;
    case ShapeFamily::elongated_shell: {
      const double d = std::hypot(du, dv);
      if (std::abs(d - r) > kShellHalfThickness * r) return false;
      return std::abs(wrap_angle(std::atan2(dv, du) - angle)) <= span / 2.0;
    }
    case ShapeFamily::angular: {
      for (std::size_t i = 0; i < polygon.size(); ++i) {
        const auto& p = polygon[i];
        const auto& n = polygon[(i + 1) % polygon.size()];
        const double cross = (n.first - p.first) * (dv - p.second) - (n.second - p.second) * (du - p.first);
        if (cross < 0.0) return false;
      }
      return true;
    }
  }
  return false;
}

double Inclusion::texture(double x, double y) const {
  const double du = x - cx, dv = y - cy;
  const double c = std::cos(angle), s = std::sin(angle);
  const double u = c * du + s * dv, v = -s * du + c * dv;
  switch (family) {
    case ShapeFamily::rhomb: return 0.6 * std::sin(2 * kPi * (u + v) / (0.3 * r));  // cleavage traces
    case ShapeFamily::rounded: return 0.5 * std::sin(2 * kPi * std::hypot(u, v / q) / (0.3 * r));  // cortex rings
    case ShapeFamily::angular: return 0.6 * u / r;  // undulose extinction
    case ShapeFamily::elongated_shell: return 0.6 * std::sin(2 * kPi * (std::hypot(du, dv) - r) / (0.12 * r));
    case ShapeFamily::vesicular:
      for (const auto& h : vesicles) {
        const double hx = du - h.first, hy = dv - h.second;
        if (hx * hx + hy * hy <= vesicle_radius * vesicle_radius) return 1.0;
      }
      return -0.3;
  }
  return 0.0;
}

std::vector<Inclusion> sample_layout(const ClassRecipe& recipe, int canvas, RngStream& rng) {
  const auto& rc = recipe.inclusion;
  const auto n = static_cast<int>(rng.integer(rc.density_min, rc.density_max));
  std::vector<Inclusion> out;
  for (int k = 0; k < n; ++k) {
    Inclusion inc;
    inc.family = rc.family;
    inc.r = rng.uniform(rc.size_min, rc.size_max);
    inc.angle = rng.uniform(0.0, 2 * kPi);
    switch (rc.family) {
      case ShapeFamily::rounded: inc.q = rng.uniform(0.7, 1.0); break;
      case ShapeFamily::vesicular: {
        inc.q = rng.uniform(0.7, 1.0);
        const int holes = static_cast<int>(rng.integer(3, 6));
        inc.vesicle_radius = 0.15 * inc.r;
        const double ca = std::cos(inc.angle), sa = std::sin(inc.angle);
        for (int h = 0; h < holes; ++h) {
          const double t = rng.uniform(0.0, 2 * kPi), rad = 0.6 * std::sqrt(rng.uniform());
          const double u = rad * inc.r * std::cos(t), v = rad * inc.q * inc.r * std::sin(t);
          inc.vesicles.emplace_back(ca * u - sa * v, sa * u + ca * v);
        }
        break;
      }
      case ShapeFamily::rhomb: inc.q = rng.uniform(0.55, 0.8); break;
      case ShapeFamily::elongated_shell: inc.span = rng.uniform(100.0, 160.0) * kPi / 180.0; break;
      case ShapeFamily::angular: {
        const int m = static_cast<int>(rng.integer(5, 7));
        for (int i = 0; i < m; ++i) {
          const double t = 2 * kPi * (i + rng.uniform(-0.3, 0.3)) / m;
          const double rad = inc.r * rng.uniform(0.7, 1.0);
          inc.polygon.emplace_back(rad * std::cos(t), rad * std::sin(t));
        }
        break;
      }
    }
    const double u = rng.uniform();
    Rgb lo = rc.ppl_lo, hi = rc.ppl_hi;
    inc.ppl = {static_cast<float>(lo.r + u * (hi.r - lo.r)), static_cast<float>(lo.g + u * (hi.g - lo.g)),
               static_cast<float>(lo.b + u * (hi.b - lo.b))};
    inc.xpl = rc.xpl_palette[rng.below(rc.xpl_palette.size())];

    const double b = inc.bound() + 1.0;
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed && 2 * b < canvas; ++attempt) {
      inc.cx = rng.uniform(b, canvas - b);
      inc.cy = rng.uniform(b, canvas - b);
      placed = std::all_of(out.begin(), out.end(), [&](const Inclusion& o) {
        return std::hypot(o.cx - inc.cx, o.cy - inc.cy) >= o.bound() + inc.bound() + 2.0;
      });
    }
    if (!placed) {
      throw GenerationError("class '" + recipe.name + "': could not place inclusion " + std::to_string(k + 1) +
                            " of " + std::to_string(n) + " after " + std::to_string(kPlacementAttempts) +
                            " attempts; lower its density or size");
    }
    out.push_back(std::move(inc));
  }
  return out;
}

namespace {

// Smoothly interpolated lattice noise over the canvas, one field per channel.
class LowFrequencyField {
 public:
  LowFrequencyField(std::uint64_t key, int cells, double canvas) : cells_(cells), scale_(cells / canvas) {
    RngStream rng(key, 0x6669656c64ull);
    values_.resize(static_cast<std::size_t>((cells + 1) * (cells + 1)) * 4);
    for (auto& v : values_) v = rng.normal();
  }

  // channel 3 is the shared luminance component
  double at(double x, double y, int channel) const {
    const double gx = std::clamp(x * scale_, 0.0, static_cast<double>(cells_) - 1e-9);
    const double gy = std::clamp(y * scale_, 0.0, static_cast<double>(cells_) - 1e-9);
    const int ix = static_cast<int>(gx), iy = static_cast<int>(gy);
    auto smooth = [](double t) { return t * t * (3 - 2 * t); };
    const double fx = smooth(gx - ix), fy = smooth(gy - iy);
    auto v = [&](int a, int b) { return values_[(static_cast<std::size_t>(b) * (cells_ + 1) + a) * 4 + channel]; };
    const double top = v(ix, iy) * (1 - fx) + v(ix + 1, iy) * fx;
    const double bottom = v(ix, iy + 1) * (1 - fx) + v(ix + 1, iy + 1) * fx;
    return top * (1 - fy) + bottom * fy;
  }

 private:
  int cells_;
  double scale_;
  std::vector<double> values_;
};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

void render_view(const std::vector<Inclusion>& layout, const MatrixRecipe& matrix, int canvas,
                 std::uint64_t section_key, Polarization pol, Magnification mag, Image& image, Image& mask) {
  image = Image(canvas, canvas, 3);
  mask = Image(canvas, canvas, 1);
  const double zoom = mag == Magnification::x10 ? 4.0 : 1.0;
  const double origin = canvas / 2.0 - canvas / (2.0 * zoom);
  const LowFrequencyField field(section_key, std::max(matrix.cells, 1), canvas);
  const Rgb base = pol == Polarization::ppl ? matrix.ppl : matrix.xpl;
  const double noise = pol == Polarization::ppl ? matrix.noise : 0.6 * matrix.noise;
  const std::uint64_t grain_key = mix64(section_key ^ (pol == Polarization::ppl ? 0x70706cull : 0x78706cull));

  for (int py = 0; py < canvas; ++py) {
    for (int px = 0; px < canvas; ++px) {
      const double x = origin + (px + 0.5) / zoom, y = origin + (py + 0.5) / zoom;
      const std::uint64_t h = mix64(grain_key + static_cast<std::uint64_t>(py) * 65536u + static_cast<std::uint64_t>(px));
      const double grain = matrix.grain * ((static_cast<double>(h >> 11) * 0x1.0p-53) * 2.0 - 1.0);
      const Inclusion* hit = nullptr;
      for (const auto& inc : layout) {
        if (inc.contains(x, y)) {
          hit = &inc;
          break;
        }
      }
      double rgbv[3];
      if (hit) {
        const Rgb c = pol == Polarization::ppl ? hit->ppl : hit->xpl;
        const double t = 0.15 * hit->texture(x, y);
        rgbv[0] = c.r + t + grain;
        rgbv[1] = c.g + t + grain;
        rgbv[2] = c.b + t + grain;
        mask.at(px, py) = 1;
      } else {
        const double lum = field.at(x, y, 3);
        rgbv[0] = base.r + noise * (lum + 0.3 * field.at(x, y, 0)) + grain;
        rgbv[1] = base.g + noise * (lum + 0.3 * field.at(x, y, 1)) + grain;
        rgbv[2] = base.b + noise * (lum + 0.3 * field.at(x, y, 2)) + grain;
      }
      for (int ch = 0; ch < 3; ++ch) image.at(px, py, ch) = to_byte(rgbv[ch]);
    }
  }
}

Corpus generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Corpus corpus;
  for (const auto& c : spec.classes) corpus.class_names.push_back(c.name);
  const std::size_t views = spec.polarizations.size() * spec.magnifications.size();
  const std::size_t total = spec.classes.size() * static_cast<std::size_t>(spec.sections_per_class) * views;
  corpus.samples.resize(total);

  // Layouts are drawn serially (cheap, and errors surface in class order);
  // rendering is independent per view.
  std::vector<std::vector<Inclusion>> layouts;
  for (std::size_t c = 0; c < spec.classes.size(); ++c) {
    for (int s = 0; s < spec.sections_per_class; ++s) {
      RngStream rng(spec.seed, c, static_cast<std::uint64_t>(s));
      layouts.push_back(sample_layout(spec.classes[c], spec.image_size, rng));
    }
  }
  const auto n = static_cast<std::int64_t>(total);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t section = static_cast<std::size_t>(i) / views;
    const std::size_t v = static_cast<std::size_t>(i) % views;
    const std::size_t c = section / static_cast<std::size_t>(spec.sections_per_class);
    const int s = static_cast<int>(section % static_cast<std::size_t>(spec.sections_per_class));
    Sample& out = corpus.samples[static_cast<std::size_t>(i)];
    out.label = static_cast<int>(c);
    char id[16];
    std::snprintf(id, sizeof id, "%03d", s);
    out.sample_id = spec.classes[c].name + "-" + id;
    out.polarization = spec.polarizations[v / spec.magnifications.size()];
    out.magnification = spec.magnifications[v % spec.magnifications.size()];
    Image mask;
    render_view(layouts[section], spec.matrix, spec.image_size, mix64(spec.seed ^ mix64(section + 1)),
                out.polarization, out.magnification, out.image, mask);
    out.mask = std::move(mask);
  }
  for (const auto& s : corpus.samples) {
    if (std::none_of(s.mask->data.begin(), s.mask->data.end(), [](std::uint8_t v) { return v != 0; })) {
      throw GenerationError("class '" + corpus.class_names[s.label] + "': view " + s.stem() +
                            " shows no inclusion; use the 2.5x view or raise the density");
    }
  }
  return corpus;
}

}  // namespace thinsec
