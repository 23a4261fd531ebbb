#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>

#include "support.hpp"
#include "thinsec/augment.hpp"
#include "thinsec/corpus.hpp"
#include "thinsec/synth.hpp"

using namespace thinsec;
namespace fs = std::filesystem;

namespace {

Image gradient_image(int w, int h) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = static_cast<std::uint8_t>((x * 37 + y) % 256);
      img.at(x, y, 1) = static_cast<std::uint8_t>((y * 11) % 256);
      img.at(x, y, 2) = static_cast<std::uint8_t>((x * y) % 256);
    }
  return img;
}

double mask_fraction(const Image& m) {
  std::size_t on = 0;
  for (auto v : m.data) on += v != 0;
  return static_cast<double>(on) / static_cast<double>(m.data.size());
}

// Per-image coverage moments of a recipe, by Monte Carlo straight from the
// area formulas: inclusions never overlap and never leave the canvas, so the
// coverage of one image is sum(area) / canvas^2.
struct Moments {
  double mean = 0.0, sd = 0.0;
};

Moments coverage_moments(const InclusionRecipe& r, int canvas) {
  std::mt19937_64 gen(20240611);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  auto uni = [&](double a, double b) { return a + (b - a) * U(gen); };
  auto pick = [&](int a, int b) { return std::uniform_int_distribution<int>(a, b)(gen); };
  const int trials = 200000;
  double s = 0.0, s2 = 0.0;
  for (int t = 0; t < trials; ++t) {
    const int n = pick(r.density_min, r.density_max);
    double area = 0.0;
    for (int k = 0; k < n; ++k) {
      const double rad = uni(r.size_min, r.size_max);
      switch (r.family) {
        case ShapeFamily::rounded:
        case ShapeFamily::vesicular: area += std::numbers::pi * uni(0.7, 1.0) * rad * rad; break;
        case ShapeFamily::rhomb: area += 2.0 * uni(0.55, 0.8) * rad * rad; break;
        case ShapeFamily::elongated_shell:
          area += 0.36 * uni(100.0, 160.0) * std::numbers::pi / 180.0 * rad * rad;
          break;
        case ShapeFamily::angular: {
          const int m = pick(5, 7);
          std::vector<double> xs, ys;
          for (int i = 0; i < m; ++i) {
            const double a = 2 * std::numbers::pi * (i + uni(-0.3, 0.3)) / m;
            const double rr = rad * uni(0.7, 1.0);
            xs.push_back(rr * std::cos(a));
            ys.push_back(rr * std::sin(a));
          }
          double shoelace = 0.0;
          for (int i = 0; i < m; ++i) shoelace += xs[i] * ys[(i + 1) % m] - xs[(i + 1) % m] * ys[i];
          area += 0.5 * std::abs(shoelace);
          break;
        }
      }
    }
    const double c = area / (static_cast<double>(canvas) * canvas);
    s += c;
    s2 += c * c;
  }
  Moments m;
  m.mean = s / trials;
  m.sd = std::sqrt(std::max(0.0, s2 / trials - m.mean * m.mean));
  return m;
}

}  // namespace

TEST_CASE("png round trip and format checks") {
  test_support::TempDir dir;
  const Image img = gradient_image(13, 7);
  write_png(dir.file("a.png"), img);
  CHECK(read_png_rgb(dir.file("a.png")) == img);

  Image mask(5, 4, 1);
  mask.at(1, 2) = 1;
  mask.at(4, 3) = 1;
  write_png(dir.file("m.png"), mask_to_gray(mask));
  CHECK(read_png_mask(dir.file("m.png")) == mask);

  CHECK_THROWS_AS(read_png_rgb(dir.file("m.png")), FormatError);  // grayscale is not RGB
  CHECK_THROWS_AS(read_png_mask(dir.file("a.png")), FormatError);
  CHECK_THROWS_AS(read_png_rgb(dir.file("missing.png")), FormatError);
}

TEST_CASE("float conversion") {
  Image img(2, 1, 1);
  img.data = {0, 255};
  const FloatImage f = to_float(img);
  CHECK(f.data == std::vector<float>{0.0f, 1.0f});
  FloatImage g(3, 1, 1);
  g.data = {-0.5f, 0.5f, 2.0f};
  CHECK(to_u8(g).data == std::vector<std::uint8_t>{0, 128, 255});
  CHECK(to_u8(to_float(gradient_image(9, 9))) == gradient_image(9, 9));
}

TEST_CASE("resampling") {
  const FloatImage src = to_float(gradient_image(8, 6));
  CHECK(resize_bilinear(src, 8, 6).data == src.data);

  // constant image stays constant
  FloatImage flat(7, 5, 3, 0.25f);
  for (float v : resize_bilinear(flat, 19, 3).data) CHECK(v == doctest::Approx(0.25f));

  // 2x downsample with half-pixel centers averages 2x2 blocks
  FloatImage g(4, 2, 1);
  g.data = {0, 2, 4, 6, 8, 10, 12, 14};
  const FloatImage half = resize_bilinear(g, 2, 1);
  CHECK(half.data[0] == doctest::Approx(5.0));
  CHECK(half.data[1] == doctest::Approx(9.0));

  // nearest: floor(left + (x + 0.5) * w / out_w)
  Image idx(6, 1, 1);
  for (int x = 0; x < 6; ++x) idx.at(x, 0) = static_cast<std::uint8_t>(x);
  const Image up = resample_nearest(idx, Window{1.0, 0.0, 3.0, 1.0}, 6, 1);
  CHECK(up.data == std::vector<std::uint8_t>{1, 1, 2, 2, 3, 3});
}

TEST_CASE("flips and rotations") {
  const Image img = gradient_image(5, 4);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);
  CHECK(flip_vertical(img).at(2, 0, 1) == img.at(2, 3, 1));
  CHECK(flip_horizontal(img).at(0, 1, 0) == img.at(4, 1, 0));

  const FloatImage sq = to_float(gradient_image(6, 6));
  CHECK(rotate_bilinear(sq, 0.0, Border::zero).data == sq.data);
  CHECK(rotate_bilinear(sq, 360.0, Border::reflect).data == sq.data);
  // a counter-clockwise quarter turn moves the top-right corner to the top-left
  const FloatImage q = rotate_bilinear(sq, 90.0, Border::zero);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      for (int c = 0; c < 3; ++c) REQUIRE(q.at(x, y, c) == doctest::Approx(sq.at(5 - y, x, c)));
  const Image qn = rotate_nearest(gradient_image(6, 6), 90.0, Border::zero);
  CHECK(qn.at(0, 0, 0) == gradient_image(6, 6).at(5, 0, 0));

  // 45 degrees: zero border blackens the corners, reflection fills them
  FloatImage ones(20, 20, 1, 1.0f);
  CHECK(rotate_bilinear(ones, 45.0, Border::zero).at(0, 0) == 0.0f);
  CHECK(rotate_bilinear(ones, 45.0, Border::reflect).at(0, 0) == doctest::Approx(1.0f));

  const FloatImage wide = to_float(gradient_image(30, 20));
  const FloatImage c = center_square(wide, 20);
  CHECK(c.width == 20);
  CHECK(c.height == 20);
  CHECK(c.at(0, 0, 0) == doctest::Approx(wide.at(5, 0, 0)));
}

TEST_CASE("file name parsing") {
  const ParsedStem p = parse_stem("TF4-a__xpl__2.5x__rot-30");
  CHECK(p.sample_id == "TF4-a");
  CHECK(p.polarization == Polarization::xpl);
  CHECK(p.magnification == Magnification::x2_5);
  CHECK(p.rotation_deg == -30);
  const ParsedStem q = parse_stem("s1__ppl__10x");
  CHECK_FALSE(q.rotation_deg.has_value());
  CHECK(q.magnification == Magnification::x10);
  for (const char* bad : {"s1__ppl", "s1__uv__10x", "s1__ppl__5x", "__ppl__10x", "s1__ppl__10x__rot400",
                          "s1__ppl__10x__rot360", "s1__ppl__10x__extra"}) {
    INFO(bad);
    CHECK_THROWS_AS(parse_stem(bad), FormatError);
  }
}

TEST_CASE("directory corpus scan") {
  test_support::TempDir dir;
  const fs::path root = dir.file("corpus");
  for (const char* cls : {"b_class", "a_class"}) fs::create_directories(root / cls);
  fs::create_directories(root / "_masks");
  int k = 0;
  for (const char* cls : {"a_class", "b_class"})
    for (const char* stem : {"s2__ppl__2.5x", "s1__xpl__10x", "s1__ppl__2.5x__rot90"}) {
      Image img = gradient_image(8, 6);
      img.at(0, 0, 0) = static_cast<std::uint8_t>(k++);
      write_png((root / cls / (std::string(stem) + ".png")).string(), img);
    }
  Image mask(8, 6, 1);
  mask.at(3, 3) = 1;
  write_png((root / "_masks" / "s2__ppl__2.5x.png").string(), mask_to_gray(mask));
  write_png((root / "_masks" / "s3__ppl__10x.png").string(), mask_to_gray(mask));
  write_png((root / "a_class" / "s3__ppl__10x.png").string(), gradient_image(5, 5));
  write_png((root / "a_class" / "badname.png").string(), gradient_image(4, 4));
  std::ofstream(root / "a_class" / "notes.txt") << "x";

  const ScanResult r = scan_corpus(root.string());
  CHECK(r.corpus.class_names == std::vector<std::string>{"a_class", "b_class"});
  REQUIRE(r.corpus.samples.size() == 6);
  REQUIRE(r.rejects.size() == 3);
  CHECK(r.rejects[0].find("badname.png: ") != std::string::npos);
  CHECK(r.rejects[1].find("notes.txt: ") != std::string::npos);
  CHECK(r.rejects[2].find("s3__ppl__10x.png: mask extent") != std::string::npos);
  // lexicographic by path
  CHECK(r.corpus.samples[0].stem() == "s1__ppl__2.5x__rot90");
  CHECK(r.corpus.samples[0].rotation_deg == 90);
  CHECK(r.corpus.samples[0].image.at(0, 0, 0) == 2);
  CHECK(r.corpus.samples[2].stem() == "s2__ppl__2.5x");
  REQUIRE(r.corpus.samples[2].mask.has_value());
  CHECK(r.corpus.samples[2].mask->at(3, 3) == 1);
  CHECK(r.corpus.samples[2].mask->at(2, 3) == 0);
  CHECK(r.corpus.samples[5].mask.has_value());
  CHECK(r.corpus.samples[3].label == 1);
  CHECK_FALSE(r.corpus.samples[1].mask.has_value());

  const ScanResult again = scan_corpus(root.string());
  for (std::size_t i = 0; i < 6; ++i) CHECK(again.corpus.samples[i].image == r.corpus.samples[i].image);
}

TEST_CASE("corpus scan errors") {
  test_support::TempDir dir;
  const fs::path root = dir.file("c");
  fs::create_directories(root / "only");
  CHECK_THROWS_AS(scan_corpus(root.string()), CorpusError);
  fs::create_directories(root / "empty");
  write_png((root / "only" / "x__ppl__10x.png").string(), gradient_image(4, 4));
  CHECK_THROWS_AS(scan_corpus(root.string()), CorpusError);
  CHECK_THROWS_AS(scan_corpus(dir.file("nope")), CorpusError);
}

TEST_CASE("stratified split") {
  Corpus c;
  for (int k = 0; k < 10; ++k) c.class_names.push_back("c" + std::to_string(k));
  for (int i = 0; i < 100; ++i) {
    Sample s;
    s.label = i % 10;
    s.sample_id = "s" + std::to_string(i / 2);
    c.samples.push_back(s);
  }
  const Corpus a = stratified_split(c, 0.8, 5);
  CHECK(a.count(Split::train) == 80);
  std::vector<int> per(10);
  for (auto i : a.indices(Split::train)) per[a.samples[i].label]++;
  for (int v : per) CHECK(v == 8);
  const Corpus b = stratified_split(c, 0.8, 5);
  for (std::size_t i = 0; i < 100; ++i) CHECK(a.samples[i].split == b.samples[i].split);
  const Corpus d = stratified_split(c, 0.8, 6);
  bool differs = false;
  for (std::size_t i = 0; i < 100; ++i) differs = differs || a.samples[i].split != d.samples[i].split;
  CHECK(differs);

  // group mode: views of one section never straddle the split
  Corpus g;
  g.class_names = {"x", "y"};
  for (int i = 0; i < 40; ++i) {
    Sample s;
    s.label = i % 2;
    s.sample_id = "sec" + std::to_string(i / 4) + "_" + std::to_string(i % 2);
    g.samples.push_back(s);
  }
  const Corpus gs = stratified_split(g, 0.8, 1, true);
  std::map<std::string, std::set<Split>> seen;
  for (const auto& s : gs.samples) seen[s.sample_id].insert(s.split);
  for (const auto& [id, splits] : seen) CHECK(splits.size() == 1);
  CHECK(gs.count(Split::train) == 32);

  Corpus lone = g;
  for (auto& s : lone.samples)
    if (s.label == 1) s.sample_id = "same";
  CHECK_THROWS_AS(stratified_split(lone, 0.8, 1, true), SplitError);
  CHECK_THROWS_AS(stratified_split(c, 1.0, 1), ConfigError);
}

TEST_CASE("k-fold") {
  Corpus c;
  c.class_names = {"a", "b", "c"};
  for (int i = 0; i < 60; ++i) {
    Sample s;
    s.label = i % 3;
    s.split = i % 5 == 0 ? Split::test : Split::train;
    c.samples.push_back(s);
  }
  const auto folds = kfold(c, 3, 9);
  REQUIRE(folds.size() == 3);
  std::set<std::size_t> all;
  for (const auto& f : folds) {
    CHECK(std::is_sorted(f.begin(), f.end()));
    for (auto i : f) {
      CHECK(c.samples[i].split == Split::train);
      CHECK(all.insert(i).second);
    }
    CHECK(f.size() == 16);
  }
  CHECK(all.size() == 48);
  CHECK(kfold(c, 3, 9) == folds);
  CHECK_THROWS_AS(kfold(c, 1, 9), ConfigError);
}

TEST_CASE("normalization statistics and batches") {
  Corpus c;
  c.class_names = {"a", "b"};
  for (int i = 0; i < 4; ++i) {
    Sample s;
    s.image = Image(224, 224, 3);
    for (int y = 0; y < 224; ++y)
      for (int x = 0; x < 224; ++x) {
        s.image.at(x, y, 0) = static_cast<std::uint8_t>(50 * i);
        s.image.at(x, y, 1) = static_cast<std::uint8_t>((x + y) % 2 ? 200 : 100);
        s.image.at(x, y, 2) = 7;
      }
    s.label = i % 2;
    s.split = i < 3 ? Split::train : Split::test;
    c.samples.push_back(s);
  }
  const NormStats n = compute_norm_stats(c);
  // channel 0 over train images: values 0, 50, 150 over 255 (test image excluded)
  const double m0 = (0 + 50 + 100) / 3.0 / 255.0;
  const double v0 = ((0 - 50.0) * (0 - 50.0) + 0 + 50.0 * 50.0) / 3.0 / (255.0 * 255.0);
  CHECK(n.mean[0] == doctest::Approx(m0).epsilon(1e-6));
  CHECK(n.std[0] == doctest::Approx(std::sqrt(v0)).epsilon(1e-5));
  CHECK(n.mean[1] == doctest::Approx(150.0 / 255.0).epsilon(1e-6));
  CHECK(n.std[1] == doctest::Approx(50.0 / 255.0).epsilon(1e-5));
  CHECK(n.std[2] == doctest::Approx(1e-6));  // constant channel floored

  const Tensor b = to_batch(c, {1, 3}, n);
  REQUIRE(b.shape() == Shape{2, 3, 224, 224});
  CHECK(b[0] == doctest::Approx((50.0 / 255.0 - m0) / std::sqrt(v0)).epsilon(1e-4));
}

TEST_CASE("synthetic presets validate and are distinct") {
  CHECK(preset_names().size() >= 10);
  for (const auto& name : preset_names()) CHECK(preset_recipe(name).name == name);
  CHECK_THROWS_AS(preset_recipe("granite"), ConfigError);
  SynthSpec s = preset_spec({"calcite", "basalt"}, 2, 1);
  CHECK_NOTHROW(s.validate());
  SynthSpec one = preset_spec({"calcite"}, 2, 1);
  CHECK_THROWS_AS(one.validate(), ConfigError);
  SynthSpec zero = s;
  zero.classes[0].inclusion.density_min = 0;
  zero.classes[0].inclusion.density_max = 0;
  CHECK_THROWS_AS(zero.validate(), ConfigError);
  SynthSpec dup = s;
  dup.classes[1] = dup.classes[0];
  CHECK_THROWS_AS(dup.validate(), ConfigError);
  SynthSpec same = s;
  same.classes[1].inclusion = same.classes[0].inclusion;
  CHECK_THROWS_AS(same.validate(), ConfigError);
  CHECK(parse_shape_family("elongated-shell") == ShapeFamily::elongated_shell);
}

TEST_CASE("synthetic corpus structure and reproducibility") {
  SynthSpec spec = preset_spec({"quartz", "calcite", "basalt"}, 3, 42);
  spec.magnifications = {Magnification::x2_5, Magnification::x10};
  // dense small inclusions so the 10x window always catches some
  for (auto& rc : spec.classes) {
    rc.inclusion.density_min = rc.inclusion.density_max = 40;
    rc.inclusion.size_min = 6.0;
    rc.inclusion.size_max = 9.0;
  }
  const Corpus c = generate_synthetic(spec);
  CHECK(c.class_names == std::vector<std::string>{"quartz", "calcite", "basalt"});
  REQUIRE(c.samples.size() == 3 * 3 * 2 * 2);
  std::map<std::string, std::vector<const Sample*>> by_section;
  for (const auto& s : c.samples) {
    REQUIRE(s.mask.has_value());
    CHECK(s.image.width == 224);
    CHECK(s.mask->width == 224);
    CHECK(mask_fraction(*s.mask) > 0.0);
    by_section[s.sample_id + magnification_tag(s.magnification)].push_back(&s);
  }
  // paired views share geometry and mask, differ in color
  for (const auto& [key, views] : by_section) {
    REQUIRE(views.size() == 2);
    CHECK(*views[0]->mask == *views[1]->mask);
    CHECK_FALSE(views[0]->image == views[1]->image);
  }
  const Corpus again = generate_synthetic(spec);
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    CHECK(again.samples[i].image == c.samples[i].image);
    CHECK(*again.samples[i].mask == *c.samples[i].mask);
  }
  spec.seed = 43;
  CHECK_FALSE(generate_synthetic(spec).samples[0].image == c.samples[0].image);
}

TEST_CASE("synthetic mask pixels mark exactly the inclusions") {
  ClassRecipe rc = preset_recipe("carbonate_b");
  RngStream rng(3);
  const auto layout = sample_layout(rc, 224, rng);
  Image img(224, 224, 3), mask(224, 224, 1);
  render_view(layout, MatrixRecipe{}, 224, 77, Polarization::ppl, Magnification::x2_5, img, mask);
  for (int y = 0; y < 224; ++y)
    for (int x = 0; x < 224; ++x) {
      bool inside = false;
      for (const auto& inc : layout) inside = inside || inc.contains(x + 0.5, y + 0.5);
      REQUIRE(mask.at(x, y) == (inside ? 1 : 0));
    }
}

TEST_CASE("synthetic coverage matches the recipe's area distribution") {
  // Monte-Carlo moments of sum(area)/canvas^2, compared per image (3 sigma)
  // and for the class mean (3 sigma / sqrt(n)).
  for (const auto& name : preset_names()) {
    const InclusionRecipe r = preset_recipe(name).inclusion;
    const Moments m = coverage_moments(r, 224);
    SynthSpec spec = preset_spec({name, name == "basalt" ? "quartz" : "basalt"}, 40, 7);
    spec.polarizations = {Polarization::ppl};
    const Corpus c = generate_synthetic(spec);
    double sum = 0.0;
    int n = 0;
    for (const auto& s : c.samples) {
      if (s.label != 0) continue;
      const double f = mask_fraction(*s.mask);
      INFO(name << " " << s.stem() << " coverage " << f << " expected " << m.mean << " +- " << 3 * m.sd);
      CHECK(std::abs(f - m.mean) <= 3.0 * m.sd);
      sum += f;
      ++n;
    }
    INFO(name << " mean coverage " << sum / n << " expected " << m.mean);
    CHECK(std::abs(sum / n - m.mean) <= 3.0 * m.sd / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("overcrowded recipes fail with the class name") {
  SynthSpec spec = preset_spec({"calcite", "basalt"}, 1, 1);
  spec.classes[1].inclusion.density_min = 40;
  spec.classes[1].inclusion.density_max = 40;
  spec.classes[1].inclusion.size_min = 30;
  spec.classes[1].inclusion.size_max = 30;
  try {
    (void)generate_synthetic(spec);
    FAIL("expected a generation error");
  } catch (const GenerationError& e) {
    CHECK(std::string(e.what()).find("basalt") != std::string::npos);
  }
}

TEST_CASE("synthetic corpus written to disk scans back") {
  test_support::TempDir dir;
  SynthSpec spec = preset_spec({"calcite", "basalt"}, 2, 5);
  const Corpus c = generate_synthetic(spec);
  write_corpus(c, dir.file("root"));
  const ScanResult r = scan_corpus(dir.file("root"));
  CHECK(r.rejects.empty());
  REQUIRE(r.corpus.samples.size() == c.samples.size());
  // scan order is lexicographic, generation order is class-major then section
  std::map<std::string, const Sample*> by_stem;
  for (const auto& s : c.samples) by_stem[c.class_names[s.label] + "/" + s.stem()] = &s;
  for (const auto& s : r.corpus.samples) {
    const Sample* o = by_stem.at(r.corpus.class_names[s.label] + "/" + s.stem());
    CHECK(s.image == o->image);
    REQUIRE(s.mask.has_value());
    CHECK(*s.mask == *o->mask);
  }
}

TEST_CASE("augmentation") {
  SynthSpec spec = preset_spec({"calcite", "basalt"}, 1, 9);
  spec.polarizations = {Polarization::ppl};
  const Corpus c = generate_synthetic(spec);
  const Sample& s = c.samples[0];

  SUBCASE("no-op policy reproduces the image") {
    AugmentPolicy p;
    p.hflip_p = p.vflip_p = 0.0;
    p.jitter = 0.0;
    p.crop_min = p.crop_max = 1.0;
    RngStream rng(1);
    const Augmented a = augment(s, p, rng);
    CHECK(a.image.data == to_float(s.image).data);
    CHECK(*a.mask == *s.mask);
  }
  SUBCASE("flips move image and mask together") {
    AugmentPolicy p;
    p.hflip_p = 1.0;
    p.vflip_p = 1.0;
    p.jitter = 0.0;
    p.crop_min = p.crop_max = 1.0;
    RngStream rng(1);
    const Augmented a = augment(s, p, rng);
    CHECK(a.image.data == to_float(flip_vertical(flip_horizontal(s.image))).data);
    CHECK(*a.mask == flip_vertical(flip_horizontal(*s.mask)));
  }
  SUBCASE("crops keep the mask aligned with the image") {
    AugmentPolicy p;
    p.jitter = 0.0;
    p.crop_min = 0.5;
    p.crop_max = 0.5;
    RngStream rng(4);
    const Augmented a = augment(s, p, rng);
    CHECK(a.image.width == 224);
    REQUIRE(a.mask.has_value());
    // with scale sqrt(0.5) the window is 158.4 px; the nearest mask equals
    // resampling the full-size mask through the same window
    CHECK(a.mask->width == 224);
    CHECK(mask_fraction(*a.mask) > 0.0);
  }
  SUBCASE("same stream, same result; streams are independent per sample") {
    AugmentPolicy p;
    RngStream r1 = augment_stream(3, 2, 17), r2 = augment_stream(3, 2, 17), r3 = augment_stream(3, 2, 18);
    const auto a = augment(s, p, r1), b = augment(s, p, r2), d = augment(s, p, r3);
    CHECK(a.image.data == b.image.data);
    CHECK_FALSE(a.image.data == d.image.data);
    for (float v : a.image.data) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }
  SUBCASE("policy validation") {
    AugmentPolicy p;
    p.hflip_p = 1.5;
    CHECK_THROWS_AS(p.validate(), ConfigError);
    AugmentPolicy q;
    q.crop_min = 0.9;
    q.crop_max = 0.8;
    CHECK_THROWS_AS(q.validate(), ConfigError);
  }
}
