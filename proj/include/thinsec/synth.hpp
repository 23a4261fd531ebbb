#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "thinsec/corpus.hpp"
#include "thinsec/rng.hpp"

namespace thinsec {

enum class ShapeFamily { rhomb, angular, rounded, elongated_shell, vesicular };

const char* shape_family_name(ShapeFamily f);
ShapeFamily parse_shape_family(const std::string& name);

struct Rgb {
  float r = 0.0f, g = 0.0f, b = 0.0f;
  bool operator==(const Rgb&) const = default;
};

// One class-defining inclusion population. Sizes are the characteristic
// radius r in canvas pixels; each family's area as a function of r:
//   rounded, vesicular   ellipse, semi-axes r and q r, q ~ U[0.7, 1]:  pi q r^2
//   rhomb                |u|/r + |v|/(q r) <= 1, q ~ U[0.55, 0.8]:      2 q r^2
//   elongated_shell      annular sector, mid radius r, thickness 0.36 r,
//                        opening phi ~ U[100, 160] degrees:            0.36 phi r^2
//   angular              convex polygon, m ~ U{5..7} vertices at angles
//                        2 pi (i + U[-0.3, 0.3]) / m and radii r U[0.7, 1]: shoelace area
// Inclusions never overlap and lie fully inside the canvas, so the mask
// coverage of an image is the sum of its inclusion areas over the canvas area.
struct InclusionRecipe {
  ShapeFamily family = ShapeFamily::rounded;
  Rgb ppl_lo, ppl_hi;            // muted plane-polarized color range
  std::vector<Rgb> xpl_palette;  // cross-polarized interference colors
  int density_min = 1;           // inclusions per section, inclusive
  int density_max = 1;
  double size_min = 10.0;
  double size_max = 10.0;
  bool operator==(const InclusionRecipe&) const = default;
};

struct ClassRecipe {
  std::string name;
  InclusionRecipe inclusion;
};

struct MatrixRecipe {
  Rgb ppl{0.62f, 0.55f, 0.45f};
  Rgb xpl{0.22f, 0.20f, 0.18f};
  double noise = 0.08;  // amplitude of the low-frequency field
  double grain = 0.03;  // amplitude of per-pixel grain
  int cells = 6;        // low-frequency lattice cells across the canvas
};

struct SynthSpec {
  std::vector<ClassRecipe> classes;
  MatrixRecipe matrix;
  int image_size = 224;
  int sections_per_class = 10;
  std::vector<Polarization> polarizations{Polarization::ppl, Polarization::xpl};
  std::vector<Magnification> magnifications{Magnification::x2_5};
  std::uint64_t seed = 0;

  void validate() const;
};

const std::vector<std::string>& preset_names();
ClassRecipe preset_recipe(const std::string& name);
SynthSpec preset_spec(const std::vector<std::string>& class_names, int sections_per_class, std::uint64_t seed);

struct Inclusion {
  ShapeFamily family = ShapeFamily::rounded;
  double cx = 0.0, cy = 0.0;  // center (arc center for shells)
  double r = 0.0, q = 1.0, angle = 0.0;
  double span = 0.0;                               // shell opening in radians
  std::vector<std::pair<double, double>> polygon;  // angular: vertices relative to the center
  std::vector<std::pair<double, double>> vesicles;  // vesicular: hole centers relative to the center
  double vesicle_radius = 0.0;
  Rgb ppl, xpl;

  double bound() const;  // radius of a circle around (cx, cy) containing the shape
  double area() const;   // exact area of the continuous shape
  bool contains(double x, double y) const;
  // Interior texture in [-1, 1] at a point inside the shape.
  double texture(double x, double y) const;
};

// Rejection-samples a non-overlapping layout; throws GenerationError naming
// the class when an inclusion cannot be placed.
std::vector<Inclusion> sample_layout(const ClassRecipe& recipe, int canvas, RngStream& rng);

// Renders one view. At 2.5x the view is the full canvas; at 10x it is the
// central quarter-width window magnified four times.
void render_view(const std::vector<Inclusion>& layout, const MatrixRecipe& matrix, int canvas,
                 std::uint64_t section_key, Polarization pol, Magnification mag, Image& image, Image& mask);

// Every section draws one layout; each (polarization, magnification) pair is
// rendered from it, sharing geometry and mask. Sample ids are
// <class>-<section index, 3 digits>.
Corpus generate_synthetic(const SynthSpec& spec);

}  // namespace thinsec
