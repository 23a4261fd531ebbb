#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "thinsec/image.hpp"
#include "thinsec/model.hpp"

namespace thinsec {

enum class Polarization { ppl, xpl };
enum class Magnification { x2_5, x10 };
enum class Split { train, test };

const char* polarization_tag(Polarization p);  // "ppl" | "xpl"
const char* magnification_tag(Magnification m);  // "2.5x" | "10x"

struct Sample {
  Image image;                        // 8-bit RGB
  int label = 0;
  std::string sample_id;              // thin-section identifier shared by its views
  Polarization polarization = Polarization::ppl;
  Magnification magnification = Magnification::x2_5;
  std::optional<int> rotation_deg;
  std::optional<Image> mask;          // 1 channel, values 0/1, same extent as image
  Split split = Split::train;

  // <sample_id>__<ppl|xpl>__<2.5x|10x>[__rot<deg>]
  std::string stem() const;
};

struct Corpus {
  std::vector<Sample> samples;
  std::vector<std::string> class_names;
  NormStats norm;  // set by compute_norm_stats

  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }
};

struct ScanResult {
  Corpus corpus;
  std::vector<std::string> rejects;  // "<path>: <reason>"
};

struct ParsedStem {
  std::string sample_id;
  Polarization polarization;
  Magnification magnification;
  std::optional<int> rotation_deg;
};
// Throws FormatError describing the first problem.
ParsedStem parse_stem(const std::string& stem);

// root/<class>/<stem>.png with optional root/_masks/<stem>.png. Classes and
// files are ordered lexicographically by path.
ScanResult scan_corpus(const std::string& root);

// Writes the layout scan_corpus reads; masks go to _masks/.
void write_corpus(const Corpus& corpus, const std::string& root);

// Per class: shuffle with RngStream(seed, class) and tag the first
// round(fraction * n) as train. In group mode whole sample ids are assigned:
// round(fraction * groups) of each class's groups go to train.
Corpus stratified_split(Corpus corpus, double train_fraction, std::uint64_t seed, bool group_by_sample = false);

// k disjoint stratified folds over the train-tagged samples; each entry holds
// corpus sample indices.
std::vector<std::vector<std::size_t>> kfold(const Corpus& corpus, int k, std::uint64_t seed);

// Channel mean/std of the train images after resizing to 224 and scaling to [0,1].
NormStats compute_norm_stats(const Corpus& corpus);

inline constexpr int kInputSize = 224;

// Resizes to 224 (bilinear, half-pixel centers), scales to [0,1] and
// standardizes per channel into rows of an N x 3 x 224 x 224 tensor.
void write_standardized(const FloatImage& rgb224, const NormStats& stats, float* out);
Tensor to_batch(const std::vector<const Sample*>& samples, const NormStats& stats);
Tensor to_batch(const Corpus& corpus, const std::vector<std::size_t>& indices, const NormStats& stats);

}  // namespace thinsec
