#include "thinsec/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <regex>
#include <set>

#include "thinsec/rng.hpp"

namespace thinsec {

namespace fs = std::filesystem;

const char* polarization_tag(Polarization p) { return p == Polarization::ppl ? "ppl" : "xpl"; }
const char* magnification_tag(Magnification m) { return m == Magnification::x2_5 ? "2.5x" : "10x"; }

std::string Sample::stem() const {
  std::string s = sample_id + "__" + polarization_tag(polarization) + "__" + magnification_tag(magnification);
  if (rotation_deg) s += "__rot" + std::to_string(*rotation_deg);
  return s;
}

std::vector<std::size_t> Corpus::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == split) out.push_back(i);
  }
  return out;
}

ParsedStem parse_stem(const std::string& stem) {
  static const std::regex pattern(R"(^([A-Za-z0-9][A-Za-z0-9_.-]*?)__(ppl|xpl)__(2\.5x|10x)(?:__rot(-?[0-9]{1,3}))?$)");
  std::smatch m;
  if (!std::regex_match(stem, m, pattern)) {
    throw FormatError("name does not match <sample_id>__<ppl|xpl>__<2.5x|10x>[__rot<deg>]");
  }
  ParsedStem p;
  p.sample_id = m[1];
  if (p.sample_id.find("__") != std::string::npos) throw FormatError("sample id contains '__'");
  p.polarization = m[2] == "ppl" ? Polarization::ppl : Polarization::xpl;
  p.magnification = m[3] == "2.5x" ? Magnification::x2_5 : Magnification::x10;
  if (m[4].matched) {
    const int deg = std::stoi(m[4]);
    if (deg <= -360 || deg >= 360) throw FormatError("rotation must lie in (-360, 360)");
    p.rotation_deg = deg;
  }
  return p;
}

ScanResult scan_corpus(const std::string& root) {
  if (!fs::is_directory(root)) throw CorpusError("corpus root '" + root + "' is not a directory");
  std::vector<fs::path> class_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind('_', 0) != 0) class_dirs.push_back(e.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() < 2) throw CorpusError("corpus '" + root + "' needs at least two class directories");

  const fs::path mask_dir = fs::path(root) / "_masks";
  ScanResult result;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    const auto& dir = class_dirs[label];
    result.corpus.class_names.push_back(dir.filename().string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::size_t accepted = 0;
    for (const auto& file : files) {
      if (file.extension() != ".png") {
        result.rejects.push_back(file.string() + ": not a .png file");
        continue;
      }
      const std::string stem = file.stem().string();
      try {
        const ParsedStem p = parse_stem(stem);
        Sample s;
        s.image = read_png_rgb(file.string());
        s.label = static_cast<int>(label);
        s.sample_id = p.sample_id;
        s.polarization = p.polarization;
        s.magnification = p.magnification;
        s.rotation_deg = p.rotation_deg;
        const fs::path mask_path = mask_dir / (stem + ".png");
        if (fs::exists(mask_path)) {
          Image mask = read_png_mask(mask_path.string());
          if (mask.width != s.image.width || mask.height != s.image.height) {
            throw FormatError("mask extent differs from image");
          }
          if (std::none_of(mask.data.begin(), mask.data.end(), [](std::uint8_t v) { return v != 0; })) {
            throw FormatError("mask is empty");
          }
          s.mask = std::move(mask);
        }
        result.corpus.samples.push_back(std::move(s));
        ++accepted;
      } catch (const FormatError& e) {
        result.rejects.push_back(file.string() + ": " + e.what());
      }
    }
    if (accepted == 0) throw CorpusError("class directory '" + dir.string() + "' holds no usable images");
  }
  return result;
}

void write_corpus(const Corpus& corpus, const std::string& root) {
  const fs::path base(root);
  const fs::path mask_dir = base / "_masks";
  for (const auto& name : corpus.class_names) fs::create_directories(base / name);
  bool any_mask = false;
  for (const auto& s : corpus.samples) any_mask = any_mask || s.mask.has_value();
  if (any_mask) fs::create_directories(mask_dir);
  for (const auto& s : corpus.samples) {
    write_png((base / corpus.class_names.at(s.label) / (s.stem() + ".png")).string(), s.image);
    if (s.mask) write_png((mask_dir / (s.stem() + ".png")).string(), mask_to_gray(*s.mask));
  }
}

Corpus stratified_split(Corpus corpus, double train_fraction, std::uint64_t seed, bool group_by_sample) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train fraction must lie strictly between 0 and 1");
  }
  const int K = static_cast<int>(corpus.class_names.size());
  for (int c = 0; c < K; ++c) {
    RngStream rng(seed, static_cast<std::uint64_t>(c));
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
      if (corpus.samples[i].label == c) members.push_back(i);
    }
    if (!group_by_sample) {
      rng.shuffle(members);
      const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(members.size())));
      for (std::size_t j = 0; j < members.size(); ++j) {
        corpus.samples[members[j]].split = j < n_train ? Split::train : Split::test;
      }
      continue;
    }
    std::vector<std::string> groups;
    {
      std::set<std::string> seen;
      for (auto i : members) {
        if (seen.insert(corpus.samples[i].sample_id).second) groups.push_back(corpus.samples[i].sample_id);
      }
    }
    if (groups.size() < 2) {
      throw SplitError("class '" + corpus.class_names[c] + "' has " + std::to_string(groups.size()) +
                       " sample id(s); group mode needs at least 2");
    }
    rng.shuffle(groups);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(groups.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, groups.size() - 1);
    std::set<std::string> train_groups(groups.begin(), groups.begin() + static_cast<std::ptrdiff_t>(n_train));
    for (auto i : members) {
      corpus.samples[i].split = train_groups.count(corpus.samples[i].sample_id) ? Split::train : Split::test;
    }
  }
  return corpus;
}

std::vector<std::vector<std::size_t>> kfold(const Corpus& corpus, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k-fold needs k >= 2");
  const auto train = corpus.indices(Split::train);
  if (train.size() < static_cast<std::size_t>(k)) throw SplitError("fewer train samples than folds");
  std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
  std::size_t dealt = 0;
  for (int c = 0; c < static_cast<int>(corpus.class_names.size()); ++c) {
    std::vector<std::size_t> members;
    for (auto i : train) {
      if (corpus.samples[i].label == c) members.push_back(i);
    }
    RngStream(seed, static_cast<std::uint64_t>(c), 0x6b666f6cull).shuffle(members);
    // continue dealing where the previous class stopped so fold sizes stay balanced
    for (auto i : members) folds[dealt++ % static_cast<std::size_t>(k)].push_back(i);
  }
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

namespace {

FloatImage input_view(const Image& image) { return resize_bilinear(to_float(image), kInputSize, kInputSize); }

}  // namespace

NormStats compute_norm_stats(const Corpus& corpus) {
  const auto train = corpus.indices(Split::train);
  if (train.empty()) throw ConfigError("cannot compute normalization statistics: empty train split");
  std::array<double, 3> s{}, s2{};
  double count = 0.0;
  for (auto i : train) {
    const FloatImage f = input_view(corpus.samples[i].image);
    for (std::size_t p = 0; p < f.data.size(); p += 3) {
      for (int c = 0; c < 3; ++c) {
        const double v = f.data[p + c];
        s[c] += v;
        s2[c] += v * v;
      }
    }
    count += static_cast<double>(f.data.size() / 3);
  }
  NormStats stats;
  for (int c = 0; c < 3; ++c) {
    const double m = s[c] / count;
    const double var = std::max(s2[c] / count - m * m, 0.0);
    stats.mean[c] = static_cast<float>(m);
    stats.std[c] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
  }
  return stats;
}

void write_standardized(const FloatImage& rgb224, const NormStats& stats, float* out) {
  const std::size_t plane = static_cast<std::size_t>(kInputSize) * kInputSize;
  for (int c = 0; c < 3; ++c) {
    const float m = stats.mean[c], inv = 1.0f / stats.std[c];
    float* dst = out + c * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = (rgb224.data[p * 3 + c] - m) * inv;
  }
}

Tensor to_batch(const std::vector<const Sample*>& samples, const NormStats& stats) {
  const std::size_t per = 3 * static_cast<std::size_t>(kInputSize) * kInputSize;
  std::vector<float> out(samples.size() * per);
  const auto n = static_cast<std::int64_t>(samples.size());
#pragma omp parallel for schedule(dynamic) if (n > 1)
  for (std::int64_t i = 0; i < n; ++i) {
    write_standardized(input_view(samples[static_cast<std::size_t>(i)]->image), stats, out.data() + i * per);
  }
  return Tensor::from({n, 3, kInputSize, kInputSize}, std::move(out));
}

Tensor to_batch(const Corpus& corpus, const std::vector<std::size_t>& indices, const NormStats& stats) {
  std::vector<const Sample*> ptrs;
  for (auto i : indices) ptrs.push_back(&corpus.samples.at(i));
  return to_batch(ptrs, stats);
}

}  // namespace thinsec
