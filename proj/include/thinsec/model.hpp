#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "thinsec/ops.hpp"
#include "thinsec/tensor.hpp"

namespace thinsec {

enum class Arch { resnet18, vit };

const char* arch_name(Arch arch);
Arch parse_arch(const std::string& name);

struct ResNetPlan {
  std::vector<std::int64_t> channels{64, 128, 256, 512};
  std::vector<std::int64_t> blocks{2, 2, 2, 2};
  bool operator==(const ResNetPlan&) const = default;
};

struct VitPlan {
  std::int64_t patch_size = 16;
  std::int64_t depth = 12;
  std::int64_t heads = 6;
  std::int64_t hidden_dim = 384;
  std::int64_t mlp_dim = 1536;
  bool operator==(const VitPlan&) const = default;
};

/// Declarative architecture description. Only 224x224 inputs are accepted;
/// positional embeddings are never interpolated.
struct ModelSpec {
  Arch kind = Arch::resnet18;
  std::int64_t num_classes = 10;
  std::int64_t input_resolution = 224;
  ResNetPlan resnet;
  VitPlan vit;

  static ModelSpec resnet18(std::int64_t num_classes);
  static ModelSpec vit_small(std::int64_t num_classes);

  void validate() const;
  std::int64_t vit_tokens() const;
  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);
  bool operator==(const ModelSpec&) const = default;
};

/// Insertion-ordered name -> tensor map.
class NamedTensors {
 public:
  void insert(const std::string& name, Tensor value);
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const Tensor& at(std::size_t i) const { return values_[i]; }
  std::size_t index_of(const std::string& name) const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Per-channel statistics used to standardize inputs (computed on the train split).
struct NormStats {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};
  bool operator==(const NormStats&) const = default;
};

enum class TrainablePolicy { head_only, full };
TrainablePolicy parse_policy(const std::string& name);
const char* policy_name(TrainablePolicy policy);

struct Model {
  ModelSpec spec;
  NamedTensors params;
  NamedTensors buffers;
  std::vector<bool> trainable;  // aligned with params
  std::vector<std::string> class_names;
  NormStats norm;

  bool is_trainable(const std::string& name) const { return trainable[params.index_of(name)]; }
  bool is_head(const std::string& name) const;
  std::int64_t parameter_count() const;
  std::int64_t feature_dim() const;
  // Combined checksum of every non-head parameter and buffer.
  std::uint64_t backbone_checksum() const;
};

Model build_resnet18(const ModelSpec& spec, std::uint64_t seed);
Model build_vit(const ModelSpec& spec, std::uint64_t seed);
Model build_model(const ModelSpec& spec, std::uint64_t seed);

// Re-initializes the classifier for a new class count; everything else is kept.
Model replace_head(Model model, std::int64_t num_classes, std::uint64_t seed);
Model set_trainable(Model model, TrainablePolicy policy);

struct ForwardOptions {
  // Batch norm runs in train mode only when this is train and the layer's
  // affine parameters are trainable; frozen layers always use running stats.
  NormMode mode = NormMode::eval;
  // resnet: stem (after max-pool), layer1..layer4, features (= layer4); vit: attention
  std::vector<std::string> capture;
  // When false parameters never join the tape (explanations).
  bool track_parameters = true;
};

struct ForwardResult {
  Tensor logits;
  std::map<std::string, Tensor> features;  // retained when a tape is active
  std::vector<Tensor> attention;           // per layer, N x heads x T x T
  NamedTensors updated_buffers;            // running statistics after a train-mode pass
};

ForwardResult forward(const Model& model, const Tensor& batch, const ForwardOptions& options = {});
void commit_buffers(Model& model, const NamedTensors& updated);

}  // namespace thinsec
