#include "thinsec/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "thinsec/rng.hpp"

namespace thinsec {

const char* arch_name(Arch arch) { return arch == Arch::resnet18 ? "resnet18" : "vit"; }

Arch parse_arch(const std::string& name) {
  if (name == "resnet18") return Arch::resnet18;
  if (name == "vit") return Arch::vit;
  throw SpecError("unknown architecture '" + name + "' (expected resnet18 or vit)");
}

TrainablePolicy parse_policy(const std::string& name) {
  if (name == "head_only") return TrainablePolicy::head_only;
  if (name == "full") return TrainablePolicy::full;
  throw ConfigError("unknown trainable policy '" + name + "' (expected head_only or full)");
}

const char* policy_name(TrainablePolicy policy) {
  return policy == TrainablePolicy::head_only ? "head_only" : "full";
}

ModelSpec ModelSpec::resnet18(std::int64_t num_classes) {
  ModelSpec s;
  s.kind = Arch::resnet18;
  s.num_classes = num_classes;
  return s;
}

ModelSpec ModelSpec::vit_small(std::int64_t num_classes) {
  ModelSpec s;
  s.kind = Arch::vit;
  s.num_classes = num_classes;
  return s;
}

void ModelSpec::validate() const {
  if (num_classes < 1) throw SpecError("num_classes must be positive");
  if (input_resolution != 224) {
    throw SpecError("input_resolution must be 224, got " + std::to_string(input_resolution));
  }
  if (kind == Arch::resnet18) {
    if (resnet.channels.size() != 4 || resnet.blocks.size() != 4) {
      throw SpecError("resnet18 needs exactly four stages");
    }
    for (auto c : resnet.channels) {
      if (c < 1) throw SpecError("resnet stage channels must be positive");
    }
    std::int64_t convs = 1;
    for (auto b : resnet.blocks) convs += 2 * b;
    if (convs != 17) throw SpecError("resnet18 must have 17 convolutional layers, plan gives " + std::to_string(convs));
  } else {
    if (vit.patch_size < 1 || vit.depth < 1 || vit.heads < 1 || vit.hidden_dim < 1 || vit.mlp_dim < 1) {
      throw SpecError("vit dimensions must be positive");
    }
    if (input_resolution % vit.patch_size != 0) {
      throw SpecError("input resolution " + std::to_string(input_resolution) + " not divisible by patch size " +
                      std::to_string(vit.patch_size));
    }
    if (vit.hidden_dim % vit.heads != 0) {
      throw SpecError("hidden_dim " + std::to_string(vit.hidden_dim) + " not divisible by " +
                      std::to_string(vit.heads) + " heads");
    }
  }
}

std::int64_t ModelSpec::vit_tokens() const {
  const std::int64_t side = input_resolution / vit.patch_size;
  return side * side + 1;
}

std::string ModelSpec::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = arch_name(kind);
  j["num_classes"] = num_classes;
  j["input_resolution"] = input_resolution;
  j["resnet"] = {{"channels", resnet.channels}, {"blocks", resnet.blocks}};
  j["vit"] = {{"patch_size", vit.patch_size},
              {"depth", vit.depth},
              {"heads", vit.heads},
              {"hidden_dim", vit.hidden_dim},
              {"mlp_dim", vit.mlp_dim}};
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    ModelSpec s;
    s.kind = parse_arch(j.at("kind").get<std::string>());
    s.num_classes = j.at("num_classes").get<std::int64_t>();
    s.input_resolution = j.at("input_resolution").get<std::int64_t>();
    s.resnet.channels = j.at("resnet").at("channels").get<std::vector<std::int64_t>>();
    s.resnet.blocks = j.at("resnet").at("blocks").get<std::vector<std::int64_t>>();
    const auto& v = j.at("vit");
    s.vit.patch_size = v.at("patch_size").get<std::int64_t>();
    s.vit.depth = v.at("depth").get<std::int64_t>();
    s.vit.heads = v.at("heads").get<std::int64_t>();
    s.vit.hidden_dim = v.at("hidden_dim").get<std::int64_t>();
    s.vit.mlp_dim = v.at("mlp_dim").get<std::int64_t>();
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw SpecError(std::string("malformed model spec: ") + e.what());
  }
}

void NamedTensors::insert(const std::string& name, Tensor value) {
  if (index_.count(name)) throw SpecError("duplicate tensor name '" + name + "'");
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
}

void NamedTensors::set(const std::string& name, Tensor value) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    insert(name, std::move(value));
  } else {
    values_[it->second] = std::move(value);
  }
}

const Tensor& NamedTensors::get(const std::string& name) const { return values_[index_of(name)]; }

std::size_t NamedTensors::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw IndexError("no tensor named '" + name + "'");
  return it->second;
}

bool Model::is_head(const std::string& name) const {
  const std::string prefix = spec.kind == Arch::resnet18 ? "fc." : "head.";
  return name.rfind(prefix, 0) == 0;
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (std::size_t i = 0; i < params.size(); ++i) n += params.at(i).numel();
  return n;
}

std::int64_t Model::feature_dim() const {
  return spec.kind == Arch::resnet18 ? spec.resnet.channels.back() : spec.vit.hidden_dim;
}

std::uint64_t Model::backbone_checksum() const {
  std::uint64_t h = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (is_head(params.names()[i])) continue;
    h = mix64(h ^ params.at(i).checksum());
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) h = mix64(h ^ buffers.at(i).checksum());
  return h;
}

namespace {

Tensor normal_init(const std::string& name, std::uint64_t seed, Shape shape, double stddev) {
  RngStream rng(seed, hash_string(name));
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.normal() * stddev);
  return Tensor::from(std::move(shape), std::move(v));
}

// Normal truncated at two standard deviations (resampled).
Tensor trunc_normal_init(const std::string& name, std::uint64_t seed, Shape shape, double stddev) {
  RngStream rng(seed, hash_string(name));
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) {
    double z;
    do {
      z = rng.normal();
    } while (std::abs(z) > 2.0);
    x = static_cast<float>(z * stddev);
  }
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor uniform_init(const std::string& name, std::uint64_t seed, Shape shape, double bound) {
  RngStream rng(seed, hash_string(name));
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-bound, bound));
  return Tensor::from(std::move(shape), std::move(v));
}

// He (fan-in) normal initialization.
void add_conv(Model& m, const std::string& name, std::int64_t out, std::int64_t in, std::int64_t k,
              std::uint64_t seed) {
  const double fan_in = static_cast<double>(in * k * k);
  m.params.insert(name + ".weight", normal_init(name + ".weight", seed, {out, in, k, k}, std::sqrt(2.0 / fan_in)));
}

void add_bn(Model& m, const std::string& name, std::int64_t c) {
  m.params.insert(name + ".weight", Tensor::full({c}, 1.0f));
  m.params.insert(name + ".bias", Tensor::zeros({c}));
  m.buffers.insert(name + ".running_mean", Tensor::zeros({c}));
  m.buffers.insert(name + ".running_var", Tensor::full({c}, 1.0f));
}

void add_resnet_fc(Model& m, std::int64_t in, std::int64_t classes, std::uint64_t seed) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  m.params.set("fc.weight", uniform_init("fc.weight", seed, {classes, in}, bound));
  m.params.set("fc.bias", Tensor::zeros({classes}));
}

void add_vit_linear(Model& m, const std::string& name, std::int64_t out, std::int64_t in, std::uint64_t seed) {
  m.params.set(name + ".weight", trunc_normal_init(name + ".weight", seed, {out, in}, 0.02));
  m.params.set(name + ".bias", Tensor::zeros({out}));
}

void add_ln(Model& m, const std::string& name, std::int64_t d) {
  m.params.insert(name + ".weight", Tensor::full({d}, 1.0f));
  m.params.insert(name + ".bias", Tensor::zeros({d}));
}

void finish(Model& m) { m.trainable.assign(m.params.size(), true); }

}  // namespace

Model build_resnet18(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != Arch::resnet18) throw SpecError("build_resnet18 called with a vit spec");
  Model m;
  m.spec = spec;
  const auto& ch = spec.resnet.channels;
  add_conv(m, "conv1", ch[0], 3, 7, seed);
  add_bn(m, "bn1", ch[0]);
  std::int64_t in = ch[0];
  for (int s = 0; s < 4; ++s) {
    for (std::int64_t b = 0; b < spec.resnet.blocks[s]; ++b) {
      const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
      const std::int64_t out = ch[s];
      const bool down = b == 0 && (s > 0 || in != out);
      add_conv(m, p + ".conv1", out, in, 3, seed);
      add_bn(m, p + ".bn1", out);
      add_conv(m, p + ".conv2", out, out, 3, seed);
      add_bn(m, p + ".bn2", out);
      if (down) {
        add_conv(m, p + ".downsample.0", out, in, 1, seed);
        add_bn(m, p + ".downsample.1", out);
      }
      in = out;
    }
  }
  add_resnet_fc(m, in, spec.num_classes, seed);
  finish(m);
  return m;
}

Model build_vit(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (spec.kind != Arch::vit) throw SpecError("build_vit called with a resnet spec");
  Model m;
  m.spec = spec;
  const auto& v = spec.vit;
  const std::int64_t D = v.hidden_dim;
  m.params.insert("cls_token", trunc_normal_init("cls_token", seed, {1, 1, D}, 0.02));
  m.params.insert("pos_embed", trunc_normal_init("pos_embed", seed, {1, spec.vit_tokens(), D}, 0.02));
  m.params.insert("patch_embed.proj.weight",
                  trunc_normal_init("patch_embed.proj.weight", seed, {D, 3, v.patch_size, v.patch_size}, 0.02));
  m.params.insert("patch_embed.proj.bias", Tensor::zeros({D}));
  for (std::int64_t i = 0; i < v.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    add_ln(m, p + ".norm1", D);
    add_vit_linear(m, p + ".attn.qkv", 3 * D, D, seed);
    add_vit_linear(m, p + ".attn.proj", D, D, seed);
    add_ln(m, p + ".norm2", D);
    add_vit_linear(m, p + ".mlp.fc1", v.mlp_dim, D, seed);
    add_vit_linear(m, p + ".mlp.fc2", D, v.mlp_dim, seed);
  }
  add_ln(m, "norm", D);
  add_vit_linear(m, "head", spec.num_classes, D, seed);
  finish(m);
  return m;
}

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  return spec.kind == Arch::resnet18 ? build_resnet18(spec, seed) : build_vit(spec, seed);
}

Model replace_head(Model model, std::int64_t num_classes, std::uint64_t seed) {
  if (num_classes < 1) throw SpecError("num_classes must be positive");
  const std::int64_t in = model.feature_dim();
  model.spec.num_classes = num_classes;
  if (model.spec.kind == Arch::resnet18) {
    add_resnet_fc(model, in, num_classes, seed);
  } else {
    add_vit_linear(model, "head", num_classes, in, seed);
  }
  if (static_cast<std::int64_t>(model.class_names.size()) != num_classes) model.class_names.clear();
  return model;
}

Model set_trainable(Model model, TrainablePolicy policy) {
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    model.trainable[i] = policy == TrainablePolicy::full || model.is_head(model.params.names()[i]);
  }
  return model;
}

namespace {

class ForwardPass {
 public:
  ForwardPass(const Model& model, const ForwardOptions& options) : m_(model), opt_(options), tape_(active_tape()) {}

  Tensor p(const std::string& name) const {
    const Tensor& t = m_.params.get(name);
    if (opt_.track_parameters && tape_ && m_.is_trainable(name)) return t.requiring_grad(true);
    return t;
  }

  Tensor bn(const Tensor& x, const std::string& name, NamedTensors& updated) const {
    const bool train = opt_.mode == NormMode::train && m_.is_trainable(name + ".weight");
    auto stats = RunningStats::provided(m_.buffers.get(name + ".running_mean"), m_.buffers.get(name + ".running_var"));
    auto r = batch_norm2d(x, p(name + ".weight"), p(name + ".bias"), stats, train ? NormMode::train : NormMode::eval);
    if (train) {
      updated.set(name + ".running_mean", r.stats.mean);
      updated.set(name + ".running_var", r.stats.var);
    }
    return r.out;
  }

  Tensor capture(const std::string& probe, Tensor t, ForwardResult& result) const {
    if (std::find(opt_.capture.begin(), opt_.capture.end(), probe) == opt_.capture.end() &&
        !(probe == "layer4" &&
          std::find(opt_.capture.begin(), opt_.capture.end(), "features") != opt_.capture.end())) {
      return t;
    }
    if (tape_) t = tape_->retain(t);
    result.features[probe] = t;
    if (probe == "layer4") result.features["features"] = t;
    return t;
  }

  const Model& m_;
  const ForwardOptions& opt_;
  Tape* tape_;
};

void check_probes(const Model& model, const ForwardOptions& options) {
  static const std::set<std::string> resnet_probes{"stem", "layer1", "layer2", "layer3", "layer4", "features"};
  for (const auto& probe : options.capture) {
    const bool ok = model.spec.kind == Arch::resnet18 ? resnet_probes.count(probe) != 0 : probe == "attention";
    if (!ok) {
      throw ProbeError("unknown probe point '" + probe + "' for " + arch_name(model.spec.kind));
    }
  }
}

Tensor resnet_forward(const ForwardPass& f, const Tensor& x, ForwardResult& result) {
  const Model& m = f.m_;
  Tensor h = conv2d(x, f.p("conv1.weight"), {}, {2, 2}, {3, 3});
  h = relu(f.bn(h, "bn1", result.updated_buffers));
  h = f.capture("stem", max_pool2d(h, 3, 2, 1), result);
  for (int s = 0; s < 4; ++s) {
    for (std::int64_t b = 0; b < m.spec.resnet.blocks[s]; ++b) {
      const std::string p = "layer" + std::to_string(s + 1) + "." + std::to_string(b);
      const std::int64_t stride = (b == 0 && s > 0) ? 2 : 1;
      Tensor y = conv2d(h, f.p(p + ".conv1.weight"), {}, {stride, stride}, {1, 1});
      y = relu(f.bn(y, p + ".bn1", result.updated_buffers));
      y = conv2d(y, f.p(p + ".conv2.weight"), {}, {1, 1}, {1, 1});
      y = f.bn(y, p + ".bn2", result.updated_buffers);
      Tensor skip = h;
      if (m.params.contains(p + ".downsample.0.weight")) {
        skip = conv2d(h, f.p(p + ".downsample.0.weight"), {}, {stride, stride}, {0, 0});
        skip = f.bn(skip, p + ".downsample.1", result.updated_buffers);
      }
      h = relu(add(y, skip));
    }
    h = f.capture("layer" + std::to_string(s + 1), h, result);
  }
  Tensor pooled = global_avg_pool(h);
  return linear(pooled, f.p("fc.weight"), f.p("fc.bias"));
}

Tensor vit_forward(const ForwardPass& f, const Tensor& x, ForwardResult& result) {
  const Model& m = f.m_;
  const auto& v = m.spec.vit;
  const std::int64_t N = x.dim(0), D = v.hidden_dim, H = v.heads, dh = D / H;
  const std::int64_t T = m.spec.vit_tokens();
  const bool want_attention =
      std::find(f.opt_.capture.begin(), f.opt_.capture.end(), "attention") != f.opt_.capture.end();

  Tensor patches = conv2d(x, f.p("patch_embed.proj.weight"), f.p("patch_embed.proj.bias"),
                          {v.patch_size, v.patch_size}, {0, 0});
  patches = permute(reshape(patches, {N, D, T - 1}), {0, 2, 1});
  Tensor cls = add(Tensor::zeros({N, 1, D}), f.p("cls_token"));
  Tensor h = add(concat({cls, patches}, 1), f.p("pos_embed"));
  const float attn_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  for (std::int64_t i = 0; i < v.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i);
    Tensor y = layer_norm(h, f.p(p + ".norm1.weight"), f.p(p + ".norm1.bias"));
    Tensor qkv = linear(y, f.p(p + ".attn.qkv.weight"), f.p(p + ".attn.qkv.bias"));
    qkv = permute(reshape(qkv, {N, T, 3, H, dh}), {2, 0, 3, 1, 4});  // 3 x N x H x T x dh
    Tensor q = reshape(slice(qkv, 0, 0, 1), {N, H, T, dh});
    Tensor k = reshape(slice(qkv, 0, 1, 1), {N, H, T, dh});
    Tensor val = reshape(slice(qkv, 0, 2, 1), {N, H, T, dh});
    Tensor attn = softmax(scale(matmul(q, k, true), attn_scale), -1);
    if (want_attention) result.attention.push_back(attn);
    Tensor ctx = reshape(permute(matmul(attn, val), {0, 2, 1, 3}), {N, T, D});
    h = add(h, linear(ctx, f.p(p + ".attn.proj.weight"), f.p(p + ".attn.proj.bias")));
    y = layer_norm(h, f.p(p + ".norm2.weight"), f.p(p + ".norm2.bias"));
    y = linear(gelu(linear(y, f.p(p + ".mlp.fc1.weight"), f.p(p + ".mlp.fc1.bias"))),
               f.p(p + ".mlp.fc2.weight"), f.p(p + ".mlp.fc2.bias"));
    h = add(h, y);
  }
  h = layer_norm(h, f.p("norm.weight"), f.p("norm.bias"));
  Tensor cls_out = reshape(slice(h, 1, 0, 1), {N, D});
  return linear(cls_out, f.p("head.weight"), f.p("head.bias"));
}

}  // namespace

ForwardResult forward(const Model& model, const Tensor& batch, const ForwardOptions& options) {
  check_probes(model, options);
  const std::int64_t r = model.spec.input_resolution;
  if (batch.ndim() != 4 || batch.dim(1) != 3 || batch.dim(2) != r || batch.dim(3) != r) {
    throw DimensionError("model expects N x 3 x " + std::to_string(r) + " x " + std::to_string(r) + " input, got " +
                         shape_str(batch.shape()));
  }
  ForwardResult result;
  ForwardPass pass(model, options);
  result.logits = model.spec.kind == Arch::resnet18 ? resnet_forward(pass, batch, result)
                                                    : vit_forward(pass, batch, result);
  return result;
}

void commit_buffers(Model& model, const NamedTensors& updated) {
  for (std::size_t i = 0; i < updated.size(); ++i) {
    model.buffers.set(updated.names()[i], updated.at(i).detach());
  }
}

}  // namespace thinsec
