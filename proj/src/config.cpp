#include "thinsec/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "thinsec/checkpoint.hpp"
#include "thinsec/explain.hpp"

namespace thinsec {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) out.push_back(trim(part));
  return out;
}

std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? "," : "") + parts[i];
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("bad value '" + value + "' for " + key + " (expected " + expected + ")");
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
  T v{};
  const auto* end = value.data() + value.size();
  const auto r = std::from_chars(value.data(), end, v);
  if (value.empty() || r.ec != std::errc() || r.ptr != end) bad_value(key, value, "an integer");
  return v;
}

double parse_real(const std::string& key, const std::string& value) {
  char* end = nullptr;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || end != value.c_str() + value.size() || !std::isfinite(v)) bad_value(key, value, "a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "true or false");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value,
                          const std::function<T(const std::string&, const std::string&)>& one) {
  std::vector<T> out;
  for (const auto& p : split_list(value)) out.push_back(one(key, p));
  return out;
}

std::string num(double v) { return format_number(v); }

template <typename T>
std::string join_numbers(const std::vector<T>& v) {
  std::vector<std::string> s;
  for (const auto& x : v) {
    if constexpr (std::is_floating_point_v<T>) s.push_back(num(x));
    else s.push_back(std::to_string(x));
  }
  return join(s);
}

struct Field {
  std::string key;
  std::string help;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define THINSEC_INT(KEY, MEMBER, HELP)                                                  \
  Field {                                                                               \
    KEY, HELP, [](const RunConfig& c) { return std::to_string(c.MEMBER); },             \
        [](RunConfig& c, const std::string& k, const std::string& v) {                  \
          c.MEMBER = parse_integer<std::remove_reference_t<decltype(c.MEMBER)>>(k, v); \
        }                                                                               \
  }
#define THINSEC_REAL(KEY, MEMBER, HELP)                                                                 \
  Field {                                                                                               \
    KEY, HELP, [](const RunConfig& c) { return num(c.MEMBER); },                                        \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_real(k, v); } \
  }
#define THINSEC_BOOL(KEY, MEMBER, HELP)                                                                 \
  Field {                                                                                               \
    KEY, HELP, [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); },             \
        [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = parse_bool(k, v); } \
  }
#define THINSEC_STR(KEY, MEMBER, HELP)                                                                 \
  Field {                                                                                              \
    KEY, HELP, [](const RunConfig& c) { return c.MEMBER; },                                            \
        [](RunConfig& c, const std::string&, const std::string& v) { c.MEMBER = v; }                  \
  }
#define THINSEC_STRLIST(KEY, MEMBER, HELP)                                                             \
  Field {                                                                                              \
    KEY, HELP, [](const RunConfig& c) { return join(c.MEMBER); },                                      \
        [](RunConfig& c, const std::string&, const std::string& v) { c.MEMBER = split_list(v); }      \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      THINSEC_STR("run.name", name, "run directory name under run.outdir"),
      THINSEC_STR("run.outdir", outdir, "output root"),
      THINSEC_INT("threads", threads, "OpenMP threads; 0 = runtime default, 1 = deterministic mode"),
      THINSEC_BOOL("deterministic", deterministic, "force a single thread"),
      Field{"seeds", "training seeds; one run per seed",
            [](const RunConfig& c) { return join_numbers(c.seeds); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.seeds = parse_list<std::uint64_t>(k, v, parse_integer<std::uint64_t>);
            }},

      THINSEC_STR("data.source", data.source, "synthetic | dir"),
      THINSEC_STR("data.dir", data.dir, "corpus root when data.source=dir"),
      THINSEC_REAL("data.train_fraction", data.train_fraction, "stratified train share"),
      THINSEC_INT("data.split_seed", data.split_seed, "split shuffling seed"),
      THINSEC_BOOL("data.group_by_sample", data.group_by_sample, "keep all views of a section in one split"),
      THINSEC_STR("data.norm", data.norm, "train (train-split statistics) | imagenet"),

      THINSEC_STRLIST("synth.classes", synth.classes, "preset class names"),
      THINSEC_INT("synth.sections", synth.sections, "sections per class"),
      THINSEC_INT("synth.seed", synth.seed, "generator seed"),
      THINSEC_INT("synth.image_size", synth.image_size, "canvas side in pixels"),
      THINSEC_STRLIST("synth.polarizations", synth.polarizations, "views per section: ppl, xpl"),
      THINSEC_STRLIST("synth.magnifications", synth.magnifications, "2.5x, 10x"),
      THINSEC_STR("synth.out", synth.out, "cmd synth target directory; empty = <run dir>/corpus"),

      Field{"model.arch", "resnet18 | vit", [](const RunConfig& c) { return std::string(arch_name(c.model.spec.kind)); },
            [](RunConfig& c, const std::string&, const std::string& v) { c.model.spec.kind = parse_arch(v); }},
      Field{"model.resnet.channels", "stage widths",
            [](const RunConfig& c) { return join_numbers(c.model.spec.resnet.channels); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.spec.resnet.channels = parse_list<std::int64_t>(k, v, parse_integer<std::int64_t>);
            }},
      Field{"model.resnet.blocks", "blocks per stage",
            [](const RunConfig& c) { return join_numbers(c.model.spec.resnet.blocks); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.model.spec.resnet.blocks = parse_list<std::int64_t>(k, v, parse_integer<std::int64_t>);
            }},
      THINSEC_INT("model.vit.patch_size", model.spec.vit.patch_size, "patch side"),
      THINSEC_INT("model.vit.depth", model.spec.vit.depth, "encoder blocks"),
      THINSEC_INT("model.vit.heads", model.spec.vit.heads, "attention heads"),
      THINSEC_INT("model.vit.hidden_dim", model.spec.vit.hidden_dim, "token width"),
      THINSEC_INT("model.vit.mlp_dim", model.spec.vit.mlp_dim, "MLP width"),
      THINSEC_STR("model.init", model.init, "scratch | checkpoint | import"),
      THINSEC_STR("model.init_path", model.init_path, "checkpoint or named-tensor file for model.init"),
      Field{"model.policy", "full | head_only",
            [](const RunConfig& c) { return std::string(policy_name(c.model.policy)); },
            [](RunConfig& c, const std::string&, const std::string& v) { c.model.policy = parse_policy(v); }},

      THINSEC_INT("train.epochs", train.epochs, "epochs per run"),
      THINSEC_INT("train.batch_size", train.batch_size, "minibatch size"),
      THINSEC_INT("train.eval_batch_size", train.eval_batch_size, "evaluation batch size"),
      THINSEC_REAL("train.lr", train.adamw.lr, "AdamW learning rate"),
      THINSEC_REAL("train.weight_decay", train.adamw.weight_decay, "AdamW decoupled weight decay"),
      THINSEC_REAL("train.beta1", train.adamw.beta1, "AdamW beta1"),
      THINSEC_REAL("train.beta2", train.adamw.beta2, "AdamW beta2"),
      THINSEC_REAL("train.eps", train.adamw.eps, "AdamW epsilon"),
      Field{"train.scheduler", "none | plateau | cosine",
            [](const RunConfig& c) { return std::string(scheduler_name(c.train.scheduler.kind)); },
            [](RunConfig& c, const std::string&, const std::string& v) { c.train.scheduler.kind = parse_scheduler(v); }},
      THINSEC_REAL("train.plateau.factor", train.scheduler.factor, "lr multiplier on plateau"),
      THINSEC_INT("train.plateau.patience", train.scheduler.patience, "epochs without improvement tolerated"),
      THINSEC_REAL("train.plateau.min_delta", train.scheduler.min_delta, "absolute improvement threshold"),
      THINSEC_STR("train.plateau.metric", train.plateau_metric, "train_loss | train_error"),
      THINSEC_REAL("train.cosine.final_fraction", train.scheduler.final_fraction, "final lr as a fraction of train.lr"),
      THINSEC_BOOL("train.monitor_test", train.monitor_test, "record test accuracy per epoch"),

      THINSEC_BOOL("augment.enabled", train.augment.enabled, "apply augmentation"),
      THINSEC_REAL("augment.hflip", train.augment.hflip_p, "horizontal flip probability"),
      THINSEC_REAL("augment.vflip", train.augment.vflip_p, "vertical flip probability"),
      THINSEC_REAL("augment.jitter", train.augment.jitter, "brightness/contrast/saturation half-range"),
      THINSEC_REAL("augment.crop_min", train.augment.crop_min, "smallest crop area fraction"),
      THINSEC_REAL("augment.crop_max", train.augment.crop_max, "largest crop area fraction"),

      THINSEC_INT("xval.folds", xval.folds, "k"),
      Field{"xval.lr", "learning-rate grid", [](const RunConfig& c) { return join_numbers(c.xval.lrs); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.xval.lrs = parse_list<double>(k, v, parse_real);
            }},
      Field{"xval.weight_decay", "weight-decay grid",
            [](const RunConfig& c) { return join_numbers(c.xval.weight_decays); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.xval.weight_decays = parse_list<double>(k, v, parse_real);
            }},
      THINSEC_INT("xval.epochs", xval.epochs, "epochs per fold training; -1 = train.epochs"),

      THINSEC_STR("eval.checkpoint", eval.checkpoint, "checkpoint to evaluate"),
      THINSEC_STR("eval.split", eval.split, "test | train | all"),

      THINSEC_STR("explain.checkpoint", explain.checkpoint, "checkpoint to explain"),
      THINSEC_STR("explain.method", explain.method, "gradcam | guided_bp | guided_gradcam | attention"),
      THINSEC_STRLIST("explain.images", explain.images, "PNG paths; empty = corpus split"),
      THINSEC_STR("explain.split", explain.split, "test | train | all"),
      THINSEC_STR("explain.target", explain.target, "predicted | true | <class index>"),
      THINSEC_STRLIST("explain.modes", explain.modes, "overlay, masked, raw"),
      THINSEC_REAL("explain.alpha", explain.alpha, "overlay blend weight"),
      THINSEC_REAL("explain.threshold", explain.threshold, "masked-mode cutoff"),
      THINSEC_STR("explain.layer", explain.layer, "attention layer: last | all | <index>"),
      THINSEC_STR("explain.head", explain.head, "attention head: mean | all | <index>"),
      THINSEC_BOOL("explain.rotation", explain.rotation, "run the rotation sequence"),
      Field{"explain.angles", "rotation angles in degrees (must include 0)",
            [](const RunConfig& c) { return join_numbers(c.explain.angles); },
            [](RunConfig& c, const std::string& k, const std::string& v) {
              c.explain.angles = parse_list<double>(k, v, parse_real);
            }},
      THINSEC_INT("explain.limit", explain.limit, "maximum number of images; 0 = all"),
  };
  return table;
}

#undef THINSEC_INT
#undef THINSEC_REAL
#undef THINSEC_BOOL
#undef THINSEC_STR
#undef THINSEC_STRLIST

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

void one_of(const std::string& key, const std::string& v, std::initializer_list<const char*> options) {
  for (const char* o : options)
    if (v == o) return;
  std::string list;
  for (const char* o : options) list += std::string(list.empty() ? "" : ", ") + o;
  throw ConfigError(key + " must be one of " + list + ", got '" + v + "'");
}

bool is_index(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char ch) { return ch >= '0' && ch <= '9'; });
}

}  // namespace

RunConfig::RunConfig() {
  model.spec = ModelSpec::resnet18(2);
  train.scheduler.kind = SchedulerKind::plateau;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back({f.key, f.help});
    return k;
  }();
  return keys;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, key, trim(value));
}

std::string get_setting(const RunConfig& config, const std::string& key) { return field(key).get(config); }

void apply_config_text(RunConfig& config, const std::string& text, const std::string& origin) {
  std::stringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": expected key=value, got '" + line + "'");
    }
    try {
      apply_setting(config, trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  apply_config_text(c, text);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  RunConfig c;
  apply_config_text(c, buf.str(), path);
  return c;
}

std::string resolved_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

std::string RunConfig::run_dir() const { return outdir + "/" + name; }

SynthSpec RunConfig::synth_spec() const {
  SynthSpec s = preset_spec(synth.classes, synth.sections, synth.seed);
  s.image_size = synth.image_size;
  s.polarizations.clear();
  for (const auto& p : synth.polarizations) {
    one_of("synth.polarizations", p, {"ppl", "xpl"});
    s.polarizations.push_back(p == "ppl" ? Polarization::ppl : Polarization::xpl);
  }
  s.magnifications.clear();
  for (const auto& m : synth.magnifications) {
    one_of("synth.magnifications", m, {"2.5x", "10x"});
    s.magnifications.push_back(m == "2.5x" ? Magnification::x2_5 : Magnification::x10);
  }
  return s;
}

void RunConfig::validate() const {
  if (name.empty() || name.find('/') != std::string::npos) throw ConfigError("run.name must be a plain directory name");
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (seeds.empty()) throw ConfigError("seeds must list at least one seed");
  one_of("data.source", data.source, {"synthetic", "dir"});
  if (data.source == "dir" && data.dir.empty()) throw ConfigError("data.dir is required when data.source=dir");
  if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0)) {
    throw ConfigError("data.train_fraction must lie strictly between 0 and 1");
  }
  one_of("data.norm", data.norm, {"train", "imagenet"});
  if (data.source == "synthetic") synth_spec().validate();
  one_of("model.init", model.init, {"scratch", "checkpoint", "import"});
  if (model.init != "scratch" && model.init_path.empty()) {
    throw ConfigError("model.init_path is required when model.init=" + model.init);
  }
  ModelSpec probe = model.spec;
  probe.num_classes = 2;
  probe.validate();
  if (train.epochs > 0 || xval.epochs > 0) train.validate();
  if (xval.folds < 2) throw ConfigError("xval.folds must be >= 2");
  if (xval.lrs.empty() || xval.weight_decays.empty()) throw ConfigError("xval grid must not be empty");
  one_of("eval.split", eval.split, {"test", "train", "all"});
  one_of("explain.split", explain.split, {"test", "train", "all"});
  (void)parse_method(explain.method);
  if (explain.target != "predicted" && explain.target != "true" && !is_index(explain.target)) {
    throw ConfigError("explain.target must be predicted, true or a class index, got '" + explain.target + "'");
  }
  if (explain.modes.empty()) throw ConfigError("explain.modes must not be empty");
  for (const auto& m : explain.modes) one_of("explain.modes", m, {"overlay", "masked", "raw"});
  if (explain.alpha < 0.0 || explain.alpha > 1.0) throw ConfigError("explain.alpha must lie in [0, 1]");
  if (explain.layer != "last" && explain.layer != "all" && !is_index(explain.layer)) {
    throw ConfigError("explain.layer must be last, all or an index");
  }
  if (explain.head != "mean" && explain.head != "all" && !is_index(explain.head)) {
    throw ConfigError("explain.head must be mean, all or an index");
  }
  if (explain.rotation && std::find(explain.angles.begin(), explain.angles.end(), 0.0) == explain.angles.end()) {
    throw ConfigError("explain.angles must include 0");
  }
  if (explain.limit < 0) throw ConfigError("explain.limit must be >= 0");
}

}  // namespace thinsec
