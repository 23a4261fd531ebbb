#include "thinsec/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "thinsec/checkpoint.hpp"
#include "thinsec/explain.hpp"
#include "thinsec/kernels.hpp"
#include "thinsec/metrics.hpp"
#include "thinsec/synth.hpp"
#include "thinsec/train.hpp"

namespace fs = std::filesystem;

namespace thinsec {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  return out;
}

std::string join_path(const std::string& dir, const std::string& file) { return (fs::path(dir) / file).string(); }

std::vector<std::size_t> split_indices(const Corpus& corpus, const std::string& split) {
  if (split == "test") return corpus.indices(Split::test);
  if (split == "train") return corpus.indices(Split::train);
  std::vector<std::size_t> all(corpus.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return all;
}

void check_classes(const Model& model, const Corpus& corpus) {
  if (model.class_names != corpus.class_names) {
    std::string a, b;
    for (const auto& n : model.class_names) a += (a.empty() ? "" : ",") + n;
    for (const auto& n : corpus.class_names) b += (b.empty() ? "" : ",") + n;
    throw DataError("checkpoint classes [" + a + "] differ from corpus classes [" + b + "]");
  }
}

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

}  // namespace

RunPaths prepare_run(const RunConfig& config) {
  config.validate();
  RunPaths p;
  p.root = config.run_dir();
  p.checkpoints = join_path(p.root, "checkpoints");
  p.metrics = join_path(p.root, "metrics");
  p.explain = join_path(p.root, "explain");
  for (const auto& d : {p.checkpoints, p.metrics, p.explain}) fs::create_directories(d);
  open_out(join_path(p.root, "config.resolved")) << resolved_config(config);
  return p;
}

void apply_threading(const RunConfig& config) {
  if (config.deterministic || config.threads == 1) kernels::set_threads(1);
  else if (config.threads > 1) kernels::set_threads(config.threads);
}

Corpus load_corpus(const RunConfig& config, std::ostream& log) {
  Corpus corpus;
  if (config.data.source == "synthetic") {
    corpus = generate_synthetic(config.synth_spec());
  } else {
    ScanResult scan = scan_corpus(config.data.dir);
    for (const auto& r : scan.rejects) log << "rejected " << r << '\n';
    corpus = std::move(scan.corpus);
  }
  corpus = stratified_split(std::move(corpus), config.data.train_fraction, config.data.split_seed,
                            config.data.group_by_sample);
  if (config.data.norm == "imagenet") {
    corpus.norm.mean = {0.485f, 0.456f, 0.406f};
    corpus.norm.std = {0.229f, 0.224f, 0.225f};
  } else {
    corpus.norm = compute_norm_stats(corpus);
  }
  log << "corpus: " << corpus.samples.size() << " images, " << corpus.class_names.size() << " classes, "
      << corpus.count(Split::train) << " train / " << corpus.count(Split::test) << " test\n";
  return corpus;
}

Model initial_model(const RunConfig& config, std::int64_t num_classes, std::uint64_t seed, std::ostream& log) {
  Model model;
  if (config.model.init == "checkpoint") {
    model = load_checkpoint(config.model.init_path);
    log << "initialized from checkpoint " << config.model.init_path << " (its architecture overrides model.*)\n";
    if (model.spec.num_classes != num_classes) model = replace_head(std::move(model), num_classes, seed);
  } else {
    ModelSpec spec = config.model.spec;
    spec.num_classes = num_classes;
    model = build_model(spec, seed);
    if (config.model.init == "import") {
      ImportResult r = import_named_tensors(config.model.init_path, model, identity_name_map(model, {"fc.", "head."}));
      log << "imported " << r.imported.size() << " tensors from " << config.model.init_path << ", "
          << r.unmatched.size() << " left at initialization\n";
      model = std::move(r.model);
    }
  }
  return set_trainable(std::move(model), config.model.policy);
}

SynthOutputs cmd_synth(const RunConfig& config, std::ostream& log) {
  const RunPaths paths = prepare_run(config);
  SynthOutputs out;
  out.corpus_dir = config.synth.out.empty() ? join_path(paths.root, "corpus") : config.synth.out;
  const Corpus corpus = generate_synthetic(config.synth_spec());
  write_corpus(corpus, out.corpus_dir);
  out.manifest = join_path(out.corpus_dir, "manifest.csv");
  auto m = open_out(out.manifest);
  m << "path,class,sample_id,polarization,magnification,mask\n";
  for (const auto& s : corpus.samples) {
    const std::string cls = corpus.class_names[static_cast<std::size_t>(s.label)];
    m << cls << '/' << s.stem() << ".png," << cls << ',' << s.sample_id << ',' << polarization_tag(s.polarization)
      << ',' << magnification_tag(s.magnification) << ",_masks/" << s.stem() << ".png\n";
  }
  out.images = corpus.samples.size();
  log << "wrote " << out.images << " images and masks to " << out.corpus_dir << '\n';
  return out;
}

TrainOutputs cmd_train(const RunConfig& config, std::ostream& log) {
  const RunPaths paths = prepare_run(config);
  apply_threading(config);
  const Corpus corpus = load_corpus(config, log);
  const auto test_idx = corpus.indices(Split::test);
  TrainOutputs out;
  std::vector<MetricsReport> reports;
  for (const std::uint64_t seed : config.seeds) {
    TrainConfig tc = config.train;
    tc.seed = seed;
    const Model init = initial_model(config, static_cast<std::int64_t>(corpus.class_names.size()), seed, log);
    const TrainResult r = train(init, corpus, corpus.indices(Split::train), test_idx, tc, [&](const EpochRecord& e) {
      log << seed_tag(seed) << " epoch " << e.epoch << " loss " << format_number(e.loss) << " train_acc "
          << format_number(e.train_acc);
      if (!std::isnan(e.test_acc)) log << " test_acc " << format_number(e.test_acc);
      log << " lr " << format_number(e.lr) << '\n';
    });
    const std::string tag = seed_tag(seed);
    out.checkpoints.push_back(join_path(paths.checkpoints, tag + ".flck"));
    save_checkpoint(r.model, out.checkpoints.back());
    {
      auto o = open_out(join_path(paths.metrics, tag + "_history.csv"));
      write_history_csv(o, r.history);
    }
    if (!test_idx.empty()) {
      const MetricsReport rep = evaluate(r.model, corpus, test_idx, tc.eval_batch_size);
      out.metrics.push_back(join_path(paths.metrics, tag + "_metrics.csv"));
      {
        auto o = open_out(out.metrics.back());
        write_metrics_csv(o, rep, corpus.class_names, seed);
      }
      {
        auto o = open_out(join_path(paths.metrics, tag + "_confusion.csv"));
        write_confusion_csv(o, rep, corpus.class_names);
      }
      log << tag << " test accuracy " << format_number(rep.accuracy) << '\n';
      reports.push_back(rep);
    }
  }
  if (!reports.empty()) {
    out.aggregate = join_path(paths.metrics, "aggregate.csv");
    const SeedAggregate agg = aggregate_seeds(reports);
    {
      auto o = open_out(out.aggregate);
      write_aggregate_csv(o, agg);
    }
    for (const auto& row : agg.rows) log << row.metric << ' ' << format_mean_std(row.value) << '\n';
  }
  return out;
}

XvalOutputs cmd_xval(const RunConfig& config, std::ostream& log) {
  const RunPaths paths = prepare_run(config);
  apply_threading(config);
  const Corpus corpus = load_corpus(config, log);
  const auto K = static_cast<std::int64_t>(corpus.class_names.size());
  const std::uint64_t seed = config.seeds.front();
  std::vector<GridPoint> grid;
  for (double lr : config.xval.lrs)
    for (double wd : config.xval.weight_decays) grid.push_back(GridPoint{lr, wd, "adamw", config.xval.epochs});
  TrainConfig base = config.train;
  base.seed = seed;
  std::ostringstream quiet;
  // the factory replays model.init for every training
  const CrossValidation cv = cross_validate([&] { return initial_model(config, K, seed, quiet); }, corpus,
                                            config.xval.folds, grid, base,
                                            [&](const std::string& line) { log << line << '\n'; });
  XvalOutputs out;
  out.trainings = cv.trainings;
  out.grid_csv = join_path(paths.metrics, "xval_grid.csv");
  auto g = open_out(out.grid_csv);
  g << "lr,weight_decay,epochs";
  for (int f = 1; f <= config.xval.folds; ++f) g << ",fold_" << f;
  g << ",mean\n";
  for (const auto& row : cv.rows) {
    g << format_number(row.point.lr) << ',' << format_number(row.point.weight_decay) << ','
      << (row.point.epochs < 0 ? base.epochs : row.point.epochs);
    for (double a : row.fold_accuracy) g << ',' << format_number(a);
    g << ',' << format_number(row.mean_accuracy) << '\n';
  }
  const GridResult& best = cv.rows.at(cv.best);
  out.best_config = join_path(paths.root, "best_config.txt");
  auto b = open_out(out.best_config);
  b << "train.lr=" << format_number(best.point.lr) << '\n'
    << "train.weight_decay=" << format_number(best.point.weight_decay) << '\n'
    << "train.epochs=" << (best.point.epochs < 0 ? base.epochs : best.point.epochs) << '\n';
  log << "best: lr " << format_number(best.point.lr) << " weight_decay " << format_number(best.point.weight_decay)
      << " mean accuracy " << format_number(best.mean_accuracy) << '\n';
  return out;
}

EvalOutputs cmd_eval(const RunConfig& config, std::ostream& log) {
  if (config.eval.checkpoint.empty()) throw ConfigError("eval.checkpoint is required");
  const RunPaths paths = prepare_run(config);
  apply_threading(config);
  const Model model = load_checkpoint(config.eval.checkpoint);
  Corpus corpus = load_corpus(config, log);
  check_classes(model, corpus);
  const auto idx = split_indices(corpus, config.eval.split);
  if (idx.empty()) throw ConfigError("the " + config.eval.split + " split is empty");
  const Predictions preds = predict(model, corpus, idx, config.train.eval_batch_size);
  const MetricsReport rep = compute_metrics(preds.truth, preds.predicted, static_cast<int>(corpus.class_names.size()));
  EvalOutputs out;
  out.accuracy = rep.accuracy;
  out.metrics = join_path(paths.metrics, "eval_metrics.csv");
  out.confusion = join_path(paths.metrics, "eval_confusion.csv");
  out.misclassified = join_path(paths.metrics, "misclassified.csv");
  out.consistency = join_path(paths.metrics, "section_consistency.csv");
  {
    auto o = open_out(out.metrics);
    write_metrics_csv(o, rep, corpus.class_names, config.seeds.front());
  }
  {
    auto o = open_out(out.confusion);
    write_confusion_csv(o, rep, corpus.class_names);
  }
  const MisclassificationReport mr = misclassification_report(corpus, preds);
  {
    auto o = open_out(out.misclassified);
    write_misclassification_csv(o, mr, corpus.class_names);
  }
  {
    auto o = open_out(out.consistency);
    write_consistency_csv(o, mr, corpus.class_names);
  }
  log << "accuracy " << format_number(rep.accuracy) << " on " << idx.size() << " images, " << mr.groups.size()
      << " error groups\n";
  return out;
}

namespace {

struct ExplainItem {
  std::string stem;
  Image image;                 // as read
  std::optional<Image> mask;   // 0/1
  std::optional<int> label;
};

std::vector<int> pick_indices(const std::string& choice, const char* last_word, int count) {
  if (choice == "all") {
    std::vector<int> v(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
  }
  if (choice == last_word) return {-1};
  const int i = std::stoi(choice);
  if (i >= count) throw ConfigError("index " + choice + " out of range (" + std::to_string(count) + " available)");
  return {i};
}

std::string map_name(const std::string& stem, SaliencyMethod m, int cls, const std::string& attention_tag,
                     const std::string& rot_tag) {
  return stem + "__" + method_name(m) + "__c" + std::to_string(cls) + attention_tag + rot_tag;
}

void write_sidecar(const std::string& path, const RunConfig& config, const SaliencyMap& map,
                   const std::string& target_rule, const std::string& extra = {}) {
  auto out = open_out(path);
  out << "method=" << method_name(map.method) << '\n'
      << "normalization=minmax\n"
      << "target_class=" << map.target_class << '\n'
      << "target_rule=" << target_rule << '\n'
      << "source=" << map.source << '\n'
      << "alpha=" << format_number(config.explain.alpha) << '\n'
      << "threshold=" << format_number(config.explain.threshold) << '\n'
      << "checkpoint=" << config.explain.checkpoint << '\n'
      << extra;
}

}  // namespace

ExplainOutputs cmd_explain(const RunConfig& config, std::ostream& log) {
  if (config.explain.checkpoint.empty()) throw ConfigError("explain.checkpoint is required");
  const RunPaths paths = prepare_run(config);
  apply_threading(config);
  const Model model = load_checkpoint(config.explain.checkpoint);
  const SaliencyMethod method = parse_method(config.explain.method);
  const bool is_vit = model.spec.kind == Arch::vit;
  if (method == SaliencyMethod::attention && !is_vit) {
    throw UnsupportedArchitectureError("method attention needs a vit checkpoint; use gradcam or guided_gradcam");
  }
  if (method != SaliencyMethod::attention && is_vit) {
    throw UnsupportedArchitectureError("method " + config.explain.method +
                                       " needs a resnet18 checkpoint; use attention for a vit");
  }

  std::vector<ExplainItem> items;
  if (!config.explain.images.empty()) {
    if (config.explain.target == "true") throw ConfigError("explain.target=true needs a labeled corpus");
    for (const auto& p : config.explain.images) items.push_back({fs::path(p).stem().string(), read_png_rgb(p), {}, {}});
  } else {
    const Corpus corpus = load_corpus(config, log);
    check_classes(model, corpus);
    for (auto i : split_indices(corpus, config.explain.split)) {
      const Sample& s = corpus.samples[i];
      items.push_back({s.stem(), s.image, s.mask, s.label});
    }
  }
  if (config.explain.limit > 0 && items.size() > static_cast<std::size_t>(config.explain.limit)) {
    items.resize(static_cast<std::size_t>(config.explain.limit));
  }
  if (items.empty()) throw ConfigError("nothing to explain: the " + config.explain.split + " split is empty");

  std::vector<RenderMode> modes;
  for (const auto& m : config.explain.modes)
    modes.push_back(m == "overlay" ? RenderMode::overlay : m == "masked" ? RenderMode::masked : RenderMode::raw);

  ExplainOutputs out;
  auto emit = [&](const Image& base, const SaliencyMap& map, const std::string& name) {
    for (RenderMode mode : modes) {
      out.images.push_back(join_path(paths.explain, name + "__" + render_mode_name(mode) + ".png"));
      write_png(out.images.back(), render(base, map.values, mode, config.explain.alpha, config.explain.threshold));
    }
  };

  std::ofstream pointing, rotation;
  bool any_mask = false;
  for (const auto& it : items) any_mask = any_mask || it.mask.has_value();
  if (any_mask && !config.explain.rotation) {
    out.pointing_csv = join_path(paths.explain, "pointing.csv");
    pointing = open_out(out.pointing_csv);
    pointing << "stem,method,hit\n";
  }
  if (config.explain.rotation) {
    out.rotation_csv = join_path(paths.explain, "rotation.csv");
    rotation = open_out(out.rotation_csv);
    rotation << "stem,method,stability,class_invariant\n";
  }

  std::size_t hits = 0, scored = 0;
  for (const auto& it : items) {
    const FloatImage rgb = to_float(it.image);
    if (config.explain.rotation) {
      const RotationStability rs = rotation_stability(model, rgb, config.explain.angles, method);
      const Image base = to_u8(center_square(rgb, kInputSize));
      for (const auto& a : rs.per_angle) {
        const std::string name =
            map_name(it.stem, method, a.map.target_class, "", "__rot" + format_number(a.angle));
        emit(base, a.map, name);
        write_sidecar(join_path(paths.explain, name + ".txt"), config, a.map, "predicted at angle 0",
                      "angle=" + format_number(a.angle) + "\npredicted=" + std::to_string(a.predicted) + "\n");
      }
      rotation << it.stem << ',' << method_name(method) << ',' << format_number(rs.stability) << ','
               << (rs.class_invariant ? "true" : "false") << '\n';
      log << it.stem << " rotation stability " << format_number(rs.stability)
          << (rs.class_invariant ? "" : " (class changes)") << '\n';
      continue;
    }

    const Tensor input = model_input(rgb, model.norm);
    int target;
    if (config.explain.target == "predicted") target = predict_class(model, input);
    else if (config.explain.target == "true") target = it.label.value();
    else target = std::stoi(config.explain.target);
    if (target >= model.spec.num_classes) throw ConfigError("explain.target exceeds the model's class count");
    const Image base = to_u8(resize_bilinear(rgb, kInputSize, kInputSize));

    std::vector<std::pair<SaliencyMap, std::string>> maps;  // map, attention tag
    if (method == SaliencyMethod::attention) {
      const AttentionStack stack = attention_maps(model, input);
      for (int l : pick_indices(config.explain.layer, "last", static_cast<int>(stack.layers.size()))) {
        const int layer = l < 0 ? static_cast<int>(stack.layers.size()) - 1 : l;
        for (int h : pick_indices(config.explain.head, "mean", stack.heads)) {
          SaliencyMap m = attention_saliency(stack, layer, h);
          m.target_class = target;
          maps.emplace_back(std::move(m),
                            "__L" + std::to_string(layer) + "H" + (h < 0 ? std::string("mean") : std::to_string(h)));
        }
      }
    } else {
      maps.emplace_back(explain(model, input, method, target), "");
    }
    for (const auto& [map, tag] : maps) {
      const std::string name = map_name(it.stem, method, target, tag, "");
      emit(base, map, name);
      write_sidecar(join_path(paths.explain, name + ".txt"), config, map, config.explain.target);
    }
    if (it.mask && pointing.is_open()) {
      const Image mask = resize_nearest(*it.mask, kInputSize, kInputSize);
      const bool hit = pointing_game(maps.front().first.values, mask);
      pointing << it.stem << ',' << method_name(method) << ',' << (hit ? 1 : 0) << '\n';
      hits += hit;
      ++scored;
    }
  }
  if (scored) {
    out.pointing_score = static_cast<double>(hits) / static_cast<double>(scored);
    log << "pointing game " << hits << "/" << scored << " = " << format_number(out.pointing_score) << '\n';
  }
  log << "wrote " << out.images.size() << " images to " << paths.explain << '\n';
  return out;
}

void run_command(const std::string& name, const RunConfig& config, std::ostream& log) {
  if (name == "synth") (void)cmd_synth(config, log);
  else if (name == "train") (void)cmd_train(config, log);
  else if (name == "xval") (void)cmd_xval(config, log);
  else if (name == "eval") (void)cmd_eval(config, log);
  else if (name == "explain") (void)cmd_explain(config, log);
  else throw ConfigError("unknown command '" + name + "'");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  if (dynamic_cast<const UnsupportedArchitectureError*>(&e)) return 5;
  return 1;
}

}  // namespace thinsec
