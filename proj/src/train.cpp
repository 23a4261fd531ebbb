#include "thinsec/train.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "thinsec/rng.hpp"

namespace thinsec {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (eval_batch_size < 1) throw ConfigError("eval batch size must be >= 1");
  if (!(adamw.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (adamw.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  if (plateau_metric != "train_loss" && plateau_metric != "train_error") {
    throw ConfigError("plateau metric must be train_loss or train_error");
  }
  augment.validate();
}

namespace {

Tensor augmented_batch(const Corpus& corpus, const std::vector<std::size_t>& idx, const TrainConfig& cfg,
                       const NormStats& norm, int epoch) {
  if (!cfg.augment.enabled) return to_batch(corpus, idx, norm);
  const std::size_t per = 3 * static_cast<std::size_t>(kInputSize) * kInputSize;
  std::vector<float> data(idx.size() * per);
  const auto n = static_cast<std::int64_t>(idx.size());
#pragma omp parallel for schedule(dynamic) if (n > 1)
  for (std::int64_t i = 0; i < n; ++i) {
    const std::size_t s = idx[static_cast<std::size_t>(i)];
    RngStream rng = augment_stream(cfg.seed, static_cast<std::uint64_t>(epoch), s);
    const Augmented a = augment(corpus.samples[s], cfg.augment, rng);
    write_standardized(a.image, norm, data.data() + i * per);
  }
  return Tensor::from({n, 3, kInputSize, kInputSize}, std::move(data));
}

}  // namespace

TrainResult train(Model model, const Corpus& corpus, const std::vector<std::size_t>& train_idx,
                  const std::vector<std::size_t>& test_idx, const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_idx.empty()) throw ConfigError("training split is empty");
  if (static_cast<std::int64_t>(corpus.class_names.size()) != model.spec.num_classes) {
    throw ConfigError("model has " + std::to_string(model.spec.num_classes) + " classes, corpus has " +
                      std::to_string(corpus.class_names.size()));
  }
  model.class_names = corpus.class_names;
  model.norm = corpus.norm;
  TrainResult result;
  AdamW opt(model, cfg.adamw);
  LrScheduler sched(cfg.scheduler, cfg.adamw.lr, cfg.epochs);
  const auto B = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order = train_idx;
    RngStream(cfg.seed, static_cast<std::uint64_t>(epoch), 0x73687566ull).shuffle(order);
    const double lr = sched.lr();
    opt.set_lr(lr);
    double loss_sum = 0.0;
    std::int64_t correct = 0;
    for (std::size_t start = 0, batch = 0; start < order.size(); start += B, ++batch) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(start + B, order.size())));
      const Tensor x = augmented_batch(corpus, idx, cfg, model.norm, epoch);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(corpus.samples[i].label);

      Tape tape;
      Tensor loss;
      ForwardResult fr;
      {
        TapeScope scope(tape);
        fr = forward(model, x, ForwardOptions{NormMode::train, {}, true});
        loss = cross_entropy(fr.logits, labels);
      }
      const float lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch + 1));
      }
      const GradientMap grads = tape.backward(loss);
      try {
        opt.step(model, grads);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " (epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch + 1) + ")");
      }
      commit_buffers(model, fr.updated_buffers);

      loss_sum += static_cast<double>(lv) * static_cast<double>(idx.size());
      const auto K = static_cast<std::size_t>(fr.logits.dim(1));
      for (std::size_t r = 0; r < idx.size(); ++r) {
        correct += argmax(fr.logits.data().subspan(r * K, K)) == labels[r];
      }
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = lr;
    rec.loss = loss_sum / static_cast<double>(order.size());
    rec.train_acc = static_cast<double>(correct) / static_cast<double>(order.size());
    if (cfg.monitor_test && !test_idx.empty()) {
      rec.test_acc = evaluate(model, corpus, test_idx, cfg.eval_batch_size).accuracy;
    }
    sched.end_epoch(epoch, cfg.plateau_metric == "train_loss" ? rec.loss : 1.0 - rec.train_acc);
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  result.model = std::move(model);
  return result;
}

TrainResult train(Model model, const Corpus& corpus, const TrainConfig& config, const EpochCallback& on_epoch) {
  return train(std::move(model), corpus, corpus.indices(Split::train), corpus.indices(Split::test), config, on_epoch);
}

Predictions predict(const Model& model, const Corpus& corpus, const std::vector<std::size_t>& indices,
                    int batch_size) {
  Predictions p;
  const auto B = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t start = 0; start < indices.size(); start += B) {
    const std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                       indices.begin() + static_cast<std::ptrdiff_t>(std::min(start + B, indices.size())));
    const Tensor logits = forward(model, to_batch(corpus, idx, model.norm)).logits;
    const auto K = static_cast<std::size_t>(logits.dim(1));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      p.indices.push_back(idx[r]);
      p.truth.push_back(corpus.samples[idx[r]].label);
      p.predicted.push_back(argmax(logits.data().subspan(r * K, K)));
    }
  }
  return p;
}

MetricsReport evaluate(const Model& model, const Corpus& corpus, const std::vector<std::size_t>& indices,
                       int batch_size) {
  if (indices.empty()) throw ConfigError("evaluation split is empty");
  const Predictions p = predict(model, corpus, indices, batch_size);
  return compute_metrics(p.truth, p.predicted, static_cast<int>(corpus.class_names.size()));
}

MetricsReport evaluate(const Model& model, const Corpus& corpus, Split split, int batch_size) {
  return evaluate(model, corpus, corpus.indices(split), batch_size);
}

CrossValidation cross_validate(const ModelFactory& factory, const Corpus& corpus, int k,
                               const std::vector<GridPoint>& grid, const TrainConfig& base,
                               const std::function<void(const std::string&)>& log) {
  if (grid.empty()) throw ConfigError("cross-validation grid is empty");
  const auto folds = kfold(corpus, k, base.seed);
  CrossValidation cv;
  for (const auto& point : grid) {
    if (point.optimizer != "adamw") throw ConfigError("unsupported optimizer '" + point.optimizer + "'");
    GridResult row;
    row.point = point;
    TrainConfig cfg = base;
    cfg.adamw.lr = point.lr;
    cfg.adamw.weight_decay = point.weight_decay;
    if (point.epochs >= 0) cfg.epochs = point.epochs;
    cfg.monitor_test = false;
    for (int f = 0; f < k; ++f) {
      std::vector<std::size_t> fit;
      for (int g = 0; g < k; ++g) {
        if (g != f) fit.insert(fit.end(), folds[g].begin(), folds[g].end());
      }
      std::sort(fit.begin(), fit.end());
      Corpus fold_corpus = corpus;
      // statistics from the fitting folds only
      for (auto& s : fold_corpus.samples) s.split = Split::test;
      for (auto i : fit) fold_corpus.samples[i].split = Split::train;
      fold_corpus.norm = compute_norm_stats(fold_corpus);
      TrainResult tr = train(factory(), fold_corpus, fit, {}, cfg);
      ++cv.trainings;
      const double acc = evaluate(tr.model, fold_corpus, folds[f], cfg.eval_batch_size).accuracy;
      row.fold_accuracy.push_back(acc);
      if (log) {
        log("lr=" + format_number(point.lr) + " wd=" + format_number(point.weight_decay) + " fold " +
            std::to_string(f + 1) + "/" + std::to_string(k) + " accuracy " + format_number(acc));
      }
    }
    row.mean_accuracy = mean_std(row.fold_accuracy).mean;
    cv.rows.push_back(std::move(row));
  }
  for (std::size_t i = 1; i < cv.rows.size(); ++i) {
    const auto& a = cv.rows[i];
    const auto& b = cv.rows[cv.best];
    const bool better = a.mean_accuracy > b.mean_accuracy ||
                        (a.mean_accuracy == b.mean_accuracy &&
                         (a.point.lr < b.point.lr ||
                          (a.point.lr == b.point.lr && a.point.weight_decay < b.point.weight_decay)));
    if (better) cv.best = i;
  }
  return cv;
}

MisclassificationReport misclassification_report(const Corpus& corpus, const Predictions& p) {
  MisclassificationReport rep;
  std::map<std::pair<int, int>, ErrorGroup> groups;
  std::map<std::string, int> images;
  std::map<std::tuple<std::string, int, int>, int> errors;
  for (std::size_t r = 0; r < p.indices.size(); ++r) {
    const Sample& s = corpus.samples[p.indices[r]];
    ++images[s.sample_id];
    if (p.truth[r] == p.predicted[r]) continue;
    auto& g = groups[{p.truth[r], p.predicted[r]}];
    g.truth = p.truth[r];
    g.predicted = p.predicted[r];
    g.samples.push_back({p.indices[r], s.sample_id, s.stem()});
    ++errors[{s.sample_id, p.truth[r], p.predicted[r]}];
  }
  for (auto& [key, g] : groups) rep.groups.push_back(std::move(g));
  for (const auto& [key, n] : errors) {
    const auto& [id, t, pr] = key;
    rep.consistency.push_back({id, t, pr, n, images[id]});
  }
  std::stable_sort(rep.consistency.begin(), rep.consistency.end(),
                   [](const SectionConsistency& a, const SectionConsistency& b) {
                     if (a.errors != b.errors) return a.errors > b.errors;
                     // same count: the larger share of the section's images first
                     return static_cast<long long>(a.errors) * b.images > static_cast<long long>(b.errors) * a.images;
                   });
  return rep;
}

MisclassificationReport misclassification_report(const Model& model, const Corpus& corpus,
                                                 const std::vector<std::size_t>& indices) {
  return misclassification_report(corpus, predict(model, corpus, indices));
}

void write_misclassification_csv(std::ostream& out, const MisclassificationReport& rep,
                                 const std::vector<std::string>& names) {
  out << "true,predicted,sample_id,stem\n";
  for (const auto& g : rep.groups) {
    for (const auto& s : g.samples) {
      out << names.at(g.truth) << ',' << names.at(g.predicted) << ',' << s.sample_id << ',' << s.stem << '\n';
    }
  }
}

void write_consistency_csv(std::ostream& out, const MisclassificationReport& rep,
                           const std::vector<std::string>& names) {
  out << "sample_id,true,predicted,errors,images\n";
  for (const auto& c : rep.consistency) {
    out << c.sample_id << ',' << names.at(c.truth) << ',' << names.at(c.predicted) << ',' << c.errors << ','
        << c.images << '\n';
  }
}

void write_history_csv(std::ostream& out, const std::vector<EpochRecord>& history) {
  out << "epoch,train_acc,test_acc,lr,loss\n";
  for (const auto& h : history) {
    out << h.epoch << ',' << format_number(h.train_acc) << ','
        << (std::isnan(h.test_acc) ? std::string() : format_number(h.test_acc)) << ',' << format_number(h.lr) << ','
        << format_number(h.loss) << '\n';
  }
}

}  // namespace thinsec
