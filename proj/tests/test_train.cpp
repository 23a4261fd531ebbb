#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <sstream>

#include "thinsec/synth.hpp"
#include "thinsec/train.hpp"

using namespace thinsec;

namespace {

ModelSpec small_resnet(int classes) {
  ModelSpec s = ModelSpec::resnet18(classes);
  s.resnet.channels = {4, 8, 8, 8};
  return s;
}

Corpus tiny_corpus(int sections = 4) {
  SynthSpec spec = preset_spec({"calcite", "basalt"}, sections, 21);
  spec.polarizations = {Polarization::ppl};
  Corpus c = stratified_split(generate_synthetic(spec), 0.75, 2);
  c.norm = compute_norm_stats(c);
  return c;
}

TrainConfig quick_config(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 4;
  cfg.adamw.lr = 3e-3;
  cfg.adamw.weight_decay = 1e-4;
  cfg.scheduler.kind = SchedulerKind::none;
  cfg.augment = AugmentPolicy::none();
  return cfg;
}

bool same_params(const Model& a, const Model& b) {
  if (a.params.size() != b.params.size()) return false;
  for (std::size_t i = 0; i < a.params.size(); ++i) {
    const auto x = a.params.at(i).data(), y = b.params.at(i).data();
    if (x.size() != y.size() || std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

MetricsReport with_accuracy(int correct_of_1000) {
  std::vector<int> truth(1000, 0), pred(1000, 0);
  for (int i = correct_of_1000; i < 1000; ++i) pred[i] = 1;
  return compute_metrics(truth, pred, 2);
}

}  // namespace

TEST_CASE("adamw update matches the written-out recurrence") {
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  std::vector<float> theta{1.0f, -2.0f, 0.0f};
  std::vector<double> m(3), v(3);
  const std::vector<std::vector<float>> grads{{0.5f, 0.25f, -1.0f}, {-0.5f, 0.0f, 2.0f}, {0.1f, 0.3f, 0.0f}};

  std::vector<double> th{1.0, -2.0, 0.0}, mo(3), vo(3);
  for (int t = 1; t <= 3; ++t) {
    const auto& g = grads[t - 1];
    adamw_update(theta, g, m, v, t, cfg);
    for (int i = 0; i < 3; ++i) {
      th[i] -= cfg.lr * cfg.weight_decay * th[i];
      mo[i] = 0.9 * mo[i] + 0.1 * g[i];
      vo[i] = 0.999 * vo[i] + 0.001 * double(g[i]) * g[i];
      const double mh = mo[i] / (1 - std::pow(0.9, t)), vh = vo[i] / (1 - std::pow(0.999, t));
      th[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      th[i] = static_cast<float>(th[i]);
    }
    for (int i = 0; i < 3; ++i) CHECK(theta[i] == doctest::Approx(th[i]).epsilon(1e-6));
  }
  // first step by hand: decay 1 -> 0.999, then the bias-corrected step is lr * sign(g)
  std::vector<float> one{1.0f};
  std::vector<double> m1(1), v1(1);
  adamw_update(one, std::vector<float>{0.5f}, m1, v1, 1, cfg);
  CHECK(one[0] == doctest::Approx(0.899).epsilon(1e-6));
}

TEST_CASE("adamw hand-evaluated steps") {
  SUBCASE("zero gradient, zero decay") {
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    std::vector<float> theta{0.25f, -3.0f};
    std::vector<double> m(2), v(2);
    for (int t = 1; t <= 5; ++t) adamw_update(theta, std::vector<float>{0.0f, 0.0f}, m, v, t, cfg);
    CHECK(theta == std::vector<float>{0.25f, -3.0f});
  }
  SUBCASE("first step from zero") {
    AdamWConfig cfg;
    cfg.lr = 0.1;
    cfg.weight_decay = 0.0;
    std::vector<float> theta{0.0f};
    std::vector<double> m(1), v(1);
    adamw_update(theta, std::vector<float>{1.0f}, m, v, 1, cfg);
    CHECK(theta[0] == static_cast<float>(-0.1 / (1.0 + 1e-8)));
  }
  SUBCASE("pure decay is geometric") {
    AdamWConfig cfg;
    cfg.lr = 0.05;
    cfg.weight_decay = 0.2;
    std::vector<float> theta{2.0f};
    std::vector<double> m(1), v(1);
    for (int t = 1; t <= 10; ++t) {
      adamw_update(theta, std::vector<float>{0.0f}, m, v, t, cfg);
      CHECK(theta[0] == doctest::Approx(2.0 * std::pow(1.0 - 0.05 * 0.2, t)).epsilon(1e-6));
    }
  }
}

TEST_CASE("non-finite gradient names the parameter") {
  // head_only with a NaN fc.bias: the logits go NaN, so does the gradient of
  // fc.weight, the first trainable tensor
  const Corpus c = tiny_corpus();
  Model model = set_trainable(build_model(small_resnet(2), 4), TrainablePolicy::head_only);
  model.norm = c.norm;
  const Tensor& b = model.params.get("fc.bias");
  model.params.set("fc.bias", Tensor::full(b.shape(), std::nanf("")));
  const Tensor batch = to_batch(c, {0, 1}, c.norm);
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    const auto fr = forward(model, batch, ForwardOptions{NormMode::train, {}, true});
    const std::vector<int> labels{c.samples[0].label, c.samples[1].label};
    loss = cross_entropy(fr.logits, labels);
  }
  const GradientMap grads = tape.backward(loss);
  const Model before = model;
  AdamW opt(model, AdamWConfig{});
  try {
    opt.step(model, grads);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("'fc.weight'") != std::string::npos);
  }
  CHECK(opt.steps() == 0);
  CHECK(same_params(model, before));
}

TEST_CASE("optimizer step leaves frozen parameters alone") {
  const Corpus c = tiny_corpus();
  Model model = set_trainable(build_model(small_resnet(2), 4), TrainablePolicy::head_only);
  model.norm = c.norm;
  const Model before = model;
  AdamW opt(model, AdamWConfig{});
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    const auto fr = forward(model, to_batch(c, {0, 1, 2}, c.norm), ForwardOptions{NormMode::train, {}, true});
    std::vector<int> labels;
    for (std::size_t i : {0, 1, 2}) labels.push_back(c.samples[i].label);
    loss = cross_entropy(fr.logits, labels);
  }
  opt.step(model, tape.backward(loss));
  CHECK(opt.steps() == 1);
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& name = model.params.names()[i];
    const bool moved = std::memcmp(model.params.at(i).data().data(), before.params.at(i).data().data(),
                                   model.params.at(i).numel() * sizeof(float)) != 0;
    INFO(name);
    CHECK(moved == model.is_head(name));
  }
}

TEST_CASE("plateau scheduler") {
  SchedulerConfig cfg{SchedulerKind::plateau};
  cfg.factor = 0.1;
  cfg.patience = 2;
  cfg.min_delta = 1e-4;
  LrScheduler s(cfg, 1.0, 20);
  CHECK(s.lr() == 1.0);
  // first value always improves on +inf
  CHECK(s.end_epoch(0, 1.0) == 1.0);
  CHECK(s.end_epoch(1, 0.99995) == 1.0);  // within min_delta: a bad epoch
  CHECK(s.end_epoch(2, 1.0) == 1.0);
  CHECK(s.end_epoch(3, 1.0) == doctest::Approx(0.1));  // third bad epoch exceeds patience 2
  CHECK(s.end_epoch(4, 1.0) == doctest::Approx(0.1));
  CHECK(s.end_epoch(5, 0.5) == doctest::Approx(0.1));  // improvement resets the counter
  CHECK(s.end_epoch(6, 0.5) == doctest::Approx(0.1));
  CHECK(s.end_epoch(7, 0.5) == doctest::Approx(0.1));
  CHECK(s.end_epoch(8, 0.5) == doctest::Approx(0.01));
}

TEST_CASE("cosine and constant schedules") {
  CHECK(LrScheduler::cosine(1.0, 0.0, 0, 10) == doctest::Approx(1.0));
  CHECK(LrScheduler::cosine(1.0, 0.0, 5, 10) == doctest::Approx(0.5));
  CHECK(LrScheduler::cosine(1.0, 0.1, 10, 10) == doctest::Approx(0.1));
  CHECK(LrScheduler::cosine(2.0, 0.0, 2.5, 10) == doctest::Approx(1.0 + std::cos(std::acos(-1.0) / 4)));

  SchedulerConfig cfg{SchedulerKind::cosine};
  cfg.final_fraction = 0.0;
  LrScheduler s(cfg, 1.0, 4);
  CHECK(s.lr() == 1.0);
  CHECK(s.end_epoch(0, 0.0) == doctest::Approx((1 + std::cos(std::acos(-1.0) / 4)) / 2));
  CHECK(s.end_epoch(1, 0.0) == doctest::Approx(0.5));

  LrScheduler none(SchedulerConfig{SchedulerKind::none}, 0.3, 4);
  for (int e = 0; e < 4; ++e) CHECK(none.end_epoch(e, 1.0 / (e + 1)) == 0.3);
  CHECK(parse_scheduler("plateau") == SchedulerKind::plateau);
  CHECK_THROWS_AS(parse_scheduler("step"), ConfigError);
}

TEST_CASE("metrics agree with a counting oracle") {
  std::mt19937 gen(8);
  std::uniform_int_distribution<int> cls(0, 4);
  std::vector<int> truth(500), pred(500);
  for (int i = 0; i < 500; ++i) {
    truth[i] = cls(gen);
    pred[i] = gen() % 3 == 0 ? cls(gen) : truth[i];
  }
  const MetricsReport r = compute_metrics(truth, pred, 5);
  CHECK(r.total == 500);
  int correct = 0;
  for (int i = 0; i < 500; ++i) correct += truth[i] == pred[i];
  CHECK(r.accuracy == doctest::Approx(correct / 500.0));
  double mp = 0, mr = 0, mf = 0;
  for (int k = 0; k < 5; ++k) {
    int tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < 500; ++i) {
      tp += truth[i] == k && pred[i] == k;
      fp += truth[i] != k && pred[i] == k;
      fn += truth[i] == k && pred[i] != k;
    }
    for (int j = 0; j < 5; ++j) {
      int n = 0;
      for (int i = 0; i < 500; ++i) n += truth[i] == k && pred[i] == j;
      CHECK(r.confusion[k][j] == n);
    }
    const double p = double(tp) / (tp + fp), rc = double(tp) / (tp + fn);
    CHECK(r.precision[k] == doctest::Approx(p));
    CHECK(r.recall[k] == doctest::Approx(rc));
    CHECK(r.f1[k] == doctest::Approx(2 * p * rc / (p + rc)));
    mp += p / 5;
    mr += rc / 5;
    mf += 2 * p * rc / (p + rc) / 5;
  }
  CHECK(r.macro_precision == doctest::Approx(mp));
  CHECK(r.macro_recall == doctest::Approx(mr));
  CHECK(r.macro_f1 == doctest::Approx(mf));
}

TEST_CASE("metrics edge cases") {
  // class 2 never predicted and absent from the truth; class 1 never predicted
  const std::vector<int> truth{0, 0, 1, 1}, pred{0, 0, 0, 0};
  const MetricsReport r = compute_metrics(truth, pred, 3);
  CHECK(r.accuracy == doctest::Approx(0.5));
  CHECK(r.precision[0] == doctest::Approx(0.5));
  CHECK(r.recall[0] == doctest::Approx(1.0));
  CHECK(r.precision[1] == 0.0);
  CHECK(r.recall[1] == 0.0);
  CHECK(r.f1[1] == 0.0);
  CHECK(r.recall[2] == 0.0);
  CHECK(r.macro_recall == doctest::Approx(1.0 / 3));
  CHECK(r.macro_f1 == doctest::Approx((2 * 0.5 / 1.5) / 3));
  CHECK_THROWS(compute_metrics(std::vector<int>{0}, std::vector<int>{3}, 3));
  CHECK_THROWS(compute_metrics(std::vector<int>{0, 1}, std::vector<int>{0}, 2));

  const std::vector<float> tie{0.5f, 2.0f, 2.0f};
  CHECK(argmax(tie) == 1);
}

TEST_CASE("seed aggregation and formatting") {
  const SeedAggregate agg = aggregate_seeds({with_accuracy(920), with_accuracy(925), with_accuracy(918)});
  CHECK(agg.runs == 3);
  CHECK_FALSE(agg.single_run);
  REQUIRE(agg.rows.size() == 4);
  CHECK(agg.rows[0].metric == "accuracy");
  CHECK(agg.rows[0].value.mean == doctest::Approx(92.1));
  CHECK(agg.rows[0].value.std == doctest::Approx(0.36056).epsilon(1e-4));
  CHECK(format_mean_std(agg.rows[0].value) == "92.10 ± 0.36");

  const SeedAggregate one = aggregate_seeds({with_accuracy(900)});
  CHECK(one.single_run);
  CHECK(one.rows[0].value.std == 0.0);
  std::ostringstream out;
  write_aggregate_csv(out, one);
  CHECK(out.str().find("accuracy,90,0,1,\"90.00 ± 0.00 (single run)\"") != std::string::npos);
  CHECK_THROWS_AS(aggregate_seeds({}), ConfigError);

  for (double v : {0.1, 1.0 / 3, 92.1, 1e-300, 3e-4})
    CHECK(std::strtod(format_number(v).c_str(), nullptr) == v);
  CHECK(format_number(0.25) == "0.25");
}

TEST_CASE("metric and confusion csv layout") {
  const MetricsReport r = compute_metrics(std::vector<int>{0, 1, 1}, std::vector<int>{0, 1, 0}, 2);
  std::ostringstream m, c;
  write_metrics_csv(m, r, {"a", "b"}, 7);
  write_confusion_csv(c, r, {"a", "b"});
  const std::string ms = m.str();
  CHECK(ms.rfind("metric,class,value,run_seed\n", 0) == 0);
  CHECK(ms.find("accuracy,all,0.666666666666666") != std::string::npos);
  CHECK(ms.find("recall,b,0.5,7\n") != std::string::npos);
  CHECK(ms.find("precision,a,0.5,7\n") != std::string::npos);
  CHECK(c.str() == "true\\predicted,a,b\na,1,0\nb,1,1\n");
}

TEST_CASE("training reduces the loss and is reproducible") {
  const Corpus c = tiny_corpus();
  const TrainConfig cfg = quick_config(4);
  std::vector<EpochRecord> seen;
  const TrainResult a = train(build_model(small_resnet(2), 3), c, cfg, [&](const EpochRecord& r) { seen.push_back(r); });
  REQUIRE(a.history.size() == 4);
  CHECK(seen.size() == 4);
  CHECK(a.history.back().loss < a.history.front().loss);
  for (const auto& r : a.history) {
    CHECK(r.lr == doctest::Approx(3e-3));
    CHECK(std::isfinite(r.test_acc));
  }
  CHECK(a.model.class_names == c.class_names);
  CHECK(a.model.norm == c.norm);

  const TrainResult b = train(build_model(small_resnet(2), 3), c, cfg);
  CHECK(same_params(a.model, b.model));
  CHECK(a.history.back().loss == b.history.back().loss);

  TrainConfig other = cfg;
  other.seed = 2;
  CHECK_FALSE(same_params(a.model, train(build_model(small_resnet(2), 3), c, other).model));
}

TEST_CASE("zero epochs returns the initial model and an empty history") {
  const Corpus c = tiny_corpus();
  const Model init = build_model(small_resnet(2), 5);
  const TrainResult r = train(init, c, quick_config(0));
  CHECK(r.history.empty());
  CHECK(same_params(r.model, init));
  std::ostringstream out;
  write_history_csv(out, r.history);
  CHECK(out.str() == "epoch,train_acc,test_acc,lr,loss\n");
}

TEST_CASE("training rejects bad configs and non-finite losses") {
  const Corpus c = tiny_corpus();
  TrainConfig bad = quick_config(1);
  bad.adamw.lr = 0.0;
  CHECK_THROWS_AS(train(build_model(small_resnet(2), 1), c, bad), ConfigError);
  bad = quick_config(1);
  bad.plateau_metric = "test_acc";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(train(build_model(small_resnet(3), 1), c, quick_config(1)), ConfigError);

  Model poisoned = build_model(small_resnet(2), 1);
  const Tensor& w = poisoned.params.get("fc.weight");
  poisoned.params.set("fc.weight", Tensor::full(w.shape(), std::nanf("")));
  try {
    (void)train(poisoned, c, quick_config(1));
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
  }
}

TEST_CASE("history csv") {
  std::vector<EpochRecord> h(2);
  h[0] = {1, 0.5, 0.25, 3e-4, 0.75};
  h[1] = {2, 1.0, std::nan(""), 3e-5, 0.125};
  std::ostringstream out;
  write_history_csv(out, h);
  CHECK(out.str() == "epoch,train_acc,test_acc,lr,loss\n1,0.5,0.25,0.0003,0.75\n2,1,,3e-05,0.125\n");
}

TEST_CASE("cross-validation trains every fold of every grid point") {
  const Corpus c = tiny_corpus(6);
  const std::vector<GridPoint> grid{{1e-3, 1e-4}, {1e-3, 1e-5}, {3e-3, 1e-4}};
  TrainConfig base = quick_config(1);
  int built = 0;
  std::vector<std::string> lines;
  const CrossValidation cv = cross_validate(
      [&] {
        ++built;
        return build_model(small_resnet(2), 1);
      },
      c, 2, grid, base, [&](const std::string& l) { lines.push_back(l); });
  CHECK(cv.rows.size() == 3);
  CHECK(cv.trainings == 6);
  CHECK(built == 6);
  CHECK(lines.size() == 6);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(cv.rows[i].point.lr == grid[i].lr);
    REQUIRE(cv.rows[i].fold_accuracy.size() == 2);
    CHECK(cv.rows[i].mean_accuracy ==
          doctest::Approx((cv.rows[i].fold_accuracy[0] + cv.rows[i].fold_accuracy[1]) / 2));
  }
  // best: highest mean, ties to the lower lr then the lower weight decay
  std::size_t best = 0;
  for (std::size_t i = 1; i < 3; ++i) {
    const auto& a = cv.rows[i];
    const auto& b = cv.rows[best];
    if (a.mean_accuracy > b.mean_accuracy ||
        (a.mean_accuracy == b.mean_accuracy &&
         std::make_pair(a.point.lr, a.point.weight_decay) < std::make_pair(b.point.lr, b.point.weight_decay)))
      best = i;
  }
  CHECK(cv.best == best);
  CHECK_THROWS_AS(cross_validate([] { return Model{}; }, c, 2, {}, base), ConfigError);
}

TEST_CASE("cross-validation edge grids") {
  const Corpus c = tiny_corpus(6);
  const auto make = [] { return build_model(small_resnet(2), 1); };
  const TrainConfig base = quick_config(3);

  const CrossValidation one = cross_validate(make, c, 3, {{1e-3, 1e-4}}, base);
  CHECK(one.rows.size() == 1);
  CHECK(one.trainings == 3);
  CHECK(one.best == 0);

  // an untrained grid point listed first must not win on a learnable task
  const Corpus learnable = tiny_corpus(16);
  GridPoint untrained{3e-3, 1e-4};
  untrained.epochs = 0;
  const CrossValidation cv = cross_validate(make, learnable, 2, {untrained, {3e-3, 1e-4}}, quick_config(5));
  CHECK(cv.rows[1].mean_accuracy >= cv.rows[0].mean_accuracy);
  CHECK(cv.best == 1);
}

TEST_CASE("64-image two-class task: five epochs end below the starting loss") {
  const Corpus c = tiny_corpus(32);
  REQUIRE(c.samples.size() == 64);
  const TrainResult r = train(build_model(small_resnet(2), 7), c, quick_config(5));
  REQUIRE(r.history.size() == 5);
  CHECK(r.history.back().loss < r.history.front().loss);
}

TEST_CASE("misclassification report groups planted errors") {
  Corpus c;
  c.class_names = {"a", "b", "c"};
  const std::vector<std::pair<std::string, int>> items{{"s1", 0}, {"s1", 0}, {"s1", 0}, {"s2", 1},
                                                       {"s2", 1}, {"s3", 2}, {"s3", 2}, {"s4", 0}};
  for (const auto& [id, label] : items) {
    Sample s;
    s.sample_id = id;
    s.label = label;
    s.polarization = c.samples.size() % 2 ? Polarization::xpl : Polarization::ppl;
    c.samples.push_back(s);
  }
  Predictions p;
  const std::vector<int> pred{1, 1, 0, 1, 1, 0, 0, 2};
  for (std::size_t i = 0; i < items.size(); ++i) {
    p.indices.push_back(i);
    p.truth.push_back(items[i].second);
    p.predicted.push_back(pred[i]);
  }
  const MisclassificationReport rep = misclassification_report(c, p);
  REQUIRE(rep.groups.size() == 3);
  CHECK(rep.groups[0].truth == 0);
  CHECK(rep.groups[0].predicted == 1);
  CHECK(rep.groups[0].samples.size() == 2);
  CHECK(rep.groups[1].truth == 0);
  CHECK(rep.groups[1].predicted == 2);
  CHECK(rep.groups[2].truth == 2);
  CHECK(rep.groups[2].samples.size() == 2);
  // s3 has 2 of 2 images wrong, s1 2 of 3: s3 first
  REQUIRE(rep.consistency.size() == 3);
  CHECK(rep.consistency[0].sample_id == "s3");
  CHECK(rep.consistency[0].images == 2);
  CHECK(rep.consistency[1].sample_id == "s1");
  CHECK(rep.consistency[1].errors == 2);
  CHECK(rep.consistency[1].images == 3);
  CHECK(rep.consistency[2].sample_id == "s4");

  std::ostringstream mis, con;
  write_misclassification_csv(mis, rep, c.class_names);
  write_consistency_csv(con, rep, c.class_names);
  CHECK(mis.str().rfind("true,predicted,sample_id,stem\na,b,s1,s1__ppl__2.5x\na,b,s1,s1__xpl__2.5x\n", 0) == 0);
  CHECK(con.str().rfind("sample_id,true,predicted,errors,images\ns3,c,a,2,2\ns1,a,b,2,3\n", 0) == 0);

  Predictions right = p;
  right.predicted = right.truth;
  CHECK(misclassification_report(c, right).empty());
}
