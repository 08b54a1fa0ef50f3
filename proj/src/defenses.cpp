#include "segrobust/defenses.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>

#include "segrobust/attacks.hpp"
#include "segrobust/error.hpp"
#include "segrobust/infer.hpp"
#include "segrobust/losses.hpp"
#include "segrobust/optim.hpp"

namespace segrobust {

void TrainLog::save_csv(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "epoch,loss,val_dice_whole,val_dice_core,val_dice_enh,seconds\n";
  os << std::setprecision(10);
  for (const EpochLog& e : epochs) {
    os << e.epoch << "," << e.loss << ",";
    if (e.val_dice_whole) os << *e.val_dice_whole;
    os << ",";
    if (e.val_dice_core) os << *e.val_dice_core;
    os << ",";
    if (e.val_dice_enh) os << *e.val_dice_enh;
    os << "," << e.seconds << "\n";
  }
  if (!os) throw IoError("write failure on " + path);
}

namespace {

constexpr uint64_t kTrainerSeedSalt = 0xA5C39D2E71B844F1ull;

struct TrainItem {
  Tensor x;       // [C,D,H,W]
  Tensor target;  // [N,D,H,W], one-hot or soft
};

// Runs optimizer step(s) for one subject and returns the reported loss.
using BatchFn =
    std::function<double(const Tensor& x, const Tensor& target, Rng& rng)>;

void check_options(const TrainOptions& opts) {
  if (opts.epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(opts.lr > 0)) throw ConfigError("learning rate must be positive");
  if (opts.val_interval < 1) throw ConfigError("val_interval must be >= 1");
}

TrainLog train_loop(SegModel& model, const std::vector<TrainItem>& items,
                    const TrainOptions& opts,
                    const std::vector<Subject>& val, const char* what,
                    const BatchFn& batch) {
  if (items.empty()) throw ConfigError(std::string(what) + ": empty training set");
  TrainLog log;
  Rng rng(opts.seed ^ kTrainerSeedSalt);
  std::vector<size_t> order(items.size());
  std::iota(order.begin(), order.end(), size_t{0});
  for (int epoch = 1; epoch <= opts.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    for (size_t i = order.size() - 1; i > 0; --i) {
      std::swap(order[i], order[rng.uniform_int(i + 1)]);
    }
    double loss_acc = 0.0;
    for (size_t idx : order) {
      Tensor x = items[idx].x;
      Tensor target = items[idx].target;
      if (opts.augment) {
        const GeoTransform g = sample_transform(rng);
        x = apply_transform(x, g);
        target = apply_transform(target, g);
      }
      const double loss = batch(x, target, rng);
      if (!std::isfinite(loss)) {
        throw DivergenceError(std::string(what) +
                              " diverged with non-finite loss at epoch " +
                              std::to_string(epoch));
      }
      loss_acc += loss;
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_acc / static_cast<double>(items.size());
    if (!val.empty() &&
        (epoch % opts.val_interval == 0 || epoch == opts.epochs)) {
      const RegionDiceTriple d = mean_region_dice(model, val);
      entry.val_dice_whole = d.whole;
      entry.val_dice_core = d.core;
      entry.val_dice_enh = d.enh;
    }
    entry.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    log.epochs.push_back(entry);
  }
  return log;
}

std::vector<TrainItem> hard_label_items(const Dataset& dataset,
                                        int num_classes) {
  std::vector<TrainItem> items;
  items.reserve(dataset.train.size());
  for (const Subject& s : dataset.train) {
    items.push_back({s.volume, one_hot(s.labels, num_classes)});
  }
  return items;
}

}  // namespace

std::pair<SegModel, TrainLog> train_baseline(const UNetConfig& config,
                                             const Dataset& dataset,
                                             const TrainOptions& opts) {
  check_options(opts);
  SegModel model = SegModel::build(config, opts.seed);
  Adam opt(model.parameters(), {.lr = opts.lr});
  const auto items = hard_label_items(dataset, config.num_classes);
  const BatchFn fn = [&](const Tensor& x, const Tensor& t, Rng& rng) {
    const uint64_t dseed = rng.derive();
    opt.zero_grad();
    Tensor loss = dice_loss(model.forward(x, /*training=*/true, dseed), t);
    const double value = loss.item();
    backward(loss);
    opt.step();
    return value;
  };
  TrainLog log =
      train_loop(model, items, opts, dataset.test, "baseline training", fn);
  return {std::move(model), std::move(log)};
}

TrainOptions distillation_schedule(double temperature, TrainOptions base) {
  if (temperature >= 500.0) {
    base.epochs *= 4;
    base.lr *= 5.0;
  }
  return base;
}

DistillationResult train_distilled(const UNetConfig& config,
                                   const Dataset& dataset, double temperature,
                                   const TrainOptions& opts) {
  check_options(opts);
  if (!(temperature > 0)) {
    throw ConfigError("distillation temperature must be positive");
  }
  UNetConfig hot = config;
  hot.temperature = temperature;

  DistillationResult result;
  {
    auto [teacher, log] = train_baseline(hot, dataset, opts);
    result.teacher = std::move(teacher);
    result.teacher_log = std::move(log);
  }

  // Teacher soft labels are computed once, at temperature T, and cached.
  std::vector<TrainItem> items;
  items.reserve(dataset.train.size());
  {
    NoGradGuard eval;
    for (const Subject& s : dataset.train) {
      items.push_back({s.volume, result.teacher.forward(s.volume, false)});
    }
  }

  TrainOptions student_opts = opts;
  student_opts.seed = opts.seed + 1;  // fresh initialization, same family
  SegModel student = SegModel::build(hot, student_opts.seed);
  Adam opt(student.parameters(), {.lr = student_opts.lr});
  const BatchFn fn = [&](const Tensor& x, const Tensor& t, Rng& rng) {
    const uint64_t dseed = rng.derive();
    opt.zero_grad();
    Tensor loss =
        distillation_dice_loss(student.forward(x, /*training=*/true, dseed), t);
    const double value = loss.item();
    backward(loss);
    opt.step();
    return value;
  };
  result.student_log = train_loop(student, items, student_opts, dataset.test,
                                  "distillation student training", fn);
  student.set_temperature(1.0);  // deployed head
  result.student = std::move(student);
  return result;
}

std::pair<SegModel, TrainLog> adversarial_train(const UNetConfig& config,
                                                const Dataset& dataset,
                                                double epsilon,
                                                double mix_alpha,
                                                const TrainOptions& opts) {
  check_options(opts);
  if (epsilon < 0) throw ConfigError("training epsilon must be >= 0");
  if (!(mix_alpha >= 0.0 && mix_alpha <= 1.0)) {
    throw ConfigError("mix_alpha must lie in [0,1]");
  }
  SegModel model = SegModel::build(config, opts.seed);
  Adam opt(model.parameters(), {.lr = opts.lr});
  const auto items = hard_label_items(dataset, config.num_classes);
  const bool plain = mix_alpha == 1.0 || epsilon == 0.0;
  const BatchFn fn = [&](const Tensor& x, const Tensor& t, Rng& rng) {
    const uint64_t dseed = rng.derive();
    if (plain) {
      // Both objective terms coincide; identical to the baseline batch.
      opt.zero_grad();
      Tensor loss = dice_loss(model.forward(x, /*training=*/true, dseed), t);
      const double value = loss.item();
      backward(loss);
      opt.step();
      return value;
    }
    // Adversarial example from the current parameters, then one update
    // on the mixed objective. Both forwards share the dropout seed so
    // the two terms see the same subnetwork.
    const AdversarialResult adv = fgsm(model, x, t, epsilon);
    opt.zero_grad();
    Tensor clean_term = dice_loss(model.forward(x, true, dseed), t);
    Tensor adv_term =
        dice_loss(model.forward(adv.adversarial_volume, true, dseed), t);
    Tensor mixed = add(mul_scalar(clean_term, mix_alpha),
                       mul_scalar(adv_term, 1.0 - mix_alpha));
    const double value = mixed.item();
    backward(mixed);
    opt.step();
    return value;
  };
  TrainLog log =
      train_loop(model, items, opts, dataset.test, "adversarial training", fn);
  return {std::move(model), std::move(log)};
}

std::pair<SegModel, TrainLog> augmentation_train(const UNetConfig& config,
                                                 const Dataset& dataset,
                                                 double radius,
                                                 const TrainOptions& opts) {
  check_options(opts);
  if (radius < 0) throw ConfigError("augmentation radius must be >= 0");
  SegModel model = SegModel::build(config, opts.seed);
  Adam opt(model.parameters(), {.lr = opts.lr});
  const auto items = hard_label_items(dataset, config.num_classes);
  const BatchFn fn = [&](const Tensor& x, const Tensor& t, Rng& rng) {
    const uint64_t seed_perturbed = rng.derive();
    const uint64_t seed_clean = rng.derive();
    Tensor perturbed = x.clone_detached();
    for (double& v : perturbed.mutable_data()) {
      v += rng.uniform(-radius, radius);
    }
    opt.zero_grad();
    Tensor first =
        dice_loss(model.forward(perturbed, true, seed_perturbed), t);
    const double v1 = first.item();
    backward(first);
    opt.step();
    opt.zero_grad();
    Tensor second = dice_loss(model.forward(x, true, seed_clean), t);
    const double v2 = second.item();
    backward(second);
    opt.step();
    return 0.5 * (v1 + v2);
  };
  TrainLog log =
      train_loop(model, items, opts, dataset.test, "augmentation training", fn);
  return {std::move(model), std::move(log)};
}

}  // namespace segrobust
