#pragma once

// Epoch loop: fresh negatives each epoch, shuffled mini-batches, mean log
// loss, reverse pass and lazy Adam; evaluation after every epoch. Also the
// finite-difference gradient checker.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "camf/corpus.hpp"
#include "camf/errors.hpp"
#include "camf/evaluation.hpp"
#include "camf/models.hpp"
#include "camf/parameters.hpp"
#include "camf/random.hpp"
#include "camf/tape.hpp"

namespace camf {

struct TrainInstance {
  Index user = 0;
  Index item = 0;
  double label = 0.0;

  friend bool operator==(const TrainInstance&, const TrainInstance&) = default;
};

struct EpochStats {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  std::size_t instances = 0;
  double wall_seconds = 0.0;
};

inline double log_loss(double prediction, double label) {
  const double q = std::clamp(prediction, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return -(label * std::log(q) + (1.0 - label) * std::log(1.0 - q));
}

// One epoch of training instances: every train positive followed by `ratio`
// negatives drawn uniformly from items the user never interacted with (the
// held-out test positive included), then shuffled. The stream is a function of
// (seed, epoch) only.
inline std::vector<TrainInstance> sample_epoch(const SplitDataset& split, unsigned ratio, std::uint64_t seed,
                                               std::size_t epoch) {
  require(ratio >= 1, "negative ratio must be at least 1");
  Rng rng(mix_seed(seed, epoch));
  const auto& train = split.train();
  std::vector<TrainInstance> out;
  out.reserve(train.size() * (1 + ratio));
  for (const auto& x : train.interactions()) {
    out.push_back({x.user, x.item, 1.0});
    for (unsigned k = 0; k < ratio; ++k) {
      Index j = 0;
      do {
        j = static_cast<Index>(rng.uniform_below(split.num_items()));
      } while (split.observed(x.user, j));
      out.push_back({x.user, j, 0.0});
    }
  }
  rng.shuffle(std::span<TrainInstance>(out));
  return out;
}

// Consecutive batches over an instance list; the last may be short.
class BatchStream {
 public:
  BatchStream(std::span<const TrainInstance> instances, std::size_t batch_size)
      : instances_(instances), batch_size_(batch_size) {
    require(batch_size > 0, "batch size must be positive");
  }

  bool next(std::span<const TrainInstance>& batch) {
    if (offset_ >= instances_.size()) return false;
    const std::size_t n = std::min(batch_size_, instances_.size() - offset_);
    batch = instances_.subspan(offset_, n);
    offset_ += n;
    return true;
  }

  std::size_t batch_count() const { return (instances_.size() + batch_size_ - 1) / batch_size_; }

 private:
  std::span<const TrainInstance> instances_;
  std::size_t batch_size_;
  std::size_t offset_ = 0;
};

struct Batch {
  std::vector<Index> users;
  std::vector<Index> items;
  std::vector<double> labels;

  explicit Batch(std::span<const TrainInstance> instances) {
    for (const auto& x : instances) {
      users.push_back(x.user);
      items.push_back(x.item);
      labels.push_back(x.label);
    }
  }
};

// Builds the forward graph and the mean log loss of a batch.
inline Var batch_loss(Tape& tape, const ModelConfig& config, const AttributeCatalog& catalog, const Batch& batch) {
  const Var pred = build_forward(tape, config, BatchRef{batch.users, batch.items, &catalog});
  return tape.log_loss(pred, batch.labels);
}

struct TrainOptions {
  ModelConfig model;
  AdamOptions adam;
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  unsigned negative_ratio = 4;
  std::uint64_t seed = 0;
  bool evaluate_each_epoch = true;
};

struct EpochRecord {
  EpochStats stats;
  EvalReport eval;
};

struct TrainResult {
  ParameterStore params;
  std::vector<EpochRecord> history;

  // Highest HR@10, earliest epoch on ties.
  std::optional<std::size_t> best_epoch_index() const {
    if (history.empty()) return std::nullopt;
    std::size_t best = 0;
    for (std::size_t k = 1; k < history.size(); ++k) {
      if (history[k].eval.hr_at_10 > history[best].eval.hr_at_10) best = k;
    }
    return best;
  }
};

using EpochCallback = std::function<void(const EpochRecord&, const ParameterStore&)>;

inline std::uint64_t init_seed(std::uint64_t seed) { return mix_seed(seed, 0x494E4954ULL); }
inline std::uint64_t sampling_seed(std::uint64_t seed) { return mix_seed(seed, 0x4E454753ULL); }

// Continues from `params` (e.g. a resumed checkpoint); epochs are numbered
// first_epoch, first_epoch + 1, ...
inline TrainResult train(const TrainOptions& options, const SplitDataset& split, const AttributeCatalog& catalog,
                         ParameterStore params, std::size_t first_epoch, const EpochCallback& on_epoch = {}) {
  options.model.validate();
  require(options.model.num_users == split.num_users() && options.model.num_items == split.num_items(),
          "model config does not match the split");
  TrainResult result{std::move(params), {}};
  Gradients grads;
  for (std::size_t e = 0; e < options.epochs; ++e) {
    const std::size_t epoch = first_epoch + e;
    const auto started = std::chrono::steady_clock::now();
    const auto instances = sample_epoch(split, options.negative_ratio, sampling_seed(options.seed), epoch);
    BatchStream stream(instances, options.batch_size);
    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    std::span<const TrainInstance> chunk;
    while (stream.next(chunk)) {
      const Batch batch(chunk);
      Tape tape(result.params);
      const Var loss = batch_loss(tape, options.model, catalog, batch);
      const double value = tape.value(loss).data[0];
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batch_index));
      }
      loss_sum += value * static_cast<double>(chunk.size());
      grads.clear();
      tape.backward(loss, grads);
      try {
        adam_step(result.params, grads, options.adam);
      } catch (const TrainingError& err) {
        throw TrainingError(std::string(err.what()) + " at epoch " + std::to_string(epoch) + " batch " +
                            std::to_string(batch_index));
      }
      ++batch_index;
    }
    EpochRecord record;
    record.stats.epoch = epoch;
    record.stats.instances = instances.size();
    record.stats.mean_loss = instances.empty() ? 0.0 : loss_sum / static_cast<double>(instances.size());
    if (options.evaluate_each_epoch) record.eval = evaluate(options.model, result.params, split, catalog);
    record.stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (on_epoch) on_epoch(record, result.params);
    result.history.push_back(std::move(record));
  }
  return result;
}

inline TrainResult train(const TrainOptions& options, const SplitDataset& split, const AttributeCatalog& catalog,
                         const EpochCallback& on_epoch = {}) {
  return train(options, split, catalog, init_params(options.model, init_seed(options.seed)), 1, on_epoch);
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradcheckOptions {
  Index users = 5;
  Index items = 5;
  std::size_t factors = 4;
  std::vector<std::size_t> layers{8, 4, 2};
  // Large enough that gradients sit well above float64 round-off in the
  // finite differences.
  double init_stddev = 0.5;
  double step = 1e-3;
  double tolerance = 1e-3;
  std::optional<std::pair<Op, double>> corrupt_backward;
};

struct ParameterCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  double max_abs_numeric = 0.0;
  std::size_t checked = 0;
  // Elements whose +/- step moved some ReLU input across zero.
  std::size_t skipped_kinks = 0;
  bool has_gradient_entry = false;
};

struct GradcheckReport {
  ModelKind kind = ModelKind::GMF;
  std::uint64_t seed = 0;
  double tolerance = 1e-3;
  std::vector<ParameterCheck> parameters;

  const ParameterCheck* worst() const {
    const ParameterCheck* w = nullptr;
    for (const auto& p : parameters) {
      if (!w || p.max_rel_error > w->max_rel_error) w = &p;
    }
    return w;
  }
  double max_rel_error() const { return parameters.empty() ? 0.0 : worst()->max_rel_error; }
  bool passed() const { return max_rel_error() < tolerance; }
};

struct TinyProblem {
  AttributeCatalog catalog;
  ModelConfig config;
  Batch batch{std::span<const TrainInstance>{}};
};

// A 5x5 toy world. Users and items 0..3 appear in the batch; user 4 and item 4
// never do, so their embedding rows must get zero gradient.
inline TinyProblem make_tiny_problem(ModelKind kind, std::uint64_t seed, const GradcheckOptions& opt) {
  Rng rng(mix_seed(seed, 0x54494E59ULL));
  const Index user_vocab = 4;
  const Index item_vocab = 5;
  auto draw_attrs = [&](Index n, Index vocab) {
    std::vector<std::vector<Index>> attrs(n);
    for (auto& a : attrs) {
      const auto count = 1 + rng.uniform_below(3);
      for (std::uint64_t k = 0; k < count; ++k) a.push_back(static_cast<Index>(rng.uniform_below(vocab)));
    }
    return attrs;
  };
  auto user_attrs = draw_attrs(opt.users, user_vocab);
  auto item_attrs = draw_attrs(opt.items, item_vocab);
  TinyProblem problem;
  problem.catalog = AttributeCatalog(std::move(user_attrs), std::move(item_attrs), user_vocab, item_vocab);
  problem.config = model_config_for(kind, opt.factors, opt.layers, problem.catalog);
  std::vector<TrainInstance> instances;
  const Index active_users = std::max<Index>(1, opt.users - 1);
  const Index active_items = std::max<Index>(1, opt.items - 1);
  for (Index k = 0; k < 8; ++k) {
    instances.push_back({static_cast<Index>(k % active_users), static_cast<Index>(rng.uniform_below(active_items)),
                         static_cast<double>(k % 2)});
  }
  problem.batch = Batch(instances);
  return problem;
}

// Compares analytic gradients of the batch loss with central differences in
// float64. Relative error uses the denominator max(|a|, |n|, 1e-8).
inline GradcheckReport gradcheck(ModelKind kind, std::uint64_t seed, const GradcheckOptions& opt = {}) {
  const TinyProblem problem = make_tiny_problem(kind, seed, opt);
  ParameterStore params = make_parameters(problem.config);
  for (auto& p : params.entries()) {
    Rng rng(mix_seed(seed, hash_name(p.name())));
    for (auto& v : p.values()) v = static_cast<float>(opt.init_stddev * rng.normal());
  }

  Gradients grads;
  std::vector<bool> base_pattern;
  {
    Tape tape(params);
    if (opt.corrupt_backward) tape.corrupt_backward(opt.corrupt_backward->first, opt.corrupt_backward->second);
    const Var loss = batch_loss(tape, problem.config, problem.catalog, problem.batch);
    tape.backward(loss, grads);
    base_pattern = tape.relu_pattern();
  }

  auto evaluate_loss = [&](std::vector<bool>& pattern) {
    Tape tape(params, false);
    const Var loss = batch_loss(tape, problem.config, problem.catalog, problem.batch);
    pattern = tape.relu_pattern();
    return tape.value(loss).data[0];
  };

  GradcheckReport report;
  report.kind = kind;
  report.seed = seed;
  report.tolerance = opt.tolerance;
  for (auto& p : params.entries()) {
    ParameterCheck check;
    check.name = p.name();
    const RowGradient* analytic = grads.find(p.name());
    check.has_gradient_entry = analytic != nullptr;
    auto values = p.values();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const float original = values[k];
      const float plus = static_cast<float>(static_cast<double>(original) + opt.step);
      const float minus = static_cast<float>(static_cast<double>(original) - opt.step);
      std::vector<bool> plus_pattern, minus_pattern;
      values[k] = plus;
      const double loss_plus = evaluate_loss(plus_pattern);
      values[k] = minus;
      const double loss_minus = evaluate_loss(minus_pattern);
      values[k] = original;
      if (plus_pattern != base_pattern || minus_pattern != base_pattern) {
        ++check.skipped_kinks;
        continue;
      }
      const double numeric = (loss_plus - loss_minus) / (static_cast<double>(plus) - static_cast<double>(minus));
      const double a = analytic ? analytic->at(k / p.cols(), k % p.cols()) : 0.0;
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      check.max_rel_error = std::max(check.max_rel_error, std::abs(a - numeric) / denom);
      check.max_abs_analytic = std::max(check.max_abs_analytic, std::abs(a));
      check.max_abs_numeric = std::max(check.max_abs_numeric, std::abs(numeric));
      ++check.checked;
    }
    report.parameters.push_back(std::move(check));
  }
  return report;
}

}  // namespace camf
