#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "salted/adam.hpp"
#include "salted/autodiff.hpp"
#include "salted/dataset.hpp"
#include "salted/error.hpp"
#include "salted/network.hpp"
#include "salted/rng.hpp"

namespace salted {

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 100;
  double learning_rate = 0.001;
  std::uint64_t seed = 0;
  /// When false every example gets salt 0, i.e. plain supervised training.
  bool salted = true;
};

struct TrainReport {
  bool salted = true;
  std::size_t salts = 1;
  std::size_t epochs = 0;
  std::size_t steps = 0;
  std::vector<double> epoch_loss;
  /// First epoch (1-based) whose mean loss has covered 90% of the drop from
  /// the first epoch's loss to the best.
  std::size_t convergence_epoch = 0;
  double test_accuracy = 0.0;
  std::vector<double> per_salt_accuracy;
  double adversary_accuracy = 0.0;
  double wall_seconds = 0.0;
};

/// Called once per optimizer step with the batch's sample indices and salts.
using BatchObserver = std::function<void(std::size_t epoch, std::span<const std::size_t> indices,
                                         std::span<const std::size_t> salts)>;

inline void validate(const TrainConfig& cfg, std::size_t dataset_size) {
  if (cfg.epochs < 1) throw Error(Errc::InvalidConfig, "epochs must be >= 1");
  if (cfg.batch_size < 1) throw Error(Errc::InvalidConfig, "batch_size must be >= 1");
  if (cfg.batch_size > dataset_size) {
    throw Error(Errc::InvalidConfig, "batch_size " + std::to_string(cfg.batch_size) +
                                         " exceeds dataset size " + std::to_string(dataset_size));
  }
  if (!(cfg.learning_rate > 0.0) || !std::isfinite(cfg.learning_rate)) {
    throw Error(Errc::InvalidConfig, "learning_rate must be positive");
  }
}

inline std::size_t convergence_epoch(std::span<const double> losses) {
  if (losses.empty()) return 0;
  const double best = *std::min_element(losses.begin(), losses.end());
  const double target = losses.front() - 0.9 * (losses.front() - best);
  for (std::size_t e = 0; e < losses.size(); ++e) {
    if (losses[e] <= target) return e + 1;
  }
  return losses.size();
}

/// Salted training. Each epoch visits every sample once in a shuffled order
/// (the final batch may be short); each example draws its own salt uniformly
/// from [0, S) and is trained against the relabelled target (y + s) mod K.
/// Shuffling and salt draws use separate streams of `cfg.seed`.
inline TrainReport train(SaltedNetwork& net, const Dataset& data, const TrainConfig& cfg,
                         const BatchObserver& observer = {}) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "training set is empty");
  if (data.classes != net.classes()) {
    throw Error(Errc::ClassCountMismatch, "network has K = " + std::to_string(net.classes()) +
                                              ", dataset has " + std::to_string(data.classes));
  }
  validate(cfg, data.size());
  validate(net);

  const auto started = std::chrono::steady_clock::now();
  Rng shuffle_rng = Rng(cfg.seed).split(Stream::Shuffle);
  Rng salt_rng = Rng(cfg.seed).split(Stream::Salt);

  std::vector<Tensorf*> params = parameters(net);
  std::size_t total = 0;
  for (const Tensorf* p : params) total += p->size();
  auto adam = AdamState<float>::zeros(total, static_cast<float>(cfg.learning_rate));

  TrainReport report;
  report.salted = cfg.salted;
  report.salts = cfg.salted ? net.salts() : 1;

  std::vector<std::size_t> order(data.size());
  std::vector<std::size_t> salts, targets;
  std::vector<Tensorf> grads;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle_rng.shuffle(order.begin(), order.end());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min(cfg.batch_size, order.size() - start));
      salts.resize(idx.size());
      targets.resize(idx.size());
      for (std::size_t b = 0; b < idx.size(); ++b) {
        salts[b] = cfg.salted ? static_cast<std::size_t>(salt_rng.below(net.salts())) : 0;
        targets[b] = net.mapping.map_label(salts[b], data.labels[idx[b]]);
      }
      if (observer) observer(epoch, idx, salts);

      Graph<float> graph;
      const RecordedForward rec = record_forward(graph, net, data.batch(idx), salts);
      const auto loss = graph.softmax_cross_entropy(rec.logits, targets);
      graph.backward(loss);
      grads.clear();
      for (auto v : rec.params) grads.push_back(graph.grad(v));
      adam_step<float>(adam, params, grads);

      const double batch_loss = graph.value(loss)[0];
      if (!std::isfinite(batch_loss)) {
        throw Error(Errc::InvalidConfig, "training diverged at epoch " + std::to_string(epoch + 1));
      }
      loss_sum += batch_loss * static_cast<double>(idx.size());
      ++report.steps;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(data.size()));
  }
  report.epochs = cfg.epochs;
  report.convergence_epoch = convergence_epoch(report.epoch_loss);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

// ------------------------------------------------------------- evaluation

/// Maps a batch [N, ...] and one salt per row to salted probabilities [N, K].
using BatchForward = std::function<Tensorf(const Tensorf& x, std::span<const std::size_t> salts)>;

inline BatchForward forward_fn(const SaltedNetwork& net) {
  return [&net](const Tensorf& x, std::span<const std::size_t> salts) {
    return forward_salted_batch(net, x, salts);
  };
}

/// Client-side early part followed by the later part, in process.
inline BatchForward forward_fn(const ModelPart& early, const ModelPart& later) {
  return [&early, &later](const Tensorf& x, std::span<const std::size_t> salts) {
    return forward_later_batch(later, forward_early_batch(early, x, salts));
  };
}

struct SaltPolicy {
  enum class Kind { Fixed, Uniform, Exhaustive };
  Kind kind = Kind::Exhaustive;
  std::size_t salt = 0;
  std::uint64_t seed = 0;

  static SaltPolicy fixed(std::size_t s) { return {Kind::Fixed, s, 0}; }
  static SaltPolicy uniform(std::uint64_t seed) { return {Kind::Uniform, 0, seed}; }
  static SaltPolicy exhaustive() { return {Kind::Exhaustive, 0, 0}; }
};

struct EvalReport {
  double accuracy = 0.0;                 // decoded accuracy over all evaluations
  std::vector<double> per_salt_accuracy;  // length S; NaN for salts never drawn
  std::vector<std::size_t> per_salt_count;
  std::size_t evaluations = 0;
};

inline constexpr std::size_t kEvalChunk = 250;

namespace detail {

/// Runs `fn` over the dataset in chunks, salts given per sample.
inline void for_each_prediction(
    const BatchForward& fn, const Dataset& data, std::span<const std::size_t> salts,
    const std::function<void(std::size_t sample, std::span<const float> probs)>& visit) {
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, data.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const Tensorf y = fn(data.batch(idx), salts.subspan(start, n));
    const std::size_t k = y.size() / n;
    for (std::size_t b = 0; b < n; ++b) visit(start + b, y.values().subspan(b * k, k));
  }
}

}  // namespace detail

/// Decoded accuracy: a prediction is correct when the inverse mapping of the
/// argmax under the salt used equals the true label.
inline EvalReport evaluate(const BatchForward& fn, const SaltMapping& mapping, const Dataset& data,
                           const SaltPolicy& policy) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "evaluation set is empty");
  EvalReport r;
  std::vector<std::size_t> correct(mapping.salts, 0);
  r.per_salt_count.assign(mapping.salts, 0);

  auto run = [&](std::span<const std::size_t> salts) {
    detail::for_each_prediction(fn, data, salts, [&](std::size_t i, std::span<const float> probs) {
      const std::size_t s = salts[i];
      const std::size_t decoded = mapping.unmap_label(s, argmax(probs));
      ++r.per_salt_count[s];
      if (decoded == data.labels[i]) ++correct[s];
    });
  };

  std::vector<std::size_t> salts(data.size());
  switch (policy.kind) {
    case SaltPolicy::Kind::Fixed:
      check_salt(mapping, policy.salt);
      std::fill(salts.begin(), salts.end(), policy.salt);
      run(salts);
      break;
    case SaltPolicy::Kind::Uniform: {
      Rng rng = Rng(policy.seed).split(Stream::Eval);
      for (auto& s : salts) s = static_cast<std::size_t>(rng.below(mapping.salts));
      run(salts);
      break;
    }
    case SaltPolicy::Kind::Exhaustive:
      for (std::size_t s = 0; s < mapping.salts; ++s) {
        std::fill(salts.begin(), salts.end(), s);
        run(salts);
      }
      break;
  }

  std::size_t total_correct = 0;
  r.per_salt_accuracy.resize(mapping.salts);
  for (std::size_t s = 0; s < mapping.salts; ++s) {
    total_correct += correct[s];
    r.evaluations += r.per_salt_count[s];
    r.per_salt_accuracy[s] = r.per_salt_count[s]
                                 ? static_cast<double>(correct[s]) / static_cast<double>(r.per_salt_count[s])
                                 : std::nan("");
  }
  r.accuracy = static_cast<double>(total_correct) / static_cast<double>(r.evaluations);
  return r;
}

inline EvalReport evaluate(const SaltedNetwork& net, const Dataset& data,
                           const SaltPolicy& policy = SaltPolicy::exhaustive()) {
  return evaluate(forward_fn(net), net.mapping, data, policy);
}

/// Accuracy of an observer who sees only Y^s, salts drawn uniformly, and
/// guesses argmax(Y^s) as the class.
inline double salt_blind_adversary_accuracy(const BatchForward& fn, const SaltMapping& mapping,
                                            const Dataset& data, std::uint64_t seed) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "evaluation set is empty");
  Rng rng = Rng(seed).split(Stream::Adversary);
  std::vector<std::size_t> salts(data.size());
  for (auto& s : salts) s = static_cast<std::size_t>(rng.below(mapping.salts));
  std::size_t hits = 0;
  detail::for_each_prediction(fn, data, salts, [&](std::size_t i, std::span<const float> probs) {
    if (argmax(probs) == data.labels[i]) ++hits;
  });
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

inline double salt_blind_adversary_accuracy(const SaltedNetwork& net, const Dataset& data,
                                            std::uint64_t seed) {
  return salt_blind_adversary_accuracy(forward_fn(net), net.mapping, data, seed);
}

/// Fills the evaluation fields of a training report.
inline void attach_evaluation(TrainReport& report, const SaltedNetwork& net, const Dataset& test,
                              std::uint64_t seed) {
  SaltedNetwork view = net;
  if (!report.salted) view.mapping.salts = 1;
  const EvalReport e = evaluate(view, test, SaltPolicy::exhaustive());
  report.test_accuracy = e.accuracy;
  report.per_salt_accuracy = e.per_salt_accuracy;
  report.adversary_accuracy = salt_blind_adversary_accuracy(net, test, seed);
}

}  // namespace salted
