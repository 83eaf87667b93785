#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "deae/evaluation.hpp"
#include "deae/model.hpp"
#include "deae/pipeline.hpp"
#include "deae/rng.hpp"

namespace deae {

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  int batch_size = 8;
  int max_steps = 200;
  int eval_every = 0;  // 0: evaluate on dev only at the final step
  double clip_norm = 1.0;
  std::uint64_t seed = 42;
};

inline void validate_train_config(const TrainConfig& tc) {
  if (!(tc.learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (tc.weight_decay < 0.0) throw ValidationError("weight_decay must be non-negative");
  if (tc.batch_size <= 0) throw ValidationError("batch_size must be positive");
  if (tc.max_steps <= 0) throw ValidationError("max_steps must be positive");
  if (tc.eval_every < 0) throw ValidationError("eval_every must be non-negative");
  if (!(tc.clip_norm > 0.0)) throw ValidationError("clip_norm must be positive");
}

// Decoupled weight decay: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  int t = 0;
  std::vector<Matrix> m, v;

  void init(const std::vector<std::pair<std::string, Matrix*>>& params) {
    m.clear();
    v.clear();
    for (const auto& [name, p] : params) {
      m.emplace_back(p->rows, p->cols);
      v.emplace_back(p->rows, p->cols);
    }
  }

  void step(const std::vector<std::pair<std::string, Matrix*>>& params,
            const std::vector<std::pair<std::string, Matrix*>>& grads) {
    if (params.size() != grads.size() || params.size() != m.size())
      throw ComputeError("optimizer state does not match the parameter registry");
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      Matrix& theta = *params[k].second;
      const Matrix& g = *grads[k].second;
      for (std::size_t i = 0; i < theta.a.size(); ++i) {
        m[k].a[i] = beta1 * m[k].a[i] + (1.0 - beta1) * g.a[i];
        v[k].a[i] = beta2 * v[k].a[i] + (1.0 - beta2) * g.a[i] * g.a[i];
        const double mhat = m[k].a[i] / bc1;
        const double vhat = v[k].a[i] / bc2;
        theta.a[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * theta.a[i]);
      }
    }
  }
};

// Scales all gradients so their global L2 norm is at most max_norm.
// Returns the pre-clip norm.
inline double clip_global_norm(const std::vector<std::pair<std::string, Matrix*>>& grads,
                               double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double x : g->a) sq += x * x;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (const auto& [name, g] : grads)
      for (double& x : g->a) x *= scale;
  }
  return norm;
}

struct TrainLogEntry {
  int step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::optional<double> dev_arg_c;
};

struct TrainResult {
  Model model;  // dev-selected checkpoint, or the final parameters without dev
  std::vector<TrainLogEntry> curve;
  double final_loss = 0.0;
  int best_step = -1;          // -1: no dev evaluation happened
  double best_dev_arg_c = -1;  // Arg-C F1 of the selected checkpoint
};

namespace detail {

// Batches group instances of the same event type. Order within each type and
// the order of the batches reshuffle every epoch from the training seed.
inline std::vector<std::vector<int>> epoch_batches(const Corpus& corpus,
                                                   const std::vector<int>& train_idx,
                                                   int batch_size, std::uint64_t seed,
                                                   int epoch) {
  std::map<std::string, std::vector<int>> by_type;
  for (int idx : train_idx)
    by_type[corpus.instances[static_cast<std::size_t>(idx)].event_type].push_back(idx);
  std::vector<std::vector<int>> batches;
  for (auto& [type, idxs] : by_type) {
    SplitMix64 rng = stream_rng(seed, "train/epoch-" + std::to_string(epoch) + "/" + type);
    rng.shuffle(idxs);
    const std::size_t b = static_cast<std::size_t>(batch_size);
    for (std::size_t i = 0; i < idxs.size(); i += b) {
      std::vector<int> batch(idxs.begin() + static_cast<std::ptrdiff_t>(i),
                             idxs.begin() + static_cast<std::ptrdiff_t>(
                                                std::min(i + b, idxs.size())));
      batches.push_back(std::move(batch));
    }
  }
  SplitMix64 rng = stream_rng(seed, "train/epoch-" + std::to_string(epoch) + "/order");
  rng.shuffle(batches);
  return batches;
}

}  // namespace detail

// Trains in place from the model's initial parameters. `inputs` must hold a
// prompt input for every train and dev instance.
inline TrainResult train(Model model, const Corpus& corpus, const TrainConfig& tc,
                         const std::map<InstanceKey, PromptInput>& inputs,
                         std::vector<std::string>* warnings = nullptr,
                         std::ostream* log = nullptr) {
  validate_train_config(tc);
  const std::vector<int> train_idx = instance_indices_of_split(corpus, SplitTag::train);
  if (train_idx.empty()) throw ValidationError("training split has no instances");
  const std::vector<int> dev_idx = instance_indices_of_split(corpus, SplitTag::dev);

  for (int idx : train_idx) {
    const InstanceKey key = key_of(corpus, corpus.instances[static_cast<std::size_t>(idx)]);
    if (!inputs.count(key))
      throw ValidationError("no prompt input prepared for training instance " + to_string(key));
  }

  auto dev_arg_c = [&](const Model& m) {
    std::map<InstanceKey, std::vector<Prediction>> by_key;
    for (int idx : dev_idx) {
      const EventInstance& inst = corpus.instances[static_cast<std::size_t>(idx)];
      const InstanceKey key = key_of(corpus, inst);
      auto iit = inputs.find(key);
      if (iit == inputs.end())
        throw ValidationError("no prompt input prepared for dev instance " + to_string(key));
      by_key[key] = extract(m, corpus, inst, iit->second);
    }
    return evaluate(corpus, by_key, dev_idx).overall.arg_c.f1();
  };

  auto params = parameter_registry(model);
  AdamW opt;
  opt.lr = tc.learning_rate;
  opt.weight_decay = tc.weight_decay;
  opt.init(params);

  TrainResult result;
  Model best = model;
  int best_step = -1;
  double best_dev = -1.0;

  int epoch = 0;
  std::vector<std::vector<int>> batches =
      detail::epoch_batches(corpus, train_idx, tc.batch_size, tc.seed, epoch);
  std::size_t cursor = 0;
  double last_loss = 0.0;

  for (int step = 1; step <= tc.max_steps; ++step) {
    if (cursor >= batches.size()) {
      ++epoch;
      batches = detail::epoch_batches(corpus, train_idx, tc.batch_size, tc.seed, epoch);
      cursor = 0;
    }
    const std::vector<int>& batch = batches[cursor++];

    ModelGrads grads = zero_grads(model);
    auto grad_params = parameter_registry(grads);
    double loss_sum = 0.0;
    for (int idx : batch) {
      const EventInstance& inst = corpus.instances[static_cast<std::size_t>(idx)];
      loss_sum += instance_loss(model, corpus, inst, inputs.at(key_of(corpus, inst)), &grads,
                                nullptr, warnings);
    }
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double loss = loss_sum * inv_b;
    if (!std::isfinite(loss)) {
      std::string keys;
      for (int idx : batch) {
        if (!keys.empty()) keys += ", ";
        keys += to_string(key_of(corpus, corpus.instances[static_cast<std::size_t>(idx)]));
      }
      throw ComputeError("non-finite loss at step " + std::to_string(step) +
                         " (batch: " + keys + ")");
    }
    for (const auto& [name, g] : grad_params)
      for (double& x : g->a) x *= inv_b;
    const double gnorm = clip_global_norm(grad_params, tc.clip_norm);
    opt.step(params, grad_params);
    last_loss = loss;

    TrainLogEntry entry;
    entry.step = step;
    entry.loss = loss;
    entry.grad_norm = gnorm;
    const bool eval_now =
        !dev_idx.empty() && (step == tc.max_steps || (tc.eval_every > 0 && step % tc.eval_every == 0));
    if (eval_now) {
      const double f1 = dev_arg_c(model);
      entry.dev_arg_c = f1;
      if (f1 >= best_dev) {  // ties keep the latest checkpoint
        best_dev = f1;
        best_step = step;
        best = model;
      }
    }
    if (log)
      *log << "step " << entry.step << " loss " << entry.loss << " grad_norm "
           << entry.grad_norm
           << (entry.dev_arg_c ? " dev_arg_c " + std::to_string(*entry.dev_arg_c) : "")
           << "\n";
    result.curve.push_back(std::move(entry));
  }

  result.final_loss = last_loss;
  if (best_step >= 0) {
    result.model = std::move(best);
    result.best_step = best_step;
    result.best_dev_arg_c = best_dev;
  } else {
    result.model = std::move(model);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Lambda sweep

struct SweepPoint {
  double lambda = 0.0;
  double dev_arg_c = 0.0;
};

struct SweepResult {
  double best_lambda = 0.0;
  double best_dev_arg_c = -1.0;
  std::vector<SweepPoint> points;
  TrainResult best_run;
};

// Trains one model per grid point (same seed, same data) and selects the
// lambda with the best dev Arg-C F1; ties go to the smaller lambda.
inline SweepResult sweep_lambda(const Corpus& corpus, const ModelConfig& base_cfg,
                                const TrainConfig& tc, std::vector<double> grid,
                                const PromptOptions& opts,
                                std::vector<std::string>* warnings = nullptr,
                                std::ostream* log = nullptr) {
  if (grid.empty()) throw ValidationError("lambda grid must not be empty");
  for (double l : grid)
    if (!(l >= 0.0 && l <= 1.0)) throw ValidationError("lambda must lie in [0,1]");
  if (!corpus.has_split(SplitTag::dev))
    throw ValidationError("lambda sweep needs a dev split to select against");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  SweepResult result;
  for (double lambda : grid) {
    ModelConfig cfg = base_cfg;
    cfg.lambda = lambda;
    Model model = make_model(corpus, cfg, ExtractionStyle::debiased);
    std::vector<int> needed = instance_indices_of_split(corpus, SplitTag::train);
    for (int idx : instance_indices_of_split(corpus, SplitTag::dev)) needed.push_back(idx);
    auto inputs = build_prompt_inputs(model, corpus, needed, opts, warnings);
    TrainResult run = train(std::move(model), corpus, tc, inputs, warnings, nullptr);
    if (log) *log << "lambda " << lambda << " dev_arg_c " << run.best_dev_arg_c << "\n";
    SweepPoint point{lambda, run.best_dev_arg_c};
    result.points.push_back(point);
    if (run.best_dev_arg_c > result.best_dev_arg_c) {  // strict: ties keep smaller lambda
      result.best_dev_arg_c = run.best_dev_arg_c;
      result.best_lambda = lambda;
      result.best_run = std::move(run);
    }
  }
  return result;
}

}  // namespace deae
