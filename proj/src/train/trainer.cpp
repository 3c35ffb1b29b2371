// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include "qact/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "qact/error.hpp"

namespace qact {

void TrainConfig::validate() const {
  if (steps == 0) throw UsageError("steps must be positive");
  if (batch_size == 0) throw UsageError("batch size must be positive");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw UsageError("learning rate must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw UsageError("weight decay must be non-negative");
  if (!(policy.lambda >= 0.0f && policy.lambda < 1.0f)) throw UsageError("lambda must lie in [0, 1)");
  if (log_every == 0) throw UsageError("log interval must be positive");
  if (eval_samples == 0) throw UsageError("eval sample count must be positive");
  if (policy.scheme == QuantScheme::kSymmetric && policy.stats == StatsMode::kPerSample) {
    throw UsageError("symmetric scheme cannot be combined with per-sample statistics");
  }
  if (policy.granularity.kind == Granularity::Kind::kChannel && policy.granularity.channel_groups == 0) {
    throw UsageError("channel granularity needs a positive group count");
  }
}

std::string_view to_string(RunStatus s) { return s == RunStatus::kOk ? "ok" : "diverged"; }

namespace {

void check_channel_groups(const ModelConfig& model, const TrainConfig& train) {
  const Granularity& g = train.policy.granularity;
  if (g.kind == Granularity::Kind::kChannel && g.channel_groups > model.dim) {
    throw UsageError("channel groups (" + std::to_string(g.channel_groups) + ") exceed model dim " +
                     std::to_string(model.dim));
  }
}

}  // namespace

template <Real T>
Trainer<T>::Trainer(ModelConfig model, TrainConfig train)
    : model_(model),
      train_(train),
      task_((model.validate(), train.validate(), check_channel_groups(model, train), train.task), model.seq_len,
            model.vocab, train.seed),
      params_(init_model(model, train.seed).template cast<T>()),
      opt_(AdamWState<T>::zeros_like(params_)),
      store_(train.policy, train.seed, model.heads, &ledger_) {
  report_.parameter_count = params_.parameter_count();
  report_.base_lr = train_.lr;
  report_.weight_decay = train_.weight_decay;
}

template <Real T>
void Trainer<T>::step() {
  if (done()) throw ContractError("trainer already completed " + std::to_string(train_.steps) + " steps");
  const Batch batch = task_.train_batch(step_, train_.batch_size);
  ledger_.begin_step(step_);

  ModelContext<T> ctx;
  const Tensor<T> logits = model_forward(params_, model_, batch, &store_, &ctx);
  const LossResult<T> loss = cross_entropy(logits, batch.labels);
  const ModelParams<T> grads = model_backward(params_, model_, ctx, loss.dlogits);
  const double lr = cosine_lr(train_.lr, step_, train_.steps);
  adamw_step(params_, grads, opt_, lr, train_.weight_decay);

  const bool last = step_ + 1 == train_.steps;
  if (step_ % train_.log_every == 0 || last) {
    StepMetrics m;
    m.step = step_;
    m.loss = static_cast<double>(loss.loss);
    m.accuracy = static_cast<double>(loss.correct) / static_cast<double>(batch.size);
    m.lr = lr;
    m.ledger = ledger_.report();
    report_.metrics.push_back(std::move(m));
  }
  if (train_.trajectory_stride > 0 && (step_ % train_.trajectory_stride == 0 || last)) log_trajectories();

  report_.final_loss = static_cast<double>(loss.loss);
  ++step_;
  report_.steps_completed = step_;
}

template <Real T>
void Trainer<T>::log_trajectories() {
  for (const auto& [site, q] : store_.quantizers()) {
    const QuantizerState& s = q.state();
    for (std::size_t g = 0; g < s.group_count(); ++g) {
      report_.trajectories.push_back({step_, site, g, s.alpha[g], s.beta[g]});
    }
  }
}

template <Real T>
double Trainer<T>::evaluate() const {
  constexpr std::size_t kChunk = 512;
  const Batch all = task_.eval_set(train_.eval_samples);
  const std::size_t n = model_.seq_len;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < all.size; start += kChunk) {
    Batch chunk;
    chunk.size = std::min(kChunk, all.size - start);
    chunk.seq_len = n;
    chunk.tokens.assign(all.tokens.begin() + static_cast<std::ptrdiff_t>(start * n),
                        all.tokens.begin() + static_cast<std::ptrdiff_t>((start + chunk.size) * n));
    chunk.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(start),
                        all.labels.begin() + static_cast<std::ptrdiff_t>(start + chunk.size));
    const Tensor<T> logits = model_forward<T>(params_, model_, chunk, nullptr, nullptr);
    correct += cross_entropy(logits, chunk.labels).correct;
  }
  return static_cast<double>(correct) / static_cast<double>(all.size);
}

template <Real T>
TrainReport Trainer<T>::run(std::optional<std::uint64_t> stop_at) {
  try {
    while (!done() && (!stop_at || step_ < *stop_at)) step();
  } catch (const NumericalError& e) {
    report_.status = RunStatus::kDiverged;
    report_.failure = "step " + std::to_string(step_) + ": " + e.what();
  }
  report_.ledger = ledger_.report();
  if (report_.status == RunStatus::kOk && done()) {
    try {
      report_.eval_accuracy = evaluate();
    } catch (const NumericalError& e) {
      report_.status = RunStatus::kDiverged;
      report_.failure = std::string("evaluation: ") + e.what();
    }
  }
  return report_;
}

template class Trainer<float>;
template class Trainer<double>;

TrainReport train(const ModelConfig& model, const TrainConfig& cfg) {
  if (cfg.precision == Precision::kOracle) return Trainer<double>(model, cfg).run();
  return Trainer<float>(model, cfg).run();
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"depth", cfg.depth},       {"dim", cfg.dim},     {"heads", cfg.heads},
          {"seq_len", cfg.seq_len},   {"mlp_ratio", cfg.mlp_ratio},
          {"num_classes", cfg.num_classes}, {"vocab", cfg.vocab}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.depth = j.at("depth").get<std::size_t>();
  cfg.dim = j.at("dim").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.seq_len = j.at("seq_len").get<std::size_t>();
  cfg.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
  cfg.num_classes = j.at("num_classes").get<std::size_t>();
  cfg.vocab = j.at("vocab").get<std::size_t>();
  return cfg;
}

nlohmann::json to_json(const CompressionPolicy& p) {
  nlohmann::json ops = nlohmann::json::array();
  for (OpKind op : kAllOpKinds) {
    if (p.op_enabled(op)) ops.push_back(std::string(to_string(op)));
  }
  nlohmann::json modules = nlohmann::json::array();
  if (p.msa) modules.push_back("msa");
  if (p.ffn) modules.push_back("ffn");
  return {{"compress", ops},
          {"modules", modules},
          {"granularity", to_string(p.granularity)},
          {"scheme", std::string(to_string(p.scheme))},
          {"rounding", std::string(to_string(p.rounding))},
          {"stats", std::string(to_string(p.stats))},
          {"lambda", p.lambda},
          {"debug_exact_backward", p.debug_exact_backward}};
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"steps", cfg.steps},
          {"batch", cfg.batch_size},
          {"lr", cfg.lr},
          {"wd", cfg.weight_decay},
          {"seed", cfg.seed},
          {"policy", to_json(cfg.policy)},
          {"precision", cfg.precision == Precision::kOracle ? "oracle" : "standard"},
          {"task", std::string(to_string(cfg.task))},
          {"log_every", cfg.log_every},
          {"trajectory_stride", cfg.trajectory_stride},
          {"eval_samples", cfg.eval_samples}};
}

nlohmann::json to_json(const TrainReport& r) {
  return {{"status", std::string(to_string(r.status))},
          {"failure", r.failure},
          {"steps_completed", r.steps_completed},
          {"parameter_count", r.parameter_count},
          {"final_loss", r.final_loss},
          {"eval_accuracy", r.eval_accuracy},
          {"base_lr", r.base_lr},
          {"weight_decay", r.weight_decay},
          {"ledger", r.ledger.to_json()}};
}

}  // namespace qact
