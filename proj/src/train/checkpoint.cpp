// Copyright (c) 2026 The qact Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <stdexcept>

#include "qact/error.hpp"
#include "qact/trainer.hpp"

namespace qact {

namespace {

constexpr int kCheckpointVersion = 1;

template <Real T>
nlohmann::json params_to_json(const ModelParams<T>& p) {
  nlohmann::json j = nlohmann::json::object();
  p.visit([&](const std::string& name, const Tensor<T>& t, bool) {
    j[name] = {{"shape", t.shape()}, {"data", t.values()}};
  });
  return j;
}

template <Real T>
void params_from_json(ModelParams<T>& p, const nlohmann::json& j) {
  p.visit([&](const std::string& name, Tensor<T>& t, bool) {
    const nlohmann::json& e = j.at(name);
    const auto shape = e.at("shape").get<Shape>();
    if (shape != t.shape()) throw std::runtime_error("checkpoint: shape mismatch for " + name);
    t = Tensor<T>(shape, e.at("data").get<std::vector<T>>());
  });
}

template <typename E>
E parse_or_throw(std::optional<E> v, const std::string& what) {
  if (!v) throw std::runtime_error("checkpoint: bad " + what);
  return *v;
}

}  // namespace

template <Real T>
nlohmann::json Trainer<T>::checkpoint() const {
  nlohmann::json quantizers = nlohmann::json::object();
  for (const auto& [site, q] : store_.quantizers()) {
    const QuantizerState& s = q.state();
    quantizers[site] = {{"alpha", s.alpha},
                        {"beta", s.beta},
                        {"lambda", s.lambda},
                        {"scheme", std::string(to_string(s.scheme))},
                        {"rounding", std::string(to_string(s.rounding))},
                        {"stats", std::string(to_string(s.stats))},
                        {"initialized", s.initialized},
                        {"rng_key", q.rng().key()},
                        {"rng_counter", q.rng().counter()}};
  }
  return {{"format", "qact-checkpoint"},
          {"version", kCheckpointVersion},
          {"model", to_json(model_)},
          {"train", to_json(train_)},
          {"step", step_},
          {"params", params_to_json(params_)},
          {"adam", {{"step", opt_.step}, {"m", params_to_json(opt_.m)}, {"v", params_to_json(opt_.v)}}},
          {"quantizers", quantizers},
          {"ledger_peaks",
           {{"baseline", ledger_.peak_baseline_bytes()}, {"actual", ledger_.peak_actual_bytes()}}},
          {"final_loss", report_.final_loss}};
}

template <Real T>
void Trainer<T>::restore(const nlohmann::json& ckpt) {
  if (ckpt.value("format", "") != "qact-checkpoint" || ckpt.value("version", 0) != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unrecognized format");
  }
  if (ckpt.at("model") != to_json(model_)) throw UsageError("checkpoint: model configuration differs");
  if (ckpt.at("train") != to_json(train_)) throw UsageError("checkpoint: training configuration differs");

  params_from_json(params_, ckpt.at("params"));
  const nlohmann::json& adam = ckpt.at("adam");
  opt_.step = adam.at("step").get<std::uint64_t>();
  params_from_json(opt_.m, adam.at("m"));
  params_from_json(opt_.v, adam.at("v"));

  auto& quantizers = store_.quantizers();
  quantizers.clear();
  for (const auto& item : ckpt.at("quantizers").items()) {
    const std::string site = item.key();
    const nlohmann::json& e = item.value();
    QuantizerState s;
    s.alpha = e.at("alpha").get<std::vector<float>>();
    s.beta = e.at("beta").get<std::vector<float>>();
    s.lambda = e.at("lambda").get<float>();
    s.scheme = parse_or_throw(parse_scheme(e.at("scheme").get<std::string>()), "scheme");
    s.rounding = parse_or_throw(parse_rounding(e.at("rounding").get<std::string>()), "rounding");
    s.stats = parse_or_throw(parse_stats(e.at("stats").get<std::string>()), "stats mode");
    s.initialized = e.at("initialized").get<bool>();
    quantizers.emplace(site, Quantizer(std::move(s), Rng(e.at("rng_key").get<std::uint64_t>(),
                                                         e.at("rng_counter").get<std::uint64_t>())));
  }

  ledger_.reset();
  const nlohmann::json& peaks = ckpt.at("ledger_peaks");
  ledger_.restore_peaks(peaks.at("baseline").get<std::size_t>(), peaks.at("actual").get<std::size_t>());

  step_ = ckpt.at("step").get<std::uint64_t>();
  report_ = TrainReport{};
  report_.parameter_count = params_.parameter_count();
  report_.base_lr = train_.lr;
  report_.weight_decay = train_.weight_decay;
  report_.steps_completed = step_;
  report_.final_loss = ckpt.at("final_loss").get<double>();
}

template <Real T>
void Trainer<T>::save_checkpoint(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out << checkpoint().dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

template <Real T>
void Trainer<T>::load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  restore(nlohmann::json::parse(in));
}

template nlohmann::json Trainer<float>::checkpoint() const;
template nlohmann::json Trainer<double>::checkpoint() const;
template void Trainer<float>::restore(const nlohmann::json&);
template void Trainer<double>::restore(const nlohmann::json&);
template void Trainer<float>::save_checkpoint(const std::string&) const;
template void Trainer<double>::save_checkpoint(const std::string&) const;
template void Trainer<float>::load_checkpoint(const std::string&);
template void Trainer<double>::load_checkpoint(const std::string&);

}  // namespace qact
