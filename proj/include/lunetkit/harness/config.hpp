#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "json.hpp"
#include "lunetkit/losses/losses.hpp"
#include "lunetkit/nets/config.hpp"

namespace lunetkit::harness {

/// Validation loss used for early stopping and best-epoch selection.
enum class MonitoredLoss { multitask, segmentation };

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  losses::LossWeights loss;
  std::uint64_t seed = 0;
  std::size_t validation_folds = 1;  ///< training folds held out for validation
  MonitoredLoss monitor = MonitoredLoss::multitask;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    require(learning_rate > 0.0 && std::isfinite(learning_rate), ErrorCode::InvalidConfig,
            "learning_rate must be positive");
    require(batch_size >= 1, ErrorCode::InvalidConfig, "batch_size must be at least 1");
    require(patience >= 1, ErrorCode::InvalidConfig, "patience must be at least 1");
    require(validation_folds >= 1, ErrorCode::InvalidConfig, "validation_folds must be at least 1");
    require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0,
            ErrorCode::InvalidConfig, "invalid Adam constants");
    loss.validate();
  }
  bool operator==(const TrainConfig&) const = default;
};

struct EvalConfig {
  std::size_t n_discs = 20;
  std::uint64_t bounds_seed = 0;  ///< seed for deriving outlier bounds from references
  bool teacher_forced = false;    ///< crop with the reference expanded box

  void validate() const {
    require(n_discs >= 4, ErrorCode::InvalidConfig, "n_discs must be at least 4");
  }
  bool operator==(const EvalConfig&) const = default;
};

/// Everything a training or cross-validation run needs besides the data.
struct ExperimentConfig {
  nets::LUNetConfig model;
  TrainConfig train;
  EvalConfig eval;

  void validate() const {
    model.validate();
    train.validate();
    eval.validate();
  }
  bool operator==(const ExperimentConfig&) const = default;
};

inline std::string to_string(MonitoredLoss m) {
  return m == MonitoredLoss::multitask ? "multitask" : "segmentation";
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"learning_rate", c.learning_rate},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"loss", c.loss},
       {"seed", c.seed},
       {"validation_folds", c.validation_folds},
       {"monitor", to_string(c.monitor)},
       {"adam", {{"beta1", c.beta1}, {"beta2", c.beta2}, {"epsilon", c.epsilon}}}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  if (j.contains("loss")) c.loss = j.at("loss").get<losses::LossWeights>();
  c.seed = j.value("seed", c.seed);
  c.validation_folds = j.value("validation_folds", c.validation_folds);
  const std::string monitor = j.value("monitor", std::string("multitask"));
  require(monitor == "multitask" || monitor == "segmentation", ErrorCode::InvalidConfig,
          "monitor must be multitask or segmentation");
  c.monitor = monitor == "multitask" ? MonitoredLoss::multitask : MonitoredLoss::segmentation;
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    c.beta1 = a.value("beta1", c.beta1);
    c.beta2 = a.value("beta2", c.beta2);
    c.epsilon = a.value("epsilon", c.epsilon);
  }
}

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"n_discs", c.n_discs}, {"bounds_seed", c.bounds_seed}, {"teacher_forced", c.teacher_forced}};
}

inline void from_json(const nlohmann::json& j, EvalConfig& c) {
  c = EvalConfig{};
  c.n_discs = j.value("n_discs", c.n_discs);
  c.bounds_seed = j.value("bounds_seed", c.bounds_seed);
  c.teacher_forced = j.value("teacher_forced", c.teacher_forced);
}

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"model", c.model}, {"train", c.train}, {"eval", c.eval}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c = ExperimentConfig{};
  if (j.contains("model")) c.model = j.at("model").get<nets::LUNetConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("eval")) c.eval = j.at("eval").get<EvalConfig>();
}

/// Parses and validates an experiment config; malformed JSON is InvalidConfig.
inline ExperimentConfig parse_experiment(const nlohmann::json& j) {
  ExperimentConfig c;
  try {
    c = j.get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidConfig, std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace lunetkit::harness
