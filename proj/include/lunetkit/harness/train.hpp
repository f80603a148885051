#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "lunetkit/harness/adam.hpp"
#include "lunetkit/harness/config.hpp"
#include "lunetkit/harness/samples.hpp"
#include "lunetkit/losses/losses.hpp"
#include "lunetkit/nets/lunet.hpp"

namespace lunetkit::harness {

/// Batch-mean loss terms; total is the weighted multi-task sum.
struct LossParts {
  double localization = 0.0;
  double segmentation = 0.0;
  double auxiliary = 0.0;  ///< localizer trunk Dice (mu mode)
  double total = 0.0;

  bool finite() const {
    return std::isfinite(localization) && std::isfinite(segmentation) && std::isfinite(auxiliary) &&
           std::isfinite(total);
  }
  bool operator==(const LossParts&) const = default;
};

inline double monitored(const LossParts& p, MonitoredLoss m) {
  return m == MonitoredLoss::multitask ? p.total : p.segmentation;
}

struct TrainHistory {
  std::vector<LossParts> train;       ///< one entry per trained epoch
  std::vector<LossParts> validation;  ///< entry 0 is the untrained model
  std::size_t best_epoch = 0;         ///< 0 when no epoch was trained
  std::size_t stopped_epoch = 0;      ///< last epoch trained
  bool early_stopped = false;
  bool operator==(const TrainHistory&) const = default;
};

/// A model the loop can optimise over batches of samples of type S.
template <class M, class S>
concept Trainable = requires(M& m, const M& cm, std::span<const S* const> batch) {
  { m.parameters() } -> std::same_as<std::vector<diffcore::Tensor<float>*>>;
  { m.loss_and_gradient(batch) } -> std::same_as<LossParts>;
  { cm.loss(batch) } -> std::same_as<LossParts>;
};

struct TrainHooks {
  std::function<void(std::size_t epoch, const LossParts& train, const LossParts& validation)> on_epoch;
  std::function<void(const TrainHistory&)> on_divergence;  ///< state dump before DivergedLoss
};

namespace detail {

template <class M, class S>
LossParts dataset_loss(const M& model, std::span<const S* const> set, std::size_t batch_size) {
  LossParts acc;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, set.size() - start);
    const LossParts p = model.loss(set.subspan(start, n));
    const double w = static_cast<double>(n);
    acc.localization += w * p.localization;
    acc.segmentation += w * p.segmentation;
    acc.auxiliary += w * p.auxiliary;
    acc.total += w * p.total;
  }
  const double inv = 1.0 / static_cast<double>(set.size());
  return {acc.localization * inv, acc.segmentation * inv, acc.auxiliary * inv, acc.total * inv};
}

inline std::vector<std::vector<float>> snapshot(const std::vector<diffcore::Tensor<float>*>& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (auto* p : params) out.emplace_back(p->values().begin(), p->values().end());
  return out;
}

inline void restore(const std::vector<diffcore::Tensor<float>*>& params,
                    const std::vector<std::vector<float>>& values) {
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::copy(values[k].begin(), values[k].end(), params[k]->values().begin());
  }
}

}  // namespace detail

/// Adam over shuffled mini-batches with early stopping on the validation
/// loss. The epoch-0 validation loss is recorded; improvement is counted
/// from the first trained epoch, so a constant validation loss stops after
/// patience + 1 epochs. Leaves the model at its best validation epoch.
template <class S, Trainable<S> M>
TrainHistory train(M& model, std::span<const S* const> train_set, std::span<const S* const> val_set,
                   const TrainConfig& config, const TrainHooks& hooks = {}) {
  config.validate();
  require(!train_set.empty(), ErrorCode::EmptyDataset, "training set is empty");
  require(!val_set.empty(), ErrorCode::EmptyDataset, "validation set is empty");
  const auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  TrainHistory history;
  auto diverged = [&](const char* where) {
    if (hooks.on_divergence) hooks.on_divergence(history);
    fail(ErrorCode::DivergedLoss, std::string("non-finite loss during ") + where + " at epoch " +
                                      std::to_string(history.train.size()));
  };
  history.validation.push_back(detail::dataset_loss(model, val_set, config.batch_size));
  if (!history.validation[0].finite()) diverged("validation");

  Adam adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon);
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  std::vector<const S*> batch;
  auto best = detail::snapshot(params);
  double best_value = std::numeric_limits<double>::infinity();
  std::size_t wait = 0;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    LossParts epoch_loss;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - start);
      batch.clear();
      for (std::size_t k = 0; k < n; ++k) batch.push_back(train_set[order[start + k]]);
      const LossParts p = model.loss_and_gradient(std::span<const S* const>(batch));
      if (!p.finite()) {
        history.train.push_back(p);
        diverged("training");
      }
      adam.step();
      const double w = static_cast<double>(n) / static_cast<double>(order.size());
      epoch_loss.localization += w * p.localization;
      epoch_loss.segmentation += w * p.segmentation;
      epoch_loss.auxiliary += w * p.auxiliary;
      epoch_loss.total += w * p.total;
    }
    history.train.push_back(epoch_loss);
    history.validation.push_back(detail::dataset_loss(model, val_set, config.batch_size));
    history.stopped_epoch = epoch;
    if (!history.validation.back().finite()) diverged("validation");
    if (hooks.on_epoch) hooks.on_epoch(epoch, epoch_loss, history.validation.back());
    const double value = monitored(history.validation.back(), config.monitor);
    if (value < best_value) {
      best_value = value;
      best = detail::snapshot(params);
      history.best_epoch = epoch;
      wait = 0;
    } else if (++wait >= config.patience) {
      history.early_stopped = true;
      break;
    }
  }
  detail::restore(params, best);
  for (auto* p : params) p->clear_grad();
  return history;
}

/// Training adapter for LU-Net: localization loss against the expanded
/// reference box, Dice against the reference resampled into the predicted
/// ROI, and in mu mode Dice of the localizer trunk against the full mask.
class LUNetTrainer {
 public:
  LUNetTrainer(nets::LUNetModel<float>& model, losses::LossWeights weights)
      : model_(&model), weights_(weights) {
    weights_.validate();
    model_->set_trainable(true);
  }

  std::vector<diffcore::Tensor<float>*> parameters() {
    std::vector<diffcore::Tensor<float>*> out;
    for (auto* store : {&model_->localizer.params, &model_->segmenter.params}) {
      for (std::size_t i = 0; i < store->size(); ++i) out.push_back(&store->tensor(i));
    }
    return out;
  }

  LossParts loss_and_gradient(std::span<const Sample* const> batch) { return run(batch, true); }

  LossParts loss(std::span<const Sample* const> batch) const { return run(batch, false); }

 private:
  LossParts run(std::span<const Sample* const> batch, bool with_gradient) const {
    using diffcore::Tape;
    Tape<float> tape;
    const Tensor<float> images = stack_images(batch);
    const Tensor<float> ref_boxes = reference_boxes(batch, model_->config.margin);
    std::optional<nets::Binder<float>> loc, seg;
    if (with_gradient) {
      loc.emplace(tape, model_->localizer.params);
      seg.emplace(tape, model_->segmenter.params);
    } else {
      loc.emplace(tape, std::as_const(model_->localizer.params));
      seg.emplace(tape, std::as_const(model_->segmenter.params));
    }
    const auto g = nets::lunet_graph(*model_, *loc, *seg, tape.input(images));

    std::vector<grid::LabelMask> roi_refs, full_refs;
    const auto& box = g.crop_box.value();
    for (std::size_t n = 0; n < batch.size(); ++n) {
      roi_refs.push_back(losses::dynamic_roi_reference(
          batch[n]->mask, std::span<const float>(box.data() + 4 * n, 4), model_->config.crop_height,
          model_->config.crop_width));
      full_refs.push_back(batch[n]->mask);
    }
    auto loc_loss = losses::clipped_l1_loss(g.box, ref_boxes, weights_.clip, weights_.clip_mode);
    auto seg_loss = losses::multiclass_dice_loss(g.roi_probs, std::span<const grid::LabelMask>(roi_refs),
                                                 weights_.smooth);
    auto total = losses::multitask_loss(loc_loss, seg_loss, weights_);
    LossParts parts{loc_loss.value()[0], seg_loss.value()[0], 0.0, 0.0};
    if (model_->config.localizer.mode == nets::LocalizerMode::mu) {
      auto aux = losses::multiclass_dice_loss(g.loc_probs, std::span<const grid::LabelMask>(full_refs),
                                              weights_.smooth);
      parts.auxiliary = aux.value()[0];
      total = diffcore::add(total, diffcore::scale(aux, static_cast<float>(weights_.segmentation_weight)));
    }
    parts.total = total.value()[0];
    if (with_gradient && parts.finite()) tape.backward(total);
    return parts;
  }

  nets::LUNetModel<float>* model_;
  losses::LossWeights weights_;
};

inline void to_json(nlohmann::json& j, const LossParts& p) {
  j = {{"localization", p.localization},
       {"segmentation", p.segmentation},
       {"auxiliary", p.auxiliary},
       {"total", p.total}};
}

inline void from_json(const nlohmann::json& j, LossParts& p) {
  p = {j.at("localization").get<double>(), j.at("segmentation").get<double>(),
       j.at("auxiliary").get<double>(), j.at("total").get<double>()};
}

inline void to_json(nlohmann::json& j, const TrainHistory& h) {
  j = {{"train", h.train},
       {"validation", h.validation},
       {"best_epoch", h.best_epoch},
       {"stopped_epoch", h.stopped_epoch},
       {"early_stopped", h.early_stopped}};
}

inline void from_json(const nlohmann::json& j, TrainHistory& h) {
  h.train = j.at("train").get<std::vector<LossParts>>();
  h.validation = j.at("validation").get<std::vector<LossParts>>();
  h.best_epoch = j.at("best_epoch").get<std::size_t>();
  h.stopped_epoch = j.at("stopped_epoch").get<std::size_t>();
  h.early_stopped = j.at("early_stopped").get<bool>();
}

}  // namespace lunetkit::harness
