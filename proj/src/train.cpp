#include "mofelab/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "mofelab/error.hpp"
#include "mofelab/kernels/kernels.hpp"
#include "mofelab/rng.hpp"

namespace mofelab {

namespace {

// Distinct RNG streams per training concern, all derived from the run seed.
constexpr std::uint64_t kStage1ShuffleTag = 0x73316875666c;  // stage-1 order
constexpr std::uint64_t kStage2ShuffleTag = 0x73326875666c;  // stage-2 order
constexpr std::uint64_t kStage2PairTag = 0x70616972;         // pair draws

Target make_target(const MultimodalSample& s, std::size_t out_dim,
                   TaskLoss task_loss) {
  Target t;
  t.label = s.label;
  if (task_loss != TaskLoss::cross_entropy) {
    // Dice-family losses compare against a binary map; classification labels
    // become their one-hot rendering.
    t.map.assign(out_dim, 0.0);
    t.map.at(s.label) = 1.0;
  }
  return t;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// One pass of plain supervised training for a single expert on its own
// modality. Returns the mean per-sample loss.
double expert_epoch(Mlp& expert, AdamState& adam, const Dataset& data,
                    std::size_t index, const TrainConfig& cfg,
                    Rng& shuffle_rng) {
  const std::vector<std::size_t> order =
      shuffled_indices(data.size(), shuffle_rng);
  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size();
       start += cfg.batch_size) {
    const std::size_t stop = std::min(start + cfg.batch_size, order.size());
    GradientSet grads = zero_grads(expert);
    for (std::size_t i = start; i < stop; ++i) {
      const MultimodalSample& s = data.samples[order[i]];
      const Target target = make_target(s, expert.out_dim(), cfg.loss.task_loss);
      const MlpTrace trace = mlp_forward_trace(expert, s.features[index]);
      std::vector<double> dlogits;
      const double loss =
          task_loss_and_grad(cfg.loss.task_loss, trace.out, target, dlogits);
      loss_sum += loss;
      mlp_backward(expert, trace, dlogits, grads);
    }
    grads.scale(1.0 / static_cast<double>(stop - start));
    adam_step(expert, grads, adam);
  }
  return loss_sum / static_cast<double>(data.size());
}

void check_dataset(const DmomeModel& model, const Dataset& data,
                   const char* who) {
  if (data.size() == 0) {
    throw DataError(std::string(who) + ": empty dataset");
  }
  if (data.dims != model.modality_dims) {
    throw ConfigError(std::string(who) +
                      ": dataset modality dims do not match the model");
  }
}

std::vector<double> val_panel_accuracy(const DmomeModel& model,
                                       const Dataset& val,
                                       const std::vector<ModalityMask>& panel) {
  std::vector<double> acc;
  for (const ModalityMask& mask : panel) {
    const std::vector<PredictionRecord> recs = evaluate(model, val, {mask});
    acc.push_back(accuracy(recs));
  }
  return acc;
}

void scale_grads(DmomeGrads& grads, double alpha) {
  for (GradientSet& g : grads.experts) g.scale(alpha);
  grads.gate.scale(alpha);
}

Rng stage1_rng(const TrainConfig& cfg, std::size_t expert_index) {
  return make_rng(derive_seed(cfg.seed, kStage1ShuffleTag), expert_index + 1);
}

}  // namespace

void TrainConfig::validate() const {
  if (stage1_epochs == 0 || stage2_epochs == 0) {
    throw ConfigError("train config: epoch counts must be >= 1");
  }
  if (batch_size == 0) {
    throw ConfigError("train config: batch size must be >= 1");
  }
  if (!(stage1_lr > 0.0) || !(stage2_lr > 0.0)) {
    throw ConfigError("train config: learning rates must be positive");
  }
  if (loss.lambda < 0.0) {
    throw ConfigError("train config: lambda must be non-negative");
  }
}

std::vector<ModalityMask> validation_panel(std::size_t m) {
  std::vector<ModalityMask> panel = {ModalityMask::full(m)};
  for (std::size_t i = 0; i < m; ++i) {
    panel.push_back(ModalityMask::single(m, i));
  }
  return panel;
}

PairLoss pair_loss_and_grad(const DmomeModel& model,
                            const std::vector<std::vector<double>>& features,
                            const ModalityMask& mask_plus,
                            const ModalityMask& mask_minus,
                            const Target& target, const LossSpec& spec,
                            DmomeGrads& grads) {
  const DmomeTrace trace_plus = dmome_forward_trace(model, features, mask_plus);
  const DmomeTrace trace_minus =
      dmome_forward_trace(model, features, mask_minus);
  const PairLoss pl =
      total_loss(trace_plus.out, trace_minus.out, target, spec);

  const std::size_t k_count = model.task_count;
  const double lambda = spec.effective_lambda();
  const double inv_k = 1.0 / static_cast<double>(k_count);

  std::vector<std::vector<double>> dmixed_plus(k_count), dmixed_minus(k_count);
  for (std::size_t k = 0; k < k_count; ++k) {
    std::vector<double> dplus, dminus;
    const double lp = task_loss_and_grad(spec.task_loss,
                                         trace_plus.out.mixed[k], target, dplus);
    const double lm = task_loss_and_grad(
        spec.task_loss, trace_minus.out.mixed[k], target, dminus);

    // d(total)/d(branch logits): the task-loss part weighs 1/K; an active
    // ranking hinge adds +lambda/K on the plus branch and -lambda/K on the
    // minus branch (subgradient 0 at the kink).
    double active = 0.0;
    if (lambda != 0.0 && !spec.conf_hinge_term) {
      active = lp > lm ? 1.0 : 0.0;
    }
    const double minus_active = spec.mofe_detach_minus ? 0.0 : active;
    const double cp = (1.0 + lambda * active) * inv_k;
    const double cm = (1.0 - lambda * minus_active) * inv_k;

    dmixed_plus[k] = std::move(dplus);
    kernels::scale(cp, dmixed_plus[k].data(), dmixed_plus[k].size());
    dmixed_minus[k] = std::move(dminus);
    kernels::scale(cm, dmixed_minus[k].data(), dmixed_minus[k].size());

    if (lambda != 0.0 && spec.conf_hinge_term) {
      // Confidence hinge: active when the fewer-modality branch is the more
      // confident one; gradients flow through max-prob, not the task loss.
      std::vector<double> dconf_plus, dconf_minus;
      const double conf_plus =
          max_prob_and_grad(trace_plus.out.mixed[k], dconf_plus);
      const double conf_minus =
          max_prob_and_grad(trace_minus.out.mixed[k], dconf_minus);
      if (conf_minus - conf_plus > 0.0) {
        kernels::axpy(-lambda * inv_k, dconf_plus.data(),
                      dmixed_plus[k].data(), dconf_plus.size());
        if (!spec.mofe_detach_minus) {
          kernels::axpy(lambda * inv_k, dconf_minus.data(),
                        dmixed_minus[k].data(), dconf_minus.size());
        }
      }
    }
  }

  dmome_backward(model, trace_plus, dmixed_plus, grads);
  dmome_backward(model, trace_minus, dmixed_minus, grads);
  return pl;
}

Mlp train_stage1(const DmomeModel& init, std::size_t index,
                 const Dataset& train, const TrainConfig& cfg,
                 std::vector<double>* epoch_loss) {
  cfg.validate();
  check_dataset(init, train, "train_stage1");
  if (index >= init.modality_count()) {
    throw ConfigError("train_stage1: expert index out of range");
  }

  Mlp expert = init.experts[index];
  AdamState adam = make_adam(expert, cfg.stage1_lr);
  Rng rng = stage1_rng(cfg, index);
  for (std::size_t epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
    const double loss = expert_epoch(expert, adam, train, index, cfg, rng);
    if (!std::isfinite(loss)) {
      throw NumericError("stage 1 expert " + std::to_string(index) +
                         ", epoch " + std::to_string(epoch) +
                         ": non-finite loss");
    }
    if (epoch_loss != nullptr) epoch_loss->push_back(loss);
  }
  return expert;
}

std::vector<EpochRecord> train_stage2(DmomeModel& model, const Dataset& train,
                                      const Dataset& val,
                                      const TrainConfig& cfg,
                                      std::size_t first_epoch) {
  cfg.validate();
  check_dataset(model, train, "train_stage2");
  check_dataset(model, val, "train_stage2");

  const std::size_t m_count = model.modality_count();
  std::vector<AdamState> expert_adam;
  for (Mlp& e : model.experts) {
    expert_adam.push_back(make_adam(e, cfg.stage2_lr));
  }
  AdamState gate_adam = make_adam(model.gate, cfg.stage2_lr);
  Rng shuffle_rng = make_rng(cfg.seed, kStage2ShuffleTag);
  Rng pair_rng = make_rng(cfg.seed, kStage2PairTag);
  const std::vector<ModalityMask> panel = validation_panel(m_count);

  std::vector<EpochRecord> records;
  for (std::size_t epoch = 1; epoch <= cfg.stage2_epochs; ++epoch) {
    const std::vector<std::size_t> order =
        shuffled_indices(train.size(), shuffle_rng);
    double sum_plus = 0.0, sum_minus = 0.0, sum_mofe = 0.0, sum_total = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t stop = std::min(start + cfg.batch_size, order.size());
      DmomeGrads grads = zero_dmome_grads(model);
      for (std::size_t i = start; i < stop; ++i) {
        const MultimodalSample& s = train.samples[order[i]];
        const MaskPair pair =
            sample_mask_pair(m_count, cfg.pair_mode, pair_rng);
        const Target target =
            make_target(s, model.out_dim(), cfg.loss.task_loss);
        const PairLoss pl = pair_loss_and_grad(
            model, s.features, pair.plus, pair.minus, target, cfg.loss, grads);
        if (!std::isfinite(pl.total)) {
          throw NumericError("stage 2, epoch " + std::to_string(epoch) +
                             ": non-finite loss");
        }
        sum_plus += pl.loss_plus;
        sum_minus += pl.loss_minus;
        sum_mofe += pl.mofe;
        sum_total += pl.total;
      }
      scale_grads(grads, 1.0 / static_cast<double>(stop - start));
      if (!cfg.freeze_experts) {
        for (std::size_t m = 0; m < m_count; ++m) {
          adam_step(model.experts[m], grads.experts[m], expert_adam[m]);
        }
      }
      if (!model.uniform_gating) {
        adam_step(model.gate, grads.gate, gate_adam);
      }
    }

    const double n = static_cast<double>(train.size());
    EpochRecord rec;
    rec.epoch = first_epoch + epoch - 1;
    rec.stage = 2;
    rec.loss_plus = sum_plus / n;
    rec.loss_minus = sum_minus / n;
    rec.mofe = sum_mofe / n;
    rec.total = sum_total / n;
    rec.val_accuracy = val_panel_accuracy(model, val, panel);
    records.push_back(rec);
  }
  return records;
}

TrainLog train_model(DmomeModel& model, const Dataset& train,
                     const Dataset& val, const TrainConfig& cfg) {
  cfg.validate();
  check_dataset(model, train, "train_model");
  check_dataset(model, val, "train_model");

  const std::size_t m_count = model.modality_count();
  TrainLog log;
  log.modality_count = m_count;
  const std::vector<ModalityMask> panel = validation_panel(m_count);

  // Stage 1, one epoch of every expert at a time. Each expert sees its own
  // RNG stream, so its trajectory matches a standalone train_stage1 run.
  std::vector<AdamState> adam;
  std::vector<Rng> rngs;
  for (std::size_t m = 0; m < m_count; ++m) {
    adam.push_back(make_adam(model.experts[m], cfg.stage1_lr));
    rngs.push_back(stage1_rng(cfg, m));
  }
  for (std::size_t epoch = 1; epoch <= cfg.stage1_epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t m = 0; m < m_count; ++m) {
      const double loss =
          expert_epoch(model.experts[m], adam[m], train, m, cfg, rngs[m]);
      if (!std::isfinite(loss)) {
        throw NumericError("stage 1 expert " + std::to_string(m) +
                           ", epoch " + std::to_string(epoch) +
                           ": non-finite loss");
      }
      loss_sum += loss;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.stage = 1;
    rec.loss_plus = loss_sum / static_cast<double>(m_count);
    rec.total = rec.loss_plus;
    rec.val_accuracy = val_panel_accuracy(model, val, panel);
    log.records.push_back(rec);
  }

  const std::vector<EpochRecord> stage2 =
      train_stage2(model, train, val, cfg, cfg.stage1_epochs + 1);
  log.records.insert(log.records.end(), stage2.begin(), stage2.end());
  return log;
}

std::string TrainLog::to_csv() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(6);
  out << "epoch,stage,loss_plus,loss_minus,mofe,total,val_full";
  for (std::size_t m = 0; m < modality_count; ++m) {
    out << ",val_single_" << m;
  }
  out << "\n";
  for (const EpochRecord& r : records) {
    out << r.epoch << ',' << r.stage << ',' << r.loss_plus << ','
        << r.loss_minus << ',' << r.mofe << ',' << r.total;
    for (double v : r.val_accuracy) out << ',' << v;
    out << "\n";
  }
  return out.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("trainlog: cannot open " + path.string());
  out << to_csv();
  if (!out) throw DataError("trainlog: write failed for " + path.string());
}

ScoreMode parse_score_mode(const std::string& name) {
  if (name == "correctness") return ScoreMode::correctness;
  if (name == "true_class_prob") return ScoreMode::true_class_prob;
  throw ConfigError("unknown score mode: " + name);
}

const char* score_mode_name(ScoreMode mode) {
  return mode == ScoreMode::correctness ? "correctness" : "true_class_prob";
}

std::vector<PredictionRecord> evaluate(const DmomeModel& model,
                                       const Dataset& data,
                                       const std::vector<ModalityMask>& masks,
                                       ScoreMode mode) {
  check_dataset(model, data, "evaluate");
  if (masks.empty()) throw ConfigError("evaluate: no masks given");
  const std::size_t m_count = model.modality_count();

  std::vector<PredictionRecord> records;
  records.reserve(masks.size() * data.size());
  for (const ModalityMask& mask : masks) {
    validate_mask(mask, m_count);
    for (std::size_t i = 0; i < data.size(); ++i) {
      const MultimodalSample& s = data.samples[i];
      const MixtureOutput out = dmome_forward(model, s.features, mask);

      PredictionRecord rec;
      rec.sample_id = i;
      rec.mask = mask;
      rec.probs = softmax(out.mixed_logits(0));
      rec.predicted = static_cast<std::size_t>(
          std::max_element(rec.probs.begin(), rec.probs.end()) -
          rec.probs.begin());
      rec.label = s.label;
      if (rec.label >= rec.probs.size()) {
        throw DataError("evaluate: label " + std::to_string(rec.label) +
                        " out of range for " +
                        std::to_string(rec.probs.size()) + " classes");
      }
      rec.score = mode == ScoreMode::correctness
                      ? (rec.predicted == rec.label ? 1.0 : 0.0)
                      : rec.probs[rec.label];
      for (std::size_t m = 0; m < m_count; ++m) {
        rec.gating.push_back(out.gating.at(m, 0));
      }
      records.push_back(std::move(rec));
    }
  }
  return records;
}

EvaluationReport build_report(const std::vector<PredictionRecord>& records,
                              std::size_t modality_count, std::size_t bins) {
  if (records.empty()) throw ConfigError("build_report: no records");

  std::map<std::string, std::vector<PredictionRecord>> by_mask;
  ScoreTable scores;
  for (const PredictionRecord& r : records) {
    const std::string bits = r.mask.bits();
    by_mask[bits].push_back(r);
    scores[{r.sample_id, bits}] = r.score;
  }

  EvaluationReport rep;
  rep.modality_count = modality_count;
  for (const ModalityMask& mask : enumerate_masks(modality_count)) {
    const auto it = by_mask.find(mask.bits());
    if (it == by_mask.end()) continue;
    const std::vector<PredictionRecord>& group = it->second;
    EvalRow row;
    row.mask_bits = mask.bits();
    row.n = group.size();
    row.score = accuracy(group);
    row.ece = ece(group, bins);
    row.sce = sce(group, bins);
    row.mean_gating.assign(modality_count, 0.0);
    for (const PredictionRecord& r : group) {
      for (std::size_t m = 0; m < modality_count; ++m) {
        row.mean_gating[m] += r.gating[m];
      }
    }
    for (double& w : row.mean_gating) {
      w /= static_cast<double>(group.size());
    }
    rep.rows.push_back(std::move(row));
  }
  rep.cr = counterintuitive_rate(scores, modality_count);
  return rep;
}

}  // namespace mofelab
