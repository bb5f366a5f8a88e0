#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mofelab/data.hpp"
#include "mofelab/dmome.hpp"
#include "mofelab/losses.hpp"
#include "mofelab/metrics.hpp"
#include "mofelab/sampling.hpp"

namespace mofelab {

// Two-stage schedule: stage 1 trains each expert alone on its own modality;
// stage 2 co-trains experts and gate on sampled availability pairs.
struct TrainConfig {
  std::size_t stage1_epochs = 30;
  std::size_t stage2_epochs = 30;
  std::size_t batch_size = 32;
  double stage1_lr = 0.01;
  double stage2_lr = 0.01;
  PairMode pair_mode = PairMode::full_vs_sub;
  LossSpec loss;
  bool freeze_experts = false;  // ablation only; co-training is the default
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based, counted across both stages
  int stage = 1;
  double loss_plus = 0.0;
  double loss_minus = 0.0;  // 0 in stage 1 (no pair yet)
  double mofe = 0.0;
  double total = 0.0;
  std::vector<double> val_accuracy;  // full mask first, then each singleton
};

struct TrainLog {
  std::size_t modality_count = 0;
  std::vector<EpochRecord> records;

  // header `epoch,stage,loss_plus,loss_minus,mofe,total,val_full,
  // val_single_0,...`, one row per epoch, 6-decimal floats.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

// The fixed validation masks logged every epoch: full + all singletons.
std::vector<ModalityMask> validation_panel(std::size_t m);

// Pair objective for one sample: forwards both branches, accumulates
// d(total)/d(params) into grads, returns the loss parts (identical values to
// total_loss on the same branches).
PairLoss pair_loss_and_grad(const DmomeModel& model,
                            const std::vector<std::vector<double>>& features,
                            const ModalityMask& mask_plus,
                            const ModalityMask& mask_minus,
                            const Target& target, const LossSpec& spec,
                            DmomeGrads& grads);

// Stage 1 for a single expert. Reads only features[index] and the labels, so
// the result is invariant to every other modality. Appends one mean train
// loss per epoch to epoch_loss when given.
Mlp train_stage1(const DmomeModel& init, std::size_t index,
                 const Dataset& train, const TrainConfig& cfg,
                 std::vector<double>* epoch_loss = nullptr);

// Stage 2 co-training in place. One MaskPair is drawn per sample per step.
// Returns per-epoch records numbered from first_epoch.
std::vector<EpochRecord> train_stage2(DmomeModel& model, const Dataset& train,
                                      const Dataset& val,
                                      const TrainConfig& cfg,
                                      std::size_t first_epoch = 1);

// Full schedule: stage 1 for every expert (interleaved per epoch so the log
// has an honest validation column per epoch), then stage 2. The per-expert
// parameter trajectories are bit-identical to standalone train_stage1 calls.
TrainLog train_model(DmomeModel& model, const Dataset& train,
                     const Dataset& val, const TrainConfig& cfg);

// Per-sample score recorded for the counterintuitive-rate table.
enum class ScoreMode {
  correctness,      // 0/1 indicator of a correct prediction
  true_class_prob,  // probability assigned to the true class
};
ScoreMode parse_score_mode(const std::string& name);
const char* score_mode_name(ScoreMode mode);

// Read-only grid evaluation: one record per (mask, sample), masks in the
// given order, samples in dataset order. Task head 0 is the one reported.
std::vector<PredictionRecord> evaluate(const DmomeModel& model,
                                       const Dataset& data,
                                       const std::vector<ModalityMask>& masks,
                                       ScoreMode mode = ScoreMode::correctness);

// Aggregates evaluation records into per-mask rows (accuracy, ECE, SCE, mean
// gating) plus the counterintuitive rate. Requires records covering all
// 2^M - 1 masks for every sample (DataError otherwise, from the CR lookup).
EvaluationReport build_report(const std::vector<PredictionRecord>& records,
                              std::size_t modality_count, std::size_t bins);

}  // namespace mofelab
