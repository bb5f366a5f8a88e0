#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mofelab/checkpoint.hpp"
#include "mofelab/mask.hpp"
#include "mofelab/nn.hpp"

namespace mofelab {

// Dynamic mixture of modality experts: M per-modality expert MLPs producing
// task logits of length T, and a gating MLP over the zero-filled feature
// concatenation producing M x K gating logits (K tasks, K=1 by default).
// Gate logits and weights are stored m-major: index = m * K + k.

struct GatingWeights {
  std::size_t modality_count = 0;
  std::size_t task_count = 0;
  std::vector<double> weights;        // M x K; exactly 0 on masked modalities
  std::vector<double> source_logits;  // the raw gate outputs before masking

  double at(std::size_t m, std::size_t k) const {
    return weights[m * task_count + k];
  }
};

struct MixtureOutput {
  // One entry per modality; disengaged (masked) experts are absent, not zero.
  std::vector<std::optional<std::vector<double>>> expert_logits;
  GatingWeights gating;
  std::vector<std::vector<double>> mixed;  // K vectors of length T

  const std::vector<double>& mixed_logits(std::size_t k = 0) const {
    return mixed[k];
  }
  ModalityMask mask() const;
};

enum class GateInput {
  raw,              // zero-filled concatenation of the modality features
  expert_features,  // zero-filled concatenation of (detached) expert logits
};

struct DmomeModel {
  std::vector<Mlp> experts;  // expert m: d_m -> T
  Mlp gate;                  // gate: gate_in_dim() -> M*K
  std::vector<std::size_t> modality_dims;
  std::size_t task_count = 1;
  GateInput gate_input = GateInput::raw;
  bool gate_sees_mask = false;  // append the 0/1 mask to the gate input
  // Static-fusion ablation: ignore the gate and weight every present expert
  // 1/|present|. The gate parameters are carried but never read or trained.
  bool uniform_gating = false;

  std::size_t modality_count() const { return experts.size(); }
  std::size_t out_dim() const { return experts.front().out_dim(); }
  std::size_t concat_dim() const;
  std::size_t gate_in_dim() const;
};

// Builds a model with freshly initialized experts and gate. hidden dims apply
// to every expert; the gate gets its own widths. Throws ConfigError on M < 2
// or inconsistent dims.
DmomeModel dmome_init(const std::vector<std::size_t>& modality_dims,
                      std::size_t out_dim, std::size_t task_count,
                      const std::vector<std::size_t>& expert_hidden,
                      const std::vector<std::size_t>& gate_hidden,
                      std::uint64_t seed, GateInput gate_input = GateInput::raw,
                      bool gate_sees_mask = false);

// Concatenation of all M feature vectors in index order with masked
// modalities zeroed. Throws ConfigError on an all-absent mask, ShapeError on
// dim mismatch.
std::vector<double> zero_fill_concat(
    const std::vector<std::vector<double>>& features,
    const std::vector<std::size_t>& dims, const ModalityMask& mask);

// Per task column k: softmax over the present modalities' logits (stabilized
// by subtracting the per-column max over present entries); masked entries
// exactly 0. Throws NumericError on non-finite logits.
GatingWeights masked_gate_weights(const std::vector<double>& gate_logits,
                                  std::size_t task_count,
                                  const ModalityMask& mask);

// 1/|present| on present modalities, exactly 0 elsewhere (static fusion).
GatingWeights uniform_gate_weights(std::size_t modality_count,
                                   std::size_t task_count,
                                   const ModalityMask& mask);

// Forward pass evaluating ONLY the present experts. mixed[k] =
// sum over present m of w_{m,k} * expert_logits[m].
MixtureOutput dmome_forward(const DmomeModel& model,
                            const std::vector<std::vector<double>>& features,
                            const ModalityMask& mask);

// Forward with the intermediate state needed for the backward pass.
struct DmomeTrace {
  std::vector<std::optional<MlpTrace>> expert_traces;
  MlpTrace gate_trace;
  std::vector<double> gate_in;
  ModalityMask mask;
  MixtureOutput out;
};

DmomeTrace dmome_forward_trace(const DmomeModel& model,
                               const std::vector<std::vector<double>>& features,
                               const ModalityMask& mask);

struct DmomeGrads {
  std::vector<GradientSet> experts;
  GradientSet gate;
};

DmomeGrads zero_dmome_grads(const DmomeModel& model);

// Accumulates d(loss)/d(params) for experts and gate given d(loss)/d(mixed
// logits) per task. Expert-feature gate inputs are treated as detached: no
// gradient flows from the gate input back into the experts.
void dmome_backward(const DmomeModel& model, const DmomeTrace& trace,
                    const std::vector<std::vector<double>>& dmixed,
                    DmomeGrads& grads);

// Checkpoint packing: entries "expert_0".."expert_{M-1}" and "gate", meta
// words [M, K, gate_input, gate_sees_mask, uniform_gating, d_0..d_{M-1}].
// Round-trips bit-exactly; structural mismatches throw DataError.
Checkpoint model_to_checkpoint(const DmomeModel& model);
DmomeModel model_from_checkpoint(const Checkpoint& ck);

}  // namespace mofelab
