#include "mofelab/dmome.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "mofelab/error.hpp"
#include "mofelab/kernels/kernels.hpp"
#include "mofelab/rng.hpp"

namespace mofelab {

namespace {

constexpr std::uint64_t kGateSeedTag = 0x67617465;  // distinct stream per part

std::vector<std::size_t> layer_dims(std::size_t in,
                                    const std::vector<std::size_t>& hidden,
                                    std::size_t out) {
  std::vector<std::size_t> dims;
  dims.push_back(in);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(out);
  return dims;
}

}  // namespace

ModalityMask MixtureOutput::mask() const {
  ModalityMask m(expert_logits.size());
  for (std::size_t i = 0; i < expert_logits.size(); ++i) {
    m.set(i, expert_logits[i].has_value());
  }
  return m;
}

std::size_t DmomeModel::concat_dim() const {
  std::size_t n = 0;
  for (std::size_t d : modality_dims) n += d;
  return n;
}

std::size_t DmomeModel::gate_in_dim() const {
  std::size_t n = gate_input == GateInput::raw
                      ? concat_dim()
                      : modality_count() * out_dim();
  if (gate_sees_mask) n += modality_count();
  return n;
}

DmomeModel dmome_init(const std::vector<std::size_t>& modality_dims,
                      std::size_t out_dim, std::size_t task_count,
                      const std::vector<std::size_t>& expert_hidden,
                      const std::vector<std::size_t>& gate_hidden,
                      std::uint64_t seed, GateInput gate_input,
                      bool gate_sees_mask) {
  if (modality_dims.size() < 2) {
    throw ConfigError("dmome: need at least 2 modalities, got " +
                      std::to_string(modality_dims.size()));
  }
  if (out_dim == 0) throw ConfigError("dmome: output dim must be positive");
  if (task_count == 0) throw ConfigError("dmome: task count must be positive");

  DmomeModel model;
  model.modality_dims = modality_dims;
  model.task_count = task_count;
  model.gate_input = gate_input;
  model.gate_sees_mask = gate_sees_mask;
  for (std::size_t m = 0; m < modality_dims.size(); ++m) {
    model.experts.push_back(mlp_init(
        layer_dims(modality_dims[m], expert_hidden, out_dim),
        derive_seed(seed, m + 1)));
  }
  model.gate = mlp_init(
      layer_dims(model.gate_in_dim(), gate_hidden,
                 model.modality_count() * task_count),
      derive_seed(seed, kGateSeedTag));
  return model;
}

std::vector<double> zero_fill_concat(
    const std::vector<std::vector<double>>& features,
    const std::vector<std::size_t>& dims, const ModalityMask& mask) {
  validate_mask(mask, dims.size());
  if (features.size() != dims.size()) {
    throw ShapeError("zero_fill_concat: sample has " +
                     std::to_string(features.size()) + " modalities, expected " +
                     std::to_string(dims.size()));
  }
  std::size_t total = 0;
  for (std::size_t d : dims) total += d;
  std::vector<double> out(total, 0.0);
  std::size_t off = 0;
  for (std::size_t m = 0; m < dims.size(); ++m) {
    if (mask.at(m)) {
      if (features[m].size() != dims[m]) {
        throw ShapeError("zero_fill_concat: modality " + std::to_string(m) +
                         " has dim " + std::to_string(features[m].size()) +
                         ", expected " + std::to_string(dims[m]));
      }
      std::copy(features[m].begin(), features[m].end(), out.begin() + off);
    }
    off += dims[m];
  }
  return out;
}

GatingWeights uniform_gate_weights(std::size_t modality_count,
                                   std::size_t task_count,
                                   const ModalityMask& mask) {
  validate_mask(mask, modality_count);
  if (task_count == 0) {
    throw ShapeError("uniform_gate_weights: task count must be positive");
  }
  GatingWeights gw;
  gw.modality_count = modality_count;
  gw.task_count = task_count;
  gw.source_logits.assign(modality_count * task_count, 0.0);
  gw.weights.assign(modality_count * task_count, 0.0);
  const double w = 1.0 / static_cast<double>(mask.count());
  for (std::size_t m = 0; m < modality_count; ++m) {
    if (!mask.at(m)) continue;
    for (std::size_t k = 0; k < task_count; ++k) {
      gw.weights[m * task_count + k] = w;
    }
  }
  return gw;
}

GatingWeights masked_gate_weights(const std::vector<double>& gate_logits,
                                  std::size_t task_count,
                                  const ModalityMask& mask) {
  const std::size_t m_count = mask.size();
  validate_mask(mask, m_count);
  if (task_count == 0 || gate_logits.size() != m_count * task_count) {
    throw ShapeError("masked_gate_weights: logit count " +
                     std::to_string(gate_logits.size()) + " != M*K");
  }
  GatingWeights gw;
  gw.modality_count = m_count;
  gw.task_count = task_count;
  gw.source_logits = gate_logits;
  gw.weights.assign(m_count * task_count, 0.0);

  for (std::size_t k = 0; k < task_count; ++k) {
    double maxv = -std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < m_count; ++m) {
      if (!mask.at(m)) continue;
      const double g = gate_logits[m * task_count + k];
      if (!std::isfinite(g)) {
        throw NumericError("masked_gate_weights: non-finite gate logit");
      }
      maxv = std::max(maxv, g);
    }
    double denom = 0.0;
    for (std::size_t m = 0; m < m_count; ++m) {
      if (!mask.at(m)) continue;
      const double e = std::exp(gate_logits[m * task_count + k] - maxv);
      gw.weights[m * task_count + k] = e;
      denom += e;
    }
    for (std::size_t m = 0; m < m_count; ++m) {
      if (mask.at(m)) gw.weights[m * task_count + k] /= denom;
    }
  }
  return gw;
}

MixtureOutput dmome_forward(const DmomeModel& model,
                            const std::vector<std::vector<double>>& features,
                            const ModalityMask& mask) {
  return dmome_forward_trace(model, features, mask).out;
}

DmomeTrace dmome_forward_trace(const DmomeModel& model,
                               const std::vector<std::vector<double>>& features,
                               const ModalityMask& mask) {
  const std::size_t m_count = model.modality_count();
  validate_mask(mask, m_count);
  const std::size_t t_dim = model.out_dim();

  DmomeTrace tr;
  tr.mask = mask;
  tr.expert_traces.resize(m_count);

  // Only present experts are evaluated; masked slots stay absent.
  for (std::size_t m = 0; m < m_count; ++m) {
    if (mask.at(m)) {
      tr.expert_traces[m] = mlp_forward_trace(model.experts[m], features[m]);
    }
  }

  if (model.uniform_gating) {
    // Static fusion: the gate network is never evaluated.
    tr.out.gating = uniform_gate_weights(m_count, model.task_count, mask);
  } else {
    if (model.gate_input == GateInput::raw) {
      tr.gate_in = zero_fill_concat(features, model.modality_dims, mask);
    } else {
      // Zero-filled concatenation of the (detached) expert logits.
      tr.gate_in.assign(m_count * t_dim, 0.0);
      for (std::size_t m = 0; m < m_count; ++m) {
        if (mask.at(m)) {
          std::copy(tr.expert_traces[m]->out.begin(),
                    tr.expert_traces[m]->out.end(),
                    tr.gate_in.begin() + m * t_dim);
        }
      }
    }
    if (model.gate_sees_mask) {
      for (std::size_t m = 0; m < m_count; ++m) {
        tr.gate_in.push_back(mask.at(m) ? 1.0 : 0.0);
      }
    }

    tr.gate_trace = mlp_forward_trace(model.gate, tr.gate_in);
    tr.out.gating =
        masked_gate_weights(tr.gate_trace.out, model.task_count, mask);
  }

  tr.out.expert_logits.resize(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    if (mask.at(m)) tr.out.expert_logits[m] = tr.expert_traces[m]->out;
  }

  tr.out.mixed.assign(model.task_count, std::vector<double>(t_dim, 0.0));
  for (std::size_t k = 0; k < model.task_count; ++k) {
    for (std::size_t m = 0; m < m_count; ++m) {
      if (!mask.at(m)) continue;
      kernels::axpy(tr.out.gating.at(m, k), tr.expert_traces[m]->out.data(),
                    tr.out.mixed[k].data(), t_dim);
    }
  }
  return tr;
}

DmomeGrads zero_dmome_grads(const DmomeModel& model) {
  DmomeGrads g;
  for (const Mlp& e : model.experts) g.experts.push_back(zero_grads(e));
  g.gate = zero_grads(model.gate);
  return g;
}

void dmome_backward(const DmomeModel& model, const DmomeTrace& trace,
                    const std::vector<std::vector<double>>& dmixed,
                    DmomeGrads& grads) {
  const std::size_t m_count = model.modality_count();
  const std::size_t k_count = model.task_count;
  const std::size_t t_dim = model.out_dim();
  if (dmixed.size() != k_count) {
    throw ShapeError("dmome_backward: need one dmixed vector per task");
  }

  const GatingWeights& gw = trace.out.gating;

  // d(loss)/d(gating weight) and d(loss)/d(expert logits).
  std::vector<double> dweights(m_count * k_count, 0.0);
  std::vector<std::vector<double>> dexpert(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    if (trace.mask.at(m)) dexpert[m].assign(t_dim, 0.0);
  }
  for (std::size_t k = 0; k < k_count; ++k) {
    if (dmixed[k].size() != t_dim) {
      throw ShapeError("dmome_backward: dmixed length mismatch");
    }
    for (std::size_t m = 0; m < m_count; ++m) {
      if (!trace.mask.at(m)) continue;
      const std::vector<double>& o_m = trace.expert_traces[m]->out;
      dweights[m * k_count + k] =
          kernels::dot(o_m.data(), dmixed[k].data(), t_dim);
      kernels::axpy(gw.at(m, k), dmixed[k].data(), dexpert[m].data(), t_dim);
    }
  }

  if (!model.uniform_gating) {
    // Softmax backward per task column, restricted to present modalities:
    // dg_m = w_m * (dw_m - sum_m' w_m' dw_m').
    std::vector<double> dgate_logits(m_count * k_count, 0.0);
    for (std::size_t k = 0; k < k_count; ++k) {
      double s = 0.0;
      for (std::size_t m = 0; m < m_count; ++m) {
        if (trace.mask.at(m)) s += gw.at(m, k) * dweights[m * k_count + k];
      }
      for (std::size_t m = 0; m < m_count; ++m) {
        if (!trace.mask.at(m)) continue;
        dgate_logits[m * k_count + k] =
            gw.at(m, k) * (dweights[m * k_count + k] - s);
      }
    }

    // The gate input is either raw features or detached expert logits, so
    // the returned d(input) is dropped in both cases.
    mlp_backward(model.gate, trace.gate_trace, dgate_logits, grads.gate);
  }

  for (std::size_t m = 0; m < m_count; ++m) {
    if (!trace.mask.at(m)) continue;
    mlp_backward(model.experts[m], *trace.expert_traces[m], dexpert[m],
                 grads.experts[m]);
  }
}

namespace {

CheckpointEntry entry_from_mlp(const std::string& name, const Mlp& m) {
  CheckpointEntry e;
  e.name = name;
  e.dims = m.dims;
  e.params = flatten_params(m);
  return e;
}

Mlp mlp_from_entry(const CheckpointEntry& e) {
  if (e.dims.size() < 2) {
    throw DataError("checkpoint: entry " + e.name + " has no layer dims");
  }
  Mlp m;
  m.dims = e.dims;
  for (std::size_t l = 0; l + 1 < e.dims.size(); ++l) {
    m.weights.emplace_back(e.dims[l + 1] * e.dims[l], 0.0);
    m.biases.emplace_back(e.dims[l + 1], 0.0);
  }
  if (e.params.size() != m.param_count()) {
    throw DataError("checkpoint: entry " + e.name + " carries " +
                    std::to_string(e.params.size()) + " params, expected " +
                    std::to_string(m.param_count()));
  }
  unflatten_params(m, e.params);
  return m;
}

}  // namespace

Checkpoint model_to_checkpoint(const DmomeModel& model) {
  Checkpoint ck;
  for (std::size_t m = 0; m < model.modality_count(); ++m) {
    ck.entries.push_back(
        entry_from_mlp("expert_" + std::to_string(m), model.experts[m]));
  }
  ck.entries.push_back(entry_from_mlp("gate", model.gate));
  ck.meta = {model.modality_count(), model.task_count,
             static_cast<std::uint64_t>(model.gate_input),
             model.gate_sees_mask ? 1u : 0u, model.uniform_gating ? 1u : 0u};
  for (std::size_t d : model.modality_dims) ck.meta.push_back(d);
  return ck;
}

DmomeModel model_from_checkpoint(const Checkpoint& ck) {
  if (ck.meta.size() < 5) {
    throw DataError("checkpoint: missing mixture-model meta words");
  }
  const std::size_t m_count = ck.meta[0];
  if (m_count < 2 || ck.meta.size() != 5 + m_count) {
    throw DataError("checkpoint: inconsistent modality count in meta");
  }
  DmomeModel model;
  model.task_count = ck.meta[1];
  model.gate_input = ck.meta[2] == 0 ? GateInput::raw : GateInput::expert_features;
  model.gate_sees_mask = ck.meta[3] != 0;
  model.uniform_gating = ck.meta[4] != 0;
  for (std::size_t m = 0; m < m_count; ++m) {
    model.modality_dims.push_back(ck.meta[5 + m]);
  }
  for (std::size_t m = 0; m < m_count; ++m) {
    const CheckpointEntry* e = ck.find("expert_" + std::to_string(m));
    if (e == nullptr) {
      throw DataError("checkpoint: missing entry expert_" + std::to_string(m));
    }
    model.experts.push_back(mlp_from_entry(*e));
    if (model.experts.back().in_dim() != model.modality_dims[m]) {
      throw DataError("checkpoint: expert_" + std::to_string(m) +
                      " input dim disagrees with meta dims");
    }
  }
  const CheckpointEntry* g = ck.find("gate");
  if (g == nullptr) throw DataError("checkpoint: missing entry gate");
  model.gate = mlp_from_entry(*g);
  if (model.gate.in_dim() != model.gate_in_dim() ||
      model.gate.out_dim() != m_count * model.task_count) {
    throw DataError("checkpoint: gate shape disagrees with meta words");
  }
  for (const Mlp& e : model.experts) {
    if (e.out_dim() != model.out_dim()) {
      throw DataError("checkpoint: experts disagree on output dim");
    }
  }
  return model;
}

}  // namespace mofelab
