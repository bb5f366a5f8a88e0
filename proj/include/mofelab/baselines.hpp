#pragma once

#include <string>

#include "mofelab/losses.hpp"

namespace mofelab {

// Ablation axes sharing one pipeline: the full model, the same model without
// the ranking term, the ranking term swapped for the label-free confidence
// hinge, and a static uniform-fusion control without a trained gate.
enum class Variant {
  simmlm,
  no_mofe,
  conf_hinge,
  static_mean,
};

Variant parse_variant(const std::string& name);
const char* variant_name(Variant v);

// Rewrites the loss flags for the chosen variant. static_mean additionally
// replaces the gate by uniform weights at model-build time.
void apply_variant(Variant v, LossSpec& loss);

}  // namespace mofelab
