#include "mofelab/baselines.hpp"

#include "mofelab/error.hpp"

namespace mofelab {

Variant parse_variant(const std::string& name) {
  if (name == "simmlm") return Variant::simmlm;
  if (name == "no_mofe") return Variant::no_mofe;
  if (name == "conf_hinge") return Variant::conf_hinge;
  if (name == "static_mean") return Variant::static_mean;
  throw ConfigError("unknown variant '" + name +
                    "' (expected simmlm, no_mofe, conf_hinge or static_mean)");
}

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::simmlm:
      return "simmlm";
    case Variant::no_mofe:
      return "no_mofe";
    case Variant::conf_hinge:
      return "conf_hinge";
    case Variant::static_mean:
      return "static_mean";
  }
  throw ConfigError("unknown variant value");
}

void apply_variant(Variant v, LossSpec& loss) {
  switch (v) {
    case Variant::simmlm:
      // The full objective as configured.
      break;
    case Variant::no_mofe:
      loss.mofe_enabled = false;
      break;
    case Variant::conf_hinge:
      loss.mofe_enabled = true;
      loss.conf_hinge_term = true;
      break;
    case Variant::static_mean:
      // Loss untouched; the gate swap happens at model build time.
      break;
  }
}

}  // namespace mofelab
