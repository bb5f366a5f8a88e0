// Backend selection. This file must stay free of SIMD compile flags so the
// detection code itself runs on any CPU; the AVX2 table lives in a separately
// flagged translation unit and is only dereferenced after detection.

#include <cstdlib>
#include <string>

#include "mofelab/error.hpp"
#include "mofelab/kernels/kernels.hpp"

namespace mofelab::kernels {

const KernelTable* scalar_table();
const KernelTable* avx2_table();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend parse_backend(const std::string& name) {
  if (name == "scalar") return Backend::scalar;
  if (name == "avx2") return Backend::avx2;
  throw ConfigError("MOFELAB_KERNELS: unknown backend '" + name +
                    "' (expected scalar or avx2)");
}

Backend detect_backend() {
  if (const char* env = std::getenv("MOFELAB_KERNELS")) {
    const Backend b = parse_backend(env);
    if (!backend_supported(b)) {
      throw ConfigError(std::string("MOFELAB_KERNELS: backend '") +
                        backend_name(b) + "' not supported on this CPU");
    }
    return b;
  }
  return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

Backend& backend_slot() {
  static Backend b = detect_backend();
  return b;
}

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
  }
  return "?";
}

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
      return cpu_has_avx2() && avx2_table() != nullptr;
  }
  return false;
}

Backend active_backend() { return backend_slot(); }

void set_backend(Backend b) {
  if (!backend_supported(b)) {
    throw ConfigError(std::string("backend '") + backend_name(b) +
                      "' not supported on this CPU");
  }
  backend_slot() = b;
}

const KernelTable& table(Backend b) {
  if (b == Backend::avx2) {
    const KernelTable* t = avx2_table();
    if (t == nullptr) {
      throw ConfigError("avx2 backend not compiled in");
    }
    return *t;
  }
  return *scalar_table();
}

}  // namespace mofelab::kernels
