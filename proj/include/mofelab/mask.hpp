#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace mofelab {

// Availability pattern of the M modalities for one branch/evaluation. The
// all-absent mask is invalid everywhere; call sites enforce via validate().
struct ModalityMask {
  std::vector<std::uint8_t> present;

  ModalityMask() = default;
  explicit ModalityMask(std::size_t m) : present(m, 0) {}

  static ModalityMask full(std::size_t m);
  static ModalityMask single(std::size_t m, std::size_t index);
  // Parses "1011" (index 0 leftmost), the same rendering bits() emits.
  static ModalityMask from_bits(const std::string& s);

  std::size_t size() const { return present.size(); }
  bool at(std::size_t i) const { return present[i] != 0; }
  void set(std::size_t i, bool v) { present[i] = v ? 1 : 0; }

  std::size_t count() const;
  bool any() const { return count() > 0; }
  bool is_subset_of(const ModalityMask& other) const;
  bool is_strict_subset_of(const ModalityMask& other) const;

  std::string bits() const;

  friend bool operator==(const ModalityMask&, const ModalityMask&) = default;
};

// Throws ConfigError unless the mask has length m and at least one present
// modality.
void validate_mask(const ModalityMask& mask, std::size_t m);

}  // namespace mofelab
