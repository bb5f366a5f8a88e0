#include "mofelab/mask.hpp"

#include "mofelab/error.hpp"

namespace mofelab {

ModalityMask ModalityMask::full(std::size_t m) {
  ModalityMask mask(m);
  for (std::size_t i = 0; i < m; ++i) mask.present[i] = 1;
  return mask;
}

ModalityMask ModalityMask::single(std::size_t m, std::size_t index) {
  ModalityMask mask(m);
  if (index >= m) throw ConfigError("mask: modality index out of range");
  mask.present[index] = 1;
  return mask;
}

ModalityMask ModalityMask::from_bits(const std::string& s) {
  ModalityMask mask(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '1') {
      mask.present[i] = 1;
    } else if (s[i] != '0') {
      throw ConfigError("mask: bitstring must be 0/1, got '" + s + "'");
    }
  }
  return mask;
}

std::size_t ModalityMask::count() const {
  std::size_t n = 0;
  for (std::uint8_t p : present) n += p;
  return n;
}

bool ModalityMask::is_subset_of(const ModalityMask& other) const {
  if (present.size() != other.present.size()) return false;
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (present[i] && !other.present[i]) return false;
  }
  return true;
}

bool ModalityMask::is_strict_subset_of(const ModalityMask& other) const {
  return is_subset_of(other) && count() < other.count();
}

std::string ModalityMask::bits() const {
  std::string s(present.size(), '0');
  for (std::size_t i = 0; i < present.size(); ++i) {
    if (present[i]) s[i] = '1';
  }
  return s;
}

void validate_mask(const ModalityMask& mask, std::size_t m) {
  if (mask.size() != m) {
    throw ConfigError("mask: length " + std::to_string(mask.size()) +
                      " does not match modality count " + std::to_string(m));
  }
  if (!mask.any()) throw ConfigError("mask: at least one modality must be present");
}

}  // namespace mofelab
