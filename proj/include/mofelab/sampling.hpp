#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mofelab/mask.hpp"
#include "mofelab/rng.hpp"

namespace mofelab {

// Training-time branch pair: the fewer-modality branch is always a non-empty
// strict subset of the more-modality branch.
struct MaskPair {
  ModalityMask plus;
  ModalityMask minus;
};

enum class PairMode {
  full_vs_sub,    // plus = all present, minus uniform over strict subsets
  nested_random,  // plus uniform over size >= 2 subsets, minus nested inside
};

PairMode parse_pair_mode(const std::string& name);
const char* pair_mode_name(PairMode mode);

// Draws one pair; deterministic given the generator state. Throws ConfigError
// when m < 2.
MaskPair sample_mask_pair(std::size_t m, PairMode mode, Rng& rng);

// All 2^m - 1 non-empty masks in binary ascending order (bit i = modality i).
// Valid for 1 <= m <= 16.
std::vector<ModalityMask> enumerate_masks(std::size_t m);

// Every (A, B) with B a non-empty strict subset of A, in ascending (A, B)
// order; count = sum over non-empty A of (2^|A| - 2). Valid for 1 <= m <= 10.
std::vector<MaskPair> enumerate_mofe_pairs(std::size_t m);

}  // namespace mofelab
