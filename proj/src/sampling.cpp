#include "mofelab/sampling.hpp"

#include <bit>
#include <random>

#include "mofelab/error.hpp"

namespace mofelab {

namespace {

ModalityMask mask_from_word(std::uint32_t word, std::size_t m) {
  ModalityMask mask(m);
  for (std::size_t i = 0; i < m; ++i) {
    mask.present[i] = (word >> i) & 1u;
  }
  return mask;
}

// Non-empty strict subsets of `super`, ascending.
std::vector<std::uint32_t> strict_subset_words(std::uint32_t super) {
  std::vector<std::uint32_t> out;
  for (std::uint32_t w = 1; w < super; ++w) {
    if ((w & super) == w) out.push_back(w);
  }
  return out;
}

}  // namespace

PairMode parse_pair_mode(const std::string& name) {
  if (name == "full_vs_sub") return PairMode::full_vs_sub;
  if (name == "nested_random") return PairMode::nested_random;
  throw ConfigError("unknown pair strategy '" + name + "'");
}

const char* pair_mode_name(PairMode mode) {
  switch (mode) {
    case PairMode::full_vs_sub:
      return "full_vs_sub";
    case PairMode::nested_random:
      return "nested_random";
  }
  return "?";
}

MaskPair sample_mask_pair(std::size_t m, PairMode mode, Rng& rng) {
  if (m < 2) {
    throw ConfigError("sample_mask_pair: need at least 2 modalities");
  }
  if (m > 16) {
    throw ConfigError("sample_mask_pair: modality count too large");
  }
  const std::uint32_t full = (1u << m) - 1u;

  std::uint32_t plus_word;
  if (mode == PairMode::full_vs_sub) {
    plus_word = full;
  } else {
    // Uniform over subsets of size >= 2.
    std::vector<std::uint32_t> eligible;
    for (std::uint32_t w = 1; w <= full; ++w) {
      if (std::popcount(w) >= 2) eligible.push_back(w);
    }
    std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
    plus_word = eligible[pick(rng)];
  }

  const std::vector<std::uint32_t> subs = strict_subset_words(plus_word);
  std::uniform_int_distribution<std::size_t> pick(0, subs.size() - 1);
  const std::uint32_t minus_word = subs[pick(rng)];

  return MaskPair{mask_from_word(plus_word, m), mask_from_word(minus_word, m)};
}

std::vector<ModalityMask> enumerate_masks(std::size_t m) {
  if (m < 1 || m > 16) {
    throw ConfigError("enumerate_masks: modality count out of range");
  }
  std::vector<ModalityMask> out;
  const std::uint32_t full = (1u << m) - 1u;
  out.reserve(full);
  for (std::uint32_t w = 1; w <= full; ++w) {
    out.push_back(mask_from_word(w, m));
  }
  return out;
}

std::vector<MaskPair> enumerate_mofe_pairs(std::size_t m) {
  if (m < 1 || m > 10) {
    throw ConfigError("enumerate_mofe_pairs: modality count out of range");
  }
  std::vector<MaskPair> out;
  const std::uint32_t full = (1u << m) - 1u;
  for (std::uint32_t a = 1; a <= full; ++a) {
    for (std::uint32_t b : strict_subset_words(a)) {
      out.push_back(MaskPair{mask_from_word(a, m), mask_from_word(b, m)});
    }
  }
  return out;
}

}  // namespace mofelab
