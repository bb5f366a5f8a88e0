#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mofelab/mask.hpp"

namespace mofelab {

// Gaussian class-conditional generator: class c uniform, modality m features
// = centroid mu_{c,m} + sigma_m * N(0, I). The closed-form posterior over
// classes is the Bayes oracle for every modality subset.
struct SynthConfig {
  std::size_t modality_count = 3;
  std::size_t class_count = 4;
  std::vector<std::size_t> dims;  // one entry per modality
  std::vector<double> sigma;      // per-modality noise scale
  double centroid_scale = 1.0;
  std::size_t n_train = 600;
  std::size_t n_val = 200;
  std::size_t n_test = 400;
  std::uint64_t seed = 1;

  void validate() const;  // throws ConfigError
};

struct MultimodalSample {
  std::vector<std::vector<double>> features;
  std::size_t label = 0;
};

enum class Split { train, val, test };
const char* split_name(Split s);
Split parse_split(const std::string& name);

struct Dataset {
  std::vector<MultimodalSample> samples;
  Split split = Split::train;
  std::size_t modality_count = 0;
  std::size_t class_count = 0;
  std::vector<std::size_t> dims;
  // Present on generated datasets; loaded files do not carry it.
  std::optional<SynthConfig> provenance;

  std::size_t size() const { return samples.size(); }
};

struct SynthBundle {
  Dataset train, val, test;
};

// Class-by-modality centroid grid, deterministic per config seed.
// centroids[c][m] has length dims[m].
std::vector<std::vector<std::vector<double>>> make_centroids(
    const SynthConfig& cfg);

SynthBundle generate(const SynthConfig& cfg);

// Exact Gaussian class posterior using only the present modalities.
class BayesOracle {
 public:
  explicit BayesOracle(const SynthConfig& cfg);
  std::vector<double> posterior(const MultimodalSample& sample,
                                const ModalityMask& mask) const;

 private:
  SynthConfig cfg_;
  std::vector<std::vector<std::vector<double>>> centroids_;
};

std::vector<double> bayes_posterior(const SynthConfig& cfg,
                                    const MultimodalSample& sample,
                                    const ModalityMask& mask);

// Text dataset format, bit-exact round-trip:
//   MMDS1
//   M=<M> C=<C> N=<N> dims=<d1,...,dM> split=<tag>
//   then per sample: one label line, then one line per modality of
//   space-separated shortest-round-trip decimal floats.
void save_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Shortest decimal rendering whose round-trip is bit-exact (the float format
// used by the dataset files and the config/manifest echoes).
std::string format_double(double v);

}  // namespace mofelab
