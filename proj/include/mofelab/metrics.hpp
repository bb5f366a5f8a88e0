#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mofelab/mask.hpp"

namespace mofelab {

// One evaluated (sample, mask) cell.
struct PredictionRecord {
  std::size_t sample_id = 0;
  ModalityMask mask;
  std::vector<double> probs;  // softmax of the mixed logits, length T
  std::size_t predicted = 0;
  std::size_t label = 0;
  double score = 0.0;          // per-sample P(x) in [0,1]
  std::vector<double> gating;  // per-modality weight, exactly 0 when masked
};

// Fraction of records with predicted == label. Throws ConfigError on empty
// input.
double accuracy(const std::vector<PredictionRecord>& records);

// 2|A n B| / (|A| + |B|) over binary maps; 1.0 when both maps are empty.
double dice_score(std::span<const double> pred_map,
                  std::span<const double> true_map);

// Calibration binning: equal-width bins over (0,1], left-open right-closed;
// a probability of exactly 0 lands in the first bin.
std::size_t calibration_bin(double p, std::size_t bins);

double ece(const std::vector<PredictionRecord>& records, std::size_t bins);
double sce(const std::vector<PredictionRecord>& records, std::size_t bins);

struct CalibrationBin {
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double mean_accuracy = 0.0;
};

struct CalibrationReport {
  double ece = 0.0;
  double sce = 0.0;
  std::size_t bins = 20;
  std::vector<CalibrationBin> per_bin;  // confidence binning (the ECE view)
};

CalibrationReport calibration_report(
    const std::vector<PredictionRecord>& records, std::size_t bins);

// Score table for the counterintuitive rate: (sample id, mask bitstring) -> P.
using ScoreKey = std::pair<std::size_t, std::string>;
using ScoreTable = std::map<ScoreKey, double>;

// Average over samples of the fraction of (superset, strict subset) mask
// pairs where the subset strictly outscores the superset. Throws DataError if
// any (sample, mask) entry is missing.
double counterintuitive_rate(const ScoreTable& scores, std::size_t m);

// Mean gating weight per modality, grouped by mask bitstring. Throws
// ConfigError on empty input.
std::map<std::string, std::vector<double>> avg_gating_weights(
    const std::vector<PredictionRecord>& records);

// -sum p ln p with 0 ln 0 = 0. Throws ConfigError unless the probabilities
// sum to 1 within 1e-6.
double predictive_entropy(std::span<const double> probs);

struct EvalRow {
  std::string mask_bits;
  std::size_t n = 0;
  double score = 0.0;  // accuracy (classification) or mean Dice
  double ece = 0.0;
  double sce = 0.0;
  std::vector<double> mean_gating;
};

struct EvaluationReport {
  std::size_t modality_count = 0;
  std::vector<EvalRow> rows;  // one per evaluated mask
  double cr = 0.0;

  // header `mask,n,score,ece,sce,w_0,...,w_{M-1}`, one row per mask, 6-decimal
  // floats, then a final `CR,<value>` line.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

}  // namespace mofelab
