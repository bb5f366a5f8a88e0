#include "mofelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "mofelab/error.hpp"
#include "mofelab/sampling.hpp"

namespace mofelab {

namespace {

void require_nonempty(const std::vector<PredictionRecord>& records,
                      const char* who) {
  if (records.empty()) {
    throw ConfigError(std::string(who) + ": no records");
  }
}

double max_confidence(const PredictionRecord& r) {
  return *std::max_element(r.probs.begin(), r.probs.end());
}

}  // namespace

double accuracy(const std::vector<PredictionRecord>& records) {
  require_nonempty(records, "accuracy");
  std::size_t correct = 0;
  for (const PredictionRecord& r : records) {
    if (r.predicted == r.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(records.size());
}

double dice_score(std::span<const double> pred_map,
                  std::span<const double> true_map) {
  if (pred_map.size() != true_map.size()) {
    throw ShapeError("dice_score: map lengths differ");
  }
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < pred_map.size(); ++i) {
    inter += pred_map[i] * true_map[i];
    total += pred_map[i] + true_map[i];
  }
  if (total == 0.0) return 1.0;  // correctly predicted absence
  return 2.0 * inter / total;
}

std::size_t calibration_bin(double p, std::size_t bins) {
  // (b/B, (b+1)/B] per bin; p = 0 goes to bin 0.
  const double scaled = std::ceil(p * static_cast<double>(bins)) - 1.0;
  if (scaled < 0.0) return 0;
  const std::size_t b = static_cast<std::size_t>(scaled);
  return b >= bins ? bins - 1 : b;
}

double ece(const std::vector<PredictionRecord>& records, std::size_t bins) {
  require_nonempty(records, "ece");
  if (bins == 0) throw ConfigError("ece: bins must be positive");
  std::vector<std::size_t> n(bins, 0);
  std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
  for (const PredictionRecord& r : records) {
    const std::size_t b = calibration_bin(max_confidence(r), bins);
    n[b] += 1;
    conf_sum[b] += max_confidence(r);
    acc_sum[b] += r.predicted == r.label ? 1.0 : 0.0;
  }
  double e = 0.0;
  const double total = static_cast<double>(records.size());
  for (std::size_t b = 0; b < bins; ++b) {
    if (n[b] == 0) continue;
    const double nb = static_cast<double>(n[b]);
    e += (nb / total) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
  }
  return e;
}

double sce(const std::vector<PredictionRecord>& records, std::size_t bins) {
  require_nonempty(records, "sce");
  if (bins == 0) throw ConfigError("sce: bins must be positive");
  const std::size_t t_dim = records.front().probs.size();
  for (const PredictionRecord& r : records) {
    if (r.probs.size() != t_dim) {
      throw ShapeError("sce: inconsistent probability vector lengths");
    }
  }
  const double total = static_cast<double>(records.size());
  double s = 0.0;
  for (std::size_t c = 0; c < t_dim; ++c) {
    std::vector<std::size_t> n(bins, 0);
    std::vector<double> conf_sum(bins, 0.0), acc_sum(bins, 0.0);
    for (const PredictionRecord& r : records) {
      const std::size_t b = calibration_bin(r.probs[c], bins);
      n[b] += 1;
      conf_sum[b] += r.probs[c];
      acc_sum[b] += r.label == c ? 1.0 : 0.0;
    }
    for (std::size_t b = 0; b < bins; ++b) {
      if (n[b] == 0) continue;
      const double nb = static_cast<double>(n[b]);
      s += (nb / total) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
    }
  }
  return s / static_cast<double>(t_dim);
}

CalibrationReport calibration_report(
    const std::vector<PredictionRecord>& records, std::size_t bins) {
  CalibrationReport rep;
  rep.bins = bins;
  rep.ece = ece(records, bins);
  rep.sce = sce(records, bins);
  rep.per_bin.resize(bins);
  for (const PredictionRecord& r : records) {
    const std::size_t b = calibration_bin(max_confidence(r), bins);
    CalibrationBin& bin = rep.per_bin[b];
    bin.count += 1;
    bin.mean_confidence += max_confidence(r);
    bin.mean_accuracy += r.predicted == r.label ? 1.0 : 0.0;
  }
  for (CalibrationBin& bin : rep.per_bin) {
    if (bin.count > 0) {
      bin.mean_confidence /= static_cast<double>(bin.count);
      bin.mean_accuracy /= static_cast<double>(bin.count);
    }
  }
  return rep;
}

double counterintuitive_rate(const ScoreTable& scores, std::size_t m) {
  std::set<std::size_t> sample_ids;
  for (const auto& [key, value] : scores) sample_ids.insert(key.first);
  if (sample_ids.empty()) throw ConfigError("counterintuitive_rate: no scores");

  const std::vector<MaskPair> pairs = enumerate_mofe_pairs(m);
  if (pairs.empty()) return 0.0;

  auto lookup = [&scores](std::size_t id, const std::string& bits) {
    const auto it = scores.find({id, bits});
    if (it == scores.end()) {
      throw DataError("counterintuitive_rate: missing score for sample " +
                      std::to_string(id) + " mask " + bits);
    }
    return it->second;
  };

  double total = 0.0;
  for (std::size_t id : sample_ids) {
    std::size_t violations = 0;
    for (const MaskPair& p : pairs) {
      // Strict inequality: ties are not counterintuitive.
      if (lookup(id, p.minus.bits()) > lookup(id, p.plus.bits())) ++violations;
    }
    total += static_cast<double>(violations) / static_cast<double>(pairs.size());
  }
  return total / static_cast<double>(sample_ids.size());
}

std::map<std::string, std::vector<double>> avg_gating_weights(
    const std::vector<PredictionRecord>& records) {
  require_nonempty(records, "avg_gating_weights");
  std::map<std::string, std::vector<double>> sums;
  std::map<std::string, std::size_t> counts;
  for (const PredictionRecord& r : records) {
    const std::string bits = r.mask.bits();
    auto& sum = sums[bits];
    if (sum.empty()) sum.assign(r.gating.size(), 0.0);
    if (sum.size() != r.gating.size()) {
      throw ShapeError("avg_gating_weights: inconsistent weight lengths");
    }
    for (std::size_t i = 0; i < r.gating.size(); ++i) sum[i] += r.gating[i];
    counts[bits] += 1;
  }
  for (auto& [bits, sum] : sums) {
    const double n = static_cast<double>(counts[bits]);
    for (double& v : sum) v /= n;
  }
  return sums;
}

double predictive_entropy(std::span<const double> probs) {
  double total = 0.0;
  for (double p : probs) total += p;
  if (std::abs(total - 1.0) > 1e-6) {
    throw ConfigError("predictive_entropy: probabilities sum to " +
                      std::to_string(total));
  }
  double h = 0.0;
  for (double p : probs) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

std::string EvaluationReport::to_csv() const {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(6);
  out << "mask,n,score,ece,sce";
  for (std::size_t m = 0; m < modality_count; ++m) out << ",w_" << m;
  out << "\n";
  for (const EvalRow& row : rows) {
    out << row.mask_bits << ',' << row.n << ',' << row.score << ',' << row.ece
        << ',' << row.sce;
    for (double w : row.mean_gating) out << ',' << w;
    out << "\n";
  }
  out << "CR," << cr << "\n";
  return out.str();
}

void EvaluationReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("report: cannot open " + path.string());
  out << to_csv();
  if (!out) throw DataError("report: write failed for " + path.string());
}

}  // namespace mofelab
