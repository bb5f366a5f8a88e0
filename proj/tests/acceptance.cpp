// End-to-end acceptance gates for the whole pipeline. Each criterion prints
// exactly one PASS/FAIL line; the exit code is the number of failures, so a
// clean run exits 0 and prints eleven PASS lines.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mofelab/baselines.hpp"
#include "mofelab/data.hpp"
#include "mofelab/dmome.hpp"
#include "mofelab/error.hpp"
#include "mofelab/harness.hpp"
#include "mofelab/losses.hpp"
#include "mofelab/metrics.hpp"
#include "mofelab/rng.hpp"
#include "mofelab/sampling.hpp"
#include "mofelab/train.hpp"

using namespace mofelab;
namespace fs = std::filesystem;

namespace {

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                         start_)
        .count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream out;
  out << std::setprecision(digits) << v;
  return out.str();
}

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

double mean_row_field(const EvaluationReport& report, double EvalRow::*field) {
  double sum = 0.0;
  for (const auto& row : report.rows) sum += row.*field;
  return sum / static_cast<double>(report.rows.size());
}

const EvalRow& row_for(const EvaluationReport& report,
                       const std::string& bits) {
  for (const auto& row : report.rows) {
    if (row.mask_bits == bits) return row;
  }
  throw DataError("no report row for mask " + bits);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small fast task used wherever the criterion is about shapes or bytes, not
// learning quality.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.data.modality_count = 2;
  cfg.data.class_count = 3;
  cfg.data.dims = {2, 2};
  cfg.data.sigma = {0.5, 1.5};
  cfg.data.n_train = 60;
  cfg.data.n_val = 30;
  cfg.data.n_test = 40;
  cfg.data.seed = 9;
  cfg.train.seed = 9;
  cfg.train.stage1_epochs = 3;
  cfg.train.stage2_epochs = 3;
  cfg.expert_hidden = {6};
  cfg.gate_hidden = {6};
  return cfg;
}

bool params_bitwise_equal(const DmomeModel& a, const DmomeModel& b) {
  const Checkpoint ca = model_to_checkpoint(a);
  const Checkpoint cb = model_to_checkpoint(b);
  if (ca.entries.size() != cb.entries.size()) return false;
  for (std::size_t e = 0; e < ca.entries.size(); ++e) {
    const auto& pa = ca.entries[e].params;
    const auto& pb = cb.entries[e].params;
    if (pa.size() != pb.size()) return false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
      if (std::bit_cast<std::uint64_t>(pa[i]) !=
          std::bit_cast<std::uint64_t>(pb[i]))
        return false;
    }
  }
  return true;
}

// Independent counterintuitive-rate computation walking mask bit-words
// instead of the library's enumerated pair list.
double brute_force_cr(const ScoreTable& scores, std::size_t m) {
  std::vector<std::size_t> ids;
  for (const auto& [key, value] : scores) {
    if (ids.empty() || ids.back() != key.first) ids.push_back(key.first);
  }
  auto bits_of = [m](std::size_t word) {
    std::string s(m, '0');
    for (std::size_t i = 0; i < m; ++i) {
      if (word & (std::size_t{1} << i)) s[i] = '1';
    }
    return s;
  };
  const std::size_t top = (std::size_t{1} << m);
  double total = 0.0;
  std::size_t pair_count = 0;
  for (std::size_t id : ids) {
    std::size_t violations = 0;
    pair_count = 0;
    for (std::size_t sup = 1; sup < top; ++sup) {
      for (std::size_t sub = 1; sub < top; ++sub) {
        if (sub == sup || (sub & sup) != sub) continue;
        ++pair_count;
        if (scores.at({id, bits_of(sub)}) > scores.at({id, bits_of(sup)})) {
          ++violations;
        }
      }
    }
    total +=
        static_cast<double>(violations) / static_cast<double>(pair_count);
  }
  return total / static_cast<double>(ids.size());
}

PredictionRecord make_record(std::size_t id, const std::vector<double>& probs,
                             std::size_t label) {
  PredictionRecord r;
  r.sample_id = id;
  r.mask = ModalityMask::full(2);
  r.probs = probs;
  r.predicted = static_cast<std::size_t>(
      std::max_element(probs.begin(), probs.end()) - probs.begin());
  r.label = label;
  r.score = r.predicted == label ? 1.0 : 0.0;
  r.gating = {0.5, 0.5};
  return r;
}

// ---------------------------------------------------------------------------
// Criteria
// ---------------------------------------------------------------------------

std::pair<bool, std::string> check_gating_simplex() {
  Timer timer;
  Rng rng = make_rng(2024, 0x73696d706cull);
  std::normal_distribution<double> logit(0.0, 3.0);
  std::uniform_real_distribution<double> shift(-4.0, 4.0);
  std::bernoulli_distribution coin(0.5);

  double worst_sum = 0.0, worst_shift = 0.0;
  bool masked_zero = true;
  for (std::size_t m : {std::size_t{2}, std::size_t{3}, std::size_t{4}}) {
    for (std::size_t k : {std::size_t{1}, std::size_t{2}}) {
      for (int draw = 0; draw < 1000; ++draw) {
        ModalityMask mask(m);
        do {
          for (std::size_t i = 0; i < m; ++i) mask.set(i, coin(rng));
        } while (!mask.any());
        std::vector<double> logits(m * k);
        for (double& x : logits) x = logit(rng);

        const GatingWeights w = masked_gate_weights(logits, k, mask);
        for (std::size_t col = 0; col < k; ++col) {
          double sum = 0.0;
          for (std::size_t mm = 0; mm < m; ++mm) {
            if (mask.at(mm)) {
              sum += w.at(mm, col);
            } else if (w.at(mm, col) != 0.0) {
              masked_zero = false;
            }
          }
          worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
        }

        // Adding a per-column constant to every logit must not move the
        // weights.
        std::vector<double> shifted = logits;
        for (std::size_t col = 0; col < k; ++col) {
          const double c = shift(rng);
          for (std::size_t mm = 0; mm < m; ++mm) shifted[mm * k + col] += c;
        }
        const GatingWeights w2 = masked_gate_weights(shifted, k, mask);
        for (std::size_t i = 0; i < w.weights.size(); ++i) {
          worst_shift =
              std::max(worst_shift, std::abs(w2.weights[i] - w.weights[i]));
        }
      }
    }
  }
  const double elapsed = timer.seconds();
  const bool ok = worst_sum <= 1e-12 && masked_zero && worst_shift <= 1e-12 &&
                  elapsed < 1.0;
  return {ok, "6 shapes x 1000 draws; worst column-sum gap " + fmt(worst_sum) +
                  ", worst shift drift " + fmt(worst_shift) +
                  ", masked weights " +
                  (masked_zero ? "exactly zero" : "NONZERO") + "; " +
                  fmt(elapsed, 3) + " s"};
}

std::pair<bool, std::string> check_gradcheck() {
  Timer timer;
  std::ostringstream out;
  const int rc = run_gradcheck(2024, out);
  const double elapsed = timer.seconds();
  std::string worst = "?";
  const std::string text = out.str();
  if (auto pos = text.find("max relative error "); pos != std::string::npos) {
    const auto start = pos + std::string("max relative error ").size();
    worst = text.substr(start, text.find(' ', start) - start);
  }
  const bool ok = rc == 0 && elapsed < 30.0;
  return {ok, "analytic vs central differences across experts and gate, "
              "hinge active and inactive; max rel err " +
                  worst + "; " + fmt(elapsed, 3) + " s"};
}

std::pair<bool, std::string> check_hinge_exactness() {
  bool grid_exact = true;
  for (int i = 0; i < 10; ++i) {
    for (int j = 0; j < 10; ++j) {
      const double a = -2.25 + 0.5 * i;
      const double b = -2.25 + 0.5 * j;
      if (mofe_loss(a, b) != std::max(0.0, a - b)) grid_exact = false;
    }
  }

  // With the coefficient at zero the ranking machinery must be a true no-op:
  // the whole trajectory matches the disabled path bit for bit.
  ExperimentConfig cfg = tiny_config();
  const SynthBundle bundle = generate(cfg.data);
  ExperimentConfig zero = cfg;
  zero.train.loss.lambda = 0.0;
  zero.train.loss.mofe_enabled = true;
  ExperimentConfig off = cfg;
  off.train.loss.mofe_enabled = false;
  const VariantRun a = run_variant(Variant::simmlm, zero, bundle);
  const VariantRun b = run_variant(Variant::simmlm, off, bundle);
  const bool traj_identical = params_bitwise_equal(a.model, b.model) &&
                              a.log.to_csv() == b.log.to_csv() &&
                              a.report.to_csv() == b.report.to_csv();

  const bool ok = grid_exact && traj_identical;
  return {ok, std::string("10x10 hinge grid ") +
                  (grid_exact ? "exact" : "MISMATCH") +
                  "; zero-coefficient training trajectory " +
                  (traj_identical ? "bit-identical to the disabled path"
                                  : "DIVERGES from the disabled path")};
}

std::pair<bool, std::string> check_cr_oracle() {
  Rng rng = make_rng(2024, 0x6372ull);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> n_samples(1, 5);

  std::size_t tables = 0, exact = 0;
  for (std::size_t m : {std::size_t{2}, std::size_t{3}, std::size_t{4}}) {
    for (int t = 0; t < 50; ++t) {
      ScoreTable scores;
      const std::size_t n = n_samples(rng);
      for (std::size_t id = 0; id < n; ++id) {
        for (const ModalityMask& mask : enumerate_masks(m)) {
          scores[{id, mask.bits()}] = unit(rng);
        }
      }
      ++tables;
      if (counterintuitive_rate(scores, m) == brute_force_cr(scores, m)) {
        ++exact;
      }
    }
  }

  ScoreTable hand;
  hand[{0, "10"}] = 0.6;
  hand[{0, "01"}] = 0.5;
  hand[{0, "11"}] = 0.55;
  const double hand_cr = counterintuitive_rate(hand, 2);

  const bool ok = exact == tables && hand_cr == 0.5;
  return {ok, std::to_string(exact) + "/" + std::to_string(tables) +
                  " random tables exactly match the brute-force count; "
                  "hand case = " +
                  fmt(hand_cr)};
}

std::pair<bool, std::string> check_calibration() {
  // Two records, one bin: mean confidence 0.7, accuracy 0.5, gap 0.2.
  std::vector<PredictionRecord> hand = {make_record(0, {0.8, 0.2}, 0),
                                        make_record(1, {0.6, 0.4}, 1)};
  const double hand_ece = ece(hand, 1);
  const bool hand_ok = std::abs(hand_ece - 0.2) <= 1e-12;

  // Duplication and permutation change nothing.
  std::vector<PredictionRecord> doubled = hand;
  doubled.insert(doubled.end(), hand.begin(), hand.end());
  std::vector<PredictionRecord> reversed(hand.rbegin(), hand.rend());
  const bool invariant =
      std::abs(ece(doubled, 1) - hand_ece) <= 1e-12 &&
      std::abs(ece(reversed, 1) - hand_ece) <= 1e-12 &&
      std::abs(sce(doubled, 10) - sce(hand, 10)) <= 1e-12 &&
      std::abs(sce(reversed, 10) - sce(hand, 10)) <= 1e-12;

  // A grid whose confidence equals its hit rate in every bin stays under
  // half a bin width.
  std::vector<PredictionRecord> grid;
  std::size_t id = 0;
  for (int k = 11; k <= 19; k += 2) {
    const double p = static_cast<double>(k) / 20.0;
    for (int i = 0; i < 20; ++i) {
      const std::size_t label = i < k ? 0 : 1;
      grid.push_back(make_record(id++, {p, 1.0 - p}, label));
    }
  }
  const double grid_ece = ece(grid, 20);
  const bool grid_ok = grid_ece <= 1.0 / 40.0 + 1e-12;

  const bool ok = hand_ok && invariant && grid_ok;
  return {ok, "single-bin hand case " + fmt(hand_ece) +
                  "; duplication/permutation drift <= 1e-12: " +
                  (invariant ? "yes" : "NO") + "; calibrated-grid gap " +
                  fmt(grid_ece) + " <= " + fmt(1.0 / 40.0)};
}

std::pair<bool, std::string> check_bayes_monotonicity() {
  Timer timer;
  ExperimentConfig cfg;  // the standard task
  cfg.data.n_train = 1;
  cfg.data.n_val = 1;
  cfg.data.n_test = 5000;
  const Dataset test = generate(cfg.data).test;
  const BayesOracle oracle(cfg.data);

  const auto masks = enumerate_masks(cfg.data.modality_count);
  std::vector<double> acc(masks.size(), 0.0);
  for (std::size_t i = 0; i < masks.size(); ++i) {
    std::size_t hits = 0;
    for (const MultimodalSample& s : test.samples) {
      const auto post = oracle.posterior(s, masks[i]);
      const std::size_t pred = static_cast<std::size_t>(
          std::max_element(post.begin(), post.end()) - post.begin());
      hits += pred == s.label;
    }
    acc[i] = static_cast<double>(hits) / static_cast<double>(test.size());
  }

  double worst_gap = 0.0;  // how far a superset falls below a subset
  for (std::size_t i = 0; i < masks.size(); ++i) {
    for (std::size_t j = 0; j < masks.size(); ++j) {
      if (masks[j].is_strict_subset_of(masks[i])) {
        worst_gap = std::max(worst_gap, acc[j] - acc[i]);
      }
    }
  }
  const double elapsed = timer.seconds();
  const bool ok = worst_gap <= 0.005 && elapsed < 10.0;
  return {ok, "exact posterior on 5000 samples, all 7 masks; worst "
              "superset-below-subset gap " +
                  fmt(worst_gap) + " (allowed 0.005); " + fmt(elapsed, 3) +
                  " s"};
}

// Shared by the two trend criteria and the availability criterion: paired
// runs with and without the ranking term on the standard task.
struct PairedRuns {
  std::vector<double> cr_ranked, cr_plain;
  std::vector<double> ece_ranked, ece_plain;
  std::vector<EvaluationReport> ranked_reports;
  double elapsed = 0.0;
};

PairedRuns run_paired_trends() {
  Timer timer;
  PairedRuns out;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ExperimentConfig cfg;  // standard task, default coefficient
    cfg.data.seed = seed;
    cfg.train.seed = seed;
    const SynthBundle bundle = generate(cfg.data);

    ExperimentConfig plain = cfg;
    plain.train.loss.lambda = 0.0;

    const VariantRun ranked = run_variant(Variant::simmlm, cfg, bundle);
    const VariantRun zero = run_variant(Variant::simmlm, plain, bundle);

    out.cr_ranked.push_back(ranked.report.cr);
    out.cr_plain.push_back(zero.report.cr);
    out.ece_ranked.push_back(mean_row_field(ranked.report, &EvalRow::ece));
    out.ece_plain.push_back(mean_row_field(zero.report, &EvalRow::ece));
    out.ranked_reports.push_back(ranked.report);
  }
  out.elapsed = timer.seconds();
  return out;
}

std::pair<bool, std::string> check_cr_trend(const PairedRuns& runs) {
  const double ranked = mean_of(runs.cr_ranked);
  const double plain = mean_of(runs.cr_plain);
  const bool ok = ranked <= plain && runs.elapsed < 300.0;
  return {ok, "5 paired seeds; mean counterintuitive rate " + fmt(ranked) +
                  " with the ranking term vs " + fmt(plain) + " without; " +
                  fmt(runs.elapsed, 3) + " s for all paired runs"};
}

std::pair<bool, std::string> check_ece_trend(const PairedRuns& runs) {
  const double ranked = mean_of(runs.ece_ranked);
  const double plain = mean_of(runs.ece_plain);
  const bool ok = ranked <= plain + 0.005;
  return {ok, "same paired seeds; mean expected calibration error " +
                  fmt(ranked) + " with the ranking term vs " + fmt(plain) +
                  " without (allowed slack 0.005)"};
}

std::pair<bool, std::string> check_monotone_availability(
    const PairedRuns& runs) {
  double worst = 0.0;  // how far full-mask accuracy falls below a singleton
  for (std::size_t s = 0; s < 3; ++s) {
    const EvaluationReport& report = runs.ranked_reports[s];
    const double full = row_for(report, "111").score;
    for (const std::string& bits : {"100", "010", "001"}) {
      worst = std::max(worst, row_for(report, bits).score - full);
    }
  }
  const bool ok = worst <= 0.01;
  return {ok, "3 trained seeds; full-mask accuracy within " + fmt(worst) +
                  " of the best singleton (allowed to trail by 0.01)"};
}

std::pair<bool, std::string> check_table_shapes() {
  // Four modalities: every non-empty availability pattern gets a row.
  ExperimentConfig wide = tiny_config();
  wide.data.modality_count = 4;
  wide.data.dims = {2, 2, 2, 2};
  wide.data.sigma = {0.5, 0.5, 0.5, 1.5};
  wide.data.n_test = 20;
  const SynthBundle bundle = generate(wide.data);
  const DmomeModel model = build_model(wide);
  const auto records =
      evaluate(model, bundle.test, enumerate_masks(4), wide.score);
  const EvaluationReport report = build_report(records, 4, wide.bins);
  const bool rows_ok = report.rows.size() == 15;

  // The stock sweep covers seven coefficients.
  const fs::path sweep_dir = fresh_dir("mofelab_accept_sweep");
  const fs::path sweep_csv =
      cmd_sweep(tiny_config(), default_sweep_lambdas(), "", sweep_dir);
  std::size_t sweep_rows = 0;
  {
    std::istringstream in(slurp(sweep_csv));
    std::string line;
    while (std::getline(in, line)) ++sweep_rows;
    sweep_rows -= 1;  // header
  }
  const bool sweep_ok = sweep_rows == 7;

  const bool bins_ok = ExperimentConfig().bins == 20;
  const bool ok = rows_ok && sweep_ok && bins_ok;
  return {ok, "4-modality report rows: " + std::to_string(report.rows.size()) +
                  "/15; stock sweep rows: " + std::to_string(sweep_rows) +
                  "/7; default calibration bins: " +
                  std::to_string(ExperimentConfig().bins) + "/20"};
}

std::pair<bool, std::string> check_determinism() {
  const ExperimentConfig cfg = tiny_config();

  // Dataset file round-trip.
  const SynthBundle bundle = generate(cfg.data);
  const fs::path ds_path =
      fs::temp_directory_path() / "mofelab_accept_roundtrip.mmds";
  save_dataset(bundle.train, ds_path);
  const Dataset loaded = load_dataset(ds_path);
  bool ds_ok = loaded.size() == bundle.train.size();
  for (std::size_t i = 0; ds_ok && i < loaded.size(); ++i) {
    ds_ok = loaded.samples[i].label == bundle.train.samples[i].label;
    for (std::size_t m = 0; ds_ok && m < loaded.dims.size(); ++m) {
      const auto& a = loaded.samples[i].features[m];
      const auto& b = bundle.train.samples[i].features[m];
      for (std::size_t j = 0; ds_ok && j < a.size(); ++j) {
        ds_ok = std::bit_cast<std::uint64_t>(a[j]) ==
                std::bit_cast<std::uint64_t>(b[j]);
      }
    }
  }
  save_dataset(loaded, ds_path);
  const std::string ds_second = slurp(ds_path);
  save_dataset(bundle.train, ds_path);
  ds_ok = ds_ok && ds_second == slurp(ds_path);
  fs::remove(ds_path);

  // Same seed, two full runs: identical checkpoint, log and report bytes.
  const fs::path data_dir = fresh_dir("mofelab_accept_data");
  cmd_gen(cfg, data_dir);
  const std::string prefix = (data_dir / "").string();
  const fs::path run_a = fresh_dir("mofelab_accept_run_a");
  const fs::path run_b = fresh_dir("mofelab_accept_run_b");
  const TrainArtifacts ta = cmd_train(cfg, prefix, run_a);
  const TrainArtifacts tb = cmd_train(cfg, prefix, run_b);
  const bool train_ok = slurp(ta.checkpoint) == slurp(tb.checkpoint) &&
                        slurp(ta.trainlog) == slurp(tb.trainlog);

  const fs::path eval_a = fresh_dir("mofelab_accept_eval_a");
  const fs::path eval_b = fresh_dir("mofelab_accept_eval_b");
  const fs::path ra = cmd_eval(cfg, ta.checkpoint, prefix, eval_a);
  const fs::path rb = cmd_eval(cfg, tb.checkpoint, prefix, eval_b);
  const bool eval_ok = slurp(ra) == slurp(rb);

  // Checkpoint container round-trip.
  const Checkpoint before = load_checkpoint(ta.checkpoint);
  const fs::path ck_path =
      fs::temp_directory_path() / "mofelab_accept_ck.bin";
  save_checkpoint(ck_path, before);
  const bool ck_ok = slurp(ck_path) == slurp(ta.checkpoint) &&
                     params_bitwise_equal(model_from_checkpoint(before),
                                          model_from_checkpoint(
                                              load_checkpoint(ck_path)));
  fs::remove(ck_path);

  const bool ok = ds_ok && train_ok && eval_ok && ck_ok;
  return {ok, std::string("dataset round-trip ") +
                  (ds_ok ? "bit-exact" : "DRIFTS") +
                  "; repeated training/evaluation " +
                  ((train_ok && eval_ok) ? "byte-identical" : "DIVERGES") +
                  "; checkpoint round-trip " +
                  (ck_ok ? "bit-exact" : "DRIFTS")};
}

}  // namespace

int main() {
  int failures = 0;
  const auto gate = [&failures](const std::string& name,
                                const std::function<std::pair<bool,
                                                              std::string>()>&
                                    criterion) {
    bool ok = false;
    std::string detail;
    try {
      std::tie(ok, detail) = criterion();
    } catch (const std::exception& e) {
      ok = false;
      detail = std::string("exception: ") + e.what();
    }
    if (!ok) ++failures;
    std::cout << (ok ? "PASS" : "FAIL") << "  " << name << ": " << detail
              << "\n";
  };

  gate("gating weights form a simplex over present modalities",
       check_gating_simplex);
  gate("analytic gradients match finite differences", check_gradcheck);
  gate("ranking hinge is exact and a zero coefficient is a true no-op",
       check_hinge_exactness);
  gate("counterintuitive rate matches a brute-force oracle", check_cr_oracle);
  gate("calibration errors are correct and invariant", check_calibration);
  gate("exact posterior never loses accuracy from extra modalities",
       check_bayes_monotonicity);

  PairedRuns runs;
  bool paired_ok = false;
  std::string paired_error;
  try {
    runs = run_paired_trends();
    paired_ok = true;
  } catch (const std::exception& e) {
    paired_error = std::string("exception: ") + e.what();
  }
  const auto paired_gate =
      [&](const std::string& name,
          const std::function<std::pair<bool, std::string>(
              const PairedRuns&)>& criterion) {
        if (paired_ok) {
          gate(name, [&] { return criterion(runs); });
        } else {
          gate(name, [&]() -> std::pair<bool, std::string> {
            return {false, paired_error};
          });
        }
      };
  paired_gate("ranking term does not raise the counterintuitive rate",
              check_cr_trend);
  paired_gate("ranking term does not hurt calibration", check_ece_trend);
  paired_gate("trained full-modality accuracy tracks the best singleton",
              check_monotone_availability);

  gate("reports have the expected shapes", check_table_shapes);
  gate("everything is deterministic and round-trips", check_determinism);

  std::cout << (11 - failures) << " of 11 criteria passed\n";
  return failures;
}
