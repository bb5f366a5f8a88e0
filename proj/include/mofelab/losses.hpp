#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mofelab/dmome.hpp"

namespace mofelab {

enum class TaskLoss {
  cross_entropy,
  soft_dice,
  dice_plus_bce,
};

TaskLoss parse_task_loss(const std::string& name);
const char* task_loss_name(TaskLoss t);

struct LossSpec {
  TaskLoss task_loss = TaskLoss::cross_entropy;
  double lambda = 0.1;       // ranking-term coefficient; ignored if disabled
  bool mofe_enabled = true;
  bool mofe_detach_minus = false;  // stop the ranking gradient at the minus branch
  bool conf_hinge_term = false;    // replace the ranking hinge by the
                                   // label-free confidence hinge

  // 0 when the ranking term is switched off; training with lambda = 0 and
  // with mofe_enabled = false is bit-identical by construction.
  double effective_lambda() const {
    return mofe_enabled ? lambda : 0.0;
  }
};

// Supervision for one sample: a class index for cross-entropy, a binary map
// for the Dice-family losses.
struct Target {
  std::size_t label = 0;
  std::vector<double> map;
};

struct PairLoss {
  double loss_plus = 0.0;
  double loss_minus = 0.0;
  double mofe = 0.0;  // ranking (or confidence-hinge) term; 0 when disabled
  double total = 0.0;
};

// -log softmax(logits)[label], log-sum-exp stabilized. Throws ConfigError on
// an out-of-range label, NumericError on non-finite logits.
double cross_entropy(std::span<const double> logits, std::size_t label);

std::vector<double> softmax(std::span<const double> logits);

double sigmoid(double z);

// 1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s). Throws ShapeError on length
// mismatch.
double soft_dice(std::span<const double> probs, std::span<const double> target,
                 double smooth = 1e-5);

// Unweighted soft_dice + mean binary cross-entropy, both over sigmoid(logits).
double dice_plus_bce(std::span<const double> logits,
                     std::span<const double> target, double smooth = 1e-5);

// max(0, loss_plus - loss_minus).
double mofe_loss(double loss_plus, double loss_minus);

// Task loss of one branch: mean over the K task heads. Dice-family losses
// squash logits through a sigmoid and compare against target.map.
double branch_task_loss(const MixtureOutput& out, const Target& target,
                        TaskLoss task_loss);

// Scalar loss and d(loss)/d(logits) for a single logit vector.
double task_loss_and_grad(TaskLoss task_loss, std::span<const double> logits,
                          const Target& target, std::vector<double>& dlogits);

// max prob of softmax(logits), and its gradient (p_j* * (delta_ij* - p_i)).
double max_prob(std::span<const double> logits);
double max_prob_and_grad(std::span<const double> logits,
                         std::vector<double>& dlogits);

// Confidence hinge between the two branches: mean over tasks of
// max(0, maxprob(minus) - maxprob(plus)). Label-free.
double conf_hinge(const MixtureOutput& out_plus, const MixtureOutput& out_minus);

// Combined pair objective. Requires minus's mask to be a strict subset of
// plus's (ConfigError otherwise). With effective lambda 0 the ranking term is
// skipped entirely and recorded as 0.
PairLoss total_loss(const MixtureOutput& out_plus,
                    const MixtureOutput& out_minus, const Target& target,
                    const LossSpec& spec);

}  // namespace mofelab
