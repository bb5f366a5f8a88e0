#include "mofelab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mofelab/error.hpp"

namespace mofelab {

namespace {

double log_sum_exp(std::span<const double> z) {
  double maxv = -std::numeric_limits<double>::infinity();
  for (double v : z) {
    if (!std::isfinite(v)) throw NumericError("loss: non-finite logit");
    maxv = std::max(maxv, v);
  }
  double s = 0.0;
  for (double v : z) s += std::exp(v - maxv);
  return maxv + std::log(s);
}

std::vector<double> branch_task_losses(const MixtureOutput& out,
                                       const Target& target,
                                       TaskLoss task_loss) {
  std::vector<double> losses;
  losses.reserve(out.mixed.size());
  for (const std::vector<double>& logits : out.mixed) {
    switch (task_loss) {
      case TaskLoss::cross_entropy:
        losses.push_back(cross_entropy(logits, target.label));
        break;
      case TaskLoss::soft_dice: {
        std::vector<double> probs(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i) {
          probs[i] = sigmoid(logits[i]);
        }
        losses.push_back(soft_dice(probs, target.map));
        break;
      }
      case TaskLoss::dice_plus_bce:
        losses.push_back(dice_plus_bce(logits, target.map));
        break;
    }
  }
  return losses;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

TaskLoss parse_task_loss(const std::string& name) {
  if (name == "cross_entropy") return TaskLoss::cross_entropy;
  if (name == "soft_dice") return TaskLoss::soft_dice;
  if (name == "dice_plus_bce") return TaskLoss::dice_plus_bce;
  throw ConfigError("unknown task loss '" + name + "'");
}

const char* task_loss_name(TaskLoss t) {
  switch (t) {
    case TaskLoss::cross_entropy:
      return "cross_entropy";
    case TaskLoss::soft_dice:
      return "soft_dice";
    case TaskLoss::dice_plus_bce:
      return "dice_plus_bce";
  }
  return "?";
}

double cross_entropy(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw ConfigError("cross_entropy: label " + std::to_string(label) +
                      " out of range for " + std::to_string(logits.size()) +
                      " classes");
  }
  return log_sum_exp(logits) - logits[label];
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - lse);
  }
  return p;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double soft_dice(std::span<const double> probs, std::span<const double> target,
                 double smooth) {
  if (probs.size() != target.size()) {
    throw ShapeError("soft_dice: probs and target lengths differ");
  }
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    inter += probs[i] * target[i];
    psum += probs[i];
    tsum += target[i];
  }
  return 1.0 - (2.0 * inter + smooth) / (psum + tsum + smooth);
}

double dice_plus_bce(std::span<const double> logits,
                     std::span<const double> target, double smooth) {
  if (logits.size() != target.size()) {
    throw ShapeError("dice_plus_bce: logits and target lengths differ");
  }
  std::vector<double> probs(logits.size());
  double bce = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    probs[i] = sigmoid(z);
    // Stable from-logits form of -(t log p + (1-t) log(1-p)).
    bce += std::max(z, 0.0) - z * target[i] + std::log1p(std::exp(-std::abs(z)));
  }
  bce /= static_cast<double>(logits.size());
  return soft_dice(probs, target, smooth) + bce;
}

double mofe_loss(double loss_plus, double loss_minus) {
  return std::max(0.0, loss_plus - loss_minus);
}

double branch_task_loss(const MixtureOutput& out, const Target& target,
                        TaskLoss task_loss) {
  return mean(branch_task_losses(out, target, task_loss));
}

double task_loss_and_grad(TaskLoss task_loss, std::span<const double> logits,
                          const Target& target, std::vector<double>& dlogits) {
  dlogits.assign(logits.size(), 0.0);
  switch (task_loss) {
    case TaskLoss::cross_entropy: {
      const double loss = cross_entropy(logits, target.label);
      std::vector<double> p = softmax(logits);
      for (std::size_t i = 0; i < logits.size(); ++i) dlogits[i] = p[i];
      dlogits[target.label] -= 1.0;
      return loss;
    }
    case TaskLoss::soft_dice:
    case TaskLoss::dice_plus_bce: {
      const std::span<const double> t(target.map);
      if (t.size() != logits.size()) {
        throw ShapeError("dice loss: target map length mismatch");
      }
      const double smooth = 1e-5;
      std::vector<double> p(logits.size());
      double inter = 0.0, psum = 0.0, tsum = 0.0;
      for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = sigmoid(logits[i]);
        inter += p[i] * t[i];
        psum += p[i];
        tsum += t[i];
      }
      const double denom = psum + tsum + smooth;
      const double num = 2.0 * inter + smooth;
      double loss = 1.0 - num / denom;
      for (std::size_t i = 0; i < logits.size(); ++i) {
        const double dl_dp = -(2.0 * t[i] * denom - num) / (denom * denom);
        dlogits[i] = dl_dp * p[i] * (1.0 - p[i]);
      }
      if (task_loss == TaskLoss::dice_plus_bce) {
        const double inv_p = 1.0 / static_cast<double>(logits.size());
        double bce = 0.0;
        for (std::size_t i = 0; i < logits.size(); ++i) {
          const double z = logits[i];
          bce += std::max(z, 0.0) - z * t[i] +
                 std::log1p(std::exp(-std::abs(z)));
          dlogits[i] += (p[i] - t[i]) * inv_p;
        }
        loss += bce * inv_p;
      }
      return loss;
    }
  }
  throw ConfigError("task_loss_and_grad: unknown loss");
}

double max_prob(std::span<const double> logits) {
  std::vector<double> p = softmax(logits);
  return *std::max_element(p.begin(), p.end());
}

double max_prob_and_grad(std::span<const double> logits,
                         std::vector<double>& dlogits) {
  std::vector<double> p = softmax(logits);
  const std::size_t j =
      static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  dlogits.assign(logits.size(), 0.0);
  for (std::size_t i = 0; i < logits.size(); ++i) {
    dlogits[i] = p[j] * ((i == j ? 1.0 : 0.0) - p[i]);
  }
  return p[j];
}

double conf_hinge(const MixtureOutput& out_plus,
                  const MixtureOutput& out_minus) {
  std::vector<double> hinges;
  for (std::size_t k = 0; k < out_plus.mixed.size(); ++k) {
    hinges.push_back(
        std::max(0.0, max_prob(out_minus.mixed[k]) - max_prob(out_plus.mixed[k])));
  }
  return mean(hinges);
}

PairLoss total_loss(const MixtureOutput& out_plus,
                    const MixtureOutput& out_minus, const Target& target,
                    const LossSpec& spec) {
  if (!out_minus.mask().is_strict_subset_of(out_plus.mask())) {
    throw ConfigError("total_loss: minus mask " + out_minus.mask().bits() +
                      " is not a strict subset of plus mask " +
                      out_plus.mask().bits());
  }
  const std::vector<double> lp = branch_task_losses(out_plus, target, spec.task_loss);
  const std::vector<double> lm = branch_task_losses(out_minus, target, spec.task_loss);

  PairLoss pl;
  pl.loss_plus = mean(lp);
  pl.loss_minus = mean(lm);
  const double lambda = spec.effective_lambda();
  if (lambda == 0.0) {
    pl.mofe = 0.0;
    pl.total = pl.loss_plus + pl.loss_minus;
    return pl;
  }
  if (spec.conf_hinge_term) {
    pl.mofe = conf_hinge(out_plus, out_minus);
  } else {
    // Per-task hinges averaged (equals the scalar hinge when K = 1).
    std::vector<double> hinges;
    for (std::size_t k = 0; k < lp.size(); ++k) {
      hinges.push_back(mofe_loss(lp[k], lm[k]));
    }
    pl.mofe = mean(hinges);
  }
  pl.total = pl.loss_plus + pl.loss_minus + lambda * pl.mofe;
  return pl;
}

}  // namespace mofelab
