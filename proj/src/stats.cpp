#include "hmae/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hmae/pauli.hpp"

namespace hmae {

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw shape_error("accuracy: size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes) {
  if (pred.size() != truth.size() || pred.empty())
    throw shape_error("macro_f1: size mismatch");
  double total = 0.0;
  for (int c = 0; c < n_classes; ++c) {
    int tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == c && truth[i] == c) ++tp;
      if (pred[i] == c && truth[i] != c) ++fp;
      if (pred[i] != c && truth[i] == c) ++fn;
    }
    // empty class contributes 0 (harsh but standard for macro averaging)
    if (2 * tp + fp + fn > 0) total += 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
  }
  return total / n_classes;
}

double mean_absolute_error(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size() || pred.size() == 0)
    throw shape_error("mae: size mismatch");
  return (pred - truth).cwiseAbs().mean();
}

double root_mean_squared_error(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size() || pred.size() == 0)
    throw shape_error("rmse: size mismatch");
  return std::sqrt((pred - truth).squaredNorm() / static_cast<double>(pred.size()));
}

double r_squared(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
  if (pred.size() != truth.size() || pred.size() == 0)
    throw shape_error("r_squared: size mismatch");
  const double ss_res = (truth - pred).squaredNorm();
  const double ss_tot = (truth.array() - truth.mean()).matrix().squaredNorm();
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : -std::numeric_limits<double>::infinity();
  return 1.0 - ss_res / ss_tot;
}

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  if (x.size() != y.size() || x.size() < 2) throw shape_error("pearson: need >= 2 pairs");
  const Eigen::VectorXd xc = x.array() - x.mean();
  const Eigen::VectorXd yc = y.array() - y.mean();
  const double denom = xc.norm() * yc.norm();
  if (denom == 0.0) return 0.0;
  return xc.dot(yc) / denom;
}

namespace {

Eigen::VectorXd average_ranks(const Eigen::VectorXd& x) {
  const auto n = x.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&x](Eigen::Index a, Eigen::Index b) { return x(a) < x(b); });
  Eigen::VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && x(idx[static_cast<std::size_t>(j + 1)]) ==
                            x(idx[static_cast<std::size_t>(i)]))
      ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index t = i; t <= j; ++t) ranks(idx[static_cast<std::size_t>(t)]) = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  return pearson(average_ranks(x), average_ranks(y));
}

double sign_test_p(int wins, int trials) {
  if (trials < 0 || wins < 0 || wins > trials)
    throw shape_error("sign_test_p: invalid counts");
  if (trials == 0) return 1.0;
  // exact tail sum in log space to stay stable for large n
  double p = 0.0;
  for (int k = wins; k <= trials; ++k) {
    double log_c = 0.0;
    for (int t = 0; t < k; ++t)
      log_c += std::log(static_cast<double>(trials - t)) - std::log(static_cast<double>(t + 1));
    p += std::exp(log_c - trials * std::log(2.0));
  }
  return std::min(1.0, p);
}

double expected_calibration_error(const std::vector<double>& confidence,
                                  const std::vector<bool>& correct, int bins) {
  if (confidence.size() != correct.size() || confidence.empty())
    throw shape_error("ece: size mismatch");
  if (bins <= 0) throw shape_error("ece: bins must be positive");
  std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> acc_sum(static_cast<std::size_t>(bins), 0.0);
  std::vector<int> count(static_cast<std::size_t>(bins), 0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    int b = static_cast<int>(confidence[i] * bins);
    b = std::clamp(b, 0, bins - 1);
    conf_sum[static_cast<std::size_t>(b)] += confidence[i];
    acc_sum[static_cast<std::size_t>(b)] += correct[i] ? 1.0 : 0.0;
    ++count[static_cast<std::size_t>(b)];
  }
  double ece = 0.0;
  const double n = static_cast<double>(confidence.size());
  for (int b = 0; b < bins; ++b) {
    const auto bi = static_cast<std::size_t>(b);
    if (count[bi] == 0) continue;
    ece += (count[bi] / n) * std::abs(acc_sum[bi] / count[bi] - conf_sum[bi] / count[bi]);
  }
  return ece;
}

double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                               double tol) {
  if (!(lo < hi)) throw shape_error("golden_section_minimize: bad interval");
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace hmae
