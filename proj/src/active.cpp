#include "hmae/active.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>

#include "hmae/rng.hpp"
#include "hmae/stats.hpp"

namespace hmae {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

std::string acquisition_name(Acquisition a) {
  switch (a) {
    case Acquisition::PredictiveEntropy: return "entropy";
    case Acquisition::EnsembleDisagreement: return "disagreement";
    case Acquisition::PhaseBoundaryMargin: return "margin";
    case Acquisition::EmbeddingDistance: return "distance";
    case Acquisition::Random: return "random";
  }
  throw config_error("unknown acquisition");
}

Acquisition acquisition_from_name(const std::string& name) {
  if (name == "entropy") return Acquisition::PredictiveEntropy;
  if (name == "disagreement") return Acquisition::EnsembleDisagreement;
  if (name == "margin") return Acquisition::PhaseBoundaryMargin;
  if (name == "distance") return Acquisition::EmbeddingDistance;
  if (name == "random") return Acquisition::Random;
  throw config_error("unknown acquisition '" + name + "'");
}

VectorXd score_pool(const MatrixXd& pool_z, const MatrixXd& labeled_z,
                    const std::vector<ClassifierHead>& ensemble, Acquisition kind,
                    std::uint64_t seed) {
  const auto n = pool_z.rows();
  VectorXd scores(n);
  switch (kind) {
    case Acquisition::PredictiveEntropy: {
      if (ensemble.empty()) throw config_error("score_pool: no classifier head");
      for (Eigen::Index i = 0; i < n; ++i) {
        RowVectorXd p = ensemble.front().probabilities(pool_z.row(i));
        double h = 0.0;
        for (Eigen::Index c = 0; c < p.size(); ++c)
          if (p(c) > 0.0) h -= p(c) * std::log(p(c));
        scores(i) = h;
      }
      break;
    }
    case Acquisition::EnsembleDisagreement: {
      if (ensemble.empty()) throw config_error("score_pool: no classifier head");
      for (Eigen::Index i = 0; i < n; ++i) {
        MatrixXd preds(static_cast<Eigen::Index>(ensemble.size()), ensemble.front().b.size());
        for (std::size_t e = 0; e < ensemble.size(); ++e)
          preds.row(static_cast<Eigen::Index>(e)) = ensemble[e].probabilities(pool_z.row(i));
        const RowVectorXd mean = preds.colwise().mean();
        scores(i) = (preds.rowwise() - mean).squaredNorm() /
                    static_cast<double>(preds.size());
      }
      break;
    }
    case Acquisition::PhaseBoundaryMargin: {
      if (ensemble.empty()) throw config_error("score_pool: no classifier head");
      for (Eigen::Index i = 0; i < n; ++i) {
        RowVectorXd p = ensemble.front().probabilities(pool_z.row(i));
        std::vector<double> v(p.data(), p.data() + p.size());
        std::sort(v.begin(), v.end(), std::greater<>());
        scores(i) = -(v[0] - (v.size() > 1 ? v[1] : 0.0));
      }
      break;
    }
    case Acquisition::EmbeddingDistance: {
      if (labeled_z.rows() == 0) throw shape_error("score_pool: empty labeled set");
      for (Eigen::Index i = 0; i < n; ++i)
        scores(i) = (labeled_z.rowwise() - pool_z.row(i)).rowwise().norm().minCoeff();
      break;
    }
    case Acquisition::Random: {
      Rng rng(seed_mix(seed, 0x72616e64ULL));
      for (Eigen::Index i = 0; i < n; ++i) scores(i) = rng.uniform();
      break;
    }
  }
  if (!scores.allFinite()) throw numerical_error("score_pool: non-finite score");
  return scores;
}

namespace {

double nll_at(const MatrixXd& logits, const std::vector<int>& labels, double temperature) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    RowVectorXd l = logits.row(i) / temperature;
    l.array() -= l.maxCoeff();
    const double log_z = std::log(l.array().exp().sum());
    total -= l(labels[static_cast<std::size_t>(i)]) - log_z;
  }
  return total / static_cast<double>(logits.rows());
}

void confidence_and_correct(const MatrixXd& logits, const std::vector<int>& labels,
                            double temperature, std::vector<double>& conf,
                            std::vector<bool>& correct) {
  conf.clear();
  correct.clear();
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    RowVectorXd l = logits.row(i) / temperature;
    l.array() -= l.maxCoeff();
    RowVectorXd p = l.array().exp();
    p /= p.sum();
    Eigen::Index best = 0;
    conf.push_back(p.maxCoeff(&best));
    correct.push_back(static_cast<int>(best) == labels[static_cast<std::size_t>(i)]);
  }
}

}  // namespace

CalibrationResult calibrate_temperature(const MatrixXd& logits, const std::vector<int>& labels,
                                        int bins) {
  if (logits.rows() != static_cast<Eigen::Index>(labels.size()) || labels.empty())
    throw shape_error("calibrate_temperature: size mismatch");
  std::set<int> distinct(labels.begin(), labels.end());
  if (distinct.size() < 2)
    throw validation_error("calibrate_temperature: validation set has a single class");

  CalibrationResult result;
  result.nll_before = nll_at(logits, labels, 1.0);
  std::vector<double> conf;
  std::vector<bool> correct;
  confidence_and_correct(logits, labels, 1.0, conf, correct);
  result.ece_before = expected_calibration_error(conf, correct, bins);

  const double t_opt = golden_section_minimize(
      [&](double t) { return nll_at(logits, labels, t); }, 0.05, 20.0, 1e-4);
  double t = t_opt;
  double nll_after = nll_at(logits, labels, t);
  if (nll_after > result.nll_before) t = 1.0;
  confidence_and_correct(logits, labels, t, conf, correct);
  double ece_after = expected_calibration_error(conf, correct, bins);
  if (ece_after > result.ece_before) {
    // never let calibration degrade the reported calibration error
    t = 1.0;
    ece_after = result.ece_before;
  }
  result.temperature = t;
  result.nll_after = nll_at(logits, labels, t);
  result.ece_after = ece_after;
  return result;
}

namespace {

MatrixXd gather_rows(const MatrixXd& z, const std::vector<std::size_t>& ids) {
  MatrixXd out(static_cast<Eigen::Index>(ids.size()), z.cols());
  for (std::size_t i = 0; i < ids.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = z.row(static_cast<Eigen::Index>(ids[i]));
  return out;
}

ClassifierHead majority_head(const std::vector<int>& labels, int n_classes, Eigen::Index d) {
  std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  const int winner = static_cast<int>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());
  ClassifierHead head;
  head.w = MatrixXd::Zero(d, n_classes);
  head.b = RowVectorXd::Zero(n_classes);
  head.b(winner) = 1.0;
  return head;
}

}  // namespace

ActiveResult active_loop(const MatrixXd& pool_z, const std::vector<int>& pool_phase,
                         const VectorXd& pool_energy, const MatrixXd& test_z,
                         const std::vector<int>& test_phase, const VectorXd& test_energy,
                         const std::vector<std::size_t>& seed_set,
                         const ActiveLoopConfig& cfg) {
  const auto n_pool = static_cast<std::size_t>(pool_z.rows());
  if (pool_phase.size() != n_pool || pool_energy.size() != pool_z.rows())
    throw shape_error("active_loop: pool label sizes mismatch");
  if (test_phase.size() != static_cast<std::size_t>(test_z.rows()) ||
      test_energy.size() != test_z.rows())
    throw shape_error("active_loop: test label sizes mismatch");
  if (cfg.batch_k <= 0 || cfg.n_classes < 2 || cfg.ensemble_size < 1)
    throw config_error("active_loop: invalid batch size, class count, or ensemble size");
  if (seed_set.empty()) throw config_error("active_loop: empty seed set");
  if (static_cast<std::size_t>(cfg.budget) < seed_set.size())
    throw config_error("active_loop: budget smaller than the seed set");
  std::set<std::size_t> seen;
  for (std::size_t id : seed_set) {
    if (id >= n_pool) throw config_error("active_loop: seed id out of range");
    if (!seen.insert(id).second) throw config_error("active_loop: duplicate seed id");
  }

  ActiveResult result;
  result.labeled = seed_set;
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < n_pool; ++i)
    if (!seen.count(i)) unlabeled.push_back(i);

  int round = 0;
  while (true) {
    MatrixXd lz = gather_rows(pool_z, result.labeled);
    std::vector<int> ly;
    VectorXd le(static_cast<Eigen::Index>(result.labeled.size()));
    for (std::size_t i = 0; i < result.labeled.size(); ++i) {
      ly.push_back(pool_phase[result.labeled[i]]);
      le(static_cast<Eigen::Index>(i)) = pool_energy(static_cast<Eigen::Index>(result.labeled[i]));
    }

    std::set<int> distinct(ly.begin(), ly.end());
    std::vector<ClassifierHead> ensemble;
    if (distinct.size() >= 2) {
      ensemble.push_back(finetune_classifier(lz, ly, cfg.n_classes,
                                             seed_mix(cfg.seed, static_cast<std::uint64_t>(round))));
      if (cfg.kind == Acquisition::EnsembleDisagreement) {
        for (int e = 1; e < cfg.ensemble_size; ++e)
          ensemble.push_back(finetune_classifier(
              lz, ly, cfg.n_classes,
              seed_mix(cfg.seed, static_cast<std::uint64_t>(round),
                       static_cast<std::uint64_t>(e))));
      }
    } else {
      for (int e = 0; e < (cfg.kind == Acquisition::EnsembleDisagreement ? cfg.ensemble_size : 1);
           ++e)
        ensemble.push_back(majority_head(ly, cfg.n_classes, pool_z.cols()));
    }

    // calibrate on the labeled set, report metrics on the held-out test set
    double temperature = 1.0;
    if (distinct.size() >= 2) {
      MatrixXd val_logits(lz.rows(), cfg.n_classes);
      for (Eigen::Index i = 0; i < lz.rows(); ++i)
        val_logits.row(i) = ensemble.front().logits(lz.row(i));
      temperature = calibrate_temperature(val_logits, ly).temperature;
    }
    ClassifierHead scored = ensemble.front();
    scored.temperature = temperature;

    std::vector<int> pred;
    std::vector<double> conf;
    std::vector<bool> correct;
    for (Eigen::Index i = 0; i < test_z.rows(); ++i) {
      RowVectorXd p = scored.probabilities(test_z.row(i));
      Eigen::Index best = 0;
      conf.push_back(p.maxCoeff(&best));
      pred.push_back(static_cast<int>(best));
      correct.push_back(static_cast<int>(best) == test_phase[static_cast<std::size_t>(i)]);
    }

    auto regressor = finetune_regressor(lz, le);
    VectorXd reg_pred(test_z.rows());
    for (Eigen::Index i = 0; i < test_z.rows(); ++i)
      reg_pred(i) = regressor.predict(test_z.row(i));

    ActiveRound row;
    row.round = round;
    row.labels_used = static_cast<int>(result.labeled.size());
    row.acquisition = acquisition_name(cfg.kind);
    row.accuracy = accuracy(pred, test_phase);
    row.mae = mean_absolute_error(reg_pred, test_energy);
    row.ece = expected_calibration_error(conf, correct);
    result.rounds.push_back(row);

    if (row.labels_used >= cfg.budget || unlabeled.empty()) break;

    const auto want = std::min<std::size_t>(
        {static_cast<std::size_t>(cfg.batch_k),
         static_cast<std::size_t>(cfg.budget) - result.labeled.size(), unlabeled.size()});
    MatrixXd uz = gather_rows(pool_z, unlabeled);
    VectorXd scores = score_pool(uz, lz, ensemble, cfg.kind,
                                 seed_mix(cfg.seed, static_cast<std::uint64_t>(round), 0xacfULL));
    std::vector<std::size_t> order(unlabeled.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double sa = scores(static_cast<Eigen::Index>(a));
      const double sb = scores(static_cast<Eigen::Index>(b));
      if (sa != sb) return sa > sb;
      return unlabeled[a] < unlabeled[b];  // ties by ascending record id
    });
    std::set<std::size_t> picked_slots(order.begin(), order.begin() + static_cast<long>(want));
    std::vector<std::size_t> remaining;
    for (std::size_t slot = 0; slot < unlabeled.size(); ++slot) {
      if (picked_slots.count(slot)) continue;
      remaining.push_back(unlabeled[slot]);
    }
    for (std::size_t slot = 0; slot < want; ++slot) result.labeled.push_back(unlabeled[order[slot]]);
    unlabeled = std::move(remaining);
    ++round;
  }
  return result;
}

void write_active_csv(const std::vector<ActiveRound>& rounds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open " + path);
  out << "round,labels_used,acquisition,accuracy,mae,ece\n";
  out << std::setprecision(17);
  for (const auto& r : rounds)
    out << r.round << ',' << r.labels_used << ',' << r.acquisition << ',' << r.accuracy << ','
        << r.mae << ',' << r.ece << '\n';
  if (!out) throw io_error("write failed for " + path);
}

}  // namespace hmae
