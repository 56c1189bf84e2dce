#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

namespace hmae {

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);
double macro_f1(const std::vector<int>& pred, const std::vector<int>& truth, int n_classes);

double mean_absolute_error(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);
double root_mean_squared_error(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);
/// 1 - SS_res / SS_tot; negative when worse than predicting the mean.
double r_squared(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth);

double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y);
/// Pearson correlation of average-tie ranks.
double spearman(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// One-sided exact binomial test: P(X >= wins) for X ~ Binomial(trials, 1/2).
double sign_test_p(int wins, int trials);

/// Expected calibration error with equal-width confidence bins.
double expected_calibration_error(const std::vector<double>& confidence,
                                  const std::vector<bool>& correct, int bins = 10);

/// Golden-section minimizer for a unimodal function on [lo, hi].
double golden_section_minimize(const std::function<double(double)>& f, double lo, double hi,
                               double tol = 1e-4);

}  // namespace hmae
