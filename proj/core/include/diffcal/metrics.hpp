#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace diffcal {

// Average ranks (1-based) with ties sharing the mean of their positions.
std::vector<double> average_ranks(std::span<const double> values);

// Tie-averaged ROC AUC in [0, 1]. Throws UndefinedStatisticError when the
// labels contain a single class.
double roc_auc(std::span<const int> labels, std::span<const double> scores);

// Mean squared error of probabilistic predictions against binary outcomes.
double brier_score(std::span<const int> labels, std::span<const double> scores);

double sigmoid(double z);

// log(1 + e^z) without overflow.
double log1p_exp(double z);

}  // namespace diffcal
