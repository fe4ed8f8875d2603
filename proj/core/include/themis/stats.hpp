#pragma once

#include <span>
#include <vector>

#include "themis/tensor.hpp"

namespace themis {

class DegenerateVarianceError : public Error {
public:
    using Error::Error;
};

double mean(std::span<const double> xs);
/// Median; averages the two middle values for even sizes.
double median(std::vector<double> xs);

/// Sample Pearson correlation. Throws DegenerateVarianceError when either
/// side has zero variance, Error when sizes differ or are < 2.
double pearson(std::span<const double> xs, std::span<const double> ys);

/// Pearson correlation of average ranks (ties share their mean rank).
double spearman(std::span<const double> xs, std::span<const double> ys);

}  // namespace themis
