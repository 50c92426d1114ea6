#pragma once

#include <vector>

namespace dpiqa {

// 1-based ranks; tied values share the mean of the ranks they span.
std::vector<double> average_ranks(const std::vector<double>& v);

// Pearson linear correlation; a constant input has no defined correlation
// and raises an error.
double plcc(const std::vector<double>& a, const std::vector<double>& b);

// Spearman rank correlation: Pearson over average ranks.
double srcc(const std::vector<double>& a, const std::vector<double>& b);

// Sample median (mean of the middle two for even sizes).
double median_of(std::vector<double> v);

}  // namespace dpiqa
