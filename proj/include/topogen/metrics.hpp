#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "topogen/image.hpp"

namespace topogen {

/// Count the structures present in a generated image: binarize at
/// threshold u, then count 8-connected foreground components (dim 0) or
/// 4-connected enclosed background regions (dim 1).  Components/holes with
/// fewer than min_area pixels are ignored (a speckle filter; 0 disables).
int measured_count(const ImageGrid& img, int dim, double u = 0.0, int min_area = 0);

/// One evaluated sample: what was asked for and what came out.
struct EvalRecord {
  int target_c = 0;
  int measured = 0;
  int dim = 0;
  std::uint64_t seed = 0;
  std::string checkpoint_id;
};

/// Counting metrics over a set of evaluated samples, treating each integer
/// count as a class.
struct MetricsReport {
  int n_records = 0;
  double accuracy = 0.0;        // fraction with measured == target
  double macro_precision = 0.0; // averaged over target classes present
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double per_c_accuracy_mean = 0.0;
  double per_c_accuracy_std = 0.0;             // sample std over target classes (0 if 1 class)
  std::map<int, double> per_c_accuracy;        // target c -> accuracy
  std::map<int, int> per_c_count;              // target c -> number of records
  std::map<std::pair<int, int>, int> confusion;// (target, measured) -> count

  std::string to_json() const;
  std::string to_text() const;  // aligned human-readable table
};

/// Build the report.  Throws if records is empty or mixes dims.
MetricsReport counting_metrics(const std::vector<EvalRecord>& records);

/// Welch's unequal-variance t-test, two-sided.
struct WelchResult {
  double t = 0.0;
  double dof = 0.0;
  double p_two_sided = 1.0;
  bool significant_at_95 = false;  // p < 0.05
};

/// Throws ValidationError if either sample has n < 2 or both variances are
/// zero.  p is computed from the regularized incomplete beta function:
/// p = I_{dof/(dof+t^2)}(dof/2, 1/2).
WelchResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b);

/// Regularized incomplete beta function I_x(a, b), continued-fraction
/// evaluation.  Exposed for testing against an independent oracle.
double regularized_incomplete_beta(double a, double b, double x);

}  // namespace topogen
