#include "topogen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "topogen/errors.hpp"
#include "topogen/persistence.hpp"

namespace topogen {

int measured_count(const ImageGrid& img, int dim, double u, int min_area) {
  img.validate();
  if (dim != 0 && dim != 1) throw ValidationError("measured_count: dim must be 0 or 1");
  if (min_area < 0) throw ValidationError("measured_count: min_area must be >= 0");

  std::vector<char> mask(img.size());
  std::vector<int> labels;
  int count = 0;
  std::vector<char> excluded;

  if (dim == 0) {
    for (std::size_t i = 0; i < img.size(); ++i) mask[i] = img.v[i] >= u ? 1 : 0;
    count = label_components(mask, img.h, img.w, 8, &labels);
    excluded.assign(count, 0);
  } else {
    for (std::size_t i = 0; i < img.size(); ++i) mask[i] = img.v[i] < u ? 1 : 0;
    count = label_components(mask, img.h, img.w, 4, &labels);
    excluded.assign(count, 0);
    // Background regions reaching the border are outside, not holes.
    for (int c = 0; c < img.w; ++c) {
      if (labels[c] >= 0) excluded[labels[c]] = 1;
      if (labels[static_cast<std::size_t>(img.h - 1) * img.w + c] >= 0)
        excluded[labels[static_cast<std::size_t>(img.h - 1) * img.w + c]] = 1;
    }
    for (int r = 0; r < img.h; ++r) {
      if (labels[static_cast<std::size_t>(r) * img.w] >= 0)
        excluded[labels[static_cast<std::size_t>(r) * img.w]] = 1;
      if (labels[static_cast<std::size_t>(r) * img.w + img.w - 1] >= 0)
        excluded[labels[static_cast<std::size_t>(r) * img.w + img.w - 1]] = 1;
    }
  }

  std::vector<int> area(count, 0);
  for (int l : labels)
    if (l >= 0) ++area[l];
  int kept = 0;
  for (int c = 0; c < count; ++c)
    if (!excluded[c] && area[c] >= min_area) ++kept;
  return kept;
}

MetricsReport counting_metrics(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ValidationError("counting_metrics: no records");
  const int dim = records.front().dim;
  for (const EvalRecord& r : records)
    if (r.dim != dim) throw ValidationError("counting_metrics: records mix dimensions");

  MetricsReport rep;
  rep.n_records = static_cast<int>(records.size());

  std::map<int, int> measured_total;  // measured class -> count
  int correct = 0;
  for (const EvalRecord& r : records) {
    ++rep.confusion[{r.target_c, r.measured}];
    ++rep.per_c_count[r.target_c];
    ++measured_total[r.measured];
    if (r.measured == r.target_c) ++correct;
  }
  rep.accuracy = static_cast<double>(correct) / rep.n_records;

  // Per target class: recall doubles as that class's accuracy; precision
  // for a class that was never measured is 0 by convention.
  double sum_p = 0.0, sum_r = 0.0, sum_f = 0.0;
  for (const auto& [c, n] : rep.per_c_count) {
    int tp = 0;
    const auto it = rep.confusion.find({c, c});
    if (it != rep.confusion.end()) tp = it->second;
    const double recall = static_cast<double>(tp) / n;
    const int pred = measured_total.count(c) ? measured_total.at(c) : 0;
    const double precision = pred > 0 ? static_cast<double>(tp) / pred : 0.0;
    const double f1 =
        (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    rep.per_c_accuracy[c] = recall;
    sum_p += precision;
    sum_r += recall;
    sum_f += f1;
  }
  const double k = static_cast<double>(rep.per_c_count.size());
  rep.macro_precision = sum_p / k;
  rep.macro_recall = sum_r / k;
  rep.macro_f1 = sum_f / k;

  double mean = 0.0;
  for (const auto& [c, a] : rep.per_c_accuracy) mean += a;
  mean /= k;
  double var = 0.0;
  for (const auto& [c, a] : rep.per_c_accuracy) var += (a - mean) * (a - mean);
  rep.per_c_accuracy_mean = mean;
  rep.per_c_accuracy_std = k > 1 ? std::sqrt(var / (k - 1.0)) : 0.0;
  return rep;
}

std::string MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_records"] = n_records;
  j["accuracy"] = accuracy;
  j["macro_precision"] = macro_precision;
  j["macro_recall"] = macro_recall;
  j["macro_f1"] = macro_f1;
  j["per_c_accuracy_mean"] = per_c_accuracy_mean;
  j["per_c_accuracy_std"] = per_c_accuracy_std;
  nlohmann::ordered_json per_c = nlohmann::ordered_json::object();
  for (const auto& [c, a] : per_c_accuracy) {
    nlohmann::ordered_json e;
    e["accuracy"] = a;
    e["n"] = per_c_count.at(c);
    per_c[std::to_string(c)] = std::move(e);
  }
  j["per_c"] = std::move(per_c);
  nlohmann::ordered_json conf = nlohmann::ordered_json::array();
  for (const auto& [tm, n] : confusion)
    conf.push_back({{"target", tm.first}, {"measured", tm.second}, {"count", n}});
  j["confusion"] = std::move(conf);
  return j.dump(2);
}

std::string MetricsReport::to_text() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "records: " << n_records << "\n";
  os << "accuracy: " << accuracy << "\n";
  os << "macro precision: " << macro_precision << "  recall: " << macro_recall
     << "  F1: " << macro_f1 << "\n";
  os << "per-c accuracy: " << per_c_accuracy_mean << " +/- " << per_c_accuracy_std << "\n";
  for (const auto& [c, a] : per_c_accuracy)
    os << "  c=" << c << ": " << a << " (n=" << per_c_count.at(c) << ")\n";
  os << "confusion (target -> measured: count):\n";
  for (const auto& [tm, n] : confusion)
    os << "  " << tm.first << " -> " << tm.second << ": " << n << "\n";
  return os.str();
}

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta: a, b must be > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  // Use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) so the continued fraction
  // converges fast.
  if (x > (a + 1.0) / (a + b + 2.0)) return 1.0 - regularized_incomplete_beta(b, a, 1.0 - x);

  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);

  // Modified Lentz evaluation of the standard continued fraction.
  const double tiny = 1e-300;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 500; ++m) {
    const double m2 = 2.0 * m;
    double num = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + num * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-15) break;
  }
  return std::exp(ln_front) * h / a;
}

WelchResult welch_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t na = a.size(), nb = b.size();
  if (na < 2 || nb < 2) throw ValidationError("welch_ttest: both samples need n >= 2");

  const auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / v.size();
  };
  const auto sample_var = [](const std::vector<double>& v, double m) {
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / (v.size() - 1);
  };

  const double ma = mean(a), mb = mean(b);
  const double va = sample_var(a, ma), vb = sample_var(b, mb);
  if (va == 0.0 && vb == 0.0)
    throw ValidationError("welch_ttest: both samples have zero variance");

  const double sa = va / na, sb = vb / nb;
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.dof = (sa + sb) * (sa + sb) /
          (sa * sa / (na - 1) + sb * sb / (nb - 1));
  const double x = r.dof / (r.dof + r.t * r.t);
  r.p_two_sided = std::clamp(regularized_incomplete_beta(r.dof / 2.0, 0.5, x), 0.0, 1.0);
  r.significant_at_95 = r.p_two_sided < 0.05;
  return r;
}

}  // namespace topogen
