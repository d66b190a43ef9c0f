#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace peft {

// K×K counts; rows are true classes, columns predictions (both 0-based).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  ConfusionMatrix(std::size_t classes, std::vector<std::uint64_t> counts);

  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1);
  void merge(const ConfusionMatrix& other);

  std::size_t classes() const noexcept { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * k_ + predicted]; }
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t col_sum(std::size_t predicted) const;
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

double overall_accuracy(const ConfusionMatrix& cm);
// Mean per-class recall. Throws when a class row is empty unless
// skip_empty_rows is set, in which case such classes are left out.
double average_accuracy(const ConfusionMatrix& cm, bool skip_empty_rows = false);
double kappa(const ConfusionMatrix& cm);
// Recall per class; NaN for classes without samples.
std::vector<double> per_class_accuracy(const ConfusionMatrix& cm);

struct MetricsSummary {
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;
  std::vector<double> per_class;
};

// AA skips classes without samples; kappa is NaN for a degenerate matrix.
MetricsSummary summarize(const ConfusionMatrix& cm);

// Percentages with two decimals, one row per class.
std::string format_metrics_table(const MetricsSummary& m);
// "oa=", "aa=", "kappa=", "per_class_<i>=" lines (fractions, 1-based class index).
std::string format_metrics_kv(const MetricsSummary& m);

}  // namespace peft
