#include "core/metrics.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "core/errors.hpp"
#include "core/text_util.hpp"

namespace peft {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
}

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::vector<std::uint64_t> counts)
    : k_(classes), counts_(std::move(counts)) {
  if (classes == 0 || counts_.size() != classes * classes)
    throw ConfigError("confusion matrix counts must have K*K entries");
}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted, std::uint64_t n) {
  if (truth >= k_ || predicted >= k_) throw ConfigError("confusion matrix index out of range");
  counts_[truth * k_ + predicted] += n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.k_ != k_) throw ConfigError("cannot merge confusion matrices of different sizes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto c : counts_) t += c;
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t t = 0;
  for (std::size_t j = 0; j < k_; ++j) t += at(truth, j);
  return t;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < k_; ++i) t += at(i, predicted);
  return t;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw DataError("overall accuracy of an empty confusion matrix");
  std::uint64_t diag = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) diag += cm.at(i, i);
  return static_cast<double>(diag) / static_cast<double>(total);
}

double average_accuracy(const ConfusionMatrix& cm, bool skip_empty_rows) {
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const std::uint64_t row = cm.row_sum(i);
    if (row == 0) {
      if (skip_empty_rows) continue;
      throw DataError("average accuracy: class " + std::to_string(i + 1) + " has no samples");
    }
    sum += static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
    ++used;
  }
  if (used == 0) throw DataError("average accuracy of an empty confusion matrix");
  return sum / static_cast<double>(used);
}

double kappa(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw DataError("kappa of an empty confusion matrix");
  const double po = overall_accuracy(cm);
  const double n = static_cast<double>(total);
  double pe = 0.0;
  for (std::size_t k = 0; k < cm.classes(); ++k)
    pe += static_cast<double>(cm.row_sum(k)) * static_cast<double>(cm.col_sum(k));
  pe /= n * n;
  if (pe >= 1.0) throw DataError("kappa is undefined when chance agreement equals 1");
  return (po - pe) / (1.0 - pe);
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<double> out(cm.classes());
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const std::uint64_t row = cm.row_sum(i);
    out[i] = row == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
  }
  return out;
}

MetricsSummary summarize(const ConfusionMatrix& cm) {
  MetricsSummary m;
  m.oa = overall_accuracy(cm);
  m.aa = average_accuracy(cm, /*skip_empty_rows=*/true);
  // A degenerate matrix (chance agreement 1) has no kappa; report NaN.
  try {
    m.kappa = kappa(cm);
  } catch (const DataError&) {
    m.kappa = std::numeric_limits<double>::quiet_NaN();
  }
  m.per_class = per_class_accuracy(cm);
  return m;
}

std::string format_metrics_table(const MetricsSummary& m) {
  std::ostringstream os;
  os << "class  accuracy(%)\n";
  for (std::size_t i = 0; i < m.per_class.size(); ++i) {
    os << (i + 1 < 10 ? "    " : "   ") << (i + 1) << "  ";
    os << (std::isnan(m.per_class[i]) ? std::string("   n/a") : format_fixed(100.0 * m.per_class[i], 2)) << '\n';
  }
  os << "OA     " << format_fixed(100.0 * m.oa, 2) << '\n'
     << "AA     " << format_fixed(100.0 * m.aa, 2) << '\n'
     << "Kappa  " << format_fixed(100.0 * m.kappa, 2) << '\n';
  return os.str();
}

std::string format_metrics_kv(const MetricsSummary& m) {
  std::ostringstream os;
  os << "oa=" << format_double(m.oa) << '\n'
     << "aa=" << format_double(m.aa) << '\n'
     << "kappa=" << format_double(m.kappa) << '\n';
  for (std::size_t i = 0; i < m.per_class.size(); ++i)
    os << "per_class_" << (i + 1) << '=' << (std::isnan(m.per_class[i]) ? "nan" : format_double(m.per_class[i])) << '\n';
  return os.str();
}

}  // namespace peft
