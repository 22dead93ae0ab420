#include "bacnn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "bacnn/error.hpp"

namespace bacnn {

ConfusionMatrix::ConfusionMatrix(int k) : k_(k), counts_(static_cast<std::size_t>(k) * k, 0) {
  if (k < 0) throw ContractError("class count must be non-negative");
}

void ConfusionMatrix::add(int truth, int pred) {
  if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_) {
    throw ContractError("confusion: index pair (" + std::to_string(truth) + ", " + std::to_string(pred) +
                        ") outside [0, " + std::to_string(k_) + ")");
  }
  ++counts_[index(truth, pred)];
}

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (int i = 0; i < k_; ++i) t += (*this)(i, i);
  return t;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int j = 0; j < k_; ++j) s += (*this)(truth, j);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
  std::int64_t s = 0;
  for (int i = 0; i < k_; ++i) s += (*this)(i, pred);
  return s;
}

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, int k) {
  if (truth.size() != pred.size()) throw ContractError("confusion: truth and prediction lengths differ");
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], pred[i]);
  return cm;
}

double overall_accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw MetricError("overall accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(total);
}

double average_accuracy(const ConfusionMatrix& cm) {
  if (cm.classes() == 0) throw MetricError("average accuracy without classes");
  double sum = 0.0;
  for (int i = 0; i < cm.classes(); ++i) {
    const auto row = cm.row_sum(i);
    if (row == 0) throw MetricError("average accuracy: class " + std::to_string(i) + " has no samples");
    sum += static_cast<double>(cm(i, i)) / static_cast<double>(row);
  }
  return sum / cm.classes();
}

double kappa(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw MetricError("kappa of an empty confusion matrix");
  std::int64_t chance = 0;
  for (int i = 0; i < cm.classes(); ++i) chance += cm.row_sum(i) * cm.col_sum(i);
  const double n = static_cast<double>(total);
  const double p_o = static_cast<double>(cm.trace()) / n;
  const double p_e = static_cast<double>(chance) / (n * n);
  if (p_e == 1.0) return p_o == 1.0 ? 1.0 : 0.0;
  return (p_o - p_e) / (1.0 - p_e);
}

std::vector<double> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<double> out(static_cast<std::size_t>(cm.classes()), 0.0);
  for (int i = 0; i < cm.classes(); ++i) {
    const auto row = cm.row_sum(i);
    if (row > 0) out[static_cast<std::size_t>(i)] = static_cast<double>(cm(i, i)) / static_cast<double>(row);
  }
  return out;
}

std::vector<double> MetricsReport::cells() const {
  std::vector<double> out = per_class;
  out.push_back(oa);
  out.push_back(aa);
  out.push_back(kappa);
  return out;
}

MetricsReport make_report(const ConfusionMatrix& cm) {
  return {per_class_accuracy(cm), overall_accuracy(cm), average_accuracy(cm), kappa(cm)};
}

AggregateReport aggregate(std::span<const MetricsReport> reports) {
  if (reports.empty()) throw ContractError("aggregate needs at least one report");
  const std::size_t k = reports.front().per_class.size();
  AggregateReport out;
  out.classes = static_cast<int>(k);
  out.runs = reports.size();
  out.mean.assign(k + 3, 0.0);
  out.stddev.assign(k + 3, 0.0);
  for (const auto& r : reports) {
    if (r.per_class.size() != k) throw ContractError("aggregate: reports disagree on the class count");
    const auto cells = r.cells();
    for (std::size_t i = 0; i < cells.size(); ++i) out.mean[i] += cells[i];
  }
  const double n = static_cast<double>(reports.size());
  for (double& m : out.mean) m /= n;
  for (const auto& r : reports) {
    const auto cells = r.cells();
    for (std::size_t i = 0; i < cells.size(); ++i) out.stddev[i] += (cells[i] - out.mean[i]) * (cells[i] - out.mean[i]);
  }
  for (double& s : out.stddev) s = std::sqrt(s / n);
  return out;
}

namespace {

std::string percent_cell(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f(%.2f)", 100.0 * mean, 100.0 * stddev);
  return buf;
}

}  // namespace

void write_table_csv(std::ostream& out, std::span<const NamedAggregate> columns) {
  if (columns.empty()) throw ContractError("write_table_csv: no columns");
  const int k = columns.front().report.classes;
  for (const auto& c : columns) {
    if (c.report.classes != k) throw ContractError("write_table_csv: columns disagree on the class count");
  }
  out << "class";
  for (const auto& c : columns) out << ',' << c.column;
  out << '\n';
  const char* criteria[] = {"OA", "AA", "Kappa"};
  for (int row = 0; row < k + 3; ++row) {
    if (row < k) out << row + 1;
    else out << criteria[row - k];
    for (const auto& c : columns) {
      out << ',' << percent_cell(c.report.mean[static_cast<std::size_t>(row)],
                                 c.report.stddev[static_cast<std::size_t>(row)]);
    }
    out << '\n';
  }
}

void write_report_csv(std::ostream& out, const MetricsReport& report) {
  const MetricsReport single[] = {report};
  const NamedAggregate column[] = {{"value", aggregate(single)}};
  write_table_csv(out, column);
}

}  // namespace bacnn
