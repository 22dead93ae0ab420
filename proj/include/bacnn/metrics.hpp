#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace bacnn {

/// k x k counts; rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int k = 0);

  int classes() const { return k_; }
  std::int64_t operator()(int truth, int pred) const { return counts_[index(truth, pred)]; }
  void add(int truth, int pred);

  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int pred) const;

 private:
  std::size_t index(int truth, int pred) const { return static_cast<std::size_t>(truth) * k_ + pred; }

  int k_;
  std::vector<std::int64_t> counts_;
};

ConfusionMatrix confusion(std::span<const int> truth, std::span<const int> pred, int k);

/// trace / total.
double overall_accuracy(const ConfusionMatrix& cm);
/// Mean per-class recall; every class row must be nonempty.
double average_accuracy(const ConfusionMatrix& cm);
/// Cohen's kappa. When chance agreement is 1, kappa is 1 for perfect agreement and 0 otherwise.
double kappa(const ConfusionMatrix& cm);
/// Recall per class; classes without samples report 0.
std::vector<double> per_class_accuracy(const ConfusionMatrix& cm);

struct MetricsReport {
  std::vector<double> per_class;
  double oa = 0.0;
  double aa = 0.0;
  double kappa = 0.0;

  /// per_class..., oa, aa, kappa
  std::vector<double> cells() const;
};

MetricsReport make_report(const ConfusionMatrix& cm);

/// Cellwise mean and population standard deviation over repeated runs.
struct AggregateReport {
  int classes = 0;
  std::size_t runs = 0;
  std::vector<double> mean;  // layout of MetricsReport::cells()
  std::vector<double> stddev;
};

AggregateReport aggregate(std::span<const MetricsReport> reports);

struct NamedAggregate {
  std::string column;
  AggregateReport report;
};

// "class,<col>..." header, rows 1..k then OA, AA, Kappa; cells "mean(std)" in
// percent with two decimals.
void write_table_csv(std::ostream& out, std::span<const NamedAggregate> columns);
void write_report_csv(std::ostream& out, const MetricsReport& report);

}  // namespace bacnn
