#pragma once

// Confusion matrices and intersection-over-union scores. Rows index ground
// truth, columns index prediction.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bev/semantic_image.hpp"

namespace bev {

class ConfusionMatrix {
 public:
  using Counts = Eigen::Matrix<std::uint64_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  explicit ConfusionMatrix(std::size_t classes = 0);

  std::size_t classes() const { return static_cast<std::size_t>(counts_.rows()); }
  const Counts& counts() const { return counts_; }
  std::uint64_t operator()(std::size_t gt, std::size_t pred) const { return counts_(gt, pred); }
  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_(gt, pred); }
  std::uint64_t total() const { return counts_.sum(); }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  bool operator==(const ConfusionMatrix& other) const { return counts_ == other.counts_; }

 private:
  Counts counts_;
};

/// Adds one prediction / ground-truth pair. Throws a metric error on size or
/// palette mismatch.
void accumulate(ConfusionMatrix& cm, const SemanticImage& pred, const SemanticImage& gt);

ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b);

/// TP / (TP + FP + FN); nullopt when the union is empty.
std::optional<double> class_iou(const ConfusionMatrix& cm, std::size_t c);

/// Unweighted mean over the included classes that have a non-empty union.
/// Throws a metric error if none does.
double miou(const ConfusionMatrix& cm, const std::vector<std::size_t>& included);
double miou(const ConfusionMatrix& cm);

struct ClassScore {
  std::string name;
  std::optional<double> iou;
  std::uint64_t gt_pixels = 0;
};

struct EvaluationReport {
  std::vector<ClassScore> classes;
  std::optional<double> miou;
};

EvaluationReport make_report(const ConfusionMatrix& cm, const Palette& palette);

/// CSV with columns class,iou,pixels in palette order; absent classes show
/// "absent" in the iou column. A final line holds the MIoU.
void write_report_csv(std::ostream& os, const EvaluationReport& report);

}  // namespace bev
