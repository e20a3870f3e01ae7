#include "bev/metrics.hpp"

#include <iomanip>
#include <numeric>

#include "bev/error.hpp"

namespace bev {

ConfusionMatrix::ConfusionMatrix(std::size_t classes)
    : counts_(Counts::Zero(static_cast<Eigen::Index>(classes), static_cast<Eigen::Index>(classes))) {}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.classes() != classes()) throw Error(ErrorKind::Metric, "cannot merge confusion matrices of different sizes");
  counts_ += other.counts_;
  return *this;
}

ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  ConfusionMatrix out = a;
  out += b;
  return out;
}

void accumulate(ConfusionMatrix& cm, const SemanticImage& pred, const SemanticImage& gt) {
  if (pred.width() != gt.width() || pred.height() != gt.height()) {
    throw Error(ErrorKind::Metric, "prediction is " + std::to_string(pred.width()) + "x" +
                                       std::to_string(pred.height()) + " but ground truth is " +
                                       std::to_string(gt.width()) + "x" + std::to_string(gt.height()));
  }
  if (!same_palette(pred, gt)) throw Error(ErrorKind::Metric, "prediction and ground truth use different palettes");
  if (gt.palette->size() != cm.classes()) throw Error(ErrorKind::Metric, "confusion matrix size differs from palette");
  const ClassIndex* p = pred.labels.data();
  const ClassIndex* g = gt.labels.data();
  const std::size_t k = cm.classes();
  for (Eigen::Index i = 0; i < gt.labels.size(); ++i) {
    if (p[i] >= k || g[i] >= k) throw Error(ErrorKind::Metric, "label index outside the palette");
    ++cm.at(g[i], p[i]);
  }
}

std::optional<double> class_iou(const ConfusionMatrix& cm, std::size_t c) {
  if (c >= cm.classes()) throw Error(ErrorKind::Metric, "class index out of range");
  const auto& m = cm.counts();
  const auto i = static_cast<Eigen::Index>(c);
  const std::uint64_t tp = m(i, i);
  const std::uint64_t uni = m.row(i).sum() + m.col(i).sum() - tp;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

double miou(const ConfusionMatrix& cm, const std::vector<std::size_t>& included) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t c : included) {
    if (auto iou = class_iou(cm, c)) {
      sum += *iou;
      ++n;
    }
  }
  if (n == 0) throw Error(ErrorKind::Metric, "MIoU undefined: every included class has an empty union");
  return sum / n;
}

double miou(const ConfusionMatrix& cm) {
  std::vector<std::size_t> all(cm.classes());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return miou(cm, all);
}

EvaluationReport make_report(const ConfusionMatrix& cm, const Palette& palette) {
  if (palette.size() != cm.classes()) throw Error(ErrorKind::Metric, "palette size differs from confusion matrix");
  EvaluationReport r;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    r.classes.push_back({palette[c].name, class_iou(cm, c), cm.counts().row(static_cast<Eigen::Index>(c)).sum()});
  }
  try {
    r.miou = miou(cm);
  } catch (const Error&) {
    r.miou.reset();
  }
  return r;
}

void write_report_csv(std::ostream& os, const EvaluationReport& report) {
  os << "class,iou,pixels\n";
  const auto flags = os.flags();
  os << std::fixed << std::setprecision(6);
  for (const auto& c : report.classes) {
    os << c.name << ',';
    if (c.iou) {
      os << *c.iou;
    } else {
      os << "absent";
    }
    os << ',' << c.gt_pixels << '\n';
  }
  os << "miou,";
  if (report.miou) {
    os << *report.miou;
  } else {
    os << "undefined";
  }
  os << ",\n";
  os.flags(flags);
}

}  // namespace bev
