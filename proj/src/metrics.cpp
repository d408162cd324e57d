#include "eifnet/metrics.hpp"

#include <cmath>
#include <limits>

#include "eifnet/error.hpp"

namespace eifnet {

SegMetrics segmentation_metrics(std::span<const int> pred, std::span<const int> gt, std::size_t classes) {
  if (pred.size() != gt.size()) throw ShapeError("metrics: prediction and label sizes differ");
  if (gt.empty()) throw ShapeError("metrics: empty label map");
  std::vector<std::size_t> inter(classes, 0), in_pred(classes, 0), in_gt(classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const int p = pred[i], g = gt[i];
    if (p < 0 || g < 0 || static_cast<std::size_t>(p) >= classes || static_cast<std::size_t>(g) >= classes) {
      throw ShapeError("metrics: class id out of range at pixel " + std::to_string(i));
    }
    ++in_pred[p];
    ++in_gt[g];
    if (p == g) {
      ++inter[p];
      ++correct;
    }
  }
  SegMetrics m;
  m.pa = static_cast<double>(correct) / static_cast<double>(gt.size());
  m.iou.assign(classes, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    const std::size_t uni = in_pred[k] + in_gt[k] - inter[k];
    if (uni == 0) continue;
    m.iou[k] = static_cast<double>(inter[k]) / static_cast<double>(uni);
    sum += m.iou[k];
    ++present;
  }
  m.miou = sum / static_cast<double>(present);
  return m;
}

template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& logits) {
  if (logits.rank() != 4) throw ShapeError("argmax: logits must be [B,K,H,W], got " + shape_str(logits.shape()));
  const std::size_t B = logits.dim(0), K = logits.dim(1), HW = logits.dim(2) * logits.dim(3);
  std::vector<int> out(B * HW, 0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < HW; ++i) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < K; ++k) {
        if (logits[(b * K + k) * HW + i] > logits[(b * K + best) * HW + i]) best = k;
      }
      out[b * HW + i] = static_cast<int>(best);
    }
  }
  return out;
}

std::vector<int> labels_from_tensor(const Tensor<float>& labels) {
  std::vector<int> out;
  out.reserve(labels.size());
  for (float v : labels.data()) {
    if (v != std::floor(v) || v < -1.0f) throw FormatError("labels must hold integer class ids");
    out.push_back(static_cast<int>(v));
  }
  return out;
}

Tensor<float> labels_to_tensor(const std::vector<int>& ids, const Shape& shape) {
  Tensor<float> t(shape);
  if (t.size() != ids.size()) throw ShapeError("labels: size does not match " + shape_str(shape));
  for (std::size_t i = 0; i < ids.size(); ++i) t[i] = static_cast<float>(ids[i]);
  return t;
}

template std::vector<int> argmax_classes(const Tensor<float>&);
template std::vector<int> argmax_classes(const Tensor<double>&);

}  // namespace eifnet
