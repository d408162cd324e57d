#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "eifnet/tensor.hpp"

namespace eifnet {

struct SegMetrics {
  double miou = 0.0;
  double pa = 0.0;
  /// Per-class IoU; NaN where the class is absent from both maps.
  std::vector<double> iou;
};

/// PA = correct / total; mIoU averages IoU over classes with a non-empty union.
SegMetrics segmentation_metrics(std::span<const int> pred, std::span<const int> gt, std::size_t classes);

/// Channel argmax of logits [B,K,H,W] -> B*H*W class ids (first max wins).
template <typename T>
std::vector<int> argmax_classes(const Tensor<T>& logits);

/// Integer class ids stored in a float tensor.
std::vector<int> labels_from_tensor(const Tensor<float>& labels);
Tensor<float> labels_to_tensor(const std::vector<int>& ids, const Shape& shape);

}  // namespace eifnet
