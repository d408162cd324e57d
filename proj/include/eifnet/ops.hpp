#pragma once

// Differentiable operations: each runs a kernel forward and records its
// backward on the tape of its inputs.

#include <cstddef>
#include <vector>

#include "eifnet/autodiff.hpp"
#include "eifnet/kernels.hpp"

namespace eifnet::ops {

using kernels::PoolKind;
using kernels::ResampleMode;

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, std::size_t stride, std::size_t pad) {
  Tape<T>& tape = *x.tape;
  auto out = kernels::conv2d(x.value(), w.value(), b.value(), stride, pad);
  return tape.record(std::move(out), {x, w, b},
                     [x, w, b, stride, pad](Tape<T>& t, const Tensor<T>& g) {
                       auto gr = kernels::conv2d_backward(t.value(x.id), t.value(w.id), g, stride, pad);
                       t.accumulate(x.id, gr.input);
                       t.accumulate(w.id, gr.weight);
                       t.accumulate(b.id, gr.bias);
                     });
}

template <typename T>
Var<T> pool2d(Var<T> x, PoolKind kind, std::size_t kernel, std::size_t stride, std::size_t pad) {
  auto out = kernels::pool2d(x.value(), kind, kernel, stride, pad);
  return x.tape->record(std::move(out), {x},
                        [x, kind, kernel, stride, pad](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(x.id, kernels::pool2d_backward(t.value(x.id), g, kind,
                                                                      kernel, stride, pad));
                        });
}

template <typename T>
Var<T> gap(Var<T> x) {
  auto out = kernels::gap(x.value());
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, kernels::gap_backward(t.value(x.id).shape(), g));
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  auto out = kernels::sigmoid(x.value());
  Tape<T>* tape = x.tape;
  const std::size_t self = tape->size();
  return tape->record(std::move(out), {x}, [x, self](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, kernels::sigmoid_backward(t.value(self), g));
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  auto out = kernels::relu(x.value());
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, kernels::relu_backward(t.value(x.id), g));
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  auto out = kernels::gelu(x.value());
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, kernels::gelu_backward(t.value(x.id), g));
  });
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  auto out = kernels::softmax(x.value(), axis);
  Tape<T>* tape = x.tape;
  const std::size_t self = tape->size();
  return tape->record(std::move(out), {x}, [x, self, axis](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, kernels::softmax_backward(t.value(self), g, axis));
  });
}

template <typename T>
Var<T> batchnorm2d(Var<T> x, Var<T> scale, Var<T> shift) {
  auto out = kernels::batchnorm2d(x.value(), scale.value(), shift.value());
  return x.tape->record(std::move(out), {x, scale, shift},
                        [x, scale, shift](Tape<T>& t, const Tensor<T>& g) {
                          auto gr = kernels::batchnorm2d_backward(t.value(x.id), t.value(scale.id), g);
                          t.accumulate(x.id, gr.input);
                          t.accumulate(scale.id, gr.scale);
                          t.accumulate(shift.id, gr.shift);
                        });
}

template <typename T>
Var<T> layernorm_channels(Var<T> x, Var<T> scale, Var<T> shift) {
  auto out = kernels::layernorm_channels(x.value(), scale.value(), shift.value());
  return x.tape->record(std::move(out), {x, scale, shift},
                        [x, scale, shift](Tape<T>& t, const Tensor<T>& g) {
                          auto gr = kernels::layernorm_channels_backward(t.value(x.id),
                                                                         t.value(scale.id), g);
                          t.accumulate(x.id, gr.input);
                          t.accumulate(scale.id, gr.scale);
                          t.accumulate(shift.id, gr.shift);
                        });
}

template <typename T>
Var<T> resample(Var<T> x, std::size_t out_h, std::size_t out_w, ResampleMode mode) {
  if (x.dim(2) == out_h && x.dim(3) == out_w && mode == ResampleMode::bilinear) return x;
  auto out = kernels::resample(x.value(), out_h, out_w, mode);
  return x.tape->record(std::move(out), {x}, [x, mode](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, kernels::resample_backward(t.value(x.id).shape(), g, mode));
  });
}

template <typename T>
Var<T> attention_core(Var<T> q, Var<T> k, Var<T> v) {
  auto out = kernels::attention_core(q.value(), k.value(), v.value());
  return q.tape->record(std::move(out), {q, k, v}, [q, k, v](Tape<T>& t, const Tensor<T>& g) {
    auto gr = kernels::attention_core_backward(t.value(q.id), t.value(k.id), t.value(v.id), g);
    t.accumulate(q.id, gr.q);
    t.accumulate(k.id, gr.k);
    t.accumulate(v.id, gr.v);
  });
}

// --- elementwise (broadcasting) ---------------------------------------------

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  auto out = kernels::binary(a.value(), b.value(), kernels::BinaryOp::add);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, kernels::reduce_to_shape(g, t.value(a.id).shape()));
    t.accumulate(b.id, kernels::reduce_to_shape(g, t.value(b.id).shape()));
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto out = kernels::binary(a.value(), b.value(), kernels::BinaryOp::sub);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a.id, kernels::reduce_to_shape(g, t.value(a.id).shape()));
    Tensor<T> neg = g;
    for (auto& v : neg.data()) v = -v;
    t.accumulate(b.id, kernels::reduce_to_shape(neg, t.value(b.id).shape()));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto out = kernels::binary(a.value(), b.value(), kernels::BinaryOp::mul);
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      auto ga = kernels::binary(g, t.value(b.id), kernels::BinaryOp::mul);
      t.accumulate(a.id, kernels::reduce_to_shape(ga, t.value(a.id).shape()));
    }
    if (t.requires_grad(b)) {
      auto gb = kernels::binary(g, t.value(a.id), kernels::BinaryOp::mul);
      t.accumulate(b.id, kernels::reduce_to_shape(gb, t.value(b.id).shape()));
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= factor;
  return x.tape->record(std::move(out), {x}, [x, factor](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx = g;
    for (auto& v : gx.data()) v *= factor;
    t.accumulate(x.id, gx);
  });
}

// --- layout ------------------------------------------------------------------

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  auto out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, g.reshaped(t.value(x.id).shape()));
  });
}

template <typename T>
Var<T> permute(Var<T> x, std::vector<std::size_t> order) {
  auto out = kernels::permute(x.value(), order);
  std::vector<std::size_t> inverse(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) inverse[order[i]] = i;
  return x.tape->record(std::move(out), {x}, [x, inverse](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, kernels::permute(g, inverse));
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  std::vector<const Tensor<T>*> values;
  for (const auto& p : parts) values.push_back(&p.value());
  auto out = kernels::concat(values, axis);
  return parts.front().tape->record(std::move(out), parts,
                                    [parts, axis](Tape<T>& t, const Tensor<T>& g) {
                                      std::size_t offset = 0;
                                      for (const auto& p : parts) {
                                        const std::size_t ext = t.value(p.id).dim(axis);
                                        if (t.requires_grad(p)) {
                                          t.accumulate(p.id, kernels::slice(g, axis, offset, ext));
                                        }
                                        offset += ext;
                                      }
                                    });
}

template <typename T>
Var<T> slice(Var<T> x, std::size_t axis, std::size_t start, std::size_t length) {
  auto out = kernels::slice(x.value(), axis, start, length);
  return x.tape->record(std::move(out), {x},
                        [x, axis, start, length](Tape<T>& t, const Tensor<T>& g) {
                          const Tensor<T>& xv = t.value(x.id);
                          Tensor<T> gx(xv.shape());
                          // scatter `g` back into the sliced range
                          std::size_t outer = 1, inner = 1;
                          for (std::size_t i = 0; i < axis; ++i) outer *= xv.dim(i);
                          for (std::size_t i = axis + 1; i < xv.rank(); ++i) inner *= xv.dim(i);
                          const std::size_t ext = xv.dim(axis);
                          for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t j = 0; j < length * inner; ++j) {
                              gx[(o * ext + start) * inner + j] = g[o * length * inner + j];
                            }
                          }
                          t.accumulate(x.id, gx);
                        });
}

template <typename T>
Var<T> reduce_axis(Var<T> x, std::size_t axis, PoolKind kind) {
  auto out = kernels::reduce_axis(x.value(), axis, kind);
  return x.tape->record(std::move(out), {x}, [x, axis, kind](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(x.id, kernels::reduce_axis_backward(t.value(x.id), g, axis, kind));
  });
}

/// Sum of all elements as a rank-0 scalar.
template <typename T>
Var<T> sum(Var<T> x) {
  Acc<T> acc = 0;
  for (auto v : x.value().data()) acc += v;
  return x.tape->record(Tensor<T>::scalar(static_cast<T>(acc)), {x},
                        [x](Tape<T>& t, const Tensor<T>& g) {
                          t.accumulate(x.id, Tensor<T>(t.value(x.id).shape(), g.item()));
                        });
}

/// Sum of x * weights over all elements (a fixed random projection makes a
/// well-conditioned scalar for gradient checks).
template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& weights) {
  if (weights.shape() != x.shape()) throw ShapeError("weighted_sum: weight shape mismatch");
  Acc<T> acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.value()[i] * weights[i];
  return x.tape->record(Tensor<T>::scalar(static_cast<T>(acc)), {x},
                        [x, weights](Tape<T>& t, const Tensor<T>& g) {
                          Tensor<T> gx = weights;
                          for (auto& v : gx.data()) v *= g.item();
                          t.accumulate(x.id, gx);
                        });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::vector<int> labels, int ignore_id = -1) {
  const T loss = kernels::cross_entropy(logits.value(), labels, ignore_id);
  return logits.tape->record(Tensor<T>::scalar(loss), {logits},
                             [logits, labels = std::move(labels), ignore_id](Tape<T>& t,
                                                                             const Tensor<T>& g) {
                               t.accumulate(logits.id,
                                            kernels::cross_entropy_backward(
                                                t.value(logits.id), labels, ignore_id, g.item()));
                             });
}

}  // namespace eifnet::ops
