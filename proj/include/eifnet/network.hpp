#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "eifnet/aefrm.hpp"
#include "eifnet/config.hpp"
#include "eifnet/layers.hpp"
#include "eifnet/marm.hpp"
#include "eifnet/mgfm.hpp"

namespace eifnet {

template <typename T>
using StageFeatures = std::array<Var<T>, kStages>;

/// Four-stage conv backbone: 7x7/s4, then three 3x3/s2, each conv+bn+relu.
class StubEncoder {
 public:
  StubEncoder() = default;
  StubEncoder(const std::string& prefix, std::size_t in_channels, const StageSizes& widths);

  const ConvBnRelu& stage(std::size_t s) const { return stages_.at(s); }

  template <typename T>
  void init(ParamStore<T>& store, Rng& rng) const;

  /// x [B,in,H,W], H and W divisible by 32.
  template <typename T>
  StageFeatures<T> forward(Context<T>& ctx, Var<T> x) const;

 private:
  std::array<ConvBnRelu, kStages> stages_;
};

/// Multi-scale aggregation head: per-stage 1x1 projection, resample to the
/// stage-1 grid, concat, 1x1 conv+bn+relu, 1x1 classifier, resample to the
/// input size.
class Decoder {
 public:
  Decoder() = default;
  Decoder(const std::string& prefix, const StageSizes& widths, std::size_t width, std::size_t classes);

  const Conv2d& projection(std::size_t s) const { return proj_.at(s); }
  const ConvBnRelu& fuse() const { return fuse_; }
  const Conv2d& classifier() const { return cls_; }

  template <typename T>
  void init(ParamStore<T>& store, Rng& rng) const;

  template <typename T>
  Var<T> forward(Context<T>& ctx, const StageFeatures<T>& stages, std::size_t out_h,
                 std::size_t out_w) const;

 private:
  std::array<Conv2d, kStages> proj_;
  ConvBnRelu fuse_;
  Conv2d cls_;
};

/// Full toy network. Parameters of toggled-off modules are not created.
class Eifnet {
 public:
  explicit Eifnet(NetworkConfig config);

  const NetworkConfig& config() const { return cfg_; }
  const Aefrm& aefrm() const { return aefrm_; }
  const StubEncoder& event_encoder() const { return event_enc_; }
  const StubEncoder& image_encoder() const { return image_enc_; }
  const Conv2d& event_projection(std::size_t s) const { return project_.at(s); }
  const Marm& marm(std::size_t s) const { return marm_.at(s); }
  const Mgfm& mgfm(std::size_t s) const { return mgfm_.at(s); }
  const Decoder& decoder() const { return decoder_; }

  template <typename T>
  void init(ParamStore<T>& store, Rng& rng) const;

  /// Fresh parameters drawn from config().seed.
  template <typename T>
  ParamStore<T> make_params() const;

  /// e_feat [B,C_e[s],h,w] -> [B,C_i[s],h,w]
  template <typename T>
  Var<T> project_event(Context<T>& ctx, Var<T> e_feat, std::size_t s) const;

  /// Fused stage maps {M_1..M_4}.
  template <typename T>
  StageFeatures<T> stage_features(Context<T>& ctx, Var<T> image, Var<T> e_vt, Var<T> a_cm) const;

  /// image [B,3,H,W], e_vt and a_cm [B,bins,H,W] -> logits [B,classes,H,W]
  template <typename T>
  Var<T> forward(Context<T>& ctx, Var<T> image, Var<T> e_vt, Var<T> a_cm) const;

 private:
  void check_inputs(const Shape& image, const Shape& e_vt, const Shape& a_cm) const;

  NetworkConfig cfg_;
  Aefrm aefrm_;
  StubEncoder event_enc_;
  StubEncoder image_enc_;
  std::array<Conv2d, kStages> project_;
  std::vector<Marm> marm_;
  std::vector<Mgfm> mgfm_;
  Decoder decoder_;
};

}  // namespace eifnet
