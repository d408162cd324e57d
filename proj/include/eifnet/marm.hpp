#pragma once

#include <cstddef>
#include <string>
#include <utility>

#include "eifnet/layers.hpp"

namespace eifnet {

/// Modality-adaptive recalibration: per-modality channel attention, a joint
/// two-channel spatial mask from avg/max channel statistics, and residual
/// outputs scaled by learnable gammas (initialized to 0, so the module starts
/// as the identity).
class Marm {
 public:
  Marm(const std::string& prefix, std::size_t event_channels, std::size_t image_channels);

  const Conv2d& event_conv() const { return conv_ce_; }
  const Conv2d& image_conv() const { return conv_ci_; }
  const Conv2d& spatial_conv() const { return conv_s_; }
  const std::string& gamma_event() const { return gamma_e_; }
  const std::string& gamma_image() const { return gamma_i_; }

  template <typename T>
  void init(ParamStore<T>& store, Rng& rng) const;

  /// (E * w_e, I * w_i) with w = sigmoid(conv1x1(gap(.))) broadcast over space.
  template <typename T>
  std::pair<Var<T>, Var<T>> channel_recalibrate(Context<T>& ctx, Var<T> e, Var<T> i) const;

  /// [Avg(E_c), Max(E_c), Avg(I_c), Max(I_c)] over channels -> [B,4,H,W]
  template <typename T>
  static Var<T> spatial_stats(Var<T> e_c, Var<T> i_c);

  /// sigmoid(conv7x7(S)); channel 0 masks events, channel 1 masks the image.
  template <typename T>
  Var<T> spatial_masks(Context<T>& ctx, Var<T> s) const;

  /// E_rec = E_c * A_e * gamma_e + E, I_rec = I_c * A_i * gamma_i + I
  template <typename T>
  std::pair<Var<T>, Var<T>> recalibrate(Context<T>& ctx, Var<T> e, Var<T> i) const;

 private:
  Conv2d conv_ce_;
  Conv2d conv_ci_;
  Conv2d conv_s_;
  std::string gamma_e_;
  std::string gamma_i_;
};

}  // namespace eifnet
