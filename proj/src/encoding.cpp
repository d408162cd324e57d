#include "eifnet/encoding.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "eifnet/error.hpp"

namespace eifnet {

double normalize_time(std::int64_t t_us, const EventWindow& window, std::size_t bins) {
  if (bins == 0) throw Error("bins must be at least 1");
  if (t_us < window.t_start_us || t_us >= window.t_end_us) {
    throw Error("timestamp " + std::to_string(t_us) + " outside window [" +
                std::to_string(window.t_start_us) + ", " + std::to_string(window.t_end_us) + ")");
  }
  if (bins == 1) return 0.0;
  return static_cast<double>(bins - 1) * static_cast<double>(t_us - window.t_start_us) /
         static_cast<double>(window.t_end_us - window.t_start_us);
}

EncodedEvents encode(const EventWindow& window, std::size_t bins) {
  if (bins == 0) throw Error("bins must be at least 1");
  const std::size_t H = window.dims.height, W = window.dims.width;
  const std::size_t plane = H * W;
  // double accumulators keep the result independent of event order to well
  // below float resolution
  std::vector<double> signed_acc(bins * plane, 0.0);
  std::vector<double> activity(bins * plane, 0.0);
  for (const Event& e : window.events) {
    const double t = normalize_time(e.t_us, window, bins);
    // t lies in [0, bins-1): only bins floor(t) and floor(t)+1 have nonzero k
    const auto c0 = static_cast<std::size_t>(t);
    const double w1 = t - static_cast<double>(c0);
    const double w0 = 1.0 - w1;
    const std::size_t px = static_cast<std::size_t>(e.y) * W + static_cast<std::size_t>(e.x);
    const double p = e.p;
    signed_acc[c0 * plane + px] += p * w0;
    activity[c0 * plane + px] += w0;
    if (w1 > 0.0 && c0 + 1 < bins) {
      signed_acc[(c0 + 1) * plane + px] += p * w1;
      activity[(c0 + 1) * plane + px] += w1;
    }
  }
  EncodedEvents out;
  out.bins = bins;
  out.t_start_us = window.t_start_us;
  out.t_end_us = window.t_end_us;
  out.e_vt = Tensor<float>({bins, H, W}, std::vector<float>(signed_acc.begin(), signed_acc.end()));
  out.a_cm = Tensor<float>({bins, H, W}, std::vector<float>(activity.begin(), activity.end()));
  return out;
}

}  // namespace eifnet
