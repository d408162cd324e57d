#include "eifnet/network.hpp"

#include <cstdint>
#include <tuple>

namespace eifnet {

StubEncoder::StubEncoder(const std::string& prefix, std::size_t in_channels, const StageSizes& widths) {
  stages_[0] = ConvBnRelu(prefix + ".s1", in_channels, widths[0], 7, 4, 3);
  for (std::size_t s = 1; s < kStages; ++s) {
    stages_[s] = ConvBnRelu(prefix + ".s" + std::to_string(s + 1), widths[s - 1], widths[s], 3, 2, 1);
  }
}

template <typename T>
void StubEncoder::init(ParamStore<T>& store, Rng& rng) const {
  for (const auto& st : stages_) st.init(store, rng);
}

template <typename T>
StageFeatures<T> StubEncoder::forward(Context<T>& ctx, Var<T> x) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[2] % 32 != 0 || s[3] % 32 != 0) {
    throw ShapeError("encoder input must be [B,C,H,W] with H,W divisible by 32, got " + shape_str(s));
  }
  StageFeatures<T> out;
  Var<T> cur = x;
  for (std::size_t i = 0; i < kStages; ++i) {
    cur = stages_[i](ctx, cur);
    out[i] = cur;
  }
  return out;
}

Decoder::Decoder(const std::string& prefix, const StageSizes& widths, std::size_t width,
                 std::size_t classes)
    : fuse_(prefix + ".fuse", kStages * width, width, 1, 1, 0), cls_(prefix + ".cls", width, classes, 1) {
  for (std::size_t s = 0; s < kStages; ++s) {
    proj_[s] = Conv2d(prefix + ".proj" + std::to_string(s + 1), widths[s], width, 1, 1, 0, false);
  }
}

template <typename T>
void Decoder::init(ParamStore<T>& store, Rng& rng) const {
  for (const auto& p : proj_) p.init(store, rng);
  fuse_.init(store, rng);
  cls_.init(store, rng);
}

template <typename T>
Var<T> Decoder::forward(Context<T>& ctx, const StageFeatures<T>& stages, std::size_t out_h,
                        std::size_t out_w) const {
  const std::size_t h1 = stages[0].dim(2);
  const std::size_t w1 = stages[0].dim(3);
  std::vector<Var<T>> parts;
  for (std::size_t s = 0; s < kStages; ++s) {
    parts.push_back(ops::resample(proj_[s](ctx, stages[s]), h1, w1, ops::ResampleMode::bilinear));
  }
  Var<T> logits = cls_(ctx, fuse_(ctx, ops::concat(parts, 1)));
  return ops::resample(logits, out_h, out_w, ops::ResampleMode::bilinear);
}

Eifnet::Eifnet(NetworkConfig config)
    : cfg_((config.validate(), std::move(config))),
      aefrm_("aefrm", cfg_.aefrm_width),
      event_enc_("enc_e", cfg_.event_channels(), cfg_.event_widths),
      image_enc_("enc_i", cfg_.image_channels, cfg_.image_widths),
      decoder_("dec", cfg_.image_widths, cfg_.decoder_width, cfg_.classes) {
  for (std::size_t s = 0; s < kStages; ++s) {
    const std::string tag = std::to_string(s + 1);
    project_[s] = Conv2d("proj_e" + tag, cfg_.event_widths[s], cfg_.image_widths[s], 1);
    marm_.emplace_back("marm" + tag, cfg_.image_widths[s], cfg_.image_widths[s]);
    MgfmConfig mc;
    mc.channels = cfg_.image_widths[s];
    mc.heads = cfg_.heads[s];
    mc.reduction = cfg_.reduction[s];
    mgfm_.emplace_back("mgfm" + tag, mc);
  }
}

// Every component draws from its own stream so toggling one module leaves
// the initialization of the others unchanged.
template <typename T>
void Eifnet::init(ParamStore<T>& store, Rng& rng) const {
  std::array<std::uint64_t, 3 + 3 * kStages + 1> seeds{};
  for (auto& s : seeds) s = rng.next_u64();
  std::size_t k = 0;
  auto sub = [&]() { return Rng(seeds[k++]); };
  {
    Rng r = sub();
    if (cfg_.modules.aefrm) aefrm_.init(store, r);
  }
  {
    Rng r = sub();
    event_enc_.init(store, r);
  }
  {
    Rng r = sub();
    image_enc_.init(store, r);
  }
  for (std::size_t s = 0; s < kStages; ++s) {
    Rng rp = sub();
    project_[s].init(store, rp);
    Rng rm = sub();
    if (cfg_.modules.marm) marm_[s].init(store, rm);
    Rng rg = sub();
    if (cfg_.modules.mgfm) mgfm_[s].init(store, rg);
  }
  Rng rd = sub();
  decoder_.init(store, rd);
}

template <typename T>
ParamStore<T> Eifnet::make_params() const {
  ParamStore<T> store;
  Rng rng(cfg_.seed);
  init(store, rng);
  return store;
}

template <typename T>
Var<T> Eifnet::project_event(Context<T>& ctx, Var<T> e_feat, std::size_t s) const {
  return project_.at(s)(ctx, e_feat);
}

void Eifnet::check_inputs(const Shape& image, const Shape& e_vt, const Shape& a_cm) const {
  const Shape want_img{image.empty() ? 0 : image[0], cfg_.image_channels, cfg_.height, cfg_.width};
  if (image.size() != 4 || image != want_img) {
    throw ShapeError("image must be " + shape_str(want_img) + ", got " + shape_str(image));
  }
  const Shape want_ev{image[0], cfg_.event_channels(), cfg_.height, cfg_.width};
  if (e_vt != want_ev || a_cm != want_ev) {
    throw ShapeError("event tensors must be " + shape_str(want_ev) + ", got " + shape_str(e_vt) +
                     " and " + shape_str(a_cm));
  }
}

template <typename T>
StageFeatures<T> Eifnet::stage_features(Context<T>& ctx, Var<T> image, Var<T> e_vt, Var<T> a_cm) const {
  check_inputs(image.shape(), e_vt.shape(), a_cm.shape());
  Var<T> events = cfg_.modules.aefrm ? aefrm_.forward(ctx, a_cm, e_vt) : e_vt;
  StageFeatures<T> ef = event_enc_.forward(ctx, events);
  StageFeatures<T> imf = image_enc_.forward(ctx, image);
  StageFeatures<T> out;
  for (std::size_t s = 0; s < kStages; ++s) {
    Var<T> e = project_event(ctx, ef[s], s);
    Var<T> i = imf[s];
    if (cfg_.modules.marm) std::tie(e, i) = marm_[s].recalibrate(ctx, e, i);
    out[s] = cfg_.modules.mgfm ? mgfm_[s].forward(ctx, e, i) : ops::scale(ops::add(e, i), T{0.5});
  }
  return out;
}

template <typename T>
Var<T> Eifnet::forward(Context<T>& ctx, Var<T> image, Var<T> e_vt, Var<T> a_cm) const {
  return decoder_.forward(ctx, stage_features(ctx, image, e_vt, a_cm), cfg_.height, cfg_.width);
}

#define EIFNET_INSTANTIATE(T)                                                                     \
  template void StubEncoder::init(ParamStore<T>&, Rng&) const;                                    \
  template StageFeatures<T> StubEncoder::forward(Context<T>&, Var<T>) const;                      \
  template void Decoder::init(ParamStore<T>&, Rng&) const;                                        \
  template Var<T> Decoder::forward(Context<T>&, const StageFeatures<T>&, std::size_t, std::size_t) \
      const;                                                                                      \
  template void Eifnet::init(ParamStore<T>&, Rng&) const;                                         \
  template ParamStore<T> Eifnet::make_params() const;                                             \
  template Var<T> Eifnet::project_event(Context<T>&, Var<T>, std::size_t) const;                  \
  template StageFeatures<T> Eifnet::stage_features(Context<T>&, Var<T>, Var<T>, Var<T>) const;    \
  template Var<T> Eifnet::forward(Context<T>&, Var<T>, Var<T>, Var<T>) const;

EIFNET_INSTANTIATE(float)
EIFNET_INSTANTIATE(double)
EIFNET_INSTANTIATE(long double)
#undef EIFNET_INSTANTIATE

}  // namespace eifnet
