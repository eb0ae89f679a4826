#include "tinyformer/ssa.hpp"

#include <stdexcept>

namespace tinyformer {

template <typename T>
Var<T> FeaturePyramid<T>::at(int level) const {
  auto it = levels.find(level);
  if (it == levels.end()) throw std::out_of_range("pyramid has no level " + std::to_string(level));
  return it->second;
}

template <typename T>
std::vector<int> FeaturePyramid<T>::indices() const {
  std::vector<int> out;
  for (const auto& [i, v] : levels) out.push_back(i);
  return out;
}

namespace {

constexpr std::pair<SsaVariant, std::string_view> kVariantNames[] = {
    {SsaVariant::Proposed, "proposed"},          {SsaVariant::UpToF4, "up_to_f4"},
    {SsaVariant::UpToF5, "up_to_f5"},            {SsaVariant::F2F3F5, "f2_f3_f5"},
    {SsaVariant::BottleneckSPB, "bottleneck_spb"}, {SsaVariant::EarlyF2Fusion, "early_f2_fusion"},
    {SsaVariant::F3Only, "f3_only"},
};

bool fuses_f4(SsaVariant v) { return v == SsaVariant::UpToF4 || v == SsaVariant::UpToF5; }
bool fuses_f5(SsaVariant v) { return v == SsaVariant::UpToF5 || v == SsaVariant::F2F3F5; }

template <typename T>
Var<T> concat2(Var<T> a, Var<T> b) {
  const Var<T> parts[] = {a, b};
  return concat_channels<T>(parts);
}

}  // namespace

std::string_view to_string(SsaVariant v) {
  for (const auto& [k, name] : kVariantNames)
    if (k == v) return name;
  return "?";
}

std::optional<SsaVariant> parse_ssa_variant(std::string_view text) {
  for (const auto& [k, name] : kVariantNames)
    if (name == text) return k;
  return std::nullopt;
}

void SsaConfig::validate() const {
  if (base_channels == 0 || d_back == 0 || d_neck == 0) throw std::invalid_argument("ssa: widths must be positive");
  if (variant == SsaVariant::BottleneckSPB && d_neck < 2) throw std::invalid_argument("ssa: d_neck too small");
}

std::size_t SsaConfig::sde_depth() const {
  if (!enabled) return 0;
  if (variant == SsaVariant::UpToF5 || variant == SsaVariant::F2F3F5) return 5;
  if (variant == SsaVariant::UpToF4) return 4;
  return 3;
}

bool SsaConfig::emits_f2() const { return enabled ? variant != SsaVariant::F3Only : surrogate_f2; }

std::size_t SsaConfig::f2_width() const { return enabled ? 2 * base_channels : d_back; }

template <typename T>
Bottleneck<T>::Bottleneck(ParamStore<T>& store, const std::string& name, std::size_t c_in, std::size_t hidden,
                          std::size_t c_out, std::size_t stride, std::uint64_t seed)
    : reduce_(store, name + ".reduce", c_in, hidden, 1, 1, seed),
      mid_(store, name + ".mid", hidden, hidden, 3, stride, seed),
      expand_(store, name + ".expand", hidden, c_out, 1, 1, seed) {}

template <typename T>
Var<T> Bottleneck<T>::operator()(Context<T>& ctx, Var<T> x) const {
  return expand_(ctx, mid_(ctx, reduce_(ctx, x)));
}

template <typename T>
SpatialSemanticAdapter<T>::SpatialSemanticAdapter(ParamStore<T>& store, const std::string& name,
                                                  const SsaConfig& cfg, std::uint64_t seed)
    : cfg_(cfg) {
  cfg.validate();
  const std::size_t C = cfg.base_channels, db = cfg.d_back, dn = cfg.d_neck;
  const SsaVariant v = cfg.variant;
  std::size_t width = 3;
  for (std::size_t n = 1; n <= cfg.sde_depth(); ++n) {
    const std::size_t out = C << (n - 1);
    stages_.emplace_back(store, name + ".sde" + std::to_string(n), width, out, 3, 2, seed);
    width = out;
  }
  // Without the adapter the same 1x1 maps Up(F3vit) straight to d_neck.
  fuse3_ = ConvBlock<T>(store, name + ".fuse3", (cfg.enabled ? 4 * C : 0) + db, dn, 1, 1, seed);
  if (cfg.enabled && v == SsaVariant::EarlyF2Fusion) {
    fuse2_ = ConvBlock<T>(store, name + ".fuse2", 2 * C + db, 2 * C, 1, 1, seed);
  }
  if (cfg.enabled && v == SsaVariant::BottleneckSPB) {
    bottleneck4_ = Bottleneck<T>(store, name + ".spb4", db, dn / 2, dn, 1, seed);
    bottleneck5_ = Bottleneck<T>(store, name + ".spb5", db, dn / 2, dn, 2, seed);
    return;
  }
  if (cfg.enabled && fuses_f4(v)) {
    fuse4_ = ConvBlock<T>(store, name + ".fuse4", 8 * C + db, dn, 1, 1, seed);
  } else {
    spb4_ = ConvBlock<T>(store, name + ".spb4", db, dn, 1, 1, seed);
  }
  spb5_ = ConvBlock<T>(store, name + ".spb5", db, dn, 3, 2, seed);
  if (cfg.enabled && fuses_f5(v)) fuse5_ = ConvBlock<T>(store, name + ".fuse5", 16 * C + dn, dn, 1, 1, seed);
}

template <typename T>
Var<T> SpatialSemanticAdapter<T>::sde(Context<T>& ctx, Var<T> image, std::size_t n) const {
  if (n > stages_.size()) {
    throw std::invalid_argument("sde: stage " + std::to_string(n) + " not built (depth " +
                                std::to_string(stages_.size()) + ")");
  }
  const Shape s = image.shape();
  const std::size_t div = std::size_t{1} << n;
  if (s.h % div != 0 || s.w % div != 0) {
    throw std::invalid_argument("sde: extents of " + s.str() + " not divisible by " + std::to_string(div));
  }
  for (std::size_t i = 0; i < n; ++i) image = stages_[i](ctx, image);
  return image;
}

template <typename T>
FeaturePyramid<T> SpatialSemanticAdapter<T>::operator()(Context<T>& ctx, Var<T> image,
                                                        const std::array<Var<T>, 3>& taps) const {
  const Shape s = image.shape();
  if (s.h % 32 != 0 || s.w % 32 != 0 || s.h == 0 || s.w == 0) {
    throw std::invalid_argument("ssa: image extents must be positive multiples of 32, got " + s.str());
  }
  for (const auto& t : taps) {
    const Shape ts = t.shape();
    if (ts.n != s.n || ts.c != cfg_.d_back || ts.h != s.h / 16 || ts.w != s.w / 16) {
      throw std::invalid_argument("ssa: tap " + ts.str() + " is not a stride-16 map of width " +
                                  std::to_string(cfg_.d_back));
    }
  }
  const auto [f3v, f4v, f5v] = taps;
  const SsaVariant v = cfg_.variant;
  FeaturePyramid<T> pyr;
  auto up3 = upsample_bilinear_x2(f3v);

  if (!cfg_.enabled) {
    pyr.levels[3] = fuse3_(ctx, up3);
    pyr.levels[4] = spb4_(ctx, f4v);
    pyr.levels[5] = spb5_(ctx, f5v);
    if (cfg_.surrogate_f2) pyr.levels[2] = upsample_bilinear_x2(up3);
    return pyr;
  }

  // Stages run once; each level reads its prefix of the ladder.
  std::vector<Var<T>> sde_out;
  Var<T> x = image;
  for (const auto& stage : stages_) sde_out.push_back(x = stage(ctx, x));

  if (v != SsaVariant::F3Only) {
    Var<T> f2 = sde_out[1];
    if (v == SsaVariant::EarlyF2Fusion) f2 = fuse2_(ctx, concat2(f2, upsample_bilinear_x2(up3)));
    pyr.levels[2] = f2;
  }
  pyr.levels[3] = fuse3_(ctx, concat2(sde_out[2], up3));
  if (v == SsaVariant::BottleneckSPB) {
    pyr.levels[4] = bottleneck4_(ctx, f4v);
    pyr.levels[5] = bottleneck5_(ctx, f5v);
    return pyr;
  }
  pyr.levels[4] = fuses_f4(v) ? fuse4_(ctx, concat2(sde_out[3], f4v)) : spb4_(ctx, f4v);
  auto f5 = spb5_(ctx, f5v);
  pyr.levels[5] = fuses_f5(v) ? fuse5_(ctx, concat2(sde_out[4], f5)) : f5;
  return pyr;
}

template struct FeaturePyramid<float>;
template struct FeaturePyramid<double>;
template class Bottleneck<float>;
template class Bottleneck<double>;
template class SpatialSemanticAdapter<float>;
template class SpatialSemanticAdapter<double>;

}  // namespace tinyformer
