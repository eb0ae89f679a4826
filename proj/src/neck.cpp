#include "tinyformer/neck.hpp"

#include <stdexcept>

namespace tinyformer {

namespace {

template <typename T>
Var<T> concat2(Var<T> a, Var<T> b) {
  const Var<T> parts[] = {a, b};
  return concat_channels<T>(parts);
}

}  // namespace

std::string_view to_string(NeckMode m) { return m == NeckMode::PBM ? "pbm" : "baseline"; }
std::string_view to_string(FusionMode m) {
  return m == FusionMode::AddDeepConcatShallow ? "add_deep_concat_shallow" : "add_shallow_concat_deep";
}

std::optional<NeckMode> parse_neck_mode(std::string_view text) {
  if (text == "pbm") return NeckMode::PBM;
  if (text == "baseline") return NeckMode::Baseline3Scale;
  return std::nullopt;
}

std::optional<FusionMode> parse_fusion_mode(std::string_view text) {
  if (text == "add_deep_concat_shallow") return FusionMode::AddDeepConcatShallow;
  if (text == "add_shallow_concat_deep") return FusionMode::AddShallowConcatDeep;
  return std::nullopt;
}

void NeckConfig::validate() const {
  if (d_neck == 0 || d_neck % 8 != 0) throw std::invalid_argument("neck: d_neck must be a positive multiple of 8");
  if (n_bifusion > 2) throw std::invalid_argument("neck: n_bifusion must be 0, 1 or 2");
  if (emit_f2_tokens && mode != NeckMode::PBM) throw std::invalid_argument("neck: F2 tokens need the PBM neck");
  if ((uses_f2() || emit_f2_tokens) && f2_width == 0) throw std::invalid_argument("neck: F2 width must be positive");
}

template <typename T>
FusionBlock<T>::FusionBlock(ParamStore<T>& store, const std::string& name, std::size_t c_a, std::size_t c_b,
                            std::size_t d, std::uint64_t seed)
    : c_a_(c_a), c_b_(c_b), d_(d) {
  if (d % 8 != 0) throw std::invalid_argument(name + ": width must be divisible by 8");
  entry_ = ConvBlock<T>(store, name + ".entry", c_a + c_b, d, 1, 1, seed);
  std::size_t part = d / 2;
  for (std::size_t s = 0; s < 3; ++s, part /= 2) {
    const std::string p = name + ".part" + std::to_string(s + 1);
    stages_[s][0] = ConvBlock<T>(store, p + ".a", part, part, 3, 1, seed);
    stages_[s][1] = ConvBlock<T>(store, p + ".b", part, part, 3, 1, seed);
  }
  exit_ = ConvBlock<T>(store, name + ".exit", d, d, 1, 1, seed);
}

template <typename T>
Var<T> FusionBlock<T>::operator()(Context<T>& ctx, Var<T> a, Var<T> b) const {
  const Shape sa = a.shape(), sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw std::invalid_argument("fusion block: spatial mismatch " + sa.str() + " vs " + sb.str());
  }
  if (sa.c != c_a_ || sb.c != c_b_) {
    throw std::invalid_argument("fusion block: widths " + std::to_string(sa.c) + "+" + std::to_string(sb.c) +
                                ", expected " + std::to_string(c_a_) + "+" + std::to_string(c_b_));
  }
  Var<T> x = entry_(ctx, concat2(a, b));
  std::vector<Var<T>> kept;
  for (const auto& stage : stages_) {
    const std::size_t half = x.shape().c / 2;
    kept.push_back(slice_channels(x, 0, half));
    x = stage[1](ctx, stage[0](ctx, slice_channels(x, half, half)));
  }
  kept.push_back(x);
  return exit_(ctx, concat_channels<T>(kept));
}

template <typename T>
BiFusion<T>::BiFusion(ParamStore<T>& store, const std::string& name, std::size_t d, FusionMode mode,
                      std::uint64_t seed)
    : d_(d),
      mode_(mode),
      deep_(store, name + ".deep", d, d, 1, 1, seed),
      shallow_(store, name + ".shallow", d, d, 3, 2, seed),
      fuse_(store, name + ".fuse", d, d, d, seed) {}

template <typename T>
Var<T> BiFusion<T>::operator()(Context<T>& ctx, Var<T> prev, Var<T> cur, Var<T> next) const {
  const Shape sp = prev.shape(), sc = cur.shape(), sn = next.shape();
  if (sp.c != d_ || sc.c != d_ || sn.c != d_) throw std::invalid_argument("bifusion: all inputs need width d_neck");
  if (sp.h != 2 * sc.h || sp.w != 2 * sc.w || sc.h != 2 * sn.h || sc.w != 2 * sn.w) {
    throw std::invalid_argument("bifusion: strides inconsistent: " + sp.str() + ", " + sc.str() + ", " + sn.str());
  }
  auto deep = upsample_bilinear_x2(deep_(ctx, next));
  auto shallow = shallow_(ctx, prev);
  if (mode_ == FusionMode::AddDeepConcatShallow) return fuse_(ctx, add(cur, deep), shallow);
  return fuse_(ctx, add(cur, shallow), deep);
}

template <typename T>
Neck<T>::Neck(ParamStore<T>& store, const std::string& name, const NeckConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_neck;
  auto block = [&](const std::string& n, std::size_t k, std::size_t s, std::size_t c_in = 0) {
    return ConvBlock<T>(store, name + "." + n, c_in ? c_in : d, d, k, s, seed);
  };
  // Only the blocks the configured path runs are created.
  const std::size_t n_bif = cfg.mode == NeckMode::PBM ? cfg.n_bifusion : 0;
  if (n_bif == 0) lat3_ = block("lat3", 1, 1);
  if (n_bif < 2) lat4_ = block("lat4", 1, 1);
  lat5_ = block("lat5", 1, 1);
  if (n_bif < 2) td4_ = block("td4", 3, 1);
  if (n_bif == 0) td3_ = block("td3", 3, 1);
  down3_ = block("down3", 3, 2);
  down4_ = block("down4", 3, 2);
  bu4_ = block("bu4", 3, 1);
  bu5_ = block("bu5", 3, 1);
  if (cfg.uses_f2() || cfg.emit_f2_tokens) f2_proj_ = block("f2_proj", 1, 1, cfg.f2_width);
  if (n_bif >= 1) {
    bif3_ = BiFusion<T>(store, name + ".bif3", d, cfg.fusion_mode, seed);
    top5_ = block("top5", 3, 2);
  }
  if (n_bif >= 2) bif4_ = BiFusion<T>(store, name + ".bif4", d, cfg.fusion_mode, seed);
}

template <typename T>
void Neck<T>::check_level(const FeaturePyramid<T>& in, int level, std::size_t width) const {
  if (!in.has(level)) throw std::invalid_argument("neck: input pyramid lacks level " + std::to_string(level));
  const Shape s = in.at(level).shape();
  if (s.c != width) {
    throw std::invalid_argument("neck: level " + std::to_string(level) + " has width " + std::to_string(s.c) +
                                ", expected " + std::to_string(width));
  }
  if (level > 3) {
    const Shape below = in.at(level - 1).shape();
    if (below.h != 2 * s.h || below.w != 2 * s.w) {
      throw std::invalid_argument("neck: level " + std::to_string(level) + " is not half of level " +
                                  std::to_string(level - 1));
    }
  }
}

template <typename T>
FeaturePyramid<T> Neck<T>::top_down(Context<T>& ctx, const FeaturePyramid<T>& in) const {
  for (int level : {3, 4, 5}) check_level(in, level, cfg_.d_neck);
  const bool needs_f2 = cfg_.uses_f2() || cfg_.emit_f2_tokens;
  if (needs_f2) {
    if (!in.has(2)) throw std::invalid_argument("neck: PBM bi-fusion needs level 2");
    const Shape s2 = in.at(2).shape(), s3 = in.at(3).shape();
    if (s2.c != cfg_.f2_width || s2.h != 2 * s3.h || s2.w != 2 * s3.w) {
      throw std::invalid_argument("neck: level 2 " + s2.str() + " incompatible with level 3 " + s3.str());
    }
  }
  const Var<T> f3 = in.at(3), f4 = in.at(4), f5 = in.at(5);
  FeaturePyramid<T> out;
  auto l5 = lat5_(ctx, f5);
  auto baseline_p4 = [&] { return td4_(ctx, add(lat4_(ctx, f4), upsample_bilinear_x2(l5))); };

  if (cfg_.mode == NeckMode::Baseline3Scale || cfg_.n_bifusion == 0) {
    auto p4 = baseline_p4();
    out.levels[5] = l5;
    out.levels[4] = p4;
    out.levels[3] = td3_(ctx, add(lat3_(ctx, f3), upsample_bilinear_x2(p4)));
    if (cfg_.emit_f2_tokens) out.levels[2] = f2_proj_(ctx, in.at(2));
    return out;
  }

  auto f2 = f2_proj_(ctx, in.at(2));
  // Both blocks read the input pyramid only, never each other's output.
  auto b3 = bif3_(ctx, f2, f3, f4);
  auto b4 = cfg_.n_bifusion >= 2 ? bif4_(ctx, f3, f4, f5) : baseline_p4();
  out.levels[3] = b3;
  out.levels[4] = b4;
  out.levels[5] = add(top5_(ctx, b4), l5);
  if (cfg_.emit_f2_tokens) out.levels[2] = f2;
  return out;
}

template <typename T>
void Neck<T>::pan(Context<T>& ctx, FeaturePyramid<T>& p) const {
  auto n4 = bu4_(ctx, add(p.at(4), down3_(ctx, p.at(3))));
  auto n5 = bu5_(ctx, add(p.at(5), down4_(ctx, n4)));
  p.levels[4] = n4;
  p.levels[5] = n5;
}

template <typename T>
FeaturePyramid<T> Neck<T>::operator()(Context<T>& ctx, const FeaturePyramid<T>& in) const {
  auto p = top_down(ctx, in);
  pan(ctx, p);
  return p;
}

template class FusionBlock<float>;
template class FusionBlock<double>;
template class BiFusion<float>;
template class BiFusion<double>;
template class Neck<float>;
template class Neck<double>;

}  // namespace tinyformer
