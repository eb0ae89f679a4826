#include "tinyformer/flops.hpp"

#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace tinyformer {

void FlopsCounter::conv(const std::string& module, const std::string& layer, std::size_t c_in, std::size_t c_out,
                        std::size_t k, std::size_t stride, std::size_t pad, std::size_t& h, std::size_t& w,
                        bool bias, bool batch_norm) {
  if (h + 2 * pad < k || w + 2 * pad < k) throw std::invalid_argument("flops: kernel larger than input at " + layer);
  h = (h + 2 * pad - k) / stride + 1;
  w = (w + 2 * pad - k) / stride + 1;
  FlopsEntry e{module, layer, static_cast<std::uint64_t>(c_out) * c_in * k * k * h * w,
               static_cast<std::uint64_t>(c_out) * c_in * k * k + (bias ? c_out : 0) + (batch_norm ? 2 * c_out : 0)};
  layers_.push_back(std::move(e));
}

void FlopsCounter::linear(const std::string& module, const std::string& layer, std::size_t rows, std::size_t in,
                          std::size_t out, bool bias) {
  layers_.push_back({module, layer, static_cast<std::uint64_t>(rows) * in * out,
                     static_cast<std::uint64_t>(in) * out + (bias ? out : 0)});
}

void FlopsCounter::attention(const std::string& module, const std::string& layer, std::size_t t_q, std::size_t t_k,
                             std::size_t d) {
  layers_.push_back({module, layer, 2ull * t_q * t_k * d, 0});
}

void FlopsCounter::params(const std::string& module, const std::string& layer, std::uint64_t count) {
  layers_.push_back({module, layer, 0, count});
}

FlopsReport FlopsCounter::report() const {
  FlopsReport r;
  r.layers = layers_;
  for (const auto& e : layers_) {
    r.module_macs[e.module] += e.macs;
    r.module_params[e.module] += e.params;
    r.total_macs += e.macs;
    r.total_params += e.params;
  }
  return r;
}

std::string FlopsReport::table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %16s %12s %14s\n", "module", "MACs", "GFLOPs", "params");
  os << line;
  for (const auto& [module, macs] : module_macs) {
    std::snprintf(line, sizeof line, "%-12s %16llu %12.4f %14llu\n", module.c_str(),
                  static_cast<unsigned long long>(macs), 2.0 * static_cast<double>(macs) / 1e9,
                  static_cast<unsigned long long>(module_params.at(module)));
    os << line;
  }
  std::snprintf(line, sizeof line, "%-12s %16llu %12.4f %14llu\n", "total", static_cast<unsigned long long>(total_macs),
                2.0 * static_cast<double>(total_macs) / 1e9, static_cast<unsigned long long>(total_params));
  os << line;
  os << "counted: conv c_out*c_in*k^2*h_out*w_out, linear rows*in*out, attention 2*Tq*Tk*d; FLOPs = 2*MACs\n";
  os << "not counted: normalization, activations, resampling, elementwise ops\n";
  return os.str();
}

namespace {

void mha(FlopsCounter& fc, const std::string& m, const std::string& p, std::size_t tq, std::size_t tk, std::size_t d) {
  fc.linear(m, p + ".q", tq, d, d);
  fc.linear(m, p + ".k", tk, d, d);
  fc.linear(m, p + ".v", tk, d, d);
  fc.attention(m, p + ".core", tq, tk, d);
  fc.linear(m, p + ".o", tq, d, d);
}

void mlp(FlopsCounter& fc, const std::string& m, const std::string& p, std::size_t rows, std::size_t d,
         std::size_t ratio) {
  fc.linear(m, p + ".fc1", rows, d, d * ratio);
  fc.linear(m, p + ".fc2", rows, d * ratio, d);
}

// Conv block (no bias, BatchNorm) on an h x w map; returns the output extent.
std::size_t block(FlopsCounter& fc, const std::string& m, const std::string& p, std::size_t ci, std::size_t co,
                  std::size_t k, std::size_t s, std::size_t extent) {
  std::size_t h = extent, w = extent;
  fc.conv(m, p, ci, co, k, s, k / 2, h, w, false, true);
  return h;
}

void fusion_block(FlopsCounter& fc, const std::string& p, std::size_t d, std::size_t e) {
  block(fc, "neck", p + ".entry", 2 * d, d, 1, 1, e);
  std::size_t part = d / 2;
  for (int s = 1; s <= 3; ++s, part /= 2) {
    block(fc, "neck", p + ".part" + std::to_string(s) + ".a", part, part, 3, 1, e);
    block(fc, "neck", p + ".part" + std::to_string(s) + ".b", part, part, 3, 1, e);
  }
  block(fc, "neck", p + ".exit", d, d, 1, 1, e);
}

// prev at 2e, cur at e, next at e/2.
void bifusion(FlopsCounter& fc, const std::string& p, std::size_t d, std::size_t e) {
  block(fc, "neck", p + ".deep", d, d, 1, 1, e / 2);
  block(fc, "neck", p + ".shallow", d, d, 3, 2, 2 * e);
  fusion_block(fc, p + ".fuse", d, e);
}

}  // namespace

FlopsReport flops_count(const ModelConfig& cfg) {
  cfg.validate();
  FlopsCounter fc;
  const std::size_t E = cfg.image_size;
  const std::size_t db = cfg.d_back, dn = cfg.d_neck, dd = cfg.d_dec, C = cfg.base_channels;

  // Backbone.
  {
    std::size_t h = E, w = E;
    fc.conv("backbone", "patch", 3, db, 16, 16, 0, h, w, true, false);
    const std::size_t T = h * w;
    for (std::size_t b = 0; b < cfg.n_back; ++b) {
      const std::string p = "block" + std::to_string(b);
      fc.params("backbone", p + ".norms", 4 * db);
      mha(fc, "backbone", p + ".attn", T, T, db);
      mlp(fc, "backbone", p + ".mlp", T, db, 4);
    }
  }

  // Adapter / plain pyramid.
  {
    const SsaConfig s = cfg.ssa();
    std::size_t e = E, width = 3;
    for (std::size_t n = 1; n <= s.sde_depth(); ++n) {
      e = block(fc, "ssa", "sde" + std::to_string(n), width, C << (n - 1), 3, 2, e);
      width = C << (n - 1);
    }
    const SsaVariant v = s.variant;
    block(fc, "ssa", "fuse3", (s.enabled ? 4 * C : 0) + db, dn, 1, 1, E / 8);
    if (s.enabled && v == SsaVariant::EarlyF2Fusion) block(fc, "ssa", "fuse2", 2 * C + db, 2 * C, 1, 1, E / 4);
    if (s.enabled && v == SsaVariant::BottleneckSPB) {
      block(fc, "ssa", "spb4.reduce", db, dn / 2, 1, 1, E / 16);
      block(fc, "ssa", "spb4.mid", dn / 2, dn / 2, 3, 1, E / 16);
      block(fc, "ssa", "spb4.expand", dn / 2, dn, 1, 1, E / 16);
      block(fc, "ssa", "spb5.reduce", db, dn / 2, 1, 1, E / 16);
      block(fc, "ssa", "spb5.mid", dn / 2, dn / 2, 3, 2, E / 16);
      block(fc, "ssa", "spb5.expand", dn / 2, dn, 1, 1, E / 32);
    } else {
      const bool f4 = s.enabled && (v == SsaVariant::UpToF4 || v == SsaVariant::UpToF5);
      const bool f5 = s.enabled && (v == SsaVariant::UpToF5 || v == SsaVariant::F2F3F5);
      if (f4) {
        block(fc, "ssa", "fuse4", 8 * C + db, dn, 1, 1, E / 16);
      } else {
        block(fc, "ssa", "spb4", db, dn, 1, 1, E / 16);
      }
      block(fc, "ssa", "spb5", db, dn, 3, 2, E / 16);
      if (f5) block(fc, "ssa", "fuse5", 16 * C + dn, dn, 1, 1, E / 32);
    }
  }

  // Neck.
  {
    const NeckConfig n = cfg.neck_config();
    const std::size_t n_bif = n.mode == NeckMode::PBM ? n.n_bifusion : 0;
    block(fc, "neck", "lat5", dn, dn, 1, 1, E / 32);
    if (n.uses_f2() || n.emit_f2_tokens) block(fc, "neck", "f2_proj", n.f2_width, dn, 1, 1, E / 4);
    if (n_bif < 2) {
      block(fc, "neck", "lat4", dn, dn, 1, 1, E / 16);
      block(fc, "neck", "td4", dn, dn, 3, 1, E / 16);
    }
    if (n_bif == 0) {
      block(fc, "neck", "lat3", dn, dn, 1, 1, E / 8);
      block(fc, "neck", "td3", dn, dn, 3, 1, E / 8);
    }
    if (n_bif >= 1) {
      bifusion(fc, "bif3", dn, E / 8);
      block(fc, "neck", "top5", dn, dn, 3, 2, E / 16);
    }
    if (n_bif >= 2) bifusion(fc, "bif4", dn, E / 16);
    block(fc, "neck", "down3", dn, dn, 3, 2, E / 8);
    block(fc, "neck", "bu4", dn, dn, 3, 1, E / 16);
    block(fc, "neck", "down4", dn, dn, 3, 2, E / 16);
    block(fc, "neck", "bu5", dn, dn, 3, 1, E / 32);
  }

  // Decoder.
  {
    const std::size_t Q = cfg.n_queries;
    std::size_t memory = 0;
    for (int level : cfg.decoder_levels()) {
      const std::size_t side = E >> level, T = side * side;
      memory += T;
      const std::string p = "level" + std::to_string(level);
      fc.linear("decoder", p + ".proj", T, dn, dd);
      fc.params("decoder", p + ".embed", dd);
    }
    fc.params("decoder", "queries", Q * dd);
    for (std::size_t l = 0; l < cfg.n_dec; ++l) {
      const std::string p = "layer" + std::to_string(l);
      fc.params("decoder", p + ".norms", 6 * dd);
      mha(fc, "decoder", p + ".self_attn", Q, Q, dd);
      mha(fc, "decoder", p + ".cross_attn", Q, memory, dd);
      mlp(fc, "decoder", p + ".mlp", Q, dd, 4);
    }
    fc.params("decoder", "final_ln", 2 * dd);
    fc.linear("decoder", "cls", Q, dd, cfg.num_classes);
    fc.linear("decoder", "box0", Q, dd, dd);
    fc.linear("decoder", "box1", Q, dd, dd);
    fc.linear("decoder", "box2", Q, dd, 4);
  }
  return fc.report();
}

}  // namespace tinyformer
