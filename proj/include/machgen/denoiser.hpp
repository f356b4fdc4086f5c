// Copyright (c) 2026 the machgen authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "machgen/captions.hpp"
#include "machgen/common.hpp"
#include "machgen/diffusion.hpp"
#include "machgen/nn.hpp"
#include "machgen/tensor.hpp"

// The noise predictor: a U-Net over (16, 8, F) latents. Downsampling runs
// along the frame axis only (the 8-row axis stays intact), every level and
// the bottleneck carry one residual cross-attention block over the caption
// tokens, and the final projection is zero-initialized so an untrained model
// predicts zero noise.

namespace machgen::denoiser {

struct DenoiserConfig {
  std::size_t in_channels = 16;  // fixed by the latent reshape
  std::size_t base_width = 32;
  std::size_t depth = 2;
  std::size_t attn_dim = 64;
  std::size_t heads = 4;
  std::size_t cond_dim = 768;  // fixed by the text encoder
  std::size_t groups = 8;

  std::size_t width(std::size_t level) const { return base_width << level; }
  std::size_t mid_width() const { return base_width << depth; }
  std::size_t time_dim() const { return base_width * 4; }

  void validate() const {
    require(in_channels == 16, "in_channels is fixed at 16");
    require(cond_dim == 768, "cond_dim is fixed at 768");
    require(depth >= 1 && depth <= 6, "depth must be in [1, 6]");
    require(base_width >= groups && base_width % groups == 0,
            "base_width must be a positive multiple of the group count");
    require(heads >= 1 && attn_dim % heads == 0,
            "attn_dim must be divisible by heads");
  }
};

struct DenoiserParams {
  std::vector<std::pair<std::string, Tensor>> entries;
  std::unordered_map<std::string, std::size_t> by_name;

  void add(const std::string& name, std::vector<std::size_t> shape) {
    by_name.emplace(name, entries.size());
    entries.emplace_back(name, Tensor(std::move(shape)));
  }

  Tensor& at(const std::string& name) {
    auto it = by_name.find(name);
    require(it != by_name.end(), "unknown parameter '" + name + "'");
    return entries[it->second].second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = by_name.find(name);
    require(it != by_name.end(), "unknown parameter '" + name + "'");
    return entries[it->second].second;
  }

  std::size_t total_parameters() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.second.size();
    return n;
  }

  bool all_finite() const {
    for (const auto& e : entries)
      if (!e.second.all_finite()) return false;
    return true;
  }

  /// Same names and shapes, all values zero (gradient buffers).
  DenoiserParams shaped_zeros() const {
    DenoiserParams z;
    z.by_name = by_name;
    z.entries.reserve(entries.size());
    for (const auto& e : entries)
      z.entries.emplace_back(e.first, Tensor(e.second.shape));
    return z;
  }
};

inline DenoiserParams param_layout(const DenoiserConfig& cfg) {
  cfg.validate();
  DenoiserParams p;
  const std::size_t td = cfg.time_dim();
  p.add("temb.fc1.w", {td, td});
  p.add("temb.fc1.b", {td});
  p.add("temb.fc2.w", {td, td});
  p.add("temb.fc2.b", {td});
  p.add("stem.w", {cfg.width(0), cfg.in_channels, 3, 3});
  p.add("stem.b", {cfg.width(0)});

  auto add_block = [&](const std::string& prefix, std::size_t ci,
                       std::size_t co) {
    p.add(prefix + ".conv.w", {co, ci, 3, 3});
    p.add(prefix + ".conv.b", {co});
    p.add(prefix + ".gn.g", {co});
    p.add(prefix + ".gn.b", {co});
    p.add(prefix + ".temb.w", {co, td});
    p.add(prefix + ".temb.b", {co});
    if (ci != co) p.add(prefix + ".skip.w", {co, ci});
  };
  auto add_attn = [&](const std::string& prefix, std::size_t c) {
    p.add(prefix + ".gn.g", {c});
    p.add(prefix + ".gn.b", {c});
    p.add(prefix + ".wq", {cfg.attn_dim, c});
    p.add(prefix + ".wk", {cfg.attn_dim, cfg.cond_dim});
    p.add(prefix + ".wv", {cfg.attn_dim, cfg.cond_dim});
    p.add(prefix + ".wo", {c, cfg.attn_dim});
    p.add(prefix + ".wo.b", {c});
  };

  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::size_t ci = l == 0 ? cfg.width(0) : cfg.width(l - 1);
    const std::string base = "enc" + std::to_string(l);
    add_block(base + ".b1", ci, cfg.width(l));
    add_block(base + ".b2", cfg.width(l), cfg.width(l));
    add_attn(base + ".attn", cfg.width(l));
  }
  add_block("mid.b1", cfg.width(cfg.depth - 1), cfg.mid_width());
  add_block("mid.b2", cfg.mid_width(), cfg.mid_width());
  add_attn("mid.attn", cfg.mid_width());
  for (std::size_t li = cfg.depth; li-- > 0;) {
    const std::size_t above =
        li + 1 == cfg.depth ? cfg.mid_width() : cfg.width(li + 1);
    const std::string base = "dec" + std::to_string(li);
    add_block(base + ".b1", above + cfg.width(li), cfg.width(li));
    add_block(base + ".b2", cfg.width(li), cfg.width(li));
    add_attn(base + ".attn", cfg.width(li));
  }
  p.add("head.gn.g", {cfg.width(0)});
  p.add("head.gn.b", {cfg.width(0)});
  p.add("head.conv.w", {cfg.in_channels, cfg.width(0), 3, 3});
  p.add("head.conv.b", {cfg.in_channels});
  // zero-initialized long skip from the denoiser input straight to the
  // output; gives the predictor a direct linear path for the z_t term that
  // dominates eps at high noise levels
  p.add("head.long.w", {cfg.in_channels, cfg.in_channels});
  return p;
}

/// Fan-in scaled random init; group-norm gains start at 1, every bias at 0,
/// and the head convolution at exactly 0 so the initial output is zero.
inline DenoiserParams init_params(const DenoiserConfig& cfg,
                                  std::uint64_t seed) {
  DenoiserParams p = param_layout(cfg);
  Rng rng(hash_mix(seed, hash_str("denoiser-init")));
  for (auto& [name, tensor] : p.entries) {
    const bool is_gain = name.size() > 5 && name.compare(name.size() - 5, 5, ".gn.g") == 0;
    const bool is_bias = name.back() == 'b' && name[name.size() - 2] == '.';
    if (is_gain) {
      tensor.fill(1.0);
    } else if (is_bias) {
      tensor.fill(0.0);
    } else if (name == "head.conv.w" || name == "head.long.w") {
      tensor.fill(0.0);
    } else {
      std::size_t fan_in = 1;
      if (tensor.shape.size() == 4)
        fan_in = tensor.dim(1) * tensor.dim(2) * tensor.dim(3);
      else if (tensor.shape.size() == 2)
        fan_in = tensor.dim(1);
      const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (auto& x : tensor.v) x = rng.normal() * scale;
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Forward with trace (everything backward needs).
// ---------------------------------------------------------------------------

struct ForwardOpts {
  bool skip_attention = false;  // ablation switch: bypass every attention block
};

struct BlockCache {
  Tensor x_in;
  nn::GroupNormCache gn;
  Tensor pre_act;  // group-norm output plus broadcast time projection
};

struct AttnCache {
  Tensor x_in;
  nn::GroupNormCache gn;
  Tensor xg_flat;  // (N, C)
  Tensor q, k, v;  // (N, A), (n, A), (n, A)
  Tensor probs;    // (heads * N, n)
  Tensor ctx;      // (N, A)
};

struct ForwardTrace {
  std::size_t t = 0;
  Tensor cond;  // (n, 768)
  Tensor temb_raw, fc1_out, fc1_act, fc2_out, silu_temb;
  Tensor stem_in;
  std::vector<BlockCache> enc_b1, enc_b2;
  std::vector<AttnCache> enc_attn;
  BlockCache mid_b1, mid_b2;
  AttnCache mid_attn;
  std::vector<BlockCache> dec_b1, dec_b2;
  std::vector<AttnCache> dec_attn;
  std::vector<std::size_t> up_channels;  // channels entering each upsample
  nn::GroupNormCache head_gn;
  Tensor head_gn_in, head_pre, head_act;
  ForwardOpts opts;
};

namespace detail {

/// Residual block: y = shortcut(x) + silu(gn(conv(x)) + time projection).
/// The shortcut is the identity when channel counts match, else a learned
/// 1x1 projection; the residual path keeps the input's scale visible to the
/// noise prediction.
inline Tensor block_fwd(const DenoiserConfig& cfg, const DenoiserParams& P,
                        const std::string& prefix, const Tensor& x,
                        const Tensor& silu_temb, BlockCache& cache) {
  cache.x_in = x;
  Tensor c = nn::conv3x3_fwd(x, P.at(prefix + ".conv.w"),
                             P.at(prefix + ".conv.b"));
  Tensor g = nn::groupnorm_fwd(c, P.at(prefix + ".gn.g"),
                               P.at(prefix + ".gn.b"), cfg.groups, cache.gn);
  const Tensor tp = nn::linear_fwd(silu_temb, P.at(prefix + ".temb.w"),
                                   &P.at(prefix + ".temb.b"));
  const std::size_t co = g.dim(0), spatial = g.dim(1) * g.dim(2);
  for (std::size_t ch = 0; ch < co; ++ch) {
    const double add = tp.v[ch];
    double* row = &g.v[ch * spatial];
    for (std::size_t i = 0; i < spatial; ++i) row[i] += add;
  }
  cache.pre_act = std::move(g);
  Tensor y = nn::silu_fwd(cache.pre_act);
  if (x.dim(0) == co)
    y += x;
  else
    y += nn::conv1x1_fwd(x, P.at(prefix + ".skip.w"));
  return y;
}

inline Tensor block_bwd(const DenoiserConfig& cfg, const DenoiserParams& P,
                        const std::string& prefix, const Tensor& dy,
                        const BlockCache& cache, const Tensor& silu_temb,
                        DenoiserParams& G, Tensor& d_silu_temb) {
  const Tensor dpre = nn::silu_bwd(cache.pre_act, dy);
  const std::size_t co = dpre.dim(0), spatial = dpre.dim(1) * dpre.dim(2);
  Tensor dtp({1, co});
  for (std::size_t ch = 0; ch < co; ++ch) {
    const double* row = &dpre.v[ch * spatial];
    double acc = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) acc += row[i];
    dtp.v[ch] = acc;
  }
  Tensor dst;
  nn::linear_bwd(silu_temb, P.at(prefix + ".temb.w"), dtp, dst,
                 G.at(prefix + ".temb.w"), &G.at(prefix + ".temb.b"));
  d_silu_temb += dst;
  Tensor dconv;
  nn::groupnorm_bwd(dpre, P.at(prefix + ".gn.g"), cache.gn, dconv,
                    G.at(prefix + ".gn.g"), G.at(prefix + ".gn.b"));
  Tensor dx;
  nn::conv3x3_bwd(cache.x_in, P.at(prefix + ".conv.w"), dconv, dx,
                  G.at(prefix + ".conv.w"), G.at(prefix + ".conv.b"));
  // residual path
  if (cache.x_in.dim(0) == dy.dim(0)) {
    dx += dy;
  } else {
    Tensor d_skip;
    nn::conv1x1_bwd(cache.x_in, P.at(prefix + ".skip.w"), dy, d_skip,
                    G.at(prefix + ".skip.w"));
    dx += d_skip;
  }
  return dx;
}

inline Tensor flatten_positions(const Tensor& x) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({h * w, c});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t cw = 0; cw < w; ++cw)
        out.at(r * w + cw, ch) = x.at(ch, r, cw);
  return out;
}

inline Tensor unflatten_positions(const Tensor& flat, std::size_t c,
                                  std::size_t h, std::size_t w) {
  Tensor out({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t cw = 0; cw < w; ++cw)
        out.at(ch, r, cw) = flat.at(r * w + cw, ch);
  return out;
}

inline Tensor attn_fwd(const DenoiserConfig& cfg, const DenoiserParams& P,
                       const std::string& prefix, const Tensor& x,
                       const Tensor& cond, AttnCache& cache, bool skip) {
  if (skip) return x;
  cache.x_in = x;
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t n_pos = h * w, n_tok = cond.dim(0);
  const std::size_t a = cfg.attn_dim, heads = cfg.heads, dh = a / heads;
  Tensor xg = nn::groupnorm_fwd(x, P.at(prefix + ".gn.g"),
                                P.at(prefix + ".gn.b"), cfg.groups, cache.gn);
  cache.xg_flat = flatten_positions(xg);
  cache.q = nn::linear_fwd(cache.xg_flat, P.at(prefix + ".wq"), nullptr);
  cache.k = nn::linear_fwd(cond, P.at(prefix + ".wk"), nullptr);
  cache.v = nn::linear_fwd(cond, P.at(prefix + ".wv"), nullptr);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  cache.probs = Tensor({heads * n_pos, n_tok});
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t pidx = 0; pidx < n_pos; ++pidx) {
      const double* qr = &cache.q.v[pidx * a + hd * dh];
      double* srow = &cache.probs.v[(hd * n_pos + pidx) * n_tok];
      for (std::size_t j = 0; j < n_tok; ++j) {
        const double* kr = &cache.k.v[j * a + hd * dh];
        double acc = 0.0;
        for (std::size_t i = 0; i < dh; ++i) acc += qr[i] * kr[i];
        srow[j] = acc * scale;
      }
    }
  }
  nn::softmax_rows(cache.probs);
  cache.ctx = Tensor({n_pos, a});
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t pidx = 0; pidx < n_pos; ++pidx) {
      const double* prow = &cache.probs.v[(hd * n_pos + pidx) * n_tok];
      double* crow = &cache.ctx.v[pidx * a + hd * dh];
      for (std::size_t j = 0; j < n_tok; ++j) {
        const double pj = prow[j];
        const double* vr = &cache.v.v[j * a + hd * dh];
        for (std::size_t i = 0; i < dh; ++i) crow[i] += pj * vr[i];
      }
    }
  }
  const Tensor o = nn::linear_fwd(cache.ctx, P.at(prefix + ".wo"),
                                  &P.at(prefix + ".wo.b"));
  Tensor y = x;
  const Tensor o3 = unflatten_positions(o, c, h, w);
  y += o3;
  return y;
}

inline Tensor attn_bwd(const DenoiserConfig& cfg, const DenoiserParams& P,
                       const std::string& prefix, const Tensor& dy,
                       const Tensor& cond, const AttnCache& cache,
                       DenoiserParams& G, bool skip) {
  if (skip) return dy;
  const std::size_t c = cache.x_in.dim(0), h = cache.x_in.dim(1),
                    w = cache.x_in.dim(2);
  const std::size_t n_pos = h * w, n_tok = cond.dim(0);
  const std::size_t a = cfg.attn_dim, heads = cfg.heads, dh = a / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Tensor do_flat = flatten_positions(dy);
  Tensor dctx;
  nn::linear_bwd(cache.ctx, P.at(prefix + ".wo"), do_flat, dctx,
                 G.at(prefix + ".wo"), &G.at(prefix + ".wo.b"));

  Tensor dq({n_pos, a}), dk({n_tok, a}), dv({n_tok, a});
  for (std::size_t hd = 0; hd < heads; ++hd) {
    Tensor dp({n_pos, n_tok});
    Tensor probs_h({n_pos, n_tok});
    for (std::size_t pidx = 0; pidx < n_pos; ++pidx) {
      const double* prow = &cache.probs.v[(hd * n_pos + pidx) * n_tok];
      const double* dcr = &dctx.v[pidx * a + hd * dh];
      double* dprow = &dp.v[pidx * n_tok];
      double* phrow = &probs_h.v[pidx * n_tok];
      for (std::size_t j = 0; j < n_tok; ++j) {
        phrow[j] = prow[j];
        const double* vr = &cache.v.v[j * a + hd * dh];
        double acc = 0.0;
        for (std::size_t i = 0; i < dh; ++i) acc += dcr[i] * vr[i];
        dprow[j] = acc;
        double* dvr = &dv.v[j * a + hd * dh];
        for (std::size_t i = 0; i < dh; ++i) dvr[i] += prow[j] * dcr[i];
      }
    }
    const Tensor ds = nn::softmax_rows_bwd(probs_h, dp);
    for (std::size_t pidx = 0; pidx < n_pos; ++pidx) {
      const double* dsr = &ds.v[pidx * n_tok];
      const double* qr = &cache.q.v[pidx * a + hd * dh];
      double* dqr = &dq.v[pidx * a + hd * dh];
      for (std::size_t j = 0; j < n_tok; ++j) {
        const double g = dsr[j] * scale;
        const double* kr = &cache.k.v[j * a + hd * dh];
        double* dkr = &dk.v[j * a + hd * dh];
        for (std::size_t i = 0; i < dh; ++i) {
          dqr[i] += g * kr[i];
          dkr[i] += g * qr[i];
        }
      }
    }
  }

  Tensor dxg_flat;
  nn::linear_bwd(cache.xg_flat, P.at(prefix + ".wq"), dq, dxg_flat,
                 G.at(prefix + ".wq"), nullptr);
  Tensor dcond_sink;  // the condition is a frozen input; gradient discarded
  nn::linear_bwd(cond, P.at(prefix + ".wk"), dk, dcond_sink,
                 G.at(prefix + ".wk"), nullptr);
  nn::linear_bwd(cond, P.at(prefix + ".wv"), dv, dcond_sink,
                 G.at(prefix + ".wv"), nullptr);

  const Tensor dxg = unflatten_positions(dxg_flat, c, h, w);
  Tensor dgn_in;
  nn::groupnorm_bwd(dxg, P.at(prefix + ".gn.g"), cache.gn, dgn_in,
                    G.at(prefix + ".gn.g"), G.at(prefix + ".gn.b"));
  Tensor dx = dy;
  dx += dgn_in;
  return dx;
}

}  // namespace detail

inline Tensor cond_tensor(const caption::ConditionEmbedding& emb) {
  require(emb.token_count >= 1, "empty condition embedding");
  Tensor t({emb.token_count, caption::kEmbedDim});
  t.v = emb.values;
  return t;
}

inline Tensor forward(const DenoiserConfig& cfg, const DenoiserParams& P,
                      const Tensor& z_t, std::size_t t, const Tensor& cond,
                      ForwardTrace& trace, const ForwardOpts& opts = {}) {
  cfg.validate();
  require(z_t.shape.size() == 3 && z_t.dim(0) == cfg.in_channels &&
              z_t.dim(1) == 8,
          "denoiser input must be (16, 8, F)");
  require(z_t.dim(2) % (static_cast<std::size_t>(1) << cfg.depth) == 0,
          "frame count not divisible by 2^depth");
  require(cond.shape.size() == 2 && cond.dim(1) == cfg.cond_dim,
          "condition dimension must be 768");
  require(t >= 1, "step index must be >= 1");

  trace = ForwardTrace{};
  trace.t = t;
  trace.cond = cond;
  trace.opts = opts;
  trace.enc_b1.resize(cfg.depth);
  trace.enc_b2.resize(cfg.depth);
  trace.enc_attn.resize(cfg.depth);
  trace.dec_b1.resize(cfg.depth);
  trace.dec_b2.resize(cfg.depth);
  trace.dec_attn.resize(cfg.depth);
  trace.up_channels.resize(cfg.depth);

  trace.temb_raw = nn::sinusoid_embedding(t, cfg.time_dim());
  trace.fc1_out = nn::linear_fwd(trace.temb_raw, P.at("temb.fc1.w"),
                                 &P.at("temb.fc1.b"));
  trace.fc1_act = nn::silu_fwd(trace.fc1_out);
  trace.fc2_out = nn::linear_fwd(trace.fc1_act, P.at("temb.fc2.w"),
                                 &P.at("temb.fc2.b"));
  trace.silu_temb = nn::silu_fwd(trace.fc2_out);

  trace.stem_in = z_t;
  Tensor h = nn::conv3x3_fwd(z_t, P.at("stem.w"), P.at("stem.b"));

  std::vector<Tensor> skips(cfg.depth);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    const std::string base = "enc" + std::to_string(l);
    h = detail::block_fwd(cfg, P, base + ".b1", h, trace.silu_temb,
                          trace.enc_b1[l]);
    h = detail::block_fwd(cfg, P, base + ".b2", h, trace.silu_temb,
                          trace.enc_b2[l]);
    h = detail::attn_fwd(cfg, P, base + ".attn", h, cond, trace.enc_attn[l],
                         opts.skip_attention);
    skips[l] = h;
    h = nn::downsample2_fwd(h);
  }

  h = detail::block_fwd(cfg, P, "mid.b1", h, trace.silu_temb, trace.mid_b1);
  h = detail::block_fwd(cfg, P, "mid.b2", h, trace.silu_temb, trace.mid_b2);
  h = detail::attn_fwd(cfg, P, "mid.attn", h, cond, trace.mid_attn,
                       opts.skip_attention);

  for (std::size_t li = cfg.depth; li-- > 0;) {
    const std::string base = "dec" + std::to_string(li);
    trace.up_channels[li] = h.dim(0);
    h = nn::upsample2_fwd(h);
    h = nn::concat_channels(h, skips[li]);
    h = detail::block_fwd(cfg, P, base + ".b1", h, trace.silu_temb,
                          trace.dec_b1[li]);
    h = detail::block_fwd(cfg, P, base + ".b2", h, trace.silu_temb,
                          trace.dec_b2[li]);
    h = detail::attn_fwd(cfg, P, base + ".attn", h, cond, trace.dec_attn[li],
                         opts.skip_attention);
  }

  trace.head_gn_in = h;
  trace.head_pre = nn::groupnorm_fwd(h, P.at("head.gn.g"), P.at("head.gn.b"),
                                     cfg.groups, trace.head_gn);
  trace.head_act = nn::silu_fwd(trace.head_pre);
  Tensor out = nn::conv3x3_fwd(trace.head_act, P.at("head.conv.w"),
                               P.at("head.conv.b"));
  out += nn::conv1x1_fwd(z_t, P.at("head.long.w"));
  return out;
}

inline Tensor forward(const DenoiserConfig& cfg, const DenoiserParams& P,
                      const Tensor& z_t, std::size_t t, const Tensor& cond,
                      const ForwardOpts& opts = {}) {
  ForwardTrace trace;
  return forward(cfg, P, z_t, t, cond, trace, opts);
}

/// Exact gradients of forward() for every parameter; optionally also for the
/// input z_t. Parameter gradients accumulate into `grads` (same layout as
/// the parameters). The condition embedding is a frozen input.
inline void backward(const DenoiserConfig& cfg, const DenoiserParams& P,
                     const ForwardTrace& trace, const Tensor& d_out,
                     DenoiserParams& grads, Tensor* dz = nullptr) {
  require(d_out.shape.size() == 3 && d_out.dim(0) == cfg.in_channels,
          "upstream gradient shape mismatch");
  require(d_out.dim(1) == trace.head_act.dim(1) &&
              d_out.dim(2) == trace.head_act.dim(2),
          "upstream gradient spatial shape mismatch");
  const bool skip = trace.opts.skip_attention;
  Tensor d_silu_temb({static_cast<std::size_t>(1), cfg.time_dim()});

  Tensor d_long_in;
  nn::conv1x1_bwd(trace.stem_in, P.at("head.long.w"), d_out, d_long_in,
                  grads.at("head.long.w"));
  Tensor d_head_act;
  nn::conv3x3_bwd(trace.head_act, P.at("head.conv.w"), d_out, d_head_act,
                  grads.at("head.conv.w"), grads.at("head.conv.b"));
  Tensor d_head_pre = nn::silu_bwd(trace.head_pre, d_head_act);
  Tensor dh;
  nn::groupnorm_bwd(d_head_pre, P.at("head.gn.g"), trace.head_gn, dh,
                    grads.at("head.gn.g"), grads.at("head.gn.b"));

  std::vector<Tensor> d_skips(cfg.depth);
  for (std::size_t li = 0; li < cfg.depth; ++li) {
    const std::string base = "dec" + std::to_string(li);
    dh = detail::attn_bwd(cfg, P, base + ".attn", dh, trace.cond,
                          trace.dec_attn[li], grads, skip);
    dh = detail::block_bwd(cfg, P, base + ".b2", dh, trace.dec_b2[li],
                           trace.silu_temb, grads, d_silu_temb);
    dh = detail::block_bwd(cfg, P, base + ".b1", dh, trace.dec_b1[li],
                           trace.silu_temb, grads, d_silu_temb);
    Tensor d_up, d_skip;
    nn::split_channels(dh, trace.up_channels[li], d_up, d_skip);
    d_skips[li] = std::move(d_skip);
    dh = nn::upsample2_bwd(d_up);
  }

  dh = detail::attn_bwd(cfg, P, "mid.attn", dh, trace.cond, trace.mid_attn,
                        grads, skip);
  dh = detail::block_bwd(cfg, P, "mid.b2", dh, trace.mid_b2, trace.silu_temb,
                         grads, d_silu_temb);
  dh = detail::block_bwd(cfg, P, "mid.b1", dh, trace.mid_b1, trace.silu_temb,
                         grads, d_silu_temb);

  for (std::size_t l = cfg.depth; l-- > 0;) {
    const std::string base = "enc" + std::to_string(l);
    dh = nn::downsample2_bwd(dh);
    dh += d_skips[l];
    dh = detail::attn_bwd(cfg, P, base + ".attn", dh, trace.cond,
                          trace.enc_attn[l], grads, skip);
    dh = detail::block_bwd(cfg, P, base + ".b2", dh, trace.enc_b2[l],
                           trace.silu_temb, grads, d_silu_temb);
    dh = detail::block_bwd(cfg, P, base + ".b1", dh, trace.enc_b1[l],
                           trace.silu_temb, grads, d_silu_temb);
  }

  Tensor d_stem_in;
  nn::conv3x3_bwd(trace.stem_in, P.at("stem.w"), dh, d_stem_in,
                  grads.at("stem.w"), grads.at("stem.b"));
  d_stem_in += d_long_in;
  if (dz) *dz = std::move(d_stem_in);

  // time-embedding MLP, fed by gradient contributions from every block
  Tensor d_fc2_out = nn::silu_bwd(trace.fc2_out, d_silu_temb);
  Tensor d_fc1_act;
  nn::linear_bwd(trace.fc1_act, P.at("temb.fc2.w"), d_fc2_out, d_fc1_act,
                 grads.at("temb.fc2.w"), &grads.at("temb.fc2.b"));
  Tensor d_fc1_out = nn::silu_bwd(trace.fc1_out, d_fc1_act);
  Tensor d_raw_sink;
  nn::linear_bwd(trace.temb_raw, P.at("temb.fc1.w"), d_fc1_out, d_raw_sink,
                 grads.at("temb.fc1.w"), &grads.at("temb.fc1.b"));
}

/// Binds config, parameters and a caption embedding into the eps-predictor
/// signature the diffusion module consumes. The caller keeps cfg and params
/// alive for the lifetime of the returned function.
inline diffusion::EpsFn eps_model(const DenoiserConfig& cfg,
                                  const DenoiserParams& params,
                                  const caption::ConditionEmbedding& cond) {
  Tensor cond_t = cond_tensor(cond);
  const DenoiserConfig cfg_copy = cfg;
  const DenoiserParams* pp = &params;
  return [cfg_copy, pp, cond_t](const Tensor& z, std::size_t t) {
    return forward(cfg_copy, *pp, z, t, cond_t);
  };
}

}  // namespace machgen::denoiser
