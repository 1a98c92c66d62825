#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "autoview/autodiff.hpp"
#include "autoview/tensor.hpp"

namespace autoview {

template <typename S>
using ParamRefs = std::vector<std::pair<std::string, Var<S>*>>;

enum class EncoderArch { TinyViT, Mlp };

inline const char* arch_name(EncoderArch a) { return a == EncoderArch::TinyViT ? "tiny-vit" : "mlp"; }

template <typename S>
struct Linear {
  Var<S> w;  // (in, out)
  Var<S> b;  // (out); invalid when bias-free
  bool has_bias = true;

  static Linear init(int64_t in, int64_t out, std::mt19937_64& rng, bool bias = true,
                     double stddev = 0.02) {
    Linear l;
    l.w = Var<S>::param(Tensor<S>::randn(Shape{in, out}, rng, stddev), "w");
    l.has_bias = bias;
    if (bias) l.b = Var<S>::param(Tensor<S>::zeros(Shape{out}), "b");
    return l;
  }

  Var<S> operator()(const Var<S>& x) const {
    const Shape& s = x.shape();
    Var<S> flat = x;
    if (s.size() != 2) {
      flat = reshape(x, Shape{x.numel() / s.back(), s.back()});
    }
    auto y = matmul(flat, w);
    if (has_bias) y = add(y, b);
    if (s.size() != 2) {
      Shape out_shape(s.begin(), s.end() - 1);
      out_shape.push_back(w.shape()[1]);
      y = reshape(y, out_shape);
    }
    return y;
  }

  void collect(const std::string& prefix, ParamRefs<S>& out) {
    out.push_back({prefix + ".w", &w});
    if (has_bias) out.push_back({prefix + ".b", &b});
  }
};

template <typename S>
struct LayerNormParams {
  Var<S> gamma, beta;

  static LayerNormParams init(int64_t dim) {
    LayerNormParams ln;
    ln.gamma = Var<S>::param(Tensor<S>::ones(Shape{dim}), "gamma");
    ln.beta = Var<S>::param(Tensor<S>::zeros(Shape{dim}), "beta");
    return ln;
  }
  Var<S> operator()(const Var<S>& x) const { return layer_norm(x, gamma, beta); }
  void collect(const std::string& prefix, ParamRefs<S>& out) {
    out.push_back({prefix + ".gamma", &gamma});
    out.push_back({prefix + ".beta", &beta});
  }
};

/// Prefix a learned token to every sequence: (B,T,C) + (C) -> (B,T+1,C).
template <typename S>
Var<S> prepend_token(const Var<S>& x, const Var<S>& token) {
  const Shape& s = x.shape();
  if (s.size() != 3 || token.numel() != s[2])
    throw ShapeError("prepend_token: got " + shape_str(s) + " and " + shape_str(token.shape()));
  const int64_t B = s[0], T = s[1], C = s[2];
  Tensor<S> out(Shape{B, T + 1, C});
  for (int64_t b = 0; b < B; ++b) {
    std::copy_n(token.value().ptr(), C, out.ptr() + b * (T + 1) * C);
    std::copy_n(x.value().ptr() + b * T * C, T * C, out.ptr() + (b * (T + 1) + 1) * C);
  }
  auto backward = [B, T, C](Node<S>& self) {
    Node<S>& px = *self.parents[0];
    Node<S>& pt = *self.parents[1];
    if (px.requires_grad) px.ensure_grad();
    if (pt.requires_grad) pt.ensure_grad();
    for (int64_t b = 0; b < B; ++b) {
      const S* g = self.grad.ptr() + b * (T + 1) * C;
      if (pt.requires_grad)
        for (int64_t c = 0; c < C; ++c) pt.grad[c] += g[c];
      if (px.requires_grad) {
        S* gx = px.grad.ptr() + b * T * C;
        for (int64_t i = 0; i < T * C; ++i) gx[i] += g[C + i];
      }
    }
  };
  return detail::make_op<S>("prepend_token", std::move(out), {x, token}, std::move(backward));
}

/// Fixed sinusoidal position table, (tokens, dim).
template <typename S>
Tensor<S> sinusoidal_positions(int64_t tokens, int64_t dim) {
  Tensor<S> pos(Shape{tokens, dim});
  for (int64_t t = 0; t < tokens; ++t)
    for (int64_t i = 0; i < dim; i += 2) {
      const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
      pos[t * dim + i] = static_cast<S>(std::sin(static_cast<double>(t) * omega));
      if (i + 1 < dim) pos[t * dim + i + 1] = static_cast<S>(std::cos(static_cast<double>(t) * omega));
    }
  return pos;
}

/// Pre-norm transformer encoder on patch tokens. Patch 4, width 64, depth 3,
/// 4 heads; sinusoidal positions make it size-agnostic across stages.
template <typename S>
struct TinyViT {
  int64_t patch = 4;
  int64_t width = 64;
  int64_t depth = 3;
  int64_t heads = 4;

  Linear<S> patch_embed;
  Var<S> cls_token;
  struct Block {
    LayerNormParams<S> ln1, ln2;
    Linear<S> qkv, proj, fc1, fc2;
  };
  std::vector<Block> blocks;
  LayerNormParams<S> ln_final;

  static TinyViT init(std::mt19937_64& rng, int64_t patch = 4, int64_t width = 64,
                      int64_t depth = 3, int64_t heads = 4) {
    TinyViT m;
    m.patch = patch;
    m.width = width;
    m.depth = depth;
    m.heads = heads;
    m.patch_embed = Linear<S>::init(3 * patch * patch, width, rng);
    m.cls_token = Var<S>::param(Tensor<S>::randn(Shape{width}, rng, 0.02), "cls");
    for (int64_t d = 0; d < depth; ++d) {
      Block blk;
      blk.ln1 = LayerNormParams<S>::init(width);
      blk.ln2 = LayerNormParams<S>::init(width);
      blk.qkv = Linear<S>::init(width, 3 * width, rng);
      blk.proj = Linear<S>::init(width, width, rng);
      blk.fc1 = Linear<S>::init(width, 4 * width, rng);
      blk.fc2 = Linear<S>::init(4 * width, width, rng);
      m.blocks.push_back(std::move(blk));
    }
    m.ln_final = LayerNormParams<S>::init(width);
    return m;
  }

  int64_t embed_dim() const { return width; }

  /// (B,3,H,W) -> (B,width) class-token embedding.
  Var<S> forward(const Var<S>& images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] % patch != 0 || s[3] % patch != 0)
      throw ShapeError("TinyViT: bad image batch " + shape_str(s));
    const int64_t B = s[0], H = s[2], W = s[3];
    const int64_t gh = H / patch, gw = W / patch, T = gh * gw;

    auto x = reshape(images, Shape{B, 3, gh, patch, gw, patch});
    x = permute(x, {0, 2, 4, 1, 3, 5});
    x = reshape(x, Shape{B, T, 3 * patch * patch});
    x = patch_embed(x);
    x = prepend_token(x, cls_token);
    x = add(x, Var<S>::constant(sinusoidal_positions<S>(T + 1, width)));

    const int64_t hd = width / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    for (const auto& blk : blocks) {
      auto h = blk.ln1(x);
      auto qkv = blk.qkv(h);  // (B,T+1,3C)
      qkv = reshape(qkv, Shape{B, T + 1, 3, heads, hd});
      qkv = permute(qkv, {2, 0, 3, 1, 4});  // (3,B,heads,T+1,hd)
      auto q = reshape(select(qkv, 0, 0), Shape{B * heads, T + 1, hd});
      auto k = reshape(select(qkv, 0, 1), Shape{B * heads, T + 1, hd});
      auto v = reshape(select(qkv, 0, 2), Shape{B * heads, T + 1, hd});
      auto attn = softmax_last(mul(bmm_nt(q, k), scale));
      auto o = bmm(attn, v);  // (B*heads,T+1,hd)
      o = reshape(o, Shape{B, heads, T + 1, hd});
      o = permute(o, {0, 2, 1, 3});
      o = reshape(o, Shape{B, T + 1, width});
      x = add(x, blk.proj(o));
      auto h2 = blk.ln2(x);
      x = add(x, blk.fc2(gelu(blk.fc1(h2))));
    }
    return select(ln_final(x), 1, 0);
  }

  void collect(const std::string& prefix, ParamRefs<S>& out) {
    patch_embed.collect(prefix + ".patch_embed", out);
    out.push_back({prefix + ".cls", &cls_token});
    for (size_t i = 0; i < blocks.size(); ++i) {
      const std::string bp = prefix + ".block" + std::to_string(i);
      blocks[i].ln1.collect(bp + ".ln1", out);
      blocks[i].qkv.collect(bp + ".qkv", out);
      blocks[i].proj.collect(bp + ".proj", out);
      blocks[i].ln2.collect(bp + ".ln2", out);
      blocks[i].fc1.collect(bp + ".fc1", out);
      blocks[i].fc2.collect(bp + ".fc2", out);
    }
    ln_final.collect(prefix + ".ln_final", out);
  }
};

/// Flat MLP on raw pixels; needs a fixed image size for the whole run.
template <typename S>
struct MlpEncoder {
  int64_t input_dim = 0;
  int64_t width = 256;
  Linear<S> fc1, fc2, fc3;

  static MlpEncoder init(std::mt19937_64& rng, int64_t image_size, int64_t width = 256) {
    MlpEncoder m;
    m.input_dim = 3 * image_size * image_size;
    m.width = width;
    m.fc1 = Linear<S>::init(m.input_dim, width, rng, true, 0.05);
    m.fc2 = Linear<S>::init(width, width, rng, true, 0.05);
    m.fc3 = Linear<S>::init(width, width, rng, true, 0.05);
    return m;
  }

  int64_t embed_dim() const { return width; }

  Var<S> forward(const Var<S>& images) const {
    const Shape& s = images.shape();
    if (s.size() != 4 || 3 * s[2] * s[3] != input_dim)
      throw ShapeError("MlpEncoder: bad image batch " + shape_str(s) + ", expected flat dim " +
                       std::to_string(input_dim));
    auto x = reshape(images, Shape{s[0], input_dim});
    x = gelu(fc1(x));
    x = gelu(fc2(x));
    return gelu(fc3(x));
  }

  void collect(const std::string& prefix, ParamRefs<S>& out) {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
    fc3.collect(prefix + ".fc3", out);
  }
};

/// 3-layer projection head with an l2-normalized bottleneck feeding the
/// output logits.
template <typename S>
struct ProjectionHead {
  Linear<S> fc1, fc2, bottleneck, out;
  int64_t out_dim = 256;

  static ProjectionHead init(std::mt19937_64& rng, int64_t in_dim, int64_t hidden = 512,
                             int64_t bottleneck_dim = 64, int64_t out_dim = 256) {
    ProjectionHead h;
    h.fc1 = Linear<S>::init(in_dim, hidden, rng);
    h.fc2 = Linear<S>::init(hidden, hidden, rng);
    h.bottleneck = Linear<S>::init(hidden, bottleneck_dim, rng);
    h.out = Linear<S>::init(bottleneck_dim, out_dim, rng, /*bias=*/false);
    h.out_dim = out_dim;
    return h;
  }

  Var<S> normalized_bottleneck(const Var<S>& embed) const {
    auto x = gelu(fc1(embed));
    x = gelu(fc2(x));
    return l2_normalize_rows(bottleneck(x));
  }

  Var<S> operator()(const Var<S>& embed) const { return out(normalized_bottleneck(embed)); }

  void collect(const std::string& prefix, ParamRefs<S>& out_refs) {
    fc1.collect(prefix + ".fc1", out_refs);
    fc2.collect(prefix + ".fc2", out_refs);
    bottleneck.collect(prefix + ".bottleneck", out_refs);
    out.collect(prefix + ".out", out_refs);
  }
};

/// Encoder + head; the unit both the student and the EMA teacher instantiate.
template <typename S>
struct Network {
  EncoderArch arch = EncoderArch::TinyViT;
  TinyViT<S> vit;
  MlpEncoder<S> mlp;
  ProjectionHead<S> head;

  static Network init(EncoderArch arch, std::mt19937_64& rng, int64_t image_size,
                      int64_t head_out_dim = 256) {
    Network n;
    n.arch = arch;
    if (arch == EncoderArch::TinyViT)
      n.vit = TinyViT<S>::init(rng);
    else
      n.mlp = MlpEncoder<S>::init(rng, image_size);
    n.head = ProjectionHead<S>::init(rng, n.embed_dim(), 512, 64, head_out_dim);
    return n;
  }

  int64_t embed_dim() const {
    return arch == EncoderArch::TinyViT ? vit.embed_dim() : mlp.embed_dim();
  }

  /// Backbone features, pre-head.
  Var<S> embed(const Var<S>& images) const {
    return arch == EncoderArch::TinyViT ? vit.forward(images) : mlp.forward(images);
  }

  /// Head logits.
  Var<S> forward(const Var<S>& images) const { return head(embed(images)); }

  void collect(const std::string& prefix, ParamRefs<S>& out) {
    if (arch == EncoderArch::TinyViT)
      vit.collect(prefix + ".vit", out);
    else
      mlp.collect(prefix + ".mlp", out);
    head.collect(prefix + ".head", out);
  }

  ParamRefs<S> params(const std::string& prefix = "net") {
    ParamRefs<S> out;
    collect(prefix, out);
    return out;
  }
};

/// Rebuild `dst`'s parameters as gradient-free copies of `src` (EMA teacher).
template <typename S>
void copy_params_frozen(Network<S>& dst, Network<S>& src) {
  auto dp = dst.params();
  auto sp = src.params();
  if (dp.size() != sp.size())
    throw ShapeError("copy_params_frozen: parameter structure mismatch");
  for (size_t i = 0; i < dp.size(); ++i)
    *dp[i].second = Var<S>::leaf(sp[i].second->value(), /*requires_grad=*/false, dp[i].first);
}

}  // namespace autoview
