#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "autoview/autodiff.hpp"
#include "autoview/op_set.hpp"
#include "autoview/rng.hpp"
#include "autoview/tensor.hpp"

// Photometric kernels on (3,H,W) images with values in [0,1]. Smooth kernels
// are differentiable w.r.t. the input pixels; quantizing/order-statistic
// kernels (Posterize, Equalize, AutoContrast, Solarize, and the opt-in
// geometric ops) pass pixel gradients through unchanged.

namespace autoview {

template <typename S>
Var<S> clamp01(const Var<S>& x) {
  return clamp(x, 0.0, 1.0);
}

template <typename S>
Var<S> channel(const Var<S>& img, int64_t c) {
  return select(img, 0, c);
}

/// Rec.601 luminance, shape (H,W).
template <typename S>
Var<S> luminance(const Var<S>& img) {
  return add(add(mul(channel(img, 0), 0.299), mul(channel(img, 1), 0.587)),
             mul(channel(img, 2), 0.114));
}

template <typename S>
Var<S> replicate3(const Var<S>& plane) {
  return stack0(std::vector<Var<S>>{plane, plane, plane});
}

namespace detail {

template <typename S, typename F>
Tensor<S> value_map(const Tensor<S>& a, F f) {
  Tensor<S> out(a.shape);
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename S>
Var<S> floor_const(const Var<S>& x) {
  return Var<S>::constant(value_map(x.value(), [](S v) { return std::floor(v); }));
}

inline void check_image(const Shape& s, const char* op) {
  if (s.size() != 3 || s[0] != 3)
    throw ShapeError(std::string(op) + ": expected a (3,H,W) image, got " + shape_str(s));
}

}  // namespace detail

// --- smooth kernels --------------------------------------------------------

template <typename S>
Var<S> k_invert(const Var<S>& img) {
  detail::check_image(img.shape(), "Invert");
  return clamp01(sub(1.0, img));
}

template <typename S>
Var<S> k_brightness(const Var<S>& img, double f) {
  detail::check_image(img.shape(), "Brightness");
  return clamp01(mul(img, f));
}

template <typename S>
Var<S> k_contrast(const Var<S>& img, double f) {
  detail::check_image(img.shape(), "Contrast");
  auto mu = mean(luminance(img));  // spatially constant target
  return clamp01(lerp(mu, img, f));
}

template <typename S>
Var<S> k_grayscale(const Var<S>& img) {
  detail::check_image(img.shape(), "Grayscale");
  return clamp01(replicate3(luminance(img)));
}

template <typename S>
Var<S> k_color(const Var<S>& img, double f) {
  detail::check_image(img.shape(), "Color");
  return clamp01(lerp(replicate3(luminance(img)), img, f));
}

template <typename S>
Tensor<S> smooth3x3_kernel() {
  Tensor<S> k(Shape{3, 3}, {1, 1, 1, 1, 5, 1, 1, 1, 1});
  k.data /= S(13);
  return k;
}

template <typename S>
Var<S> k_sharpness(const Var<S>& img, double f) {
  detail::check_image(img.shape(), "Sharpness");
  auto blurred = conv2d_depthwise(img, smooth3x3_kernel<S>());
  return clamp01(lerp(blurred, img, f));
}

/// Truncated Gaussian blur, separable. `sigma` is the effective value
/// (already scaled for image size by the caller).
template <typename S>
Var<S> k_gaussian_blur(const Var<S>& img, double sigma) {
  detail::check_image(img.shape(), "GaussianBlur");
  if (!(sigma > 0.0)) throw ConfigError("GaussianBlur: sigma must be > 0");
  const int64_t radius = static_cast<int64_t>(std::ceil(3.0 * sigma));
  const int64_t k = 2 * radius + 1;
  Tensor<S> kx(Shape{1, k}), ky(Shape{k, 1});
  double z = 0.0;
  std::vector<double> w(static_cast<size_t>(k));
  for (int64_t i = 0; i < k; ++i) {
    double d = static_cast<double>(i - radius);
    w[static_cast<size_t>(i)] = std::exp(-0.5 * d * d / (sigma * sigma));
    z += w[static_cast<size_t>(i)];
  }
  for (int64_t i = 0; i < k; ++i) {
    kx[i] = static_cast<S>(w[static_cast<size_t>(i)] / z);
    ky[i] = kx[i];
  }
  return clamp01(conv2d_depthwise(conv2d_depthwise(img, kx), ky));
}

// --- hue rotation via differentiable RGB<->HSV -----------------------------
//
// Piecewise-smooth: sector selection and the max/min come out as constant
// masks, so gradients are exact away from sector boundaries (kinks are
// measure zero).

template <typename S>
Var<S> k_hue(const Var<S>& img, double delta) {
  detail::check_image(img.shape(), "Hue");
  auto r = channel(img, 0), g = channel(img, 1), b = channel(img, 2);
  auto mx = maximum(maximum(r, g), b);
  auto mn = minimum(minimum(r, g), b);
  auto c = sub(mx, mn);

  const Tensor<S>&rv = r.value(), &gv = g.value(), &bv = b.value();
  const int64_t n = rv.numel();
  Tensor<S> m_r(rv.shape), m_g(rv.shape), m_b(rv.shape), m_gray(rv.shape);
  for (int64_t i = 0; i < n; ++i) {
    const S chroma = std::max({rv[i], gv[i], bv[i]}) - std::min({rv[i], gv[i], bv[i]});
    if (chroma < S(1e-8)) {
      m_gray[i] = S(1);
    } else if (rv[i] >= gv[i] && rv[i] >= bv[i]) {
      m_r[i] = S(1);
    } else if (gv[i] >= bv[i]) {
      m_g[i] = S(1);
    } else {
      m_b[i] = S(1);
    }
  }

  auto inv_c = div(Var<S>::scalar(1.0), c);
  auto hr_raw = mul(sub(g, b), inv_c);
  Tensor<S> neg_mask = detail::value_map(hr_raw.value(), [](S v) { return v < S(0) ? S(1) : S(0); });
  auto hr = add(hr_raw, mul(Var<S>::constant(neg_mask), 6.0));
  auto hg = add(mul(sub(b, r), inv_c), 2.0);
  auto hb = add(mul(sub(r, g), inv_c), 4.0);
  auto h6 = add(add(mul(Var<S>::constant(m_r), hr), mul(Var<S>::constant(m_g), hg)),
                mul(Var<S>::constant(m_b), hb));
  h6 = mul(h6, Var<S>::constant(detail::value_map(m_gray, [](S v) { return S(1) - v; })));

  auto h = add(mul(h6, 1.0 / 6.0), delta);
  auto hfrac = sub(h, detail::floor_const(h));  // wrap to [0,1)
  auto hh = mul(hfrac, 6.0);
  auto sector = detail::floor_const(hh);
  auto f = sub(hh, sector);

  auto v = mx;
  auto s = div(c, v);  // guarded; chroma is 0 wherever v is 0
  auto p = mul(v, sub(1.0, s));
  auto q = mul(v, sub(1.0, mul(f, s)));
  auto t = mul(v, sub(1.0, mul(sub(1.0, f), s)));

  std::array<Var<S>, 6> sm;
  for (int k = 0; k < 6; ++k)
    sm[static_cast<size_t>(k)] = Var<S>::constant(detail::value_map(
        sector.value(), [k](S x) { return static_cast<int>(x) == k ? S(1) : S(0); }));

  auto pick = [&](const Var<S>& a0, const Var<S>& a1, const Var<S>& a2, const Var<S>& a3,
                  const Var<S>& a4, const Var<S>& a5) {
    return add(add(add(mul(sm[0], a0), mul(sm[1], a1)), add(mul(sm[2], a2), mul(sm[3], a3))),
               add(mul(sm[4], a4), mul(sm[5], a5)));
  };
  auto r2 = pick(v, q, p, p, t, v);
  auto g2 = pick(t, v, v, q, p, p);
  auto b2 = pick(p, p, t, v, v, q);

  // gray pixels bypass the hue math entirely
  auto gray_keep = Var<S>::constant(m_gray);
  auto gray_inv = Var<S>::constant(detail::value_map(m_gray, [](S x) { return S(1) - x; }));
  auto blend = [&](const Var<S>& rot, const Var<S>& orig) {
    return add(mul(gray_inv, rot), mul(gray_keep, orig));
  };
  return clamp01(stack0(std::vector<Var<S>>{blend(r2, r), blend(g2, g), blend(b2, b)}));
}

// --- straight-through kernels ----------------------------------------------

template <typename S>
Var<S> k_solarize(const Var<S>& img, double threshold) {
  detail::check_image(img.shape(), "Solarize");
  if (threshold < 0.0 || threshold > 1.0)
    throw ConfigError("Solarize: threshold must lie in [0,1]");
  const S t = static_cast<S>(threshold);
  Tensor<S> out = detail::value_map(img.value(), [t](S v) { return v < t ? v : S(1) - v; });
  return straight_through(out, img);
}

template <typename S>
Var<S> k_posterize(const Var<S>& img, int bits) {
  detail::check_image(img.shape(), "Posterize");
  if (bits < 1 || bits > 8) throw ConfigError("Posterize: bits must lie in [1,8]");
  const int mask = 0xFF << (8 - bits);
  Tensor<S> out = detail::value_map(img.value(), [mask](S v) {
    int q = static_cast<int>(std::lround(static_cast<double>(v) * 255.0));
    q = std::clamp(q, 0, 255) & mask;
    return static_cast<S>(q) / S(255);
  });
  return straight_through(out, img);
}

template <typename S>
Var<S> k_autocontrast(const Var<S>& img) {
  detail::check_image(img.shape(), "AutoContrast");
  const Tensor<S>& v = img.value();
  const int64_t hw = v.shape[1] * v.shape[2];
  Tensor<S> out(v.shape);
  for (int64_t c = 0; c < 3; ++c) {
    const S* in = v.ptr() + c * hw;
    S* o = out.ptr() + c * hw;
    S lo = in[0], hi = in[0];
    for (int64_t i = 1; i < hw; ++i) {
      lo = std::min(lo, in[i]);
      hi = std::max(hi, in[i]);
    }
    if (hi - lo < S(1e-8)) {
      std::copy_n(in, hw, o);
    } else {
      const S scale = S(1) / (hi - lo);
      for (int64_t i = 0; i < hw; ++i) o[i] = std::clamp((in[i] - lo) * scale, S(0), S(1));
    }
  }
  return straight_through(out, img);
}

template <typename S>
Var<S> k_equalize(const Var<S>& img) {
  detail::check_image(img.shape(), "Equalize");
  const Tensor<S>& v = img.value();
  const int64_t hw = v.shape[1] * v.shape[2];
  Tensor<S> out(v.shape);
  for (int64_t c = 0; c < 3; ++c) {
    const S* in = v.ptr() + c * hw;
    S* o = out.ptr() + c * hw;
    std::array<int64_t, 256> hist{};
    std::vector<int> q(static_cast<size_t>(hw));
    for (int64_t i = 0; i < hw; ++i) {
      int b = std::clamp(static_cast<int>(std::lround(static_cast<double>(in[i]) * 255.0)), 0, 255);
      q[static_cast<size_t>(i)] = b;
      hist[static_cast<size_t>(b)]++;
    }
    // classic 8-bit equalization LUT
    int last_nonzero = -1;
    int nonzero_count = 0;
    for (int b = 0; b < 256; ++b)
      if (hist[static_cast<size_t>(b)]) {
        last_nonzero = b;
        ++nonzero_count;
      }
    std::array<int, 256> lut{};
    const int64_t step =
        nonzero_count <= 1 ? 0 : (hw - hist[static_cast<size_t>(last_nonzero)]) / 255;
    if (step == 0) {
      for (int b = 0; b < 256; ++b) lut[static_cast<size_t>(b)] = b;
    } else {
      int64_t acc = step / 2;
      for (int b = 0; b < 256; ++b) {
        lut[static_cast<size_t>(b)] = static_cast<int>(std::min<int64_t>(255, acc / step));
        acc += hist[static_cast<size_t>(b)];
      }
    }
    for (int64_t i = 0; i < hw; ++i)
      o[i] = static_cast<S>(lut[static_cast<size_t>(q[static_cast<size_t>(i)])]) / S(255);
  }
  return straight_through(out, img);
}

// --- geometric kernels (explicit re-insertion experiments only) -------------

template <typename S>
Var<S> k_translate_x(const Var<S>& img, double frac) {
  detail::check_image(img.shape(), "TranslateX");
  const Tensor<S>& v = img.value();
  const int64_t H = v.shape[1], W = v.shape[2];
  const int64_t shift = static_cast<int64_t>(std::lround(frac * static_cast<double>(W)));
  Tensor<S> out(v.shape, S(0.5));
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        int64_t sx = x - shift;
        if (sx >= 0 && sx < W) out[(c * H + y) * W + x] = v[(c * H + y) * W + sx];
      }
  return straight_through(out, img);
}

template <typename S>
Var<S> k_shear_y(const Var<S>& img, double amount) {
  detail::check_image(img.shape(), "ShearY");
  const Tensor<S>& v = img.value();
  const int64_t H = v.shape[1], W = v.shape[2];
  Tensor<S> out(v.shape, S(0.5));
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        int64_t sy = y - static_cast<int64_t>(std::lround(amount * static_cast<double>(x)));
        if (sy >= 0 && sy < H) out[(c * H + y) * W + x] = v[(c * H + sy) * W + x];
      }
  return straight_through(out, img);
}

// --- dispatch ---------------------------------------------------------------

/// Apply one descriptor. GaussianBlur's sigma scales with image size so the
/// same magnitude table works across progressive stages.
template <typename S>
Var<S> apply_kernel(const AugOpDescriptor& op, const Var<S>& img) {
  switch (op.kind) {
    case AugKind::AutoContrast: return k_autocontrast(img);
    case AugKind::Invert: return k_invert(img);
    case AugKind::Equalize: return k_equalize(img);
    case AugKind::Solarize: return k_solarize(img, op.magnitude);
    case AugKind::Posterize: return k_posterize(img, static_cast<int>(op.magnitude));
    case AugKind::Contrast: return k_contrast(img, op.magnitude);
    case AugKind::Color: return k_color(img, op.magnitude);
    case AugKind::Brightness: return k_brightness(img, op.magnitude);
    case AugKind::Sharpness: return k_sharpness(img, op.magnitude);
    case AugKind::Hue: return k_hue(img, op.magnitude);
    case AugKind::Grayscale: return k_grayscale(img);
    case AugKind::GaussianBlur: {
      const double scale = static_cast<double>(img.shape()[1]) / 32.0;
      return k_gaussian_blur(img, op.magnitude * scale);
    }
    case AugKind::TranslateX: return k_translate_x(img, op.magnitude);
    case AugKind::ShearY: return k_shear_y(img, op.magnitude);
  }
  throw ConfigError("apply_kernel: unknown kind");
}

// ---------------------------------------------------------------------------
// fixed (non-searched) pre-transforms, value level
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> bilinear_resize(const Tensor<S>& img, int64_t out_h, int64_t out_w) {
  detail::check_image(img.shape, "bilinear_resize");
  const int64_t H = img.shape[1], W = img.shape[2];
  Tensor<S> out(Shape{3, out_h, out_w});
  const double sy = static_cast<double>(H) / static_cast<double>(out_h);
  const double sx = static_cast<double>(W) / static_cast<double>(out_w);
  for (int64_t c = 0; c < 3; ++c) {
    const S* in = img.ptr() + c * H * W;
    S* o = out.ptr() + c * out_h * out_w;
    for (int64_t y = 0; y < out_h; ++y) {
      double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
      int64_t y0 = static_cast<int64_t>(std::floor(fy));
      double wy = fy - static_cast<double>(y0);
      int64_t y0c = std::clamp<int64_t>(y0, 0, H - 1), y1c = std::clamp<int64_t>(y0 + 1, 0, H - 1);
      for (int64_t x = 0; x < out_w; ++x) {
        double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
        int64_t x0 = static_cast<int64_t>(std::floor(fx));
        double wx = fx - static_cast<double>(x0);
        int64_t x0c = std::clamp<int64_t>(x0, 0, W - 1),
                x1c = std::clamp<int64_t>(x0 + 1, 0, W - 1);
        double top = (1.0 - wx) * in[y0c * W + x0c] + wx * in[y0c * W + x1c];
        double bot = (1.0 - wx) * in[y1c * W + x0c] + wx * in[y1c * W + x1c];
        o[y * out_w + x] = static_cast<S>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

template <typename S>
Tensor<S> crop(const Tensor<S>& img, int64_t y0, int64_t x0, int64_t h, int64_t w) {
  detail::check_image(img.shape, "crop");
  Tensor<S> out(Shape{3, h, w});
  const int64_t H = img.shape[1], W = img.shape[2];
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x)
        out[(c * h + y) * w + x] = img[(c * H + y0 + y) * W + x0 + x];
  return out;
}

template <typename S>
Tensor<S> hflip(const Tensor<S>& img) {
  detail::check_image(img.shape, "hflip");
  const int64_t H = img.shape[1], W = img.shape[2];
  Tensor<S> out(img.shape);
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        out[(c * H + y) * W + x] = img[(c * H + y) * W + (W - 1 - x)];
  return out;
}

struct CropParams {
  double scale_min = 0.5;
  double scale_max = 1.0;
  double ratio_min = 3.0 / 4.0;
  double ratio_max = 4.0 / 3.0;
  double hflip_prob = 0.5;
};

/// Random resized crop + horizontal flip; the standard view pre-transform
/// applied before any searched operation.
template <typename S>
Tensor<S> random_resized_crop_flip(const Tensor<S>& img, int64_t out_size, const CropParams& p,
                                   std::mt19937_64& rng) {
  detail::check_image(img.shape, "random_resized_crop_flip");
  const int64_t H = img.shape[1], W = img.shape[2];
  const double area = static_cast<double>(H * W);
  int64_t cy = 0, cx = 0, ch = H, cw = W;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double target_area = area * uniform(rng, p.scale_min, p.scale_max);
    double log_ratio = uniform(rng, std::log(p.ratio_min), std::log(p.ratio_max));
    double ratio = std::exp(log_ratio);
    int64_t w = static_cast<int64_t>(std::lround(std::sqrt(target_area * ratio)));
    int64_t h = static_cast<int64_t>(std::lround(std::sqrt(target_area / ratio)));
    if (w < 1 || h < 1 || w > W || h > H) continue;
    cy = randint(rng, H - h + 1);
    cx = randint(rng, W - w + 1);
    ch = h;
    cw = w;
    break;
  }
  Tensor<S> view = bilinear_resize(crop(img, cy, cx, ch, cw), out_size, out_size);
  if (u01(rng) < p.hflip_prob) view = hflip(view);
  return view;
}

/// Deterministic eval transform: resize (shorter side to size/0.875), then
/// center crop.
template <typename S>
Tensor<S> resize_center_crop(const Tensor<S>& img, int64_t out_size) {
  detail::check_image(img.shape, "resize_center_crop");
  const int64_t resized = std::max<int64_t>(out_size, static_cast<int64_t>(std::lround(
                                                          static_cast<double>(out_size) / 0.875)));
  Tensor<S> r = bilinear_resize(img, resized, resized);
  const int64_t off = (resized - out_size) / 2;
  return crop(r, off, off, out_size, out_size);
}

}  // namespace autoview
