#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <vector>

#include "crackseg/tensor.hpp"

namespace crackseg {

/// Spatial zero-padding for conv2d: either "same" (stride 1, odd kernel,
/// output dims equal input dims) or an explicit non-negative amount.
struct Padding {
  static Padding same() { return Padding(true, 0); }
  Padding(int amount) : is_same(false), amount(amount) {}  // NOLINT: implicit by design
  bool is_same;
  int amount;

 private:
  Padding(bool s, int a) : is_same(s), amount(a) {}
};

inline constexpr float kBceEps = 1e-7f;

namespace detail {

inline int ceil_div(int a, int b) {  // b > 0
  return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}
inline int floor_div(int a, int b) {  // b > 0
  return a >= 0 ? a / b : -((-a + b - 1) / b);
}

inline void check_image(const Tensor& t, const char* op, const char* role) {
  if (t.rank() != 4)
    throw ShapeError(std::string(op) + ": " + role + " must be N x C x H x W, got " +
                     shape_str(t.shape()));
}

// c += w * a over a row, the vectorizable inner step of every conv loop.
inline void axpy(int n, float w, const float* a, float* c) {
  for (int i = 0; i < n; ++i) c[i] += w * a[i];
}

// Fixed-association 8-lane dot product; deterministic regardless of
// optimization level, unlike letting the compiler reassociate.
inline float dot(int n, const float* a, const float* b) {
  float p[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) p[j] += a[i + j] * b[i + j];
  float acc = ((p[0] + p[1]) + (p[2] + p[3])) + ((p[4] + p[5]) + (p[6] + p[7]));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline float row_sum(int n, const float* a) {
  float p[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) p[j] += a[i + j];
  float acc = ((p[0] + p[1]) + (p[2] + p[3])) + ((p[4] + p[5]) + (p[6] + p[7]));
  for (; i < n; ++i) acc += a[i];
  return acc;
}

}  // namespace detail

/// 2D cross-correlation (no kernel flip) over N x Cin x H x W input with
/// Cout x Cin x kh x kw weights. "same" padding keeps spatial dims at
/// stride 1. Differentiable w.r.t. input, weight and bias.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride = 1, Padding padding = Padding::same()) {
  detail::check_image(input, "conv2d", "input");
  detail::check_image(weight, "conv2d", "weight");
  if (bias.rank() != 1)
    throw ShapeError("conv2d: bias must be rank 1, got " + shape_str(bias.shape()));
  const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != Cin)
    throw ShapeError("conv2d: input has " + std::to_string(Cin) +
                     " channels but weight expects " + std::to_string(weight.dim(1)));
  if (bias.dim(0) != Cout)
    throw ShapeError("conv2d: bias has " + std::to_string(bias.dim(0)) +
                     " entries for " + std::to_string(Cout) + " output channels");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  int ph, pw;
  if (padding.is_same) {
    if (stride != 1) throw ShapeError("conv2d: \"same\" padding requires stride 1");
    if (kh % 2 == 0 || kw % 2 == 0)
      throw ShapeError("conv2d: \"same\" padding requires odd kernel dims, got " +
                       std::to_string(kh) + "x" + std::to_string(kw));
    ph = (kh - 1) / 2;
    pw = (kw - 1) / 2;
  } else {
    if (padding.amount < 0) throw ShapeError("conv2d: negative padding");
    ph = pw = padding.amount;
  }
  const int Ho = (H + 2 * ph - kh) / stride + 1;
  const int Wo = (W + 2 * pw - kw) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                     " does not fit input " + shape_str(input.shape()));

  std::vector<float> out(static_cast<size_t>(N) * Cout * Ho * Wo);
  {
    const float* in = input.data().data();
    const float* wt = weight.data().data();
    const float* bs = bias.data().data();
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Cout; ++co) {
        float* op = out.data() + (static_cast<int64_t>(n) * Cout + co) * Ho * Wo;
        std::fill(op, op + static_cast<int64_t>(Ho) * Wo, bs[co]);
        for (int ci = 0; ci < Cin; ++ci) {
          const float* ip = in + (static_cast<int64_t>(n) * Cin + ci) * H * W;
          const float* wp = wt + (static_cast<int64_t>(co) * Cin + ci) * kh * kw;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const float wv = wp[ky * kw + kx];
              const int lo = std::max(0, detail::ceil_div(pw - kx, stride));
              const int hi = std::min(Wo, detail::floor_div(W - 1 + pw - kx, stride) + 1);
              if (lo >= hi) continue;
              for (int oy = 0; oy < Ho; ++oy) {
                const int iy = oy * stride - ph + ky;
                if (iy < 0 || iy >= H) continue;
                const float* irow = ip + static_cast<int64_t>(iy) * W + (kx - pw);
                float* orow = op + static_cast<int64_t>(oy) * Wo;
                if (stride == 1) {
                  detail::axpy(hi - lo, wv, irow + lo, orow + lo);
                } else {
                  for (int ox = lo; ox < hi; ++ox) orow[ox] += wv * irow[static_cast<int64_t>(ox) * stride];
                }
              }
            }
        }
      }
  }

  auto backward = [input, weight, bias, N, Cin, H, W, Cout, kh, kw, stride, ph, pw,
                   Ho, Wo](TensorNode& self) {
    const float* gout = self.grad.data();
    const float* in = input.data().data();
    const float* wt = weight.data().data();
    if (input.requires_grad()) {
      float* gin = Tensor(input).grad().data();
      for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < Cin; ++ci) {
          float* gip = gin + (static_cast<int64_t>(n) * Cin + ci) * H * W;
          for (int co = 0; co < Cout; ++co) {
            const float* gop = gout + (static_cast<int64_t>(n) * Cout + co) * Ho * Wo;
            const float* wp = wt + (static_cast<int64_t>(co) * Cin + ci) * kh * kw;
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const float wv = wp[ky * kw + kx];
                const int lo = std::max(0, detail::ceil_div(pw - kx, stride));
                const int hi = std::min(Wo, detail::floor_div(W - 1 + pw - kx, stride) + 1);
                if (lo >= hi) continue;
                for (int oy = 0; oy < Ho; ++oy) {
                  const int iy = oy * stride - ph + ky;
                  if (iy < 0 || iy >= H) continue;
                  float* girow = gip + static_cast<int64_t>(iy) * W + (kx - pw);
                  const float* gorow = gop + static_cast<int64_t>(oy) * Wo;
                  if (stride == 1) {
                    detail::axpy(hi - lo, wv, gorow + lo, girow + lo);
                  } else {
                    for (int ox = lo; ox < hi; ++ox) girow[static_cast<int64_t>(ox) * stride] += wv * gorow[ox];
                  }
                }
              }
          }
        }
    }
    if (weight.requires_grad()) {
      float* gw = Tensor(weight).grad().data();
      for (int co = 0; co < Cout; ++co)
        for (int ci = 0; ci < Cin; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int lo = std::max(0, detail::ceil_div(pw - kx, stride));
              const int hi = std::min(Wo, detail::floor_div(W - 1 + pw - kx, stride) + 1);
              float acc = 0.0f;
              if (lo < hi) {
                for (int n = 0; n < N; ++n) {
                  const float* gop = gout + (static_cast<int64_t>(n) * Cout + co) * Ho * Wo;
                  const float* ip = in + (static_cast<int64_t>(n) * Cin + ci) * H * W;
                  for (int oy = 0; oy < Ho; ++oy) {
                    const int iy = oy * stride - ph + ky;
                    if (iy < 0 || iy >= H) continue;
                    const float* irow = ip + static_cast<int64_t>(iy) * W + (kx - pw);
                    const float* gorow = gop + static_cast<int64_t>(oy) * Wo;
                    if (stride == 1) {
                      acc += detail::dot(hi - lo, gorow + lo, irow + lo);
                    } else {
                      for (int ox = lo; ox < hi; ++ox) acc += gorow[ox] * irow[static_cast<int64_t>(ox) * stride];
                    }
                  }
                }
              }
              gw[(static_cast<int64_t>(co) * Cin + ci) * kh * kw + ky * kw + kx] += acc;
            }
    }
    if (bias.requires_grad()) {
      float* gb = Tensor(bias).grad().data();
      for (int co = 0; co < Cout; ++co) {
        float acc = 0.0f;
        for (int n = 0; n < N; ++n) {
          const float* gop = gout + (static_cast<int64_t>(n) * Cout + co) * Ho * Wo;
          acc += detail::row_sum(Ho * Wo, gop);
        }
        gb[co] += acc;
      }
    }
  };
  return make_op("conv2d", {N, Cout, Ho, Wo}, std::move(out), {input, weight, bias},
                 std::move(backward));
}

/// Transposed convolution used by the decoder upsampling path. Requires
/// kh = kw = stride, so every input pixel stamps a disjoint kernel-sized
/// patch and the output is exactly stride*H x stride*W. Weight layout is
/// Cin x Cout x kh x kw.
inline Tensor conv2d_transpose(const Tensor& input, const Tensor& weight,
                               const Tensor& bias, int stride) {
  detail::check_image(input, "conv2d_transpose", "input");
  detail::check_image(weight, "conv2d_transpose", "weight");
  if (bias.rank() != 1)
    throw ShapeError("conv2d_transpose: bias must be rank 1, got " + shape_str(bias.shape()));
  const int N = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int Cout = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(0) != Cin)
    throw ShapeError("conv2d_transpose: input has " + std::to_string(Cin) +
                     " channels but weight expects " + std::to_string(weight.dim(0)));
  if (bias.dim(0) != Cout)
    throw ShapeError("conv2d_transpose: bias has " + std::to_string(bias.dim(0)) +
                     " entries for " + std::to_string(Cout) + " output channels");
  if (stride < 1) throw ShapeError("conv2d_transpose: stride must be >= 1");
  if (kh != stride || kw != stride)
    throw ShapeError("conv2d_transpose: unsupported configuration, kernel " +
                     std::to_string(kh) + "x" + std::to_string(kw) +
                     " must equal stride " + std::to_string(stride));
  const int Ho = H * stride, Wo = W * stride;

  std::vector<float> out(static_cast<size_t>(N) * Cout * Ho * Wo);
  {
    const float* in = input.data().data();
    const float* wt = weight.data().data();
    const float* bs = bias.data().data();
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Cout; ++co) {
        float* op = out.data() + (static_cast<int64_t>(n) * Cout + co) * Ho * Wo;
        std::fill(op, op + static_cast<int64_t>(Ho) * Wo, bs[co]);
        for (int ci = 0; ci < Cin; ++ci) {
          const float* ip = in + (static_cast<int64_t>(n) * Cin + ci) * H * W;
          const float* wp = wt + (static_cast<int64_t>(ci) * Cout + co) * kh * kw;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const float wv = wp[ky * kw + kx];
              for (int iy = 0; iy < H; ++iy) {
                const float* irow = ip + static_cast<int64_t>(iy) * W;
                float* orow = op + static_cast<int64_t>(iy * stride + ky) * Wo + kx;
                for (int ix = 0; ix < W; ++ix) orow[static_cast<int64_t>(ix) * stride] += wv * irow[ix];
              }
            }
        }
      }
  }

  auto backward = [input, weight, bias, N, Cin, H, W, Cout, kh, kw, stride, Ho,
                   Wo](TensorNode& self) {
    const float* gout = self.grad.data();
    const float* in = input.data().data();
    const float* wt = weight.data().data();
    if (input.requires_grad()) {
      float* gin = Tensor(input).grad().data();
      for (int n = 0; n < N; ++n)
        for (int ci = 0; ci < Cin; ++ci) {
          float* gip = gin + (static_cast<int64_t>(n) * Cin + ci) * H * W;
          for (int co = 0; co < Cout; ++co) {
            const float* gop = gout + (static_cast<int64_t>(n) * Cout + co) * Ho * Wo;
            const float* wp = wt + (static_cast<int64_t>(ci) * Cout + co) * kh * kw;
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const float wv = wp[ky * kw + kx];
                for (int iy = 0; iy < H; ++iy) {
                  float* girow = gip + static_cast<int64_t>(iy) * W;
                  const float* gorow = gop + static_cast<int64_t>(iy * stride + ky) * Wo + kx;
                  for (int ix = 0; ix < W; ++ix) girow[ix] += wv * gorow[static_cast<int64_t>(ix) * stride];
                }
              }
          }
        }
    }
    if (weight.requires_grad()) {
      float* gw = Tensor(weight).grad().data();
      for (int ci = 0; ci < Cin; ++ci)
        for (int co = 0; co < Cout; ++co)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              float acc = 0.0f;
              for (int n = 0; n < N; ++n) {
                const float* ip = in + (static_cast<int64_t>(n) * Cin + ci) * H * W;
                const float* gop = gout + (static_cast<int64_t>(n) * Cout + co) * Ho * Wo;
                for (int iy = 0; iy < H; ++iy) {
                  const float* irow = ip + static_cast<int64_t>(iy) * W;
                  const float* gorow = gop + static_cast<int64_t>(iy * stride + ky) * Wo + kx;
                  for (int ix = 0; ix < W; ++ix) acc += irow[ix] * gorow[static_cast<int64_t>(ix) * stride];
                }
              }
              gw[(static_cast<int64_t>(ci) * Cout + co) * kh * kw + ky * kw + kx] += acc;
            }
    }
    if (bias.requires_grad()) {
      float* gb = Tensor(bias).grad().data();
      for (int co = 0; co < Cout; ++co) {
        float acc = 0.0f;
        for (int n = 0; n < N; ++n)
          acc += detail::row_sum(Ho * Wo, gout + (static_cast<int64_t>(n) * Cout + co) * Ho * Wo);
        gb[co] += acc;
      }
    }
  };
  return make_op("conv2d_transpose", {N, Cout, Ho, Wo}, std::move(out),
                 {input, weight, bias}, std::move(backward));
}

/// Argmax bookkeeping for 2x2/stride-2 max pooling: one flat index into the
/// pooled input's data per output element, consumed by max_unpool2d.
struct PoolIndices {
  Shape input_shape;           // N x C x H x W of the tensor that was pooled
  std::vector<int64_t> flat;   // row-major over the pooled output
};

struct PoolResult {
  Tensor output;
  std::shared_ptr<const PoolIndices> indices;
};

/// 2x2 max pooling with stride 2. H and W must be even. Ties resolve to the
/// first position in row-major window order, so gradients are deterministic.
inline PoolResult maxpool2d(const Tensor& input) {
  detail::check_image(input, "maxpool2d", "input");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw ShapeError("maxpool2d: spatial dims must be even, got " + shape_str(input.shape()));
  const int Ho = H / 2, Wo = W / 2;

  auto idx = std::make_shared<PoolIndices>();
  idx->input_shape = input.shape();
  idx->flat.resize(static_cast<size_t>(N) * C * Ho * Wo);
  std::vector<float> out(idx->flat.size());
  {
    const float* in = input.data().data();
    int64_t o = 0;
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const int64_t plane = (static_cast<int64_t>(n) * C + c) * H * W;
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox, ++o) {
            int64_t best = plane + static_cast<int64_t>(2 * oy) * W + 2 * ox;
            float bv = in[best];
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int64_t p = plane + static_cast<int64_t>(2 * oy + dy) * W + (2 * ox + dx);
                if (in[p] > bv) {
                  bv = in[p];
                  best = p;
                }
              }
            out[o] = bv;
            idx->flat[o] = best;
          }
      }
  }

  auto indices = std::shared_ptr<const PoolIndices>(idx);
  auto backward = [input, indices](TensorNode& self) {
    if (!input.requires_grad()) return;
    float* gin = Tensor(input).grad().data();
    const float* gout = self.grad.data();
    for (size_t i = 0; i < indices->flat.size(); ++i) gin[indices->flat[i]] += gout[i];
  };
  Tensor out_t = make_op("maxpool2d", {N, C, Ho, Wo}, std::move(out), {input},
                         std::move(backward));
  return PoolResult{out_t, indices};
}

/// Scatter pooled values back to their recorded argmax positions, zeros
/// elsewhere. `indices` must come from the matching maxpool2d call and the
/// output is exactly 2h x 2w.
inline Tensor max_unpool2d(const Tensor& input,
                           const std::shared_ptr<const PoolIndices>& indices,
                           int out_h, int out_w) {
  detail::check_image(input, "max_unpool2d", "input");
  if (!indices) throw ShapeError("max_unpool2d: null indices");
  const int N = input.dim(0), C = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (out_h != 2 * h || out_w != 2 * w)
    throw ShapeError("max_unpool2d: out size " + std::to_string(out_h) + "x" +
                     std::to_string(out_w) + " must be twice the input " +
                     std::to_string(h) + "x" + std::to_string(w));
  const Shape want{N, C, out_h, out_w};
  if (indices->input_shape != want)
    throw ShapeError("max_unpool2d: indices were recorded for shape " +
                     shape_str(indices->input_shape) + ", expected " + shape_str(want));
  if (indices->flat.size() != static_cast<size_t>(input.numel()))
    throw ShapeError("max_unpool2d: indices count does not match input");
  const int64_t out_count = numel_of(want);
  const int64_t out_plane = static_cast<int64_t>(out_h) * out_w;
  const int64_t in_plane = static_cast<int64_t>(h) * w;
  for (size_t i = 0; i < indices->flat.size(); ++i) {
    const int64_t f = indices->flat[i];
    if (f < 0 || f >= out_count)
      throw ShapeError("max_unpool2d: index " + std::to_string(f) + " out of range");
    if (f / out_plane != static_cast<int64_t>(i) / in_plane)
      throw ShapeError("max_unpool2d: index crosses channel planes; indices do not match input");
  }

  std::vector<float> out(static_cast<size_t>(out_count), 0.0f);
  {
    const float* in = input.data().data();
    for (size_t i = 0; i < indices->flat.size(); ++i) out[indices->flat[i]] = in[i];
  }
  auto backward = [input, indices](TensorNode& self) {
    if (!input.requires_grad()) return;
    float* gin = Tensor(input).grad().data();
    const float* gout = self.grad.data();
    for (size_t i = 0; i < indices->flat.size(); ++i) gin[i] += gout[indices->flat[i]];
  };
  return make_op("max_unpool2d", want, std::move(out), {input}, std::move(backward));
}

/// Elementwise max(0, x); the subgradient at 0 is taken as 0.
inline Tensor relu(const Tensor& input) {
  std::vector<float> out(input.data().size());
  const auto& x = input.data();
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
  auto backward = [input](TensorNode& self) {
    if (!input.requires_grad()) return;
    float* gin = Tensor(input).grad().data();
    const auto& x = input.data();
    const float* gout = self.grad.data();
    for (size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0f) gin[i] += gout[i];
  };
  return make_op("relu", input.shape(), std::move(out), {input}, std::move(backward));
}

/// Numerically stable logistic. The input clamp keeps exp() finite; the
/// output clamp pins results inside (0, 1), which plain float arithmetic
/// cannot guarantee (1/(1+exp(-x)) rounds to 1.0f once x exceeds ~17).
inline Tensor sigmoid(const Tensor& input) {
  constexpr float kLo = std::numeric_limits<float>::min();
  constexpr float kHi = 0.99999994f;  // largest float below 1
  std::vector<float> out(input.data().size());
  const auto& x = input.data();
  for (size_t i = 0; i < x.size(); ++i) {
    float v = std::min(88.0f, std::max(-88.0f, x[i]));
    float y;
    if (v >= 0.0f) {
      y = 1.0f / (1.0f + std::exp(-v));
    } else {
      const float e = std::exp(v);
      y = e / (1.0f + e);
    }
    out[i] = std::min(kHi, std::max(kLo, y));
  }
  auto backward = [input](TensorNode& self) {
    if (!input.requires_grad()) return;
    float* gin = Tensor(input).grad().data();
    const float* y = self.data.data();
    const float* gout = self.grad.data();
    for (size_t i = 0; i < self.data.size(); ++i) gin[i] += gout[i] * y[i] * (1.0f - y[i]);
  };
  return make_op("sigmoid", input.shape(), std::move(out), {input}, std::move(backward));
}

/// Channel-axis concatenation of two N x C x H x W tensors with matching
/// batch and spatial dims; the gradient splits back into the two inputs.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  detail::check_image(a, "concat_channels", "first input");
  detail::check_image(b, "concat_channels", "second input");
  const int N = a.dim(0), Ca = a.dim(1), H = a.dim(2), W = a.dim(3);
  const int Cb = b.dim(1);
  if (b.dim(0) != N || b.dim(2) != H || b.dim(3) != W)
    throw ShapeError("concat_channels: shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ outside the channel axis");
  const int64_t plane = static_cast<int64_t>(H) * W;
  const int64_t a_sz = Ca * plane, b_sz = Cb * plane;
  std::vector<float> out(static_cast<size_t>(N) * (a_sz + b_sz));
  for (int n = 0; n < N; ++n) {
    std::memcpy(out.data() + n * (a_sz + b_sz), a.data().data() + n * a_sz,
                sizeof(float) * a_sz);
    std::memcpy(out.data() + n * (a_sz + b_sz) + a_sz, b.data().data() + n * b_sz,
                sizeof(float) * b_sz);
  }
  auto backward = [a, b, N, a_sz, b_sz](TensorNode& self) {
    const float* gout = self.grad.data();
    if (a.requires_grad()) {
      float* ga = Tensor(a).grad().data();
      for (int n = 0; n < N; ++n)
        for (int64_t i = 0; i < a_sz; ++i) ga[n * a_sz + i] += gout[n * (a_sz + b_sz) + i];
    }
    if (b.requires_grad()) {
      float* gb = Tensor(b).grad().data();
      for (int n = 0; n < N; ++n)
        for (int64_t i = 0; i < b_sz; ++i) gb[n * b_sz + i] += gout[n * (a_sz + b_sz) + a_sz + i];
    }
  };
  return make_op("concat_channels", {N, Ca + Cb, H, W}, std::move(out), {a, b},
                 std::move(backward));
}

/// Elementwise sum of two same-shape tensors.
inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  std::vector<float> out(a.data().size());
  const auto& av = a.data();
  const auto& bv = b.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  auto backward = [a, b](TensorNode& self) {
    const float* gout = self.grad.data();
    if (a.requires_grad()) {
      float* ga = Tensor(a).grad().data();
      for (size_t i = 0; i < self.data.size(); ++i) ga[i] += gout[i];
    }
    if (b.requires_grad()) {
      float* gb = Tensor(b).grad().data();
      for (size_t i = 0; i < self.data.size(); ++i) gb[i] += gout[i];
    }
  };
  return make_op("add", a.shape(), std::move(out), {a, b}, std::move(backward));
}

/// Mean binary cross-entropy over all elements, with predictions clamped to
/// [eps, 1-eps] so the logs stay finite. Differentiable w.r.t. pred only.
inline Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("bce_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  const auto& p = pred.data();
  const auto& t = target.data();
  double acc = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double pc = std::min<double>(1.0 - kBceEps, std::max<double>(kBceEps, p[i]));
    acc -= t[i] * std::log(pc) + (1.0 - t[i]) * std::log(1.0 - pc);
  }
  const float mean = static_cast<float>(acc / static_cast<double>(p.size()));
  const float inv_n = 1.0f / static_cast<float>(p.size());
  auto backward = [pred, target, inv_n](TensorNode& self) {
    if (!pred.requires_grad()) return;
    float* gp = Tensor(pred).grad().data();
    const auto& p = pred.data();
    const auto& t = target.data();
    const float g = self.grad[0] * inv_n;
    for (size_t i = 0; i < p.size(); ++i) {
      if (p[i] < kBceEps || p[i] > 1.0f - kBceEps) continue;  // clamped region is flat
      gp[i] += g * (p[i] - t[i]) / (p[i] * (1.0f - p[i]));
    }
  };
  return make_op("bce_loss", {1}, {mean}, {pred, target}, std::move(backward));
}

/// Sum of all elements as a scalar tensor.
inline Tensor sum(const Tensor& input) {
  double acc = 0.0;
  for (float v : input.data()) acc += v;
  auto backward = [input](TensorNode& self) {
    if (!input.requires_grad()) return;
    float* gin = Tensor(input).grad().data();
    const float g = self.grad[0];
    for (size_t i = 0; i < input.data().size(); ++i) gin[i] += g;
  };
  return make_op("sum", {1}, {static_cast<float>(acc)}, {input}, std::move(backward));
}

}  // namespace crackseg

