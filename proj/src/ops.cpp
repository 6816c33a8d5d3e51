#include "fire/ops.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>

namespace fire {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

int iceil_div(int a, int b) { return a > 0 ? (a + b - 1) / b : a / b; }

// Spatial dims promoted to 3: a 2D tensor [B,C,H,W] is viewed as [B,C,1,H,W].
struct Conv3View {
  int64_t batch, cin, cout;
  std::array<int64_t, 3> in, k, out;
  std::array<int, 3> stride, pad;
};

Conv3View make_conv_view(const Tensor& input, const Tensor& weight, int stride, int padding) {
  const int sr = input.spatial_rank();
  Conv3View v{};
  v.batch = input.dim(0);
  v.cin = input.dim(1);
  v.cout = weight.dim(0);
  for (int d = 0; d < 3; ++d) {
    const int src = d - (3 - sr);
    v.in[d] = src < 0 ? 1 : input.dim(2 + src);
    v.k[d] = src < 0 ? 1 : weight.dim(2 + src);
    v.stride[d] = src < 0 ? 1 : stride;
    v.pad[d] = src < 0 ? 0 : padding;
    const int64_t padded = v.in[d] + 2 * v.pad[d];
    if (padded < v.k[d])
      throw std::invalid_argument("conv: kernel larger than padded input on dim " + std::to_string(d));
    v.out[d] = (padded - v.k[d]) / v.stride[d] + 1;
  }
  return v;
}

void conv3_forward(const Conv3View& v, const float* in, const float* w, const float* bias, float* out) {
  const int64_t in_plane = v.in[1] * v.in[2];
  const int64_t out_plane = v.out[1] * v.out[2];
  const int64_t out_vol = v.out[0] * out_plane;
  for (int64_t b = 0; b < v.batch; ++b) {
    for (int64_t co = 0; co < v.cout; ++co) {
      float* obase = out + (b * v.cout + co) * out_vol;
      const float bv = bias[co];
      for (int64_t i = 0; i < out_vol; ++i) obase[i] = bv;
      for (int64_t ci = 0; ci < v.cin; ++ci) {
        const float* ibase = in + (b * v.cin + ci) * (v.in[0] * in_plane);
        const float* wbase = w + (co * v.cin + ci) * (v.k[0] * v.k[1] * v.k[2]);
        for (int64_t kz = 0; kz < v.k[0]; ++kz) {
          const int64_t oz_lo = std::max<int64_t>(0, iceil_div(int(v.pad[0] - kz), v.stride[0]));
          const int64_t oz_hi = std::min(v.out[0], (v.in[0] - 1 - kz + v.pad[0]) / v.stride[0] + 1);
          for (int64_t ky = 0; ky < v.k[1]; ++ky) {
            const int64_t oy_lo = std::max<int64_t>(0, iceil_div(int(v.pad[1] - ky), v.stride[1]));
            const int64_t oy_hi = std::min(v.out[1], (v.in[1] - 1 - ky + v.pad[1]) / v.stride[1] + 1);
            for (int64_t kx = 0; kx < v.k[2]; ++kx) {
              const int64_t ox_lo = std::max<int64_t>(0, iceil_div(int(v.pad[2] - kx), v.stride[2]));
              const int64_t ox_hi = std::min(v.out[2], (v.in[2] - 1 - kx + v.pad[2]) / v.stride[2] + 1);
              if (oz_lo >= oz_hi || oy_lo >= oy_hi || ox_lo >= ox_hi) continue;
              const float wv = wbase[(kz * v.k[1] + ky) * v.k[2] + kx];
              for (int64_t oz = oz_lo; oz < oz_hi; ++oz) {
                const int64_t iz = oz * v.stride[0] + kz - v.pad[0];
                for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                  const int64_t iy = oy * v.stride[1] + ky - v.pad[1];
                  const float* irow = ibase + (iz * v.in[1] + iy) * v.in[2] + (kx - v.pad[2]);
                  float* orow = obase + (oz * v.out[1] + oy) * v.out[2];
                  if (v.stride[2] == 1) {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox];
                  } else {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox * v.stride[2]];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

void conv3_backward(const Conv3View& v, const float* in, const float* w, const float* gout, float* gin,
                    float* gw, float* gbias) {
  const int64_t in_plane = v.in[1] * v.in[2];
  const int64_t in_vol = v.in[0] * in_plane;
  const int64_t out_vol = v.out[0] * v.out[1] * v.out[2];
  if (gbias) {
    for (int64_t co = 0; co < v.cout; ++co) {
      double acc = 0.0;
      for (int64_t b = 0; b < v.batch; ++b) {
        const float* g = gout + (b * v.cout + co) * out_vol;
        for (int64_t i = 0; i < out_vol; ++i) acc += g[i];
      }
      gbias[co] += static_cast<float>(acc);
    }
  }
  for (int64_t co = 0; co < v.cout; ++co) {
    for (int64_t ci = 0; ci < v.cin; ++ci) {
      for (int64_t kz = 0; kz < v.k[0]; ++kz) {
        const int64_t oz_lo = std::max<int64_t>(0, iceil_div(int(v.pad[0] - kz), v.stride[0]));
        const int64_t oz_hi = std::min(v.out[0], (v.in[0] - 1 - kz + v.pad[0]) / v.stride[0] + 1);
        for (int64_t ky = 0; ky < v.k[1]; ++ky) {
          const int64_t oy_lo = std::max<int64_t>(0, iceil_div(int(v.pad[1] - ky), v.stride[1]));
          const int64_t oy_hi = std::min(v.out[1], (v.in[1] - 1 - ky + v.pad[1]) / v.stride[1] + 1);
          for (int64_t kx = 0; kx < v.k[2]; ++kx) {
            const int64_t ox_lo = std::max<int64_t>(0, iceil_div(int(v.pad[2] - kx), v.stride[2]));
            const int64_t ox_hi = std::min(v.out[2], (v.in[2] - 1 - kx + v.pad[2]) / v.stride[2] + 1);
            if (oz_lo >= oz_hi || oy_lo >= oy_hi || ox_lo >= ox_hi) continue;
            const int64_t widx = ((co * v.cin + ci) * v.k[0] + kz) * v.k[1] * v.k[2] + ky * v.k[2] + kx;
            const float wv = w[widx];
            double wacc = 0.0;
            for (int64_t b = 0; b < v.batch; ++b) {
              const float* ibase = in + (b * v.cin + ci) * in_vol;
              float* gibase = gin ? gin + (b * v.cin + ci) * in_vol : nullptr;
              const float* gobase = gout + (b * v.cout + co) * out_vol;
              for (int64_t oz = oz_lo; oz < oz_hi; ++oz) {
                const int64_t iz = oz * v.stride[0] + kz - v.pad[0];
                for (int64_t oy = oy_lo; oy < oy_hi; ++oy) {
                  const int64_t iy = oy * v.stride[1] + ky - v.pad[1];
                  const float* irow = ibase + (iz * v.in[1] + iy) * v.in[2] + (kx - v.pad[2]);
                  const float* grow = gobase + (oz * v.out[1] + oy) * v.out[2];
                  if (gw) {
                    for (int64_t ox = ox_lo; ox < ox_hi; ++ox)
                      wacc += double(grow[ox]) * double(irow[ox * v.stride[2]]);
                  }
                  if (gibase) {
                    float* girow = gibase + (iz * v.in[1] + iy) * v.in[2] + (kx - v.pad[2]);
                    if (v.stride[2] == 1) {
                      for (int64_t ox = ox_lo; ox < ox_hi; ++ox) girow[ox] += wv * grow[ox];
                    } else {
                      for (int64_t ox = ox_lo; ox < ox_hi; ++ox) girow[ox * v.stride[2]] += wv * grow[ox];
                    }
                  }
                }
              }
            }
            if (gw) gw[widx] += static_cast<float>(wacc);
          }
        }
      }
    }
  }
}

// Per-axis interpolation table for align-corners-false linear resampling.
struct LerpAxis {
  std::vector<int64_t> i0, i1;
  std::vector<float> w1;  // weight of i1; weight of i0 is 1 - w1
};

LerpAxis make_upsample_axis(int64_t in_extent, int factor) {
  LerpAxis ax;
  const int64_t out = in_extent * factor;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.w1.resize(out);
  for (int64_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) / factor - 0.5;
    const double f = std::floor(src);
    const double t = src - f;
    int64_t i0 = static_cast<int64_t>(f);
    int64_t i1 = i0 + 1;
    ax.i0[o] = std::min(std::max<int64_t>(i0, 0), in_extent - 1);
    ax.i1[o] = std::min(std::max<int64_t>(i1, 0), in_extent - 1);
    ax.w1[o] = static_cast<float>(t);
  }
  return ax;
}

}  // namespace

Tensor conv(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  if (!input.defined() || !weight.defined() || !bias.defined())
    throw std::invalid_argument("conv: undefined tensor argument");
  if (input.rank() != 4 && input.rank() != 5)
    throw std::invalid_argument("conv: spatial rank must be 2 or 3, got input " + shape_str(input.shape()));
  if (weight.rank() != input.rank())
    throw std::invalid_argument("conv: weight rank " + shape_str(weight.shape()) + " does not match input " +
                                shape_str(input.shape()));
  if (weight.dim(1) != input.dim(1))
    throw std::invalid_argument("conv: input channels " + std::to_string(input.dim(1)) +
                                " vs weight expects " + std::to_string(weight.dim(1)));
  if (bias.rank() != 1 || bias.dim(0) != weight.dim(0))
    throw std::invalid_argument("conv: bias shape " + shape_str(bias.shape()) + " must be [out_channels]");
  if (stride < 1) throw std::invalid_argument("conv: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv: negative padding");

  const Conv3View v = make_conv_view(input, weight, stride, padding);
  Shape oshape{v.batch, v.cout};
  const int sr = input.spatial_rank();
  for (int d = 3 - sr; d < 3; ++d) oshape.push_back(v.out[d]);
  Tensor out(oshape);
  conv3_forward(v, input.data(), weight.data(), bias.data(), out.data());

  Tape* tape = Tape::active();
  if (tape && (tracks_grad(input) || tracks_grad(weight) || tracks_grad(bias))) {
    auto ii = input.impl, wi = weight.impl, bi = bias.impl, oi = out.impl;
    const bool need_in = tracks_grad(input), need_w = tracks_grad(weight), need_b = tracks_grad(bias);
    tape->record("conv", {input, weight, bias}, out, [=]() {
      if (oi->grad.empty()) return;
      conv3_backward(v, ii->data.data(), wi->data.data(), oi->grad.data(),
                     need_in ? grad_buffer(ii.get()) : nullptr, need_w ? grad_buffer(wi.get()) : nullptr,
                     need_b ? grad_buffer(bi.get()) : nullptr);
    });
  }
  return out;
}

Tensor upsample_linear(const Tensor& input, int factor) {
  if (!input.defined()) throw std::invalid_argument("upsample_linear: undefined input");
  if (input.rank() != 4 && input.rank() != 5)
    throw std::invalid_argument("upsample_linear: spatial rank must be 2 or 3");
  if (factor < 1) throw std::invalid_argument("upsample_linear: factor must be >= 1");

  const int sr = input.spatial_rank();
  const int64_t batch = input.dim(0), chans = input.dim(1);
  std::array<int64_t, 3> in{1, 1, 1}, out{1, 1, 1};
  std::array<LerpAxis, 3> ax;
  for (int d = 0; d < 3; ++d) {
    const int src = d - (3 - sr);
    in[d] = src < 0 ? 1 : input.dim(2 + src);
    const int f = src < 0 ? 1 : factor;
    out[d] = in[d] * f;
    ax[d] = make_upsample_axis(in[d], f);
  }
  Shape oshape{batch, chans};
  for (int d = 3 - sr; d < 3; ++d) oshape.push_back(out[d]);
  Tensor result(oshape);

  const int64_t in_vol = in[0] * in[1] * in[2];
  const int64_t out_vol = out[0] * out[1] * out[2];
  const float* src = input.data();
  float* dst = result.data();
  for (int64_t bc = 0; bc < batch * chans; ++bc) {
    const float* ic = src + bc * in_vol;
    float* oc = dst + bc * out_vol;
    for (int64_t oz = 0; oz < out[0]; ++oz) {
      const int64_t z0 = ax[0].i0[oz] * in[1], z1 = ax[0].i1[oz] * in[1];
      const float wz1 = ax[0].w1[oz], wz0 = 1.0f - wz1;
      for (int64_t oy = 0; oy < out[1]; ++oy) {
        const int64_t y0 = ax[1].i0[oy], y1 = ax[1].i1[oy];
        const float wy1 = ax[1].w1[oy], wy0 = 1.0f - wy1;
        const float* r00 = ic + (z0 + y0) * in[2];
        const float* r01 = ic + (z0 + y1) * in[2];
        const float* r10 = ic + (z1 + y0) * in[2];
        const float* r11 = ic + (z1 + y1) * in[2];
        float* orow = oc + (oz * out[1] + oy) * out[2];
        for (int64_t ox = 0; ox < out[2]; ++ox) {
          const int64_t x0 = ax[2].i0[ox], x1 = ax[2].i1[ox];
          const float wx1 = ax[2].w1[ox], wx0 = 1.0f - wx1;
          const float v00 = r00[x0] * wx0 + r00[x1] * wx1;
          const float v01 = r01[x0] * wx0 + r01[x1] * wx1;
          const float v10 = r10[x0] * wx0 + r10[x1] * wx1;
          const float v11 = r11[x0] * wx0 + r11[x1] * wx1;
          orow[ox] = wz0 * (wy0 * v00 + wy1 * v01) + wz1 * (wy0 * v10 + wy1 * v11);
        }
      }
    }
  }

  Tape* tape = Tape::active();
  if (tape && tracks_grad(input)) {
    auto ii = input.impl, oi = result.impl;
    tape->record("upsample_linear", {input}, result, [=]() {
      if (oi->grad.empty()) return;
      float* gin = grad_buffer(ii.get());
      const float* gout = oi->grad.data();
      for (int64_t bc = 0; bc < batch * chans; ++bc) {
        float* gc = gin + bc * in_vol;
        const float* go = gout + bc * out_vol;
        for (int64_t oz = 0; oz < out[0]; ++oz) {
          const int64_t z0 = ax[0].i0[oz] * in[1], z1 = ax[0].i1[oz] * in[1];
          const float wz1 = ax[0].w1[oz], wz0 = 1.0f - wz1;
          for (int64_t oy = 0; oy < out[1]; ++oy) {
            const int64_t y0 = ax[1].i0[oy], y1 = ax[1].i1[oy];
            const float wy1 = ax[1].w1[oy], wy0 = 1.0f - wy1;
            const int64_t b00 = (z0 + y0) * in[2], b01 = (z0 + y1) * in[2];
            const int64_t b10 = (z1 + y0) * in[2], b11 = (z1 + y1) * in[2];
            const float* grow = go + (oz * out[1] + oy) * out[2];
            for (int64_t ox = 0; ox < out[2]; ++ox) {
              const int64_t x0 = ax[2].i0[ox], x1 = ax[2].i1[ox];
              const float wx1 = ax[2].w1[ox], wx0 = 1.0f - wx1;
              const float g = grow[ox];
              gc[b00 + x0] += g * wz0 * wy0 * wx0;
              gc[b00 + x1] += g * wz0 * wy0 * wx1;
              gc[b01 + x0] += g * wz0 * wy1 * wx0;
              gc[b01 + x1] += g * wz0 * wy1 * wx1;
              gc[b10 + x0] += g * wz1 * wy0 * wx0;
              gc[b10 + x1] += g * wz1 * wy0 * wx1;
              gc[b11 + x0] += g * wz1 * wy1 * wx0;
              gc[b11 + x1] += g * wz1 * wy1 * wx1;
            }
          }
        }
      }
    });
  }
  return result;
}

Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
    throw std::invalid_argument("linear: expected input[B,F], weight[O,F], bias[O]");
  const int64_t batch = input.dim(0), feat = input.dim(1), outf = weight.dim(0);
  if (weight.dim(1) != feat || bias.dim(0) != outf)
    throw std::invalid_argument("linear: shape mismatch input " + shape_str(input.shape()) + " weight " +
                                shape_str(weight.shape()) + " bias " + shape_str(bias.shape()));
  Tensor out(Shape{batch, outf});
  const float* x = input.data();
  const float* w = weight.data();
  float* y = out.data();
  for (int64_t b = 0; b < batch; ++b) {
    for (int64_t o = 0; o < outf; ++o) {
      double acc = bias.data()[o];
      const float* xr = x + b * feat;
      const float* wr = w + o * feat;
      for (int64_t f = 0; f < feat; ++f) acc += double(xr[f]) * double(wr[f]);
      y[b * outf + o] = static_cast<float>(acc);
    }
  }
  Tape* tape = Tape::active();
  if (tape && (tracks_grad(input) || tracks_grad(weight) || tracks_grad(bias))) {
    auto ii = input.impl, wi = weight.impl, bi = bias.impl, oi = out.impl;
    const bool need_in = tracks_grad(input), need_w = tracks_grad(weight), need_b = tracks_grad(bias);
    tape->record("linear", {input, weight, bias}, out, [=]() {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      if (need_in) {
        float* gx = grad_buffer(ii.get());
        for (int64_t b = 0; b < batch; ++b)
          for (int64_t o = 0; o < outf; ++o) {
            const float gv = g[b * outf + o];
            const float* wr = wi->data.data() + o * feat;
            float* gxr = gx + b * feat;
            for (int64_t f = 0; f < feat; ++f) gxr[f] += gv * wr[f];
          }
      }
      if (need_w) {
        float* gw = grad_buffer(wi.get());
        for (int64_t o = 0; o < outf; ++o)
          for (int64_t f = 0; f < feat; ++f) {
            double acc = 0.0;
            for (int64_t b = 0; b < batch; ++b)
              acc += double(g[b * outf + o]) * double(ii->data[b * feat + f]);
            gw[o * feat + f] += static_cast<float>(acc);
          }
      }
      if (need_b) {
        float* gb = grad_buffer(bi.get());
        for (int64_t o = 0; o < outf; ++o) {
          double acc = 0.0;
          for (int64_t b = 0; b < batch; ++b) acc += g[b * outf + o];
          gb[o] += static_cast<float>(acc);
        }
      }
    });
  }
  return out;
}

Tensor activation(const Tensor& input, Act kind, float alpha) {
  if (!input.defined()) throw std::invalid_argument("activation: undefined input");
  if (kind == Act::leaky_relu && (alpha <= 0.0f || alpha >= 1.0f))
    throw std::invalid_argument("activation: leaky_relu alpha must be in (0,1)");
  Tensor out(input.shape());
  const float* x = input.data();
  float* y = out.data();
  const int64_t n = input.numel();
  switch (kind) {
    case Act::relu:
      for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
      break;
    case Act::leaky_relu:
      for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : alpha * x[i];
      break;
    case Act::sigmoid:
      for (int64_t i = 0; i < n; ++i) y[i] = 1.0f / (1.0f + std::exp(-x[i]));
      break;
    case Act::tanh:
      for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
      break;
  }
  Tape* tape = Tape::active();
  if (tape && tracks_grad(input)) {
    auto ii = input.impl, oi = out.impl;
    tape->record("activation", {input}, out, [=]() {
      if (oi->grad.empty()) return;
      float* gx = grad_buffer(ii.get());
      const float* g = oi->grad.data();
      const float* yv = oi->data.data();
      switch (kind) {
        case Act::relu:
          for (int64_t i = 0; i < n; ++i) gx[i] += yv[i] > 0.0f ? g[i] : 0.0f;
          break;
        case Act::leaky_relu:
          for (int64_t i = 0; i < n; ++i) gx[i] += yv[i] > 0.0f ? g[i] : alpha * g[i];
          break;
        case Act::sigmoid:
          for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * yv[i] * (1.0f - yv[i]);
          break;
        case Act::tanh:
          for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0f - yv[i] * yv[i]);
          break;
      }
    });
  }
  return out;
}

Tensor instance_norm(const Tensor& input, float eps) {
  if (input.rank() < 3) throw std::invalid_argument("instance_norm: expected [B,C,spatial...]");
  const int64_t groups = input.dim(0) * input.dim(1);
  const int64_t n = input.numel() / groups;
  if (n < 2) throw std::invalid_argument("instance_norm: degenerate spatial size " + std::to_string(n));
  Tensor out(input.shape());
  std::vector<float> inv_std(static_cast<size_t>(groups));
  const float* x = input.data();
  float* y = out.data();
  for (int64_t g = 0; g < groups; ++g) {
    const float* xs = x + g * n;
    double mean = 0.0;
    for (int64_t i = 0; i < n; ++i) mean += xs[i];
    mean /= double(n);
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      const double d = xs[i] - mean;
      var += d * d;
    }
    var /= double(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(g)] = static_cast<float>(inv);
    float* ys = y + g * n;
    for (int64_t i = 0; i < n; ++i) ys[i] = static_cast<float>((xs[i] - mean) * inv);
  }
  Tape* tape = Tape::active();
  if (tape && tracks_grad(input)) {
    auto ii = input.impl, oi = out.impl;
    tape->record("instance_norm", {input}, out, [=]() {
      if (oi->grad.empty()) return;
      float* gx = grad_buffer(ii.get());
      const float* g = oi->grad.data();
      const float* yh = oi->data.data();
      for (int64_t gr = 0; gr < groups; ++gr) {
        const float* gs = g + gr * n;
        const float* ys = yh + gr * n;
        double gmean = 0.0, gymean = 0.0;
        for (int64_t i = 0; i < n; ++i) {
          gmean += gs[i];
          gymean += double(gs[i]) * double(ys[i]);
        }
        gmean /= double(n);
        gymean /= double(n);
        const float inv = inv_std[static_cast<size_t>(gr)];
        float* gxs = gx + gr * n;
        for (int64_t i = 0; i < n; ++i)
          gxs[i] += inv * static_cast<float>(double(gs[i]) - gmean - double(ys[i]) * gymean);
      }
    });
  }
  return out;
}

Tensor reduce(const Tensor& input, Reduce kind) {
  if (!input.defined() || input.numel() == 0) throw std::invalid_argument("reduce: empty tensor");
  const float* x = input.data();
  const int64_t n = input.numel();
  double acc = 0.0;
  switch (kind) {
    case Reduce::sum:
    case Reduce::mean:
      for (int64_t i = 0; i < n; ++i) acc += x[i];
      if (kind == Reduce::mean) acc /= double(n);
      break;
    case Reduce::l1:
      for (int64_t i = 0; i < n; ++i) acc += std::abs(double(x[i]));
      acc /= double(n);
      break;
    case Reduce::sumsq:
      for (int64_t i = 0; i < n; ++i) acc += double(x[i]) * double(x[i]);
      break;
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  Tape* tape = Tape::active();
  if (tape && tracks_grad(input)) {
    auto ii = input.impl, oi = out.impl;
    tape->record("reduce", {input}, out, [=]() {
      if (oi->grad.empty()) return;
      const float g = oi->grad[0];
      float* gx = grad_buffer(ii.get());
      const float* xv = ii->data.data();
      switch (kind) {
        case Reduce::sum:
          for (int64_t i = 0; i < n; ++i) gx[i] += g;
          break;
        case Reduce::mean: {
          const float s = g / float(n);
          for (int64_t i = 0; i < n; ++i) gx[i] += s;
          break;
        }
        case Reduce::l1: {
          const float s = g / float(n);
          for (int64_t i = 0; i < n; ++i)
            gx[i] += xv[i] > 0.0f ? s : (xv[i] < 0.0f ? -s : 0.0f);
          break;
        }
        case Reduce::sumsq:
          for (int64_t i = 0; i < n; ++i) gx[i] += g * 2.0f * xv[i];
          break;
      }
    });
  }
  return out;
}

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  check_same_shape(a, b, name);
  Tensor out(a.shape());
  const int64_t n = a.numel();
  fwd(a.data(), b.data(), out.data(), n);
  Tape* tape = Tape::active();
  if (tape && (tracks_grad(a) || tracks_grad(b))) {
    auto ai = a.impl, bi = b.impl, oi = out.impl;
    const bool na = tracks_grad(a), nb = tracks_grad(b);
    tape->record(name, {a, b}, out, [=]() {
      if (oi->grad.empty()) return;
      bwd(ai, bi, oi, na, nb, n);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b,
      [](const float* x, const float* y, float* o, int64_t n) {
        for (int64_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
      },
      [](auto ai, auto bi, auto oi, bool na, bool nb, int64_t n) {
        const float* g = oi->grad.data();
        if (na) {
          float* ga = grad_buffer(ai.get());
          for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (nb) {
          float* gb = grad_buffer(bi.get());
          for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
        }
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b,
      [](const float* x, const float* y, float* o, int64_t n) {
        for (int64_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
      },
      [](auto ai, auto bi, auto oi, bool na, bool nb, int64_t n) {
        const float* g = oi->grad.data();
        if (na) {
          float* ga = grad_buffer(ai.get());
          for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
        }
        if (nb) {
          float* gb = grad_buffer(bi.get());
          for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
        }
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b,
      [](const float* x, const float* y, float* o, int64_t n) {
        for (int64_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
      },
      [](auto ai, auto bi, auto oi, bool na, bool nb, int64_t n) {
        const float* g = oi->grad.data();
        if (na) {
          float* ga = grad_buffer(ai.get());
          const float* yv = bi->data.data();
          for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * yv[i];
        }
        if (nb) {
          float* gb = grad_buffer(bi.get());
          const float* xv = ai->data.data();
          for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * xv[i];
        }
      });
}

Tensor scale(const Tensor& a, float c) {
  Tensor out(a.shape());
  const float* x = a.data();
  float* y = out.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) y[i] = c * x[i];
  Tape* tape = Tape::active();
  if (tape && tracks_grad(a)) {
    auto ai = a.impl, oi = out.impl;
    tape->record("scale", {a}, out, [=]() {
      if (oi->grad.empty()) return;
      float* ga = grad_buffer(ai.get());
      const float* g = oi->grad.data();
      for (int64_t i = 0; i < n; ++i) ga[i] += c * g[i];
    });
  }
  return out;
}

Tensor reshape(const Tensor& input, Shape shape) {
  if (shape_numel(shape) != input.numel())
    throw std::invalid_argument("reshape: " + shape_str(input.shape()) + " to " + shape_str(shape) +
                                " changes element count");
  Tensor out(std::move(shape), input.impl->data);
  Tape* tape = Tape::active();
  if (tape && tracks_grad(input)) {
    auto ii = input.impl, oi = out.impl;
    tape->record("reshape", {input}, out, [=]() {
      if (oi->grad.empty()) return;
      float* ga = grad_buffer(ii.get());
      const float* g = oi->grad.data();
      for (size_t i = 0; i < oi->grad.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != b.rank() || a.rank() < 3)
    throw std::invalid_argument("concat_channels: rank mismatch");
  if (a.dim(0) != b.dim(0) || a.spatial_shape() != b.spatial_shape())
    throw std::invalid_argument("concat_channels: batch/spatial mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int64_t batch = a.dim(0);
  const int64_t ca = a.dim(1), cb = b.dim(1);
  const int64_t vol = shape_numel(a.spatial_shape());
  Shape oshape = a.shape();
  oshape[1] = ca + cb;
  Tensor out(oshape);
  for (int64_t bt = 0; bt < batch; ++bt) {
    std::memcpy(out.data() + bt * (ca + cb) * vol, a.data() + bt * ca * vol, sizeof(float) * ca * vol);
    std::memcpy(out.data() + (bt * (ca + cb) + ca) * vol, b.data() + bt * cb * vol, sizeof(float) * cb * vol);
  }
  Tape* tape = Tape::active();
  if (tape && (tracks_grad(a) || tracks_grad(b))) {
    auto ai = a.impl, bi = b.impl, oi = out.impl;
    const bool na = tracks_grad(a), nb = tracks_grad(b);
    tape->record("concat_channels", {a, b}, out, [=]() {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      for (int64_t bt = 0; bt < batch; ++bt) {
        if (na) {
          float* ga = grad_buffer(ai.get()) + bt * ca * vol;
          const float* gs = g + bt * (ca + cb) * vol;
          for (int64_t i = 0; i < ca * vol; ++i) ga[i] += gs[i];
        }
        if (nb) {
          float* gb = grad_buffer(bi.get()) + bt * cb * vol;
          const float* gs = g + (bt * (ca + cb) + ca) * vol;
          for (int64_t i = 0; i < cb * vol; ++i) gb[i] += gs[i];
        }
      }
    });
  }
  return out;
}

Tensor spatial_mean(const Tensor& input) {
  if (input.rank() < 3) throw std::invalid_argument("spatial_mean: expected [B,C,spatial...]");
  const int64_t groups = input.dim(0) * input.dim(1);
  const int64_t n = input.numel() / groups;
  Tensor out(Shape{input.dim(0), input.dim(1)});
  const float* x = input.data();
  for (int64_t g = 0; g < groups; ++g) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += x[g * n + i];
    out.data()[g] = static_cast<float>(acc / double(n));
  }
  Tape* tape = Tape::active();
  if (tape && tracks_grad(input)) {
    auto ii = input.impl, oi = out.impl;
    tape->record("spatial_mean", {input}, out, [=]() {
      if (oi->grad.empty()) return;
      float* gx = grad_buffer(ii.get());
      for (int64_t g = 0; g < groups; ++g) {
        const float s = oi->grad[static_cast<size_t>(g)] / float(n);
        for (int64_t i = 0; i < n; ++i) gx[g * n + i] += s;
      }
    });
  }
  return out;
}

Tensor smoothness_penalty(const Tensor& field) {
  if (field.rank() < 3) throw std::invalid_argument("smoothness_penalty: expected [B,C,spatial...]");
  const int sr = field.spatial_rank();
  const Shape& s = field.shape();
  // per-axis element stride and extent
  std::vector<int64_t> stride(s.size());
  int64_t acc_stride = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    stride[static_cast<size_t>(i)] = acc_stride;
    acc_stride *= s[static_cast<size_t>(i)];
  }
  const int64_t n = field.numel();
  int64_t total_diffs = 0;
  for (int d = 0; d < sr; ++d) {
    const int64_t extent = s[static_cast<size_t>(2 + d)];
    total_diffs += n / extent * (extent - 1);
  }
  if (total_diffs == 0) throw std::invalid_argument("smoothness_penalty: no spatial differences");

  const float* x = field.data();
  double acc = 0.0;
  for (int d = 0; d < sr; ++d) {
    const int64_t inner = stride[static_cast<size_t>(2 + d)];
    const int64_t extent = s[static_cast<size_t>(2 + d)];
    const int64_t block = extent * inner;
    for (int64_t base = 0; base < n; base += block) {
      const int64_t span = (extent - 1) * inner;
      for (int64_t j = 0; j < span; ++j) {
        const double diff = double(x[base + j + inner]) - double(x[base + j]);
        acc += diff * diff;
      }
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(acc / double(total_diffs)));
  Tape* tape = Tape::active();
  if (tape && tracks_grad(field)) {
    auto fi = field.impl, oi = out.impl;
    tape->record("smoothness_penalty", {field}, out, [=]() {
      if (oi->grad.empty()) return;
      const float g = oi->grad[0];
      float* gx = grad_buffer(fi.get());
      const float* xv = fi->data.data();
      const float scale2 = 2.0f * g / float(total_diffs);
      for (int d = 0; d < sr; ++d) {
        const int64_t inner = stride[static_cast<size_t>(2 + d)];
        const int64_t extent = s[static_cast<size_t>(2 + d)];
        const int64_t block = extent * inner;
        for (int64_t base = 0; base < n; base += block) {
          const int64_t span = (extent - 1) * inner;
          for (int64_t j = 0; j < span; ++j) {
            const float diff = xv[base + j + inner] - xv[base + j];
            gx[base + j + inner] += scale2 * diff;
            gx[base + j] -= scale2 * diff;
          }
        }
      }
    });
  }
  return out;
}

double finite_diff_check(const std::function<Tensor(const std::vector<Tensor>&)>& op,
                         std::vector<Tensor> inputs, double step) {
  if (step <= 0.0) throw std::invalid_argument("finite_diff_check: step must be positive");
  std::vector<bool> saved_flags;
  for (Tensor& t : inputs) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.impl->grad.clear();
  }
  std::vector<std::vector<float>> analytic;
  {
    Tape tape;
    Tensor out = op(inputs);
    if (out.numel() != 1)
      throw std::invalid_argument("finite_diff_check: closure must produce a scalar");
    tape.backward(out);
  }
  for (Tensor& t : inputs)
    analytic.push_back(t.has_grad() ? t.impl->grad : std::vector<float>(t.impl->data.size(), 0.0f));

  double max_rel = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    for (int64_t i = 0; i < t.numel(); ++i) {
      const float keep = t.data()[i];
      t.data()[i] = static_cast<float>(keep + step);
      const double f_plus = op(inputs).item();
      t.data()[i] = static_cast<float>(keep - step);
      const double f_minus = op(inputs).item();
      t.data()[i] = keep;
      const double fd = (f_plus - f_minus) / (2.0 * step);
      const double an = analytic[k][static_cast<size_t>(i)];
      const double err = std::abs(an - fd);
      const double rel = err / std::max({std::abs(an), std::abs(fd), 0.01});
      if (rel > max_rel) max_rel = rel;
    }
  }
  for (size_t k = 0; k < inputs.size(); ++k) {
    inputs[k].set_requires_grad(saved_flags[k]);
    inputs[k].impl->grad.clear();
  }
  return max_rel;
}

}  // namespace fire
