#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "qdmsim/errors.hpp"
#include "qdmsim/image.hpp"
#include "qdmsim/latent.hpp"
#include "qdmsim/rng.hpp"

namespace qdmsim {

template <class T>
struct Tensor {
  int h = 0, w = 0, c = 0;
  std::vector<T> v;
  Tensor() = default;
  Tensor(int h_, int w_, int c_)
      : h(h_), w(w_), c(c_),
        v(static_cast<std::size_t>(h_) * w_ * c_, T{}) {}
  std::size_t size() const { return v.size(); }
  T& at(int i, int j, int ch) {
    return v[(static_cast<std::size_t>(i) * w + j) * c + ch];
  }
  T at(int i, int j, int ch) const {
    return v[(static_cast<std::size_t>(i) * w + j) * c + ch];
  }
};

template <class T>
Tensor<T> tensor_from_image(const VectorFieldImage& img) {
  Tensor<T> t(img.height, img.width, img.channels);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    t.v[i] = static_cast<T>(img.data[i]);
  return t;
}

// ---------------------------------------------------------------------------
// Architecture description
// ---------------------------------------------------------------------------

enum class ArchOp { Conv, Pool, Dense };

struct ArchLayer {
  ArchOp op;
  int kernel = 3;   // Conv
  int filters = 8;  // Conv
  int window = 2;   // Pool
  int units = 0;    // Dense
};

struct Architecture {
  std::vector<ArchLayer> encoder;  // decoder is the mirror
};

/// conv(3x3,8) -> pool -> conv(3x3,16) -> pool -> fc(64) -> fc(latent)
inline Architecture default_architecture(int latent = 4) {
  Architecture a;
  a.encoder = {{ArchOp::Conv, 3, 8, 0, 0},   {ArchOp::Pool, 0, 0, 2, 0},
               {ArchOp::Conv, 3, 16, 0, 0},  {ArchOp::Pool, 0, 0, 2, 0},
               {ArchOp::Dense, 0, 0, 0, 64}, {ArchOp::Dense, 0, 0, 0, latent}};
  return a;
}

/// Single conv layer + smaller fully connected pair, for the stronger
/// TrustHub-style signatures.
inline Architecture trusthub_architecture(int latent = 4) {
  Architecture a;
  a.encoder = {{ArchOp::Conv, 3, 8, 0, 0},
               {ArchOp::Pool, 0, 0, 2, 0},
               {ArchOp::Dense, 0, 0, 0, 32},
               {ArchOp::Dense, 0, 0, 0, latent}};
  return a;
}

enum class LayerKind : std::uint32_t {
  Conv = 0,
  Relu = 1,
  MaxPool = 2,
  Dense = 3,
  Upsample = 4,
  Reshape = 5,
};

/// One resolved stage of the network with fixed input/output shapes.
struct LayerDesc {
  LayerKind kind;
  int in_h = 0, in_w = 0, in_c = 0;
  int out_h = 0, out_w = 0, out_c = 0;
  int kernel = 0;  // Conv
  int window = 0;  // MaxPool / Upsample
};

template <class T>
struct AutoencoderModel {
  std::vector<LayerDesc> layers;          // encoder then decoder
  std::vector<std::vector<T>> weights;    // per layer (empty if none)
  std::vector<std::vector<T>> biases;
  std::size_t encoder_end = 0;  // layers [0, encoder_end) form the encoder
  int latent_dim = 0;
  int input_h = 0, input_w = 0, input_c = 0;
  std::uint64_t init_seed = 0;
  bool latent_width_warning = false;  // latent != 4 accepted but flagged

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      n += weights[l].size() + biases[l].size();
    return n;
  }
};

namespace detail {

inline std::size_t flat(const LayerDesc& d) {
  return static_cast<std::size_t>(d.in_h) * d.in_w * d.in_c;
}

template <class T>
void append_layer(AutoencoderModel<T>& m, LayerDesc d) {
  m.layers.push_back(d);
  m.weights.emplace_back();
  m.biases.emplace_back();
  if (d.kind == LayerKind::Conv) {
    m.weights.back().resize(static_cast<std::size_t>(d.out_c) * d.in_c *
                            d.kernel * d.kernel);
    m.biases.back().resize(static_cast<std::size_t>(d.out_c));
  } else if (d.kind == LayerKind::Dense) {
    m.weights.back().resize(flat(d) * static_cast<std::size_t>(d.out_c));
    m.biases.back().resize(static_cast<std::size_t>(d.out_c));
  }
}

}  // namespace detail

/// Resolves the encoder chain against the input shape, mirrors it into the
/// decoder, and initializes all weights with the scaled-uniform fan-in rule,
/// deterministically from the seed.
template <class T = float>
AutoencoderModel<T> autoencoder_init(const Architecture& arch, int in_h,
                                     int in_w, int in_c, std::uint64_t seed) {
  if (arch.encoder.empty() || arch.encoder.back().op != ArchOp::Dense)
    throw architecture_error("encoder must end in a dense latent layer");
  AutoencoderModel<T> m;
  m.input_h = in_h;
  m.input_w = in_w;
  m.input_c = in_c;
  m.init_seed = seed;

  int h = in_h, w = in_w, c = in_c;
  bool seen_dense = false;
  std::vector<std::pair<ArchLayer, std::array<int, 3>>> spatial;  // + in shape
  std::vector<std::array<int, 2>> dense_dims;                     // {in, out}
  std::array<int, 3> preflat{0, 0, 0};
  for (std::size_t i = 0; i < arch.encoder.size(); ++i) {
    const ArchLayer& al = arch.encoder[i];
    if (al.op == ArchOp::Conv) {
      if (seen_dense) throw architecture_error("conv after dense");
      if (al.kernel < 1 || al.kernel % 2 == 0)
        throw architecture_error("conv kernel must be odd");
      if (al.kernel > h || al.kernel > w)
        throw architecture_error("conv kernel larger than its input");
      if (al.filters < 1) throw architecture_error("conv needs filters");
      spatial.push_back({al, {h, w, c}});
      LayerDesc d{LayerKind::Conv, h, w, c, h, w, al.filters, al.kernel, 0};
      detail::append_layer(m, d);
      detail::append_layer(
          m, LayerDesc{LayerKind::Relu, h, w, al.filters, h, w, al.filters});
      c = al.filters;
    } else if (al.op == ArchOp::Pool) {
      if (seen_dense) throw architecture_error("pool after dense");
      if (al.window < 2) throw architecture_error("pool window must be >= 2");
      if (h % al.window || w % al.window)
        throw architecture_error("pool window does not divide the input");
      spatial.push_back({al, {h, w, c}});
      LayerDesc d{LayerKind::MaxPool, h, w, c, h / al.window, w / al.window,
                  c, 0, al.window};
      detail::append_layer(m, d);
      h /= al.window;
      w /= al.window;
    } else {
      if (al.units < 1) throw architecture_error("dense needs units");
      if (!seen_dense) preflat = {h, w, c};
      dense_dims.push_back({h * w * c, al.units});
      LayerDesc d{LayerKind::Dense, h, w, c, 1, 1, al.units};
      detail::append_layer(m, d);
      const bool is_latent = (i + 1 == arch.encoder.size());
      if (!is_latent)
        detail::append_layer(m, LayerDesc{LayerKind::Relu, 1, 1, al.units, 1,
                                          1, al.units});
      h = 1;
      w = 1;
      c = al.units;
      seen_dense = true;
    }
  }
  m.encoder_end = m.layers.size();
  m.latent_dim = c;
  m.latent_width_warning = (m.latent_dim != 4);

  // Mirrored decoder: dense stack reversed, then reshape, then the spatial
  // stack reversed (pool -> nearest-neighbor upsample, conv -> conv back to
  // that conv's input channel count). The final conv is linear.
  for (std::size_t k = dense_dims.size(); k > 0; --k) {
    const int units = dense_dims[k - 1][0];
    LayerDesc d{LayerKind::Dense, 1, 1, c, 1, 1, units};
    detail::append_layer(m, d);
    if (k > 1 || !spatial.empty())
      detail::append_layer(m,
                           LayerDesc{LayerKind::Relu, 1, 1, units, 1, 1, units});
    c = units;
  }
  if (!spatial.empty()) {
    detail::append_layer(m, LayerDesc{LayerKind::Reshape, 1, 1, c, preflat[0],
                                      preflat[1], preflat[2]});
    h = preflat[0];
    w = preflat[1];
    c = preflat[2];
    for (std::size_t k = spatial.size(); k > 0; --k) {
      const auto& [al, shape] = spatial[k - 1];
      if (al.op == ArchOp::Pool) {
        detail::append_layer(m, LayerDesc{LayerKind::Upsample, h, w, c,
                                          h * al.window, w * al.window, c, 0,
                                          al.window});
        h *= al.window;
        w *= al.window;
      } else {
        const int target_c = shape[2];
        detail::append_layer(m, LayerDesc{LayerKind::Conv, h, w, c, h, w,
                                          target_c, al.kernel, 0});
        c = target_c;
        if (k > 1)
          detail::append_layer(m,
                               LayerDesc{LayerKind::Relu, h, w, c, h, w, c});
      }
    }
  }
  if (h != in_h || w != in_w || c != in_c)
    throw architecture_error("decoder does not reproduce the input shape");

  // Scaled uniform fan-in initialization, biases zero.
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    if (m.weights[l].empty()) continue;
    const LayerDesc& d = m.layers[l];
    const std::size_t fan_in = d.kind == LayerKind::Conv
                                   ? static_cast<std::size_t>(d.in_c) *
                                         d.kernel * d.kernel
                                   : detail::flat(d);
    const double limit = std::sqrt(3.0 / static_cast<double>(fan_in));
    Rng rng = Rng(seed).derive("layer", l);
    for (T& x : m.weights[l])
      x = static_cast<T>(rng.next_uniform(-limit, limit));
  }
  return m;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace detail {

/// Per-worker scratch; activations[l] is the input of layer l.
template <class T>
struct Workspace {
  std::vector<Tensor<T>> acts;              // size layers+1
  std::vector<std::vector<int>> pool_argmax;  // per layer
  std::vector<std::vector<T>> col;            // im2col buffer per conv layer
  std::vector<T> scratch_a;                   // channel-major conv buffers
  std::vector<T> scratch_b;
};

template <class T>
void ensure_workspace(const AutoencoderModel<T>& m, Workspace<T>& ws) {
  if (ws.acts.size() == m.layers.size() + 1) return;
  ws.acts.assign(m.layers.size() + 1, {});
  ws.pool_argmax.assign(m.layers.size(), {});
  ws.col.assign(m.layers.size(), {});
  ws.acts[0] = Tensor<T>(m.input_h, m.input_w, m.input_c);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const LayerDesc& d = m.layers[l];
    ws.acts[l + 1] = Tensor<T>(d.out_h, d.out_w, d.out_c);
    if (d.kind == LayerKind::MaxPool)
      ws.pool_argmax[l].resize(static_cast<std::size_t>(d.out_h) * d.out_w *
                               d.out_c);
    if (d.kind == LayerKind::Conv)
      ws.col[l].resize(static_cast<std::size_t>(d.in_c) * d.kernel * d.kernel *
                       d.out_h * d.out_w);
  }
}

template <class T>
void im2col(const Tensor<T>& x, int kernel, std::vector<T>& col) {
  const int pad = kernel / 2;
  const int hw = x.h * x.w;
  std::size_t r = 0;
  for (int ch = 0; ch < x.c; ++ch)
    for (int ki = 0; ki < kernel; ++ki)
      for (int kj = 0; kj < kernel; ++kj, ++r) {
        T* dst = col.data() + r * hw;
        const int dy = ki - pad, dx = kj - pad;
        for (int i = 0; i < x.h; ++i) {
          const int si = i + dy;
          T* row = dst + static_cast<std::size_t>(i) * x.w;
          if (si < 0 || si >= x.h) {
            std::fill(row, row + x.w, T{});
            continue;
          }
          const T* src =
              x.v.data() + (static_cast<std::size_t>(si) * x.w) * x.c + ch;
          for (int j = 0; j < x.w; ++j) {
            const int sj = j + dx;
            row[j] = (sj < 0 || sj >= x.w)
                         ? T{}
                         : src[static_cast<std::size_t>(sj) * x.c];
          }
        }
      }
}

template <class T>
void conv_forward(const LayerDesc& d, const std::vector<T>& w,
                  const std::vector<T>& b, const Tensor<T>& x, Tensor<T>& y,
                  std::vector<T>& col, std::vector<T>& out) {
  im2col(x, d.kernel, col);
  const int hw = d.out_h * d.out_w;
  const std::size_t ckk =
      static_cast<std::size_t>(d.in_c) * d.kernel * d.kernel;
  // y(i,j,f) = b_f + sum_r w[f,r] * col[r, ij]
  out.resize(static_cast<std::size_t>(d.out_c) * hw);
  for (int f = 0; f < d.out_c; ++f) {
    T* yrow = out.data() + static_cast<std::size_t>(f) * hw;
    std::fill(yrow, yrow + hw, b[static_cast<std::size_t>(f)]);
    const T* wrow = w.data() + static_cast<std::size_t>(f) * ckk;
    for (std::size_t r = 0; r < ckk; ++r) {
      const T wv = wrow[r];
      const T* crow = col.data() + r * hw;
      for (int p = 0; p < hw; ++p) yrow[p] += wv * crow[p];
    }
  }
  for (int p = 0; p < hw; ++p)
    for (int f = 0; f < d.out_c; ++f)
      y.v[static_cast<std::size_t>(p) * d.out_c + f] =
          out[static_cast<std::size_t>(f) * hw + p];
}

template <class T>
void conv_backward(const LayerDesc& d, const std::vector<T>& w,
                   const Tensor<T>& gy, const std::vector<T>& col,
                   std::vector<T>& gw, std::vector<T>& gb, Tensor<T>& gx,
                   std::vector<T>& g, std::vector<T>& dcol) {
  const int hw = d.out_h * d.out_w;
  const std::size_t ckk =
      static_cast<std::size_t>(d.in_c) * d.kernel * d.kernel;
  g.resize(static_cast<std::size_t>(d.out_c) * hw);
  for (int p = 0; p < hw; ++p)
    for (int f = 0; f < d.out_c; ++f)
      g[static_cast<std::size_t>(f) * hw + p] =
          gy.v[static_cast<std::size_t>(p) * d.out_c + f];
  for (int f = 0; f < d.out_c; ++f) {
    const T* grow = g.data() + static_cast<std::size_t>(f) * hw;
    T acc{};
    for (int p = 0; p < hw; ++p) acc += grow[p];
    gb[static_cast<std::size_t>(f)] += acc;
    T* gwrow = gw.data() + static_cast<std::size_t>(f) * ckk;
    for (std::size_t r = 0; r < ckk; ++r) {
      const T* crow = col.data() + r * hw;
      T dot{};
      for (int p = 0; p < hw; ++p) dot += grow[p] * crow[p];
      gwrow[r] += dot;
    }
  }
  // dcol = W^T g, then scatter back to gx
  dcol.assign(ckk * static_cast<std::size_t>(hw), T{});
  for (int f = 0; f < d.out_c; ++f) {
    const T* grow = g.data() + static_cast<std::size_t>(f) * hw;
    const T* wrow = w.data() + static_cast<std::size_t>(f) * ckk;
    for (std::size_t r = 0; r < ckk; ++r) {
      const T wv = wrow[r];
      T* drow = dcol.data() + r * hw;
      for (int p = 0; p < hw; ++p) drow[p] += wv * grow[p];
    }
  }
  std::fill(gx.v.begin(), gx.v.end(), T{});
  const int pad = d.kernel / 2;
  std::size_t r = 0;
  for (int ch = 0; ch < d.in_c; ++ch)
    for (int ki = 0; ki < d.kernel; ++ki)
      for (int kj = 0; kj < d.kernel; ++kj, ++r) {
        const T* drow = dcol.data() + r * hw;
        const int dy = ki - pad, dx = kj - pad;
        for (int i = 0; i < d.in_h; ++i) {
          const int si = i + dy;
          if (si < 0 || si >= d.in_h) continue;
          for (int j = 0; j < d.in_w; ++j) {
            const int sj = j + dx;
            if (sj < 0 || sj >= d.in_w) continue;
            gx.v[(static_cast<std::size_t>(si) * d.in_w + sj) * d.in_c + ch] +=
                drow[static_cast<std::size_t>(i) * d.in_w + j];
          }
        }
      }
}

/// Runs layer l forward from ws.acts[l] into ws.acts[l+1].
template <class T>
void layer_forward(const AutoencoderModel<T>& m, std::size_t l,
                   Workspace<T>& ws) {
  const LayerDesc& d = m.layers[l];
  const Tensor<T>& x = ws.acts[l];
  Tensor<T>& y = ws.acts[l + 1];
  switch (d.kind) {
    case LayerKind::Conv:
      conv_forward(d, m.weights[l], m.biases[l], x, y, ws.col[l], ws.scratch_a);
      break;
    case LayerKind::Relu:
      for (std::size_t i = 0; i < x.v.size(); ++i)
        y.v[i] = x.v[i] > T{} ? x.v[i] : T{};
      break;
    case LayerKind::MaxPool: {
      const int win = d.window;
      std::size_t o = 0;
      for (int i = 0; i < d.out_h; ++i)
        for (int j = 0; j < d.out_w; ++j)
          for (int ch = 0; ch < d.out_c; ++ch, ++o) {
            int bi = i * win, bj = j * win;
            T best = x.at(bi, bj, ch);
            int arg = (bi * d.in_w + bj) * d.in_c + ch;
            for (int a = 0; a < win; ++a)
              for (int b = 0; b < win; ++b) {
                const T v = x.at(i * win + a, j * win + b, ch);
                if (v > best) {
                  best = v;
                  arg = ((i * win + a) * d.in_w + (j * win + b)) * d.in_c + ch;
                }
              }
            y.v[o] = best;
            ws.pool_argmax[l][o] = arg;
          }
      break;
    }
    case LayerKind::Dense: {
      const std::size_t in_n = flat(d);
      for (int u = 0; u < d.out_c; ++u) {
        const T* wrow = m.weights[l].data() + static_cast<std::size_t>(u) * in_n;
        T acc = m.biases[l][static_cast<std::size_t>(u)];
        for (std::size_t i = 0; i < in_n; ++i) acc += wrow[i] * x.v[i];
        y.v[static_cast<std::size_t>(u)] = acc;
      }
      break;
    }
    case LayerKind::Upsample: {
      const int win = d.window;
      for (int i = 0; i < d.out_h; ++i)
        for (int j = 0; j < d.out_w; ++j)
          for (int ch = 0; ch < d.out_c; ++ch)
            y.at(i, j, ch) = x.at(i / win, j / win, ch);
      break;
    }
    case LayerKind::Reshape:
      std::copy(x.v.begin(), x.v.end(), y.v.begin());
      break;
  }
}

/// Backpropagates grad (same shape as acts[l+1]) into gx (shape of acts[l]),
/// accumulating parameter gradients.
template <class T>
void layer_backward(const AutoencoderModel<T>& m, std::size_t l,
                    Workspace<T>& ws, const Tensor<T>& gy, Tensor<T>& gx,
                    std::vector<std::vector<T>>& gw,
                    std::vector<std::vector<T>>& gb) {
  const LayerDesc& d = m.layers[l];
  const Tensor<T>& x = ws.acts[l];
  switch (d.kind) {
    case LayerKind::Conv:
      conv_backward(d, m.weights[l], gy, ws.col[l], gw[l], gb[l], gx,
                    ws.scratch_a, ws.scratch_b);
      break;
    case LayerKind::Relu:
      for (std::size_t i = 0; i < x.v.size(); ++i)
        gx.v[i] = x.v[i] > T{} ? gy.v[i] : T{};
      break;
    case LayerKind::MaxPool:
      std::fill(gx.v.begin(), gx.v.end(), T{});
      for (std::size_t o = 0; o < gy.v.size(); ++o)
        gx.v[static_cast<std::size_t>(ws.pool_argmax[l][o])] += gy.v[o];
      break;
    case LayerKind::Dense: {
      const std::size_t in_n = flat(d);
      std::fill(gx.v.begin(), gx.v.end(), T{});
      for (int u = 0; u < d.out_c; ++u) {
        const T g = gy.v[static_cast<std::size_t>(u)];
        gb[l][static_cast<std::size_t>(u)] += g;
        const T* wrow = m.weights[l].data() + static_cast<std::size_t>(u) * in_n;
        T* gwrow = gw[l].data() + static_cast<std::size_t>(u) * in_n;
        for (std::size_t i = 0; i < in_n; ++i) {
          gwrow[i] += g * x.v[i];
          gx.v[i] += g * wrow[i];
        }
      }
      break;
    }
    case LayerKind::Upsample: {
      std::fill(gx.v.begin(), gx.v.end(), T{});
      const int win = d.window;
      for (int i = 0; i < d.out_h; ++i)
        for (int j = 0; j < d.out_w; ++j)
          for (int ch = 0; ch < d.out_c; ++ch)
            gx.at(i / win, j / win, ch) += gy.at(i, j, ch);
      break;
    }
    case LayerKind::Reshape:
      std::copy(gy.v.begin(), gy.v.end(), gx.v.begin());
      break;
  }
}

template <class T>
void forward_all(const AutoencoderModel<T>& m, const Tensor<T>& input,
                 Workspace<T>& ws) {
  ensure_workspace(m, ws);
  std::copy(input.v.begin(), input.v.end(), ws.acts[0].v.begin());
  for (std::size_t l = 0; l < m.layers.size(); ++l) layer_forward(m, l, ws);
}

/// MSE of the reconstruction against the input, forward already done.
template <class T>
double reconstruction_mse(const Workspace<T>& ws) {
  const auto& x = ws.acts.front().v;
  const auto& y = ws.acts.back().v;
  double sse = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dv = static_cast<double>(y[i]) - static_cast<double>(x[i]);
    sse += dv * dv;
  }
  return sse / static_cast<double>(x.size());
}

/// Full forward + backward for one sample; parameter grads accumulate.
/// Returns the sample MSE. grad_scale multiplies the loss gradient (used for
/// batch averaging).
template <class T>
double sample_grads(const AutoencoderModel<T>& m, const Tensor<T>& input,
                    Workspace<T>& ws, std::vector<std::vector<T>>& gw,
                    std::vector<std::vector<T>>& gb, T grad_scale,
                    std::vector<Tensor<T>>& grad_stack) {
  forward_all(m, input, ws);
  const double mse = reconstruction_mse(ws);
  if (grad_stack.size() != m.layers.size() + 1) {
    grad_stack.assign(m.layers.size() + 1, {});
    grad_stack[0] = Tensor<T>(m.input_h, m.input_w, m.input_c);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      const LayerDesc& d = m.layers[l];
      grad_stack[l + 1] = Tensor<T>(d.out_h, d.out_w, d.out_c);
    }
  }
  Tensor<T>& gout = grad_stack.back();
  const T scale = grad_scale * static_cast<T>(2.0 / static_cast<double>(
                                                        ws.acts[0].v.size()));
  for (std::size_t i = 0; i < gout.v.size(); ++i)
    gout.v[i] = scale * (ws.acts.back().v[i] - ws.acts[0].v[i]);
  for (std::size_t l = m.layers.size(); l > 0; --l)
    layer_backward(m, l - 1, ws, grad_stack[l], grad_stack[l - 1], gw, gb);
  return mse;
}

}  // namespace detail

/// Deterministic forward pass through the encoder half.
template <class T>
LatentPoint autoencoder_encode(const AutoencoderModel<T>& m,
                               const VectorFieldImage& image,
                               int source_frame = -1) {
  if (image.height != m.input_h || image.width != m.input_w ||
      image.channels != m.input_c)
    throw shape_error("image shape does not match the model input");
  detail::Workspace<T> ws;
  detail::ensure_workspace(m, ws);
  const Tensor<T> in = tensor_from_image<T>(image);
  std::copy(in.v.begin(), in.v.end(), ws.acts[0].v.begin());
  for (std::size_t l = 0; l < m.encoder_end; ++l)
    detail::layer_forward(m, l, ws);
  LatentPoint p;
  p.source_frame = source_frame;
  const auto& z = ws.acts[m.encoder_end].v;
  p.coords.assign(z.begin(), z.end());
  return p;
}

template <class T>
double reconstruction_loss(const AutoencoderModel<T>& m,
                           const VectorFieldImage& image) {
  detail::Workspace<T> ws;
  detail::forward_all(m, tensor_from_image<T>(image), ws);
  return detail::reconstruction_mse(ws);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int max_epochs = 2000;
  int check_interval = 50;  // epochs between cluster checks
  int threads = 1;
};

enum class TrainStatus { MaxEpochs, EarlyStopClusters, Diverged };

struct TrainResult {
  TrainStatus status = TrainStatus::MaxEpochs;
  std::vector<double> loss_history;  // nonincreasing accepted losses
  int epochs_run = 0;
  int clusters_at_stop = 1;
};

/// Cluster hook: number of clusters in the latent set (knee-eps DBSCAN in the
/// shipped pipeline). Training stops early when it reports >= 2.
using ClusterHook = std::function<int(const std::vector<LatentPoint>&)>;

/// Mini-batch gradient descent with momentum on the reconstruction MSE.
/// The learning rate halves and the parameters revert whenever an epoch's
/// loss increases, so the recorded history is nonincreasing. Batches are a
/// fixed partition in sample order and gradients reduce over fixed chunks,
/// so results are identical for any thread count.
template <class T>
TrainResult autoencoder_train(AutoencoderModel<T>& model,
                              const std::vector<VectorFieldImage>& images,
                              const TrainConfig& cfg,
                              const ClusterHook& cluster_hook = {}) {
  if (images.empty()) throw shape_error("no training images");
  std::vector<Tensor<T>> samples;
  samples.reserve(images.size());
  for (const auto& img : images) {
    if (img.height != model.input_h || img.width != model.input_w ||
        img.channels != model.input_c)
      throw shape_error("training image shape mismatch");
    samples.push_back(tensor_from_image<T>(img));
  }

  const std::size_t n_layers = model.layers.size();
  auto zero_like_params = [&] {
    std::vector<std::vector<T>> g(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l)
      g[l].assign(model.weights[l].size(), T{});
    return g;
  };
  auto zero_like_biases = [&] {
    std::vector<std::vector<T>> g(n_layers);
    for (std::size_t l = 0; l < n_layers; ++l)
      g[l].assign(model.biases[l].size(), T{});
    return g;
  };

  std::vector<std::vector<T>> vel_w = zero_like_params();
  std::vector<std::vector<T>> vel_b = zero_like_biases();
  auto best_w = model.weights;
  auto best_b = model.biases;
  auto best_vw = vel_w;
  auto best_vb = vel_b;
  double best_loss = std::numeric_limits<double>::infinity();
  double lr = cfg.learning_rate;

  constexpr int kChunk = 4;  // fixed reduction granularity
  const int threads = std::max(1, cfg.threads);

  TrainResult result;
  std::vector<detail::Workspace<T>> ws(threads);
  std::vector<std::vector<Tensor<T>>> gstack(threads);
  const int max_chunks =
      static_cast<int>((std::min<std::size_t>(samples.size(),
                                              static_cast<std::size_t>(
                                                  cfg.batch_size)) +
                        kChunk - 1) /
                       kChunk);
  std::vector<std::vector<std::vector<T>>> cw(max_chunks), cb(max_chunks);
  for (int c = 0; c < max_chunks; ++c) {
    cw[c] = zero_like_params();
    cb[c] = zero_like_biases();
  }

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    double epoch_sse = 0;
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(samples.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t bsz = stop - start;
      const int n_chunks = static_cast<int>((bsz + kChunk - 1) / kChunk);
      std::vector<double> closs(n_chunks, 0.0);
      std::atomic<int> next{0};
      auto work = [&](int tid) {
        for (;;) {
          const int chunk = next.fetch_add(1);
          if (chunk >= n_chunks) break;
          for (auto& v : cw[chunk]) std::fill(v.begin(), v.end(), T{});
          for (auto& v : cb[chunk]) std::fill(v.begin(), v.end(), T{});
          const std::size_t lo = start + static_cast<std::size_t>(chunk) * kChunk;
          const std::size_t hi = std::min(stop, lo + kChunk);
          for (std::size_t s = lo; s < hi; ++s)
            closs[chunk] += detail::sample_grads(
                model, samples[s], ws[tid], cw[chunk], cb[chunk],
                static_cast<T>(1.0 / static_cast<double>(bsz)), gstack[tid]);
        }
      };
      if (threads == 1) {
        work(0);
      } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(work, t);
        for (auto& th : pool) th.join();
      }
      // Fixed-order reduction over chunks, then the momentum update.
      auto& gw = cw[0];
      auto& gb = cb[0];
      double batch_sse = closs[0];
      for (int chunk = 1; chunk < n_chunks; ++chunk) {
        for (std::size_t l = 0; l < n_layers; ++l) {
          for (std::size_t i = 0; i < gw[l].size(); ++i)
            gw[l][i] += cw[chunk][l][i];
          for (std::size_t i = 0; i < gb[l].size(); ++i)
            gb[l][i] += cb[chunk][l][i];
        }
        batch_sse += closs[chunk];
      }
      epoch_sse += batch_sse;
      const T mu = static_cast<T>(cfg.momentum);
      const T step = static_cast<T>(lr);
      for (std::size_t l = 0; l < n_layers; ++l) {
        for (std::size_t i = 0; i < gw[l].size(); ++i) {
          vel_w[l][i] = mu * vel_w[l][i] - step * gw[l][i];
          model.weights[l][i] += vel_w[l][i];
        }
        for (std::size_t i = 0; i < gb[l].size(); ++i) {
          vel_b[l][i] = mu * vel_b[l][i] - step * gb[l][i];
          model.biases[l][i] += vel_b[l][i];
        }
      }
    }
    const double epoch_loss = epoch_sse / static_cast<double>(samples.size());
    result.epochs_run = epoch + 1;

    if (!std::isfinite(epoch_loss)) {
      model.weights = best_w;  // carry the last good state
      model.biases = best_b;
      result.status = TrainStatus::Diverged;
      return result;
    }
    if (epoch_loss <= best_loss) {
      best_loss = epoch_loss;
      best_w = model.weights;
      best_b = model.biases;
      best_vw = vel_w;
      best_vb = vel_b;
    } else {
      model.weights = best_w;  // reject the epoch, damp the step
      model.biases = best_b;
      vel_w = best_vw;
      vel_b = best_vb;
      lr /= 2;
    }
    result.loss_history.push_back(best_loss);

    if (cluster_hook && cfg.check_interval > 0 &&
        (epoch + 1) % cfg.check_interval == 0) {
      std::vector<LatentPoint> latents;
      latents.reserve(images.size());
      for (std::size_t s = 0; s < images.size(); ++s)
        latents.push_back(
            autoencoder_encode(model, images[s], static_cast<int>(s)));
      const int clusters = cluster_hook(latents);
      if (clusters >= 2) {
        result.status = TrainStatus::EarlyStopClusters;
        result.clusters_at_stop = clusters;
        return result;
      }
      result.clusters_at_stop = clusters;
    }
  }
  result.status = TrainStatus::MaxEpochs;
  return result;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

namespace detail {

/// Activation pattern: every ReLU sign and pool argmax. Two forward passes
/// whose patterns differ straddle a non-differentiable kink.
template <class T>
std::vector<int> activation_pattern(const AutoencoderModel<T>& m,
                                    Workspace<T>& ws) {
  std::vector<int> pattern;
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    if (m.layers[l].kind == LayerKind::Relu)
      for (const T& v : ws.acts[l].v) pattern.push_back(v > T{} ? 1 : 0);
    else if (m.layers[l].kind == LayerKind::MaxPool)
      for (int a : ws.pool_argmax[l]) pattern.push_back(a);
  }
  return pattern;
}

}  // namespace detail

/// Compares analytic parameter gradients against central finite differences
/// on a deterministic parameter subsample spanning every parametrized layer.
/// Parameters whose +/-epsilon passes change any rectifier sign or pooling
/// choice are excluded. Double precision only.
inline double gradient_check(const AutoencoderModel<double>& model,
                             const VectorFieldImage& image, double epsilon,
                             int min_params = 200, std::uint64_t seed = 7) {
  AutoencoderModel<double> m = model;
  detail::Workspace<double> ws;
  std::vector<Tensor<double>> gstack;
  std::vector<std::vector<double>> gw, gb;
  gw.resize(m.layers.size());
  gb.resize(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    gw[l].assign(m.weights[l].size(), 0.0);
    gb[l].assign(m.biases[l].size(), 0.0);
  }
  const Tensor<double> input = tensor_from_image<double>(image);
  detail::sample_grads(m, input, ws, gw, gb, 1.0, gstack);

  std::vector<std::size_t> param_layers;
  for (std::size_t l = 0; l < m.layers.size(); ++l)
    if (!m.weights[l].empty()) param_layers.push_back(l);
  const int per_layer = static_cast<int>(
      (min_params + param_layers.size() - 1) / param_layers.size());

  double max_rel = 0;
  Rng rng = Rng(seed).derive("gradcheck");
  for (std::size_t l : param_layers) {
    const std::size_t nw = m.weights[l].size();
    for (int k = 0; k < per_layer; ++k) {
      // Bias entries ride along with index >= nw.
      const std::size_t total = nw + m.biases[l].size();
      const std::size_t idx = static_cast<std::size_t>(rng.next_below(total));
      double* slot = idx < nw ? &m.weights[l][idx] : &m.biases[l][idx - nw];
      const double saved = *slot;
      const double analytic =
          idx < nw ? gw[l][idx] : gb[l][idx - nw];

      *slot = saved + epsilon;
      detail::forward_all(m, input, ws);
      const double lp = detail::reconstruction_mse(ws);
      const auto pat_p = detail::activation_pattern(m, ws);
      *slot = saved - epsilon;
      detail::forward_all(m, input, ws);
      const double lm = detail::reconstruction_mse(ws);
      const auto pat_m = detail::activation_pattern(m, ws);
      *slot = saved;
      if (pat_p != pat_m) continue;  // kink straddled; excluded

      const double numeric = (lp - lm) / (2 * epsilon);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
    }
  }
  return max_rel;
}

inline AutoencoderModel<double> to_double(const AutoencoderModel<float>& m) {
  AutoencoderModel<double> d;
  d.layers = m.layers;
  d.encoder_end = m.encoder_end;
  d.latent_dim = m.latent_dim;
  d.input_h = m.input_h;
  d.input_w = m.input_w;
  d.input_c = m.input_c;
  d.init_seed = m.init_seed;
  d.latent_width_warning = m.latent_width_warning;
  d.weights.resize(m.weights.size());
  d.biases.resize(m.biases.size());
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    d.weights[l].assign(m.weights[l].begin(), m.weights[l].end());
    d.biases[l].assign(m.biases[l].begin(), m.biases[l].end());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Checkpoint: "QDMAE1\0", u32 version, input dims, resolved layer table,
// little-endian float32 parameter blob.
// ---------------------------------------------------------------------------

namespace detail {

inline void ck_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint32_t ck_read_u32(const std::string& s, std::size_t& pos) {
  if (pos + 4 > s.size()) throw io_error("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i]))
         << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const AutoencoderModel<float>& m) {
  std::string out;
  out.append("QDMAE1", 6);
  out.push_back('\0');
  detail::ck_u32(out, 1);  // format version
  detail::ck_u32(out, static_cast<std::uint32_t>(m.input_h));
  detail::ck_u32(out, static_cast<std::uint32_t>(m.input_w));
  detail::ck_u32(out, static_cast<std::uint32_t>(m.input_c));
  detail::ck_u32(out, static_cast<std::uint32_t>(m.encoder_end));
  detail::ck_u32(out, static_cast<std::uint32_t>(m.latent_dim));
  detail::ck_u32(out, static_cast<std::uint32_t>(m.layers.size()));
  for (const LayerDesc& d : m.layers) {
    detail::ck_u32(out, static_cast<std::uint32_t>(d.kind));
    for (int v : {d.in_h, d.in_w, d.in_c, d.out_h, d.out_w, d.out_c, d.kernel,
                  d.window})
      detail::ck_u32(out, static_cast<std::uint32_t>(v));
  }
  std::uint64_t count = 0;
  for (std::size_t l = 0; l < m.weights.size(); ++l)
    count += m.weights[l].size() + m.biases[l].size();
  detail::ck_u32(out, static_cast<std::uint32_t>(count & 0xffffffffu));
  detail::ck_u32(out, static_cast<std::uint32_t>(count >> 32));
  auto put_f32 = [&](float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    detail::ck_u32(out, v);
  };
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    for (float f : m.weights[l]) put_f32(f);
    for (float f : m.biases[l]) put_f32(f);
  }
  return out;
}

inline void save_checkpoint(const std::string& path,
                            const AutoencoderModel<float>& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw io_error("cannot open '" + path + "' for writing");
  const std::string bytes = encode_checkpoint(m);
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline AutoencoderModel<float> decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 7 || bytes.compare(0, 6, "QDMAE1") != 0 || bytes[6] != '\0')
    throw io_error("not a QDMAE1 checkpoint");
  std::size_t pos = 7;
  const std::uint32_t version = detail::ck_read_u32(bytes, pos);
  if (version != 1) throw io_error("unsupported checkpoint version");
  AutoencoderModel<float> m;
  m.input_h = static_cast<int>(detail::ck_read_u32(bytes, pos));
  m.input_w = static_cast<int>(detail::ck_read_u32(bytes, pos));
  m.input_c = static_cast<int>(detail::ck_read_u32(bytes, pos));
  m.encoder_end = detail::ck_read_u32(bytes, pos);
  m.latent_dim = static_cast<int>(detail::ck_read_u32(bytes, pos));
  const std::uint32_t n_layers = detail::ck_read_u32(bytes, pos);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    LayerDesc d;
    d.kind = static_cast<LayerKind>(detail::ck_read_u32(bytes, pos));
    int* fields[] = {&d.in_h, &d.in_w,  &d.in_c,   &d.out_h,
                     &d.out_w, &d.out_c, &d.kernel, &d.window};
    for (int* f : fields) *f = static_cast<int>(detail::ck_read_u32(bytes, pos));
    detail::append_layer(m, d);
  }
  const std::uint64_t lo = detail::ck_read_u32(bytes, pos);
  const std::uint64_t hi = detail::ck_read_u32(bytes, pos);
  const std::uint64_t count = lo | (hi << 32);
  if (count != m.parameter_count())
    throw io_error("checkpoint parameter count mismatch");
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    auto read_into = [&](std::vector<float>& dst) {
      for (float& f : dst) {
        const std::uint32_t v = detail::ck_read_u32(bytes, pos);
        std::memcpy(&f, &v, 4);
      }
    };
    read_into(m.weights[l]);
    read_into(m.biases[l]);
  }
  m.latent_width_warning = (m.latent_dim != 4);
  return m;
}

inline AutoencoderModel<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)),
                    std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace qdmsim
