#pragma once

// Internal network machinery: templated on the scalar so training runs in
// float while gradient checking runs the identical graph in double.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "midline/network.hpp"
#include "midline/types.hpp"

namespace midline::detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using VecE = Eigen::Matrix<T, Eigen::Dynamic, 1>;

// Single-sample C x H x W feature map.
template <typename T>
struct Plane {
  int c = 0, h = 0, w = 0;
  std::vector<T> v;

  void ensure(int c_, int h_, int w_) {
    c = c_;
    h = h_;
    w = w_;
    v.resize(static_cast<size_t>(c_) * h_ * w_);
  }
  void zero() { std::fill(v.begin(), v.end(), T(0)); }
  T* ch(int ci) { return v.data() + static_cast<size_t>(ci) * h * w; }
  const T* ch(int ci) const { return v.data() + static_cast<size_t>(ci) * h * w; }
  size_t size() const { return v.size(); }
};

template <typename T>
struct Conv {
  int cin = 0, cout = 0, kh = 3, kw = 3, sh = 1, sw = 1, ph = 1, pw = 1;
  std::vector<T> weight;  // cout x (cin*kh*kw), row-major
  std::vector<T> bias;    // cout
  int weight_slot = -1;   // index into the flat parameter registry
  int bias_slot = -1;

  int k() const { return cin * kh * kw; }
  int out_h(int h) const { return (h + 2 * ph - kh) / sh + 1; }
  int out_w(int w) const { return (w + 2 * pw - kw) / sw + 1; }
  size_t param_count() const { return weight.size() + bias.size(); }
};

template <typename T>
struct ResBlock {
  Conv<T> conv1, conv2;  // channel-preserving, identity shortcut
};

// ---- im2col / col2im ------------------------------------------------------

template <typename T>
void im2col(const Plane<T>& in, const Conv<T>& cv, std::vector<T>& col, int oh, int ow) {
  const size_t n = static_cast<size_t>(oh) * ow;
  col.resize(static_cast<size_t>(cv.k()) * n);
  for (int c = 0; c < cv.cin; ++c) {
    const T* src = in.ch(c);
    for (int ky = 0; ky < cv.kh; ++ky) {
      for (int kx = 0; kx < cv.kw; ++kx) {
        T* dst = col.data() + (static_cast<size_t>(c) * cv.kh * cv.kw +
                               static_cast<size_t>(ky) * cv.kw + kx) * n;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * cv.sh - cv.ph + ky;
          T* d = dst + static_cast<size_t>(oy) * ow;
          if (iy < 0 || iy >= in.h) {
            std::fill(d, d + ow, T(0));
            continue;
          }
          const T* s = src + static_cast<size_t>(iy) * in.w;
          if (cv.sw == 1) {
            const int shift = kx - cv.pw;  // ix = ox + shift
            const int lo = std::max(0, -shift);
            const int hi = std::min(ow, in.w - shift);
            if (lo > 0) std::fill(d, d + lo, T(0));
            if (hi > lo) std::memcpy(d + lo, s + lo + shift, sizeof(T) * (hi - lo));
            if (hi < ow) std::fill(d + std::max(hi, lo), d + ow, T(0));
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * cv.sw - cv.pw + kx;
              d[ox] = (ix >= 0 && ix < in.w) ? s[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, const Conv<T>& cv, Plane<T>& din, int oh, int ow) {
  const size_t n = static_cast<size_t>(oh) * ow;
  for (int c = 0; c < cv.cin; ++c) {
    T* dst = din.ch(c);
    for (int ky = 0; ky < cv.kh; ++ky) {
      for (int kx = 0; kx < cv.kw; ++kx) {
        const T* src = col.data() + (static_cast<size_t>(c) * cv.kh * cv.kw +
                                     static_cast<size_t>(ky) * cv.kw + kx) * n;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * cv.sh - cv.ph + ky;
          if (iy < 0 || iy >= din.h) continue;
          const T* s = src + static_cast<size_t>(oy) * ow;
          T* d = dst + static_cast<size_t>(iy) * din.w;
          if (cv.sw == 1) {
            const int shift = kx - cv.pw;
            const int lo = std::max(0, -shift);
            const int hi = std::min(ow, din.w - shift);
            for (int ox = lo; ox < hi; ++ox) d[ox + shift] += s[ox];
          } else {
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * cv.sw - cv.pw + kx;
              if (ix >= 0 && ix < din.w) d[ix] += s[ox];
            }
          }
        }
      }
    }
  }
}

// ---- primitive forward / backward -----------------------------------------

template <typename T>
void conv_forward(const Conv<T>& cv, const Plane<T>& in, Plane<T>& out, std::vector<T>& col) {
  const int oh = cv.out_h(in.h), ow = cv.out_w(in.w);
  out.ensure(cv.cout, oh, ow);
  im2col(in, cv, col, oh, ow);
  const auto n = static_cast<Eigen::Index>(static_cast<size_t>(oh) * ow);
  Eigen::Map<const MatRM<T>> wm(cv.weight.data(), cv.cout, cv.k());
  Eigen::Map<const MatRM<T>> colm(col.data(), cv.k(), n);
  Eigen::Map<MatRM<T>> outm(out.v.data(), cv.cout, n);
  outm.noalias() = wm * colm;
  Eigen::Map<const VecE<T>> bv(cv.bias.data(), cv.cout);
  outm.colwise() += bv;
}

// Accumulates dweight/dbias and (when din != nullptr) adds the input
// gradient into *din. Recomputes im2col from the stored input.
template <typename T>
void conv_backward(const Conv<T>& cv, const Plane<T>& in, const Plane<T>& dout, Plane<T>* din,
                   std::vector<T>& dweight, std::vector<T>& dbias, std::vector<T>& col,
                   std::vector<T>& dcol) {
  const int oh = dout.h, ow = dout.w;
  const auto n = static_cast<Eigen::Index>(static_cast<size_t>(oh) * ow);
  im2col(in, cv, col, oh, ow);
  Eigen::Map<const MatRM<T>> doutm(dout.v.data(), cv.cout, n);
  Eigen::Map<const MatRM<T>> colm(col.data(), cv.k(), n);
  Eigen::Map<MatRM<T>> dwm(dweight.data(), cv.cout, cv.k());
  dwm.noalias() += doutm * colm.transpose();
  Eigen::Map<VecE<T>> dbv(dbias.data(), cv.cout);
  dbv.noalias() += doutm.rowwise().sum();
  if (din) {
    dcol.resize(static_cast<size_t>(cv.k()) * n);
    Eigen::Map<const MatRM<T>> wm(cv.weight.data(), cv.cout, cv.k());
    Eigen::Map<MatRM<T>> dcolm(dcol.data(), cv.k(), n);
    dcolm.noalias() = wm.transpose() * doutm;
    col2im_add(dcol, cv, *din, oh, ow);
  }
}

// Smooth rectifier x * s(x), s(x) = (1 + x/sqrt(1+x^2))/2. Behaves like a
// SiLU but needs only a square root, and being C-infinity keeps central
// finite differences honest at eps = 1e-3 (a ReLU kink would not).
template <typename T>
inline T act_value(T x) {
  const T s = x / std::sqrt(T(1) + x * x);
  return T(0.5) * x * (T(1) + s);
}

template <typename T>
inline T act_slope(T x) {
  const T s = x / std::sqrt(T(1) + x * x);
  return T(0.5) * (T(1) + s * (T(2) - s * s));
}

template <typename T>
void act_forward(const Plane<T>& pre, Plane<T>& post) {
  post.ensure(pre.c, pre.h, pre.w);
  for (size_t i = 0; i < pre.v.size(); ++i) post.v[i] = act_value(pre.v[i]);
}

// d := d * f'(pre)
template <typename T>
void act_backward(const Plane<T>& pre, Plane<T>& d) {
  for (size_t i = 0; i < d.v.size(); ++i) d.v[i] *= act_slope(pre.v[i]);
}

// Bilinear 2x upsampling with half-pixel centers (clamped at the border).
template <typename T>
void upsample2x_forward(const Plane<T>& in, Plane<T>& out) {
  out.ensure(in.c, in.h * 2, in.w * 2);
  for (int c = 0; c < in.c; ++c) {
    const T* src = in.ch(c);
    T* dst = out.ch(c);
    for (int oy = 0; oy < out.h; ++oy) {
      const double ys = std::clamp(oy * 0.5 - 0.25, 0.0, static_cast<double>(in.h - 1));
      const int y0 = static_cast<int>(ys);
      const int y1 = std::min(y0 + 1, in.h - 1);
      const T fy = static_cast<T>(ys - y0);
      for (int ox = 0; ox < out.w; ++ox) {
        const double xs = std::clamp(ox * 0.5 - 0.25, 0.0, static_cast<double>(in.w - 1));
        const int x0 = static_cast<int>(xs);
        const int x1 = std::min(x0 + 1, in.w - 1);
        const T fx = static_cast<T>(xs - x0);
        const T a = src[static_cast<size_t>(y0) * in.w + x0];
        const T b = src[static_cast<size_t>(y0) * in.w + x1];
        const T cc = src[static_cast<size_t>(y1) * in.w + x0];
        const T dd = src[static_cast<size_t>(y1) * in.w + x1];
        dst[static_cast<size_t>(oy) * out.w + ox] =
            (T(1) - fy) * ((T(1) - fx) * a + fx * b) + fy * ((T(1) - fx) * cc + fx * dd);
      }
    }
  }
}

template <typename T>
void upsample2x_backward(const Plane<T>& dout, Plane<T>& din) {
  // din must be pre-sized (dout.h/2, dout.w/2); gradients accumulate.
  for (int c = 0; c < din.c; ++c) {
    const T* g = dout.ch(c);
    T* d = din.ch(c);
    for (int oy = 0; oy < dout.h; ++oy) {
      const double ys = std::clamp(oy * 0.5 - 0.25, 0.0, static_cast<double>(din.h - 1));
      const int y0 = static_cast<int>(ys);
      const int y1 = std::min(y0 + 1, din.h - 1);
      const T fy = static_cast<T>(ys - y0);
      for (int ox = 0; ox < dout.w; ++ox) {
        const double xs = std::clamp(ox * 0.5 - 0.25, 0.0, static_cast<double>(din.w - 1));
        const int x0 = static_cast<int>(xs);
        const int x1 = std::min(x0 + 1, din.w - 1);
        const T fx = static_cast<T>(xs - x0);
        const T gv = g[static_cast<size_t>(oy) * dout.w + ox];
        d[static_cast<size_t>(y0) * din.w + x0] += (T(1) - fy) * (T(1) - fx) * gv;
        d[static_cast<size_t>(y0) * din.w + x1] += (T(1) - fy) * fx * gv;
        d[static_cast<size_t>(y1) * din.w + x0] += fy * (T(1) - fx) * gv;
        d[static_cast<size_t>(y1) * din.w + x1] += fy * fx * gv;
      }
    }
  }
}

// Global max pooling along Ox: (C,H,W) -> (C,H,1); first index wins ties.
template <typename T>
void maxpool_x_forward(const Plane<T>& in, Plane<T>& out, std::vector<int>& argmax) {
  out.ensure(in.c, in.h, 1);
  argmax.resize(static_cast<size_t>(in.c) * in.h);
  for (int c = 0; c < in.c; ++c) {
    const T* src = in.ch(c);
    for (int y = 0; y < in.h; ++y) {
      const T* row = src + static_cast<size_t>(y) * in.w;
      int best = 0;
      for (int x = 1; x < in.w; ++x)
        if (row[x] > row[best]) best = x;
      out.v[static_cast<size_t>(c) * in.h + y] = row[best];
      argmax[static_cast<size_t>(c) * in.h + y] = best;
    }
  }
}

template <typename T>
void maxpool_x_backward(const Plane<T>& dout, const std::vector<int>& argmax, Plane<T>& din) {
  for (int c = 0; c < din.c; ++c) {
    T* d = din.ch(c);
    for (int y = 0; y < din.h; ++y) {
      const int x = argmax[static_cast<size_t>(c) * din.h + y];
      d[static_cast<size_t>(y) * din.w + x] += dout.v[static_cast<size_t>(c) * din.h + y];
    }
  }
}

template <typename T>
void concat2(const Plane<T>& a, const Plane<T>& b, Plane<T>& out) {
  out.ensure(a.c + b.c, a.h, a.w);
  std::memcpy(out.v.data(), a.v.data(), sizeof(T) * a.size());
  std::memcpy(out.v.data() + a.size(), b.v.data(), sizeof(T) * b.size());
}

template <typename T>
void split2_add(const Plane<T>& dout, Plane<T>& da, Plane<T>& db) {
  for (size_t i = 0; i < da.size(); ++i) da.v[i] += dout.v[i];
  const T* rest = dout.v.data() + da.size();
  for (size_t i = 0; i < db.size(); ++i) db.v[i] += rest[i];
}

// ---- the two-headed network ------------------------------------------------

struct ParamSlot {
  std::string name;
  size_t size = 0;
};

template <typename T>
struct Grads {
  std::vector<std::vector<T>> slots;

  void init_like(const std::vector<ParamSlot>& layout) {
    slots.resize(layout.size());
    for (size_t i = 0; i < layout.size(); ++i) slots[i].assign(layout[i].size, T(0));
  }
  void zero() {
    for (auto& s : slots) std::fill(s.begin(), s.end(), T(0));
  }
};

// Every activated stage keeps its pre-activation map (for the smooth
// rectifier's backward) alongside the activated output.
template <typename T>
struct StagePair {
  Plane<T> pre, out;
};

template <typename T>
struct BlockState {
  Plane<T> h1_pre, h1;   // first conv
  Plane<T> out_pre, out; // second conv + shortcut, then activation
};

template <typename T>
struct Workspace {
  Plane<T> input;
  StagePair<T> stem;
  std::vector<BlockState<T>> shared;
  std::vector<BlockState<T>> enc;            // size depth
  std::vector<StagePair<T>> down;            // size depth-1
  std::vector<Plane<T>> up, cat;             // size depth-1, by level
  std::vector<StagePair<T>> merge;           // size depth-1
  std::vector<BlockState<T>> dec;            // size depth-1
  Plane<T> logits;  // 1 x H x W
  BlockState<T> lim1, lim2;
  Plane<T> pool_out;  // C x H x 1
  std::vector<int> pool_argmax;
  StagePair<T> limc1;    // C x H x 1
  Plane<T> lim_logits;   // 1 x H x 1
  std::vector<T> col, dcol;

  // gradient mirrors (indexed like their forward counterparts)
  Plane<T> d_stem_out;
  std::vector<Plane<T>> d_shared_out;
  std::vector<Plane<T>> d_enc_out, d_down_out;
  std::vector<Plane<T>> d_up, d_cat, d_merge_out, d_dec_out;
  Plane<T> d_lim1_out, d_lim2_out, d_pool_out, d_limc1_out;
  Plane<T> scratch;  // block-internal gradient
};

template <typename T>
class Net {
public:
  ModelConfig cfg;
  Conv<T> stem;
  std::vector<ResBlock<T>> shared;
  std::vector<ResBlock<T>> enc;
  std::vector<Conv<T>> down;
  std::vector<Conv<T>> merge;
  std::vector<ResBlock<T>> dec;
  Conv<T> head;
  ResBlock<T> lim_block1, lim_block2;
  Conv<T> lim_conv1, lim_conv2;

  std::vector<ParamSlot> layout;
  std::vector<std::vector<T>*> params;  // aligned with layout

  explicit Net(const ModelConfig& config) : cfg(config) {
    cfg.validate();
    const int base = cfg.base_channels;
    stem = make_conv(1, base, 3, 3, 1);
    shared.resize(static_cast<size_t>(cfg.shared_layers));
    for (auto& b : shared) b = make_block(base);
    enc.resize(static_cast<size_t>(cfg.depth));
    down.resize(static_cast<size_t>(cfg.depth - 1));
    for (int l = 0; l < cfg.depth; ++l) enc[static_cast<size_t>(l)] = make_block(base << l);
    for (int l = 0; l < cfg.depth - 1; ++l)
      down[static_cast<size_t>(l)] = make_conv(base << l, base << (l + 1), 3, 3, 2);
    merge.resize(static_cast<size_t>(cfg.depth - 1));
    dec.resize(static_cast<size_t>(cfg.depth - 1));
    for (int l = 0; l < cfg.depth - 1; ++l) {
      const int skip_c = base << l;
      const int up_c = base << (l + 1);
      merge[static_cast<size_t>(l)] = make_conv(skip_c + up_c, skip_c, 3, 3, 1);
      dec[static_cast<size_t>(l)] = make_block(skip_c);
    }
    head = make_conv(base, 1, 1, 1, 1);
    lim_block1 = make_block(base);
    lim_block2 = make_block(base);
    lim_conv1 = make_conv(base, base, 3, 1, 1);
    lim_conv2 = make_conv(base, 1, 3, 1, 1);
    register_params();
    init_params();
  }

  Net(const Net& other) { *this = other; }
  Net& operator=(const Net& other) {
    if (this == &other) return *this;
    cfg = other.cfg;
    stem = other.stem;
    shared = other.shared;
    enc = other.enc;
    down = other.down;
    merge = other.merge;
    dec = other.dec;
    head = other.head;
    lim_block1 = other.lim_block1;
    lim_block2 = other.lim_block2;
    lim_conv1 = other.lim_conv1;
    lim_conv2 = other.lim_conv2;
    layout.clear();
    params.clear();
    register_params();
    return *this;
  }

  size_t parameter_count() const {
    size_t n = 0;
    for (const auto& s : layout) n += s.size;
    return n;
  }

  // Copy parameters from a net of another scalar type (same config).
  template <typename U>
  void copy_params_from(const Net<U>& other) {
    for (size_t i = 0; i < params.size(); ++i) {
      const auto& src = *other.params[i];
      auto& dst = *params[i];
      for (size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
    }
  }

  void forward_sample(const T* image_hw, Workspace<T>& ws) const {
    const int H = cfg.input_rows, W = cfg.input_cols;
    const int d = cfg.depth;
    ws.input.ensure(1, H, W);
    std::memcpy(ws.input.v.data(), image_hw, sizeof(T) * ws.input.size());

    conv_forward(stem, ws.input, ws.stem.pre, ws.col);
    act_forward(ws.stem.pre, ws.stem.out);

    ws.shared.resize(shared.size());
    const Plane<T>* cur = &ws.stem.out;
    for (size_t i = 0; i < shared.size(); ++i) {
      block_forward(shared[i], *cur, ws.shared[i], ws);
      cur = &ws.shared[i].out;
    }
    const Plane<T>& trunk = *cur;

    // midline head: encoder
    ws.enc.resize(enc.size());
    ws.down.resize(down.size());
    block_forward(enc[0], trunk, ws.enc[0], ws);
    for (int l = 1; l < d; ++l) {
      auto li = static_cast<size_t>(l);
      conv_forward(down[li - 1], ws.enc[li - 1].out, ws.down[li - 1].pre, ws.col);
      act_forward(ws.down[li - 1].pre, ws.down[li - 1].out);
      block_forward(enc[li], ws.down[li - 1].out, ws.enc[li], ws);
    }

    // decoder, deepest level first
    ws.up.resize(static_cast<size_t>(d - 1));
    ws.cat.resize(static_cast<size_t>(d - 1));
    ws.merge.resize(static_cast<size_t>(d - 1));
    ws.dec.resize(static_cast<size_t>(d - 1));
    for (int l = d - 2; l >= 0; --l) {
      const Plane<T>& deeper = (l == d - 2) ? ws.enc[static_cast<size_t>(d - 1)].out
                                            : ws.dec[static_cast<size_t>(l + 1)].out;
      auto li = static_cast<size_t>(l);
      upsample2x_forward(deeper, ws.up[li]);
      concat2(ws.enc[li].out, ws.up[li], ws.cat[li]);
      conv_forward(merge[li], ws.cat[li], ws.merge[li].pre, ws.col);
      act_forward(ws.merge[li].pre, ws.merge[li].out);
      block_forward(dec[li], ws.merge[li].out, ws.dec[li], ws);
    }
    conv_forward(head, ws.dec[0].out, ws.logits, ws.col);

    // limits head
    block_forward(lim_block1, trunk, ws.lim1, ws);
    block_forward(lim_block2, ws.lim1.out, ws.lim2, ws);
    maxpool_x_forward(ws.lim2.out, ws.pool_out, ws.pool_argmax);
    conv_forward(lim_conv1, ws.pool_out, ws.limc1.pre, ws.col);
    act_forward(ws.limc1.pre, ws.limc1.out);
    conv_forward(lim_conv2, ws.limc1.out, ws.lim_logits, ws.col);
  }

  // dlogits: 1 x H x W; dlim_logits: 1 x H x 1. Parameter gradients
  // accumulate into `grads` (caller zeroes between batches).
  void backward_sample(Workspace<T>& ws, const Plane<T>& dlogits, const Plane<T>& dlim_logits,
                       Grads<T>& grads) const {
    const int d = cfg.depth;

    auto zero_like = [](Plane<T>& g, const Plane<T>& ref) {
      g.ensure(ref.c, ref.h, ref.w);
      g.zero();
    };

    zero_like(ws.d_stem_out, ws.stem.out);
    ws.d_shared_out.resize(shared.size());
    for (size_t i = 0; i < shared.size(); ++i) zero_like(ws.d_shared_out[i], ws.shared[i].out);
    ws.d_enc_out.resize(enc.size());
    for (size_t i = 0; i < enc.size(); ++i) zero_like(ws.d_enc_out[i], ws.enc[i].out);
    ws.d_down_out.resize(down.size());
    for (size_t i = 0; i < down.size(); ++i) zero_like(ws.d_down_out[i], ws.down[i].out);
    ws.d_up.resize(static_cast<size_t>(d - 1));
    ws.d_cat.resize(static_cast<size_t>(d - 1));
    ws.d_merge_out.resize(static_cast<size_t>(d - 1));
    ws.d_dec_out.resize(static_cast<size_t>(d - 1));
    for (int l = 0; l < d - 1; ++l) {
      auto li = static_cast<size_t>(l);
      zero_like(ws.d_up[li], ws.up[li]);
      zero_like(ws.d_cat[li], ws.cat[li]);
      zero_like(ws.d_merge_out[li], ws.merge[li].out);
      zero_like(ws.d_dec_out[li], ws.dec[li].out);
    }
    zero_like(ws.d_lim1_out, ws.lim1.out);
    zero_like(ws.d_lim2_out, ws.lim2.out);
    zero_like(ws.d_pool_out, ws.pool_out);
    zero_like(ws.d_limc1_out, ws.limc1.out);

    // limits head
    conv_backward(lim_conv2, ws.limc1.out, dlim_logits, &ws.d_limc1_out,
                  grads.slots[static_cast<size_t>(lim_conv2.weight_slot)],
                  grads.slots[static_cast<size_t>(lim_conv2.bias_slot)], ws.col, ws.dcol);
    act_backward(ws.limc1.pre, ws.d_limc1_out);
    conv_backward(lim_conv1, ws.pool_out, ws.d_limc1_out, &ws.d_pool_out,
                  grads.slots[static_cast<size_t>(lim_conv1.weight_slot)],
                  grads.slots[static_cast<size_t>(lim_conv1.bias_slot)], ws.col, ws.dcol);
    maxpool_x_backward(ws.d_pool_out, ws.pool_argmax, ws.d_lim2_out);
    const Plane<T>& trunk = ws.shared.empty() ? ws.stem.out : ws.shared.back().out;
    Plane<T>& d_trunk = ws.shared.empty() ? ws.d_stem_out : ws.d_shared_out.back();
    block_backward(lim_block2, ws.lim1.out, ws.lim2, ws.d_lim2_out, ws.d_lim1_out, grads, ws);
    block_backward(lim_block1, trunk, ws.lim1, ws.d_lim1_out, d_trunk, grads, ws);

    // midline head
    conv_backward(head, ws.dec[0].out, dlogits, &ws.d_dec_out[0],
                  grads.slots[static_cast<size_t>(head.weight_slot)],
                  grads.slots[static_cast<size_t>(head.bias_slot)], ws.col, ws.dcol);
    for (int l = 0; l <= d - 2; ++l) {
      auto li = static_cast<size_t>(l);
      block_backward(dec[li], ws.merge[li].out, ws.dec[li], ws.d_dec_out[li],
                     ws.d_merge_out[li], grads, ws);
      act_backward(ws.merge[li].pre, ws.d_merge_out[li]);
      conv_backward(merge[li], ws.cat[li], ws.d_merge_out[li], &ws.d_cat[li],
                    grads.slots[static_cast<size_t>(merge[li].weight_slot)],
                    grads.slots[static_cast<size_t>(merge[li].bias_slot)], ws.col, ws.dcol);
      split2_add(ws.d_cat[li], ws.d_enc_out[li], ws.d_up[li]);
      Plane<T>& d_deeper = (l == d - 2) ? ws.d_enc_out[static_cast<size_t>(d - 1)]
                                        : ws.d_dec_out[static_cast<size_t>(l + 1)];
      upsample2x_backward(ws.d_up[li], d_deeper);
    }

    // encoder chain, deepest first
    for (int l = d - 1; l >= 1; --l) {
      auto li = static_cast<size_t>(l);
      block_backward(enc[li], ws.down[li - 1].out, ws.enc[li], ws.d_enc_out[li],
                     ws.d_down_out[li - 1], grads, ws);
      act_backward(ws.down[li - 1].pre, ws.d_down_out[li - 1]);
      conv_backward(down[li - 1], ws.enc[li - 1].out, ws.d_down_out[li - 1],
                    &ws.d_enc_out[li - 1],
                    grads.slots[static_cast<size_t>(down[li - 1].weight_slot)],
                    grads.slots[static_cast<size_t>(down[li - 1].bias_slot)], ws.col, ws.dcol);
    }
    block_backward(enc[0], trunk, ws.enc[0], ws.d_enc_out[0], d_trunk, grads, ws);

    // shared trunk
    for (size_t i = shared.size(); i-- > 0;) {
      const Plane<T>& in = (i == 0) ? ws.stem.out : ws.shared[i - 1].out;
      Plane<T>& din = (i == 0) ? ws.d_stem_out : ws.d_shared_out[i - 1];
      block_backward(shared[i], in, ws.shared[i], ws.d_shared_out[i], din, grads, ws);
    }
    act_backward(ws.stem.pre, ws.d_stem_out);
    conv_backward(stem, ws.input, ws.d_stem_out, static_cast<Plane<T>*>(nullptr),
                  grads.slots[static_cast<size_t>(stem.weight_slot)],
                  grads.slots[static_cast<size_t>(stem.bias_slot)], ws.col, ws.dcol);
  }

private:
  Conv<T> make_conv(int cin, int cout, int kh, int kw, int stride) {
    Conv<T> cv;
    cv.cin = cin;
    cv.cout = cout;
    cv.kh = kh;
    cv.kw = kw;
    cv.sh = stride;
    cv.sw = stride;
    cv.ph = kh / 2;
    cv.pw = kw / 2;
    cv.weight.assign(static_cast<size_t>(cout) * cv.k(), T(0));
    cv.bias.assign(static_cast<size_t>(cout), T(0));
    return cv;
  }

  ResBlock<T> make_block(int channels) {
    ResBlock<T> b;
    b.conv1 = make_conv(channels, channels, 3, 3, 1);
    b.conv2 = make_conv(channels, channels, 3, 3, 1);
    return b;
  }

  void register_conv(const std::string& name, Conv<T>& cv) {
    cv.weight_slot = static_cast<int>(layout.size());
    layout.push_back({name + ".weight", cv.weight.size()});
    params.push_back(&cv.weight);
    cv.bias_slot = static_cast<int>(layout.size());
    layout.push_back({name + ".bias", cv.bias.size()});
    params.push_back(&cv.bias);
  }

  void register_block(const std::string& name, ResBlock<T>& b) {
    register_conv(name + ".conv1", b.conv1);
    register_conv(name + ".conv2", b.conv2);
  }

  void register_params() {
    register_conv("stem", stem);
    for (size_t i = 0; i < shared.size(); ++i)
      register_block("shared" + std::to_string(i), shared[i]);
    for (size_t i = 0; i < enc.size(); ++i) register_block("enc" + std::to_string(i), enc[i]);
    for (size_t i = 0; i < down.size(); ++i) register_conv("down" + std::to_string(i), down[i]);
    for (size_t i = 0; i < merge.size(); ++i)
      register_conv("merge" + std::to_string(i), merge[i]);
    for (size_t i = 0; i < dec.size(); ++i) register_block("dec" + std::to_string(i), dec[i]);
    register_conv("head", head);
    register_block("limits_block1", lim_block1);
    register_block("limits_block2", lim_block2);
    register_conv("limits_conv1", lim_conv1);
    register_conv("limits_conv2", lim_conv2);
  }

  void init_params() {
    std::mt19937 rng(cfg.seed);
    auto he_init = [&rng](Conv<T>& cv) {
      const double stddev = std::sqrt(2.0 / cv.k());
      std::normal_distribution<double> dist(0.0, stddev);
      for (auto& w : cv.weight) w = static_cast<T>(dist(rng));
      std::fill(cv.bias.begin(), cv.bias.end(), T(0));
    };
    // Initialization order matches registration order.
    he_init(stem);
    for (auto& b : shared) {
      he_init(b.conv1);
      he_init(b.conv2);
    }
    for (auto& b : enc) {
      he_init(b.conv1);
      he_init(b.conv2);
    }
    for (auto& cv : down) he_init(cv);
    for (auto& cv : merge) he_init(cv);
    for (auto& b : dec) {
      he_init(b.conv1);
      he_init(b.conv2);
    }
    he_init(head);
    he_init(lim_block1.conv1);
    he_init(lim_block1.conv2);
    he_init(lim_block2.conv1);
    he_init(lim_block2.conv2);
    he_init(lim_conv1);
    he_init(lim_conv2);
  }

  // out = act(conv2(act(conv1(in))) + in)
  void block_forward(const ResBlock<T>& b, const Plane<T>& in, BlockState<T>& st,
                     Workspace<T>& ws) const {
    conv_forward(b.conv1, in, st.h1_pre, ws.col);
    act_forward(st.h1_pre, st.h1);
    conv_forward(b.conv2, st.h1, st.out_pre, ws.col);
    for (size_t i = 0; i < st.out_pre.size(); ++i) st.out_pre.v[i] += in.v[i];
    act_forward(st.out_pre, st.out);
  }

  // d_out is consumed (scaled in place by the activation slope); d_in accumulates.
  void block_backward(const ResBlock<T>& b, const Plane<T>& in, const BlockState<T>& st,
                      Plane<T>& d_out, Plane<T>& d_in, Grads<T>& grads,
                      Workspace<T>& ws) const {
    act_backward(st.out_pre, d_out);
    for (size_t i = 0; i < d_in.size(); ++i) d_in.v[i] += d_out.v[i];  // shortcut
    ws.scratch.ensure(st.h1.c, st.h1.h, st.h1.w);
    ws.scratch.zero();
    conv_backward(b.conv2, st.h1, d_out, &ws.scratch,
                  grads.slots[static_cast<size_t>(b.conv2.weight_slot)],
                  grads.slots[static_cast<size_t>(b.conv2.bias_slot)], ws.col, ws.dcol);
    act_backward(st.h1_pre, ws.scratch);
    conv_backward(b.conv1, in, ws.scratch, &d_in,
                  grads.slots[static_cast<size_t>(b.conv1.weight_slot)],
                  grads.slots[static_cast<size_t>(b.conv1.bias_slot)], ws.col, ws.dcol);
  }
};

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("MIDLINE_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Deterministic static-partition parallel map; worker w handles a contiguous
// chunk so per-sample results never depend on scheduling.
inline void parallel_for(int n, int threads, const std::function<void(int item, int worker)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  const int per = (n + threads - 1) / threads;
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(threads));
  for (int w = 0; w < threads; ++w) {
    const int lo = w * per, hi = std::min(n, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([=, &fn, &errors] {
      try {
        for (int i = lo; i < hi; ++i) fn(i, w);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace midline::detail
