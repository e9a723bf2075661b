#include "bufd/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bufd {

namespace {

template <typename T>
void check_conv_shapes(const Tensor<T>& in, const Tensor<T>& k,
                       const Tensor<T>& bias) {
  if (in.rank() != 4)
    throw std::invalid_argument("conv2d: input must be BxCxHxW, got " +
                                shape_str(in.shape()));
  if (k.rank() != 4 || k.dim(2) != 3 || k.dim(3) != 3)
    throw std::invalid_argument("conv2d: kernel must be CoutxCinx3x3, got " +
                                shape_str(k.shape()));
  if (k.dim(1) != in.dim(1))
    throw std::invalid_argument(
        "conv2d: input channels " + std::to_string(in.dim(1)) +
        " do not match kernel channels " + std::to_string(k.dim(1)));
  if (bias.rank() != 1 || bias.dim(0) != k.dim(0))
    throw std::invalid_argument("conv2d: bias must be {Cout}, got " +
                                shape_str(bias.shape()));
}

// out[b,co,i,j] = bias[co] + sum_{ci,di,dj} k[co,ci,di,dj] * in[b,ci,i+di-1,j+dj-1]
//
// Accumulates one output row at a time so every tap hits the accumulator in
// cache; the three shifted updates per input row vectorize cleanly.
template <typename T>
void conv2d_forward(const T* in, const T* k, const T* bias, T* out,
                    std::int64_t B, std::int64_t Cin, std::int64_t H,
                    std::int64_t W, std::int64_t Cout) {
  const std::int64_t hw = H * W;
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t co = 0; co < Cout; ++co) {
      T* o = out + (b * Cout + co) * hw;
      for (std::int64_t i = 0; i < H; ++i) {
        T* __restrict__ acc = o + i * W;
        std::fill(acc, acc + W, bias[co]);
        for (std::int64_t ci = 0; ci < Cin; ++ci) {
          const T* x = in + (b * Cin + ci) * hw;
          const T* kk = k + (co * Cin + ci) * 9;
          for (int di = -1; di <= 1; ++di) {
            const std::int64_t r = i + di;
            if (r < 0 || r >= H) continue;
            const T* __restrict__ xrow = x + r * W;
            const T w0 = kk[(di + 1) * 3 + 0];
            const T w1 = kk[(di + 1) * 3 + 1];
            const T w2 = kk[(di + 1) * 3 + 2];
            if (W == 1) {
              acc[0] += w1 * xrow[0];
              continue;
            }
            acc[0] += w1 * xrow[0] + w2 * xrow[1];
            for (std::int64_t j = 1; j < W - 1; ++j)
              acc[j] += w0 * xrow[j - 1] + w1 * xrow[j] + w2 * xrow[j + 1];
            acc[W - 1] += w0 * xrow[W - 2] + w1 * xrow[W - 1];
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const T* in, const T* k, const T* gout, T* gin, T* gk,
                     T* gbias, std::int64_t B, std::int64_t Cin,
                     std::int64_t H, std::int64_t W, std::int64_t Cout) {
  const std::int64_t hw = H * W;
  for (std::int64_t b = 0; b < B; ++b) {
    // bias: plain sum of the outgoing gradient per output channel
    for (std::int64_t co = 0; co < Cout; ++co) {
      const T* __restrict__ g = gout + (b * Cout + co) * hw;
      double acc = 0.0;
#pragma omp simd reduction(+ : acc)
      for (std::int64_t i = 0; i < hw; ++i) acc += g[i];
      gbias[co] += static_cast<T>(acc);
    }
    // kernel: per-tap dot products of gout rows against shifted input rows,
    // accumulated per column so the horizontal reduction happens once
    std::vector<T> tap_buf(static_cast<std::size_t>(3 * W));
    for (std::int64_t co = 0; co < Cout; ++co) {
      const T* g = gout + (b * Cout + co) * hw;
      for (std::int64_t ci = 0; ci < Cin; ++ci) {
        const T* x = in + (b * Cin + ci) * hw;
        T* gkk = gk + (co * Cin + ci) * 9;
        for (int di = -1; di <= 1; ++di) {
          std::fill(tap_buf.begin(), tap_buf.end(), T(0));
          T* __restrict__ b0 = tap_buf.data();
          T* __restrict__ b1 = tap_buf.data() + W;
          T* __restrict__ b2 = tap_buf.data() + 2 * W;
          const std::int64_t i0 = std::max<std::int64_t>(0, -di);
          const std::int64_t i1 = std::min<std::int64_t>(H, H - di);
          for (std::int64_t i = i0; i < i1; ++i) {
            const T* __restrict__ grow = g + i * W;
            const T* __restrict__ xrow = x + (i + di) * W;
            if (W == 1) {
              b1[0] += grow[0] * xrow[0];
              continue;
            }
            for (std::int64_t j = 1; j < W - 1; ++j) {
              const T gv = grow[j];
              b0[j] += gv * xrow[j - 1];
              b1[j] += gv * xrow[j];
              b2[j] += gv * xrow[j + 1];
            }
            b1[0] += grow[0] * xrow[0];
            b1[W - 1] += grow[W - 1] * xrow[W - 1];
            b2[0] += grow[0] * xrow[1];
            b0[W - 1] += grow[W - 1] * xrow[W - 2];
          }
          double d0 = 0.0, d1 = 0.0, d2 = 0.0;
          for (std::int64_t j = 0; j < W; ++j) {
            d0 += b0[j];
            d1 += b1[j];
            d2 += b2[j];
          }
          gkk[(di + 1) * 3 + 0] += static_cast<T>(d0);
          gkk[(di + 1) * 3 + 1] += static_cast<T>(d1);
          gkk[(di + 1) * 3 + 2] += static_cast<T>(d2);
        }
      }
    }
    // input: full correlation of gout with the flipped kernel, one gin row
    // accumulated at a time
    for (std::int64_t ci = 0; ci < Cin; ++ci) {
      T* gx = gin + (b * Cin + ci) * hw;
      for (std::int64_t r = 0; r < H; ++r) {
        T* __restrict__ acc = gx + r * W;
        for (std::int64_t co = 0; co < Cout; ++co) {
          const T* g = gout + (b * Cout + co) * hw;
          const T* kk = k + (co * Cin + ci) * 9;
          for (int di = -1; di <= 1; ++di) {
            const std::int64_t gr = r - di;
            if (gr < 0 || gr >= H) continue;
            const T* __restrict__ grow = g + gr * W;
            const T w0 = kk[(di + 1) * 3 + 0];
            const T w1 = kk[(di + 1) * 3 + 1];
            const T w2 = kk[(di + 1) * 3 + 2];
            if (W == 1) {
              acc[0] += w1 * grow[0];
              continue;
            }
            acc[0] += w1 * grow[0] + w0 * grow[1];
            for (std::int64_t j = 1; j < W - 1; ++j)
              acc[j] += w0 * grow[j + 1] + w1 * grow[j] + w2 * grow[j - 1];
            acc[W - 1] += w1 * grow[W - 1] + w2 * grow[W - 2];
          }
        }
      }
    }
  }
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

template <typename T>
Tensor<T>& Tape<T>::grad_acc(NodeId id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  n.reached = true;
  return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(NodeId id) {
  Node& n = node(id);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
NodeId Tape<T>::leaf(Tensor<T> value) {
  return push(std::move(value));
}

template <typename T>
NodeId Tape<T>::conv2d(NodeId input, NodeId kernel, NodeId bias) {
  const Tensor<T>& in = value(input);
  const Tensor<T>& k = value(kernel);
  const Tensor<T>& b = value(bias);
  check_conv_shapes(in, k, b);
  const std::int64_t B = in.dim(0), Cin = in.dim(1), H = in.dim(2),
                     W = in.dim(3), Cout = k.dim(0);
  Tensor<T> out({B, Cout, H, W});
  conv2d_forward(in.data(), k.data(), b.data(), out.data(), B, Cin, H, W,
                 Cout);
  NodeId id = push(std::move(out));
  node(id).back = [input, kernel, bias, id, B, Cin, H, W, Cout](Tape& t) {
    const Tensor<T>& gout = t.node(id).grad;
    const Tensor<T>& in_v = t.value(input);
    const Tensor<T>& k_v = t.value(kernel);
    Tensor<T>& gin = t.grad_acc(input);
    Tensor<T>& gk = t.grad_acc(kernel);
    Tensor<T>& gb = t.grad_acc(bias);
    conv2d_backward(in_v.data(), k_v.data(), gout.data(), gin.data(),
                    gk.data(), gb.data(), B, Cin, H, W, Cout);
  };
  return id;
}

template <typename T>
NodeId Tape<T>::batch_norm(NodeId input, NodeId gamma, NodeId beta,
                           BnBuffers<T> buffers, BnMode mode) {
  const Tensor<T>& x = value(input);
  const Tensor<T>& g = value(gamma);
  const Tensor<T>& bt = value(beta);
  if (x.rank() != 4)
    throw std::invalid_argument("batch_norm: input must be BxCxHxW, got " +
                                shape_str(x.shape()));
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (g.size() != C || bt.size() != C)
    throw std::invalid_argument(
        "batch_norm: gamma/beta length must equal channel count " +
        std::to_string(C));
  if (!buffers.running_mean || !buffers.running_var || !buffers.batches_seen ||
      buffers.running_mean->size() != C || buffers.running_var->size() != C)
    throw std::invalid_argument("batch_norm: bad running-statistics buffers");

  const std::int64_t hw = H * W;
  const std::int64_t n = B * hw;  // samples per channel
  std::vector<double> mean(static_cast<std::size_t>(C), 0.0);
  std::vector<double> invstd(static_cast<std::size_t>(C), 0.0);

  if (mode == BnMode::train) {
    for (std::int64_t c = 0; c < C; ++c) {
      double s = 0.0, s2 = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* p = x.data() + (b * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          s += p[i];
          s2 += static_cast<double>(p[i]) * p[i];
        }
      }
      const double m = s / static_cast<double>(n);
      const double var = std::max(0.0, s2 / static_cast<double>(n) - m * m);
      mean[static_cast<std::size_t>(c)] = m;
      invstd[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var + kBnEps);
      // exponential moving average; running variance uses the unbiased
      // batch estimate
      const double unbiased =
          n > 1 ? var * static_cast<double>(n) / static_cast<double>(n - 1)
                : var;
      Tensor<T>& rm = *buffers.running_mean;
      Tensor<T>& rv = *buffers.running_var;
      rm[c] = static_cast<T>((1.0 - kBnMomentum) * rm[c] + kBnMomentum * m);
      rv[c] =
          static_cast<T>((1.0 - kBnMomentum) * rv[c] + kBnMomentum * unbiased);
    }
    (*buffers.batches_seen)[0] += T(1);
  } else {
    if ((*buffers.batches_seen)[0] <= T(0))
      throw std::logic_error(
          "batch_norm: infer mode before any running statistics exist");
    for (std::int64_t c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = (*buffers.running_mean)[c];
      invstd[static_cast<std::size_t>(c)] =
          1.0 / std::sqrt(static_cast<double>((*buffers.running_var)[c]) +
                          kBnEps);
    }
  }

  Tensor<T> out(x.shape());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const T* p = x.data() + (b * C + c) * hw;
      T* o = out.data() + (b * C + c) * hw;
      const T m = static_cast<T>(mean[static_cast<std::size_t>(c)]);
      const T s = static_cast<T>(invstd[static_cast<std::size_t>(c)]);
      const T gc = g[c], bc = bt[c];
      for (std::int64_t i = 0; i < hw; ++i) o[i] = gc * (p[i] - m) * s + bc;
    }

  NodeId id = push(std::move(out));
  node(id).back = [input, gamma, beta, id, B, C, hw, n, mean, invstd,
                   mode](Tape& t) {
    const Tensor<T>& gout = t.node(id).grad;
    const Tensor<T>& x_v = t.value(input);
    const Tensor<T>& g_v = t.value(gamma);
    Tensor<T>& gin = t.grad_acc(input);
    Tensor<T>& gg = t.grad_acc(gamma);
    Tensor<T>& gb = t.grad_acc(beta);
    for (std::int64_t c = 0; c < C; ++c) {
      const double m = mean[static_cast<std::size_t>(c)];
      const double s = invstd[static_cast<std::size_t>(c)];
      double sum_gy = 0.0, sum_gy_xhat = 0.0;
      for (std::int64_t b = 0; b < B; ++b) {
        const T* gy = gout.data() + (b * C + c) * hw;
        const T* xv = x_v.data() + (b * C + c) * hw;
        for (std::int64_t i = 0; i < hw; ++i) {
          sum_gy += gy[i];
          sum_gy_xhat += gy[i] * ((xv[i] - m) * s);
        }
      }
      gb[c] += static_cast<T>(sum_gy);
      gg[c] += static_cast<T>(sum_gy_xhat);
      const double gc = g_v[c];
      if (mode == BnMode::train) {
        const double k1 = gc * s / static_cast<double>(n);
        for (std::int64_t b = 0; b < B; ++b) {
          const T* gy = gout.data() + (b * C + c) * hw;
          const T* xv = x_v.data() + (b * C + c) * hw;
          T* gx = gin.data() + (b * C + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i) {
            const double xhat = (xv[i] - m) * s;
            gx[i] += static_cast<T>(
                k1 * (static_cast<double>(n) * gy[i] - sum_gy -
                      xhat * sum_gy_xhat));
          }
        }
      } else {
        const double k1 = gc * s;
        for (std::int64_t b = 0; b < B; ++b) {
          const T* gy = gout.data() + (b * C + c) * hw;
          T* gx = gin.data() + (b * C + c) * hw;
          for (std::int64_t i = 0; i < hw; ++i)
            gx[i] += static_cast<T>(k1 * gy[i]);
        }
      }
    }
  };
  return id;
}

template <typename T>
NodeId Tape<T>::relu(NodeId input) {
  const Tensor<T>& x = value(input);
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i)
    out[i] = x[i] > T(0) ? x[i] : T(0);
  NodeId id = push(std::move(out));
  node(id).back = [input, id](Tape& t) {
    const Tensor<T>& gout = t.node(id).grad;
    const Tensor<T>& x_v = t.value(input);
    Tensor<T>& gin = t.grad_acc(input);
    // subgradient at exactly 0 is 0
    for (std::int64_t i = 0; i < x_v.size(); ++i)
      if (x_v[i] > T(0)) gin[i] += gout[i];
  };
  return id;
}

template <typename T>
NodeId Tape<T>::sigmoid(NodeId input) {
  const Tensor<T>& x = value(input);
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) out[i] = stable_sigmoid(x[i]);
  NodeId id = push(std::move(out));
  node(id).back = [input, id](Tape& t) {
    const Tensor<T>& gout = t.node(id).grad;
    const Tensor<T>& y = t.value(id);
    Tensor<T>& gin = t.grad_acc(input);
    for (std::int64_t i = 0; i < y.size(); ++i)
      gin[i] += gout[i] * y[i] * (T(1) - y[i]);
  };
  return id;
}

template <typename T>
NodeId Tape<T>::add(NodeId a, NodeId b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  require_same_shape(av, bv, "add");
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  NodeId id = push(std::move(out));
  node(id).back = [a, b, id](Tape& t) {
    const Tensor<T>& gout = t.node(id).grad;
    Tensor<T>& ga = t.grad_acc(a);
    Tensor<T>& gb = t.grad_acc(b);
    for (std::int64_t i = 0; i < gout.size(); ++i) {
      ga[i] += gout[i];
      gb[i] += gout[i];
    }
  };
  return id;
}

template <typename T>
NodeId Tape<T>::sub(NodeId a, NodeId b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  require_same_shape(av, bv, "sub");
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  NodeId id = push(std::move(out));
  node(id).back = [a, b, id](Tape& t) {
    const Tensor<T>& gout = t.node(id).grad;
    Tensor<T>& ga = t.grad_acc(a);
    Tensor<T>& gb = t.grad_acc(b);
    for (std::int64_t i = 0; i < gout.size(); ++i) {
      ga[i] += gout[i];
      gb[i] -= gout[i];
    }
  };
  return id;
}

template <typename T>
NodeId Tape<T>::mul(NodeId a, NodeId b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  require_same_shape(av, bv, "mul");
  Tensor<T> out(av.shape());
  for (std::int64_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  NodeId id = push(std::move(out));
  node(id).back = [a, b, id](Tape& t) {
    const Tensor<T>& gout = t.node(id).grad;
    const Tensor<T>& av_ = t.value(a);
    const Tensor<T>& bv_ = t.value(b);
    Tensor<T>& ga = t.grad_acc(a);
    Tensor<T>& gb = t.grad_acc(b);
    for (std::int64_t i = 0; i < gout.size(); ++i) {
      ga[i] += gout[i] * bv_[i];
      gb[i] += gout[i] * av_[i];
    }
  };
  return id;
}

template <typename T>
NodeId Tape<T>::affine(NodeId x, T scale, T shift) {
  const Tensor<T>& xv = value(x);
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < xv.size(); ++i)
    out[i] = scale * xv[i] + shift;
  NodeId id = push(std::move(out));
  node(id).back = [x, id, scale](Tape& t) {
    const Tensor<T>& gout = t.node(id).grad;
    Tensor<T>& gx = t.grad_acc(x);
    for (std::int64_t i = 0; i < gout.size(); ++i)
      gx[i] += scale * gout[i];
  };
  return id;
}

template <typename T>
NodeId Tape<T>::concat_channels(std::span<const NodeId> parts) {
  if (parts.empty())
    throw std::invalid_argument("concat_channels: no inputs");
  const Tensor<T>& first = value(parts[0]);
  if (first.rank() != 4)
    throw std::invalid_argument("concat_channels: inputs must be BxCxHxW");
  const std::int64_t B = first.dim(0), H = first.dim(2), W = first.dim(3);
  std::int64_t c_total = 0;
  for (NodeId p : parts) {
    const Tensor<T>& v = value(p);
    if (v.rank() != 4 || v.dim(0) != B || v.dim(2) != H || v.dim(3) != W)
      throw std::invalid_argument("concat_channels: shape mismatch " +
                                  shape_str(v.shape()) + " vs " +
                                  shape_str(first.shape()));
    c_total += v.dim(1);
  }
  const std::int64_t hw = H * W;
  Tensor<T> out({B, c_total, H, W});
  std::vector<NodeId> part_ids(parts.begin(), parts.end());
  for (std::int64_t b = 0; b < B; ++b) {
    std::int64_t c_off = 0;
    for (NodeId p : parts) {
      const Tensor<T>& v = value(p);
      const std::int64_t c = v.dim(1);
      std::copy(v.data() + b * c * hw, v.data() + (b + 1) * c * hw,
                out.data() + (b * c_total + c_off) * hw);
      c_off += c;
    }
  }
  NodeId id = push(std::move(out));
  node(id).back = [part_ids, id, B, c_total, hw](Tape& t) {
    const Tensor<T>& gout = t.node(id).grad;
    for (std::int64_t b = 0; b < B; ++b) {
      std::int64_t c_off = 0;
      for (NodeId p : part_ids) {
        Tensor<T>& gp = t.grad_acc(p);
        const std::int64_t c = gp.shape()[1];
        const T* src = gout.data() + (b * c_total + c_off) * hw;
        T* dst = gp.data() + b * c * hw;
        for (std::int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
        c_off += c;
      }
    }
  };
  return id;
}

template <typename T>
NodeId Tape<T>::sum(NodeId x) {
  const Tensor<T>& xv = value(x);
  double acc = 0.0;
  for (std::int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
  NodeId id = push(Tensor<T>::scalar(static_cast<T>(acc)));
  node(id).back = [x, id](Tape& t) {
    const T g = t.node(id).grad[0];
    Tensor<T>& gx = t.grad_acc(x);
    for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += g;
  };
  return id;
}

template <typename T>
NodeId Tape<T>::mse(NodeId a, NodeId b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  require_same_shape(av, bv, "mse");
  const std::int64_t n = av.size();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(av[i]) - bv[i];
    acc += d * d;
  }
  NodeId id = push(Tensor<T>::scalar(static_cast<T>(acc / n)));
  node(id).back = [a, b, id, n](Tape& t) {
    const T g = t.node(id).grad[0];
    const Tensor<T>& av_ = t.value(a);
    const Tensor<T>& bv_ = t.value(b);
    Tensor<T>& ga = t.grad_acc(a);
    Tensor<T>& gb = t.grad_acc(b);
    const T coeff = g * T(2) / static_cast<T>(n);
    for (std::int64_t i = 0; i < n; ++i) {
      const T d = coeff * (av_[i] - bv_[i]);
      ga[i] += d;
      gb[i] -= d;
    }
  };
  return id;
}

template <typename T>
void Tape<T>::backward(NodeId loss) {
  if (!loss.valid() || static_cast<std::size_t>(loss.v) >= nodes_.size())
    throw std::invalid_argument("backward: invalid loss node");
  if (value(loss).size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar node, got " +
                                shape_str(value(loss).shape()));
  for (Node& n : nodes_) {
    n.reached = false;
    if (!n.grad.empty()) n.grad.fill(T(0));
  }
  grad_acc(loss)[0] = T(1);
  for (std::int32_t i = loss.v; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.reached && n.back) n.back(*this);
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace bufd
