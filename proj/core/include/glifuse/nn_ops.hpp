#pragma once

// Layer primitives on top of the tensor graph: convolution (2 or 3
// spatial axes, cross-correlation semantics, im2col + GEMM), max
// pooling, nearest-neighbor upsampling, concatenation, affine, batch
// normalization and seeded dropout.

#include <cstdint>
#include <vector>

#include "glifuse/rng.hpp"
#include "glifuse/tensor.hpp"

namespace glifuse {

namespace detail {

// C[M x N] += A[M x K] * B[K x N], row-major.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

// C[M x N] += A[M x K] * B[N x K]^T.
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    T* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T acc = T(0);
      for (std::size_t kk = 0; kk < k; ++kk) {
        acc += arow[kk] * brow[kk];
      }
      crow[j] += acc;
    }
  }
}

// C[M x N] += A[K x M]^T * B[K x N].
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a,
             const T* b, T* c) {
  for (std::size_t kk = 0; kk < k; ++kk) {
    const T* arow = a + kk * m;
    const T* brow = b + kk * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

struct ConvGeometry {
  std::size_t batch = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<std::size_t> in_spatial;
  std::vector<std::size_t> kernel_spatial;
  std::vector<std::size_t> out_spatial;
  std::size_t stride = 1;
  std::size_t pad = 0;

  std::size_t spatial_rank() const { return in_spatial.size(); }
  std::size_t in_plane() const {
    std::size_t p = 1;
    for (auto e : in_spatial) p *= e;
    return p;
  }
  std::size_t out_plane() const {
    std::size_t p = 1;
    for (auto e : out_spatial) p *= e;
    return p;
  }
  std::size_t kernel_size() const {
    std::size_t p = 1;
    for (auto e : kernel_spatial) p *= e;
    return p;
  }
  std::size_t col_rows() const { return in_channels * kernel_size(); }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernel,
                           std::size_t stride, std::size_t pad) {
  if (stride == 0) {
    throw std::invalid_argument("conv: stride must be positive");
  }
  const auto& ishape = input.shape();
  const auto& kshape = kernel.shape();
  if (kshape.size() != 4 && kshape.size() != 5) {
    throw std::invalid_argument("conv: kernel must have 2 or 3 spatial axes");
  }
  if (ishape.size() != kshape.size()) {
    throw std::invalid_argument("conv: input/kernel rank mismatch");
  }
  if (ishape[1] != kshape[1]) {
    throw std::invalid_argument("conv: channel mismatch (input " +
                                std::to_string(ishape[1]) + ", kernel " +
                                std::to_string(kshape[1]) + ")");
  }
  ConvGeometry g;
  g.batch = ishape[0];
  g.in_channels = ishape[1];
  g.out_channels = kshape[0];
  g.stride = stride;
  g.pad = pad;
  for (std::size_t i = 2; i < ishape.size(); ++i) {
    const std::size_t in = ishape[i];
    const std::size_t k = kshape[i];
    if (k == 0 || k > in + 2 * pad) {
      throw std::invalid_argument("conv: kernel exceeds padded input");
    }
    g.in_spatial.push_back(in);
    g.kernel_spatial.push_back(k);
    g.out_spatial.push_back((in + 2 * pad - k) / stride + 1);
  }
  return g;
}

// Valid output range [lo, hi) for one axis: positions where
// 0 <= o*stride + tap - pad < extent.
inline void tap_range(std::size_t out_extent, std::size_t in_extent,
                      std::size_t stride, std::size_t pad, std::size_t tap,
                      std::size_t& lo, std::size_t& hi) {
  const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(tap) -
                               static_cast<std::ptrdiff_t>(pad);
  std::ptrdiff_t first = -shift;
  first = first <= 0 ? 0
                     : (first + static_cast<std::ptrdiff_t>(stride) - 1) /
                           static_cast<std::ptrdiff_t>(stride);
  std::ptrdiff_t last =
      (static_cast<std::ptrdiff_t>(in_extent) - 1 - shift) /
      static_cast<std::ptrdiff_t>(stride);
  last = std::min<std::ptrdiff_t>(last, static_cast<std::ptrdiff_t>(out_extent) - 1);
  if (last < first) {
    lo = hi = 0;
    return;
  }
  lo = static_cast<std::size_t>(first);
  hi = static_cast<std::size_t>(last) + 1;
}

// Unfolds one sample into col[col_rows x out_plane].
template <typename T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  const std::size_t p = g.out_plane();
  if (g.spatial_rank() == 2) {
    const std::size_t s0 = g.in_spatial[0], s1 = g.in_spatial[1];
    const std::size_t o0 = g.out_spatial[0], o1 = g.out_spatial[1];
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const T* plane = x + c * s0 * s1;
      for (std::size_t a0 = 0; a0 < g.kernel_spatial[0]; ++a0) {
        std::size_t i_lo, i_hi;
        tap_range(o0, s0, g.stride, g.pad, a0, i_lo, i_hi);
        for (std::size_t a1 = 0; a1 < g.kernel_spatial[1]; ++a1) {
          std::size_t j_lo, j_hi;
          tap_range(o1, s1, g.stride, g.pad, a1, j_lo, j_hi);
          T* dst = col + (row++) * p;
          std::fill(dst, dst + p, T(0));
          for (std::size_t i = i_lo; i < i_hi; ++i) {
            const std::size_t in0 = i * g.stride + a0 - g.pad;
            const T* src = plane + in0 * s1;
            T* out = dst + i * o1;
            for (std::size_t j = j_lo; j < j_hi; ++j) {
              out[j] = src[j * g.stride + a1 - g.pad];
            }
          }
        }
      }
    }
  } else {
    const std::size_t s0 = g.in_spatial[0], s1 = g.in_spatial[1],
                      s2 = g.in_spatial[2];
    const std::size_t o0 = g.out_spatial[0], o1 = g.out_spatial[1],
                      o2 = g.out_spatial[2];
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      const T* grid = x + c * s0 * s1 * s2;
      for (std::size_t a0 = 0; a0 < g.kernel_spatial[0]; ++a0) {
        std::size_t i_lo, i_hi;
        tap_range(o0, s0, g.stride, g.pad, a0, i_lo, i_hi);
        for (std::size_t a1 = 0; a1 < g.kernel_spatial[1]; ++a1) {
          std::size_t j_lo, j_hi;
          tap_range(o1, s1, g.stride, g.pad, a1, j_lo, j_hi);
          for (std::size_t a2 = 0; a2 < g.kernel_spatial[2]; ++a2) {
            std::size_t k_lo, k_hi;
            tap_range(o2, s2, g.stride, g.pad, a2, k_lo, k_hi);
            T* dst = col + (row++) * p;
            std::fill(dst, dst + p, T(0));
            for (std::size_t i = i_lo; i < i_hi; ++i) {
              const std::size_t in0 = i * g.stride + a0 - g.pad;
              for (std::size_t j = j_lo; j < j_hi; ++j) {
                const std::size_t in1 = j * g.stride + a1 - g.pad;
                const T* src = grid + (in0 * s1 + in1) * s2;
                T* out = dst + (i * o1 + j) * o2;
                for (std::size_t k = k_lo; k < k_hi; ++k) {
                  out[k] = src[k * g.stride + a2 - g.pad];
                }
              }
            }
          }
        }
      }
    }
  }
}

// Scatters col gradients back onto one input sample (accumulating).
template <typename T>
void col2im(const ConvGeometry& g, const T* col, T* dx) {
  const std::size_t p = g.out_plane();
  if (g.spatial_rank() == 2) {
    const std::size_t s0 = g.in_spatial[0], s1 = g.in_spatial[1];
    const std::size_t o0 = g.out_spatial[0], o1 = g.out_spatial[1];
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      T* plane = dx + c * s0 * s1;
      for (std::size_t a0 = 0; a0 < g.kernel_spatial[0]; ++a0) {
        std::size_t i_lo, i_hi;
        tap_range(o0, s0, g.stride, g.pad, a0, i_lo, i_hi);
        for (std::size_t a1 = 0; a1 < g.kernel_spatial[1]; ++a1) {
          std::size_t j_lo, j_hi;
          tap_range(o1, s1, g.stride, g.pad, a1, j_lo, j_hi);
          const T* src = col + (row++) * p;
          for (std::size_t i = i_lo; i < i_hi; ++i) {
            const std::size_t in0 = i * g.stride + a0 - g.pad;
            T* dstrow = plane + in0 * s1;
            const T* srow = src + i * o1;
            for (std::size_t j = j_lo; j < j_hi; ++j) {
              dstrow[j * g.stride + a1 - g.pad] += srow[j];
            }
          }
        }
      }
    }
  } else {
    const std::size_t s0 = g.in_spatial[0], s1 = g.in_spatial[1],
                      s2 = g.in_spatial[2];
    const std::size_t o0 = g.out_spatial[0], o1 = g.out_spatial[1],
                      o2 = g.out_spatial[2];
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.in_channels; ++c) {
      T* grid = dx + c * s0 * s1 * s2;
      for (std::size_t a0 = 0; a0 < g.kernel_spatial[0]; ++a0) {
        std::size_t i_lo, i_hi;
        tap_range(o0, s0, g.stride, g.pad, a0, i_lo, i_hi);
        for (std::size_t a1 = 0; a1 < g.kernel_spatial[1]; ++a1) {
          std::size_t j_lo, j_hi;
          tap_range(o1, s1, g.stride, g.pad, a1, j_lo, j_hi);
          for (std::size_t a2 = 0; a2 < g.kernel_spatial[2]; ++a2) {
            std::size_t k_lo, k_hi;
            tap_range(o2, s2, g.stride, g.pad, a2, k_lo, k_hi);
            const T* src = col + (row++) * p;
            for (std::size_t i = i_lo; i < i_hi; ++i) {
              const std::size_t in0 = i * g.stride + a0 - g.pad;
              for (std::size_t j = j_lo; j < j_hi; ++j) {
                const std::size_t in1 = j * g.stride + a1 - g.pad;
                T* dst = grid + (in0 * s1 + in1) * s2;
                const T* srow = src + (i * o1 + j) * o2;
                for (std::size_t k = k_lo; k < k_hi; ++k) {
                  dst[k * g.stride + a2 - g.pad] += srow[k];
                }
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation of input [N, Cin, spatial...] with kernel
// [Cout, Cin, k...]; output extent per axis is
// (in + 2*pad - k)/stride + 1. `bias` is [Cout] or undefined.
template <typename T>
Tensor<T> conv(const Tensor<T>& input, const Tensor<T>& kernel,
               const Tensor<T>& bias, std::size_t stride = 1,
               std::size_t pad = 0) {
  const auto g = detail::conv_geometry(input, kernel, stride, pad);
  const bool has_bias = bias.defined();
  if (has_bias &&
      (bias.rank() != 1 || bias.extent(0) != g.out_channels)) {
    throw std::invalid_argument("conv: bias must be [out_channels]");
  }

  const std::size_t p = g.out_plane();
  const std::size_t rows = g.col_rows();
  std::vector<std::size_t> out_shape{g.batch, g.out_channels};
  for (auto e : g.out_spatial) out_shape.push_back(e);

  std::vector<T> out(g.batch * g.out_channels * p, T(0));
  std::vector<T> col(rows * p);
  const auto& x = input.data();
  const auto& w = kernel.data();
  for (std::size_t n = 0; n < g.batch; ++n) {
    detail::im2col(g, x.data() + n * g.in_channels * g.in_plane(), col.data());
    T* dst = out.data() + n * g.out_channels * p;
    detail::gemm_nn(g.out_channels, p, rows, w.data(), col.data(), dst);
    if (has_bias) {
      const auto& bv = bias.data();
      for (std::size_t m = 0; m < g.out_channels; ++m) {
        T* row = dst + m * p;
        for (std::size_t i = 0; i < p; ++i) row[i] += bv[m];
      }
    }
  }

  std::vector<Tensor<T>> inputs{input, kernel};
  if (has_bias) inputs.push_back(bias);
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), std::move(inputs),
      [g, has_bias](detail::TensorNode<T>& self) {
        auto& in_node = *self.parents[0];
        auto& k_node = *self.parents[1];
        const std::size_t p = g.out_plane();
        const std::size_t rows = g.col_rows();
        std::vector<T> col(rows * p);
        std::vector<T> dcol;
        if (in_node.requires_grad) {
          dcol.resize(rows * p);
          in_node.ensure_grad();
        }
        if (k_node.requires_grad) k_node.ensure_grad();
        for (std::size_t n = 0; n < g.batch; ++n) {
          const T* dout = self.grad.data() + n * g.out_channels * p;
          if (k_node.requires_grad) {
            detail::im2col(g, in_node.value.data() + n * g.in_channels * g.in_plane(),
                           col.data());
            detail::gemm_nt(g.out_channels, rows, p, dout, col.data(),
                            k_node.grad.data());
          }
          if (in_node.requires_grad) {
            std::fill(dcol.begin(), dcol.end(), T(0));
            detail::gemm_tn(rows, p, g.out_channels, k_node.value.data(), dout,
                            dcol.data());
            detail::col2im(g, dcol.data(),
                           in_node.grad.data() + n * g.in_channels * g.in_plane());
          }
        }
        if (has_bias && self.parents[2]->requires_grad) {
          auto& b_node = *self.parents[2];
          b_node.ensure_grad();
          for (std::size_t n = 0; n < g.batch; ++n) {
            const T* dout = self.grad.data() + n * g.out_channels * p;
            for (std::size_t m = 0; m < g.out_channels; ++m) {
              T acc = T(0);
              const T* row = dout + m * p;
              for (std::size_t i = 0; i < p; ++i) acc += row[i];
              b_node.grad[m] += acc;
            }
          }
        }
      });
}

// Per-window maximum over [N, C, spatial...]; optional -inf padding.
// Gradient routes to the first maximal element of each window.
template <typename T>
Tensor<T> maxpool(const Tensor<T>& input, std::size_t window,
                  std::size_t stride, std::size_t pad = 0) {
  if (window == 0 || stride == 0) {
    throw std::invalid_argument("maxpool: window and stride must be positive");
  }
  if (pad >= window) {
    throw std::invalid_argument("maxpool: pad must be smaller than window");
  }
  const auto& shape = input.shape();
  if (shape.size() != 4 && shape.size() != 5) {
    throw std::invalid_argument("maxpool: input must have 2 or 3 spatial axes");
  }
  const std::size_t spatial_rank = shape.size() - 2;
  std::vector<std::size_t> in_sp(shape.begin() + 2, shape.end());
  std::vector<std::size_t> out_sp(spatial_rank);
  for (std::size_t i = 0; i < spatial_rank; ++i) {
    if (window > in_sp[i] + 2 * pad) {
      throw std::invalid_argument("maxpool: window larger than padded input");
    }
    out_sp[i] = (in_sp[i] + 2 * pad - window) / stride + 1;
  }
  const std::size_t planes = shape[0] * shape[1];
  std::size_t in_plane = 1, out_plane = 1;
  for (std::size_t i = 0; i < spatial_rank; ++i) {
    in_plane *= in_sp[i];
    out_plane *= out_sp[i];
  }

  std::vector<T> out(planes * out_plane);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(planes * out_plane);
  const auto& x = input.data();

  // Row-major walk over the window keeps the first-maximum rule exact.
  auto pool_plane_2d = [&](const T* src, T* dst, std::uint32_t* arg) {
    const std::size_t s0 = in_sp[0], s1 = in_sp[1];
    for (std::size_t i = 0; i < out_sp[0]; ++i) {
      for (std::size_t j = 0; j < out_sp[1]; ++j) {
        T best{};
        std::uint32_t best_at = 0;
        bool seen = false;
        for (std::size_t a = 0; a < window; ++a) {
          const std::ptrdiff_t in0 = static_cast<std::ptrdiff_t>(i * stride + a) -
                                     static_cast<std::ptrdiff_t>(pad);
          if (in0 < 0 || in0 >= static_cast<std::ptrdiff_t>(s0)) continue;
          for (std::size_t b = 0; b < window; ++b) {
            const std::ptrdiff_t in1 = static_cast<std::ptrdiff_t>(j * stride + b) -
                                       static_cast<std::ptrdiff_t>(pad);
            if (in1 < 0 || in1 >= static_cast<std::ptrdiff_t>(s1)) continue;
            const std::size_t at = static_cast<std::size_t>(in0) * s1 +
                                   static_cast<std::size_t>(in1);
            if (!seen || src[at] > best) {
              best = src[at];
              best_at = static_cast<std::uint32_t>(at);
              seen = true;
            }
          }
        }
        dst[i * out_sp[1] + j] = best;
        arg[i * out_sp[1] + j] = best_at;
      }
    }
  };

  auto pool_plane_3d = [&](const T* src, T* dst, std::uint32_t* arg) {
    const std::size_t s1 = in_sp[1], s2 = in_sp[2];
    for (std::size_t i = 0; i < out_sp[0]; ++i) {
      for (std::size_t j = 0; j < out_sp[1]; ++j) {
        for (std::size_t k = 0; k < out_sp[2]; ++k) {
          T best{};
          std::uint32_t best_at = 0;
          bool seen = false;
          for (std::size_t a = 0; a < window; ++a) {
            const std::ptrdiff_t in0 = static_cast<std::ptrdiff_t>(i * stride + a) -
                                       static_cast<std::ptrdiff_t>(pad);
            if (in0 < 0 || in0 >= static_cast<std::ptrdiff_t>(in_sp[0])) continue;
            for (std::size_t b = 0; b < window; ++b) {
              const std::ptrdiff_t in1 = static_cast<std::ptrdiff_t>(j * stride + b) -
                                         static_cast<std::ptrdiff_t>(pad);
              if (in1 < 0 || in1 >= static_cast<std::ptrdiff_t>(s1)) continue;
              for (std::size_t c = 0; c < window; ++c) {
                const std::ptrdiff_t in2 = static_cast<std::ptrdiff_t>(k * stride + c) -
                                           static_cast<std::ptrdiff_t>(pad);
                if (in2 < 0 || in2 >= static_cast<std::ptrdiff_t>(s2)) continue;
                const std::size_t at =
                    (static_cast<std::size_t>(in0) * s1 +
                     static_cast<std::size_t>(in1)) *
                        s2 +
                    static_cast<std::size_t>(in2);
                if (!seen || src[at] > best) {
                  best = src[at];
                  best_at = static_cast<std::uint32_t>(at);
                  seen = true;
                }
              }
            }
          }
          const std::size_t o = (i * out_sp[1] + j) * out_sp[2] + k;
          dst[o] = best;
          arg[o] = best_at;
        }
      }
    }
  };

  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.data() + pl * in_plane;
    T* dst = out.data() + pl * out_plane;
    std::uint32_t* arg = argmax->data() + pl * out_plane;
    if (spatial_rank == 2) {
      pool_plane_2d(src, dst, arg);
    } else {
      pool_plane_3d(src, dst, arg);
    }
  }

  std::vector<std::size_t> out_shape{shape[0], shape[1]};
  for (auto e : out_sp) out_shape.push_back(e);
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), {input},
      [argmax, in_plane, out_plane, planes](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const std::uint32_t* arg = argmax->data() + pl * out_plane;
          const T* g = self.grad.data() + pl * out_plane;
          T* dst = p.grad.data() + pl * in_plane;
          for (std::size_t i = 0; i < out_plane; ++i) {
            dst[arg[i]] += g[i];
          }
        }
      });
}

// Nearest-neighbor repetition by an integer factor per spatial axis.
template <typename T>
Tensor<T> upsample(const Tensor<T>& input, std::size_t factor) {
  if (factor < 1) {
    throw std::invalid_argument("upsample: factor must be >= 1");
  }
  const auto& shape = input.shape();
  if (shape.size() != 4 && shape.size() != 5) {
    throw std::invalid_argument("upsample: input must have 2 or 3 spatial axes");
  }
  const std::size_t spatial_rank = shape.size() - 2;
  const std::size_t planes = shape[0] * shape[1];
  std::vector<std::size_t> in_sp(shape.begin() + 2, shape.end());
  std::vector<std::size_t> out_sp;
  std::size_t in_plane = 1, out_plane = 1;
  for (auto e : in_sp) {
    out_sp.push_back(e * factor);
    in_plane *= e;
    out_plane *= e * factor;
  }

  std::vector<T> out(planes * out_plane);
  const auto& x = input.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = x.data() + pl * in_plane;
    T* dst = out.data() + pl * out_plane;
    if (spatial_rank == 2) {
      for (std::size_t i = 0; i < out_sp[0]; ++i) {
        const T* srow = src + (i / factor) * in_sp[1];
        T* drow = dst + i * out_sp[1];
        for (std::size_t j = 0; j < out_sp[1]; ++j) {
          drow[j] = srow[j / factor];
        }
      }
    } else {
      for (std::size_t i = 0; i < out_sp[0]; ++i) {
        for (std::size_t j = 0; j < out_sp[1]; ++j) {
          const T* srow = src + ((i / factor) * in_sp[1] + (j / factor)) * in_sp[2];
          T* drow = dst + (i * out_sp[1] + j) * out_sp[2];
          for (std::size_t k = 0; k < out_sp[2]; ++k) {
            drow[k] = srow[k / factor];
          }
        }
      }
    }
  }

  std::vector<std::size_t> out_shape{shape[0], shape[1]};
  for (auto e : out_sp) out_shape.push_back(e);
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), {input},
      [factor, planes, in_plane, out_plane, in_sp,
       out_sp, spatial_rank](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const T* g = self.grad.data() + pl * out_plane;
          T* dst = p.grad.data() + pl * in_plane;
          if (spatial_rank == 2) {
            for (std::size_t i = 0; i < out_sp[0]; ++i) {
              T* drow = dst + (i / factor) * in_sp[1];
              const T* grow = g + i * out_sp[1];
              for (std::size_t j = 0; j < out_sp[1]; ++j) {
                drow[j / factor] += grow[j];
              }
            }
          } else {
            for (std::size_t i = 0; i < out_sp[0]; ++i) {
              for (std::size_t j = 0; j < out_sp[1]; ++j) {
                T* drow = dst + ((i / factor) * in_sp[1] + (j / factor)) * in_sp[2];
                const T* grow = g + (i * out_sp[1] + j) * out_sp[2];
                for (std::size_t k = 0; k < out_sp[2]; ++k) {
                  drow[k / factor] += grow[k];
                }
              }
            }
          }
        }
      });
}

// Concatenation of two tensors along `axis`; all other extents must match.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != sb.size() || axis >= sa.size()) {
    throw std::invalid_argument("concat: rank mismatch or bad axis");
  }
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (i != axis && sa[i] != sb[i]) {
      throw std::invalid_argument("concat: non-axis extents must match");
    }
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= sa[i];
  for (std::size_t i = axis + 1; i < sa.size(); ++i) inner *= sa[i];
  const std::size_t block_a = sa[axis] * inner;
  const std::size_t block_b = sb[axis] * inner;

  std::vector<std::size_t> out_shape = sa;
  out_shape[axis] = sa[axis] + sb[axis];
  std::vector<T> out(outer * (block_a + block_b));
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy(av.begin() + o * block_a, av.begin() + (o + 1) * block_a,
              out.begin() + o * (block_a + block_b));
    std::copy(bv.begin() + o * block_b, bv.begin() + (o + 1) * block_b,
              out.begin() + o * (block_a + block_b) + block_a);
  }
  return detail::make_op<T>(
      std::move(out_shape), std::move(out), {a, b},
      [outer, block_a, block_b](detail::TensorNode<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const std::size_t block = block_a + block_b;
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t o = 0; o < outer; ++o) {
            const T* g = self.grad.data() + o * block;
            T* dst = pa.grad.data() + o * block_a;
            for (std::size_t i = 0; i < block_a; ++i) dst[i] += g[i];
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t o = 0; o < outer; ++o) {
            const T* g = self.grad.data() + o * block + block_a;
            T* dst = pb.grad.data() + o * block_b;
            for (std::size_t i = 0; i < block_b; ++i) dst[i] += g[i];
          }
        }
      });
}

// x[N, D] * W[D, M] + b[M]. `b` may be undefined.
template <typename T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.rank() != 2 || w.rank() != 2) {
    throw std::invalid_argument("affine: x and W must be rank-2");
  }
  const std::size_t n = x.extent(0), d = x.extent(1);
  if (w.extent(0) != d) {
    throw std::invalid_argument("affine: inner extents do not match");
  }
  const std::size_t m = w.extent(1);
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.extent(0) != m)) {
    throw std::invalid_argument("affine: bias must be [M]");
  }
  std::vector<T> out(n * m, T(0));
  detail::gemm_nn(n, m, d, x.data().data(), w.data().data(), out.data());
  if (has_bias) {
    const auto& bv = b.data();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j) out[i * m + j] += bv[j];
    }
  }
  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  return detail::make_op<T>(
      {n, m}, std::move(out), std::move(inputs),
      [n, d, m, has_bias](detail::TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pw = *self.parents[1];
        if (px.requires_grad) {
          px.ensure_grad();
          detail::gemm_nt(n, d, m, self.grad.data(), pw.value.data(),
                          px.grad.data());
        }
        if (pw.requires_grad) {
          pw.ensure_grad();
          detail::gemm_tn(d, m, n, px.value.data(), self.grad.data(),
                          pw.grad.data());
        }
        if (has_bias && self.parents[2]->requires_grad) {
          auto& pb = *self.parents[2];
          pb.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < m; ++j) {
              pb.grad[j] += self.grad[i * m + j];
            }
          }
        }
      });
}

// Mean over the spatial axes of [N, C, spatial...] -> [N, C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  const auto& shape = x.shape();
  if (shape.size() < 3) {
    throw std::invalid_argument("global_avg_pool: need spatial axes");
  }
  const std::size_t planes = shape[0] * shape[1];
  const std::size_t spatial = x.numel() / planes;
  std::vector<T> out(planes);
  const auto& xv = x.data();
  const T inv = T(1) / static_cast<T>(spatial);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    T acc = T(0);
    const T* src = xv.data() + pl * spatial;
    for (std::size_t i = 0; i < spatial; ++i) acc += src[i];
    out[pl] = acc * inv;
  }
  return detail::make_op<T>(
      {shape[0], shape[1]}, std::move(out), {x},
      [planes, spatial, inv](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
          const T g = self.grad[pl] * inv;
          T* dst = p.grad.data() + pl * spatial;
          for (std::size_t i = 0; i < spatial; ++i) dst[i] += g;
        }
      });
}

// Running statistics for one batch_norm layer.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

// Channelwise batch normalization over [N, C, spatial...] (or [N, C]).
// Train mode normalizes by batch statistics and updates the running
// estimates; eval mode uses the running estimates.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                     const Tensor<T>& beta, BatchNormState<T>& state,
                     Mode mode, T eps = T(1e-5), T momentum = T(0.1)) {
  const auto& shape = x.shape();
  if (shape.size() < 2) {
    throw std::invalid_argument("batch_norm: input must be [N, C, ...]");
  }
  const std::size_t n = shape[0];
  const std::size_t c = shape[1];
  if (gamma.numel() != c || beta.numel() != c ||
      state.running_mean.size() != c || state.running_var.size() != c) {
    throw std::invalid_argument("batch_norm: channel count mismatch");
  }
  std::size_t spatial = 1;
  for (std::size_t i = 2; i < shape.size(); ++i) spatial *= shape[i];
  const std::size_t m = n * spatial;  // samples per channel

  const auto& xv = x.data();
  auto mean_c = std::make_shared<std::vector<T>>(c, T(0));
  auto rstd_c = std::make_shared<std::vector<T>>(c, T(0));

  if (mode == Mode::kTrain) {
    std::vector<T> var(c, T(0));
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = xv.data() + (b * c + ch) * spatial;
        T acc = T(0);
        for (std::size_t i = 0; i < spatial; ++i) acc += src[i];
        (*mean_c)[ch] += acc;
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) (*mean_c)[ch] /= static_cast<T>(m);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T* src = xv.data() + (b * c + ch) * spatial;
        const T mu = (*mean_c)[ch];
        T acc = T(0);
        for (std::size_t i = 0; i < spatial; ++i) {
          const T d = src[i] - mu;
          acc += d * d;
        }
        var[ch] += acc;
      }
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      var[ch] /= static_cast<T>(m);
      (*rstd_c)[ch] = T(1) / std::sqrt(var[ch] + eps);
      const T unbiased =
          m > 1 ? var[ch] * static_cast<T>(m) / static_cast<T>(m - 1) : var[ch];
      state.running_mean[ch] =
          (T(1) - momentum) * state.running_mean[ch] + momentum * (*mean_c)[ch];
      state.running_var[ch] =
          (T(1) - momentum) * state.running_var[ch] + momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      (*mean_c)[ch] = state.running_mean[ch];
      (*rstd_c)[ch] = T(1) / std::sqrt(state.running_var[ch] + eps);
    }
  }

  std::vector<T> out(xv.size());
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const T* src = xv.data() + (b * c + ch) * spatial;
      T* dst = out.data() + (b * c + ch) * spatial;
      const T mu = (*mean_c)[ch];
      const T rs = (*rstd_c)[ch];
      const T g = gv[ch];
      const T bb = bv[ch];
      for (std::size_t i = 0; i < spatial; ++i) {
        dst[i] = (src[i] - mu) * rs * g + bb;
      }
    }
  }

  const bool train = mode == Mode::kTrain;
  return detail::make_op<T>(
      x.shape(), std::move(out), {x, gamma, beta},
      [n, c, spatial, m, mean_c, rstd_c, train](detail::TensorNode<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        // Per-channel sums of dy and dy*xhat.
        std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t ch = 0; ch < c; ++ch) {
            const T* dy = self.grad.data() + (b * c + ch) * spatial;
            const T* xv = px.value.data() + (b * c + ch) * spatial;
            const T mu = (*mean_c)[ch];
            const T rs = (*rstd_c)[ch];
            T a = T(0), d = T(0);
            for (std::size_t i = 0; i < spatial; ++i) {
              a += dy[i];
              d += dy[i] * (xv[i] - mu) * rs;
            }
            sum_dy[ch] += a;
            sum_dy_xhat[ch] += d;
          }
        }
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) pg.grad[ch] += sum_dy_xhat[ch];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t ch = 0; ch < c; ++ch) pb.grad[ch] += sum_dy[ch];
        }
        if (px.requires_grad) {
          px.ensure_grad();
          const T inv_m = T(1) / static_cast<T>(m);
          for (std::size_t b = 0; b < n; ++b) {
            for (std::size_t ch = 0; ch < c; ++ch) {
              const T* dy = self.grad.data() + (b * c + ch) * spatial;
              const T* xv = px.value.data() + (b * c + ch) * spatial;
              T* dx = px.grad.data() + (b * c + ch) * spatial;
              const T mu = (*mean_c)[ch];
              const T rs = (*rstd_c)[ch];
              const T g = pg.value[ch];
              if (train) {
                for (std::size_t i = 0; i < spatial; ++i) {
                  const T xhat = (xv[i] - mu) * rs;
                  dx[i] += g * rs *
                           (dy[i] - inv_m * sum_dy[ch] -
                            xhat * inv_m * sum_dy_xhat[ch]);
                }
              } else {
                for (std::size_t i = 0; i < spatial; ++i) {
                  dx[i] += g * rs * dy[i];
                }
              }
            }
          }
        }
      });
}

// Seeded inverted dropout. Train mode zeroes a Bernoulli(rate) mask and
// scales survivors by 1/(1-rate); eval mode is the identity.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::uint64_t seed,
                  Mode mode) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0,1)");
  }
  if (mode == Mode::kEval || rate == 0.0) {
    return x;
  }
  Rng rng(seed);
  auto mask = std::make_shared<std::vector<T>>(x.numel());
  const T keep_scale = T(1.0 / (1.0 - rate));
  const auto& xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const T m = rng.uniform() >= rate ? keep_scale : T(0);
    (*mask)[i] = m;
    out[i] = xv[i] * m;
  }
  return detail::make_op<T>(
      x.shape(), std::move(out), {x}, [mask](detail::TensorNode<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        p.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          p.grad[i] += self.grad[i] * (*mask)[i];
        }
      });
}

// Constant one-hot map [N, num_classes, spatial...] built from labels
// (row-major over batch then spatial).
template <typename T>
Tensor<T> one_hot_map(const std::vector<std::uint8_t>& labels, std::size_t batch,
                      std::size_t num_classes,
                      const std::vector<std::size_t>& spatial) {
  std::size_t plane = 1;
  for (auto e : spatial) plane *= e;
  if (labels.size() != batch * plane) {
    throw std::invalid_argument("one_hot_map: label count mismatch");
  }
  std::vector<std::size_t> shape{batch, num_classes};
  for (auto e : spatial) shape.push_back(e);
  std::vector<T> data(batch * num_classes * plane, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < plane; ++i) {
      const std::uint8_t l = labels[b * plane + i];
      if (l >= num_classes) {
        throw std::invalid_argument("one_hot_map: label out of range");
      }
      data[(b * num_classes + l) * plane + i] = T(1);
    }
  }
  return Tensor<T>::from(std::move(shape), std::move(data));
}

}  // namespace glifuse
