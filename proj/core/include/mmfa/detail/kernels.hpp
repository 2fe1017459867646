#ifndef MMFA_DETAIL_KERNELS_HPP_
#define MMFA_DETAIL_KERNELS_HPP_

#include <cmath>
#include <cstddef>

namespace mmfa::detail {

// Forward kernels shared by the autodiff graph (T = double) and the 32-bit
// inference fast path (T = float). Raw pointers, row-major, caller-validated
// shapes.

template <typename T>
void dense_forward(const T* x, const T* w, const T* b, std::size_t n,
                   std::size_t in_dim, std::size_t out_dim, T* y) {
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x + i * in_dim;
    T* yi = y + i * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      T acc = b[o];
      const T* wo = w + o * in_dim;
      for (std::size_t k = 0; k < in_dim; ++k) acc += wo[k] * xi[k];
      yi[o] = acc;
    }
  }
}

template <typename T>
void relu_forward(const T* x, std::size_t n, T* y) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

/// Normalizes `groups` contiguous groups of `group_size` values to zero mean
/// and unit population variance. Optionally records 1/sqrt(var+eps) per group.
template <typename T>
void group_norm_forward(const T* x, std::size_t groups, std::size_t group_size,
                        T eps, T* y, T* inv_std_out) {
  for (std::size_t g = 0; g < groups; ++g) {
    const T* xg = x + g * group_size;
    T* yg = y + g * group_size;
    T mean = T(0);
    for (std::size_t i = 0; i < group_size; ++i) mean += xg[i];
    mean /= static_cast<T>(group_size);
    T var = T(0);
    for (std::size_t i = 0; i < group_size; ++i) {
      T d = xg[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(group_size);
    T inv_std = T(1) / std::sqrt(var + eps);
    for (std::size_t i = 0; i < group_size; ++i) yg[i] = (xg[i] - mean) * inv_std;
    if (inv_std_out) inv_std_out[g] = inv_std;
  }
}

/// Per-channel affine y = gamma[c] * x + beta[c] on [n, channels, spatial]
/// layout (spatial == 1 for rank-2 inputs).
template <typename T>
void channel_affine_forward(const T* x, const T* gamma, const T* beta,
                            std::size_t n, std::size_t channels,
                            std::size_t spatial, T* y) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T g = gamma[c];
      const T b = beta[c];
      const T* xc = x + (i * channels + c) * spatial;
      T* yc = y + (i * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) yc[s] = g * xc[s] + b;
    }
  }
}

/// Per-channel normalization with externally supplied statistics, as used by
/// eval-mode batch norm: y = (x - mean[c]) / sqrt(var[c] + eps).
template <typename T>
void channel_norm_apply(const T* x, const T* mean, const T* var, T eps,
                        std::size_t n, std::size_t channels, std::size_t spatial,
                        T* y) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T m = mean[c];
      const T inv_std = T(1) / std::sqrt(var[c] + eps);
      const T* xc = x + (i * channels + c) * spatial;
      T* yc = y + (i * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) yc[s] = (xc[s] - m) * inv_std;
    }
  }
}

/// Per-channel mean and population variance over batch and spatial axes.
template <typename T>
void channel_batch_stats(const T* x, std::size_t n, std::size_t channels,
                         std::size_t spatial, T* mean, T* var) {
  const std::size_t count = n * spatial;
  for (std::size_t c = 0; c < channels; ++c) {
    T m = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T* xc = x + (i * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) m += xc[s];
    }
    m /= static_cast<T>(count);
    T v = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T* xc = x + (i * channels + c) * spatial;
      for (std::size_t s = 0; s < spatial; ++s) {
        T d = xc[s] - m;
        v += d * d;
      }
    }
    v /= static_cast<T>(count);
    mean[c] = m;
    var[c] = v;
  }
}

/// Valid (unpadded) 2-D convolution. x: [n, cin, h, w], weight:
/// [cout, cin, kh, kw], y: [n, cout, oh, ow] with oh = (h-kh)/stride + 1.
template <typename T>
void conv2d_forward(const T* x, const T* w, const T* b, std::size_t n,
                    std::size_t cin, std::size_t h, std::size_t wd,
                    std::size_t cout, std::size_t kh, std::size_t kw,
                    std::size_t stride, T* y) {
  const std::size_t oh = (h - kh) / stride + 1;
  const std::size_t ow = (wd - kw) / stride + 1;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t co = 0; co < cout; ++co) {
      T* yo = y + ((i * cout + co) * oh) * ow;
      for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t col = 0; col < ow; ++col) {
          T acc = b[co];
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const T* xc = x + ((i * cin + ci) * h) * wd;
            const T* wc = w + ((co * cin + ci) * kh) * kw;
            for (std::size_t u = 0; u < kh; ++u) {
              const T* xrow = xc + (r * stride + u) * wd + col * stride;
              const T* wrow = wc + u * kw;
              for (std::size_t v = 0; v < kw; ++v) acc += wrow[v] * xrow[v];
            }
          }
          yo[r * ow + col] = acc;
        }
      }
    }
  }
}

template <typename T>
void global_avg_pool_forward(const T* x, std::size_t n, std::size_t channels,
                             std::size_t spatial, T* y) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* xc = x + (i * channels + c) * spatial;
      T acc = T(0);
      for (std::size_t s = 0; s < spatial; ++s) acc += xc[s];
      y[i * channels + c] = acc / static_cast<T>(spatial);
    }
  }
}

}  // namespace mmfa::detail

#endif  // MMFA_DETAIL_KERNELS_HPP_
