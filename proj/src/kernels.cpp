#include "evb/kernels.hpp"

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <stdexcept>
#include <vector>

namespace evb::nn::kernels {

namespace {

// Columns per micro-tile: two 64-byte vectors per accumulator row.
template <typename T>
constexpr int kTileCols = 128 / static_cast<int>(sizeof(T));
constexpr int kTileRows = 4;

// Target size of one im2col chunk, in elements.
constexpr std::size_t kColumnBudget = std::size_t{1} << 20;

// acc[rows x NR] = A[rows x k] * panel[k x NR]; panel is packed contiguously.
template <typename T, int Rows>
inline void micro_tile(int k, const T* a, int lda, const T* panel, T* c, int ldc, int cols) {
  constexpr int NR = kTileCols<T>;
  T acc[Rows][NR] = {};
  for (int p = 0; p < k; ++p) {
    const T* brow = panel + static_cast<std::size_t>(p) * NR;
    for (int i = 0; i < Rows; ++i) {
      const T av = a[static_cast<std::size_t>(i) * lda + p];
      for (int j = 0; j < NR; ++j) acc[i][j] += av * brow[j];
    }
  }
  for (int i = 0; i < Rows; ++i) {
    T* crow = c + static_cast<std::size_t>(i) * ldc;
    for (int j = 0; j < cols; ++j) crow[j] += acc[i][j];
  }
}

template <typename T>
void tile_rows(int rows, int k, const T* a, int lda, const T* panel, T* c, int ldc, int cols) {
  switch (rows) {
    case 4: micro_tile<T, 4>(k, a, lda, panel, c, ldc, cols); break;
    case 3: micro_tile<T, 3>(k, a, lda, panel, c, ldc, cols); break;
    case 2: micro_tile<T, 2>(k, a, lda, panel, c, ldc, cols); break;
    default: micro_tile<T, 1>(k, a, lda, panel, c, ldc, cols); break;
  }
}

template <typename T>
void im2col_rows(const ConvGeometry& g, const T* input, int y0, int y1, T* col) {
  const int k = g.kernel;
  const int pad = g.pad();
  const int W = g.width;
  const int H = g.height;
  const int n = (y1 - y0) * W;
  const int K = g.reduction();
#pragma omp parallel for schedule(static)
  for (int r = 0; r < K; ++r) {
    const int ic = r / (k * k);
    const int ky = (r / k) % k;
    const int kx = r % k;
    const T* plane = input + static_cast<std::size_t>(ic) * H * W;
    T* dst = col + static_cast<std::size_t>(r) * n;
    const int x_lo = std::max(0, pad - kx);
    const int x_hi = std::min(W, W + pad - kx);
    for (int y = y0; y < y1; ++y) {
      T* out = dst + static_cast<std::size_t>(y - y0) * W;
      const int iy = y + ky - pad;
      if (iy < 0 || iy >= H) {
        std::fill(out, out + W, T(0));
        continue;
      }
      const T* src = plane + static_cast<std::size_t>(iy) * W + (kx - pad);
      std::fill(out, out + x_lo, T(0));
      std::copy(src + x_lo, src + x_hi, out + x_lo);
      std::fill(out + x_hi, out + W, T(0));
    }
  }
}

template <typename T>
void col2im_rows(const ConvGeometry& g, const T* col, int y0, int y1, T* grad_input) {
  const int k = g.kernel;
  const int pad = g.pad();
  const int W = g.width;
  const int H = g.height;
  const int n = (y1 - y0) * W;
  // One thread per input channel: every write lands in that channel's plane.
#pragma omp parallel for schedule(static)
  for (int ic = 0; ic < g.in_channels; ++ic) {
    T* plane = grad_input + static_cast<std::size_t>(ic) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int r = (ic * k + ky) * k + kx;
        const T* src = col + static_cast<std::size_t>(r) * n;
        const int x_lo = std::max(0, pad - kx);
        const int x_hi = std::min(W, W + pad - kx);
        for (int y = y0; y < y1; ++y) {
          const int iy = y + ky - pad;
          if (iy < 0 || iy >= H) continue;
          const T* s = src + static_cast<std::size_t>(y - y0) * W;
          T* d = plane + static_cast<std::size_t>(iy) * W + (kx - pad);
          for (int x = x_lo; x < x_hi; ++x) d[x] += s[x];
        }
      }
    }
  }
}

int rows_per_chunk(const ConvGeometry& g) {
  const std::size_t per_row = static_cast<std::size_t>(g.reduction()) * g.width;
  return static_cast<int>(std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(per_row, 1), 1, g.height));
}

template <typename T>
void transpose(const T* src, int rows, int cols, int ld_src, T* dst) {
  // dst[cols x rows]
  constexpr int B = 32;
  for (int r0 = 0; r0 < rows; r0 += B) {
    for (int c0 = 0; c0 < cols; c0 += B) {
      const int r1 = std::min(rows, r0 + B);
      const int c1 = std::min(cols, c0 + B);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) dst[static_cast<std::size_t>(c) * rows + r] = src[static_cast<std::size_t>(r) * ld_src + c];
      }
    }
  }
}

void check(const ConvGeometry& g) {
  if (g.kernel < 1 || g.kernel % 2 == 0) throw std::invalid_argument("convolution kernel must be odd");
  if (g.in_channels < 1 || g.out_channels < 1 || g.height < 1 || g.width < 1) {
    throw std::invalid_argument("convolution extents must be positive");
  }
}

}  // namespace

template <typename T>
void gemm_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  constexpr int NR = kTileCols<T>;
  if (m <= 0 || n <= 0 || k <= 0) return;
  const int col_blocks = (n + NR - 1) / NR;
#pragma omp parallel
  {
    std::vector<T> panel(static_cast<std::size_t>(k) * NR);
#pragma omp for schedule(static)
    for (int jb = 0; jb < col_blocks; ++jb) {
      const int j0 = jb * NR;
      const int cols = std::min(NR, n - j0);
      for (int p = 0; p < k; ++p) {
        const T* src = b + static_cast<std::size_t>(p) * ldb + j0;
        T* dst = panel.data() + static_cast<std::size_t>(p) * NR;
        std::copy(src, src + cols, dst);
        std::fill(dst + cols, dst + NR, T(0));
      }
      for (int i0 = 0; i0 < m; i0 += kTileRows) {
        const int rows = std::min(kTileRows, m - i0);
        tile_rows(rows, k, a + static_cast<std::size_t>(i0) * lda, lda, panel.data(),
                  c + static_cast<std::size_t>(i0) * ldc + j0, ldc, cols);
      }
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output) {
  check(g);
  const std::size_t hw = static_cast<std::size_t>(g.height) * g.width;
  for (int oc = 0; oc < g.out_channels; ++oc) {
    std::fill(output + oc * hw, output + (oc + 1) * hw, bias ? bias[oc] : T(0));
  }
  const int K = g.reduction();
  if (g.kernel == 1) {
    gemm_accumulate(g.out_channels, static_cast<int>(hw), K, weight, K, input, static_cast<int>(hw), output,
                    static_cast<int>(hw));
    return;
  }
  const int chunk = rows_per_chunk(g);
  std::vector<T> col(static_cast<std::size_t>(K) * chunk * g.width);
  for (int y0 = 0; y0 < g.height; y0 += chunk) {
    const int y1 = std::min(g.height, y0 + chunk);
    const int n = (y1 - y0) * g.width;
    im2col_rows(g, input, y0, y1, col.data());
    gemm_accumulate(g.out_channels, n, K, weight, K, col.data(), n, output + static_cast<std::size_t>(y0) * g.width,
                    static_cast<int>(hw));
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_output, const T* weight, T* grad_input) {
  check(g);
  const int K = g.reduction();
  const int hw = g.height * g.width;
  std::vector<T> weight_t(static_cast<std::size_t>(K) * g.out_channels);
  transpose(weight, g.out_channels, K, K, weight_t.data());
  if (g.kernel == 1) {
    gemm_accumulate(K, hw, g.out_channels, weight_t.data(), g.out_channels, grad_output, hw, grad_input, hw);
    return;
  }
  const int chunk = rows_per_chunk(g);
  std::vector<T> col(static_cast<std::size_t>(K) * chunk * g.width);
  for (int y0 = 0; y0 < g.height; y0 += chunk) {
    const int y1 = std::min(g.height, y0 + chunk);
    const int n = (y1 - y0) * g.width;
    std::fill(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(K) * n, T(0));
    gemm_accumulate(K, n, g.out_channels, weight_t.data(), g.out_channels,
                    grad_output + static_cast<std::size_t>(y0) * g.width, hw, col.data(), n);
    col2im_rows(g, col.data(), y0, y1, grad_input);
  }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, const T* input, const T* grad_output, T* grad_weight,
                            T* grad_bias) {
  check(g);
  const int K = g.reduction();
  const int hw = g.height * g.width;
  if (grad_bias) {
#pragma omp parallel for schedule(static)
    for (int oc = 0; oc < g.out_channels; ++oc) {
      const T* src = grad_output + static_cast<std::size_t>(oc) * hw;
      T acc = T(0);
      for (int i = 0; i < hw; ++i) acc += src[i];
      grad_bias[oc] += acc;
    }
  }
  const int chunk = rows_per_chunk(g);
  std::vector<T> col(g.kernel == 1 ? 0 : static_cast<std::size_t>(K) * chunk * g.width);
  std::vector<T> col_t(static_cast<std::size_t>(K) * chunk * g.width);
  for (int y0 = 0; y0 < g.height; y0 += chunk) {
    const int y1 = std::min(g.height, y0 + chunk);
    const int n = (y1 - y0) * g.width;
    const std::size_t offset = static_cast<std::size_t>(y0) * g.width;
    if (g.kernel == 1) {
      transpose(input + offset, K, n, hw, col_t.data());
    } else {
      im2col_rows(g, input, y0, y1, col.data());
      transpose(col.data(), K, n, n, col_t.data());
    }
    gemm_accumulate(g.out_channels, K, n, grad_output + offset, hw, col_t.data(), K, grad_weight, K);
  }
}

namespace reference {

template <typename T>
void gemm_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = T(0);
      for (int p = 0; p < k; ++p) acc += a[static_cast<std::size_t>(i) * lda + p] * b[static_cast<std::size_t>(p) * ldb + j];
      c[static_cast<std::size_t>(i) * ldc + j] += acc;
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output) {
  check(g);
  const int k = g.kernel;
  const int pad = g.pad();
  for (int oc = 0; oc < g.out_channels; ++oc) {
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        T acc = bias ? bias[oc] : T(0);
        for (int ic = 0; ic < g.in_channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y + ky - pad;
            if (iy < 0 || iy >= g.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = x + kx - pad;
              if (ix < 0 || ix >= g.width) continue;
              acc += weight[((static_cast<std::size_t>(oc) * g.in_channels + ic) * k + ky) * k + kx] *
                     input[(static_cast<std::size_t>(ic) * g.height + iy) * g.width + ix];
            }
          }
        }
        output[(static_cast<std::size_t>(oc) * g.height + y) * g.width + x] = acc;
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_output, const T* weight, T* grad_input) {
  check(g);
  const int k = g.kernel;
  const int pad = g.pad();
  for (int oc = 0; oc < g.out_channels; ++oc) {
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const T go = grad_output[(static_cast<std::size_t>(oc) * g.height + y) * g.width + x];
        for (int ic = 0; ic < g.in_channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y + ky - pad;
            if (iy < 0 || iy >= g.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = x + kx - pad;
              if (ix < 0 || ix >= g.width) continue;
              grad_input[(static_cast<std::size_t>(ic) * g.height + iy) * g.width + ix] +=
                  go * weight[((static_cast<std::size_t>(oc) * g.in_channels + ic) * k + ky) * k + kx];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, const T* input, const T* grad_output, T* grad_weight,
                            T* grad_bias) {
  check(g);
  const int k = g.kernel;
  const int pad = g.pad();
  for (int oc = 0; oc < g.out_channels; ++oc) {
    for (int y = 0; y < g.height; ++y) {
      for (int x = 0; x < g.width; ++x) {
        const T go = grad_output[(static_cast<std::size_t>(oc) * g.height + y) * g.width + x];
        if (grad_bias) grad_bias[oc] += go;
        for (int ic = 0; ic < g.in_channels; ++ic) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = y + ky - pad;
            if (iy < 0 || iy >= g.height) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = x + kx - pad;
              if (ix < 0 || ix >= g.width) continue;
              grad_weight[((static_cast<std::size_t>(oc) * g.in_channels + ic) * k + ky) * k + kx] +=
                  go * input[(static_cast<std::size_t>(ic) * g.height + iy) * g.width + ix];
            }
          }
        }
      }
    }
  }
}

}  // namespace reference

#define EVB_INSTANTIATE_KERNELS(T)                                                                          \
  template void gemm_accumulate<T>(int, int, int, const T*, int, const T*, int, T*, int);                   \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);                   \
  template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);                      \
  template void conv2d_backward_params<T>(const ConvGeometry&, const T*, const T*, T*, T*);                 \
  template void reference::gemm_accumulate<T>(int, int, int, const T*, int, const T*, int, T*, int);        \
  template void reference::conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);        \
  template void reference::conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);           \
  template void reference::conv2d_backward_params<T>(const ConvGeometry&, const T*, const T*, T*, T*);

EVB_INSTANTIATE_KERNELS(float)
EVB_INSTANTIATE_KERNELS(double)

#undef EVB_INSTANTIATE_KERNELS

}  // namespace evb::nn::kernels
