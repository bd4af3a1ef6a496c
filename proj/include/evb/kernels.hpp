#pragma once

namespace evb::nn::kernels {

/*
 * Stride-1 2-D convolution with "same" zero padding (kernel / 2 on each
 * side) over a single CHW image. Weights are laid out [out][in][ky][kx].
 *
 * The default kernels lower the convolution to a register-blocked GEMM and
 * split independent output tiles across OpenMP threads. Every output element
 * is reduced in a fixed order, so results do not depend on the thread count.
 * The `reference` namespace holds direct serial loops used to test them.
 */
struct ConvGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int height = 0;
  int width = 0;
  int kernel = 3;

  int reduction() const { return in_channels * kernel * kernel; }
  int pad() const { return kernel / 2; }
};

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output);

/// grad_input += conv^T(grad_output)
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_output, const T* weight, T* grad_input);

/// grad_weight += ..., grad_bias += ... (grad_bias may be null)
template <typename T>
void conv2d_backward_params(const ConvGeometry& g, const T* input, const T* grad_output, T* grad_weight,
                            T* grad_bias);

/// C[m x n] += A[m x k] * B[k x n], all row-major with the given strides.
template <typename T>
void gemm_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc);

namespace reference {

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output);

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* grad_output, const T* weight, T* grad_input);

template <typename T>
void conv2d_backward_params(const ConvGeometry& g, const T* input, const T* grad_output, T* grad_weight,
                            T* grad_bias);

template <typename T>
void gemm_accumulate(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc);

}  // namespace reference

}  // namespace evb::nn::kernels
