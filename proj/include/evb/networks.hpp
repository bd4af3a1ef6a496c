#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "evb/autograd.hpp"
#include "evb/events.hpp"
#include "evb/image.hpp"

namespace evb {

enum class HeadInit { zero, random };

struct NetworkConfig {
  int bins = 6;
  int levels = 3;
  int stem_channels = 32;
  int dense_layers = 4;
  int growth = 12;
  std::vector<int> lstm_hidden;  // per level; empty means the encoder feature widths
  HeadInit head_init = HeadInit::zero;
  double voxel_scale = 10.0;     // counts / scale, clipped to [-1, 1]

  void validate() const;
  /// Spatial extents must be multiples of this.
  int size_multiple() const { return 1 << levels; }

  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

/// Channel widths of one encoder level.
struct LevelWidths {
  int input = 0;    // channels entering the level
  int feature = 0;  // dense-block / Conv-LSTM output, also the skip source
  int output = 0;   // after the halving transition
};

std::vector<LevelWidths> encoder_widths(const NetworkConfig& config, bool recurrent);

/// Chebyshev radius (full-resolution pixels) beyond which a single input
/// pixel cannot influence the output of one forward pass from zero state.
int receptive_field_radius(const NetworkConfig& config, bool recurrent);

namespace nn {

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
};

template <typename T>
class ParameterSet {
 public:
  Var<T> add(std::string name, Tensor<T> value);

  std::vector<Parameter<T>>& items() { return items_; }
  const std::vector<Parameter<T>>& items() const { return items_; }
  const Parameter<T>* find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Parameter<T>> items_;
};

template <typename T>
struct ConvLayer {
  Var<T> weight;
  Var<T> bias;

  Var<T> operator()(const Var<T>& x) const { return conv2d(x, weight, bias); }
};

/// Per-level Conv-LSTM (hidden, cell) activations. Empty vectors mean the
/// zero state.
template <typename T>
struct RecurrentState {
  std::vector<Var<T>> hidden;
  std::vector<Var<T>> cell;

  bool is_zero_placeholder() const { return hidden.empty(); }
};

/*
 * Modified U-Net with a global residual connection:
 *
 *   stem 3x3 (1 + B -> C0, ReLU)
 *   D encoder levels: feature block, then 1x1 transition halving channels
 *                     and 2x2 average pooling
 *   bottleneck 3x3 (ReLU)
 *   D decoder levels: nearest 2x upsample + 3x3 conv, 1x1 conv on the
 *                     matching encoder feature, concat, 3x3 fuse (ReLU)
 *   head 3x3 -> 1 channel, linear
 *
 * The output is the input log image plus the head's residual. The feature
 * block is supplied by the derived network.
 */
template <typename T>
class ResidualUNet {
 public:
  const NetworkConfig& config() const { return config_; }
  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  bool recurrent() const { return recurrent_; }

 protected:
  ResidualUNet(NetworkConfig config, bool recurrent, std::uint64_t seed);

  ConvLayer<T> make_conv(const std::string& name, int in, int out, int kernel, double init_std);
  Var<T> stem(const Var<T>& log_image, const Var<T>& voxel) const;
  Var<T> downsample(int level, const Var<T>& feature) const;
  Var<T> decode(Var<T> bottom, const std::vector<Var<T>>& skips) const;
  void check_input(const Var<T>& log_image, const Var<T>& voxel) const;
  // Transitions, bottleneck, decoder and head; called after the encoder blocks.
  void build_trunk();

  NetworkConfig config_;
  bool recurrent_;
  std::vector<LevelWidths> widths_;
  ParameterSet<T> params_;
  std::mt19937_64 rng_;

 private:
  ConvLayer<T> stem_;
  std::vector<ConvLayer<T>> transitions_;
  ConvLayer<T> bottleneck_;
  std::vector<ConvLayer<T>> up_;
  std::vector<ConvLayer<T>> skip_;
  std::vector<ConvLayer<T>> fuse_;
  ConvLayer<T> head_;
};

/// Deblurring network: dense blocks in the encoder.
template <typename T>
class DeblurNet : public ResidualUNet<T> {
 public:
  explicit DeblurNet(NetworkConfig config, std::uint64_t seed = 0);

  /// Head output only (the learned log-domain correction).
  Var<T> residual(const Var<T>& log_image, const Var<T>& voxel) const;
  /// log_image + residual
  Var<T> forward(const Var<T>& log_image, const Var<T>& voxel) const;

 private:
  std::vector<std::vector<ConvLayer<T>>> dense_;
};

/// Frame-to-frame generator: Conv-LSTM cells in the encoder.
template <typename T>
class HfrNet : public ResidualUNet<T> {
 public:
  explicit HfrNet(NetworkConfig config, std::uint64_t seed = 0);

  std::pair<Var<T>, RecurrentState<T>> residual(const Var<T>& log_image, const Var<T>& voxel,
                                                const RecurrentState<T>& state) const;
  std::pair<Var<T>, RecurrentState<T>> forward(const Var<T>& log_image, const Var<T>& voxel,
                                               const RecurrentState<T>& state) const;

  RecurrentState<T> reset_state(int height, int width) const;

 private:
  std::vector<ConvLayer<T>> gates_;
};

template <typename T>
Tensor<T> image_tensor(const Image& image);
/// Signed counts divided by `scale` and clipped to [-1, 1].
template <typename T>
Tensor<T> voxel_tensor(const VoxelGrid& grid, double scale);
template <typename T>
Image tensor_image(const Tensor<T>& tensor);

}  // namespace nn

// Inference entry points. The residual is added to the caller's log image in
// double precision, so a zero residual reproduces the input exactly.

template <typename T>
LogFrame forward_deblur(const nn::DeblurNet<T>& net, const LogFrame& blurry_log, const VoxelGrid& voxel);

template <typename T>
std::pair<LogFrame, nn::RecurrentState<T>> forward_hfr(const nn::HfrNet<T>& net, const LogFrame& frame_log,
                                                        const VoxelGrid& voxel, const nn::RecurrentState<T>& state);

template <typename T>
nn::RecurrentState<T> reset_state(const nn::HfrNet<T>& net, int height, int width) {
  return net.reset_state(height, width);
}

}  // namespace evb
