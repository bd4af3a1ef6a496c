#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "evb/checkpoint.hpp"
#include "evb/dataset.hpp"
#include "evb/networks.hpp"

namespace evb {

namespace nn {

/// Maps an image to a list of feature maps; parameters stay fixed.
template <typename T>
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<Var<T>> features(const Var<T>& image) const = 0;
};

/// Chain of 3x3 conv + ReLU layers; every layer output is a feature map.
template <typename T>
class ConvStackExtractor : public FeatureExtractor<T> {
 public:
  explicit ConvStackExtractor(std::vector<ConvLayer<T>> layers);

  /// Fixed-seed random stack 1 -> 8 -> 16 -> 16 channels.
  static ConvStackExtractor random(std::uint64_t seed = 7);
  /// Layers "conv0", "conv1", ... from an extractor checkpoint.
  static ConvStackExtractor from_checkpoint(const Checkpoint& checkpoint);

  std::vector<Var<T>> features(const Var<T>& image) const override;
  std::size_t layer_count() const { return layers_.size(); }

 private:
  std::vector<ConvLayer<T>> layers_;
};

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& gt);
/// Mean over feature layers of sum((phi(pred) - phi(gt))^2) / (W H).
template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Var<T>& gt, const FeatureExtractor<T>& extractor);
/// l1 + lambda * perceptual; the extractor may be null when lambda is 0.
template <typename T>
Var<T> total_loss(const Var<T>& pred, const Var<T>& gt, double lambda, const FeatureExtractor<T>* extractor);

/// Adam with bias correction.
template <typename T>
class Adam {
 public:
  Adam(ParameterSet<T>& params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step();
  long steps() const { return t_; }

 private:
  ParameterSet<T>& params_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace nn

struct LossConfig {
  double lambda = 0.01;
  std::shared_ptr<const nn::FeatureExtractor<float>> extractor;

  void validate() const;
};

nn::Var<float> total_loss(const nn::Var<float>& pred, const nn::Var<float>& gt, const LossConfig& config);

/// Mean absolute difference of two images.
double l1_loss(const Image& a, const Image& b);

struct TrainConfig {
  double learning_rate = 0.002;
  int batch_size = 4;
  int epochs = 5;
  int crop = 64;
  double min_event_density = 0.05;  // events per pixel
  int max_resample = 20;
  std::uint64_t seed = 0;
  double stop_below = 0.0;  // stop once the epoch train loss drops below this; 0 disables

  void validate(int size_multiple) const;
};

struct CropResult {
  Sample sample;
  int x0 = 0;
  int y0 = 0;
  std::size_t event_count = 0;
  int draws = 0;
  bool fallback = false;  // no draw met the density; densest candidate returned
};

/// Uniform random crop with at least rho * crop^2 events; after
/// `max_resample` failed draws the densest candidate seen is returned.
CropResult sample_crop(const Sample& sample, int crop, double rho, int max_resample, std::mt19937_64& rng);

/// Top-left crop to the largest extents divisible by `multiple`.
Sample crop_to_multiple(const Sample& sample, int multiple);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation split
  double val_psnr = 0.0;
};

struct TrainResult {
  Checkpoint best;  // lowest validation loss, or training loss without validation data
  Checkpoint last;
  int best_epoch = 0;
  std::vector<EpochRecord> history;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  const Checkpoint* init = nullptr;  // start from these weights instead of a fresh init
};

TrainResult train_deblur(std::span<const Sample> train, std::span<const Sample> val, const NetworkConfig& net_config,
                         const TrainConfig& train_config, const LossConfig& loss_config, const TrainHooks& hooks = {});

/// Self-fed q-step rollouts from the sharp frame; the recurrent state is reset
/// per sequence and gradients flow through the whole unrolled sequence.
TrainResult train_hfr(std::span<const Sample> train, std::span<const Sample> val, const NetworkConfig& net_config,
                      const TrainConfig& train_config, const LossConfig& loss_config, const TrainHooks& hooks = {});

/// Deblurred intensity for a sample whose extents suit the network.
Image deblur_sample(const nn::DeblurNet<float>& net, const Sample& sample);

/// Self-fed rollout from the sharp frame, one intensity frame per HFR target.
/// With `empty_events` every voxel grid is zero.
std::vector<Image> rollout_hfr(const nn::HfrNet<float>& net, const Sample& sample, bool empty_events = false);

}  // namespace evb
