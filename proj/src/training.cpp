#include "evb/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "evb/errors.hpp"
#include "evb/metrics.hpp"

namespace evb {

namespace nn {

template <typename T>
ConvStackExtractor<T>::ConvStackExtractor(std::vector<ConvLayer<T>> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw std::invalid_argument("feature extractor needs at least one layer");
  if (layers_.front().weight.shape().c != 1) throw ShapeError("feature extractor must take a 1-channel image");
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    if (layers_[i].weight.shape().c != layers_[i - 1].weight.shape().n) {
      throw ShapeError("feature extractor layer " + std::to_string(i) + " does not chain");
    }
  }
}

template <typename T>
ConvStackExtractor<T> ConvStackExtractor<T>::random(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const int widths[] = {1, 8, 16, 16};
  std::vector<ConvLayer<T>> layers;
  for (int i = 0; i < 3; ++i) {
    const int in = widths[i];
    const int out = widths[i + 1];
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (in * 9)));
    Tensor<T> w(Shape{out, in, 3, 3});
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = static_cast<T>(normal(rng));
    layers.push_back({Var<T>(std::move(w)), Var<T>(Tensor<T>(Shape{1, out, 1, 1}))});
  }
  return ConvStackExtractor(std::move(layers));
}

template <typename T>
ConvStackExtractor<T> ConvStackExtractor<T>::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != NetworkKind::extractor) throw CheckpointError("expected an extractor checkpoint");
  std::vector<ConvLayer<T>> layers;
  auto to_var = [](const NamedArray& a) {
    Tensor<T> t(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) t[i] = static_cast<T>(a.data[i]);
    return Var<T>(std::move(t));
  };
  for (int i = 0;; ++i) {
    const auto* w = ck.find("conv" + std::to_string(i) + ".weight");
    if (!w) break;
    const auto* b = ck.find("conv" + std::to_string(i) + ".bias");
    if (w->shape.h != 3 || w->shape.w != 3) throw CheckpointError("extractor kernels must be 3x3");
    if (b && b->shape.size() != static_cast<std::size_t>(w->shape.n)) {
      throw CheckpointError("extractor bias does not match layer " + std::to_string(i));
    }
    layers.push_back({to_var(*w), b ? to_var(*b) : Var<T>()});
  }
  if (layers.empty()) throw CheckpointError("extractor checkpoint has no conv0.weight");
  try {
    return ConvStackExtractor(std::move(layers));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
}

template <typename T>
std::vector<Var<T>> ConvStackExtractor<T>::features(const Var<T>& image) const {
  std::vector<Var<T>> out;
  Var<T> h = image;
  for (const auto& layer : layers_) {
    h = relu(layer(h));
    out.push_back(h);
  }
  return out;
}

template <typename T>
Var<T> l1_loss(const Var<T>& pred, const Var<T>& gt) {
  return mean_abs_error(pred, gt);
}

template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Var<T>& gt, const FeatureExtractor<T>& extractor) {
  const auto fp = extractor.features(pred);
  std::vector<Var<T>> fg;
  {
    NoGradGuard no_grad;
    fg = extractor.features(gt);
  }
  if (fp.size() != fg.size() || fp.empty()) throw std::logic_error("feature extractor returned inconsistent layers");
  std::vector<Var<T>> terms;
  for (std::size_t i = 0; i < fp.size(); ++i) {
    const double area = static_cast<double>(fp[i].shape().h) * fp[i].shape().w;
    terms.push_back(scale(sum_squared_error(fp[i], fg[i]), static_cast<T>(1.0 / area)));
  }
  return scale(add_scalars(terms), static_cast<T>(1.0 / static_cast<double>(terms.size())));
}

template <typename T>
Var<T> total_loss(const Var<T>& pred, const Var<T>& gt, double lambda, const FeatureExtractor<T>* extractor) {
  Var<T> l1 = l1_loss(pred, gt);
  if (lambda == 0.0) return l1;
  if (!extractor) throw std::invalid_argument("perceptual weight is set but no feature extractor was given");
  return add(l1, scale(perceptual_loss(pred, gt, *extractor), static_cast<T>(lambda)));
}

template <typename T>
Adam<T>::Adam(ParameterSet<T>& params, double learning_rate, double beta1, double beta2, double eps)
    : params_(params), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (learning_rate < 0.0) throw std::invalid_argument("learning rate must be non-negative");
  for (const auto& p : params_.items()) {
    m_.emplace_back(p.var.value().size(), 0.0);
    v_.emplace_back(p.var.value().size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  auto& items = params_.items();
  for (std::size_t i = 0; i < items.size(); ++i) {
    auto& var = items[i].var;
    const auto& grad = var.grad();
    if (grad.empty()) continue;
    auto& value = var.mutable_value();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < value.size(); ++k) {
      const double g = grad[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * g;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * g * g;
      value[k] = static_cast<T>(value[k] - lr_ * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps_));
    }
  }
}

#define EVB_INSTANTIATE_TRAINING(T)                                                                       \
  template class ConvStackExtractor<T>;                                                                   \
  template class Adam<T>;                                                                                 \
  template Var<T> l1_loss<T>(const Var<T>&, const Var<T>&);                                               \
  template Var<T> perceptual_loss<T>(const Var<T>&, const Var<T>&, const FeatureExtractor<T>&);           \
  template Var<T> total_loss<T>(const Var<T>&, const Var<T>&, double, const FeatureExtractor<T>*);

EVB_INSTANTIATE_TRAINING(float)
EVB_INSTANTIATE_TRAINING(double)

#undef EVB_INSTANTIATE_TRAINING

}  // namespace nn

void LossConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("perceptual weight must be >= 0");
  if (lambda > 0.0 && !extractor) throw std::invalid_argument("perceptual weight > 0 needs a feature extractor");
}

nn::Var<float> total_loss(const nn::Var<float>& pred, const nn::Var<float>& gt, const LossConfig& config) {
  return nn::total_loss(pred, gt, config.lambda, config.extractor.get());
}

double l1_loss(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ShapeError("l1_loss: images differ in size");
  auto pa = a.data();
  auto pb = b.data();
  if (pa.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) s += std::abs(pa[i] - pb[i]);
  return s / static_cast<double>(pa.size());
}

void TrainConfig::validate(int size_multiple) const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw std::invalid_argument("learning rate must be >= 0");
  if (batch_size < 1 || epochs < 1 || crop < 1 || max_resample < 1) {
    throw std::invalid_argument("batch size, epochs, crop and max_resample must be positive");
  }
  if (!(min_event_density >= 0.0)) throw std::invalid_argument("event density must be >= 0");
  if (crop % size_multiple != 0) {
    throw std::invalid_argument("crop " + std::to_string(crop) + " is not divisible by " + std::to_string(size_multiple));
  }
}

namespace {

std::size_t events_in(const EventStream& events, int x0, int y0, int size) {
  std::size_t n = 0;
  for (const Event& e : events.events()) {
    if (e.x >= x0 && e.x < x0 + size && e.y >= y0 && e.y < y0 + size) ++n;
  }
  return n;
}

Sample crop_sample(const Sample& s, int x0, int y0, int width, int height) {
  Sample out;
  out.name = s.name;
  out.blurry = {crop(s.blurry.pixels, x0, y0, width, height), s.blurry.t};
  out.sharp = {crop(s.sharp.pixels, x0, y0, width, height), s.sharp.t};
  for (const auto& f : s.hfr_targets) out.hfr_targets.push_back({crop(f.pixels, x0, y0, width, height), f.t});
  out.events = crop(s.events, x0, y0, width, height);
  out.exposure = s.exposure;
  return out;
}

}  // namespace

CropResult sample_crop(const Sample& sample, int crop_size, double rho, int max_resample, std::mt19937_64& rng) {
  const int h = sample.blurry.pixels.height();
  const int w = sample.blurry.pixels.width();
  if (crop_size < 1 || h < crop_size || w < crop_size) {
    throw std::invalid_argument("image " + std::to_string(w) + "x" + std::to_string(h) + " is smaller than crop " +
                                std::to_string(crop_size));
  }
  if (max_resample < 1) throw std::invalid_argument("max_resample must be positive");
  const double needed = rho * static_cast<double>(crop_size) * crop_size;
  std::uniform_int_distribution<int> dx(0, w - crop_size);
  std::uniform_int_distribution<int> dy(0, h - crop_size);
  CropResult best;
  bool have_best = false;
  for (int draw = 1; draw <= max_resample; ++draw) {
    const int x0 = dx(rng);
    const int y0 = dy(rng);
    const std::size_t n = events_in(sample.events, x0, y0, crop_size);
    if (!have_best || n > best.event_count) {
      best.x0 = x0;
      best.y0 = y0;
      best.event_count = n;
      have_best = true;
    }
    best.draws = draw;
    if (static_cast<double>(n) >= needed) {
      best.x0 = x0;
      best.y0 = y0;
      best.event_count = n;
      best.fallback = false;
      best.sample = crop_sample(sample, x0, y0, crop_size, crop_size);
      return best;
    }
  }
  best.fallback = true;
  best.sample = crop_sample(sample, best.x0, best.y0, crop_size, crop_size);
  return best;
}

Sample crop_to_multiple(const Sample& sample, int multiple) {
  const int h = sample.blurry.pixels.height() / multiple * multiple;
  const int w = sample.blurry.pixels.width() / multiple * multiple;
  if (h == 0 || w == 0) throw ShapeError("sample is smaller than the network's size multiple");
  if (h == sample.blurry.pixels.height() && w == sample.blurry.pixels.width()) return sample;
  return crop_sample(sample, 0, 0, w, h);
}

namespace {

using nn::Tensor;
using nn::Var;

Var<float> constant(const Image& img) { return Var<float>(nn::image_tensor<float>(img)); }

Var<float> log_input(const Image& intensity) { return constant(to_log(intensity).pixels); }

Var<float> voxel_input(const Sample& s, const TimeWindow& window, const NetworkConfig& cfg, bool empty = false) {
  const int h = s.blurry.pixels.height();
  const int w = s.blurry.pixels.width();
  if (empty) return Var<float>(Tensor<float>(cfg.bins, h, w));
  return Var<float>(nn::voxel_tensor<float>(voxelize(s.events, window, cfg.bins), cfg.voxel_scale));
}

void require_finite(double loss, int epoch, const std::string& name) {
  if (!std::isfinite(loss)) {
    throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + " on example '" + name + "'");
  }
}

// One example's loss graph.
Var<float> deblur_loss(const nn::DeblurNet<float>& net, const Sample& s, const LossConfig& loss) {
  const Var<float> pred_log = net.forward(log_input(s.blurry.pixels), voxel_input(s, s.exposure.window(), net.config()));
  return total_loss(nn::exp(pred_log), constant(s.sharp.pixels), loss);
}

Var<float> hfr_loss(const nn::HfrNet<float>& net, const Sample& s, const LossConfig& loss) {
  if (s.hfr_targets.empty()) throw std::invalid_argument("sample '" + s.name + "' has no HFR targets");
  const auto windows = hfr_windows(s);
  Var<float> current = log_input(s.sharp.pixels);
  nn::RecurrentState<float> state;
  std::vector<Var<float>> terms;
  for (std::size_t k = 0; k < s.hfr_targets.size(); ++k) {
    auto [next, next_state] = net.forward(current, voxel_input(s, windows[k], net.config()), state);
    terms.push_back(total_loss(nn::exp(next), constant(s.hfr_targets[k].pixels), loss));
    current = next;
    state = std::move(next_state);
  }
  return nn::scale(nn::add_scalars(terms), 1.0f / static_cast<float>(terms.size()));
}

struct ValStats {
  double loss = std::numeric_limits<double>::quiet_NaN();
  double psnr = std::numeric_limits<double>::quiet_NaN();
};

template <typename Net, typename LossFn, typename PsnrFn>
TrainResult run_training(Net& net, NetworkKind kind, std::span<const Sample> train, std::span<const Sample> val,
                         const TrainConfig& tc, const LossConfig& lc, const TrainHooks& hooks, LossFn loss_fn,
                         PsnrFn psnr_fn) {
  if (train.empty()) throw std::invalid_argument("training split is empty");
  tc.validate(net.config().size_multiple());
  lc.validate();
  if (hooks.init) restore(*hooks.init, net);

  std::vector<Sample> val_cropped;
  for (const auto& s : val) val_cropped.push_back(crop_to_multiple(s, net.config().size_multiple()));

  std::mt19937_64 rng(tc.seed ^ 0x5eed5eedULL);
  nn::Adam<float> adam(net.parameters(), tc.learning_rate);
  TrainResult result;
  TrainingMetadata meta;
  meta.seed = tc.seed;
  double best_score = std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      const float weight = 1.0f / static_cast<float>(stop - start);
      net.parameters().zero_grad();
      for (std::size_t i = start; i < stop; ++i) {
        const Sample& full = train[order[i]];
        const Sample s = sample_crop(full, tc.crop, tc.min_event_density, tc.max_resample, rng).sample;
        const Var<float> loss = loss_fn(net, s, lc);
        const double value = loss.value()[0];
        require_finite(value, epoch, s.name);
        epoch_loss += value;
        nn::backward(nn::scale(loss, weight));
      }
      adam.step();
    }
    epoch_loss /= static_cast<double>(train.size());

    ValStats vs;
    if (!val_cropped.empty()) {
      nn::NoGradGuard no_grad;
      double l = 0.0;
      double p = 0.0;
      for (const auto& s : val_cropped) {
        l += loss_fn(net, s, lc).value()[0];
        p += psnr_fn(net, s);
      }
      vs.loss = l / static_cast<double>(val_cropped.size());
      vs.psnr = p / static_cast<double>(val_cropped.size());
      require_finite(vs.loss, epoch, "validation");
    }

    const EpochRecord rec{epoch, epoch_loss, vs.loss, vs.psnr};
    result.history.push_back(rec);
    meta.epoch = epoch;
    meta.train_loss.push_back(epoch_loss);
    meta.val_loss.push_back(vs.loss);
    if (hooks.on_epoch) hooks.on_epoch(rec);

    const double score = val_cropped.empty() ? epoch_loss : vs.loss;
    if (score < best_score) {
      best_score = score;
      result.best_epoch = epoch;
      result.best = capture(net, kind, meta);
    }
    if (tc.stop_below > 0.0 && epoch_loss < tc.stop_below) break;
  }
  result.last = capture(net, kind, meta);
  result.best.metadata = meta;
  result.best.metadata.epoch = result.best_epoch;
  return result;
}

}  // namespace

Image deblur_sample(const nn::DeblurNet<float>& net, const Sample& sample) {
  const VoxelGrid voxel = voxelize(sample.events, sample.exposure.window(), net.config().bins);
  return to_intensity(forward_deblur(net, to_log(sample.blurry.pixels), voxel));
}

std::vector<Image> rollout_hfr(const nn::HfrNet<float>& net, const Sample& sample, bool empty_events) {
  const auto windows = hfr_windows(sample);
  const int h = sample.sharp.pixels.height();
  const int w = sample.sharp.pixels.width();
  LogFrame current = to_log(sample.sharp.pixels);
  nn::RecurrentState<float> state;
  std::vector<Image> frames;
  for (const auto& window : windows) {
    const VoxelGrid voxel = empty_events ? VoxelGrid(net.config().bins, h, w, window)
                                         : voxelize(sample.events, window, net.config().bins);
    auto [next, next_state] = forward_hfr(net, current, voxel, state);
    frames.push_back(to_intensity(next));
    current = std::move(next);
    state = std::move(next_state);
  }
  return frames;
}

TrainResult train_deblur(std::span<const Sample> train, std::span<const Sample> val, const NetworkConfig& net_config,
                         const TrainConfig& train_config, const LossConfig& loss_config, const TrainHooks& hooks) {
  nn::DeblurNet<float> net(net_config, train_config.seed);
  return run_training(
      net, NetworkKind::deblur, train, val, train_config, loss_config, hooks, deblur_loss,
      [](const nn::DeblurNet<float>& n, const Sample& s) { return psnr(deblur_sample(n, s), s.sharp.pixels); });
}

TrainResult train_hfr(std::span<const Sample> train, std::span<const Sample> val, const NetworkConfig& net_config,
                      const TrainConfig& train_config, const LossConfig& loss_config, const TrainHooks& hooks) {
  nn::HfrNet<float> net(net_config, train_config.seed);
  return run_training(net, NetworkKind::hfr, train, val, train_config, loss_config, hooks, hfr_loss,
                      [](const nn::HfrNet<float>& n, const Sample& s) {
                        const auto frames = rollout_hfr(n, s);
                        double p = 0.0;
                        for (std::size_t k = 0; k < frames.size(); ++k) p += psnr(frames[k], s.hfr_targets[k].pixels);
                        return p / static_cast<double>(frames.size());
                      });
}

}  // namespace evb
