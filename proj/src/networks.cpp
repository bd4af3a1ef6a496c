#include "evb/networks.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "evb/errors.hpp"

namespace evb {

void NetworkConfig::validate() const {
  if (bins < 1) throw std::invalid_argument("network needs at least one event bin");
  if (levels < 1 || levels > 12) throw std::invalid_argument("network levels must lie in [1, 12]");
  if (stem_channels < 1 || dense_layers < 1 || growth < 1) {
    throw std::invalid_argument("network channel counts must be positive");
  }
  if (!lstm_hidden.empty()) {
    if (static_cast<int>(lstm_hidden.size()) != levels) {
      throw std::invalid_argument("lstm_hidden needs one entry per level");
    }
    for (int h : lstm_hidden) {
      if (h < 2) throw std::invalid_argument("Conv-LSTM hidden width must be at least 2");
    }
  }
  if (!(voxel_scale > 0.0)) throw std::invalid_argument("voxel scale must be positive");
}

std::vector<LevelWidths> encoder_widths(const NetworkConfig& config, bool recurrent) {
  config.validate();
  std::vector<LevelWidths> widths;
  int channels = config.stem_channels;
  for (int l = 0; l < config.levels; ++l) {
    LevelWidths w;
    w.input = channels;
    const int dense_width = channels + config.dense_layers * config.growth;
    w.feature = (recurrent && !config.lstm_hidden.empty()) ? config.lstm_hidden[l] : dense_width;
    w.output = std::max(1, w.feature / 2);
    widths.push_back(w);
    channels = w.output;
  }
  return widths;
}

namespace {

struct Span1d {
  long lo;
  long hi;
};

long floor_div2(long v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

Span1d grow(Span1d s, long r) { return {s.lo - r, s.hi + r}; }
Span1d hull(Span1d a, Span1d b) { return {std::min(a.lo, b.lo), std::max(a.hi, b.hi)}; }

}  // namespace

int receptive_field_radius(const NetworkConfig& config, bool recurrent) {
  config.validate();
  const long period = 1L << config.levels;
  long worst = 0;
  for (long p = 0; p < period; ++p) {
    Span1d cur{p, p};
    cur = grow(cur, 1);  // stem
    std::vector<Span1d> skips;
    for (int l = 0; l < config.levels; ++l) {
      cur = grow(cur, recurrent ? 1 : config.dense_layers);
      skips.push_back(cur);
      cur = {floor_div2(cur.lo), floor_div2(cur.hi)};
    }
    cur = grow(cur, 1);  // bottleneck
    for (int l = config.levels - 1; l >= 0; --l) {
      cur = {2 * cur.lo, 2 * cur.hi + 1};
      cur = grow(cur, 1);
      cur = hull(cur, skips[l]);
      cur = grow(cur, 1);
    }
    cur = grow(cur, 1);  // head
    worst = std::max({worst, p - cur.lo, cur.hi - p});
  }
  return static_cast<int>(worst);
}

namespace nn {

template <typename T>
Var<T> ParameterSet<T>::add(std::string name, Tensor<T> value) {
  if (find(name)) throw std::invalid_argument("duplicate parameter " + name);
  Var<T> var(std::move(value), true);
  items_.push_back({std::move(name), var});
  return var;
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
  for (const auto& p : items_) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.var.value().size();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : items_) p.var.zero_grad();
}

template <typename T>
ResidualUNet<T>::ResidualUNet(NetworkConfig config, bool recurrent, std::uint64_t seed)
    : config_(std::move(config)), recurrent_(recurrent), widths_(encoder_widths(config_, recurrent)), rng_(seed) {
  const int in_channels = 1 + config_.bins;
  const int c0 = config_.stem_channels;
  stem_ = make_conv("stem", in_channels, c0, 3, std::sqrt(2.0 / (in_channels * 9)));
}

template <typename T>
ConvLayer<T> ResidualUNet<T>::make_conv(const std::string& name, int in, int out, int kernel, double init_std) {
  Tensor<T> weight(Shape{out, in, kernel, kernel});
  if (init_std > 0.0) {
    std::normal_distribution<double> normal(0.0, init_std);
    for (std::size_t i = 0; i < weight.size(); ++i) weight[i] = static_cast<T>(normal(rng_));
  }
  ConvLayer<T> layer;
  layer.weight = params_.add(name + ".weight", std::move(weight));
  layer.bias = params_.add(name + ".bias", Tensor<T>(Shape{1, out, 1, 1}));
  return layer;
}

template <typename T>
void ResidualUNet<T>::check_input(const Var<T>& log_image, const Var<T>& voxel) const {
  const Shape& s = log_image.shape();
  if (s.n != 1 || s.c != 1) throw ShapeError("network input image must be 1 x H x W, got " + s.str());
  const Shape& v = voxel.shape();
  if (v.n != 1 || v.c != config_.bins || v.h != s.h || v.w != s.w) {
    throw ShapeError("voxel input " + v.str() + " does not match image " + s.str() + " with " +
                     std::to_string(config_.bins) + " bins");
  }
  const int m = config_.size_multiple();
  if (s.h % m != 0 || s.w % m != 0 || s.h == 0 || s.w == 0) {
    throw ShapeError("input extents " + std::to_string(s.h) + "x" + std::to_string(s.w) + " must be multiples of " +
                     std::to_string(m));
  }
}

template <typename T>
Var<T> ResidualUNet<T>::stem(const Var<T>& log_image, const Var<T>& voxel) const {
  return relu(stem_(concat<T>({log_image, voxel})));
}

template <typename T>
Var<T> ResidualUNet<T>::downsample(int level, const Var<T>& feature) const {
  return avg_pool2(transitions_[level](feature));
}

template <typename T>
Var<T> ResidualUNet<T>::decode(Var<T> bottom, const std::vector<Var<T>>& skips) const {
  Var<T> h = relu(bottleneck_(bottom));
  for (int l = config_.levels - 1; l >= 0; --l) {
    Var<T> up = up_[l](upsample2(h));
    Var<T> skip = skip_[l](skips[l]);
    h = relu(fuse_[l](concat<T>({up, skip})));
  }
  return head_(h);
}

template <typename T>
void ResidualUNet<T>::build_trunk() {
  const int levels = config_.levels;
  for (int l = 0; l < levels; ++l) {
    const auto& w = widths_[l];
    transitions_.push_back(make_conv("enc" + std::to_string(l) + ".transition", w.feature, w.output, 1,
                                     std::sqrt(1.0 / w.feature)));
  }
  const int bottom = widths_.back().output;
  bottleneck_ = make_conv("bottleneck", bottom, bottom, 3, std::sqrt(2.0 / (bottom * 9)));
  up_.resize(levels);
  skip_.resize(levels);
  fuse_.resize(levels);
  for (int l = levels - 1; l >= 0; --l) {
    const auto& w = widths_[l];
    const std::string prefix = "dec" + std::to_string(l);
    up_[l] = make_conv(prefix + ".up", w.output, w.input, 3, std::sqrt(1.0 / (w.output * 9)));
    skip_[l] = make_conv(prefix + ".skip", w.feature, w.input, 1, std::sqrt(1.0 / w.feature));
    fuse_[l] = make_conv(prefix + ".fuse", 2 * w.input, w.input, 3, std::sqrt(2.0 / (2 * w.input * 9)));
  }
  const int c0 = config_.stem_channels;
  const double head_std = config_.head_init == HeadInit::zero ? 0.0 : std::sqrt(1.0 / (c0 * 9));
  head_ = make_conv("head", c0, 1, 3, head_std);
}

template <typename T>
DeblurNet<T>::DeblurNet(NetworkConfig config, std::uint64_t seed) : ResidualUNet<T>(std::move(config), false, seed) {
  const auto& cfg = this->config_;
  for (int l = 0; l < cfg.levels; ++l) {
    std::vector<ConvLayer<T>> block;
    int channels = this->widths_[l].input;
    for (int j = 0; j < cfg.dense_layers; ++j) {
      block.push_back(this->make_conv("enc" + std::to_string(l) + ".dense" + std::to_string(j), channels, cfg.growth,
                                      3, std::sqrt(2.0 / (channels * 9))));
      channels += cfg.growth;
    }
    dense_.push_back(std::move(block));
  }
  this->build_trunk();
}

template <typename T>
Var<T> DeblurNet<T>::residual(const Var<T>& log_image, const Var<T>& voxel) const {
  this->check_input(log_image, voxel);
  Var<T> h = this->stem(log_image, voxel);
  std::vector<Var<T>> skips;
  for (int l = 0; l < this->config_.levels; ++l) {
    for (const auto& layer : dense_[l]) h = concat<T>({h, relu(layer(h))});
    skips.push_back(h);
    h = this->downsample(l, h);
  }
  return this->decode(h, skips);
}

template <typename T>
Var<T> DeblurNet<T>::forward(const Var<T>& log_image, const Var<T>& voxel) const {
  return add(log_image, residual(log_image, voxel));
}

template <typename T>
HfrNet<T>::HfrNet(NetworkConfig config, std::uint64_t seed) : ResidualUNet<T>(std::move(config), true, seed) {
  for (int l = 0; l < this->config_.levels; ++l) {
    const int in = this->widths_[l].input + this->widths_[l].feature;
    const int hidden = this->widths_[l].feature;
    auto gates = this->make_conv("enc" + std::to_string(l) + ".lstm", in, 4 * hidden, 3, std::sqrt(1.0 / (in * 9)));
    // gate order: input, forget, output, candidate; forget bias starts at 1
    T* bias = gates.bias.mutable_value().data();
    std::fill(bias + hidden, bias + 2 * hidden, T(1));
    gates_.push_back(std::move(gates));
  }
  this->build_trunk();
}

template <typename T>
RecurrentState<T> HfrNet<T>::reset_state(int height, int width) const {
  const int m = this->config_.size_multiple();
  if (height % m != 0 || width % m != 0) {
    throw ShapeError("state extents must be multiples of " + std::to_string(m));
  }
  RecurrentState<T> state;
  for (int l = 0; l < this->config_.levels; ++l) {
    const int hidden = this->widths_[l].feature;
    state.hidden.emplace_back(Tensor<T>(hidden, height >> l, width >> l));
    state.cell.emplace_back(Tensor<T>(hidden, height >> l, width >> l));
  }
  return state;
}

template <typename T>
std::pair<Var<T>, RecurrentState<T>> HfrNet<T>::residual(const Var<T>& log_image, const Var<T>& voxel,
                                                         const RecurrentState<T>& state) const {
  this->check_input(log_image, voxel);
  const int height = log_image.shape().h;
  const int width = log_image.shape().w;
  const RecurrentState<T> current = state.is_zero_placeholder() ? reset_state(height, width) : state;
  if (static_cast<int>(current.hidden.size()) != this->config_.levels ||
      current.cell.size() != current.hidden.size()) {
    throw ShapeError("recurrent state has the wrong number of levels");
  }

  RecurrentState<T> next;
  Var<T> x = this->stem(log_image, voxel);
  std::vector<Var<T>> skips;
  for (int l = 0; l < this->config_.levels; ++l) {
    const int hidden = this->widths_[l].feature;
    const Shape expected{1, hidden, height >> l, width >> l};
    if (current.hidden[l].shape() != expected || current.cell[l].shape() != expected) {
      throw ShapeError("recurrent state at level " + std::to_string(l) + " is " + current.hidden[l].shape().str() +
                       ", expected " + expected.str());
    }
    Var<T> gates = gates_[l](concat<T>({x, current.hidden[l]}));
    Var<T> in_gate = sigmoid(slice_channels(gates, 0, hidden));
    Var<T> forget_gate = sigmoid(slice_channels(gates, hidden, hidden));
    Var<T> out_gate = sigmoid(slice_channels(gates, 2 * hidden, hidden));
    Var<T> candidate = nn::tanh(slice_channels(gates, 3 * hidden, hidden));
    Var<T> cell = add(mul(forget_gate, current.cell[l]), mul(in_gate, candidate));
    Var<T> h = mul(out_gate, nn::tanh(cell));
    next.hidden.push_back(h);
    next.cell.push_back(cell);
    skips.push_back(h);
    x = this->downsample(l, h);
  }
  return {this->decode(x, skips), std::move(next)};
}

template <typename T>
std::pair<Var<T>, RecurrentState<T>> HfrNet<T>::forward(const Var<T>& log_image, const Var<T>& voxel,
                                                        const RecurrentState<T>& state) const {
  auto [res, next] = residual(log_image, voxel, state);
  return {add(log_image, res), std::move(next)};
}

template <typename T>
Tensor<T> image_tensor(const Image& image) {
  Tensor<T> t(1, image.height(), image.width());
  auto src = image.data();
  for (std::size_t i = 0; i < src.size(); ++i) t[i] = static_cast<T>(src[i]);
  return t;
}

template <typename T>
Tensor<T> voxel_tensor(const VoxelGrid& grid, double scale) {
  Tensor<T> t(grid.bins(), grid.height(), grid.width());
  auto src = grid.values();
  for (std::size_t i = 0; i < src.size(); ++i) {
    t[i] = static_cast<T>(std::clamp(static_cast<double>(src[i]) / scale, -1.0, 1.0));
  }
  return t;
}

template <typename T>
Image tensor_image(const Tensor<T>& tensor) {
  if (tensor.shape().n != 1 || tensor.channels() != 1) throw ShapeError("expected a 1-channel tensor");
  Image out(tensor.height(), tensor.width());
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(tensor[i]);
  return out;
}

}  // namespace nn

namespace {

LogFrame add_residual(const LogFrame& base, const Image& residual) {
  LogFrame out = base;
  auto dst = out.pixels.data();
  auto r = residual.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += r[i];
  return out;
}

void check_voxel(const LogFrame& frame, const VoxelGrid& voxel, int bins) {
  if (voxel.bins() != bins) {
    throw ShapeError("voxel grid has " + std::to_string(voxel.bins()) + " bins, network expects " + std::to_string(bins));
  }
  if (voxel.height() != frame.pixels.height() || voxel.width() != frame.pixels.width()) {
    throw ShapeError("voxel grid geometry differs from the image");
  }
}

}  // namespace

template <typename T>
LogFrame forward_deblur(const nn::DeblurNet<T>& net, const LogFrame& blurry_log, const VoxelGrid& voxel) {
  check_voxel(blurry_log, voxel, net.config().bins);
  nn::NoGradGuard no_grad;
  nn::Var<T> image(nn::image_tensor<T>(blurry_log.pixels));
  nn::Var<T> events(nn::voxel_tensor<T>(voxel, net.config().voxel_scale));
  const auto residual = net.residual(image, events);
  return add_residual(blurry_log, nn::tensor_image(residual.value()));
}

template <typename T>
std::pair<LogFrame, nn::RecurrentState<T>> forward_hfr(const nn::HfrNet<T>& net, const LogFrame& frame_log,
                                                        const VoxelGrid& voxel, const nn::RecurrentState<T>& state) {
  check_voxel(frame_log, voxel, net.config().bins);
  nn::NoGradGuard no_grad;
  nn::Var<T> image(nn::image_tensor<T>(frame_log.pixels));
  nn::Var<T> events(nn::voxel_tensor<T>(voxel, net.config().voxel_scale));
  auto [residual, next] = net.residual(image, events, state);
  return {add_residual(frame_log, nn::tensor_image(residual.value())), std::move(next)};
}

#define EVB_INSTANTIATE_NETWORKS(T)                                                                          \
  template class nn::ParameterSet<T>;                                                                        \
  template class nn::ResidualUNet<T>;                                                                        \
  template class nn::DeblurNet<T>;                                                                           \
  template class nn::HfrNet<T>;                                                                              \
  template nn::Tensor<T> nn::image_tensor<T>(const Image&);                                                  \
  template nn::Tensor<T> nn::voxel_tensor<T>(const VoxelGrid&, double);                                      \
  template Image nn::tensor_image<T>(const nn::Tensor<T>&);                                                  \
  template LogFrame forward_deblur<T>(const nn::DeblurNet<T>&, const LogFrame&, const VoxelGrid&);           \
  template std::pair<LogFrame, nn::RecurrentState<T>> forward_hfr<T>(const nn::HfrNet<T>&, const LogFrame&, \
                                                                      const VoxelGrid&, const nn::RecurrentState<T>&);

EVB_INSTANTIATE_NETWORKS(float)
EVB_INSTANTIATE_NETWORKS(double)

#undef EVB_INSTANTIATE_NETWORKS

}  // namespace evb
