#include "evb/edi.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace evb {

namespace {

void check_geometry(const Image& image, const EventStream& stream) {
  if (image.height() != stream.height() || image.width() != stream.width()) {
    throw std::invalid_argument("image and event stream geometries differ");
  }
}

// Signed event counts accumulated up to each sample time:
// counts[m] holds sum p over events with t0 <= t < times[m].
struct CumulativeCounts {
  std::vector<std::vector<int>> pos;
  std::vector<std::vector<int>> neg;
};

CumulativeCounts cumulative_counts(const EventStream& stream, Timestamp t0, const std::vector<Timestamp>& times) {
  const std::size_t pixels = static_cast<std::size_t>(stream.width()) * stream.height();
  CumulativeCounts out;
  out.pos.assign(times.size(), std::vector<int>(pixels, 0));
  out.neg.assign(times.size(), std::vector<int>(pixels, 0));
  std::vector<int> pos(pixels, 0);
  std::vector<int> neg(pixels, 0);
  auto events = stream.events();
  auto it = std::lower_bound(events.begin(), events.end(), t0,
                             [](const Event& e, Timestamp t) { return e.t < t; });
  for (std::size_t m = 0; m < times.size(); ++m) {
    for (; it != events.end() && it->t < times[m]; ++it) {
      const std::size_t i = static_cast<std::size_t>(it->y) * stream.width() + it->x;
      (it->p > 0 ? pos : neg)[i] += 1;
    }
    out.pos[m] = pos;
    out.neg[m] = neg;
  }
  return out;
}

// L(t0) = log B - log(mean_m exp(E_m)).
Image deblur_log(const Image& log_blurry, const CumulativeCounts& counts, double c_pos, double c_neg) {
  Image out(log_blurry.height(), log_blurry.width());
  const std::size_t samples = counts.pos.size();
  auto lb = log_blurry.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    double mean = 0.0;
    for (std::size_t m = 0; m < samples; ++m) {
      mean += std::exp(c_pos * counts.pos[m][i] - c_neg * counts.neg[m][i]);
    }
    mean /= static_cast<double>(samples);
    dst[i] = lb[i] - std::log(mean);
  }
  return out;
}

Image exp_clamped(const Image& log_image) {
  Image out(log_image.height(), log_image.width());
  auto src = log_image.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = std::clamp(std::exp(src[i]), 0.0, 1.0);
  return out;
}

double mse(const Image& a, const Image& b) {
  double acc = 0.0;
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
  return acc / static_cast<double>(x.size());
}

}  // namespace

Image event_integral(const EventStream& stream, const ThresholdConfig& config, const TimeWindow& window,
                     Timestamp t_query) {
  if (t_query < window.start || t_query > window.end) {
    throw std::invalid_argument("query time outside the integration window");
  }
  Image out(stream.height(), stream.width());
  if (t_query == window.start) return out;
  const auto events = slice(stream, window.start, t_query);
  for (const Event& e : events.events()) {
    out(e.y, e.x) += e.p > 0 ? config.c_pos : -config.c_neg;
  }
  return out;
}

std::vector<Timestamp> latent_sample_times(const Exposure& exposure, int count) {
  if (count < 1) throw std::invalid_argument("need at least one latent sample");
  if (count == 1) return {exposure.t0};
  return exposure_edges(exposure, count - 1);
}

IntensityFrame edi_deblur(const IntensityFrame& blurry, const EventStream& stream, const ThresholdConfig& config,
                          const Exposure& exposure, int samples) {
  check_geometry(blurry.pixels, stream);
  const auto times = latent_sample_times(exposure, samples);
  const auto counts = cumulative_counts(stream, exposure.t0, times);
  const auto log_blurry = to_log(blurry.pixels, config.log_eps);
  return {exp_clamped(deblur_log(log_blurry.pixels, counts, config.c_pos, config.c_neg)), exposure.t0};
}

FrameSequence edi_generate(const IntensityFrame& sharp, const EventStream& stream, const ThresholdConfig& config,
                           const Exposure& exposure, int q) {
  if (q < 1) throw std::invalid_argument("q must be at least 1");
  check_geometry(sharp.pixels, stream);
  const auto windows = partition_exposure(exposure, q);
  const auto edges = exposure_edges(exposure, q);

  FrameSequence out;
  LogFrame current = to_log(sharp.pixels, config.log_eps);
  out.frames.push_back({sharp.pixels, edges[0]});
  for (int k = 0; k < q; ++k) {
    const auto delta = event_integral(stream, config, windows[k], windows[k].end);
    auto dst = current.pixels.data();
    auto d = delta.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += d[i];
    out.frames.push_back({exp_clamped(current.pixels), edges[k + 1]});
  }
  return out;
}

std::vector<double> ThresholdSearch::grid() const {
  if (!(c_min > 0.0) || !(c_max >= c_min)) throw std::invalid_argument("threshold search needs 0 < c_min <= c_max");
  if (steps < 2) throw std::invalid_argument("threshold search needs at least two steps");
  std::vector<double> values(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double f = static_cast<double>(i) / (steps - 1);
    values[i] = log_spaced ? c_min * std::pow(c_max / c_min, f) : c_min + f * (c_max - c_min);
  }
  return values;
}

ThresholdEstimate estimate_threshold(const IntensityFrame& blurry, const EventStream& stream,
                                     const Exposure& exposure, const ThresholdSearch& search,
                                     ThresholdCriterion criterion, const Image* ground_truth, int samples,
                                     double log_eps) {
  check_geometry(blurry.pixels, stream);
  ThresholdEstimate result;
  result.grid = search.grid();
  if (criterion == ThresholdCriterion::oracle) {
    if (ground_truth == nullptr) throw std::invalid_argument("oracle criterion needs a ground-truth image");
    if (!ground_truth->same_shape(blurry.pixels)) throw std::invalid_argument("ground truth geometry differs");
  }
  if (slice(stream, exposure.t0, exposure.t1 + 1).empty()) {
    result.c = search.c_min;
    result.degenerate = true;
    return result;
  }

  const auto times = latent_sample_times(exposure, samples);
  const auto counts = cumulative_counts(stream, exposure.t0, times);
  const auto log_blurry = to_log(blurry.pixels, log_eps);
  double best = std::numeric_limits<double>::infinity();
  for (double c : result.grid) {
    const Image restored = exp_clamped(deblur_log(log_blurry.pixels, counts, c, c));
    const double score = criterion == ThresholdCriterion::oracle ? mse(restored, *ground_truth)
                                                                 : -laplacian_variance(restored);
    result.scores.push_back(score);
    if (score < best) {
      best = score;
      result.c = c;
    }
  }
  return result;
}

double laplacian_variance(const Image& image) {
  if (image.height() < 3 || image.width() < 3) return 0.0;
  double sum = 0.0;
  double sum_sq = 0.0;
  std::size_t n = 0;
  for (int y = 1; y + 1 < image.height(); ++y) {
    for (int x = 1; x + 1 < image.width(); ++x) {
      const double lap = image(y - 1, x) + image(y + 1, x) + image(y, x - 1) + image(y, x + 1) - 4.0 * image(y, x);
      sum += lap;
      sum_sq += lap * lap;
      ++n;
    }
  }
  const double mean = sum / static_cast<double>(n);
  return sum_sq / static_cast<double>(n) - mean * mean;
}

}  // namespace evb
