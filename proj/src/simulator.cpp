#include "evb/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace evb {

namespace {

// Crossings within this distance of a segment end still count, so that
// accumulated rounding in ref + c + c + ... does not drop an exact crossing.
constexpr double kLevelTolerance = 1e-9;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class ThresholdSampler {
 public:
  ThresholdSampler(const ThresholdConfig& config, std::uint64_t stream_id)
      : config_(config), rng_(splitmix64(config.seed ^ splitmix64(stream_id))) {
    current_pos_ = draw(+1);
    current_neg_ = draw(-1);
  }

  double current(int polarity) const { return polarity > 0 ? current_pos_ : current_neg_; }

  void advance(int polarity) {
    (polarity > 0 ? current_pos_ : current_neg_) = draw(polarity);
  }

 private:
  double draw(int polarity) {
    const double nominal = config_.nominal(polarity);
    if (config_.sigma_c <= 0.0) return nominal;
    std::normal_distribution<double> noise(nominal, config_.sigma_c);
    return std::max(ThresholdConfig::kMinThreshold, noise(rng_));
  }

  const ThresholdConfig& config_;
  std::mt19937_64 rng_;
  double current_pos_ = 0.0;
  double current_neg_ = 0.0;
};

void check_sequence(std::span<const IntensityFrame> frames) {
  if (frames.size() < 2) throw std::invalid_argument("simulation needs at least two frames");
  validate_frames(frames);
}

std::vector<LogFrame> log_frames(std::span<const IntensityFrame> frames, double eps) {
  std::vector<LogFrame> logs;
  logs.reserve(frames.size());
  for (const auto& f : frames) logs.push_back(to_log(f.pixels, eps));
  return logs;
}

void simulate_row(int y, const std::vector<LogFrame>& logs, std::span<const Timestamp> times,
                  const ThresholdConfig& config, std::vector<Event>& out) {
  const int width = logs.front().pixels.width();
  std::vector<double> trajectory(logs.size());
  for (int x = 0; x < width; ++x) {
    for (std::size_t k = 0; k < logs.size(); ++k) trajectory[k] = logs[k].pixels(y, x);
    const auto pixel = simulate_pixel(trajectory, times, config,
                                      static_cast<std::uint64_t>(y) * width + x);
    for (const auto& e : pixel.events) {
      out.push_back(Event{e.t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                          static_cast<std::int8_t>(e.polarity)});
    }
  }
}

EventStream merge_rows(int width, int height, std::vector<std::vector<Event>>& rows) {
  std::size_t total = 0;
  for (const auto& r : rows) total += r.size();
  std::vector<Event> events;
  events.reserve(total);
  for (auto& r : rows) events.insert(events.end(), r.begin(), r.end());
  return EventStream::from_unsorted(width, height, std::move(events));
}

}  // namespace

void ThresholdConfig::validate() const {
  if (!(c_pos > 0.0) || !(c_neg > 0.0)) throw std::invalid_argument("contrast thresholds must be positive");
  if (!(sigma_c >= 0.0)) throw std::invalid_argument("threshold noise must be non-negative");
  if (!(log_eps > 0.0 && log_eps <= 1.0)) throw std::invalid_argument("log epsilon must lie in (0, 1]");
  if (refractory_us < 0) throw std::invalid_argument("refractory period must be non-negative");
}

PixelSimulation simulate_pixel(std::span<const double> log_levels, std::span<const Timestamp> times,
                               const ThresholdConfig& config, std::uint64_t stream_id) {
  if (log_levels.size() != times.size() || log_levels.empty()) {
    throw std::invalid_argument("pixel trajectory needs matching, non-empty levels and times");
  }
  ThresholdSampler thresholds(config, stream_id);
  PixelSimulation result;
  double reference = log_levels[0];
  bool emitted = false;
  Timestamp last_emitted = 0;

  for (std::size_t k = 0; k + 1 < log_levels.size(); ++k) {
    const double a = log_levels[k];
    const double b = log_levels[k + 1];
    if (a == b) continue;
    const int polarity = b > a ? 1 : -1;
    const double dt = static_cast<double>(times[k + 1] - times[k]);
    while (true) {
      const double level = reference + polarity * thresholds.current(polarity);
      const bool reached = polarity > 0 ? level <= b + kLevelTolerance : level >= b - kLevelTolerance;
      if (!reached) break;
      const double fraction = std::clamp((level - a) / (b - a), 0.0, 1.0);
      const Timestamp t = times[k] + std::llround(fraction * dt);
      if (!emitted || config.refractory_us == 0 || t - last_emitted >= config.refractory_us) {
        result.events.push_back({t, polarity});
        emitted = true;
        last_emitted = t;
      }
      reference = level;
      thresholds.advance(polarity);
    }
  }
  result.final_reference = reference;
  return result;
}

EventStream simulate(std::span<const IntensityFrame> frames, const ThresholdConfig& config) {
  config.validate();
  check_sequence(frames);
  const auto logs = log_frames(frames, config.log_eps);
  std::vector<Timestamp> times;
  for (const auto& f : frames) times.push_back(f.t);
  const int height = frames.front().pixels.height();
  const int width = frames.front().pixels.width();

  std::vector<std::vector<Event>> rows(static_cast<std::size_t>(height));
#pragma omp parallel for schedule(dynamic, 4)
  for (int y = 0; y < height; ++y) {
    simulate_row(y, logs, times, config, rows[y]);
  }
  return merge_rows(width, height, rows);
}

IntensityFrame synthesize_blur(std::span<const IntensityFrame> frames, std::size_t first, std::size_t count) {
  if (count == 0) throw std::invalid_argument("blur window is empty");
  if (first + count > frames.size()) throw std::invalid_argument("blur window exceeds the sequence");
  const auto window = frames.subspan(first, count);
  validate_frames(window);
  IntensityFrame out{Image(window[0].pixels.height(), window[0].pixels.width()), window[0].t};
  auto acc = out.pixels.data();
  for (const auto& f : window) {
    auto src = f.pixels.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
  }
  for (double& v : acc) v /= static_cast<double>(count);
  return out;
}

namespace reference {

EventStream simulate(std::span<const IntensityFrame> frames, const ThresholdConfig& config) {
  config.validate();
  check_sequence(frames);
  const auto logs = log_frames(frames, config.log_eps);
  std::vector<Timestamp> times;
  for (const auto& f : frames) times.push_back(f.t);
  const int height = frames.front().pixels.height();
  const int width = frames.front().pixels.width();
  std::vector<std::vector<Event>> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) simulate_row(y, logs, times, config, rows[y]);
  return merge_rows(width, height, rows);
}

}  // namespace reference

}  // namespace evb
