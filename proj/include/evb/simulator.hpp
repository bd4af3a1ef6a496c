#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "evb/events.hpp"
#include "evb/image.hpp"

namespace evb {

/// Contrast thresholds are in log-intensity units.
struct ThresholdConfig {
  double c_pos = 0.2;
  double c_neg = 0.2;
  double sigma_c = 0.0;  // per-event threshold noise std
  std::uint64_t seed = 0;
  double log_eps = kDefaultLogEpsilon;
  Timestamp refractory_us = 0;

  static constexpr double kMinThreshold = 0.01;

  void validate() const;
  double nominal(int polarity) const { return polarity > 0 ? c_pos : c_neg; }
};

struct PixelEvent {
  Timestamp t;
  int polarity;
};

struct PixelSimulation {
  std::vector<PixelEvent> events;
  double final_reference = 0.0;  // L_ref after the last sample
};

/*
 * Threshold-crossing model for a single pixel. `log_levels[k]` is the log
 * intensity at `times[k]`; the trajectory is linearly interpolated between
 * samples. Whenever it moves one (possibly noise-sampled) threshold away from
 * the reference level an event is emitted at the interpolated crossing time
 * and the reference advances to the crossing level.
 *
 * `stream_id` selects an independent noise stream, so per-pixel results do
 * not depend on evaluation order.
 */
PixelSimulation simulate_pixel(std::span<const double> log_levels, std::span<const Timestamp> times,
                               const ThresholdConfig& config, std::uint64_t stream_id);

/// Events for a frame sequence; rows run in parallel and the merged output is
/// stably sorted by timestamp.
EventStream simulate(std::span<const IntensityFrame> frames, const ThresholdConfig& config);

/// Pixel-wise mean of `count` intensity frames starting at `first`; the
/// result carries the first frame's timestamp.
IntensityFrame synthesize_blur(std::span<const IntensityFrame> frames, std::size_t first, std::size_t count);

namespace reference {

EventStream simulate(std::span<const IntensityFrame> frames, const ThresholdConfig& config);

}  // namespace reference

}  // namespace evb
