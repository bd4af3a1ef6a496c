#pragma once

#include <vector>

#include "evb/events.hpp"
#include "evb/image.hpp"
#include "evb/simulator.hpp"

namespace evb {

/*
 * Closed-form constant-threshold model.
 *
 * With every event contributing +c_pos or -c_neg to the log intensity, the
 * latent image at t satisfies L(t) = L(t0) + E(t), and the blurry image is
 * the mean of exp(L) over the exposure. Deblurring inverts that mean in the
 * log domain; video generation integrates events forward.
 */

/// Log-domain change map E(t_query) = sum of +-c over events with
/// window.start <= t < t_query.
Image event_integral(const EventStream& stream, const ThresholdConfig& config, const TimeWindow& window,
                     Timestamp t_query);

/// The `count` latent sample instants used to discretize the exposure:
/// t0 + m (t1 - t0) / (count - 1), rounded down.
std::vector<Timestamp> latent_sample_times(const Exposure& exposure, int count);

IntensityFrame edi_deblur(const IntensityFrame& blurry, const EventStream& stream, const ThresholdConfig& config,
                          const Exposure& exposure, int samples = 7);

/// Returns q + 1 frames at the exposure partition edges; frame 0 is `sharp`.
FrameSequence edi_generate(const IntensityFrame& sharp, const EventStream& stream, const ThresholdConfig& config,
                           const Exposure& exposure, int q);

enum class ThresholdCriterion {
  sharpness,  // maximize variance of the Laplacian of the deblurred image
  oracle,     // minimize MSE against a provided ground truth
};

struct ThresholdSearch {
  double c_min = 0.05;
  double c_max = 0.5;
  int steps = 30;
  bool log_spaced = true;

  std::vector<double> grid() const;
};

struct ThresholdEstimate {
  double c = 0.0;
  bool degenerate = false;  // no events: nothing to estimate
  std::vector<double> grid;
  std::vector<double> scores;  // criterion value per grid point (lower is better)
};

/// Grid search over a shared threshold c = c_pos = c_neg. Ties go to the
/// smaller c. `ground_truth` is required for the oracle criterion.
ThresholdEstimate estimate_threshold(const IntensityFrame& blurry, const EventStream& stream,
                                     const Exposure& exposure, const ThresholdSearch& search,
                                     ThresholdCriterion criterion, const Image* ground_truth = nullptr,
                                     int samples = 7, double log_eps = kDefaultLogEpsilon);

/// Variance of the 4-neighbour Laplacian over interior pixels.
double laplacian_variance(const Image& image);

}  // namespace evb
