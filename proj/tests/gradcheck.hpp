#pragma once

#include <cmath>
#include <random>

#include "evb/networks.hpp"
#include "evb/training.hpp"

namespace evbtest {

struct GradCheck {
  std::size_t total = 0;
  std::size_t within = 0;
  double worst = 0.0;

  double fraction() const { return total ? static_cast<double>(within) / total : 0.0; }
};

inline evb::NetworkConfig tiny_config() {
  evb::NetworkConfig c;
  c.levels = 1;
  c.stem_channels = 4;
  c.dense_layers = 1;
  c.growth = 4;
  c.head_init = evb::HeadInit::random;
  return c;
}

// Analytic vs central-difference gradients of the L1 loss (lambda = 0) for
// every parameter. `recurrent` unrolls two HFR steps.
inline GradCheck gradient_check(bool recurrent, std::uint64_t seed, double tol = 1e-3, int size = 8) {
  using namespace evb;
  using namespace evb::nn;
  const NetworkConfig cfg = tiny_config();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  std::uniform_real_distribution<double> sv(-1.0, 1.0);
  Tensor<double> img(1, size, size), gt(1, size, size), gt2(1, size, size), vox(cfg.bins, size, size);
  for (std::size_t i = 0; i < img.size(); ++i) {
    img[i] = std::log(u(rng));
    gt[i] = u(rng);
    gt2[i] = u(rng);
  }
  for (std::size_t i = 0; i < vox.size(); ++i) vox[i] = sv(rng);
  const Var<double> x(img), target(gt), target2(gt2), v(vox);

  DeblurNet<double> deblur(cfg, seed);
  HfrNet<double> hfr(cfg, seed);
  ParameterSet<double>& params = recurrent ? hfr.parameters() : deblur.parameters();
  auto loss = [&]() -> Var<double> {
    if (!recurrent) return nn::total_loss<double>(nn::exp(deblur.forward(x, v)), target, 0.0, nullptr);
    auto [p1, s1] = hfr.forward(x, v, RecurrentState<double>{});
    auto [p2, s2] = hfr.forward(p1, v, s1);
    return add(nn::total_loss<double>(nn::exp(p1), target, 0.0, nullptr),
               nn::total_loss<double>(nn::exp(p2), target2, 0.0, nullptr));
  };

  params.zero_grad();
  backward(loss());
  GradCheck result;
  for (auto& p : params.items()) {
    auto& value = p.var.mutable_value();
    const Tensor<double> analytic = p.var.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double keep = value[i];
      const double h = 1e-6;
      double up, down;
      {
        NoGradGuard no_grad;
        value[i] = keep + h;
        up = loss().value()[0];
        value[i] = keep - h;
        down = loss().value()[0];
      }
      value[i] = keep;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      const double scale = std::max(std::abs(a), std::abs(numeric));
      const double rel = scale < 1e-9 ? 0.0 : std::abs(a - numeric) / scale;
      ++result.total;
      if (rel <= tol) ++result.within;
      result.worst = std::max(result.worst, rel);
    }
  }
  return result;
}

}  // namespace evbtest
