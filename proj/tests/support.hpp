#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "evb/dataset.hpp"
#include "evb/image.hpp"
#include "evb/simulator.hpp"

namespace evbtest {

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("evb_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Smooth background gradient with one or two textured squares sliding across.
inline evb::FrameSequence moving_scene(int height, int width, int frames, std::uint64_t seed,
                                       evb::Timestamp dt = 10000) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double gx = 0.3 * (u(rng) - 0.5);
  const double gy = 0.3 * (u(rng) - 0.5);
  const double base = 0.25 + 0.2 * u(rng);
  const int squares = 1 + static_cast<int>(u(rng) * 2.0);
  struct Sq {
    double x, y, vx, vy, size, level;
  };
  std::vector<Sq> sq;
  for (int i = 0; i < squares; ++i) {
    const double size = 0.25 * std::min(height, width) + u(rng) * 0.15 * std::min(height, width);
    const double speed = 0.8 + 1.2 * u(rng);
    const double angle = 2.0 * M_PI * u(rng);
    sq.push_back({u(rng) * (width - size), u(rng) * (height - size), speed * std::cos(angle), speed * std::sin(angle),
                  size, u(rng) < 0.5 ? 0.85 : 0.08});
  }
  evb::FrameSequence seq;
  for (int f = 0; f < frames; ++f) {
    evb::Image img(height, width);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double v = base + gx * (x / double(width) - 0.5) + gy * (y / double(height) - 0.5);
        for (const auto& s : sq) {
          const double x0 = s.x + s.vx * f;
          const double y0 = s.y + s.vy * f;
          if (x >= x0 && x < x0 + s.size && y >= y0 && y < y0 + s.size) {
            // checker texture inside the square
            const bool odd = ((static_cast<int>((x - x0) / 4) + static_cast<int>((y - y0) / 4)) & 1) != 0;
            v = s.level + (odd ? 0.05 : -0.05);
          }
        }
        img(y, x) = std::clamp(v, 0.02, 0.98);
      }
    }
    seq.frames.push_back({std::move(img), static_cast<evb::Timestamp>(f) * dt});
  }
  return seq;
}

inline evb::Sample scene_sample(int height, int width, int q, std::uint64_t seed, double c = 0.2, double sigma = 0.0,
                                evb::Timestamp dt = 10000) {
  const auto seq = moving_scene(height, width, q + 1, seed, dt);
  evb::ThresholdConfig cfg;
  cfg.c_pos = cfg.c_neg = c;
  cfg.sigma_c = sigma;
  cfg.seed = seed;
  return evb::make_sample(seq.frames, q, cfg, "scene" + std::to_string(seed));
}

inline double max_abs_diff(const evb::Image& a, const evb::Image& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace evbtest
