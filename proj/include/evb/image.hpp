#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "evb/events.hpp"

namespace evb {

inline constexpr double kDefaultLogEpsilon = 1.0 / 255.0;

/// Row-major height x width grid of doubles.
class Image {
 public:
  Image() = default;
  Image(int height, int width, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  bool empty() const { return pixels_.empty(); }

  double& operator()(int y, int x) { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
  double operator()(int y, int x) const { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<double> data() { return pixels_; }
  std::span<const double> data() const { return pixels_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

/// Grayscale intensity in [0, 1] at a timestamp.
struct IntensityFrame {
  Image pixels;
  Timestamp t = 0;
};

/// L = log(max(I, epsilon)).
struct LogFrame {
  Image pixels;
  double epsilon = kDefaultLogEpsilon;
};

/// Ordered frames with strictly increasing timestamps and one geometry.
struct FrameSequence {
  std::vector<IntensityFrame> frames;

  /// Throws std::invalid_argument when the invariants do not hold.
  void validate() const;
};

void validate_frames(std::span<const IntensityFrame> frames);

Image clamp_unit(Image image);
LogFrame to_log(const Image& intensity, double epsilon = kDefaultLogEpsilon);
/// clamp(exp(L), 0, 1)
Image to_intensity(const LogFrame& log_frame);

Image crop(const Image& image, int x0, int y0, int width, int height);

/// Loads any PNG as grayscale in [0, 1] (8- and 16-bit supported).
Image read_png(const std::filesystem::path& path);
/// Writes values clamped to [0, 1] as an 8- or 16-bit grayscale PNG.
void write_png(const std::filesystem::path& path, const Image& image, int bit_depth = 8);

/// Directory of numbered PNG frames plus `timestamps.txt` (one integer
/// microsecond value per line, in filename order).
FrameSequence load_video_dir(const std::filesystem::path& dir);
void save_video_dir(const std::filesystem::path& dir, const FrameSequence& sequence, int bit_depth = 8);

}  // namespace evb
