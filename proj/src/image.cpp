#include "evb/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "evb/errors.hpp"

namespace evb {

Image::Image(int height, int width, double fill) : height_(height), width_(width) {
  if (height < 0 || width < 0) throw std::invalid_argument("negative image geometry");
  pixels_.assign(static_cast<std::size_t>(height) * width, fill);
}

void validate_frames(std::span<const IntensityFrame> frames) {
  if (frames.empty()) throw std::invalid_argument("frame sequence is empty");
  for (std::size_t i = 1; i < frames.size(); ++i) {
    if (!frames[i].pixels.same_shape(frames[0].pixels)) {
      throw std::invalid_argument("frame sequence geometry is not uniform");
    }
    if (frames[i].t <= frames[i - 1].t) {
      throw std::invalid_argument("frame timestamps must be strictly increasing");
    }
  }
}

void FrameSequence::validate() const { validate_frames(frames); }

Image clamp_unit(Image image) {
  for (double& v : image.data()) v = std::clamp(v, 0.0, 1.0);
  return image;
}

LogFrame to_log(const Image& intensity, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw std::invalid_argument("log epsilon must lie in (0, 1]");
  LogFrame out{Image(intensity.height(), intensity.width()), epsilon};
  auto src = intensity.data();
  auto dst = out.pixels.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = std::log(std::clamp(src[i], epsilon, 1.0));
  }
  return out;
}

Image to_intensity(const LogFrame& log_frame) {
  Image out(log_frame.pixels.height(), log_frame.pixels.width());
  auto src = log_frame.pixels.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    dst[i] = std::clamp(std::exp(src[i]), 0.0, 1.0);
  }
  return out;
}

Image crop(const Image& image, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || width < 0 || height < 0 || x0 + width > image.width() ||
      y0 + height > image.height()) {
    throw std::invalid_argument("crop rectangle outside image");
  }
  Image out(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out(y, x) = image(y + y0, x + x0);
  }
  return out;
}

Image read_png(const std::filesystem::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE | cv::IMREAD_ANYDEPTH);
  if (raw.empty()) throw IoError("cannot read image " + path.string());
  double scale = 1.0 / 255.0;
  if (raw.depth() == CV_16U) {
    scale = 1.0 / 65535.0;
  } else if (raw.depth() != CV_8U) {
    throw IoError("unsupported image depth in " + path.string());
  }
  cv::Mat values;
  raw.convertTo(values, CV_64F, scale);
  Image out(values.rows, values.cols);
  for (int y = 0; y < values.rows; ++y) {
    const auto* row = values.ptr<double>(y);
    std::copy(row, row + values.cols, &out(y, 0));
  }
  return out;
}

void write_png(const std::filesystem::path& path, const Image& image, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("bit depth must be 8 or 16");
  const double max_value = bit_depth == 8 ? 255.0 : 65535.0;
  cv::Mat out(image.height(), image.width(), bit_depth == 8 ? CV_8U : CV_16U);
  for (int y = 0; y < image.height(); ++y) {
    for (int x = 0; x < image.width(); ++x) {
      const double v = std::round(std::clamp(image(y, x), 0.0, 1.0) * max_value);
      if (bit_depth == 8) {
        out.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(v);
      } else {
        out.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
      }
    }
  }
  if (!cv::imwrite(path.string(), out)) throw IoError("cannot write image " + path.string());
}

FrameSequence load_video_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    auto ext = entry.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (entry.is_regular_file() && ext == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  const fs::path stamps_path = dir / "timestamps.txt";
  std::ifstream stamps(stamps_path);
  if (!stamps) throw IoError("missing timestamps file " + stamps_path.string());
  std::vector<Timestamp> times;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(stamps, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    try {
      std::size_t used = 0;
      times.push_back(std::stoll(line, &used));
      if (used != line.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError("malformed timestamp in " + stamps_path.string(), line_no);
    }
  }
  if (times.size() != files.size()) {
    throw IoError(dir.string() + ": " + std::to_string(files.size()) + " frames but " +
                  std::to_string(times.size()) + " timestamps");
  }
  FrameSequence sequence;
  for (std::size_t i = 0; i < files.size(); ++i) {
    sequence.frames.push_back({read_png(files[i]), times[i]});
  }
  if (!sequence.frames.empty()) sequence.validate();
  return sequence;
}

void save_video_dir(const std::filesystem::path& dir, const FrameSequence& sequence, int bit_depth) {
  std::filesystem::create_directories(dir);
  std::ofstream stamps(dir / "timestamps.txt", std::ios::trunc);
  if (!stamps) throw IoError("cannot write " + (dir / "timestamps.txt").string());
  for (std::size_t i = 0; i < sequence.frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%06zu.png", i);
    write_png(dir / name, sequence.frames[i].pixels, bit_depth);
    stamps << sequence.frames[i].t << '\n';
  }
}

}  // namespace evb
