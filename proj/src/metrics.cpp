#include "evb/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "evb/errors.hpp"

namespace evb {

namespace {

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": images differ in size");
  if (a.height() == 0 || a.width() == 0) throw ShapeError(std::string(what) + ": empty image");
}

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_taps() {
  std::vector<double> taps(kWindow);
  double sum = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    const double d = i - kWindow / 2;
    taps[i] = std::exp(-d * d / (2 * kSigma * kSigma));
    sum += taps[i];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

// Separable valid-mode filter.
Image filter_valid(const Image& src, const std::vector<double>& taps) {
  const int h = src.height() - kWindow + 1;
  const int w = src.width() - kWindow + 1;
  Image rows(src.height(), w);
  for (int y = 0; y < src.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * src(y, x + k);
      rows(y, x) = acc;
    }
  }
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWindow; ++k) acc += taps[k] * rows(y + k, x);
      out(y, x) = acc;
    }
  }
  return out;
}

Image product(const Image& a, const Image& b) {
  Image out(a.height(), a.width());
  auto o = out.data();
  auto pa = a.data();
  auto pb = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = pa[i] * pb[i];
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same(a, b, "psnr");
  auto pa = a.data();
  auto pb = b.data();
  double sse = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    const double d = pa[i] - pb[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(pa.size());
  if (mse == 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, -10.0 * std::log10(mse));
}

double ssim(const Image& a, const Image& b) {
  require_same(a, b, "ssim");
  if (a.height() < kWindow || a.width() < kWindow) throw ShapeError("ssim: images must be at least 11x11");
  constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
  constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
  if (a == b) return 1.0;
  const auto taps = gaussian_taps();
  const Image mu_a = filter_valid(a, taps);
  const Image mu_b = filter_valid(b, taps);
  const Image e_aa = filter_valid(product(a, a), taps);
  const Image e_bb = filter_valid(product(b, b), taps);
  const Image e_ab = filter_valid(product(a, b), taps);
  double total = 0.0;
  auto ma = mu_a.data();
  auto mb = mu_b.data();
  for (std::size_t i = 0; i < ma.size(); ++i) {
    const double va = e_aa.data()[i] - ma[i] * ma[i];
    const double vb = e_bb.data()[i] - mb[i] * mb[i];
    const double cov = e_ab.data()[i] - ma[i] * mb[i];
    total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) / ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(ma.size());
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json examples = nlohmann::json::array();
  for (const auto& e : report.examples) examples.push_back({{"name", e.name}, {"psnr_db", e.psnr_db}, {"ssim", e.ssim}});
  return {{"examples", examples},
          {"mean_psnr_db", report.mean_psnr_db},
          {"mean_ssim", report.mean_ssim},
          {"config_digest", report.config_digest}};
}

MetricsReport metrics_report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    for (const auto& e : j.at("examples")) {
      r.examples.push_back({e.at("name").get<std::string>(), e.at("psnr_db").get<double>(), e.at("ssim").get<double>()});
    }
    r.mean_psnr_db = j.at("mean_psnr_db").get<double>();
    r.mean_ssim = j.at("mean_ssim").get<double>();
    r.config_digest = j.at("config_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("bad metrics report: ") + e.what());
  }
  return r;
}

void finalize(MetricsReport& report) {
  double p = 0.0;
  double s = 0.0;
  for (const auto& e : report.examples) {
    p += e.psnr_db;
    s += e.ssim;
  }
  const double n = static_cast<double>(std::max<std::size_t>(1, report.examples.size()));
  report.mean_psnr_db = p / n;
  report.mean_ssim = s / n;
}

namespace {

std::set<std::string> png_names(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError(dir.string() + " is not a directory");
  std::set<std::string> names;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") names.insert(entry.path().filename().string());
  }
  return names;
}

}  // namespace

MetricsReport evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir) {
  const auto pred = png_names(pred_dir);
  const auto gt = png_names(gt_dir);
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("prediction directory has " + std::to_string(pred.size()) +
                                " images, ground truth has " + std::to_string(gt.size()));
  }
  if (pred != gt) throw std::invalid_argument("prediction and ground-truth file names differ");
  if (pred.empty()) throw std::invalid_argument("no PNG images to evaluate");

  const std::vector<std::string> names(pred.begin(), pred.end());
  MetricsReport report;
  report.examples.resize(names.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(names.size()); ++i) {
    const Image a = read_png(pred_dir / names[i]);
    const Image b = read_png(gt_dir / names[i]);
    report.examples[i] = {names[i], psnr(a, b), ssim(a, b)};
  }
  finalize(report);
  return report;
}

void write_bar_plot(const std::filesystem::path& path, const std::vector<double>& values, double lo, double hi) {
  constexpr int kBar = 12;
  constexpr int kGap = 4;
  constexpr int kHeight = 160;
  const int width = std::max<int>(kGap + 1, static_cast<int>(values.size()) * (kBar + kGap) + kGap);
  Image img(kHeight, width, 1.0);
  const double span = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double frac = std::clamp((values[i] - lo) / span, 0.0, 1.0);
    const int bar = static_cast<int>(std::lround(frac * (kHeight - 2)));
    const int x0 = kGap + static_cast<int>(i) * (kBar + kGap);
    for (int y = kHeight - 1 - bar; y < kHeight; ++y) {
      for (int x = x0; x < x0 + kBar; ++x) img(y, x) = 0.25;
    }
  }
  for (int x = 0; x < width; ++x) img(kHeight - 1, x) = 0.0;
  write_png(path, img);
}

}  // namespace evb
