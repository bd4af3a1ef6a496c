#include "evb/pipeline.hpp"

#include "evb/errors.hpp"
#include "evb/metrics.hpp"

namespace evb {

Image pad_to_multiple(const Image& image, int multiple) {
  if (multiple < 1) throw std::invalid_argument("pad multiple must be positive");
  const int h = image.height();
  const int w = image.width();
  if (h == 0 || w == 0) throw ShapeError("cannot pad an empty image");
  const int ph = (h + multiple - 1) / multiple * multiple;
  const int pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return image;
  Image out(ph, pw);
  for (int y = 0; y < ph; ++y) {
    for (int x = 0; x < pw; ++x) out(y, x) = image(std::min(y, h - 1), std::min(x, w - 1));
  }
  return out;
}

VoxelGrid pad_voxel(const VoxelGrid& grid, int height, int width) {
  if (height < grid.height() || width < grid.width()) throw ShapeError("pad_voxel cannot shrink a grid");
  if (height == grid.height() && width == grid.width()) return grid;
  VoxelGrid out(grid.bins(), height, width, grid.window());
  for (int b = 0; b < grid.bins(); ++b) {
    for (int y = 0; y < grid.height(); ++y) {
      for (int x = 0; x < grid.width(); ++x) out.at(b, y, x) = grid.at(b, y, x);
    }
  }
  return out;
}

namespace {

void check_geometry(const IntensityFrame& blurry, const EventStream& events) {
  const int h = blurry.pixels.height();
  const int w = blurry.pixels.width();
  if (events.width() != w || events.height() != h) {
    throw ShapeError("event geometry " + std::to_string(events.width()) + "x" + std::to_string(events.height()) +
                     " differs from the image " + std::to_string(w) + "x" + std::to_string(h));
  }
}

}  // namespace

IntensityFrame run_deblur(const IntensityFrame& blurry, const EventStream& events, const Exposure& exposure,
                          const nn::DeblurNet<float>& deblur) {
  check_geometry(blurry, events);
  const Image padded = pad_to_multiple(blurry.pixels, deblur.config().size_multiple());
  const EventStream inside = slice(events, exposure.t0, exposure.t1 + 1);
  const VoxelGrid voxel =
      pad_voxel(voxelize(inside, exposure.window(), deblur.config().bins), padded.height(), padded.width());
  const LogFrame out = forward_deblur(deblur, to_log(padded), voxel);
  return {crop(to_intensity(out), 0, 0, blurry.pixels.width(), blurry.pixels.height()), exposure.t0};
}

PipelineResult run_pipeline(const IntensityFrame& blurry, const EventStream& events, const Exposure& exposure,
                            const nn::DeblurNet<float>& deblur, const nn::HfrNet<float>& hfr, int q) {
  if (q < 1) throw std::invalid_argument("q must be at least 1");
  check_geometry(blurry, events);
  const int h = blurry.pixels.height();
  const int w = blurry.pixels.width();
  const int multiple = std::max(deblur.config().size_multiple(), hfr.config().size_multiple());
  const Image padded = pad_to_multiple(blurry.pixels, multiple);
  const int ph = padded.height();
  const int pw = padded.width();

  PipelineResult result;
  const EventStream inside = slice(events, exposure.t0, exposure.t1 + 1);
  result.exposure_event_count = inside.size();

  const VoxelGrid full = pad_voxel(voxelize(inside, exposure.window(), deblur.config().bins), ph, pw);
  LogFrame current = forward_deblur(deblur, to_log(padded), full);
  result.frames.frames.push_back({crop(to_intensity(current), 0, 0, w, h), exposure.t0});

  const auto windows = partition_exposure(exposure, q);
  nn::RecurrentState<float> state;
  for (const auto& window : windows) {
    const EventStream part = slice(inside, window.start, window.end);
    result.window_event_counts.push_back(part.size());
    const VoxelGrid voxel = pad_voxel(voxelize(part, window, hfr.config().bins), ph, pw);
    auto [next, next_state] = forward_hfr(hfr, current, voxel, state);
    current = std::move(next);
    state = std::move(next_state);
    const Timestamp t = window.end == exposure.t1 + 1 ? exposure.t1 : window.end;
    result.frames.frames.push_back({crop(to_intensity(current), 0, 0, w, h), t});
  }
  return result;
}

PipelineResult run_pipeline(const IntensityFrame& blurry, const EventStream& events, const Exposure& exposure,
                            const std::filesystem::path& deblur_ckpt, const std::filesystem::path& hfr_ckpt, int q) {
  const auto deblur = load_deblur_net(load_checkpoint(deblur_ckpt));
  const auto hfr = load_hfr_net(load_checkpoint(hfr_ckpt));
  return run_pipeline(blurry, events, exposure, deblur, hfr, q);
}

nlohmann::json to_json(const AblationReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"bins", r.bins},
                    {"mean_psnr_db", r.mean_psnr_db},
                    {"mean_ssim", r.mean_ssim},
                    {"final_train_loss", r.final_train_loss},
                    {"epochs", r.epochs},
                    {"seed", r.seed}});
  }
  const auto& b = report.budget;
  return {{"rows", rows},
          {"budget",
           {{"learning_rate", b.learning_rate},
            {"batch_size", b.batch_size},
            {"epochs", b.epochs},
            {"crop", b.crop},
            {"min_event_density", b.min_event_density},
            {"max_resample", b.max_resample},
            {"seed", b.seed}}},
          {"config_digest", report.config_digest},
          {"reference",
           {{"note", "published full-scale results, not desk-scale targets"},
            {"bins_6", {{"psnr_db", kReferenceDeblurPsnr}, {"ssim", kReferenceDeblurSsim}}},
            {"bins_1", {{"psnr_db", kReferenceSingleBinPsnr}, {"ssim", kReferenceSingleBinSsim}}}}}};
}

AblationReport ablate_bins(std::span<const Sample> train, std::span<const Sample> eval, const NetworkConfig& base,
                           const TrainConfig& budget, const LossConfig& loss, const std::vector<int>& bins_list) {
  if (bins_list.empty()) throw std::invalid_argument("bins list is empty");
  if (eval.empty()) throw std::invalid_argument("evaluation split is empty");
  AblationReport report;
  report.budget = budget;
  NetworkConfig shared = base;
  shared.bins = 0;
  report.config_digest = config_digest(shared);
  for (int bins : bins_list) {
    NetworkConfig cfg = base;
    cfg.bins = bins;
    const TrainResult trained = train_deblur(train, {}, cfg, budget, loss);
    const auto net = load_deblur_net(trained.last);
    MetricsReport m;
    for (const auto& s : eval) {
      const Sample c = crop_to_multiple(s, cfg.size_multiple());
      const Image restored = deblur_sample(net, c);
      m.examples.push_back({s.name, psnr(restored, c.sharp.pixels), ssim(restored, c.sharp.pixels)});
    }
    finalize(m);
    report.rows.push_back({bins, m.mean_psnr_db, m.mean_ssim, trained.history.back().train_loss,
                           static_cast<int>(trained.history.size()), budget.seed});
  }
  return report;
}

}  // namespace evb
