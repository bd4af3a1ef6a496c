#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "evb/checkpoint.hpp"
#include "evb/events.hpp"
#include "evb/image.hpp"
#include "evb/networks.hpp"
#include "evb/training.hpp"

namespace evb {

struct PipelineResult {
  FrameSequence frames;                         // q + 1 intensity frames at the partition edges
  std::vector<std::size_t> window_event_counts;  // events consumed by each recurrent step
  std::size_t exposure_event_count = 0;          // events inside the closed exposure
};

/// Deblurs one image of any size with a B-bin voxel grid of the exposure.
IntensityFrame run_deblur(const IntensityFrame& blurry, const EventStream& events, const Exposure& exposure,
                          const nn::DeblurNet<float>& deblur);

/// Stage 1 deblurs with a B-bin voxel grid of the whole exposure; stage 2
/// runs q recurrent steps, step k using the events of the k-th partition
/// window. Inputs of any size are edge-padded to the networks' size multiple
/// and the outputs cropped back.
PipelineResult run_pipeline(const IntensityFrame& blurry, const EventStream& events, const Exposure& exposure,
                            const nn::DeblurNet<float>& deblur, const nn::HfrNet<float>& hfr, int q);

/// Loads both checkpoints first; missing or broken files raise CheckpointError.
PipelineResult run_pipeline(const IntensityFrame& blurry, const EventStream& events, const Exposure& exposure,
                            const std::filesystem::path& deblur_ckpt, const std::filesystem::path& hfr_ckpt, int q);

/// Replicates the last row/column until both extents divide `multiple`.
Image pad_to_multiple(const Image& image, int multiple);
/// Zero-pads a voxel grid to the given extents.
VoxelGrid pad_voxel(const VoxelGrid& grid, int height, int width);

// Published full-scale figures, kept for side-by-side reporting only.
inline constexpr double kReferenceDeblurPsnr = 32.99;
inline constexpr double kReferenceDeblurSsim = 0.9353;
inline constexpr double kReferenceHfrPsnr = 31.76;
inline constexpr double kReferenceHfrSsim = 0.9202;
inline constexpr double kReferenceSingleBinPsnr = 29.93;
inline constexpr double kReferenceSingleBinSsim = 0.9043;

struct AblationRow {
  int bins = 0;
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;
  double final_train_loss = 0.0;
  int epochs = 0;
  std::uint64_t seed = 0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  TrainConfig budget;
  std::string config_digest;  // of the shared network config with bins = 0
};

nlohmann::json to_json(const AblationReport& report);

/// Trains one deblur net per bin count under the same budget and seed and
/// scores each on `eval` (whole images, top-left cropped to the size multiple).
AblationReport ablate_bins(std::span<const Sample> train, std::span<const Sample> eval, const NetworkConfig& base,
                           const TrainConfig& budget, const LossConfig& loss, const std::vector<int>& bins_list);

}  // namespace evb
