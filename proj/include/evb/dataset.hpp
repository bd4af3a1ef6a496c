#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "evb/events.hpp"
#include "evb/image.hpp"
#include "evb/simulator.hpp"

namespace evb {

enum class Split { train, val };

/// One in-memory training/evaluation example.
struct Sample {
  std::string name;
  IntensityFrame blurry;  // t = exposure.t0
  IntensityFrame sharp;   // latent frame at exposure.t0
  std::vector<IntensityFrame> hfr_targets;
  EventStream events;
  Exposure exposure;
};

/// Windows of events between consecutive HFR targets, starting at the sharp
/// frame. The last window is closed at the final target time.
std::vector<TimeWindow> hfr_windows(const Sample& sample);

/// Builds a sample from `window` latent frames: blur by averaging, sharp
/// target = first frame, HFR targets = the next `q` frames, events simulated
/// over the whole window.
Sample make_sample(std::span<const IntensityFrame> window, int q, const ThresholdConfig& thresholds,
                   std::string name = {});

struct DatasetOptions {
  int window_len = 7;
  int q = 6;
  ThresholdConfig thresholds{.c_pos = 0.2, .c_neg = 0.2, .sigma_c = 0.03};
  int train_parts = 2;
  int val_parts = 1;
  std::uint64_t seed = 0;
};

struct DatasetExample {
  std::string name;
  std::filesystem::path blurry;
  std::filesystem::path sharp;
  std::vector<std::filesystem::path> hfr_targets;
  std::filesystem::path events;
  Exposure exposure;
  std::vector<Timestamp> frame_times;  // all latent frames of the window
  Split split = Split::train;
};

/// The dataset manifest; paths are relative to `root`.
struct DatasetIndex {
  std::filesystem::path root;
  DatasetOptions options;
  std::vector<DatasetExample> examples;
  std::vector<std::string> warnings;

  std::size_t count(Split split) const;
};

void save_manifest(const DatasetIndex& index, const std::filesystem::path& path);
DatasetIndex load_manifest(const std::filesystem::path& path);

/// Cuts every video into non-overlapping windows of `window_len` frames and
/// writes blurry/sharp/target PNGs, an EVT1 event file per window and
/// `manifest.json` under `out_dir`. Directories with too few frames are
/// skipped with a warning.
DatasetIndex build_dataset(std::span<const std::filesystem::path> video_dirs,
                           const std::filesystem::path& out_dir, const DatasetOptions& options);

/// Deterministic train/val assignment: shuffles with `seed` and gives the
/// first round(n * train / (train + val)) indices to the training split.
std::vector<Split> assign_splits(std::size_t n, int train_parts, int val_parts, std::uint64_t seed);

Sample load_sample(const DatasetIndex& index, const DatasetExample& example);
std::vector<Sample> load_samples(const DatasetIndex& index, Split split);

}  // namespace evb
