#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <utility>
#include <vector>

namespace evb {

/// Microseconds.
using Timestamp = std::int64_t;

inline constexpr Timestamp kTimeInfinity = std::numeric_limits<Timestamp>::max();

struct Event {
  Timestamp t = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int8_t p = 1;  // -1 or +1

  friend bool operator==(const Event&, const Event&) = default;
};

/// Half-open interval [start, end).
struct TimeWindow {
  Timestamp start = 0;
  Timestamp end = kTimeInfinity;

  bool contains(Timestamp t) const { return t >= start && t < end; }
  Timestamp duration() const { return end - start; }

  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

/// Closed exposure interval [t0, t1]; t0 is the restoration target time.
struct Exposure {
  Timestamp t0 = 0;
  Timestamp t1 = 0;

  TimeWindow window() const { return {t0, t1 + 1}; }

  friend bool operator==(const Exposure&, const Exposure&) = default;
};

/// Splits an exposure into `parts` consecutive half-open windows whose union
/// is exactly [t0, t1]. Edge k sits at t0 + floor(k (t1 - t0) / parts); the
/// last window is closed at t1.
std::vector<TimeWindow> partition_exposure(const Exposure& exposure, int parts);

/// The `parts + 1` boundary instants t0 + floor(k (t1 - t0) / parts).
std::vector<Timestamp> exposure_edges(const Exposure& exposure, int parts);

/*
 * A time-ordered set of events on a width x height sensor. The constructor
 * enforces the invariants: polarity in {-1, +1}, coordinates inside the
 * geometry and timestamps non-decreasing.
 */
class EventStream {
 public:
  EventStream() = default;
  EventStream(int width, int height, std::vector<Event> events = {});

  /// Sorts (stably, by timestamp) before validating.
  static EventStream from_unsorted(int width, int height, std::vector<Event> events);

  int width() const { return width_; }
  int height() const { return height_; }
  std::span<const Event> events() const { return events_; }
  std::size_t size() const { return events_.size(); }
  bool empty() const { return events_.empty(); }

  friend bool operator==(const EventStream&, const EventStream&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Event> events_;
};

/// Signed polarity counts binned over a time window: bins x height x width.
class VoxelGrid {
 public:
  VoxelGrid() = default;
  VoxelGrid(int bins, int height, int width, TimeWindow window);

  int bins() const { return bins_; }
  int height() const { return height_; }
  int width() const { return width_; }
  const TimeWindow& window() const { return window_; }

  std::int32_t& at(int bin, int y, int x) {
    return values_[(static_cast<std::size_t>(bin) * height_ + y) * width_ + x];
  }
  std::int32_t at(int bin, int y, int x) const {
    return values_[(static_cast<std::size_t>(bin) * height_ + y) * width_ + x];
  }
  std::span<std::int32_t> values() { return values_; }
  std::span<const std::int32_t> values() const { return values_; }

  /// Sum over bins at one pixel.
  std::int64_t pixel_sum(int y, int x) const;

  /// Bin that timestamp `t` (inside the window) falls into.
  int bin_of(Timestamp t) const;

  friend bool operator==(const VoxelGrid&, const VoxelGrid&) = default;

 private:
  int bins_ = 0;
  int height_ = 0;
  int width_ = 0;
  TimeWindow window_;
  std::vector<std::int32_t> values_;
};

enum class EventFormat { csv, evt1 };

struct LoadedEvents {
  EventStream stream;
  bool resorted = false;  // input was out of order and got sorted
};

/// Detects the format from the leading magic bytes.
LoadedEvents load_events(const std::filesystem::path& path);
void save_events(const EventStream& stream, const std::filesystem::path& path, EventFormat format);

/// Picks evt1 for a ".evt1"/".bin" extension and csv otherwise.
EventFormat format_for_path(const std::filesystem::path& path);

/// Events with t_start <= t < t_end, order preserved.
EventStream slice(const EventStream& stream, Timestamp t_start, Timestamp t_end);

/// Events inside the spatial rectangle, shifted so (x0, y0) becomes the origin.
EventStream crop(const EventStream& stream, int x0, int y0, int width, int height);

/// Bins events into `n_bins` equal temporal slices of `window`. Rows are
/// split across OpenMP threads; output is identical to the serial version.
VoxelGrid voxelize(const EventStream& stream, const TimeWindow& window, int n_bins);

/// Returns (n_pos, n_neg).
std::pair<std::size_t, std::size_t> polarity_counts(const EventStream& stream);

/// Copies a spatial sub-rectangle of every bin.
VoxelGrid crop(const VoxelGrid& grid, int x0, int y0, int width, int height);

namespace reference {

VoxelGrid voxelize(const EventStream& stream, const TimeWindow& window, int n_bins);

}  // namespace reference

}  // namespace evb
