#include "evb/events.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "evb/errors.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace evb {

namespace {

constexpr std::array<char, 4> kEvt1Magic = {'E', 'V', 'T', '1'};
constexpr std::size_t kEvt1HeaderSize = 4 + 2 + 2 + 8;
constexpr std::size_t kEvt1RecordSize = 16;

void check_geometry(int width, int height) {
  if (width < 0 || height < 0 || width > 65535 || height > 65535) {
    throw std::invalid_argument("sensor geometry must be within [0, 65535]");
  }
}

void validate_event(const Event& e, int width, int height) {
  if (e.p != 1 && e.p != -1) {
    throw std::invalid_argument("event polarity must be -1 or +1");
  }
  if (e.x >= width || e.y >= height) {
    throw std::invalid_argument("event coordinate outside sensor geometry");
  }
  if (e.t < 0) {
    throw std::invalid_argument("event timestamp must be non-negative");
  }
}

// Little-endian helpers; the record layout is fixed regardless of host order.
template <typename U>
void put_le(std::string& out, U value) {
  using Unsigned = std::make_unsigned_t<U>;
  auto bits = static_cast<Unsigned>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
  }
}

template <typename U>
U get_le(const unsigned char* in) {
  using Unsigned = std::make_unsigned_t<U>;
  Unsigned bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<Unsigned>(static_cast<Unsigned>(in[i]) << (8 * i));
  }
  return static_cast<U>(bits);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return std::move(buffer).str();
}

template <typename Int>
bool parse_int(std::string_view field, Int& out) {
  while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\t')) field.remove_suffix(1);
  if (!field.empty() && field.front() == '+') field.remove_prefix(1);
  if (field.empty()) return false;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), out);
  return ec == std::errc() && ptr == field.data() + field.size();
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

LoadedEvents finish_load(int width, int height, std::vector<Event> events) {
  LoadedEvents result;
  result.resorted = !std::is_sorted(events.begin(), events.end(),
                                    [](const Event& a, const Event& b) { return a.t < b.t; });
  result.stream = EventStream::from_unsorted(width, height, std::move(events));
  return result;
}

LoadedEvents parse_evt1(const std::string& bytes) {
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < kEvt1HeaderSize) {
    throw ParseError("truncated EVT1 header", bytes.size());
  }
  const int width = get_le<std::uint16_t>(data + 4);
  const int height = get_le<std::uint16_t>(data + 6);
  const auto count = get_le<std::uint64_t>(data + 8);
  const std::size_t payload = bytes.size() - kEvt1HeaderSize;
  if (payload % kEvt1RecordSize != 0 || payload / kEvt1RecordSize != count) {
    throw ParseError("EVT1 record count " + std::to_string(count) +
                         " does not match payload size " + std::to_string(payload),
                     kEvt1HeaderSize);
  }
  std::vector<Event> events;
  events.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::size_t offset = kEvt1HeaderSize + i * kEvt1RecordSize;
    const unsigned char* rec = data + offset;
    const auto t = get_le<std::uint64_t>(rec);
    Event e;
    e.x = get_le<std::uint16_t>(rec + 8);
    e.y = get_le<std::uint16_t>(rec + 10);
    e.p = static_cast<std::int8_t>(rec[12]);
    if (t > static_cast<std::uint64_t>(kTimeInfinity)) {
      throw ParseError("timestamp out of range", offset);
    }
    e.t = static_cast<Timestamp>(t);
    if (e.p != 1 && e.p != -1) {
      throw ParseError("polarity must be -1 or +1", offset + 12);
    }
    if (e.x >= width || e.y >= height) {
      throw ParseError("coordinate outside sensor geometry", offset + 8);
    }
    events.push_back(e);
  }
  return finish_load(width, height, std::move(events));
}

LoadedEvents parse_csv(const std::string& text) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool have_header = false;
  int width = 0;
  int height = 0;
  std::vector<Event> events;

  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string_view line(text.data() + pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty() || line.front() == '#') continue;

    auto fields = split_fields(line);
    if (!have_header) {
      if (fields.size() != 2 || !parse_int(fields[0], width) || !parse_int(fields[1], height) ||
          width < 0 || height < 0 || width > 65535 || height > 65535) {
        throw ParseError("expected header 'width,height'", line_no);
      }
      have_header = true;
      continue;
    }
    if (fields.size() != 4) {
      throw ParseError("expected 't_us,x,y,p'", line_no);
    }
    Timestamp t = 0;
    int x = 0;
    int y = 0;
    int p = 0;
    if (!parse_int(fields[0], t) || !parse_int(fields[1], x) || !parse_int(fields[2], y) ||
        !parse_int(fields[3], p)) {
      throw ParseError("malformed event record", line_no);
    }
    if (t < 0) throw ParseError("negative timestamp", line_no);
    if (p != 1 && p != -1) throw ParseError("polarity must be -1 or +1", line_no);
    if (x < 0 || y < 0 || x >= width || y >= height) {
      throw ParseError("coordinate outside sensor geometry", line_no);
    }
    events.push_back(Event{t, static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                           static_cast<std::int8_t>(p)});
  }
  if (!have_header) {
    throw ParseError("missing 'width,height' header", line_no == 0 ? 1 : line_no);
  }
  return finish_load(width, height, std::move(events));
}

}  // namespace

std::vector<Timestamp> exposure_edges(const Exposure& exposure, int parts) {
  if (parts < 1) throw std::invalid_argument("exposure must be split into at least one part");
  if (exposure.t1 < exposure.t0) throw std::invalid_argument("exposure end precedes its start");
  const Timestamp span = exposure.t1 - exposure.t0;
  std::vector<Timestamp> edges(static_cast<std::size_t>(parts) + 1);
  for (int k = 0; k <= parts; ++k) {
    edges[k] = exposure.t0 + (span * k) / parts;
  }
  return edges;
}

std::vector<TimeWindow> partition_exposure(const Exposure& exposure, int parts) {
  auto edges = exposure_edges(exposure, parts);
  if (exposure.t1 - exposure.t0 < parts - 1) {
    throw std::invalid_argument("exposure too short to split into non-empty windows");
  }
  std::vector<TimeWindow> windows(static_cast<std::size_t>(parts));
  for (int k = 0; k < parts; ++k) {
    windows[k] = {edges[k], edges[k + 1]};
  }
  windows.back().end = exposure.t1 + 1;
  return windows;
}

EventStream::EventStream(int width, int height, std::vector<Event> events)
    : width_(width), height_(height), events_(std::move(events)) {
  check_geometry(width, height);
  for (std::size_t i = 0; i < events_.size(); ++i) {
    validate_event(events_[i], width, height);
    if (i > 0 && events_[i].t < events_[i - 1].t) {
      throw std::invalid_argument("event stream timestamps must be non-decreasing");
    }
  }
}

EventStream EventStream::from_unsorted(int width, int height, std::vector<Event> events) {
  std::stable_sort(events.begin(), events.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
  return EventStream(width, height, std::move(events));
}

VoxelGrid::VoxelGrid(int bins, int height, int width, TimeWindow window)
    : bins_(bins), height_(height), width_(width), window_(window) {
  if (bins < 1) throw std::invalid_argument("voxel grid needs at least one bin");
  if (height < 0 || width < 0) throw std::invalid_argument("negative voxel grid geometry");
  if (window.start >= window.end) throw std::invalid_argument("voxel window must satisfy start < end");
  values_.assign(static_cast<std::size_t>(bins) * height * width, 0);
}

std::int64_t VoxelGrid::pixel_sum(int y, int x) const {
  std::int64_t sum = 0;
  for (int b = 0; b < bins_; ++b) sum += at(b, y, x);
  return sum;
}

int VoxelGrid::bin_of(Timestamp t) const {
  // n (t - start) / (end - start) can overflow int64 for huge windows; fall
  // back to 128-bit arithmetic.
  const auto offset = static_cast<__int128>(t - window_.start);
  const auto index = offset * bins_ / static_cast<__int128>(window_.duration());
  return static_cast<int>(std::min<__int128>(index, bins_ - 1));
}

EventFormat format_for_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return (ext == ".evt1" || ext == ".bin") ? EventFormat::evt1 : EventFormat::csv;
}

LoadedEvents load_events(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 4 && std::equal(kEvt1Magic.begin(), kEvt1Magic.end(), bytes.begin())) {
    return parse_evt1(bytes);
  }
  return parse_csv(bytes);
}

void save_events(const EventStream& stream, const std::filesystem::path& path, EventFormat format) {
  std::string out;
  if (format == EventFormat::evt1) {
    out.reserve(kEvt1HeaderSize + stream.size() * kEvt1RecordSize);
    out.append(kEvt1Magic.begin(), kEvt1Magic.end());
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.width()));
    put_le<std::uint16_t>(out, static_cast<std::uint16_t>(stream.height()));
    put_le<std::uint64_t>(out, stream.size());
    for (const Event& e : stream.events()) {
      put_le<std::uint64_t>(out, static_cast<std::uint64_t>(e.t));
      put_le<std::uint16_t>(out, e.x);
      put_le<std::uint16_t>(out, e.y);
      put_le<std::int8_t>(out, e.p);
      out.append(3, '\0');
    }
  } else {
    out = std::to_string(stream.width()) + "," + std::to_string(stream.height()) + "\n";
    for (const Event& e : stream.events()) {
      out += std::to_string(e.t);
      out += ',';
      out += std::to_string(e.x);
      out += ',';
      out += std::to_string(e.y);
      out += ',';
      out += std::to_string(static_cast<int>(e.p));
      out += '\n';
    }
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path.string() + " for writing");
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("failed writing " + path.string());
}

EventStream slice(const EventStream& stream, Timestamp t_start, Timestamp t_end) {
  if (t_start >= t_end) throw std::invalid_argument("slice requires t_start < t_end");
  auto events = stream.events();
  auto first = std::lower_bound(events.begin(), events.end(), t_start,
                                [](const Event& e, Timestamp t) { return e.t < t; });
  auto last = std::lower_bound(first, events.end(), t_end,
                               [](const Event& e, Timestamp t) { return e.t < t; });
  return EventStream(stream.width(), stream.height(), std::vector<Event>(first, last));
}

EventStream crop(const EventStream& stream, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || width < 0 || height < 0 || x0 + width > stream.width() ||
      y0 + height > stream.height()) {
    throw std::invalid_argument("crop rectangle outside sensor geometry");
  }
  std::vector<Event> kept;
  for (const Event& e : stream.events()) {
    if (e.x >= x0 && e.x < x0 + width && e.y >= y0 && e.y < y0 + height) {
      kept.push_back(Event{e.t, static_cast<std::uint16_t>(e.x - x0),
                           static_cast<std::uint16_t>(e.y - y0), e.p});
    }
  }
  return EventStream(width, height, std::move(kept));
}

VoxelGrid voxelize(const EventStream& stream, const TimeWindow& window, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("voxelize requires n_bins >= 1");
  VoxelGrid grid(n_bins, stream.height(), stream.width(), window);
  auto events = stream.events();
  auto first = std::lower_bound(events.begin(), events.end(), window.start,
                                [](const Event& e, Timestamp t) { return e.t < t; });
  auto last = std::lower_bound(first, events.end(), window.end,
                               [](const Event& e, Timestamp t) { return e.t < t; });
  const std::span<const Event> inside(first, last);

  // Each thread owns a horizontal band of rows, so no two threads touch the
  // same cell and the integer sums are order-independent.
  const int height = stream.height();
#pragma omp parallel
  {
#ifdef _OPENMP
    const int threads = omp_get_num_threads();
    const int id = omp_get_thread_num();
#else
    const int threads = 1;
    const int id = 0;
#endif
    const int row_begin = static_cast<int>(static_cast<std::int64_t>(height) * id / threads);
    const int row_end = static_cast<int>(static_cast<std::int64_t>(height) * (id + 1) / threads);
    for (const Event& e : inside) {
      if (e.y >= row_begin && e.y < row_end) {
        grid.at(grid.bin_of(e.t), e.y, e.x) += e.p;
      }
    }
  }
  return grid;
}

std::pair<std::size_t, std::size_t> polarity_counts(const EventStream& stream) {
  std::size_t pos = 0;
  for (const Event& e : stream.events()) pos += e.p > 0 ? 1 : 0;
  return {pos, stream.size() - pos};
}

VoxelGrid crop(const VoxelGrid& grid, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || width < 0 || height < 0 || x0 + width > grid.width() ||
      y0 + height > grid.height()) {
    throw std::invalid_argument("crop rectangle outside voxel grid");
  }
  VoxelGrid out(grid.bins(), height, width, grid.window());
  for (int b = 0; b < grid.bins(); ++b) {
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        out.at(b, y, x) = grid.at(b, y + y0, x + x0);
      }
    }
  }
  return out;
}

namespace reference {

VoxelGrid voxelize(const EventStream& stream, const TimeWindow& window, int n_bins) {
  if (n_bins < 1) throw std::invalid_argument("voxelize requires n_bins >= 1");
  VoxelGrid grid(n_bins, stream.height(), stream.width(), window);
  for (const Event& e : stream.events()) {
    if (!window.contains(e.t)) continue;
    const auto bin = std::min<std::int64_t>(
        static_cast<std::int64_t>(n_bins) * (e.t - window.start) / window.duration(), n_bins - 1);
    grid.at(static_cast<int>(bin), e.y, e.x) += e.p;
  }
  return grid;
}

}  // namespace reference

}  // namespace evb
