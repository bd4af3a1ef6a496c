#include "evb/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>
#include <stdexcept>

#include <json.hpp>

#include "evb/errors.hpp"

namespace evb {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const char* split_name(Split s) { return s == Split::train ? "train" : "val"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw std::invalid_argument("unknown split '" + s + "'");
}

json thresholds_json(const ThresholdConfig& c) {
  return {{"c_pos", c.c_pos},       {"c_neg", c.c_neg}, {"sigma_c", c.sigma_c},
          {"seed", c.seed},         {"log_eps", c.log_eps}, {"refractory_us", c.refractory_us}};
}

ThresholdConfig thresholds_from_json(const json& j) {
  ThresholdConfig c;
  c.c_pos = j.at("c_pos").get<double>();
  c.c_neg = j.at("c_neg").get<double>();
  c.sigma_c = j.at("sigma_c").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.log_eps = j.value("log_eps", kDefaultLogEpsilon);
  c.refractory_us = j.value("refractory_us", Timestamp{0});
  return c;
}

std::string numbered(const char* stem, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%s_%02zu.png", stem, i);
  return buf;
}

}  // namespace

std::vector<TimeWindow> hfr_windows(const Sample& sample) {
  std::vector<TimeWindow> windows;
  Timestamp previous = sample.sharp.t;
  for (const auto& target : sample.hfr_targets) {
    windows.push_back({previous, target.t});
    previous = target.t;
  }
  if (!windows.empty()) windows.back().end += 1;
  return windows;
}

Sample make_sample(std::span<const IntensityFrame> window, int q, const ThresholdConfig& thresholds,
                   std::string name) {
  if (window.size() < 2) throw std::invalid_argument("sample window needs at least two frames");
  if (q < 1 || static_cast<std::size_t>(q) >= window.size()) {
    throw std::invalid_argument("q must lie in [1, window_len - 1]");
  }
  Sample s;
  s.name = std::move(name);
  s.blurry = synthesize_blur(window, 0, window.size());
  s.sharp = window.front();
  s.hfr_targets.assign(window.begin() + 1, window.begin() + 1 + q);
  s.events = simulate(window, thresholds);
  s.exposure = {window.front().t, window.back().t};
  return s;
}

std::size_t DatasetIndex::count(Split split) const {
  return static_cast<std::size_t>(std::count_if(examples.begin(), examples.end(),
                                                [&](const auto& e) { return e.split == split; }));
}

std::vector<Split> assign_splits(std::size_t n, int train_parts, int val_parts, std::uint64_t seed) {
  if (train_parts < 0 || val_parts < 0 || train_parts + val_parts == 0) {
    throw std::invalid_argument("split ratio needs non-negative parts with a positive total");
  }
  const std::size_t total = static_cast<std::size_t>(train_parts + val_parts);
  const std::size_t n_train = (2 * n * static_cast<std::size_t>(train_parts) + total) / (2 * total);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Split> splits(n, Split::val);
  for (std::size_t i = 0; i < n_train; ++i) splits[order[i]] = Split::train;
  return splits;
}

void save_manifest(const DatasetIndex& index, const fs::path& path) {
  json examples = json::array();
  for (const auto& e : index.examples) {
    json targets = json::array();
    for (const auto& t : e.hfr_targets) targets.push_back(t.generic_string());
    examples.push_back({{"name", e.name},
                        {"blurry", e.blurry.generic_string()},
                        {"sharp", e.sharp.generic_string()},
                        {"hfr_targets", targets},
                        {"events", e.events.generic_string()},
                        {"t0", e.exposure.t0},
                        {"t1", e.exposure.t1},
                        {"frame_times", e.frame_times},
                        {"split", split_name(e.split)}});
  }
  json doc = {{"window_len", index.options.window_len},
              {"q", index.options.q},
              {"thresholds", thresholds_json(index.options.thresholds)},
              {"split_ratio", {index.options.train_parts, index.options.val_parts}},
              {"seed", index.options.seed},
              {"warnings", index.warnings},
              {"examples", examples}};
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << doc.dump(2) << '\n';
}

DatasetIndex load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& err) {
    throw ParseError(std::string("invalid manifest JSON: ") + err.what(), err.byte);
  }
  DatasetIndex index;
  index.root = path.parent_path();
  index.options.window_len = doc.at("window_len").get<int>();
  index.options.q = doc.at("q").get<int>();
  index.options.thresholds = thresholds_from_json(doc.at("thresholds"));
  index.options.train_parts = doc.at("split_ratio").at(0).get<int>();
  index.options.val_parts = doc.at("split_ratio").at(1).get<int>();
  index.options.seed = doc.at("seed").get<std::uint64_t>();
  index.warnings = doc.value("warnings", std::vector<std::string>{});
  for (const auto& j : doc.at("examples")) {
    DatasetExample e;
    e.name = j.at("name").get<std::string>();
    e.blurry = j.at("blurry").get<std::string>();
    e.sharp = j.at("sharp").get<std::string>();
    for (const auto& t : j.at("hfr_targets")) e.hfr_targets.emplace_back(t.get<std::string>());
    e.events = j.at("events").get<std::string>();
    e.exposure = {j.at("t0").get<Timestamp>(), j.at("t1").get<Timestamp>()};
    e.frame_times = j.at("frame_times").get<std::vector<Timestamp>>();
    e.split = parse_split(j.at("split").get<std::string>());
    index.examples.push_back(std::move(e));
  }
  return index;
}

DatasetIndex build_dataset(std::span<const fs::path> video_dirs, const fs::path& out_dir,
                           const DatasetOptions& options) {
  if (options.window_len < 2) throw std::invalid_argument("window_len must be at least 2");
  if (options.q < 1 || options.q >= options.window_len) {
    throw std::invalid_argument("q must lie in [1, window_len - 1]");
  }
  options.thresholds.validate();
  fs::create_directories(out_dir);

  DatasetIndex index;
  index.root = out_dir;
  index.options = options;
  std::uint64_t example_counter = 0;

  for (std::size_t v = 0; v < video_dirs.size(); ++v) {
    const auto sequence = load_video_dir(video_dirs[v]);
    const auto& frames = sequence.frames;
    if (frames.size() < static_cast<std::size_t>(options.window_len)) {
      std::string warning = "skipping " + video_dirs[v].string() + ": " + std::to_string(frames.size()) +
                            " frames < window " + std::to_string(options.window_len);
      std::cerr << "warning: " << warning << '\n';
      index.warnings.push_back(std::move(warning));
      continue;
    }
    const std::size_t windows = frames.size() / options.window_len;
    for (std::size_t w = 0; w < windows; ++w) {
      const auto window = std::span(frames).subspan(w * options.window_len, options.window_len);
      char name[160];
      std::snprintf(name, sizeof(name), "v%02zu_%s_w%03zu", v,
                    video_dirs[v].filename().string().c_str(), w);
      ThresholdConfig thresholds = options.thresholds;
      thresholds.seed = options.thresholds.seed + example_counter++;
      const Sample sample = make_sample(window, options.q, thresholds, name);

      const fs::path rel(name);
      fs::create_directories(out_dir / rel);
      DatasetExample e;
      e.name = name;
      e.blurry = rel / "blurry.png";
      e.sharp = rel / "sharp.png";
      e.events = rel / "events.evt1";
      e.exposure = sample.exposure;
      for (const auto& f : window) e.frame_times.push_back(f.t);
      write_png(out_dir / e.blurry, sample.blurry.pixels, 16);
      write_png(out_dir / e.sharp, sample.sharp.pixels, 16);
      for (std::size_t k = 0; k < sample.hfr_targets.size(); ++k) {
        e.hfr_targets.push_back(rel / numbered("target", k + 1));
        write_png(out_dir / e.hfr_targets.back(), sample.hfr_targets[k].pixels, 16);
      }
      save_events(sample.events, out_dir / e.events, EventFormat::evt1);
      index.examples.push_back(std::move(e));
    }
  }

  const auto splits = assign_splits(index.examples.size(), options.train_parts, options.val_parts, options.seed);
  for (std::size_t i = 0; i < splits.size(); ++i) index.examples[i].split = splits[i];
  save_manifest(index, out_dir / "manifest.json");
  return index;
}

Sample load_sample(const DatasetIndex& index, const DatasetExample& example) {
  Sample s;
  s.name = example.name;
  s.exposure = example.exposure;
  s.blurry = {read_png(index.root / example.blurry), example.exposure.t0};
  s.sharp = {read_png(index.root / example.sharp), example.exposure.t0};
  if (example.frame_times.size() < example.hfr_targets.size() + 1) {
    throw std::invalid_argument("manifest example " + example.name + " lacks frame times for its targets");
  }
  for (std::size_t k = 0; k < example.hfr_targets.size(); ++k) {
    s.hfr_targets.push_back({read_png(index.root / example.hfr_targets[k]), example.frame_times[k + 1]});
  }
  s.events = load_events(index.root / example.events).stream;
  return s;
}

std::vector<Sample> load_samples(const DatasetIndex& index, Split split) {
  std::vector<Sample> out;
  for (const auto& e : index.examples) {
    if (e.split == split) out.push_back(load_sample(index, e));
  }
  return out;
}

}  // namespace evb
