#include <doctest.h>

#include "evb/dataset.hpp"
#include "evb/errors.hpp"
#include "support.hpp"

using namespace evb;

TEST_CASE("21 frames in windows of 7 give 3 examples") {
  evbtest::TempDir dir("ds");
  save_video_dir(dir / "clip", evbtest::moving_scene(16, 16, 21, 4), 16);
  save_video_dir(dir / "short", evbtest::moving_scene(16, 16, 5, 5), 16);
  DatasetOptions opt;
  opt.seed = 3;
  const std::vector<std::filesystem::path> videos{dir / "clip", dir / "short"};
  const DatasetIndex index = build_dataset(videos, dir / "out", opt);
  REQUIRE(index.examples.size() == 3);
  REQUIRE(index.warnings.size() == 1);
  CHECK(index.count(Split::train) == 2);
  CHECK(index.count(Split::val) == 1);

  const auto& e = index.examples[1];
  REQUIRE(e.hfr_targets.size() == 6);
  REQUIRE(e.frame_times.size() == 7);
  CHECK(e.exposure.t0 == e.frame_times.front());
  CHECK(e.exposure.t1 == e.frame_times.back());

  const FrameSequence video = load_video_dir(dir / "clip");
  const Sample s = load_sample(index, e);
  CHECK(s.sharp.t == video.frames[7].t);
  for (int k = 0; k < 6; ++k) {
    CHECK(s.hfr_targets[k].t == video.frames[8 + k].t);
    CHECK(evbtest::max_abs_diff(s.hfr_targets[k].pixels, video.frames[8 + k].pixels) < 1e-4);
  }
  const auto blur = synthesize_blur(video.frames, 7, 7);
  CHECK(evbtest::max_abs_diff(s.blurry.pixels, blur.pixels) < 1e-4);
  CHECK(s.events.size() > 0);

  const DatasetIndex again = load_manifest(dir / "out" / "manifest.json");
  REQUIRE(again.examples.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(again.examples[i].name == index.examples[i].name);
    CHECK(again.examples[i].split == index.examples[i].split);
    CHECK(again.examples[i].exposure == index.examples[i].exposure);
  }
  CHECK(load_samples(again, Split::train).size() == 2);
}

TEST_CASE("dataset build is deterministic") {
  evbtest::TempDir dir("ds");
  save_video_dir(dir / "clip", evbtest::moving_scene(12, 12, 14, 8), 16);
  DatasetOptions opt;
  opt.seed = 5;
  const std::vector<std::filesystem::path> videos{dir / "clip"};
  const auto a = build_dataset(videos, dir / "a", opt);
  const auto b = build_dataset(videos, dir / "b", opt);
  for (std::size_t i = 0; i < a.examples.size(); ++i) {
    CHECK(load_sample(a, a.examples[i]).events == load_sample(b, b.examples[i]).events);
  }
}

TEST_CASE("missing timestamps are an error") {
  evbtest::TempDir dir("ds");
  save_video_dir(dir / "clip", evbtest::moving_scene(8, 8, 7, 1), 8);
  std::filesystem::remove(dir / "clip" / "timestamps.txt");
  const std::vector<std::filesystem::path> videos{dir / "clip"};
  CHECK_THROWS_AS(build_dataset(videos, dir / "out", DatasetOptions{}), IoError);
}

TEST_CASE("split arithmetic") {
  const auto s = assign_splits(9, 2, 1, 0);
  CHECK(std::count(s.begin(), s.end(), Split::train) == 6);
  CHECK(std::count(s.begin(), s.end(), Split::val) == 3);
  CHECK(assign_splits(9, 2, 1, 0) == s);
  CHECK_THROWS_AS(assign_splits(3, 0, 0, 0), std::invalid_argument);
}

TEST_CASE("hfr windows run from the sharp frame to the last target") {
  const Sample s = evbtest::scene_sample(8, 8, 6, 2);
  const auto w = hfr_windows(s);
  REQUIRE(w.size() == 6);
  CHECK(w.front().start == s.sharp.t);
  CHECK(w.back().end == s.hfr_targets.back().t + 1);
  for (std::size_t k = 0; k < 6; ++k) CHECK(w[k].end == (k + 1 < 6 ? s.hfr_targets[k].t : s.hfr_targets[k].t + 1));
}
