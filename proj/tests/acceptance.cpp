// Acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <CLI11.hpp>

#include "evb/edi.hpp"
#include "evb/metrics.hpp"
#include "evb/pipeline.hpp"
#include "evb/simulator.hpp"
#include "evb/training.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace evb;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const Verdict& v, double secs) {
  std::printf("%s %d %s (%.1f s)\n", v.pass ? "PASS" : "FAIL", id, v.detail.c_str(), secs);
  std::fflush(stdout);
  if (!v.pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// 1 -----------------------------------------------------------------------

Verdict reference_constants() {
  AblationReport r;
  const auto j = to_json(r);
  const bool ok = j.at("reference").at("bins_6").at("psnr_db").get<double>() == 32.99 &&
                  j.at("reference").at("bins_6").at("ssim").get<double>() == 0.9353 &&
                  j.at("reference").at("bins_1").at("psnr_db").get<double>() == 29.93 && kReferenceHfrPsnr == 31.76 &&
                  kReferenceHfrSsim == 0.9202;
  return {ok, "reference full-scale figures stored as report references only, not reproduced"};
}

// 2 -----------------------------------------------------------------------

Verdict simulator_quantization() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> knots(2, 12);
  std::uniform_real_distribution<double> level(std::log(kDefaultLogEpsilon), 0.0);
  std::uniform_int_distribution<Timestamp> gap(1, 50000);
  std::uniform_real_distribution<double> thr(0.05, 0.5);
  int ok = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ThresholdConfig cfg;
    cfg.c_pos = thr(rng);
    cfg.c_neg = thr(rng);
    cfg.sigma_c = 0.0;
    const int n = knots(rng);
    std::vector<double> levels(n);
    std::vector<Timestamp> times(n);
    Timestamp t = 0;
    for (int k = 0; k < n; ++k) {
      levels[k] = level(rng);
      times[k] = t;
      t += gap(rng);
    }
    const auto sim = simulate_pixel(levels, times, cfg, static_cast<std::uint64_t>(trial));
    // reference level rebuilt from the emitted events alone
    double ref = levels.front();
    bool ordered = true;
    for (std::size_t i = 0; i < sim.events.size(); ++i) {
      ref += sim.events[i].polarity > 0 ? cfg.c_pos : -cfg.c_neg;
      if (i > 0 && sim.events[i].t < sim.events[i - 1].t) ordered = false;
    }
    const double err = std::abs(levels.back() - ref);
    worst = std::max(worst, err / std::max(cfg.c_pos, cfg.c_neg));
    if (ordered && err < std::max(cfg.c_pos, cfg.c_neg)) ++ok;
  }
  return {ok == 100, fmt("%d/100 trajectories within one threshold, worst error %.3f c", ok, worst)};
}

// 3 and 4 ----------------------------------------------------------------

std::vector<Sample> edi_scenes() {
  std::vector<Sample> s;
  for (int i = 0; i < 10; ++i) s.push_back(evbtest::scene_sample(64, 64, 6, 500 + i, 0.2, 0.0));
  return s;
}

Verdict edi_round_trip(const std::vector<Sample>& scenes) {
  ThresholdConfig cfg;
  cfg.c_pos = cfg.c_neg = 0.2;
  std::vector<double> gains, gen, blur;
  for (const auto& s : scenes) {
    const auto restored = edi_deblur(s.blurry, s.events, cfg, s.exposure);
    gains.push_back(psnr(restored.pixels, s.sharp.pixels) - psnr(s.blurry.pixels, s.sharp.pixels));
    const auto video = edi_generate(restored, s.events, cfg, s.exposure, 6);
    for (int k = 0; k <= 6; ++k) {
      const Image& gt = k == 0 ? s.sharp.pixels : s.hfr_targets[k - 1].pixels;
      gen.push_back(psnr(video.frames[k].pixels, gt));
      blur.push_back(psnr(s.blurry.pixels, gt));
    }
  }
  const bool ok = mean(gains) >= 5.0 && mean(gen) >= mean(blur);
  return {ok, fmt("mean deblur gain %+.2f dB (need +5); generated frames %.2f dB vs blurry %.2f dB", mean(gains),
                  mean(gen), mean(blur))};
}

Verdict threshold_estimation(const std::vector<Sample>& scenes) {
  ThresholdSearch linear;
  linear.steps = 19;
  linear.log_spaced = false;
  int oracle_ok = 0;
  int sharp_ok = 0;
  std::string picks;
  for (const auto& s : scenes) {
    const auto o =
        estimate_threshold(s.blurry, s.events, s.exposure, linear, ThresholdCriterion::oracle, &s.sharp.pixels);
    const auto h = estimate_threshold(s.blurry, s.events, s.exposure, ThresholdSearch{}, ThresholdCriterion::sharpness);
    oracle_ok += std::abs(o.c - 0.2) <= 0.05 + 1e-12;
    sharp_ok += std::abs(h.c - 0.2) <= 0.25 * 0.2 + 1e-12;
    picks += fmt(" %.3f/%.3f", o.c, h.c);
  }
  return {oracle_ok == 10 && sharp_ok == 10,
          fmt("oracle within 0.05: %d/10; sharpness within 25%%: %d/10; oracle/sharpness picks:%s", oracle_ok,
              sharp_ok, picks.c_str())};
}

// 5 -----------------------------------------------------------------------

Verdict identity_at_init() {
  const NetworkConfig cfg;
  const nn::DeblurNet<float> deblur(cfg, 1);
  const nn::HfrNet<float> hfr(cfg, 1);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> size(1, 6);
  std::uniform_int_distribution<int> count(-20, 20);
  int exact = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 8 * size(rng);
    const int w = 8 * size(rng);
    Image img(h, w);
    for (auto& v : img.data()) v = u(rng);
    const LogFrame in = to_log(img);
    VoxelGrid v(cfg.bins, h, w, {0, 100});
    for (auto& x : v.values()) x = count(rng);
    bool same = forward_deblur(deblur, in, v).pixels == in.pixels;
    auto state = reset_state(hfr, h, w);
    for (int step = 0; step < 2; ++step) {
      auto [out, next] = forward_hfr(hfr, in, v, state);
      same = same && out.pixels == in.pixels;
      state = next;
    }
    exact += same;
  }
  return {exact == 20, fmt("%d/20 random inputs reproduced bit-exactly by both networks", exact)};
}

// 6 -----------------------------------------------------------------------

Verdict gradient_check() {
  const auto d = evbtest::gradient_check(false, 1);
  const auto h = evbtest::gradient_check(true, 1);
  const bool ok = d.fraction() >= 0.99 && h.fraction() >= 0.99;
  return {ok, fmt("deblur %zu/%zu (%.2f%%), hfr %zu/%zu (%.2f%%) parameters within 1e-3 relative", d.within, d.total,
                  100 * d.fraction(), h.within, h.total, 100 * h.fraction())};
}

// 7 and 8 ----------------------------------------------------------------

struct Overfit {
  Verdict verdict;
  Checkpoint deblur;
  Checkpoint hfr;
};

Overfit desk_overfit() {
  std::vector<Sample> deblur_set, hfr_set;
  for (int i = 0; i < 16; ++i) deblur_set.push_back(evbtest::scene_sample(64, 64, 6, 1000 + i, 0.2, 0.03));
  for (int i = 0; i < 8; ++i) hfr_set.push_back(evbtest::scene_sample(64, 64, 6, 2000 + i, 0.2, 0.03));

  const NetworkConfig net;
  TrainConfig tc;
  tc.epochs = 200;
  tc.batch_size = 4;
  tc.crop = 64;
  tc.seed = 7;
  const LossConfig loss{0.0, nullptr};

  Overfit out;
  TrainHooks log;
  log.on_epoch = [](const EpochRecord& r) {
    if (r.epoch % 10 == 0) std::fprintf(stderr, "  epoch %d train %.5f\n", r.epoch, r.train_loss);
  };
  tc.stop_below = 0.012;
  const auto d = train_deblur(deblur_set, {}, net, tc, loss, log);
  out.deblur = d.last;
  const auto dnet = load_deblur_net(d.last);
  std::vector<double> l1, gain;
  for (const auto& s : deblur_set) {
    const Image r = deblur_sample(dnet, s);
    l1.push_back(l1_loss(r, s.sharp.pixels));
    gain.push_back(psnr(r, s.sharp.pixels) - psnr(s.blurry.pixels, s.sharp.pixels));
  }

  // The recurrent net settles on the identity at 64x64 with the deblur
  // settings; a smaller step and per-sequence updates get it moving.
  tc.learning_rate = 5e-4;
  tc.batch_size = 1;
  tc.stop_below = 0.02;
  const auto h = train_hfr(hfr_set, {}, net, tc, loss, log);
  out.hfr = h.last;
  const auto hnet = load_hfr_net(h.last);
  std::vector<double> frame_l1;
  std::vector<double> drift1, drift6, gt1, gt6;
  for (const auto& s : hfr_set) {
    const auto frames = rollout_hfr(hnet, s);
    for (std::size_t k = 0; k < frames.size(); ++k) frame_l1.push_back(l1_loss(frames[k], s.hfr_targets[k].pixels));
    // No events means no brightness change, so the start frame is the truth.
    const auto still = rollout_hfr(hnet, s, true);
    drift1.push_back(l1_loss(still.front(), s.sharp.pixels));
    drift6.push_back(l1_loss(still.back(), s.sharp.pixels));
    gt1.push_back(l1_loss(still.front(), s.hfr_targets.front().pixels));
    gt6.push_back(l1_loss(still.back(), s.hfr_targets.back().pixels));
  }
  const double ratio = mean(drift6) / std::max(mean(drift1), 1e-12);
  const bool ok = mean(l1) < 0.02 && mean(gain) >= 3.0 && mean(frame_l1) < 0.03 && ratio <= 3.0;
  out.verdict = {ok, fmt("deblur %zu epochs: train L1 %.4f (<0.02), PSNR gain %+.2f dB (>=3); hfr %zu epochs: frame L1 "
                         "%.4f (<0.03), empty-event drift step1 %.5f step6 %.5f ratio %.2f (<=3) [vs moving targets: %.4f -> %.4f, ratio %.2f]",
                         d.history.size(), mean(l1), mean(gain), h.history.size(), mean(frame_l1), mean(drift1),
                         mean(drift6), ratio, mean(gt1), mean(gt6), mean(gt6) / std::max(mean(gt1), 1e-12))};
  return out;
}

Verdict pipeline_contract(const Checkpoint& d, const Checkpoint& h) {
  const auto deblur = load_deblur_net(d);
  const auto hfr = load_hfr_net(h);
  bool ok = true;
  std::string info;
  std::vector<double> frame_psnr, blurry_psnr;
  for (int i = 0; i < 3; ++i) {
    const Sample s = evbtest::scene_sample(64, 64, 6, 3000 + i, 0.2, 0.03);
    const int q = 6;
    const auto r = run_pipeline(s.blurry, s.events, s.exposure, deblur, hfr, q);
    ok = ok && r.frames.frames.size() == static_cast<std::size_t>(q + 1);
    const Timestamp step = r.frames.frames[1].t - r.frames.frames[0].t;
    for (std::size_t k = 1; k < r.frames.frames.size(); ++k) {
      const Timestamp dt = r.frames.frames[k].t - r.frames.frames[k - 1].t;
      ok = ok && dt > 0 && std::llabs(dt - step) <= 1;
    }
    ok = ok && r.frames.frames.front().t == s.exposure.t0 && r.frames.frames.back().t == s.exposure.t1;
    std::size_t used = 0;
    for (auto n : r.window_event_counts) used += n;
    std::size_t inside = 0;
    for (const auto& e : s.events.events()) inside += e.t >= s.exposure.t0 && e.t <= s.exposure.t1;
    ok = ok && used == inside && r.exposure_event_count == inside;
    info += fmt(" [%zu frames, %zu events, balance %lld]", r.frames.frames.size(), inside,
                static_cast<long long>(inside) - static_cast<long long>(used));
    for (int k = 0; k <= q; ++k) {
      const Image& gt = k == 0 ? s.sharp.pixels : s.hfr_targets[k - 1].pixels;
      frame_psnr.push_back(psnr(r.frames.frames[k].pixels, gt));
      blurry_psnr.push_back(psnr(s.blurry.pixels, gt));
    }
  }
  return {ok, fmt("q+1 evenly spaced frames, windows partition the exposure:%s; held-out frame PSNR %.2f dB vs "
                  "blurry %.2f dB",
                  info.c_str(), mean(frame_psnr), mean(blurry_psnr))};
}

// 9 -----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file() && e.path().filename() != "stderr.txt") {
      files[fs::relative(e.path(), root).generic_string()] = slurp(e.path());
    }
  }
  return files;
}

Verdict cli_determinism(const std::string& cli) {
  evbtest::TempDir dir("acceptance_cli");
  const fs::path in = dir / "in";
  save_video_dir(in / "vid", evbtest::moving_scene(32, 32, 14, 1), 16);
  save_video_dir(in / "vid2", evbtest::moving_scene(32, 32, 7, 2), 16);
  const std::string vid = (in / "vid").string();
  const std::string net = " --levels 1 --stem 8 --dense-layers 2 --growth 4 --crop 16 --epochs 2 --batch 2 --seed 7";
  const std::vector<std::string> commands = {
      "simulate --frames " + vid + " --sigma 0.03 --seed 7 --out e.evt1",
      "simulate --frames " + vid + " --sigma 0.03 --seed 7 --out e.csv",
      "blur --frames " + vid + " --count 7 --out b.png",
      "dataset build --videos " + vid + " " + (in / "vid2").string() + " --out ds --sigma 0.03 --seed 7",
      "edi deblur --blurry b.png --events e.evt1 --t0 0 --t1 60000 --c auto --out edi.png",
      "edi video --sharp " + vid + "/frame_000000.png --events e.evt1 --t0 0 --t1 60000 --c 0.2 --q 6 --out-dir ev",
      "edi estimate-c --blurry b.png --events e.evt1 --t0 0 --t1 60000 --criterion oracle --gt " + vid +
          "/frame_000000.png",
      "train deblur --dataset ds" + net + " --out d.ckpt --last dl.ckpt --log d.csv",
      "train hfr --dataset ds" + net + " --out h.ckpt --log h.csv",
      "infer --ckpt d.ckpt --blurry b.png --events e.evt1 --t0 0 --t1 60000 --out inf.png",
      "pipeline --blurry b.png --events e.evt1 --t0 0 --t1 60000 --deblur d.ckpt --hfr h.ckpt --q 6 --out-dir pipe",
      "eval --pred pipe --gt ev --out report.json --plot plot.png",
      "ablate-bins --dataset ds" + net + " --bins-list 1,6 --out ablate.json",
  };
  std::map<std::string, std::string> runs[2];
  for (int r = 0; r < 2; ++r) {
    const fs::path wd = dir / ("run" + std::to_string(r));
    fs::create_directories(wd);
    for (std::size_t i = 0; i < commands.size(); ++i) {
      const std::string cmd = "cd " + wd.string() + " && " + cli + " " + commands[i] + " >stdout_" +
                              std::to_string(i) + ".txt 2>>stderr.txt";
      const int status = std::system(cmd.c_str());
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        return {false, fmt("command failed: evb %s", commands[i].c_str())};
      }
    }
    runs[r] = tree(wd);
  }
  std::size_t differing = 0;
  std::string names;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) {
      ++differing;
      names += " " + name;
    }
  }
  const bool ok = differing == 0 && runs[0].size() == runs[1].size();
  return {ok, fmt("%zu commands, %zu output files compared, %zu differ%s", commands.size(), runs[0].size(), differing,
                  names.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::vector<int> only;
  bool strict = false;
  std::string cli = EVB_CLI_PATH;
  app.add_option("--only", only, "Run just these criteria")->delimiter(',');
  app.add_flag("--strict", strict, "Exit non-zero when any criterion fails");
  app.add_option("--cli", cli, "Path of the evb executable")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  auto timed = [&](int id, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    const auto t = Clock::now();
    const Verdict v = fn();
    report(id, v, seconds_since(t));
  };

  timed(1, reference_constants);
  timed(2, [] {
    const auto t = Clock::now();
    Verdict v = simulator_quantization();
    const double s = seconds_since(t);
    v.pass = v.pass && s < 10.0;
    v.detail += fmt("; runtime %.2f s (<10)", s);
    return v;
  });
  if (wanted(3) || wanted(4)) {
    const auto scenes = edi_scenes();
    timed(3, [&] {
      const auto t = Clock::now();
      Verdict v = edi_round_trip(scenes);
      const double s = seconds_since(t);
      v.pass = v.pass && s < 60.0;
      v.detail += fmt("; runtime %.2f s (<60)", s);
      return v;
    });
    timed(4, [&] { return threshold_estimation(scenes); });
  }
  timed(5, identity_at_init);
  timed(6, [] {
    const auto t = Clock::now();
    Verdict v = gradient_check();
    const double s = seconds_since(t);
    v.pass = v.pass && s < 120.0;
    v.detail += fmt("; runtime %.1f s (<120)", s);
    return v;
  });
  if (wanted(7) || wanted(8)) {
    const auto t = Clock::now();
    Overfit o = desk_overfit();
    const double s = seconds_since(t);
    o.verdict.pass = o.verdict.pass && s < 7200.0;
    o.verdict.detail += fmt("; runtime %.0f s CPU (<7200)", s);
    if (wanted(7)) report(7, o.verdict, s);
    timed(8, [&] { return pipeline_contract(o.deblur, o.hfr); });
  }
  timed(9, [&] { return cli_determinism(cli); });

  std::printf("%d criteria failed\n", failures);
  return strict && failures > 0 ? 1 : 0;
}
