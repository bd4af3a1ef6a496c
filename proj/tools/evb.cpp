#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "evb/checkpoint.hpp"
#include "evb/dataset.hpp"
#include "evb/digest.hpp"
#include "evb/edi.hpp"
#include "evb/errors.hpp"
#include "evb/metrics.hpp"
#include "evb/pipeline.hpp"
#include "evb/simulator.hpp"
#include "evb/training.hpp"
#include "evb/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace evb;

namespace {

std::uint64_t default_seed() {
  if (const char* env = std::getenv("EVB_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw std::invalid_argument(std::string("EVB_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

void header(const std::string& command, std::uint64_t seed, const json& resolved) {
  std::cerr << "# evb " << kVersion << " " << command << " seed=" << seed
            << " config=" << hex64(fnv1a64(resolved.dump())) << "\n";
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

Exposure resolve_exposure(const EventStream& stream, std::optional<Timestamp> t0, std::optional<Timestamp> t1) {
  Exposure e;
  const auto ev = stream.events();
  e.t0 = t0 ? *t0 : (ev.empty() ? 0 : ev.front().t);
  e.t1 = t1 ? *t1 : (ev.empty() ? e.t0 : ev.back().t);
  if (e.t1 < e.t0) throw std::invalid_argument("exposure end precedes its start");
  return e;
}

EventStream read_events(const fs::path& path) {
  LoadedEvents loaded = load_events(path);
  if (loaded.resorted) std::cerr << "warning: " << path.string() << " was not time-ordered; events were sorted\n";
  return std::move(loaded.stream);
}

fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

// Training flags shared by train deblur / train hfr / ablate-bins. Values
// start from the defaults, then a JSON config file, then explicit flags.
struct TrainFlags {
  fs::path dataset;
  fs::path config_file;
  NetworkConfig net;
  TrainConfig train;
  double lambda = 0.0;
  fs::path extractor;
  std::string head_init = "zero";
  std::vector<int> lstm_hidden;
  std::uint64_t seed = 0;

  std::vector<std::pair<std::string, CLI::Option*>> options;

  void add(CLI::App* app) {
    app->add_option("--dataset", dataset, "Dataset directory or manifest.json")->required();
    app->add_option("--config", config_file, "JSON file with training/network fields")->check(CLI::ExistingFile);
    auto reg = [&](const std::string& key, CLI::Option* opt) { options.emplace_back(key, opt); };
    reg("learning_rate", app->add_option("--lr", train.learning_rate, "Learning rate")->capture_default_str());
    reg("batch_size", app->add_option("--batch", train.batch_size, "Batch size")->capture_default_str());
    reg("epochs", app->add_option("--epochs", train.epochs, "Epochs")->capture_default_str());
    reg("crop", app->add_option("--crop", train.crop, "Square crop size")->capture_default_str());
    reg("min_event_density",
        app->add_option("--rho", train.min_event_density, "Minimum events per pixel in a crop")->capture_default_str());
    reg("max_resample", app->add_option("--max-resample", train.max_resample, "Crop draws before fallback")
                            ->capture_default_str());
    reg("stop_below", app->add_option("--stop-below", train.stop_below, "Stop once train loss is below this (0 = off)")
                          ->capture_default_str());
    reg("seed", app->add_option("--seed", seed, "Seed (falls back to EVB_SEED)"));
    reg("lambda", app->add_option("--lambda", lambda, "Perceptual loss weight")->capture_default_str());
    reg("extractor", app->add_option("--extractor", extractor, "Extractor checkpoint (random stack if omitted)"));
    reg("bins", app->add_option("--bins", net.bins, "Voxel bins")->capture_default_str());
    reg("levels", app->add_option("--levels", net.levels, "U-Net levels")->capture_default_str());
    reg("stem_channels", app->add_option("--stem", net.stem_channels, "Stem channels")->capture_default_str());
    reg("dense_layers", app->add_option("--dense-layers", net.dense_layers, "Layers per dense block")
                            ->capture_default_str());
    reg("growth", app->add_option("--growth", net.growth, "Dense growth rate")->capture_default_str());
    reg("lstm_hidden", app->add_option("--lstm-hidden", lstm_hidden, "Conv-LSTM width per level")->delimiter(','));
    reg("head_init", app->add_option("--head-init", head_init, "zero or random")
                         ->check(CLI::IsMember({"zero", "random"}))
                         ->capture_default_str());
    reg("voxel_scale", app->add_option("--voxel-scale", net.voxel_scale, "Voxel count divisor")->capture_default_str());
  }

  bool given(const std::string& key) const {
    // train deblur and train hfr register the same keys
    for (const auto& [k, opt] : options) {
      if (k == key && opt->count() > 0) return true;
    }
    return false;
  }

  // Applies config-file values for keys not given on the command line.
  void resolve() {
    seed = given("seed") ? seed : default_seed();
    if (!config_file.empty()) {
      std::ifstream f(config_file);
      json j;
      try {
        j = json::parse(f);
      } catch (const json::exception& e) {
        throw std::invalid_argument("bad config file " + config_file.string() + ": " + e.what());
      }
      if (!j.is_object()) throw std::invalid_argument("config file must hold a JSON object");
      for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const auto& [k, _] : options) known = known || k == key;
        if (!known) throw std::invalid_argument("unknown config key '" + key + "'");
        if (given(key)) continue;
        try {
          if (key == "learning_rate") train.learning_rate = value.get<double>();
          if (key == "batch_size") train.batch_size = value.get<int>();
          if (key == "epochs") train.epochs = value.get<int>();
          if (key == "crop") train.crop = value.get<int>();
          if (key == "min_event_density") train.min_event_density = value.get<double>();
          if (key == "max_resample") train.max_resample = value.get<int>();
          if (key == "stop_below") train.stop_below = value.get<double>();
          if (key == "seed") seed = value.get<std::uint64_t>();
          if (key == "lambda") lambda = value.get<double>();
          if (key == "extractor") extractor = value.get<std::string>();
          if (key == "bins") net.bins = value.get<int>();
          if (key == "levels") net.levels = value.get<int>();
          if (key == "stem_channels") net.stem_channels = value.get<int>();
          if (key == "dense_layers") net.dense_layers = value.get<int>();
          if (key == "growth") net.growth = value.get<int>();
          if (key == "lstm_hidden") lstm_hidden = value.get<std::vector<int>>();
          if (key == "head_init") head_init = value.get<std::string>();
          if (key == "voxel_scale") net.voxel_scale = value.get<double>();
        } catch (const json::exception&) {
          throw std::invalid_argument("config key '" + key + "' has the wrong type");
        }
      }
    }
    if (head_init != "zero" && head_init != "random") throw std::invalid_argument("head_init must be zero or random");
    net.head_init = head_init == "zero" ? HeadInit::zero : HeadInit::random;
    net.lstm_hidden = lstm_hidden;
    train.seed = seed;
    net.validate();
  }

  LossConfig loss() const {
    LossConfig lc;
    lc.lambda = lambda;
    if (lambda > 0.0) {
      if (extractor.empty()) {
        lc.extractor = std::make_shared<nn::ConvStackExtractor<float>>(nn::ConvStackExtractor<float>::random());
      } else {
        lc.extractor = std::make_shared<nn::ConvStackExtractor<float>>(
            nn::ConvStackExtractor<float>::from_checkpoint(load_checkpoint(extractor)));
      }
    }
    return lc;
  }

  json resolved() const {
    return {{"network", config_to_json(net)},
            {"learning_rate", train.learning_rate},
            {"batch_size", train.batch_size},
            {"epochs", train.epochs},
            {"crop", train.crop},
            {"min_event_density", train.min_event_density},
            {"max_resample", train.max_resample},
            {"stop_below", train.stop_below},
            {"seed", seed},
            {"lambda", lambda},
            {"extractor", extractor.string()},
            {"dataset", dataset.string()}};
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Event-camera deblurring and high-frame-rate video toolkit"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  std::function<void()> action;

  // simulate
  struct {
    fs::path frames, out;
    ThresholdConfig cfg;
    std::uint64_t seed = 0;
  } sim;
  auto* c_sim = app.add_subcommand("simulate", "Simulate events from a frame directory");
  c_sim->add_option("--frames", sim.frames, "Directory of PNG frames with timestamps.txt")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_sim->add_option("--c-pos", sim.cfg.c_pos, "Positive contrast threshold")->capture_default_str();
  c_sim->add_option("--c-neg", sim.cfg.c_neg, "Negative contrast threshold")->capture_default_str();
  c_sim->add_option("--sigma", sim.cfg.sigma_c, "Threshold noise std")->capture_default_str();
  c_sim->add_option("--refractory-us", sim.cfg.refractory_us, "Per-pixel refractory period")->capture_default_str();
  auto* sim_seed = c_sim->add_option("--seed", sim.seed, "Seed (falls back to EVB_SEED)");
  c_sim->add_option("--out", sim.out, "Output event file (.csv, .evt1 or .bin)")->required();
  c_sim->callback([&] {
    action = [&] {
      sim.cfg.seed = sim_seed->count() ? sim.seed : default_seed();
      header("simulate", sim.cfg.seed,
             {{"c_pos", sim.cfg.c_pos}, {"c_neg", sim.cfg.c_neg}, {"sigma", sim.cfg.sigma_c},
              {"refractory_us", sim.cfg.refractory_us}, {"frames", sim.frames.string()}});
      const FrameSequence seq = load_video_dir(sim.frames);
      const EventStream events = simulate(seq.frames, sim.cfg);
      save_events(events, sim.out, format_for_path(sim.out));
      std::cout << "events " << events.size() << "\n";
    };
  });

  // blur
  struct {
    fs::path frames, out;
    std::size_t first = 0, count = 7;
    int bit_depth = 8;
  } blur;
  auto* c_blur = app.add_subcommand("blur", "Average consecutive frames into a blurry image");
  c_blur->add_option("--frames", blur.frames, "Directory of PNG frames with timestamps.txt")
      ->required()
      ->check(CLI::ExistingDirectory);
  c_blur->add_option("--first", blur.first, "Index of the first frame")->capture_default_str();
  c_blur->add_option("--count", blur.count, "Number of frames to average")->capture_default_str();
  c_blur->add_option("--bit-depth", blur.bit_depth, "PNG bit depth")->check(CLI::IsMember({8, 16}))->capture_default_str();
  c_blur->add_option("--out", blur.out, "Output PNG")->required();
  c_blur->callback([&] {
    action = [&] {
      header("blur", 0, {{"first", blur.first}, {"count", blur.count}, {"frames", blur.frames.string()}});
      const FrameSequence seq = load_video_dir(blur.frames);
      const IntensityFrame b = synthesize_blur(seq.frames, blur.first, blur.count);
      write_png(blur.out, b.pixels, blur.bit_depth);
      std::cout << "exposure " << seq.frames[blur.first].t << " " << seq.frames[blur.first + blur.count - 1].t << "\n";
    };
  });

  // dataset build
  struct {
    std::vector<fs::path> videos;
    fs::path out;
    DatasetOptions opt;
    std::uint64_t seed = 0;
  } ds;
  auto* c_dataset = app.add_subcommand("dataset", "Dataset tools");
  c_dataset->require_subcommand(1);
  auto* c_build = c_dataset->add_subcommand("build", "Cut videos into blur/event examples");
  c_build->add_option("--videos", ds.videos, "Video directories")->required()->check(CLI::ExistingDirectory);
  c_build->add_option("--out", ds.out, "Output directory")->required();
  c_build->add_option("--window", ds.opt.window_len, "Frames per example")->capture_default_str();
  c_build->add_option("--q", ds.opt.q, "HFR targets per example")->capture_default_str();
  c_build->add_option("--c-pos", ds.opt.thresholds.c_pos, "Positive threshold")->capture_default_str();
  c_build->add_option("--c-neg", ds.opt.thresholds.c_neg, "Negative threshold")->capture_default_str();
  c_build->add_option("--sigma", ds.opt.thresholds.sigma_c, "Threshold noise std")->capture_default_str();
  c_build->add_option("--train-parts", ds.opt.train_parts, "Train share of the split ratio")->capture_default_str();
  c_build->add_option("--val-parts", ds.opt.val_parts, "Validation share of the split ratio")->capture_default_str();
  auto* ds_seed = c_build->add_option("--seed", ds.seed, "Seed (falls back to EVB_SEED)");
  c_build->callback([&] {
    action = [&] {
      ds.opt.seed = ds_seed->count() ? ds.seed : default_seed();
      json vids = json::array();
      for (const auto& v : ds.videos) vids.push_back(v.string());
      header("dataset build", ds.opt.seed,
             {{"window", ds.opt.window_len}, {"q", ds.opt.q}, {"c_pos", ds.opt.thresholds.c_pos},
              {"c_neg", ds.opt.thresholds.c_neg}, {"sigma", ds.opt.thresholds.sigma_c},
              {"train_parts", ds.opt.train_parts}, {"val_parts", ds.opt.val_parts}, {"videos", vids}});
      const DatasetIndex index = build_dataset(ds.videos, ds.out, ds.opt);
      for (const auto& w : index.warnings) std::cerr << "warning: " << w << "\n";
      std::cout << "examples " << index.examples.size() << " train " << index.count(Split::train) << " val "
                << index.count(Split::val) << "\n";
    };
  });

  // edi
  struct {
    fs::path blurry, sharp, events, out, out_dir, gt;
    std::string c = "auto";
    std::optional<Timestamp> t0, t1;
    int samples = 7;
    int q = 6;
    std::string criterion = "sharpness";
    ThresholdSearch search;
  } edi;
  auto* c_edi = app.add_subcommand("edi", "Closed-form event-based deblurring");
  c_edi->require_subcommand(1);
  auto add_window = [&](CLI::App* c) {
    c->add_option("--events", edi.events, "Event file")->required()->check(CLI::ExistingFile);
    c->add_option("--t0", edi.t0, "Exposure start (default: first event)");
    c->add_option("--t1", edi.t1, "Exposure end (default: last event)");
  };
  auto add_search = [&](CLI::App* c) {
    c->add_option("--criterion", edi.criterion, "sharpness or oracle")
        ->check(CLI::IsMember({"sharpness", "oracle"}))
        ->capture_default_str();
    c->add_option("--gt", edi.gt, "Ground-truth sharp PNG for the oracle criterion")->check(CLI::ExistingFile);
    c->add_option("--c-min", edi.search.c_min, "Search lower bound")->capture_default_str();
    c->add_option("--c-max", edi.search.c_max, "Search upper bound")->capture_default_str();
    c->add_option("--steps", edi.search.steps, "Search grid size")->capture_default_str();
    c->add_option("--samples", edi.samples, "Latent samples across the exposure")->capture_default_str();
  };
  auto edi_json = [&] {
    return json{{"c", edi.c},
                {"t0", edi.t0 ? json(*edi.t0) : json()},
                {"t1", edi.t1 ? json(*edi.t1) : json()},
                {"samples", edi.samples},
                {"q", edi.q},
                {"criterion", edi.criterion},
                {"c_min", edi.search.c_min},
                {"c_max", edi.search.c_max},
                {"steps", edi.search.steps}};
  };
  // Returns the threshold, estimating it when --c is "auto".
  auto resolve_c = [&](const IntensityFrame& blurry, const EventStream& events, const Exposure& exposure) {
    if (edi.c != "auto") {
      try {
        std::size_t used = 0;
        const double c = std::stod(edi.c, &used);
        if (used != edi.c.size()) throw std::invalid_argument("");
        return c;
      } catch (const std::exception&) {
        throw std::invalid_argument("--c must be a number or 'auto', got '" + edi.c + "'");
      }
    }
    const bool oracle = edi.criterion == "oracle";
    std::optional<Image> gt;
    if (oracle) {
      if (edi.gt.empty()) throw std::invalid_argument("the oracle criterion needs --gt");
      gt = read_png(edi.gt);
    }
    const ThresholdEstimate est =
        estimate_threshold(blurry, events, exposure, edi.search,
                           oracle ? ThresholdCriterion::oracle : ThresholdCriterion::sharpness, gt ? &*gt : nullptr,
                           edi.samples);
    if (est.degenerate) std::cerr << "warning: no events in the exposure; threshold is arbitrary\n";
    return est.c;
  };

  auto* c_edi_deblur = c_edi->add_subcommand("deblur", "Deblur one image");
  c_edi_deblur->add_option("--blurry", edi.blurry, "Blurry PNG")->required()->check(CLI::ExistingFile);
  c_edi_deblur->add_option("--c", edi.c, "Threshold or 'auto'")->capture_default_str();
  c_edi_deblur->add_option("--out", edi.out, "Output PNG")->required();
  add_window(c_edi_deblur);
  add_search(c_edi_deblur);
  c_edi_deblur->callback([&] {
    action = [&] {
      header("edi deblur", 0, edi_json());
      const EventStream events = read_events(edi.events);
      const Exposure exposure = resolve_exposure(events, edi.t0, edi.t1);
      const IntensityFrame blurry{read_png(edi.blurry), exposure.t0};
      const double c = resolve_c(blurry, events, exposure);
      ThresholdConfig cfg;
      cfg.c_pos = cfg.c_neg = c;
      write_png(edi.out, edi_deblur(blurry, events, cfg, exposure, edi.samples).pixels);
      std::cout << "c " << fmt(c) << "\n";
    };
  });

  auto* c_edi_video = c_edi->add_subcommand("video", "Generate q+1 frames from a sharp image");
  c_edi_video->add_option("--sharp", edi.sharp, "Sharp PNG at the exposure start")->required()->check(CLI::ExistingFile);
  c_edi_video->add_option("--blurry", edi.blurry, "Blurry PNG (needed for --c auto)")->check(CLI::ExistingFile);
  c_edi_video->add_option("--c", edi.c, "Threshold or 'auto'")->capture_default_str();
  c_edi_video->add_option("--q", edi.q, "Number of steps")->capture_default_str();
  c_edi_video->add_option("--out-dir", edi.out_dir, "Output directory")->required();
  add_window(c_edi_video);
  add_search(c_edi_video);
  c_edi_video->callback([&] {
    action = [&] {
      header("edi video", 0, edi_json());
      const EventStream events = read_events(edi.events);
      const Exposure exposure = resolve_exposure(events, edi.t0, edi.t1);
      const IntensityFrame sharp{read_png(edi.sharp), exposure.t0};
      if (edi.c == "auto" && edi.blurry.empty()) throw std::invalid_argument("--c auto needs --blurry");
      const double c = edi.c == "auto" ? resolve_c({read_png(edi.blurry), exposure.t0}, events, exposure)
                                       : resolve_c(sharp, events, exposure);
      ThresholdConfig cfg;
      cfg.c_pos = cfg.c_neg = c;
      save_video_dir(edi.out_dir, edi_generate(sharp, events, cfg, exposure, edi.q));
      std::cout << "c " << fmt(c) << "\nframes " << edi.q + 1 << "\n";
    };
  });

  auto* c_edi_est = c_edi->add_subcommand("estimate-c", "Estimate the contrast threshold");
  c_edi_est->add_option("--blurry", edi.blurry, "Blurry PNG")->required()->check(CLI::ExistingFile);
  add_window(c_edi_est);
  add_search(c_edi_est);
  c_edi_est->callback([&] {
    action = [&] {
      edi.c = "auto";
      header("edi estimate-c", 0, edi_json());
      const EventStream events = read_events(edi.events);
      const Exposure exposure = resolve_exposure(events, edi.t0, edi.t1);
      std::cout << "c " << fmt(resolve_c({read_png(edi.blurry), exposure.t0}, events, exposure)) << "\n";
    };
  });

  // train
  TrainFlags tf;
  fs::path train_out, train_log, train_last;
  auto* c_train = app.add_subcommand("train", "Train a network");
  c_train->require_subcommand(1);
  auto run_train = [&](bool hfr) {
    tf.resolve();
    header(hfr ? "train hfr" : "train deblur", tf.seed, tf.resolved());
    const DatasetIndex index = load_manifest(manifest_path(tf.dataset));
    const auto train = load_samples(index, Split::train);
    const auto val = load_samples(index, Split::val);
    std::ofstream log;
    if (!train_log.empty()) {
      log.open(train_log);
      if (!log) throw IoError("cannot write " + train_log.string());
      log << "epoch,train_loss,val_loss,val_psnr\n";
    }
    TrainHooks hooks;
    hooks.on_epoch = [&](const EpochRecord& r) {
      const std::string line =
          std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.val_loss) + "," + fmt(r.val_psnr);
      if (log.is_open()) log << line << "\n" << std::flush;
      std::cerr << line << "\n";
    };
    const LossConfig lc = tf.loss();
    const TrainResult result = hfr ? train_hfr(train, val, tf.net, tf.train, lc, hooks)
                                   : train_deblur(train, val, tf.net, tf.train, lc, hooks);
    save_checkpoint(result.best, train_out);
    if (!train_last.empty()) save_checkpoint(result.last, train_last);
    std::cout << "best_epoch " << result.best_epoch << "\n";
  };
  for (const bool hfr : {false, true}) {
    auto* c = c_train->add_subcommand(hfr ? "hfr" : "deblur", hfr ? "Train the HFR network" : "Train the deblur network");
    tf.add(c);
    c->add_option("--out", train_out, "Best checkpoint path")->required();
    c->add_option("--log", train_log, "CSV training log");
    c->add_option("--last", train_last, "Also save the final-epoch checkpoint here");
    c->callback([&, hfr] { action = [&, hfr] { run_train(hfr); }; });
  }

  // infer
  struct {
    fs::path ckpt, blurry, events, out;
    std::optional<Timestamp> t0, t1;
  } inf;
  auto* c_infer = app.add_subcommand("infer", "Deblur one image with a trained network");
  c_infer->add_option("--ckpt", inf.ckpt, "Deblur checkpoint")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--blurry", inf.blurry, "Blurry PNG")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--events", inf.events, "Event file")->required()->check(CLI::ExistingFile);
  c_infer->add_option("--t0", inf.t0, "Exposure start (default: first event)");
  c_infer->add_option("--t1", inf.t1, "Exposure end (default: last event)");
  c_infer->add_option("--out", inf.out, "Output PNG")->required();
  c_infer->callback([&] {
    action = [&] {
      const Checkpoint ck = load_checkpoint(inf.ckpt);
      header("infer", ck.metadata.seed, {{"network", config_to_json(ck.config)}});
      const auto net = load_deblur_net(ck);
      const EventStream events = read_events(inf.events);
      const Exposure exposure = resolve_exposure(events, inf.t0, inf.t1);
      write_png(inf.out, run_deblur({read_png(inf.blurry), exposure.t0}, events, exposure, net).pixels);
    };
  });

  // pipeline
  struct {
    fs::path blurry, events, deblur, hfr, out_dir;
    int q = 6;
    std::optional<Timestamp> t0, t1;
  } pipe;
  auto* c_pipe = app.add_subcommand("pipeline", "Deblur, then generate q further frames");
  c_pipe->add_option("--blurry", pipe.blurry, "Blurry PNG")->required()->check(CLI::ExistingFile);
  c_pipe->add_option("--events", pipe.events, "Event file")->required()->check(CLI::ExistingFile);
  c_pipe->add_option("--deblur", pipe.deblur, "Deblur checkpoint")->required();
  c_pipe->add_option("--hfr", pipe.hfr, "HFR checkpoint")->required();
  c_pipe->add_option("--q", pipe.q, "Recurrent steps")->capture_default_str();
  c_pipe->add_option("--t0", pipe.t0, "Exposure start (default: first event)");
  c_pipe->add_option("--t1", pipe.t1, "Exposure end (default: last event)");
  c_pipe->add_option("--out-dir", pipe.out_dir, "Output directory")->required();
  c_pipe->callback([&] {
    action = [&] {
      header("pipeline", 0,
             {{"q", pipe.q}, {"deblur", pipe.deblur.string()}, {"hfr", pipe.hfr.string()},
              {"t0", pipe.t0 ? json(*pipe.t0) : json()}, {"t1", pipe.t1 ? json(*pipe.t1) : json()}});
      const EventStream events = read_events(pipe.events);
      const Exposure exposure = resolve_exposure(events, pipe.t0, pipe.t1);
      const PipelineResult r =
          run_pipeline({read_png(pipe.blurry), exposure.t0}, events, exposure, pipe.deblur, pipe.hfr, pipe.q);
      save_video_dir(pipe.out_dir, r.frames);
      std::size_t used = 0;
      for (auto n : r.window_event_counts) used += n;
      std::cout << "frames " << r.frames.frames.size() << "\nevents " << r.exposure_event_count << " used " << used
                << "\n";
    };
  });

  // eval
  struct {
    fs::path pred, gt, out, plot;
  } ev;
  auto* c_eval = app.add_subcommand("eval", "PSNR/SSIM of predicted against ground-truth PNGs");
  c_eval->add_option("--pred", ev.pred, "Prediction directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--gt", ev.gt, "Ground-truth directory")->required()->check(CLI::ExistingDirectory);
  c_eval->add_option("--out", ev.out, "JSON report (stdout if omitted)");
  c_eval->add_option("--plot", ev.plot, "PSNR bar chart PNG");
  c_eval->callback([&] {
    action = [&] {
      const json resolved{{"pred", ev.pred.string()}, {"gt", ev.gt.string()}};
      header("eval", 0, resolved);
      MetricsReport report = evaluate(ev.pred, ev.gt);
      report.config_digest = hex64(fnv1a64(resolved.dump()));
      json j = to_json(report);
      j["reference"] = {{"note", "published full-scale results, not desk-scale targets"},
                        {"deblur", {{"psnr_db", kReferenceDeblurPsnr}, {"ssim", kReferenceDeblurSsim}}},
                        {"hfr", {{"psnr_db", kReferenceHfrPsnr}, {"ssim", kReferenceHfrSsim}}}};
      if (ev.out.empty()) {
        std::cout << j.dump(2) << "\n";
      } else {
        std::ofstream(ev.out) << j.dump(2) << "\n";
        std::cout << "mean_psnr_db " << fmt(report.mean_psnr_db) << "\nmean_ssim " << fmt(report.mean_ssim) << "\n";
      }
      if (!ev.plot.empty()) {
        std::vector<double> values;
        double hi = 50.0;
        for (const auto& e : report.examples) {
          values.push_back(e.psnr_db);
          hi = std::max(hi, e.psnr_db);
        }
        write_bar_plot(ev.plot, values, 0.0, hi);
      }
    };
  });

  // ablate-bins
  TrainFlags ab;
  std::vector<int> ab_bins{1, 6};
  fs::path ab_out;
  auto* c_ablate = app.add_subcommand("ablate-bins", "Train and compare deblur nets with different bin counts");
  ab.add(c_ablate);
  c_ablate->add_option("--bins-list", ab_bins, "Bin counts to compare")->delimiter(',')->capture_default_str();
  c_ablate->add_option("--out", ab_out, "JSON report (stdout if omitted)");
  c_ablate->callback([&] {
    action = [&] {
      ab.resolve();
      json resolved = ab.resolved();
      resolved["bins_list"] = ab_bins;
      header("ablate-bins", ab.seed, resolved);
      const DatasetIndex index = load_manifest(manifest_path(ab.dataset));
      const auto train = load_samples(index, Split::train);
      auto eval = load_samples(index, Split::val);
      if (eval.empty()) {
        std::cerr << "warning: no validation split; scoring on the training split\n";
        eval = train;
      }
      const AblationReport report = ablate_bins(train, eval, ab.net, ab.train, ab.loss(), ab_bins);
      const std::string text = to_json(report).dump(2);
      if (ab_out.empty()) {
        std::cout << text << "\n";
      } else {
        std::ofstream(ab_out) << text << "\n";
      }
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  try {
    if (action) action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
