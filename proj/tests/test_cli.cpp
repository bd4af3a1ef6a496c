#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run run(const evbtest::TempDir& dir, const std::string& args, const std::string& env = "") {
  const fs::path out = dir / "stdout.txt";
  const fs::path err = dir / "stderr.txt";
  const std::string cmd =
      env + " " + std::string(EVB_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

void write_video(const fs::path& dir, int frames, std::uint64_t seed) {
  evb::save_video_dir(dir, evbtest::moving_scene(32, 32, frames, seed), 16);
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  evbtest::TempDir dir("cli_usage");
  CHECK(run(dir, "").code == 1);
  CHECK(run(dir, "frobnicate").code == 1);
  CHECK(run(dir, "simulate --bogus-flag").code == 1);
  CHECK(run(dir, "simulate --frames " + (dir / "missing").string() + " --out x.evt1").code == 1);
  const Run help = run(dir, "--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("simulate") != std::string::npos);
}

TEST_CASE("runtime errors exit with 2") {
  evbtest::TempDir dir("cli_runtime");
  write_video(dir / "vid", 7, 1);
  CHECK(run(dir, "simulate --frames " + (dir / "vid").string() + " --c-pos -1 --out " + (dir / "e.evt1").string()).code ==
        2);
  CHECK(run(dir, "simulate --frames " + (dir / "vid").string() + " --out " + (dir / "e.evt1").string(),
            "EVB_SEED=notanumber")
            .code == 2);
}

TEST_CASE("simulate, blur and edi with a reproducibility header") {
  evbtest::TempDir dir("cli_flow");
  const fs::path vid = dir / "vid";
  write_video(vid, 7, 2);
  const std::string events = (dir / "e.evt1").string();
  const Run sim = run(dir, "simulate --frames " + vid.string() + " --c-pos 0.2 --c-neg 0.2 --sigma 0.02 --seed 5 --out " +
                               events);
  REQUIRE(sim.code == 0);
  CHECK(sim.err.rfind("# evb 0.1.0 simulate seed=5 config=", 0) == 0);
  const std::string first = slurp(events);
  CHECK(first.size() > 16);
  REQUIRE(run(dir, "simulate --frames " + vid.string() + " --sigma 0.02 --seed 5 --out " + events).code == 0);
  CHECK(slurp(events) == first);
  // EVB_SEED is the fallback seed
  REQUIRE(run(dir, "simulate --frames " + vid.string() + " --sigma 0.02 --out " + events, "EVB_SEED=5").code == 0);
  CHECK(slurp(events) == first);

  const std::string blurry = (dir / "b.png").string();
  const Run blur = run(dir, "blur --frames " + vid.string() + " --count 7 --out " + blurry);
  REQUIRE(blur.code == 0);
  CHECK(blur.out.find("exposure 0 60000") != std::string::npos);

  const Run edi = run(dir, "edi deblur --blurry " + blurry + " --events " + events + " --c auto --out " +
                               (dir / "s.png").string());
  REQUIRE(edi.code == 0);
  CHECK(edi.out.rfind("c ", 0) == 0);
  CHECK(fs::exists(dir / "s.png"));

  const Run video = run(dir, "edi video --sharp " + (vid / "frame_000000.png").string() + " --events " + events +
                                 " --c 0.2 --q 6 --out-dir " + (dir / "edi_video").string());
  REQUIRE(video.code == 0);
  CHECK(fs::exists(dir / "edi_video" / "frame_000006.png"));

  const Run est = run(dir, "edi estimate-c --blurry " + blurry + " --events " + events + " --criterion oracle --gt " +
                               (vid / "frame_000000.png").string());
  REQUIRE(est.code == 0);
  CHECK(est.out.rfind("c ", 0) == 0);
  CHECK(run(dir, "edi estimate-c --blurry " + blurry + " --events " + events + " --criterion oracle").code == 2);
}

TEST_CASE("dataset, train, infer, pipeline and eval") {
  evbtest::TempDir dir("cli_train");
  write_video(dir / "v1", 14, 3);
  write_video(dir / "v2", 7, 4);
  const std::string ds = (dir / "ds").string();
  REQUIRE(run(dir, "dataset build --videos " + (dir / "v1").string() + " " + (dir / "v2").string() + " --out " + ds +
                       " --seed 1")
              .code == 0);
  CHECK(fs::exists(dir / "ds" / "manifest.json"));

  const std::string net = " --levels 1 --stem 4 --dense-layers 1 --growth 4 --crop 16 --epochs 2 --batch 1 --seed 3";
  const Run tr = run(dir, "train deblur --dataset " + ds + net + " --out " + (dir / "d.ckpt").string() + " --log " +
                              (dir / "log.csv").string());
  REQUIRE(tr.code == 0);
  const std::string log = slurp(dir / "log.csv");
  CHECK(log.rfind("epoch,train_loss,val_loss,val_psnr\n1,", 0) == 0);
  REQUIRE(run(dir, "train hfr --dataset " + ds + net + " --out " + (dir / "h.ckpt").string()).code == 0);

  // config file values apply unless a flag overrides them
  {
    std::ofstream(dir / "cfg.json") << R"({"epochs": 1, "levels": 1, "stem_channels": 4, "dense_layers": 1,
                                            "growth": 4, "crop": 16, "batch_size": 1, "seed": 3})";
  }
  const Run cfg = run(dir, "train deblur --dataset " + ds + " --config " + (dir / "cfg.json").string() +
                               " --epochs 2 --out " + (dir / "c.ckpt").string() + " --log " +
                               (dir / "log2.csv").string());
  REQUIRE(cfg.code == 0);
  CHECK(slurp(dir / "log2.csv") == log);
  CHECK(slurp(dir / "c.ckpt") == slurp(dir / "d.ckpt"));
  std::ofstream(dir / "bad.json") << R"({"epochz": 1})";
  CHECK(run(dir, "train deblur --dataset " + ds + " --config " + (dir / "bad.json").string() + " --out " +
                 (dir / "x.ckpt").string())
            .code == 2);

  const fs::path ex = dir / "ds" / "v01_v2_w000";
  REQUIRE(fs::exists(ex / "blurry.png"));
  const std::string common = " --blurry " + (ex / "blurry.png").string() + " --events " + (ex / "events.evt1").string();
  REQUIRE(run(dir, "infer --ckpt " + (dir / "d.ckpt").string() + common + " --out " + (dir / "inf.png").string()).code ==
          0);
  const Run pipe = run(dir, "pipeline" + common + " --deblur " + (dir / "d.ckpt").string() + " --hfr " +
                                (dir / "h.ckpt").string() + " --q 6 --out-dir " + (dir / "video").string());
  REQUIRE(pipe.code == 0);
  CHECK(pipe.out.rfind("frames 7\n", 0) == 0);
  CHECK(fs::exists(dir / "video" / "timestamps.txt"));
  CHECK(run(dir, "pipeline" + common + " --deblur " + (dir / "nope.ckpt").string() + " --hfr " +
                 (dir / "h.ckpt").string() + " --out-dir " + (dir / "video2").string())
            .code == 2);

  const Run eval = run(dir, "eval --pred " + (dir / "video").string() + " --gt " + (dir / "video").string() + " --out " +
                                (dir / "report.json").string() + " --plot " + (dir / "plot.png").string());
  REQUIRE(eval.code == 0);
  const auto report = nlohmann::json::parse(slurp(dir / "report.json"));
  CHECK(report.at("mean_psnr_db").get<double>() == 100.0);
  CHECK(report.at("examples").size() == 7);
  CHECK(fs::exists(dir / "plot.png"));
}
