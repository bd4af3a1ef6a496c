#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

#include "evb/checkpoint.hpp"
#include "evb/digest.hpp"
#include "evb/errors.hpp"
#include "support.hpp"

using namespace evb;
using namespace evb::nn;

namespace {

NetworkConfig small_config() {
  NetworkConfig c;
  c.levels = 2;
  c.stem_channels = 6;
  c.dense_layers = 2;
  c.growth = 3;
  c.head_init = HeadInit::random;
  return c;
}

std::vector<char> read_all(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

LogFrame some_log(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  Image img(h, w);
  for (auto& v : img.data()) v = u(rng);
  return to_log(img);
}

VoxelGrid some_voxel(int bins, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(-5, 5);
  VoxelGrid g(bins, h, w, {0, 10});
  for (auto& v : g.values()) v = d(rng);
  return g;
}

}  // namespace

TEST_CASE("parameters and forward outputs survive a round trip") {
  evbtest::TempDir dir("ckpt");
  const NetworkConfig cfg = small_config();
  DeblurNet<float> net(cfg, 21);
  TrainingMetadata meta{7, {0.5, 0.25}, {0.6, 0.3}, 99};
  save_checkpoint(capture(net, NetworkKind::deblur, meta), dir / "d.ckpt");
  const Checkpoint loaded = load_checkpoint(dir / "d.ckpt");
  CHECK(loaded.kind == NetworkKind::deblur);
  CHECK(loaded.config == cfg);
  CHECK(loaded.metadata == meta);
  const auto restored = load_deblur_net(loaded);
  const auto& a = net.parameters().items();
  const auto& b = restored.parameters().items();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(std::memcmp(a[i].var.value().data(), b[i].var.value().data(), a[i].var.value().size() * sizeof(float)) == 0);
  }
  const LogFrame in = some_log(16, 16, 1);
  const VoxelGrid v = some_voxel(cfg.bins, 16, 16, 2);
  CHECK(forward_deblur(net, in, v).pixels == forward_deblur(restored, in, v).pixels);

  // saving the loaded checkpoint reproduces the file byte for byte
  save_checkpoint(loaded, dir / "again.ckpt");
  CHECK(read_all(dir / "d.ckpt") == read_all(dir / "again.ckpt"));
}

TEST_CASE("hfr checkpoints round trip with state") {
  evbtest::TempDir dir("ckpt_hfr");
  NetworkConfig cfg = small_config();
  cfg.lstm_hidden = {5, 4};
  HfrNet<float> net(cfg, 3);
  save_checkpoint(capture(net, NetworkKind::hfr), dir / "h.ckpt");
  const auto restored = load_hfr_net(load_checkpoint(dir / "h.ckpt"));
  const LogFrame in = some_log(8, 12, 4);
  const VoxelGrid v = some_voxel(cfg.bins, 8, 12, 5);
  auto s1 = reset_state(net, 8, 12);
  auto s2 = reset_state(restored, 8, 12);
  for (int k = 0; k < 3; ++k) {
    auto [o1, n1] = forward_hfr(net, in, v, s1);
    auto [o2, n2] = forward_hfr(restored, in, v, s2);
    CHECK(o1.pixels == o2.pixels);
    s1 = n1;
    s2 = n2;
  }
  CHECK_THROWS_AS(load_deblur_net(load_checkpoint(dir / "h.ckpt")), CheckpointError);
}

TEST_CASE("archive header layout") {
  evbtest::TempDir dir("ckpt_layout");
  DeblurNet<float> net(small_config(), 1);
  save_checkpoint(capture(net, NetworkKind::deblur), dir / "x.ckpt");
  const auto bytes = read_all(dir / "x.ckpt");
  REQUIRE(bytes.size() > 24);
  CHECK(std::string(bytes.data(), 4) == "EVBC");
  std::uint32_t version = 0;
  std::memcpy(&version, bytes.data() + 4, 4);
  CHECK(version == 1);
  std::uint64_t manifest_len = 0;
  std::memcpy(&manifest_len, bytes.data() + 8, 8);
  const auto manifest = nlohmann::json::parse(std::string(bytes.data() + 16, manifest_len));
  CHECK(manifest.at("kind") == "deblur");
  std::uint64_t count = 0;
  std::memcpy(&count, bytes.data() + 16 + manifest_len, 8);
  CHECK(count == net.parameters().scalar_count());
  CHECK(bytes.size() == 16 + manifest_len + 8 + count * 4 + 8);
  // trailing digest: FNV-1a 64 over everything before it, recomputed here
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i + 8 < bytes.size(); ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ull;
  }
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 8, 8);
  CHECK(stored == h);
  // first payload float is the first parameter's first value
  float first = 0.0f;
  std::memcpy(&first, bytes.data() + 16 + manifest_len + 8, 4);
  CHECK(first == net.parameters().items()[0].var.value()[0]);
}

TEST_CASE("corrupted and mismatched files are rejected") {
  evbtest::TempDir dir("ckpt_bad");
  DeblurNet<float> net(small_config(), 1);
  save_checkpoint(capture(net, NetworkKind::deblur), dir / "ok.ckpt");
  const auto good = read_all(dir / "ok.ckpt");

  auto flipped = good;
  flipped[flipped.size() / 2] ^= 0x20;
  write_all(dir / "flip.ckpt", flipped);
  CHECK_THROWS_AS(load_checkpoint(dir / "flip.ckpt"), CheckpointError);

  auto truncated = good;
  truncated.resize(good.size() - 13);
  write_all(dir / "trunc.ckpt", truncated);
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), CheckpointError);

  auto magic = good;
  magic[0] = 'X';
  write_all(dir / "magic.ckpt", magic);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), CheckpointError);

  write_all(dir / "empty.ckpt", {});
  CHECK_THROWS_AS(load_checkpoint(dir / "empty.ckpt"), CheckpointError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), CheckpointError);

  // shape or config disagreement on restore
  Checkpoint ck = capture(net, NetworkKind::deblur);
  ck.parameters[0].shape.c += 1;
  ck.parameters[0].data.resize(ck.parameters[0].shape.size());
  CHECK_THROWS_AS(load_deblur_net(ck), CheckpointError);
  Checkpoint other = capture(net, NetworkKind::deblur);
  other.parameters.pop_back();
  CHECK_THROWS_AS(load_deblur_net(other), CheckpointError);
  DeblurNet<float> wider(NetworkConfig{}, 1);
  CHECK_THROWS_AS(restore(capture(net, NetworkKind::deblur), wider), CheckpointError);
}

TEST_CASE("config json round trip and digest") {
  NetworkConfig c = small_config();
  c.lstm_hidden = {3, 4};
  c.voxel_scale = 5.0;
  CHECK(config_from_json(config_to_json(c)) == c);
  CHECK(config_digest(c) == config_digest(config_from_json(config_to_json(c))));
  NetworkConfig d = c;
  d.growth += 1;
  CHECK(config_digest(c) != config_digest(d));
  auto j = config_to_json(c);
  j["bogus"] = 1;
  CHECK_THROWS(config_from_json(j));
  auto bad = config_to_json(c);
  bad["levels"] = 0;
  CHECK_THROWS(config_from_json(bad));
  CHECK(config_from_json(nlohmann::json::object()) == NetworkConfig{});
  CHECK(network_kind_from_string(to_string(NetworkKind::extractor)) == NetworkKind::extractor);
  CHECK_THROWS(network_kind_from_string("gan"));
}
