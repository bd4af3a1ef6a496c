#include "evb/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "evb/digest.hpp"
#include "evb/errors.hpp"

namespace evb {

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'E', 'V', 'B', 'C'};
constexpr std::uint32_t kVersion = 1;

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(const unsigned char* in) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(in[i]) << (8 * i);
  return v;
}

std::string head_init_name(HeadInit h) { return h == HeadInit::zero ? "zero" : "random"; }

}  // namespace

std::string to_string(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::deblur: return "deblur";
    case NetworkKind::hfr: return "hfr";
    case NetworkKind::extractor: return "extractor";
  }
  return "unknown";
}

NetworkKind network_kind_from_string(const std::string& text) {
  if (text == "deblur") return NetworkKind::deblur;
  if (text == "hfr") return NetworkKind::hfr;
  if (text == "extractor") return NetworkKind::extractor;
  throw CheckpointError("unknown network kind '" + text + "'");
}

json config_to_json(const NetworkConfig& c) {
  return json{{"bins", c.bins},
              {"levels", c.levels},
              {"stem_channels", c.stem_channels},
              {"dense_layers", c.dense_layers},
              {"growth", c.growth},
              {"lstm_hidden", c.lstm_hidden},
              {"head_init", head_init_name(c.head_init)},
              {"voxel_scale", c.voxel_scale}};
}

NetworkConfig config_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("network config must be a JSON object");
  static const std::set<std::string> known{"bins",   "levels",      "stem_channels", "dense_layers",
                                           "growth", "lstm_hidden", "head_init",     "voxel_scale"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown network config key '" + key + "'");
  }
  NetworkConfig c;
  try {
    c.bins = j.value("bins", c.bins);
    c.levels = j.value("levels", c.levels);
    c.stem_channels = j.value("stem_channels", c.stem_channels);
    c.dense_layers = j.value("dense_layers", c.dense_layers);
    c.growth = j.value("growth", c.growth);
    c.lstm_hidden = j.value("lstm_hidden", c.lstm_hidden);
    c.voxel_scale = j.value("voxel_scale", c.voxel_scale);
    const std::string head = j.value("head_init", head_init_name(c.head_init));
    if (head == "zero") {
      c.head_init = HeadInit::zero;
    } else if (head == "random") {
      c.head_init = HeadInit::random;
    } else {
      throw std::invalid_argument("head_init must be 'zero' or 'random'");
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("bad network config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string config_digest(const NetworkConfig& config) { return hex64(fnv1a64(config_to_json(config).dump())); }

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& p : parameters) {
    if (p.name == name) return &p;
  }
  return nullptr;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  json params = json::array();
  std::uint64_t offset = 0;
  for (const auto& p : ck.parameters) {
    if (p.data.size() != p.shape.size()) throw CheckpointError("parameter " + p.name + " data does not match its shape");
    params.push_back({{"name", p.name}, {"shape", {p.shape.n, p.shape.c, p.shape.h, p.shape.w}}, {"offset", offset}});
    offset += p.data.size();
  }
  const json manifest{{"kind", to_string(ck.kind)},
                      {"config", config_to_json(ck.config)},
                      {"metadata",
                       {{"epoch", ck.metadata.epoch},
                        {"train_loss", ck.metadata.train_loss},
                        {"val_loss", ck.metadata.val_loss},
                        {"seed", ck.metadata.seed}}},
                      {"parameters", params}};
  const std::string text = manifest.dump();

  std::string out(kMagic, 4);
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  put_le<std::uint64_t>(out, offset);
  out.reserve(out.size() + offset * 4 + 8);
  for (const auto& p : ck.parameters) {
    for (float v : p.data) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  put_le<std::uint64_t>(out, fnv1a64(std::span(reinterpret_cast<const unsigned char*>(out.data()), out.size())));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  const auto* data = reinterpret_cast<const unsigned char*>(raw.data());
  const std::size_t size = raw.size();
  const std::string where = path.string() + ": ";

  if (size < 24 || std::memcmp(data, kMagic, 4) != 0) throw CheckpointError(where + "not a checkpoint archive");
  if (get_le<std::uint32_t>(data + 4) != kVersion) throw CheckpointError(where + "unsupported checkpoint version");
  const std::uint64_t stored_sum = get_le<std::uint64_t>(data + size - 8);
  if (fnv1a64(std::span(data, size - 8)) != stored_sum) throw CheckpointError(where + "checksum mismatch");

  const std::uint64_t text_len = get_le<std::uint64_t>(data + 8);
  if (text_len > size - 24) throw CheckpointError(where + "truncated manifest");
  const std::size_t payload_at = 16 + text_len;
  const std::uint64_t count = get_le<std::uint64_t>(data + payload_at);
  if (count > (size - payload_at - 16) / 4 || payload_at + 8 + count * 4 + 8 != size) {
    throw CheckpointError(where + "payload size mismatch");
  }
  const unsigned char* payload = data + payload_at + 8;

  Checkpoint ck;
  try {
    const json manifest = json::parse(raw.substr(16, text_len));
    ck.kind = network_kind_from_string(manifest.at("kind").get<std::string>());
    if (ck.kind != NetworkKind::extractor) ck.config = config_from_json(manifest.at("config"));
    const json& meta = manifest.at("metadata");
    ck.metadata.epoch = meta.at("epoch").get<int>();
    ck.metadata.train_loss = meta.at("train_loss").get<std::vector<double>>();
    ck.metadata.val_loss = meta.at("val_loss").get<std::vector<double>>();
    ck.metadata.seed = meta.at("seed").get<std::uint64_t>();
    for (const json& p : manifest.at("parameters")) {
      NamedArray arr;
      arr.name = p.at("name").get<std::string>();
      const auto dims = p.at("shape").get<std::vector<int>>();
      if (dims.size() != 4) throw CheckpointError(where + "parameter " + arr.name + " needs 4 dimensions");
      arr.shape = nn::Shape{dims[0], dims[1], dims[2], dims[3]};
      const auto offset = p.at("offset").get<std::uint64_t>();
      if (offset > count || arr.shape.size() > count - offset) {
        throw CheckpointError(where + "parameter " + arr.name + " lies outside the payload");
      }
      arr.data.resize(arr.shape.size());
      for (std::size_t i = 0; i < arr.data.size(); ++i) {
        arr.data[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload + 4 * (offset + i)));
      }
      ck.parameters.push_back(std::move(arr));
    }
  } catch (const json::exception& e) {
    throw CheckpointError(where + "bad manifest: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(where + e.what());
  }
  return ck;
}

template <typename T>
Checkpoint capture(const nn::ResidualUNet<T>& net, NetworkKind kind, TrainingMetadata metadata) {
  Checkpoint ck;
  ck.kind = kind;
  ck.config = net.config();
  ck.metadata = std::move(metadata);
  for (const auto& p : net.parameters().items()) {
    const auto& v = p.var.value();
    NamedArray arr{p.name, v.shape(), std::vector<float>(v.size())};
    for (std::size_t i = 0; i < v.size(); ++i) arr.data[i] = static_cast<float>(v[i]);
    ck.parameters.push_back(std::move(arr));
  }
  return ck;
}

template <typename T>
void restore(const Checkpoint& ck, nn::ResidualUNet<T>& net) {
  if (ck.config != net.config()) throw CheckpointError("checkpoint config does not match the network");
  auto& items = net.parameters().items();
  if (items.size() != ck.parameters.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(ck.parameters.size()) + " parameters, network has " +
                          std::to_string(items.size()));
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    const NamedArray& src = ck.parameters[i];
    auto& dst = items[i].var.mutable_value();
    if (src.name != items[i].name || src.shape != dst.shape()) {
      throw CheckpointError("checkpoint parameter " + src.name + " " + src.shape.str() + " does not match " +
                            items[i].name + " " + dst.shape().str());
    }
    for (std::size_t k = 0; k < src.data.size(); ++k) dst[k] = static_cast<T>(src.data[k]);
  }
}

nn::DeblurNet<float> load_deblur_net(const Checkpoint& ck) {
  if (ck.kind != NetworkKind::deblur) throw CheckpointError("expected a deblur checkpoint, got " + to_string(ck.kind));
  nn::DeblurNet<float> net(ck.config);
  restore(ck, net);
  return net;
}

nn::HfrNet<float> load_hfr_net(const Checkpoint& ck) {
  if (ck.kind != NetworkKind::hfr) throw CheckpointError("expected an hfr checkpoint, got " + to_string(ck.kind));
  nn::HfrNet<float> net(ck.config);
  restore(ck, net);
  return net;
}

template Checkpoint capture<float>(const nn::ResidualUNet<float>&, NetworkKind, TrainingMetadata);
template Checkpoint capture<double>(const nn::ResidualUNet<double>&, NetworkKind, TrainingMetadata);
template void restore<float>(const Checkpoint&, nn::ResidualUNet<float>&);
template void restore<double>(const Checkpoint&, nn::ResidualUNet<double>&);

}  // namespace evb
