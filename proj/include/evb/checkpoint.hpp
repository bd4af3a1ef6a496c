#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "evb/networks.hpp"

namespace evb {

enum class NetworkKind { deblur, hfr, extractor };

std::string to_string(NetworkKind kind);
NetworkKind network_kind_from_string(const std::string& text);

nlohmann::json config_to_json(const NetworkConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
NetworkConfig config_from_json(const nlohmann::json& j);
/// Digest of the canonical JSON form.
std::string config_digest(const NetworkConfig& config);

struct TrainingMetadata {
  int epoch = 0;
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::uint64_t seed = 0;

  friend bool operator==(const TrainingMetadata&, const TrainingMetadata&) = default;
};

struct NamedArray {
  std::string name;
  nn::Shape shape;
  std::vector<float> data;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  NetworkKind kind = NetworkKind::deblur;
  NetworkConfig config;
  TrainingMetadata metadata;
  std::vector<NamedArray> parameters;

  const NamedArray* find(const std::string& name) const;
};

/*
 * Archive layout (little-endian):
 *   "EVBC"  u32 version
 *   u64 n   n bytes of JSON manifest {kind, config, metadata, parameters: [{name, shape, offset}]}
 *   u64 m   m float32 values
 *   u64     FNV-1a of everything before it
 */
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

template <typename T>
Checkpoint capture(const nn::ResidualUNet<T>& net, NetworkKind kind, TrainingMetadata metadata = {});

/// Copies parameters into `net`; names, count and shapes must match exactly.
template <typename T>
void restore(const Checkpoint& checkpoint, nn::ResidualUNet<T>& net);

nn::DeblurNet<float> load_deblur_net(const Checkpoint& checkpoint);
nn::HfrNet<float> load_hfr_net(const Checkpoint& checkpoint);

}  // namespace evb
