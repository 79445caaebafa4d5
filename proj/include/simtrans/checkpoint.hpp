#pragma once

// Versioned binary checkpoint. Layout (all integers little-endian):
//
//   "SIMTCKPT"                 8-byte magic
//   u32 version
//   str config                 canonical TrainConfig text
//   u64 classes
//   u64 step
//   str rng                    textual std::mt19937_64 state
//   u64 count, then `count` x { str name, u32 rank, u64 extents[rank], f64 data[] }   parameters
//   u64 count, then the same record layout for momentum buffers
//
// where `str` is a u64 byte length followed by the bytes and f64 is an
// IEEE-754 double written little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "simtrans/config.hpp"
#include "simtrans/model.hpp"
#include "simtrans/tensor.hpp"

namespace simtrans {

struct NamedArray {
  std::string name;
  Tensor value;

  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  TrainConfig config;
  std::size_t classes = 0;
  std::uint64_t step = 0;
  std::string rng_state;
  std::vector<NamedArray> parameters;
  std::vector<NamedArray> momentum;
};

std::string serialize(const Checkpoint& ckpt);
/// Throws IoError on malformed or unsupported input.
Checkpoint deserialize(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model described by a checkpoint. Throws ConfigError when a
/// parameter is missing or has the wrong shape.
Model model_from_checkpoint(const Checkpoint& ckpt);

/// Snapshot of a model's parameters in `Model::parameters()` order.
std::vector<NamedArray> snapshot(const Model& model);

}  // namespace simtrans
