#pragma once

#include "nn/layers.hpp"
#include "tensor/optim.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sgti {

// On disk, all integers little-endian:
//   "SGTI" | u32 version | u32 tensor count
//   per tensor: u32 name length | name | u8 dtype (0 = f32) | u32 rank |
//               u64 dims[rank] | f32 payload
//   u32 config length | config text | u32 rng length | rng text | i64 step
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
  friend bool operator==(const NamedTensor &, const NamedTensor &) = default;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  std::string config; // run config echo
  std::string rng;    // std::mt19937_64 text state
  std::int64_t step = 0;

  const NamedTensor *find(const std::string &name) const;
  const NamedTensor &get(const std::string &name) const;
  friend bool operator==(const Checkpoint &, const Checkpoint &) = default;
};

std::string serialize_checkpoint(const Checkpoint &ckpt);
// Throws FormatError on bad magic, version skew, truncation or trailing bytes.
Checkpoint parse_checkpoint(const std::string &bytes);

// Written through a temporary file and renamed into place.
void save_checkpoint(const std::string &path, const Checkpoint &ckpt);
Checkpoint load_checkpoint(const std::string &path);

void put_params(Checkpoint &ckpt, const nn::Params &params);
// Every parameter must be present with a matching shape.
void get_params(const Checkpoint &ckpt, nn::Params &params);

// Moments stored as "adam.m.<name>" / "adam.v.<name>"; the step counter as the
// one-element tensor "adam.step".
void put_optimizer(Checkpoint &ckpt, const nn::Params &params,
                   const OptimizerState &state);
void get_optimizer(const Checkpoint &ckpt, const nn::Params &params,
                   OptimizerState &state);

std::string rng_text(const std::mt19937_64 &rng);
std::mt19937_64 rng_from_text(const std::string &text);

} // namespace sgti
