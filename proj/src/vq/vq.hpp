#pragma once

#include "nn/layers.hpp"
#include "synth/synth.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace sgti {

struct VqConfig {
  int image_size = 32;
  int f = 8;                            // compression factor, a power of two
  std::vector<int> widths{16, 32, 64, 64}; // log2(f) + 1 stage widths
  int codebook_size = 64;               // K
  int latent_dim = 32;                  // n_z
  double beta = 0.25;
  int restart_after = 3; // idle epochs before a codebook row is reset

  int stages() const;
  int grid() const { return image_size / f; }
  void validate() const;
  friend bool operator==(const VqConfig &, const VqConfig &) = default;
};

struct ResBlock {
  nn::Conv2d a, b;
};

struct VqModel {
  VqConfig config;
  nn::Params params;
  nn::Conv2d enc_in;
  std::vector<nn::Conv2d> enc_down;
  ResBlock enc_res;
  nn::Conv2d enc_out;
  nn::Conv2d dec_in;
  ResBlock dec_res;
  std::vector<nn::Conv2d> dec_up;
  nn::Conv2d dec_out;
  Tensor codebook; // [K, n_z]

  VqModel(const VqConfig &config, std::uint64_t seed);
};

// [B,3,H,W] -> [B,n_z,H/f,W/f]
Tensor encode(const VqModel &model, const Tensor &images);
// [B,n_z,h,w] -> [B,3,h*f,w*f] in [-1,1]
Tensor decode(const VqModel &model, const Tensor &latent);
// Indices in raster order per image.
Tensor decode_indices(const VqModel &model,
                      const std::vector<std::int64_t> &indices,
                      std::int64_t batch, std::int64_t h, std::int64_t w);

struct Quantized {
  std::vector<std::int64_t> indices;
  Tensor zq; // codebook rows gathered with gradient into the codebook
};

// Nearest codebook row per row of z (squared Euclidean distance in double,
// ties to the lowest index).
Quantized quantize(const Tensor &z_rows, const Tensor &codebook);

struct VqLoss {
  Tensor total;
  Tensor reconstruction; // mean |x - x_hat| + mean (x - x_hat)^2
  Tensor codebook;       // mean (sg[z] - z_q)^2
  Tensor commitment;     // beta * mean (z - sg[z_q])^2
  Tensor z;              // encoder output rows [B*h*w, n_z]
  Tensor recon;          // x_hat [B,3,H,W]
  std::vector<std::int64_t> indices;
};

VqLoss vq_loss(const VqModel &model, const Tensor &images);

// Tracks per-row usage across epochs and resets rows idle for
// config.restart_after consecutive epochs.
class CodebookMonitor {
public:
  explicit CodebookMonitor(int codebook_size)
      : usage_(codebook_size, 0), idle_(codebook_size, 0) {}

  void record(const std::vector<std::int64_t> &indices);
  // Closes the epoch. Returns the rows that were reset to encoder outputs
  // drawn from z_rows.
  std::vector<int> end_epoch(VqModel &model, const Tensor &z_rows,
                             std::mt19937_64 &rng);
  const std::vector<std::int64_t> &last_histogram() const { return last_; }
  const std::vector<int> &idle_epochs() const { return idle_; }
  const std::vector<std::int64_t> &usage() const { return usage_; }
  // Resumes mid-epoch from saved counters.
  void restore(std::vector<std::int64_t> usage, std::vector<int> idle);

private:
  std::vector<std::int64_t> usage_;
  std::vector<std::int64_t> last_;
  std::vector<int> idle_;
};

// Stacks HWC images into an NCHW tensor.
Tensor images_to_tensor(const std::vector<Image> &images);
Image tensor_to_image(const Tensor &batch, std::int64_t index);

} // namespace sgti
