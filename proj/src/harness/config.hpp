#pragma once

#include "imt/imt.hpp"
#include "sgt/sgt.hpp"
#include "synth/synth.hpp"
#include "tensor/optim.hpp"
#include "vq/vq.hpp"

#include <cstdint>
#include <string>

namespace sgti {

struct StageSchedule {
  std::int64_t steps = 1;
  double lr = 1e-4;
};

struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  std::string out = "runs/desk";
  int batch = 16;
  std::int64_t checkpoint_every = 0; // 0: final checkpoint only

  SynthConfig data;
  int data_count = 16;
  std::uint64_t data_seed = 1000;
  std::string data_manifest; // empty: generate data_count scenes from data_seed

  VqConfig vq;
  StageSchedule vq_train{600, 4e-3};

  SgtConfig sgt;
  StageSchedule sgt_train{600, 3e-3};
  bool sgt_sign_flip = true;

  ImtConfig imt;
  StageSchedule imt_train{200, 1e-3};
  std::string imt_vq_checkpoint;  // empty: <out>/vqvae.ckpt
  std::string imt_sgt_checkpoint; // empty: <out>/sgt.ckpt

  AdamConfig adam;
  double pct_warmup = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;

  // Keeps dependent fields (vocabulary, grid, image size) in step and checks
  // every stage config.
  void finalize();
  LrSchedule schedule(const StageSchedule &stage) const;
  std::string vq_checkpoint() const;
  std::string sgt_checkpoint() const;
};

// Defaults for a named preset: desk, overfit, tiny or paper.
RunConfig preset_config(const std::string &name);

// `key = value` lines, '#' comments. A `preset` key, wherever it appears,
// selects the base before the other keys apply. Unknown keys and bad values
// throw ValidationError naming the line.
RunConfig parse_config(const std::string &text, const std::string &origin);
RunConfig load_config(const std::string &path);

// Sets one key; throws ValidationError for unknown keys or bad values.
void set_config_value(RunConfig &cfg, const std::string &key,
                      const std::string &value);

// Canonical text with every key, in a fixed order; parses back to the same
// config.
std::string config_text(const RunConfig &cfg);

} // namespace sgti
