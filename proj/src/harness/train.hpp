#pragma once

#include "harness/checkpoint.hpp"
#include "harness/config.hpp"

#include <memory>
#include <string>
#include <vector>

namespace sgti {

// Generated from (data, data_count, data_seed) or read from data_manifest.
std::vector<SceneSample> load_scenes(const RunConfig &cfg);

// splitmix64 of base + index.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

// `batch` distinct scene indices; all scenes in order when batch >= count.
std::vector<int> draw_batch(std::mt19937_64 &rng, int count, int batch);

struct TrainOptions {
  std::string resume; // checkpoint to continue from
};

struct TrainReport {
  std::string checkpoint;
  std::string log;
  std::int64_t first_step = 0;
  std::vector<double> losses; // total loss of each step run here
  // vqvae: reconstruction MSE; sgt: training-set mIoU; imt: teacher-forced
  // accuracy
  double metric = 0;
  double nll = 0; // imt only
  std::string summary;
};

// <out>/vqvae.ckpt, <out>/sgt.ckpt, <out>/imt.ckpt with logs <stage>.log and
// periodic <stage>.step<N>.ckpt.
TrainReport train_vqvae(const RunConfig &cfg, const TrainOptions &options = {});
TrainReport train_sgt(const RunConfig &cfg, const TrainOptions &options = {});
// Needs the frozen VQ checkpoint, and the frozen SGT checkpoint for the cross
// attention variant.
TrainReport train_imt(const RunConfig &cfg, const TrainOptions &options = {});

// The run config a checkpoint was written with, finalized.
RunConfig checkpoint_config(const Checkpoint &ckpt);

// what names the prerequisite in the error for a missing file.
std::unique_ptr<VqModel> load_vq(const std::string &path,
                                 const std::string &what);
std::unique_ptr<SgtModel> load_sgt(const std::string &path,
                                   const std::string &what);
std::unique_ptr<ImtModel> load_imt(const std::string &path,
                                   const std::string &what);

// Raster-order code indices per image, h*w each.
std::vector<std::vector<std::int64_t>>
tokenize_images(const VqModel &vq, const std::vector<SceneSample> &scenes,
                int chunk);

// Final node states of the frozen SGT, detached.
Tensor graph_memory(const SgtModel &sgt, const SceneGraph &g);

double reconstruction_mse(const VqModel &vq,
                          const std::vector<SceneSample> &scenes, int chunk);

// Image transformer inputs for a dataset: full sequences (ground-truth layout
// prefix, or none with cross attention) and per-scene graph memory.
struct ImtData {
  std::vector<std::vector<std::int64_t>> codes;
  std::vector<std::vector<std::int64_t>> sequences;
  std::vector<Tensor> memory; // cross attention only
};
ImtData prepare_imt_data(const ImtConfig &config, const VqModel &vq,
                         const SgtModel *sgt,
                         const std::vector<SceneSample> &scenes, int chunk);

struct TeacherForced {
  double nll = 0;
  double accuracy = 0;
};
TeacherForced teacher_forced(const ImtModel &model, const ImtData &data,
                             int chunk);

// Pooled over objects: sum of IoU(pred_i, gt_i) / total objects.
double layout_miou(const std::vector<Layout> &pred,
                   const std::vector<Layout> &gt);

} // namespace sgti
