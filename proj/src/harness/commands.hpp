#pragma once

#include "harness/io.hpp"
#include "harness/train.hpp"

#include <memory>
#include <string>
#include <vector>

namespace sgti {

// Frozen models of a run: <out>/imt.ckpt plus the VQ and SGT checkpoints
// named by the config.
struct Pipeline {
  std::unique_ptr<VqModel> vq;
  std::unique_ptr<SgtModel> sgt; // null when not needed
  std::unique_ptr<ImtModel> imt;
};
std::string imt_checkpoint(const RunConfig &cfg);
Pipeline load_pipeline(const RunConfig &cfg, bool need_sgt);

struct SampleRequest {
  std::string graph_path;
  double temperature = 1.0;
  int top_k = 32;
  int n = 1;
  bool use_gt_layout = false; // take the document's boxes, skip the SGT
};

struct SampleReport {
  Layout layout;
  std::vector<std::vector<std::int64_t>> codes; // one per sample
  std::vector<Image> images;
  std::vector<std::string> files; // written outputs, layout first
};

// Sample i uses derive_seed(seed, i). Writes <out_dir>/layout.txt and
// sample_<i>.ppm / sample_<i>.tokens unless out_dir is empty.
SampleReport sample_document(const Pipeline &pipeline, const GraphDocument &doc,
                             const SampleRequest &request, std::uint64_t seed,
                             const std::string &out_dir);
// Outputs go to <out>/samples.
SampleReport sample_cmd(const RunConfig &cfg, const SampleRequest &request);

struct EvalReport {
  int scenes = 0;
  double miou = 0;
  double accuracy = 0; // teacher-forced next-token accuracy
  double nll = 0;
  double mse = 0;
  double psnr = 0; // dB, peak-to-peak range 2
  std::string text;
};
// Also written to <out>/eval.txt.
EvalReport eval_cmd(const RunConfig &cfg);

struct AblationRow {
  std::string variant;
  std::string metric;
  double value = 0;
};
struct AblationReport {
  std::vector<AblationRow> rows; // sgt-base, sgt+E, sgt+E+LapPE, imt-selfatt, imt-crossatt
  std::string table;
};
// Each variant trains under <out>/ablate/<variant> with train_sgt or
// train_imt. The image transformer rows use the VQ checkpoint of the config
// and the +LapPE layout transformer. Table also written to <out>/ablate.txt.
AblationReport ablate_cmd(const RunConfig &cfg);

} // namespace sgti
