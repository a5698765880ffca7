#include "sgti/sgti.h"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace {

struct Shared {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::int64_t> steps;
  std::vector<std::string> sets;
};

void add_shared(CLI::App *cmd, Shared &s) {
  cmd->add_option("--config", s.config, "key = value config file");
  cmd->add_option("--seed", s.seed, "run seed");
  cmd->add_option("--out", s.out, "output directory");
  cmd->add_option("--steps", s.steps, "training steps");
  cmd->add_option("--set", s.sets, "override one config key (key=value)");
}

using RunPtr = std::unique_ptr<sgti_run, decltype(&sgti_run_destroy)>;

int fail(sgti_run *run, sgti_status status) {
  std::fprintf(stderr, "error: %s\n", sgti_last_error(run));
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"scene graph to image pipeline"};
  app.require_subcommand(1);

  Shared shared;
  std::string resume;
  sgti_sample_options sample;
  sgti_sample_defaults(&sample);
  std::string graph;
  bool gt_layout = false;
  bool fault = false;
  std::string data_dir;

  struct Command {
    CLI::App *app;
    std::vector<std::string> step_keys;
  };
  std::vector<Command> commands;
  auto add = [&](const char *name, const char *help,
                 std::vector<std::string> step_keys) {
    auto *c = app.add_subcommand(name, help);
    add_shared(c, shared);
    commands.push_back({c, std::move(step_keys)});
    return c;
  };

  auto *vq = add("train-vqvae", "train the VQ autoencoder", {"vq.steps"});
  auto *sgt = add("train-sgt", "train the layout transformer", {"sgt.steps"});
  auto *imt = add("train-imt", "train the image transformer", {"imt.steps"});
  for (auto *c : {vq, sgt, imt})
    c->add_option("--resume", resume, "continue from this checkpoint");
  auto *smp = add("sample", "graph -> layout -> tokens -> images", {});
  smp->add_option("--graph", graph, "scene graph file")->required();
  smp->add_option("--temperature", sample.temperature, "sampling temperature")
      ->capture_default_str();
  smp->add_option("--top-k", sample.top_k, "top-k truncation")->capture_default_str();
  smp->add_option("--n", sample.n, "number of samples")->capture_default_str();
  smp->add_flag("--use-gt-layout", gt_layout, "take the boxes from the graph file");
  auto *ev = add("eval", "layout mIoU, teacher-forced accuracy, VQ PSNR", {});
  auto *abl = add("ablate", "SGT and image transformer variants",
                  {"sgt.steps", "imt.steps"});
  auto *gc = add("gradcheck", "finite-difference gradient suite", {});
  gc->add_flag("--inject-matmul-fault", fault, "corrupt the matmul adjoint");
  auto *exp = add("export-data", "write the configured dataset to disk", {});
  exp->add_option("--dir", data_dir, "dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  sgti_run *raw = nullptr;
  if (const auto st = sgti_run_create("desk", &raw); st != SGTI_OK)
    return fail(nullptr, st);
  RunPtr run(raw, sgti_run_destroy);

  const Command *active = nullptr;
  for (const auto &c : commands)
    if (c.app->parsed())
      active = &c;

  auto set = [&](const std::string &key, const std::string &value) {
    return sgti_run_set(run.get(), key.c_str(), value.c_str());
  };
  sgti_status st = SGTI_OK;
  if (!shared.config.empty())
    st = sgti_run_load_config(run.get(), shared.config.c_str());
  for (const auto &kv : shared.sets) {
    if (st != SGTI_OK)
      break;
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "error: --set expects key=value, got '%s'\n", kv.c_str());
      return 1;
    }
    st = set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (st == SGTI_OK && shared.seed)
    st = set("seed", std::to_string(*shared.seed));
  if (st == SGTI_OK && !shared.out.empty())
    st = set("out", shared.out);
  if (shared.steps)
    for (const auto &key : active->step_keys)
      if (st == SGTI_OK)
        st = set(key, std::to_string(*shared.steps));
  if (st != SGTI_OK)
    return fail(run.get(), st);

  const auto *cmd = active->app;
  const char *res = resume.empty() ? nullptr : resume.c_str();
  int32_t failures = 0;
  if (cmd == vq)
    st = sgti_train(run.get(), "vqvae", res);
  else if (cmd == sgt)
    st = sgti_train(run.get(), "sgt", res);
  else if (cmd == imt)
    st = sgti_train(run.get(), "imt", res);
  else if (cmd == smp) {
    sample.graph_path = graph.c_str();
    sample.use_gt_layout = gt_layout ? 1 : 0;
    st = sgti_sample(run.get(), &sample);
  } else if (cmd == ev)
    st = sgti_eval(run.get());
  else if (cmd == abl)
    st = sgti_ablate(run.get());
  else if (cmd == gc)
    st = sgti_gradcheck(run.get(), fault ? 1 : 0, &failures);
  else if (cmd == exp)
    st = sgti_export_data(run.get(), data_dir.c_str());
  if (st != SGTI_OK)
    return fail(run.get(), st);
  std::fputs(sgti_report(run.get()), stdout);
  // 2 + number of failed checks, so a failing suite never reads as success
  // or as a validation error
  if (failures > 0)
    return 2 + std::min<int32_t>(failures, 120);
  return 0;
}
