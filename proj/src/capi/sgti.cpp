#include "sgti/sgti.h"

#include "core/error.hpp"
#include "harness/commands.hpp"
#include "harness/gradcheck_suite.hpp"

#include <string>

struct sgti_run {
  sgti::RunConfig config;
  std::string config_text;
  std::string report;
  std::string error;
};

namespace {

thread_local std::string g_create_error;

template <class F> sgti_status guarded(sgti_run *run, F &&f) {
  if (!run)
    return SGTI_VALIDATION_ERROR;
  try {
    f();
    run->error.clear();
    return SGTI_OK;
  } catch (const sgti::ValidationError &e) {
    run->error = e.what();
    return SGTI_VALIDATION_ERROR;
  } catch (const std::exception &e) {
    run->error = e.what();
    return SGTI_INTERNAL_ERROR;
  } catch (...) {
    run->error = "unknown failure";
    return SGTI_INTERNAL_ERROR;
  }
}

std::string str(const char *s) { return s ? s : ""; }

} // namespace

extern "C" {

sgti_status sgti_run_create(const char *preset, sgti_run **out) {
  if (!out)
    return SGTI_VALIDATION_ERROR;
  *out = nullptr;
  try {
    auto run = new sgti_run;
    try {
      run->config = sgti::preset_config(preset ? preset : "desk");
    } catch (...) {
      delete run;
      throw;
    }
    *out = run;
    return SGTI_OK;
  } catch (const sgti::ValidationError &e) {
    g_create_error = e.what();
    return SGTI_VALIDATION_ERROR;
  } catch (const std::exception &e) {
    g_create_error = e.what();
    return SGTI_INTERNAL_ERROR;
  }
}

void sgti_run_destroy(sgti_run *run) { delete run; }

sgti_status sgti_run_load_config(sgti_run *run, const char *path) {
  return guarded(run, [&] { run->config = sgti::load_config(str(path)); });
}

sgti_status sgti_run_set(sgti_run *run, const char *key, const char *value) {
  return guarded(run, [&] {
    if (str(key) == "preset") {
      run->config = sgti::preset_config(str(value));
      return;
    }
    sgti::set_config_value(run->config, str(key), str(value));
  });
}

const char *sgti_run_config(sgti_run *run) {
  if (!run)
    return "";
  run->config_text = sgti::config_text(run->config);
  return run->config_text.c_str();
}

sgti_status sgti_train(sgti_run *run, const char *stage, const char *resume) {
  return guarded(run, [&] {
    sgti::TrainOptions options{str(resume)};
    const auto s = str(stage);
    sgti::TrainReport r;
    if (s == "vqvae")
      r = sgti::train_vqvae(run->config, options);
    else if (s == "sgt")
      r = sgti::train_sgt(run->config, options);
    else if (s == "imt")
      r = sgti::train_imt(run->config, options);
    else
      throw sgti::ValidationError("unknown stage '" + s +
                                  "' (expected vqvae, sgt or imt)");
    run->report = r.summary + "log " + r.log + "\ncheckpoint " + r.checkpoint + "\n";
  });
}

void sgti_sample_defaults(sgti_sample_options *options) {
  if (!options)
    return;
  const sgti::SampleRequest d;
  options->graph_path = nullptr;
  options->temperature = d.temperature;
  options->top_k = d.top_k;
  options->n = d.n;
  options->use_gt_layout = 0;
}

sgti_status sgti_sample(sgti_run *run, const sgti_sample_options *options) {
  return guarded(run, [&] {
    if (!options)
      throw sgti::ValidationError("sample: no options");
    sgti::SampleRequest req;
    req.graph_path = str(options->graph_path);
    req.temperature = options->temperature;
    req.top_k = options->top_k;
    req.n = options->n;
    req.use_gt_layout = options->use_gt_layout != 0;
    const auto r = sgti::sample_cmd(run->config, req);
    run->report = sgti::layout_text(r.layout);
    for (const auto &f : r.files)
      run->report += "wrote " + f + "\n";
  });
}

sgti_status sgti_eval(sgti_run *run) {
  return guarded(run, [&] { run->report = sgti::eval_cmd(run->config).text; });
}

sgti_status sgti_ablate(sgti_run *run) {
  return guarded(run, [&] { run->report = sgti::ablate_cmd(run->config).table; });
}

sgti_status sgti_gradcheck(sgti_run *run, int inject_matmul_fault,
                           int32_t *failures) {
  return guarded(run, [&] {
    const auto r = sgti::run_gradcheck_suite(inject_matmul_fault != 0);
    run->report = r.text;
    if (failures)
      *failures = r.failures;
  });
}

sgti_status sgti_export_data(sgti_run *run, const char *dir) {
  return guarded(run, [&] {
    auto cfg = run->config;
    cfg.finalize();
    const auto path = sgti::write_dataset(str(dir), sgti::load_scenes(cfg));
    run->report = "wrote " + path + "\n";
  });
}

const char *sgti_report(const sgti_run *run) {
  return run ? run->report.c_str() : "";
}

const char *sgti_last_error(const sgti_run *run) {
  return run ? run->error.c_str() : g_create_error.c_str();
}

} // extern "C"
