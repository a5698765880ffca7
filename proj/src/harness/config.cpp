#include "harness/config.hpp"

#include "core/error.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace sgti {

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T> T parse_number(const std::string &key, const std::string &v) {
  T out{};
  const auto *end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || ptr != end)
    throw ValidationError("bad value '" + v + "' for " + key);
  return out;
}

bool parse_bool(const std::string &key, const std::string &v) {
  if (v == "true" || v == "1" || v == "on")
    return true;
  if (v == "false" || v == "0" || v == "off")
    return false;
  throw ValidationError("bad value '" + v + "' for " + key +
                        " (expected true or false)");
}

std::vector<int> parse_int_list(const std::string &key, const std::string &v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ','))
    out.push_back(parse_number<int>(key, trim(part)));
  if (out.empty())
    throw ValidationError("empty list for " + key);
  return out;
}

template <class T> std::string format(const T &v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, std::vector<int>>) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  } else {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
  }
}

template <class T> T parse_value(const std::string &key, const std::string &v) {
  if constexpr (std::is_same_v<T, bool>)
    return parse_bool(key, v);
  else if constexpr (std::is_same_v<T, std::string>)
    return v;
  else if constexpr (std::is_same_v<T, std::vector<int>>)
    return parse_int_list(key, v);
  else
    return parse_number<T>(key, v);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig &)> get;
  std::function<void(RunConfig &, const std::string &)> set;
};

template <class Access> Field field(std::string key, Access access) {
  using T = std::remove_cvref_t<decltype(access(std::declval<RunConfig &>()))>;
  return {key,
          [access](const RunConfig &c) {
            return format(access(const_cast<RunConfig &>(c)));
          },
          [access, key](RunConfig &c, const std::string &v) {
            access(c) = parse_value<T>(key, v);
          }};
}

#define SGTI_FIELD(key, member)                                                \
  field(key, [](RunConfig &c) -> auto & { return c.member; })

const std::vector<Field> &fields() {
  static const std::vector<Field> table = {
      SGTI_FIELD("seed", seed),
      SGTI_FIELD("out", out),
      SGTI_FIELD("batch", batch),
      SGTI_FIELD("checkpoint_every", checkpoint_every),
      SGTI_FIELD("data.count", data_count),
      SGTI_FIELD("data.seed", data_seed),
      SGTI_FIELD("data.manifest", data_manifest),
      SGTI_FIELD("data.image_size", data.image_size),
      SGTI_FIELD("data.min_objects", data.min_objects),
      SGTI_FIELD("data.max_objects", data.max_objects),
      SGTI_FIELD("data.min_size", data.min_size),
      SGTI_FIELD("data.max_size", data.max_size),
      SGTI_FIELD("data.grid", data.grid),
      SGTI_FIELD("vq.f", vq.f),
      SGTI_FIELD("vq.widths", vq.widths),
      SGTI_FIELD("vq.codebook_size", vq.codebook_size),
      SGTI_FIELD("vq.latent_dim", vq.latent_dim),
      SGTI_FIELD("vq.beta", vq.beta),
      SGTI_FIELD("vq.restart_after", vq.restart_after),
      SGTI_FIELD("vq.steps", vq_train.steps),
      SGTI_FIELD("vq.lr", vq_train.lr),
      SGTI_FIELD("sgt.layers", sgt.num_layers),
      SGTI_FIELD("sgt.heads", sgt.num_heads),
      SGTI_FIELD("sgt.embed_dim", sgt.embed_dim),
      SGTI_FIELD("sgt.edge_dim", sgt.edge_dim),
      SGTI_FIELD("sgt.lap_pe_width", sgt.lap_pe_width),
      SGTI_FIELD("sgt.use_edges", sgt.use_edges),
      SGTI_FIELD("sgt.use_pe", sgt.use_pe),
      SGTI_FIELD("sgt.self_attend", sgt.self_attend),
      SGTI_FIELD("sgt.sign_flip", sgt_sign_flip),
      SGTI_FIELD("sgt.steps", sgt_train.steps),
      SGTI_FIELD("sgt.lr", sgt_train.lr),
      SGTI_FIELD("imt.layers", imt.num_layers),
      SGTI_FIELD("imt.heads", imt.num_heads),
      SGTI_FIELD("imt.embed_dim", imt.embed_dim),
      SGTI_FIELD("imt.kernel", imt.kernel),
      SGTI_FIELD("imt.mlp_ratio", imt.mlp_ratio),
      SGTI_FIELD("imt.positions", imt.vocab.positions),
      SGTI_FIELD("imt.cross_attention", imt.cross_attention),
      SGTI_FIELD("imt.steps", imt_train.steps),
      SGTI_FIELD("imt.lr", imt_train.lr),
      SGTI_FIELD("imt.vq_checkpoint", imt_vq_checkpoint),
      SGTI_FIELD("imt.sgt_checkpoint", imt_sgt_checkpoint),
      SGTI_FIELD("optim.beta1", adam.beta1),
      SGTI_FIELD("optim.beta2", adam.beta2),
      SGTI_FIELD("optim.eps", adam.eps),
      SGTI_FIELD("optim.pct_warmup", pct_warmup),
      SGTI_FIELD("optim.div_factor", div_factor),
      SGTI_FIELD("optim.final_div_factor", final_div_factor),
  };
  return table;
}

#undef SGTI_FIELD

} // namespace

void RunConfig::finalize() {
  if (batch < 1)
    throw ValidationError("batch must be >= 1");
  if (data_count < 1)
    throw ValidationError("data.count must be >= 1");
  if (checkpoint_every < 0)
    throw ValidationError("checkpoint_every must be >= 0");
  if (out.empty())
    throw ValidationError("out must not be empty");
  data.validate();
  vq.image_size = data.image_size;
  vq.validate();
  sgt.num_categories = kNumClasses;
  sgt.num_predicates = kNumPredicates;
  sgt.validate();
  imt.vocab.codes = vq.codebook_size;
  imt.vocab.classes = kNumClasses;
  imt.capacity = data.max_objects;
  imt.grid_h = imt.grid_w = vq.grid();
  imt.memory_dim = sgt.embed_dim;
  imt.validate();
  for (const auto *s : {&vq_train, &sgt_train, &imt_train})
    schedule(*s).validate();
}

LrSchedule RunConfig::schedule(const StageSchedule &stage) const {
  LrSchedule s;
  s.max_lr = stage.lr;
  s.total_steps = stage.steps;
  s.pct_warmup = pct_warmup;
  s.div_factor = div_factor;
  s.final_div_factor = final_div_factor;
  return s;
}

std::string RunConfig::vq_checkpoint() const {
  return imt_vq_checkpoint.empty() ? out + "/vqvae.ckpt" : imt_vq_checkpoint;
}

std::string RunConfig::sgt_checkpoint() const {
  return imt_sgt_checkpoint.empty() ? out + "/sgt.ckpt" : imt_sgt_checkpoint;
}

RunConfig preset_config(const std::string &name) {
  RunConfig c;
  c.preset = name;
  if (name == "desk") {
    c.out = "runs/desk";
  } else if (name == "overfit") {
    c.out = "runs/overfit";
  } else if (name == "tiny") {
    c.out = "runs/tiny";
    c.data_count = 4;
    c.batch = 4;
    c.vq.widths = {4, 8, 8, 8};
    c.vq.codebook_size = 16;
    c.vq.latent_dim = 8;
    c.vq_train = {20, 4e-3};
    c.sgt.num_layers = 1;
    c.sgt.embed_dim = 16;
    c.sgt.edge_dim = 16;
    c.sgt_train = {20, 3e-3};
    c.imt.num_layers = 1;
    c.imt.num_heads = 2;
    c.imt.embed_dim = 16;
    c.imt_train = {20, 1e-3};
  } else if (name == "paper") {
    // 128x128 images, K=8192, n_z=256, f=8; SGT 12x12x768; ImT 40 layers,
    // 1408 wide, 16 heads; lr 1e-4; 300 epochs of 1024 scenes at batch 16
    c.out = "runs/paper";
    c.data.image_size = 128;
    c.data_count = 1024;
    c.vq.widths = {128, 128, 256, 256};
    c.vq.codebook_size = 8192;
    c.vq.latent_dim = 256;
    c.sgt.num_layers = 12;
    c.sgt.num_heads = 12;
    c.sgt.embed_dim = 768;
    c.sgt.edge_dim = 768;
    c.imt.num_layers = 40;
    c.imt.num_heads = 16;
    c.imt.embed_dim = 1408;
    c.imt.kernel = 7;
    const std::int64_t steps = 300 * ((c.data_count + c.batch - 1) / c.batch);
    c.vq_train = c.sgt_train = c.imt_train = {steps, 1e-4};
  } else {
    throw ValidationError("unknown preset '" + name +
                          "' (expected desk, overfit, tiny or paper)");
  }
  return c;
}

void set_config_value(RunConfig &cfg, const std::string &key,
                      const std::string &value) {
  for (const auto &f : fields())
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  throw ValidationError("unknown config key '" + key + "'");
}

RunConfig parse_config(const std::string &text, const std::string &origin) {
  struct Line {
    int number;
    std::string key, value;
  };
  std::vector<Line> lines;
  std::string preset = "desk";
  std::stringstream ss(text);
  std::string raw;
  int number = 0;
  while (std::getline(ss, raw)) {
    ++number;
    const auto hash = raw.find('#');
    const auto line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    const auto where = origin + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos)
      throw ValidationError(where + "expected 'key = value'");
    Line l{number, trim(line.substr(0, eq)), trim(line.substr(eq + 1))};
    if (l.key.empty())
      throw ValidationError(where + "missing key");
    if (l.key == "preset")
      preset = l.value;
    else
      lines.push_back(std::move(l));
  }
  RunConfig cfg;
  try {
    cfg = preset_config(preset);
  } catch (const ValidationError &e) {
    throw ValidationError(origin + ": " + e.what());
  }
  for (const auto &l : lines) {
    try {
      set_config_value(cfg, l.key, l.value);
    } catch (const ValidationError &e) {
      throw ValidationError(origin + ":" + std::to_string(l.number) + ": " +
                            e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

std::string config_text(const RunConfig &cfg) {
  std::string out = "preset = " + cfg.preset + "\n";
  for (const auto &f : fields())
    out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

} // namespace sgti
