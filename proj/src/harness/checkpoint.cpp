#include "harness/checkpoint.hpp"

#include "core/error.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace sgti {

namespace {

class Writer {
public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i)
      u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i)
      u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const std::string &s) { out_ += s; }
  void text(const std::string &s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s);
  }
  std::string take() { return std::move(out_); }

private:
  std::string out_;
};

class Reader {
public:
  explicit Reader(const std::string &in) : in_(in) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(in_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= std::uint32_t(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= std::uint64_t(static_cast<std::uint8_t>(in_[pos_++])) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string text() { return bytes(u32()); }
  bool done() const { return pos_ == in_.size(); }
  std::size_t offset() const { return pos_; }

private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n)
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_) +
                        " (need " + std::to_string(n) + " more, file has " +
                        std::to_string(in_.size()) + ")");
  }
  const std::string &in_;
  std::size_t pos_ = 0;
};

} // namespace

const NamedTensor *Checkpoint::find(const std::string &name) const {
  for (const auto &t : tensors)
    if (t.name == name)
      return &t;
  return nullptr;
}

const NamedTensor &Checkpoint::get(const std::string &name) const {
  const auto *t = find(name);
  if (!t)
    throw FormatError("checkpoint has no tensor '" + name + "'");
  return *t;
}

std::string serialize_checkpoint(const Checkpoint &ckpt) {
  Writer w;
  w.bytes("SGTI");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto &t : ckpt.tensors) {
    if (shape_numel(t.shape) != static_cast<std::int64_t>(t.values.size()))
      throw ShapeError("checkpoint tensor '" + t.name + "' has " +
                       std::to_string(t.values.size()) + " values for shape " +
                       shape_str(t.shape));
    w.text(t.name);
    w.u8(kDtypeF32);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape)
      w.u64(static_cast<std::uint64_t>(d));
    for (float v : t.values)
      w.u32(std::bit_cast<std::uint32_t>(v));
  }
  w.text(ckpt.config);
  w.text(ckpt.rng);
  w.u64(static_cast<std::uint64_t>(ckpt.step));
  return w.take();
}

Checkpoint parse_checkpoint(const std::string &bytes) {
  Reader r(bytes);
  if (bytes.size() < 4 || bytes.compare(0, 4, "SGTI") != 0)
    throw FormatError("not a checkpoint (bad magic)");
  r.bytes(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint version " + std::to_string(version) +
                      " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  Checkpoint c;
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.text();
    const auto dtype = r.u8();
    if (dtype != kDtypeF32)
      throw FormatError("tensor '" + t.name + "': unknown dtype tag " +
                        std::to_string(dtype));
    const auto rank = r.u32();
    if (rank > 8)
      throw FormatError("tensor '" + t.name + "': rank " +
                        std::to_string(rank) + " too large");
    std::uint64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.u64();
      if (d > (std::uint64_t(1) << 40) || (d && n > (std::uint64_t(1) << 40) / d))
        throw FormatError("tensor '" + t.name + "': dimensions too large");
      n *= d;
      t.shape.push_back(static_cast<std::int64_t>(d));
    }
    if (bytes.size() - r.offset() < 4 * n)
      r.bytes(4 * n); // throws the truncation error
    t.values.resize(n);
    for (auto &v : t.values)
      v = std::bit_cast<float>(r.u32());
    c.tensors.push_back(std::move(t));
  }
  c.config = r.text();
  c.rng = r.text();
  c.step = static_cast<std::int64_t>(r.u64());
  if (!r.done())
    throw FormatError("checkpoint has " +
                      std::to_string(bytes.size() - r.offset()) +
                      " trailing bytes");
  return c;
}

void save_checkpoint(const std::string &path, const Checkpoint &ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  const auto tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw ValidationError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out)
      throw ValidationError("short write to " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw ValidationError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_checkpoint(ss.str());
  } catch (const FormatError &e) {
    throw FormatError(path + ": " + e.what());
  }
}

void put_params(Checkpoint &ckpt, const nn::Params &params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto &t = params.tensors()[i];
    ckpt.tensors.push_back(
        {params.names()[i], t.shape(), {t.data().begin(), t.data().end()}});
  }
}

void get_params(const Checkpoint &ckpt, nn::Params &params) {
  // validate everything before touching the model
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto &t = ckpt.get(params.names()[i]);
    if (t.shape != params.tensors()[i].shape())
      throw FormatError("tensor '" + t.name + "' has shape " +
                        shape_str(t.shape) + ", model expects " +
                        shape_str(params.tensors()[i].shape()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto &t = ckpt.get(params.names()[i]);
    std::copy(t.values.begin(), t.values.end(),
              params.tensors()[i].mutable_data().begin());
  }
}

void put_optimizer(Checkpoint &ckpt, const nn::Params &params,
                   const OptimizerState &state) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto &shape = params.tensors()[i].shape();
    ckpt.tensors.push_back(
        {"adam.m." + params.names()[i], shape, state.first_moment[i]});
    ckpt.tensors.push_back(
        {"adam.v." + params.names()[i], shape, state.second_moment[i]});
  }
  ckpt.tensors.push_back(
      {"adam.step", {1}, {static_cast<float>(state.step)}});
}

void get_optimizer(const Checkpoint &ckpt, const nn::Params &params,
                   OptimizerState &state) {
  auto next = OptimizerState::for_params(params.tensors(), state.config);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto &m = ckpt.get("adam.m." + params.names()[i]);
    const auto &v = ckpt.get("adam.v." + params.names()[i]);
    if (m.values.size() != next.first_moment[i].size() ||
        v.values.size() != next.second_moment[i].size())
      throw FormatError("optimizer moments for '" + params.names()[i] +
                        "' do not match the model");
    next.first_moment[i] = m.values;
    next.second_moment[i] = v.values;
  }
  const auto &s = ckpt.get("adam.step");
  if (s.values.size() != 1 || s.values[0] < 0)
    throw FormatError("bad adam.step");
  next.step = static_cast<std::int64_t>(s.values[0]);
  state = std::move(next);
}

std::string rng_text(const std::mt19937_64 &rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

std::mt19937_64 rng_from_text(const std::string &text) {
  std::mt19937_64 rng;
  std::istringstream in(text);
  in >> rng;
  if (!in)
    throw FormatError("bad rng state in checkpoint");
  return rng;
}

} // namespace sgti
