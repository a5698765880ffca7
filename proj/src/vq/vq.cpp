#include "vq/vq.hpp"

#include "core/error.hpp"
#include "tensor/ops.hpp"

#include <algorithm>
#include <limits>
#include <string>

namespace sgti {

int VqConfig::stages() const {
  int s = 0;
  for (int v = f; v > 1; v >>= 1)
    ++s;
  return s;
}

void VqConfig::validate() const {
  if (f < 2 || (f & (f - 1)) != 0)
    throw ValidationError("vq: f must be a power of two >= 2, got " +
                          std::to_string(f));
  if (static_cast<int>(widths.size()) != stages() + 1)
    throw ValidationError("vq: expected " + std::to_string(stages() + 1) +
                          " stage widths for f=" + std::to_string(f));
  for (int w : widths)
    if (w < 1)
      throw ValidationError("vq: stage widths must be positive");
  if (image_size < f || image_size % f != 0)
    throw ValidationError("vq: image size " + std::to_string(image_size) +
                          " is not divisible by f=" + std::to_string(f));
  if (codebook_size < 2 || latent_dim < 1)
    throw ValidationError("vq: need K >= 2 and n_z >= 1");
  if (beta < 0 || restart_after < 1)
    throw ValidationError("vq: need beta >= 0 and restart_after >= 1");
}

VqModel::VqModel(const VqConfig &cfg, std::uint64_t seed) : config(cfg) {
  config.validate();
  nn::Init init(seed);
  const auto &w = config.widths;
  const int s = config.stages();
  const int top = w[s];
  enc_in = nn::Conv2d(params, "vq.enc_in", 3, w[0], 3, 1, 1, init);
  for (int i = 0; i < s; ++i)
    enc_down.emplace_back(params, "vq.enc_down" + std::to_string(i), w[i],
                          w[i + 1], 3, 2, 1, init);
  enc_res.a = nn::Conv2d(params, "vq.enc_res.a", top, top, 3, 1, 1, init);
  enc_res.b = nn::Conv2d(params, "vq.enc_res.b", top, top, 3, 1, 1, init);
  enc_out = nn::Conv2d(params, "vq.enc_out", top, config.latent_dim, 1, 1, 0,
                       init);
  dec_in = nn::Conv2d(params, "vq.dec_in", config.latent_dim, top, 1, 1, 0,
                      init);
  dec_res.a = nn::Conv2d(params, "vq.dec_res.a", top, top, 3, 1, 1, init);
  dec_res.b = nn::Conv2d(params, "vq.dec_res.b", top, top, 3, 1, 1, init);
  for (int i = s; i > 0; --i)
    dec_up.emplace_back(params, "vq.dec_up" + std::to_string(i - 1), w[i],
                        w[i - 1], 3, 1, 1, init);
  dec_out = nn::Conv2d(params, "vq.dec_out", w[0], 3, 3, 1, 1, init);
  const float bound = 1.0f / static_cast<float>(config.codebook_size);
  codebook = params.add(
      "vq.codebook",
      init.uniform({config.codebook_size, config.latent_dim}, bound));
}

namespace {

Tensor residual(const ResBlock &blk, const Tensor &x) {
  return ops::gelu(ops::add(x, blk.b(ops::gelu(blk.a(x)))));
}

} // namespace

Tensor encode(const VqModel &model, const Tensor &images) {
  const auto &cfg = model.config;
  if (images.rank() != 4 || images.dim(1) != 3)
    throw ShapeError("encode: expected [B,3,H,W], got " +
                     shape_str(images.shape()));
  if (images.dim(2) % cfg.f != 0 || images.dim(3) % cfg.f != 0)
    throw ValidationError("encode: image " + std::to_string(images.dim(2)) +
                          "x" + std::to_string(images.dim(3)) +
                          " is not divisible by f=" + std::to_string(cfg.f));
  auto h = ops::gelu(model.enc_in(images));
  for (const auto &conv : model.enc_down)
    h = ops::gelu(conv(h));
  h = residual(model.enc_res, h);
  return model.enc_out(h);
}

Tensor decode(const VqModel &model, const Tensor &latent) {
  if (latent.rank() != 4 || latent.dim(1) != model.config.latent_dim)
    throw ShapeError("decode: expected [B," +
                     std::to_string(model.config.latent_dim) +
                     ",h,w], got " + shape_str(latent.shape()));
  auto h = ops::gelu(model.dec_in(latent));
  h = residual(model.dec_res, h);
  for (const auto &conv : model.dec_up)
    h = ops::gelu(conv(ops::upsample_nearest2x(h)));
  return ops::tanh(model.dec_out(h));
}

Tensor decode_indices(const VqModel &model,
                      const std::vector<std::int64_t> &indices,
                      std::int64_t batch, std::int64_t h, std::int64_t w) {
  if (static_cast<std::int64_t>(indices.size()) != batch * h * w)
    throw ValidationError("decode: " + std::to_string(indices.size()) +
                          " indices for a " + std::to_string(batch) + "x" +
                          std::to_string(h) + "x" + std::to_string(w) +
                          " grid");
  for (auto i : indices)
    if (i < 0 || i >= model.config.codebook_size)
      throw ValidationError("decode: index " + std::to_string(i) +
                            " outside codebook of size " +
                            std::to_string(model.config.codebook_size));
  const auto rows = ops::embedding(model.codebook, indices);
  return decode(model, ops::rows_to_nchw(rows, batch, h, w));
}

Quantized quantize(const Tensor &z_rows, const Tensor &codebook) {
  if (z_rows.rank() != 2 || codebook.rank() != 2 ||
      z_rows.dim(1) != codebook.dim(1))
    throw ShapeError("quantize: incompatible shapes " +
                     shape_str(z_rows.shape()) + " and " +
                     shape_str(codebook.shape()));
  const auto n = z_rows.dim(0), k = codebook.dim(0), d = z_rows.dim(1);
  const float *z = z_rows.data().data();
  const float *c = codebook.data().data();
  Quantized q;
  q.indices.resize(n);
  for (std::int64_t r = 0; r < n; ++r) {
    double best = std::numeric_limits<double>::infinity();
    std::int64_t arg = 0;
    for (std::int64_t j = 0; j < k; ++j) {
      double dist = 0.0;
      for (std::int64_t t = 0; t < d; ++t) {
        const double diff = static_cast<double>(z[r * d + t]) - c[j * d + t];
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        arg = j;
      }
    }
    q.indices[r] = arg;
  }
  q.zq = ops::embedding(codebook, q.indices);
  return q;
}

VqLoss vq_loss(const VqModel &model, const Tensor &images) {
  VqLoss out;
  const auto z = encode(model, images);
  const auto b = z.dim(0), h = z.dim(2), w = z.dim(3);
  out.z = ops::nchw_to_rows(z);
  auto q = quantize(out.z, model.codebook);
  out.indices = std::move(q.indices);
  out.codebook = ops::mean(ops::square(ops::sub(ops::detach(out.z), q.zq)));
  out.commitment = ops::scale(
      ops::mean(ops::square(ops::sub(out.z, ops::detach(q.zq)))),
      static_cast<float>(model.config.beta));
  const auto st = ops::straight_through(out.z, q.zq);
  out.recon = decode(model, ops::rows_to_nchw(st, b, h, w));
  const auto err = ops::sub(images, out.recon);
  out.reconstruction =
      ops::add(ops::mean(ops::abs(err)), ops::mean(ops::square(err)));
  out.total =
      ops::add(ops::add(out.reconstruction, out.codebook), out.commitment);
  return out;
}

void CodebookMonitor::record(const std::vector<std::int64_t> &indices) {
  for (auto i : indices)
    ++usage_.at(i);
}

std::vector<int> CodebookMonitor::end_epoch(VqModel &model, const Tensor &z_rows,
                                            std::mt19937_64 &rng) {
  last_ = usage_;
  std::vector<int> reset;
  const auto d = model.config.latent_dim;
  for (std::size_t k = 0; k < usage_.size(); ++k) {
    idle_[k] = usage_[k] > 0 ? 0 : idle_[k] + 1;
    if (idle_[k] >= model.config.restart_after && z_rows.dim(0) > 0) {
      const auto src = static_cast<std::int64_t>(rng() % z_rows.dim(0));
      auto cb = model.codebook.mutable_data();
      std::copy_n(z_rows.data().begin() + src * d, d, cb.begin() + k * d);
      idle_[k] = 0;
      reset.push_back(static_cast<int>(k));
    }
  }
  std::fill(usage_.begin(), usage_.end(), 0);
  return reset;
}

void CodebookMonitor::restore(std::vector<std::int64_t> usage,
                              std::vector<int> idle) {
  if (usage.size() != usage_.size() || idle.size() != idle_.size())
    throw ValidationError("codebook monitor: state has the wrong size");
  usage_ = std::move(usage);
  idle_ = std::move(idle);
}

Tensor images_to_tensor(const std::vector<Image> &images) {
  if (images.empty())
    throw ValidationError("no images");
  const int h = images.front().height, w = images.front().width;
  const auto b = static_cast<std::int64_t>(images.size());
  std::vector<float> v(b * 3 * h * w);
  for (std::int64_t i = 0; i < b; ++i) {
    const auto &img = images[i];
    if (img.height != h || img.width != w)
      throw ValidationError("images differ in size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          v[((i * 3 + c) * h + y) * w + x] = img.at(y, x, c);
  }
  return Tensor::from({b, 3, h, w}, std::move(v));
}

Image tensor_to_image(const Tensor &batch, std::int64_t index) {
  if (batch.rank() != 4 || batch.dim(1) != 3 || index >= batch.dim(0))
    throw ShapeError("tensor_to_image: bad batch " + shape_str(batch.shape()));
  const int h = static_cast<int>(batch.dim(2)), w = static_cast<int>(batch.dim(3));
  Image img{h, w, std::vector<float>(h * w * 3)};
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(y, x, c) = batch.data()[((index * 3 + c) * h + y) * w + x];
  return img;
}

} // namespace sgti
