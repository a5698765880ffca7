#include "harness/gradcheck_suite.hpp"

#include "imt/imt.hpp"
#include "sgt/diou.hpp"
#include "sgt/sgt.hpp"
#include "tensor/gradcheck.hpp"
#include "tensor/ops.hpp"
#include "vq/vq.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

namespace sgti {

namespace {

float uniform(std::mt19937_64 &rng, float lo, float hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return static_cast<float>(lo + (hi - lo) * u);
}

Tensor rand(Shape shape, std::mt19937_64 &rng, float lo = -1.0f,
            float hi = 1.0f) {
  std::vector<float> v(shape_numel(shape));
  for (auto &x : v)
    x = uniform(rng, lo, hi);
  return Tensor::from(std::move(shape), std::move(v), true);
}

// keeps relu/abs inputs clear of the kink at zero
Tensor rand_off_zero(Shape shape, std::mt19937_64 &rng) {
  auto t = rand(std::move(shape), rng);
  for (auto &x : t.mutable_data())
    x = x < 0 ? x - 0.05f : x + 0.05f;
  return t;
}

// corner coordinates at least 0.1 apart in each axis
Tensor rand_boxes(int n, std::mt19937_64 &rng, std::vector<Box> *as_boxes) {
  std::vector<float> v;
  for (int i = 0; i < 2 * n; ++i) {
    double c[4];
    for (int axis = 0; axis < 2; ++axis) {
      double a = 0, b = 0;
      do {
        a = uniform(rng, 0.0f, 1.0f);
        b = uniform(rng, 0.0f, 1.0f);
      } while (std::fabs(a - b) < 0.1);
      c[axis] = std::min(a, b);
      c[axis + 2] = std::max(a, b);
    }
    v.insert(v.end(), {float(c[0]), float(c[1]), float(c[2]), float(c[3])});
  }
  // the second half becomes the target set
  if (as_boxes)
    for (int i = n; i < 2 * n; ++i)
      as_boxes->push_back({v[4 * i], v[4 * i + 1], v[4 * i + 2], v[4 * i + 3]});
  v.resize(4 * n);
  return Tensor::from({n, 4}, std::move(v), true);
}

bool near_kink(std::span<const float> a, std::span<const float> b) {
  for (int axis = 0; axis < 2; ++axis) {
    const float xs[4] = {a[axis], a[axis + 2], b[axis], b[axis + 2]};
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        if (std::fabs(xs[i] - xs[j]) < 0.02f)
          return true;
  }
  return false;
}

struct Case {
  std::string name;
  // Builds inputs and the function for one trial.
  std::function<double(std::mt19937_64 &)> run;
};

Case op(std::string name, std::function<std::vector<Tensor>(std::mt19937_64 &)> make,
        TensorFn fn) {
  return {std::move(name), [make, fn](std::mt19937_64 &rng) {
            return grad_check(fn, make(rng));
          }};
}

std::function<std::vector<Tensor>(std::mt19937_64 &)> shapes(std::vector<Shape> s) {
  return [s](std::mt19937_64 &rng) {
    std::vector<Tensor> out;
    for (const auto &sh : s)
      out.push_back(rand(sh, rng));
    return out;
  };
}

std::vector<Case> cases() {
  RowLists lists;
  lists.push_row(std::vector<std::int64_t>{0, 2});
  lists.push_row(std::vector<std::int64_t>{});
  lists.push_row(std::vector<std::int64_t>{1, 1, 3});
  RowLists attend;
  attend.push_row(std::vector<std::int64_t>{0});
  attend.push_row(std::vector<std::int64_t>{0, 1});
  attend.push_row(std::vector<std::int64_t>{1, 2});
  attend.push_row(std::vector<std::int64_t>{});
  const std::vector<std::int64_t> ids{2, 0, 2, 1};
  const std::vector<std::int64_t> targets{1, 0, 3};
  const std::vector<std::int64_t> offsets{0, 2, 3, 6};
  const std::vector<std::uint8_t> mask{0, 1, 0, 0};
  using In = const std::vector<Tensor> &;

  std::vector<Case> c{
      op("matmul", shapes({{3, 4}, {4, 2}}),
         [](In in) { return ops::matmul(in[0], in[1]); }),
      op("add", shapes({{2, 3}, {2, 3}}),
         [](In in) { return ops::add(in[0], in[1]); }),
      op("sub", shapes({{2, 3}, {2, 3}}),
         [](In in) { return ops::sub(in[0], in[1]); }),
      op("mul", shapes({{2, 3}, {2, 3}}),
         [](In in) { return ops::mul(in[0], in[1]); }),
      op("scale", shapes({{2, 3}}), [](In in) { return ops::scale(in[0], -1.5f); }),
      op("add_bias", shapes({{3, 4}, {4}}),
         [](In in) { return ops::add_bias(in[0], in[1]); }),
      op("sum", shapes({{2, 3}}), [](In in) { return ops::sum(in[0]); }),
      op("mean", shapes({{2, 3}}), [](In in) { return ops::mean(in[0]); }),
      op("softmax", shapes({{3, 4}}), [](In in) { return ops::softmax(in[0]); }),
      op("log_softmax", shapes({{3, 4}}),
         [](In in) { return ops::log_softmax(in[0]); }),
      op("layer_norm", shapes({{3, 5}, {5}, {5}}),
         [](In in) { return ops::layer_norm(in[0], in[1], in[2]); }),
      op("gelu", shapes({{2, 4}}), [](In in) { return ops::gelu(in[0]); }),
      op("relu",
         [](std::mt19937_64 &r) { return std::vector{rand_off_zero({2, 4}, r)}; },
         [](In in) { return ops::relu(in[0]); }),
      op("sigmoid", shapes({{2, 4}}), [](In in) { return ops::sigmoid(in[0]); }),
      op("tanh", shapes({{2, 4}}), [](In in) { return ops::tanh(in[0]); }),
      op("abs",
         [](std::mt19937_64 &r) { return std::vector{rand_off_zero({2, 4}, r)}; },
         [](In in) { return ops::abs(in[0]); }),
      op("square", shapes({{2, 4}}), [](In in) { return ops::square(in[0]); }),
      op("embedding", shapes({{3, 4}}),
         [ids](In in) { return ops::embedding(in[0], ids); }),
      op("sum_rows", shapes({{4, 3}}),
         [lists](In in) { return ops::sum_rows(in[0], lists); }),
      op("reshape", shapes({{2, 6}}),
         [](In in) { return ops::reshape(in[0], {3, 4}); }),
      op("transpose", shapes({{2, 5}}),
         [](In in) { return ops::transpose(in[0]); }),
      op("concat_rows", shapes({{2, 3}, {1, 3}}),
         [](In in) { return ops::concat_rows({in[0], in[1]}); }),
      op("concat_cols", shapes({{2, 3}, {2, 1}}),
         [](In in) { return ops::concat_cols(in[0], in[1]); }),
      op("slice_cols", shapes({{3, 5}}),
         [](In in) { return ops::slice_cols(in[0], 1, 3); }),
      op("masked_fill", shapes({{2, 4}}),
         [mask](In in) { return ops::masked_fill(in[0], mask, -3.0f); }),
      op("cross_entropy", shapes({{3, 4}}),
         [targets](In in) { return ops::cross_entropy(in[0], targets); }),
      op("conv2d", shapes({{2, 2, 5, 4}, {3, 2, 3, 3}, {3}}),
         [](In in) { return ops::conv2d(in[0], in[1], in[2], 2, 1); }),
      op("upsample_nearest2x", shapes({{1, 2, 2, 3}}),
         [](In in) { return ops::upsample_nearest2x(in[0]); }),
      op("nchw_to_rows", shapes({{2, 3, 2, 2}}),
         [](In in) { return ops::nchw_to_rows(in[0]); }),
      op("rows_to_nchw", shapes({{8, 3}}),
         [](In in) { return ops::rows_to_nchw(in[0], 2, 2, 2); }),
      op("head_sum", shapes({{3, 6}}), [](In in) { return ops::head_sum(in[0], 2); }),
      op("segment_softmax", shapes({{6, 2}}),
         [offsets](In in) { return ops::segment_softmax(in[0], offsets); }),
      op("segment_weighted_sum", shapes({{6, 2}, {6, 4}}),
         [offsets](In in) {
           return ops::segment_weighted_sum(in[0], in[1], offsets);
         }),
      op("sparse_attention", shapes({{4, 4}, {3, 4}, {3, 4}}),
         [attend](In in) {
           return ops::sparse_attention(in[0], in[1], in[2], 2, attend);
         }),
  };

  c.push_back({"straight_through (exact)", [](std::mt19937_64 &rng) {
                 auto z = rand({3, 2}, rng);
                 auto q = rand({3, 2}, rng);
                 auto w = rand({3, 2}, rng);
                 backward(ops::sum(ops::mul(ops::straight_through(z, q), w)));
                 double err = 0;
                 for (int i = 0; i < 6; ++i) {
                   err = std::max(err, double(std::fabs(z.grad()[i] - w.at(i))));
                   err = std::max(err, double(std::fabs(q.has_grad() ? q.grad()[i] : 0.0f)));
                 }
                 return err;
               }});
  c.push_back({"detach (exact)", [](std::mt19937_64 &rng) {
                 auto x = rand({2, 3}, rng);
                 backward(ops::sum(ops::mul(ops::detach(x), x)));
                 double err = 0;
                 for (int i = 0; i < 6; ++i)
                   err = std::max(err, double(std::fabs(x.grad()[i] - x.at(i))));
                 return err;
               }});

  c.push_back({"diou_rows", [](std::mt19937_64 &rng) {
                 Tensor pred, target;
                 do {
                   pred = rand_boxes(4, rng, nullptr);
                   target = rand_boxes(4, rng, nullptr);
                 } while ([&] {
                   for (int r = 0; r < 4; ++r)
                     if (near_kink(pred.data().subspan(4 * r, 4),
                                   target.data().subspan(4 * r, 4)))
                       return true;
                   return false;
                 }());
                 return grad_check(
                     [](In in) { return diou_rows(in[0], in[1]); },
                     {pred, target});
               }});
  c.push_back({"layout_loss", [](std::mt19937_64 &rng) {
                 std::vector<Box> gt_boxes;
                 Tensor boxes;
                 do {
                   gt_boxes.clear();
                   boxes = rand_boxes(3, rng, &gt_boxes);
                 } while ([&] {
                   for (int r = 0; r < 3; ++r) {
                     const auto &b = gt_boxes[r];
                     const float t[4] = {float(b.x1), float(b.y1), float(b.x2),
                                         float(b.y2)};
                     if (near_kink(boxes.data().subspan(4 * r, 4), t))
                       return true;
                   }
                   return false;
                 }());
                 Layout gt{{1, 4, 0}, gt_boxes};
                 auto logits = rand({3, 12}, rng);
                 return grad_check(
                     [gt](In in) { return layout_loss(in[0], in[1], gt).total; },
                     {boxes, logits});
               }});
  c.push_back({"nll_loss", [](std::mt19937_64 &rng) {
                 auto logits = rand({4, 7}, rng);
                 const std::vector<std::int64_t> t{0, 3, 4, 1};
                 return grad_check([t](In in) { return nll_loss(in[0], t, 5); },
                                   {logits});
               }});

  c.push_back({"sgt edge attention layer", [](std::mt19937_64 &rng) {
                 SgtConfig cfg;
                 cfg.num_layers = 1;
                 cfg.num_heads = 2;
                 cfg.embed_dim = 8;
                 cfg.edge_dim = 6;
                 cfg.lap_pe_width = 4;
                 SgtModel model(cfg, rng());
                 SceneGraph g;
                 g.nodes = {3, 5, 7};
                 g.edges = {{0, 1, 1}, {1, 2, 4}, {2, 0, 0}};
                 g.num_categories = 12;
                 g.num_predicates = 6;
                 const auto plan = build_attention_plan(g, true);
                 std::vector<Tensor> inputs{rand({3, 8}, rng), rand({3, 6}, rng)};
                 for (const auto &name : model.params.names())
                   if (name.rfind("sgt.layer0.", 0) == 0)
                     inputs.push_back(model.params.get(name));
                 return grad_check(
                     [&](In in) {
                       auto out = edge_attention_layer({in[0], in[1]}, plan,
                                                       model.layers[0], cfg);
                       return ops::concat_rows({ops::reshape(out.h, {24, 1}),
                                                ops::reshape(out.e, {18, 1})});
                     },
                     inputs);
               }});

  auto vq_cfg = [] {
    VqConfig c;
    c.image_size = 4;
    c.f = 2;
    c.widths = {2, 3};
    c.codebook_size = 4;
    c.latent_dim = 3;
    return c;
  };
  c.push_back({"vq encoder", [vq_cfg](std::mt19937_64 &rng) {
                 VqModel m(vq_cfg(), rng());
                 std::vector<Tensor> inputs{rand({1, 3, 4, 4}, rng)};
                 for (const auto &name : m.params.names())
                   if (name.rfind("vq.enc", 0) == 0)
                     inputs.push_back(m.params.get(name));
                 return grad_check([&](In in) { return encode(m, in[0]); }, inputs);
               }});
  c.push_back({"vq decoder", [vq_cfg](std::mt19937_64 &rng) {
                 VqModel m(vq_cfg(), rng());
                 std::vector<Tensor> inputs{rand({1, 3, 2, 2}, rng)};
                 for (const auto &name : m.params.names())
                   if (name.rfind("vq.dec", 0) == 0)
                     inputs.push_back(m.params.get(name));
                 return grad_check([&](In in) { return decode(m, in[0]); }, inputs);
               }});

  auto imt_cfg = [](bool cross) {
    ImtConfig c;
    c.vocab = {5, 2, 2};
    c.capacity = 1;
    c.grid_h = 2;
    c.grid_w = 2;
    c.num_layers = 1;
    c.num_heads = 2;
    c.embed_dim = 8;
    c.kernel = 3;
    c.mlp_ratio = 2;
    c.cross_attention = cross;
    c.memory_dim = 3;
    return c;
  };
  c.push_back({"imt block", [imt_cfg](std::mt19937_64 &rng) {
                 ImtModel m(imt_cfg(false), rng());
                 const auto &v = m.config.vocab;
                 std::vector<std::int64_t> seq{v.class_token(1),
                                               v.position_token(0, 1),
                                               v.position_token(1, 1), v.bos()};
                 for (int i = 0; i < 3; ++i)
                   seq.push_back(static_cast<std::int64_t>(rng() % 5));
                 return grad_check([&](In) { return imt_forward(m, seq, 1); },
                                   m.params.tensors());
               }});
  c.push_back({"imt cross-attention block", [imt_cfg](std::mt19937_64 &rng) {
                 ImtModel m(imt_cfg(true), rng());
                 std::vector<std::int64_t> seq{m.config.vocab.bos()};
                 for (int i = 0; i < 3; ++i)
                   seq.push_back(static_cast<std::int64_t>(rng() % 5));
                 auto memory = rand({3, 3}, rng);
                 const std::vector<std::int64_t> offsets{0, 3};
                 auto inputs = m.params.tensors();
                 inputs.push_back(memory);
                 return grad_check(
                     [&](In in) {
                       return cross_att_forward(m, in.back(), offsets, seq, 1);
                     },
                     inputs);
               }});
  return c;
}

struct FaultScope {
  explicit FaultScope(bool on) : on_(on) {
    if (on_)
      fault::set_matmul_adjoint_fault(true);
  }
  ~FaultScope() {
    if (on_)
      fault::set_matmul_adjoint_fault(false);
  }
  bool on_;
};

} // namespace

GradCheckReport run_gradcheck_suite(bool inject_matmul_fault, double tolerance,
                                    int trials) {
  const auto t0 = std::chrono::steady_clock::now();
  FaultScope fault(inject_matmul_fault);
  GradCheckReport r;
  char buf[160];
  for (const auto &c : cases()) {
    GradCheckResult res{c.name, 0.0, false};
    for (int t = 0; t < trials; ++t) {
      std::mt19937_64 rng(1000 + 17 * t);
      res.error = std::max(res.error, c.run(rng));
    }
    res.passed = res.error < tolerance;
    r.failures += res.passed ? 0 : 1;
    std::snprintf(buf, sizeof buf, "%-28s %.3e %s\n", c.name.c_str(), res.error,
                  res.passed ? "ok" : "FAIL");
    r.text += buf;
    r.results.push_back(std::move(res));
  }
  r.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::snprintf(buf, sizeof buf, "%zu checks, %d failed, %.1f s\n",
                r.results.size(), r.failures, r.seconds);
  r.text += buf;
  return r;
}

} // namespace sgti
