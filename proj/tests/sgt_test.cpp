#include "core/error.hpp"
#include "sgt/diou.hpp"
#include "sgt/sgt.hpp"
#include "tensor/gradcheck.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

using namespace sgti;
using namespace sgti::oracle;

namespace {

SceneGraph make_graph(std::vector<int> nodes, std::vector<Edge> edges) {
  SceneGraph g;
  g.nodes = std::move(nodes);
  g.edges = std::move(edges);
  g.num_categories = 12;
  g.num_predicates = 6;
  return g;
}

SceneGraph random_graph(std::mt19937_64 &rng, int max_nodes = 8) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 1 + static_cast<int>(rng() % max_nodes);
  const double p = u(rng) * 0.5;
  SceneGraph g = make_graph(std::vector<int>(n), {});
  for (int i = 0; i < n; ++i) {
    g.nodes[i] = static_cast<int>(rng() % 12);
    for (int j = 0; j < n; ++j)
      if (i != j && u(rng) < p)
        g.edges.push_back({i, j, static_cast<int>(rng() % 6)});
  }
  // occasional parallel edge with another predicate
  if (!g.edges.empty() && u(rng) < 0.3) {
    auto e = g.edges.front();
    e.predicate = (e.predicate + 1) % 6;
    g.edges.push_back(e);
  }
  return g;
}

SgtConfig small_config() {
  SgtConfig c;
  c.num_layers = 1;
  c.num_heads = 2;
  c.embed_dim = 8;
  c.edge_dim = 6;
  c.lap_pe_width = 4;
  return c;
}

Tensor random_tensor(Shape shape, std::mt19937_64 &rng, bool grad = false) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(shape_numel(shape));
  for (auto &x : v)
    x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

Box random_box(std::mt19937_64 &rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double x1 = u(rng), x2 = u(rng), y1 = u(rng), y2 = u(rng);
  if (x1 > x2)
    std::swap(x1, x2);
  if (y1 > y2)
    std::swap(y1, y2);
  return {x1, y1, x2, y2};
}

bool near_kink(const Box &a, const Box &b) {
  const double xs[4] = {a.x1, a.x2, b.x1, b.x2};
  const double ys[4] = {a.y1, a.y2, b.y1, b.y2};
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if (std::fabs(xs[i] - xs[j]) < 0.02 || std::fabs(ys[i] - ys[j]) < 0.02)
        return true;
  return false;
}

} // namespace

TEST(Diou, IdenticalBoxesAreZero) {
  EXPECT_NEAR(diou_loss({0.1, 0.2, 0.5, 0.9}, {0.1, 0.2, 0.5, 0.9}), 0.0, 1e-7);
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const auto b = random_box(rng);
    EXPECT_EQ(diou_loss(b, b), 0.0);
  }
}

TEST(Diou, WorkedPair) {
  const double oracle = diou_direct(0, 0, 2, 2, 1, 1, 3, 3);
  EXPECT_NEAR(oracle, 1.0 - 1.0 / 7.0 + 2.0 / 18.0, 1e-12);
  EXPECT_NEAR(diou_loss({0, 0, 2, 2}, {1, 1, 3, 3}), oracle, 1e-4);
  EXPECT_NEAR(diou_loss({0, 0, 2, 2}, {1, 1, 3, 3}), 0.9683, 1e-4);
}

TEST(Diou, DisjointBoxesExceedOne) {
  EXPECT_GT(diou_loss({0, 0, 0.1, 0.1}, {0.9, 0.9, 1, 1}), 1.0);
}

TEST(Diou, CoincidentPointsAreZero) {
  EXPECT_EQ(diou_loss({0.3, 0.3, 0.3, 0.3}, {0.3, 0.3, 0.3, 0.3}), 0.0);
}

TEST(Diou, SymmetricRangeAndOracleAgreement) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10000; ++i) {
    const auto a = random_box(rng), b = random_box(rng);
    const double ab = diou_loss(a, b);
    EXPECT_EQ(ab, diou_loss(b, a));
    EXPECT_GE(ab, 0.0);
    EXPECT_LT(ab, 2.0);
    if ((a.x2 - a.x1) * (a.y2 - a.y1) > 1e-6 && (b.x2 - b.x1) * (b.y2 - b.y1) > 1e-6) {
      EXPECT_NEAR(ab, diou_direct(a.x1, a.y1, a.x2, a.y2, b.x1, b.y1, b.x2, b.y2),
                  1e-9);
    }
  }
}

TEST(Diou, RowGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<float> pv, tv;
    for (int r = 0; r < 5; ++r) {
      auto a = random_box(rng), b = random_box(rng);
      // finite differences are meaningless across the max/min kinks
      while (near_kink(a, b)) {
        a = random_box(rng);
        b = random_box(rng);
      }
      pv.insert(pv.end(), {float(a.x1), float(a.y1), float(a.x2), float(a.y2)});
      tv.insert(tv.end(), {float(b.x1), float(b.y1), float(b.x2), float(b.y2)});
    }
    auto pred = Tensor::from({5, 4}, pv, true);
    auto target = Tensor::from({5, 4}, tv, true);
    const double err = grad_check(
        [](const std::vector<Tensor> &in) { return diou_rows(in[0], in[1]); },
        {pred, target});
    EXPECT_LT(err, 1e-3) << "trial " << trial;
  }
}

TEST(LayoutLoss, ExactMatchLimit) {
  Layout gt{{2, 0}, {{0.1, 0.1, 0.4, 0.5}, {0.5, 0.2, 0.9, 0.8}}};
  std::vector<float> bv;
  for (const auto &b : gt.boxes)
    bv.insert(bv.end(), {float(b.x1), float(b.y1), float(b.x2), float(b.y2)});
  auto boxes = Tensor::from({2, 4}, bv);
  std::vector<float> lv(2 * 12, 0.0f);
  lv[0 * 12 + 2] = 20.0f;
  lv[1 * 12 + 0] = 20.0f;
  const auto loss = layout_loss(boxes, Tensor::from({2, 12}, lv), gt);
  EXPECT_EQ(loss.box, 0.0);
  EXPECT_EQ(loss.iou, 0.0);
  EXPECT_LE(loss.label, 1e-3);
  EXPECT_LE(loss.total.item(), 1e-3);
}

TEST(LayoutLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  Layout gt;
  for (int i = 0; i < 4; ++i) {
    gt.classes.push_back(static_cast<int>(rng() % 12));
    gt.boxes.push_back(random_box(rng));
  }
  std::vector<float> bv;
  for (int i = 0; i < 4; ++i) {
    const auto b = random_box(rng);
    bv.insert(bv.end(), {float(b.x1), float(b.y1), float(b.x2), float(b.y2)});
  }
  auto boxes = Tensor::from({4, 4}, bv, true);
  auto logits = random_tensor({4, 12}, rng, true);
  const double err = grad_check(
      [&](const std::vector<Tensor> &in) {
        return layout_loss(in[0], in[1], gt).total;
      },
      {boxes, logits});
  EXPECT_LT(err, 1e-3);
}

TEST(LayoutLoss, InvariantToJointPermutation) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 6);
    Layout gt;
    std::vector<float> bv;
    for (int i = 0; i < n; ++i) {
      gt.classes.push_back(static_cast<int>(rng() % 12));
      gt.boxes.push_back(random_box(rng));
      const auto b = random_box(rng);
      bv.insert(bv.end(), {float(b.x1), float(b.y1), float(b.x2), float(b.y2)});
    }
    auto logits = random_tensor({n, 12}, rng);
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Layout pgt = gt;
    std::vector<float> pbv(bv.size()), plv(logits.numel());
    for (int i = 0; i < n; ++i) {
      pgt.classes[perm[i]] = gt.classes[i];
      pgt.boxes[perm[i]] = gt.boxes[i];
      std::copy_n(bv.begin() + i * 4, 4, pbv.begin() + perm[i] * 4);
      std::copy_n(logits.data().begin() + i * 12, 12, plv.begin() + perm[i] * 12);
    }
    const auto a = layout_loss(Tensor::from({n, 4}, bv), logits, gt);
    const auto b = layout_loss(Tensor::from({n, 4}, pbv),
                               Tensor::from({n, 12}, plv), pgt);
    EXPECT_EQ(a.total.item(), b.total.item());
  }
}

TEST(LayoutLoss, LengthMismatch) {
  Layout gt{{1}, {{0, 0, 1, 1}}};
  EXPECT_THROW(layout_loss(Tensor::zeros({2, 4}), Tensor::zeros({2, 12}), gt),
               ValidationError);
}

TEST(AttentionPlan, NeighbourhoodsAreSymmetricWithSelf) {
  auto g = make_graph({0, 1, 2}, {{0, 1, 0}, {2, 1, 3}});
  auto plan = build_attention_plan(g, true);
  EXPECT_EQ(plan.query_offsets, (std::vector<std::int64_t>{0, 2, 5, 7}));
  EXPECT_EQ(plan.pair_key, (std::vector<std::int64_t>{0, 1, 0, 1, 2, 1, 2}));
  // node 1 sees edge 0 as incoming (row M+1+0) and edge 1 as incoming too
  EXPECT_EQ(plan.edge_terms.row(2)[0], 2 + 1 + 0);
  EXPECT_EQ(plan.edge_terms.row(3)[0], 2); // self row
  EXPECT_EQ(plan.edge_pair, (std::vector<std::int64_t>{1, 5}));
}

TEST(EdgeAttention, SingleNeighbourGetsFullWeight) {
  auto cfg = small_config();
  cfg.self_attend = false;
  SgtModel model(cfg, 11);
  auto g = make_graph({0, 1}, {{0, 1, 2}});
  auto plan = build_attention_plan(g, false);
  std::mt19937_64 rng(3);
  LayerState in{random_tensor({2, 8}, rng), random_tensor({1, 6}, rng)};
  auto sc = attention_scores(in, plan, model.layers[0], cfg);
  for (float w : sc.weights.data())
    EXPECT_EQ(w, 1.0f);
}

TEST(EdgeAttention, SymmetricNeighboursSplitEvenly) {
  auto cfg = small_config();
  cfg.self_attend = false;
  SgtModel model(cfg, 12);
  // nodes 1 and 2 share a state and reach node 0 through identical edges
  auto g = make_graph({0, 1, 1}, {{1, 0, 4}, {2, 0, 4}});
  auto plan = build_attention_plan(g, false);
  std::mt19937_64 rng(4);
  auto h = random_tensor({3, 8}, rng);
  auto hv = h.mutable_data();
  std::copy_n(hv.begin() + 8, 8, hv.begin() + 16);
  auto e = random_tensor({1, 6}, rng);
  std::vector<float> ev(e.data().begin(), e.data().end());
  ev.insert(ev.end(), e.data().begin(), e.data().end());
  LayerState in{h, Tensor::from({2, 6}, ev)};
  auto sc = attention_scores(in, plan, model.layers[0], cfg);
  ASSERT_EQ(plan.query_offsets[1], 2);
  for (int hd = 0; hd < cfg.num_heads; ++hd) {
    EXPECT_EQ(sc.weights.at(0 * cfg.num_heads + hd), 0.5f);
    EXPECT_EQ(sc.weights.at(1 * cfg.num_heads + hd), 0.5f);
  }
}

TEST(EdgeAttention, MatchesDenseMaskedOracle) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 60; ++trial) {
    auto cfg = small_config();
    cfg.self_attend = trial % 5 != 4;
    cfg.use_edges = trial % 7 != 6;
    SgtModel model(cfg, 100 + trial);
    const auto g = random_graph(rng);
    const int m = static_cast<int>(g.edges.size());
    LayerState in{random_tensor({g.size(), 8}, rng),
                  random_tensor({m, 6}, rng)};
    const auto plan = build_attention_plan(g, cfg.self_attend);
    const auto out = edge_attention_layer(in, plan, model.layers[0], cfg);
    const auto ref =
        dense_layer(g, to_mat(in.h), to_mat(in.e), model.layers[0], cfg);
    EXPECT_LT(max_diff(out.h.data(), ref.h), 1e-6) << "trial " << trial;
    EXPECT_LT(max_diff(out.e.data(), ref.e), 1e-6) << "trial " << trial;
  }
}

TEST(EdgeAttention, CostIsNeighbourhoodSized) {
  auto cfg = small_config();
  SgtModel model(cfg, 13);
  const int n = 64;
  auto g = make_graph(std::vector<int>(n, 0), {});
  for (int i = 1; i < n; ++i)
    g.edges.push_back({0, i, 0});
  const auto pe = lap_pe(g, 4);
  const auto before = attention_score_evaluations();
  sgt_forward(model, g, &pe);
  const auto used = attention_score_evaluations() - before;
  // self pairs + both directions of each spoke
  EXPECT_EQ(used, static_cast<std::uint64_t>(n + 2 * (n - 1)));
  EXPECT_LT(used, static_cast<std::uint64_t>(n * n));
}

TEST(EdgeAttention, GradientCheckThroughLayer) {
  auto cfg = small_config();
  SgtModel model(cfg, 14);
  auto g = make_graph({3, 5, 7}, {{0, 1, 1}, {1, 2, 4}, {2, 0, 0}});
  const auto plan = build_attention_plan(g, true);
  std::mt19937_64 rng(8);
  auto h = random_tensor({3, 8}, rng, true);
  auto e = random_tensor({3, 6}, rng, true);
  std::vector<Tensor> inputs{h, e};
  for (const auto &name : model.params.names())
    if (name.rfind("sgt.layer0.", 0) == 0)
      inputs.push_back(model.params.get(name));
  const double err = grad_check(
      [&](const std::vector<Tensor> &in) {
        auto out = edge_attention_layer({in[0], in[1]}, plan, model.layers[0], cfg);
        return ops::concat_rows(
            {ops::reshape(out.h, {24, 1}), ops::reshape(out.e, {18, 1})});
      },
      inputs);
  EXPECT_LT(err, 1e-3);
}

TEST(SgtForward, BoxesStayInUnitRange) {
  auto cfg = small_config();
  SgtModel model(cfg, 15);
  for (auto &t : model.params.tensors())
    for (auto &v : t.mutable_data())
      v *= 25.0f;
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = random_graph(rng);
    const auto pe = lap_pe(g, 4);
    const auto out = sgt_forward(model, g, &pe);
    for (float v : out.boxes.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(SgtForward, PermutationEquivariant) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    auto cfg = small_config();
    cfg.num_layers = 2;
    cfg.use_pe = trial % 2 == 0;
    SgtModel model(cfg, 200 + trial);
    const auto g = random_graph(rng);
    std::vector<int> perm(g.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto pg = permute_nodes(g, perm);
    const auto pe = lap_pe(g, 4);
    LapPE ppe = pe;
    for (int i = 0; i < g.size(); ++i)
      std::copy_n(pe.values.begin() + i * 4, 4, ppe.values.begin() + perm[i] * 4);
    const auto a = sgt_forward(model, g, &pe);
    const auto b = sgt_forward(model, pg, &ppe);
    double worst = 0;
    for (int i = 0; i < g.size(); ++i) {
      for (int c = 0; c < 4; ++c)
        worst = std::max(worst, double(std::fabs(a.boxes.at(i * 4 + c) -
                                                 b.boxes.at(perm[i] * 4 + c))));
      for (int c = 0; c < 12; ++c)
        worst = std::max(worst, double(std::fabs(a.logits.at(i * 12 + c) -
                                                 b.logits.at(perm[i] * 12 + c))));
    }
    EXPECT_LT(worst, 1e-5) << "trial " << trial;
  }
}

TEST(SgtForward, ZeroEncodingMatchesNoEncodingVariant) {
  auto with = small_config();
  auto without = with;
  without.use_pe = false;
  SgtModel a(with, 16), b(without, 16);
  auto g = make_graph({1, 2, 3, 4}, {{0, 1, 0}, {2, 3, 5}});
  LapPE zero{4, 4, 0, std::vector<double>(16, 0.0)};
  const auto x = sgt_forward(a, g, &zero);
  const auto y = sgt_forward(b, g, nullptr);
  EXPECT_TRUE(std::equal(x.boxes.data().begin(), x.boxes.data().end(),
                         y.boxes.data().begin()));
  EXPECT_TRUE(std::equal(x.logits.data().begin(), x.logits.data().end(),
                         y.logits.data().begin()));
}

TEST(SgtForward, RejectsUnknownCategory) {
  SgtModel model(small_config(), 17);
  auto g = make_graph({0, 12}, {});
  g.num_categories = 13;
  EXPECT_THROW(sgt_forward(model, g, nullptr), ValidationError);
  auto h = make_graph({0, 12}, {});
  EXPECT_THROW(sgt_forward(model, h, nullptr), ValidationError);
}

TEST(SgtForward, PredictedLayoutIsOrdered) {
  SgtModel model(small_config(), 18);
  std::mt19937_64 rng(19);
  const auto g = random_graph(rng);
  const auto pe = lap_pe(g, 4);
  const auto layout = predict_layout(model, g, &pe);
  ASSERT_EQ(layout.size(), g.size());
  EXPECT_EQ(layout.classes, g.nodes);
  for (const auto &b : layout.boxes) {
    EXPECT_LE(b.x1, b.x2);
    EXPECT_LE(b.y1, b.y2);
  }
}

TEST(SgtForward, MergedBatchMatchesSeparateGraphs) {
  SgtModel model(small_config(), 20);
  std::mt19937_64 rng(21);
  const auto g1 = random_graph(rng), g2 = random_graph(rng);
  const auto p1 = lap_pe(g1, 4), p2 = lap_pe(g2, 4);
  const auto merged = merge_graphs({g1, g2});
  const auto pe = stack_pe({p1, p2});
  const auto all = sgt_forward(model, merged, &pe);
  const auto a = sgt_forward(model, g1, &p1);
  const auto b = sgt_forward(model, g2, &p2);
  for (int i = 0; i < a.boxes.numel(); ++i)
    EXPECT_NEAR(all.boxes.at(i), a.boxes.at(i), 1e-6);
  for (int i = 0; i < b.boxes.numel(); ++i)
    EXPECT_NEAR(all.boxes.at(a.boxes.numel() + i), b.boxes.at(i), 1e-6);
}
