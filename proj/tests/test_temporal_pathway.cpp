#include <gtest/gtest.h>

#include <cmath>

#include "damo/fuseformer.hpp"
#include "damo/temporal.hpp"
#include "gradcheck.hpp"

using namespace damo;

TEST(GroupedTemporalConv, ShapeAndDivisibility) {
  ParameterStore store;
  Rng rng(1);
  auto conv = GroupedTemporalConv::create(store, "c", "pathways", 6, rng);
  Graph g;
  EXPECT_EQ(conv(g, g.variable(rng.normal_tensor({6, 4, 32}, 1))).shape(), (Shape{2, 4, 32}));
  EXPECT_THROW(GroupedTemporalConv::create(store, "bad", "pathways", 7, rng), ContractViolation);
  EXPECT_THROW(conv(g, g.variable(Tensor({9, 4, 32}))), ContractViolation);
}

TEST(GroupedTemporalConv, GroupLocality) {
  ParameterStore store;
  Rng rng(2);
  auto conv = GroupedTemporalConv::create(store, "c", "pathways", 6, rng);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor x = rng.normal_tensor({6, 4, 8}, 1);
    for (std::size_t frame = 0; frame < 6; ++frame) {
      Tensor y = x;
      for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t k = 0; k < 8; ++k) y.at(frame, l, k) += rng.normal(0, 10);
      Graph g;
      const Tensor ox = conv(g, g.variable(x)).value(), oy = conv(g, g.variable(y)).value();
      for (std::size_t grp = 0; grp < 2; ++grp) {
        const bool inside = frame / 3 == grp;
        bool same = true;
        for (std::size_t l = 0; l < 4; ++l)
          for (std::size_t k = 0; k < 8; ++k) same &= ox.at(grp, l, k) == oy.at(grp, l, k);
        EXPECT_EQ(same, !inside) << "frame " << frame << " group " << grp;
      }
    }
  }
}

TEST(GroupedTemporalConv, IdentityKernelReproducesFrame) {
  ParameterStore store;
  Rng rng(3);
  auto conv = GroupedTemporalConv::create(store, "c", "pathways", 6, rng);
  conv.weight->value.fill(0.0);
  // Group 0 copies its second frame (1), group 1 its third frame (5).
  conv.weight->value[((0 * 3 + 1) * 3 + 1) * 3 + 1] = 1.0;
  conv.weight->value[((1 * 3 + 2) * 3 + 1) * 3 + 1] = 1.0;
  const Tensor x = rng.normal_tensor({6, 4, 8}, 1);
  Graph g;
  const Tensor y = conv(g, g.variable(x)).value();
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_EQ(y.at(0, l, k), x.at(1, l, k));
      EXPECT_EQ(y.at(1, l, k), x.at(5, l, k));
    }
}

TEST(GroupedTemporalConv, GradientMatchesFiniteDifferences) {
  ParameterStore store;
  Rng rng(4);
  auto conv = GroupedTemporalConv::create(store, "c", "pathways", 6, rng);
  Parameter& x = store.add("x", "in", rng.normal_tensor({6, 3, 5}, 1));
  auto r = damo::testing::check_gradients(store, [&](Graph& g) { return conv(g, g.param(x)); }, rng);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(TemporalEmbedding, SinusoidValues) {
  const Tensor s = sinusoidal_table(16, 48);
  for (std::size_t j = 0; j < 48; ++j) EXPECT_EQ(s.at(0, j), j % 2 == 0 ? 0.0 : 1.0);
  EXPECT_NEAR(s.at(1, 0), 0.8415, 5e-5);
  EXPECT_EQ(s.at(1, 0), std::sin(1.0));
  EXPECT_DOUBLE_EQ(s.at(3, 4), std::sin(3.0 / std::pow(10000.0, 4.0 / 48.0)));
  EXPECT_DOUBLE_EQ(s.at(3, 5), std::cos(3.0 / std::pow(10000.0, 4.0 / 48.0)));
}

TEST(TemporalEmbedding, ZeroLearnableShiftsBySinusoid) {
  ParameterStore store;
  Rng rng(5);
  auto te = TemporalEmbedding::create(store, "te", "pathways", 16, 6, rng);
  te.learnable->value.fill(0.0);
  Graph g;
  const Tensor x = rng.normal_tensor({2, 3, 6}, 1);
  const Tensor y = te(g, g.variable(x)).value();
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t k = 0; k < 6; ++k) {
      EXPECT_EQ(y.at(0, l, k), x.at(0, l, k) + (k % 2 == 0 ? 0.0 : 1.0));
      EXPECT_NEAR(y.at(1, l, k) - x.at(1, l, k), y.at(1, 0, k) - x.at(1, 0, k), 1e-15);
    }
}

TEST(TemporalEmbedding, SameOffsetPerStepAndSubtractionRestoresInput) {
  ParameterStore store;
  Rng rng(6);
  auto te = TemporalEmbedding::create(store, "te", "pathways", 16, 8, rng);
  for (int rep = 0; rep < 20; ++rep) {
    Graph g;
    const Tensor x = rng.normal_tensor({5, 4, 8}, 1);
    const Tensor y = te(g, g.variable(x)).value();
    const Tensor off = te.offsets(5);
    for (std::size_t t = 0; t < 5; ++t)
      for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t k = 0; k < 8; ++k) {
          // Inversion holds up to one rounding of the addition.
          EXPECT_NEAR(y.at(t, l, k) - off.at(t, k), x.at(t, l, k), 4e-16 * (1 + std::abs(y.at(t, l, k))));
          EXPECT_EQ(y.at(t, l, k), x.at(t, l, k) + off.at(t, k));
        }
  }
}

TEST(TemporalEmbedding, Errors) {
  ParameterStore store;
  Rng rng(7);
  auto te = TemporalEmbedding::create(store, "te", "pathways", 4, 8, rng);
  Graph g;
  EXPECT_THROW(te(g, g.variable(Tensor({5, 2, 8}))), ContractViolation);
  EXPECT_THROW(te(g, g.variable(Tensor({3, 2, 7}))), DimensionError);
}

TEST(TemporalEmbedding, LearnableInitScale) {
  ParameterStore store;
  Rng rng(8);
  auto te = TemporalEmbedding::create(store, "te", "pathways", 64, 48, rng);
  double sq = 0.0;
  for (double v : te.learnable->value.data()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq / te.learnable->value.size()), 0.02, 0.002);
}

TEST(ProjectToModelDim, IdentityZeroAndGradient) {
  ParameterStore store;
  Rng rng(9);
  Linear proj = Linear::create(store, "p", "pathways", 5, 5, rng);
  proj.weight->value.fill(0.0);
  for (std::size_t i = 0; i < 5; ++i) proj.weight->value.at(i, i) = 1.0;
  proj.bias->value.fill(0.0);
  const Tensor x = rng.normal_tensor({2, 3, 5}, 1);
  {
    Graph g;
    EXPECT_EQ(project_to_model_dim(g, g.variable(x), proj).value(), x);
  }
  zero_linear(proj);
  {
    Graph g;
    for (double v : project_to_model_dim(g, g.variable(x), proj).value().data()) EXPECT_EQ(v, 0.0);
  }
  Linear wide = Linear::create(store, "w", "pathways", 5, 7, rng);
  Parameter& xp = store.add("x", "in", x);
  auto r = damo::testing::check_gradients(store, [&](Graph& g) { return project_to_model_dim(g, g.param(xp), wide); },
                                          rng);
  EXPECT_LT(r.max_rel_error, 1e-4);
  Graph g;
  EXPECT_THROW(project_to_model_dim(g, g.variable(Tensor({2, 3, 4})), wide), DimensionError);
}

namespace {

// Swaps time steps a and b of a [T×L×d] tensor.
Tensor swap_steps(const Tensor& x, std::size_t a, std::size_t b) {
  Tensor y = x;
  for (std::size_t l = 0; l < x.dim(1); ++l)
    for (std::size_t k = 0; k < x.dim(2); ++k) std::swap(y.at(a, l, k), y.at(b, l, k));
  return y;
}

}  // namespace

TEST(TemporalEmbedding, BreaksTimePermutationSymmetry) {
  ToyConfig cfg;
  ParameterStore store;
  Rng rng(10);
  auto te = TemporalEmbedding::create(store, "te", "pathways", 16, cfg.model_dim, rng);
  auto stage = UnimodalStage::create(store, "u", "fuseformer", cfg.model_dim, cfg.heads, 96, 12, rng);
  const Tensor x = rng.normal_tensor({4, 3, cfg.model_dim}, 1);
  const Tensor xs = swap_steps(x, 0, 2);

  auto refined = [&](const Tensor& in, bool embed) {
    Graph g;
    Var v = g.variable(in);
    if (embed) v = te(g, v);
    return stage.refined(g, reshape(v, {12, cfg.model_dim})).value();
  };
  auto compressed = [&](const Tensor& in, bool embed) {
    Graph g;
    Var v = g.variable(in);
    if (embed) v = te(g, v);
    return stage(g, reshape(v, {12, cfg.model_dim})).value();
  };

  EXPECT_GT(max_abs_diff(compressed(x, true), compressed(xs, true)), 1e-6);

  te.learnable->value.fill(0.0);
  te.use_sinusoid = false;
  // Without embeddings the refined rows are permuted along with the input.
  const Tensor r = refined(x, true), rs = refined(xs, true);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t k = 0; k < cfg.model_dim; ++k) {
      EXPECT_NEAR(rs.at(0 * 3 + l, k), r.at(2 * 3 + l, k), 1e-10);
      EXPECT_NEAR(rs.at(2 * 3 + l, k), r.at(0 * 3 + l, k), 1e-10);
      EXPECT_NEAR(rs.at(1 * 3 + l, k), r.at(1 * 3 + l, k), 1e-10);
    }
  EXPECT_LT(max_abs_diff(compressed(x, true), compressed(xs, true)), 1e-10);
}
