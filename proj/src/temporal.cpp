#include "damo/temporal.hpp"

#include <cmath>

#include "damo/config.hpp"

namespace damo {

Tensor sinusoidal_table(std::size_t t_max, std::size_t dim) {
  Tensor table({t_max, dim});
  for (std::size_t t = 0; t < t_max; ++t)
    for (std::size_t j = 0; j < dim; ++j) {
      const std::size_t pair = j / 2;
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(pair) / static_cast<double>(dim));
      const double angle = static_cast<double>(t) * freq;
      table.at(t, j) = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return table;
}

GroupedTemporalConv GroupedTemporalConv::create(ParameterStore& store, const std::string& name,
                                                const std::string& group, std::size_t n_frames, Rng& rng) {
  if (n_frames == 0 || n_frames % kFramesPerGroup != 0)
    throw ContractViolation("grouped temporal conv: frame count " + std::to_string(n_frames) + " not divisible by 3");
  GroupedTemporalConv c;
  c.groups = n_frames / kFramesPerGroup;
  // Frame i of a group starts as a copy shifted by i − 1 along the feature
  // axis, so the three frames land on distinguishable patterns instead of
  // being averaged away.
  Tensor w = rng.normal_tensor({c.groups, kFramesPerGroup, 3, 3}, 0.1 / std::sqrt(27.0));
  for (std::size_t o = 0; o < c.groups; ++o)
    for (std::size_t i = 0; i < kFramesPerGroup; ++i) w[((o * kFramesPerGroup + i) * 3 + 1) * 3 + i] += 1.0;
  c.weight = &store.add(name + ".weight", group, std::move(w));
  c.bias = &store.add(name + ".bias", group, Tensor({c.groups}));
  return c;
}

Var GroupedTemporalConv::operator()(Graph& g, Var frames) const {
  const Tensor& x = frames.value();
  if (x.rank() != 3 || x.dim(0) != groups * kFramesPerGroup)
    throw ContractViolation("grouped temporal conv expects " + std::to_string(groups * kFramesPerGroup) +
                            " frames, got " + shape_str(x.shape()));
  return grouped_conv2d(frames, g.param(*weight), g.param(*bias), groups, 1);
}

TemporalEmbedding TemporalEmbedding::create(ParameterStore& store, const std::string& name, const std::string& group,
                                            std::size_t t_max, std::size_t dim, Rng& rng) {
  TemporalEmbedding te;
  te.learnable = &store.add(name + ".learnable", group, rng.normal_tensor({t_max, dim}, 0.02));
  te.sinusoidal = sinusoidal_table(t_max, dim);
  return te;
}

Tensor TemporalEmbedding::offsets(std::size_t steps) const {
  if (steps > max_steps())
    throw ContractViolation("temporal embedding: " + std::to_string(steps) + " steps exceed capacity " +
                            std::to_string(max_steps()));
  const std::size_t d = sinusoidal.dim(1);
  Tensor out({steps, d});
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t j = 0; j < d; ++j)
      out.at(t, j) = learnable->value.at(t, j) + (use_sinusoid ? sinusoidal.at(t, j) : 0.0);
  return out;
}

Var TemporalEmbedding::operator()(Graph& g, Var x) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw DimensionError("temporal embedding expects [T×L×d], got " + shape_str(xv.shape()));
  const std::size_t steps = xv.dim(0), d = sinusoidal.dim(1);
  if (steps > max_steps())
    throw ContractViolation("temporal embedding: " + std::to_string(steps) + " steps exceed capacity " +
                            std::to_string(max_steps()));
  if (xv.dim(2) != d) throw DimensionError("temporal embedding: feature dim " + std::to_string(xv.dim(2)) + " vs " + std::to_string(d));
  Var learned = slice_rows(g.param(*learnable), 0, steps);
  Var emb = learned;
  if (use_sinusoid) {
    Tensor fixed({steps, d});
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < d; ++j) fixed.at(t, j) = sinusoidal.at(t, j);
    emb = add(learned, g.constant(std::move(fixed)));
  }
  return add_per_step(x, emb);
}

Var project_to_model_dim(Graph& g, Var x, const Linear& projection) {
  const Tensor& xv = x.value();
  if (xv.rank() != 3) throw DimensionError("project_to_model_dim expects [T×L×D], got " + shape_str(xv.shape()));
  if (xv.dim(2) != projection.in)
    throw DimensionError("project_to_model_dim: input dim " + std::to_string(xv.dim(2)) + " vs " + std::to_string(projection.in));
  const std::size_t t = xv.dim(0), l = xv.dim(1);
  Var flat = reshape(x, {t * l, projection.in});
  return reshape(projection(g, flat), {t, l, projection.out});
}

}  // namespace damo
