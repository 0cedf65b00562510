#pragma once

#include "damo/graph.hpp"
#include "damo/nn.hpp"

namespace damo {

/// Fixed sinusoid table: [t][2i] = sin(t/10000^{2i/d}), [t][2i+1] = cos(·).
Tensor sinusoidal_table(std::size_t t_max, std::size_t dim);

/// Grouped 3×3 convolution that fuses each run of three consecutive frames
/// into one. Frames are channels over an L'×D grid; N channels in, N/3 out,
/// N/3 groups, stride 1, zero padding 1.
struct GroupedTemporalConv {
  Parameter* weight = nullptr;  // [N/3 × 3 × 3 × 3]
  Parameter* bias = nullptr;    // [N/3]
  std::size_t groups = 0;

  static GroupedTemporalConv create(ParameterStore& store, const std::string& name, const std::string& group,
                                    std::size_t n_frames, Rng& rng);
  /// [N×L'×D] → [(N/3)×L'×D]
  Var operator()(Graph& g, Var frames) const;
};

/// Learnable plus fixed sinusoidal embedding per time step.
struct TemporalEmbedding {
  Parameter* learnable = nullptr;  // [T_max×d]
  Tensor sinusoidal;               // [T_max×d]
  bool use_sinusoid = true;

  static TemporalEmbedding create(ParameterStore& store, const std::string& name, const std::string& group,
                                  std::size_t t_max, std::size_t dim, Rng& rng);

  std::size_t max_steps() const { return sinusoidal.dim(0); }
  /// Combined offsets for the first `steps` positions, [steps×d].
  Tensor offsets(std::size_t steps) const;
  /// x[T×L×d] + (learnable[t] + sinusoidal[t]) for every token of step t.
  Var operator()(Graph& g, Var x) const;
};

/// Per-token affine projection [T×L×D] → [T×L×d].
Var project_to_model_dim(Graph& g, Var x, const Linear& projection);

}  // namespace damo
