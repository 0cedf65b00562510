#pragma once

#include "damo/graph.hpp"
#include "damo/nn.hpp"

namespace damo {

enum class Modality { kVisual, kAudio };

/// Per-step global context and the remaining local tokens.
struct GlobalLocalSplit {
  Var global;  // [T×D]
  Var local;   // [T×L_loc×D]
};

/// Visual: global is the cls token (index 0) and local the other tokens.
/// Audio has no cls token: global is the token mean and local is unchanged.
GlobalLocalSplit split_global_local(Var features, Modality modality);

/// Adaptive average pooling over the token axis.
Var adaptive_avg_pool(Var local, std::size_t l_out);

/// AdaptiveAvgPool(local) + FFN(global), the FFN term broadcast over tokens.
Var global_residual(Graph& g, const GlobalLocalSplit& split, const FeedForward& ffn, std::size_t l_out);

/// Spatial reduction for one modality: pooled local tokens plus the global residual.
struct SpatialPathway {
  FeedForward ffn;
  Modality modality = Modality::kVisual;
  std::size_t pooled_tokens = 1;

  static SpatialPathway create(ParameterStore& store, const std::string& name, const std::string& group,
                               Modality modality, std::size_t dim, std::size_t hidden, std::size_t pooled_tokens,
                               Rng& rng);
  /// [T×L×D] → [T×L'×D]
  Var operator()(Graph& g, Var features) const;
};

}  // namespace damo
