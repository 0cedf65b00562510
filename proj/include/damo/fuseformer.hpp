#pragma once

#include <vector>

#include "damo/config.hpp"
#include "damo/graph.hpp"
#include "damo/nn.hpp"

namespace damo {

/// Refines one modality with self-attention + FFN, then compresses it into
/// a fixed number of learnable queries via cross-attention + FFN.
struct UnimodalStage {
  SelfAttentionBlock refine;
  Parameter* queries = nullptr;  // [Q×d]
  CrossAttentionBlock compress;

  static UnimodalStage create(ParameterStore& store, const std::string& name, const std::string& group,
                              std::size_t dim, std::size_t heads, std::size_t ffn_hidden, std::size_t n_queries,
                              Rng& rng);
  std::size_t n_queries() const { return queries->value.dim(0); }
  /// Refined features alone, [S×d].
  Var refined(Graph& g, Var features) const;
  /// [S×d] → [Q×d], for any S ≥ 1.
  Var operator()(Graph& g, Var features) const;
};

/// Self-attention + FFN over [FUSION; visual; audio]; first Q_f rows are kept.
struct MultimodalStage {
  SelfAttentionBlock fuse;

  static MultimodalStage create(ParameterStore& store, const std::string& name, const std::string& group,
                                std::size_t dim, std::size_t heads, std::size_t ffn_hidden, Rng& rng);
  Var operator()(Graph& g, Var fusion, Var visual_compressed, Var audio_compressed) const;
};

struct FuseformerLayer {
  UnimodalStage visual;
  UnimodalStage audio;
  MultimodalStage multimodal;
};

/// Per-layer intermediate outputs, kept for inspection and tests.
struct FuseformerTrace {
  std::vector<Var> visual;
  std::vector<Var> audio;
  std::vector<Var> fusion;
};

/// Stack of fuseformer layers. Layer l+1 consumes layer l's compressed
/// unimodal outputs; one FUSION query bank is shared by all layers and its
/// state threads through them.
class Fuseformer {
 public:
  /// Enforces visual_queries == 3·audio_queries.
  static Fuseformer create(ParameterStore& store, const std::string& name, const std::string& group,
                           const ToyConfig& cfg, Rng& rng);

  /// v [S_v×d], a [S_a×d] → final FUSION state [Q_f×d].
  Var operator()(Graph& g, Var visual, Var audio, FuseformerTrace* trace = nullptr) const;

  std::size_t depth() const { return layers_.size(); }
  const FuseformerLayer& layer(std::size_t i) const { return layers_.at(i); }
  FuseformerLayer& layer(std::size_t i) { return layers_.at(i); }
  Parameter& fusion_queries() const { return *fusion_queries_; }

 private:
  std::vector<FuseformerLayer> layers_;
  Parameter* fusion_queries_ = nullptr;
};

}  // namespace damo
