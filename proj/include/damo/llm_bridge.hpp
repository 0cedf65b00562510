#pragma once

#include <vector>

#include "damo/config.hpp"
#include "damo/graph.hpp"
#include "damo/nn.hpp"

namespace damo {

/// Rank and scaling of a LoRA adapter set; the effective scale is alpha/rank.
struct LoraSpec {
  std::size_t rank = 8;
  double alpha = 16.0;

  double scale() const { return alpha / static_cast<double>(rank); }
  /// Adapter used for the instruction-following grounding fine-tune: half the
  /// rank of the main adapter at the same scale.
  LoraSpec halved() const;
};

/// Query block of the projector: self-attention among the projector queries,
/// cross-attention into the FUSION state, then an FFN. All pre-norm residual.
struct QFormerBlock {
  LayerNorm ln_self;
  MultiHeadAttention self_attn;
  LayerNorm ln_query;
  LayerNorm ln_context;
  MultiHeadAttention cross_attn;
  LayerNorm ln_ffn;
  FeedForward ffn;

  Var operator()(Graph& g, Var queries, Var fusion) const;
};

/// Maps the fused video representation to K_p soft-prompt vectors in the
/// decoder's embedding space (query blocks followed by a linear map).
struct QFormerProjector {
  Parameter* queries = nullptr;  // [K_p×d]
  std::vector<QFormerBlock> blocks;
  Linear output;  // d → d_llm

  static QFormerProjector create(ParameterStore& store, const std::string& name, const std::string& group,
                                 const ToyConfig& cfg, Rng& rng);
  /// fusion [Q_f×d] → [K_p×d_llm]
  Var operator()(Graph& g, Var fusion) const;
};

/// Tiny causal decoder standing in for the frozen language model. Weights
/// live in group "llm"; LoRA adapters on the attention query and value
/// projections live in group "lora".
class ToyDecoder {
 public:
  static ToyDecoder create(ParameterStore& store, const std::string& name, const std::string& llm_group,
                           const std::string& lora_group, const ToyConfig& cfg, Rng& rng);

  /// Prepends the soft prompts to the embedded text and runs causal
  /// attention over the concatenation. Returns logits for the text positions
  /// only, [len×vocab].
  Var operator()(Graph& g, Var soft_prompts, const std::vector<int>& tokens, bool use_lora) const;

  std::size_t vocab() const { return embedding_->value.dim(0); }
  const std::vector<LoraAdapter>& adapters() const { return adapters_; }

 private:
  struct Block {
    SelfAttentionBlock body;
    std::size_t lora_query = 0;  // indices into adapters_
    std::size_t lora_value = 0;
  };
  Parameter* embedding_ = nullptr;  // [V×d_llm]
  Parameter* positions_ = nullptr;  // [P×d_llm]
  std::vector<Block> blocks_;
  LayerNorm ln_final_;
  Linear head_;
  std::vector<LoraAdapter> adapters_;
};

/// Numerical rank: number of singular values above `tol`.
std::size_t numerical_rank(const Tensor& m, double tol = 1e-10);

}  // namespace damo
