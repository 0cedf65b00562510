#pragma once

#include <optional>
#include <string>

#include "damo/graph.hpp"
#include "damo/parameter.hpp"
#include "damo/rng.hpp"

namespace damo {

/// Affine map y = x·Wᵀ + b with W stored [out×in].
struct Linear {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  std::size_t in = 0;
  std::size_t out = 0;

  static Linear create(ParameterStore& store, const std::string& name, const std::string& group, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true);
  Var operator()(Graph& g, Var x) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  static LayerNorm create(ParameterStore& store, const std::string& name, const std::string& group, std::size_t dim);
  Var operator()(Graph& g, Var x) const;
};

/// Two affine maps with exact GELU in between.
struct FeedForward {
  Linear fc1;
  Linear fc2;

  static FeedForward create(ParameterStore& store, const std::string& name, const std::string& group, std::size_t dim,
                            std::size_t hidden, std::size_t out, Rng& rng);
  Var operator()(Graph& g, Var x) const;
};

/// Low-rank update for a frozen weight W[out×in]: ΔW = scale·B·A with
/// A[r×in], B[out×r]. B starts at zero so the adapted map equals the base.
struct LoraAdapter {
  Parameter* a = nullptr;
  Parameter* b = nullptr;
  std::size_t rank = 0;
  double scale = 0.0;

  static LoraAdapter create(ParameterStore& store, const std::string& name, const std::string& group,
                            const Linear& base, std::size_t rank, double alpha, Rng& rng);
  /// scale·B·A as a dense matrix (for rank inspection).
  Tensor delta() const;
};

/// y = x·Wᵀ + b + scale·(x·Aᵀ)·Bᵀ.
Var lora_forward(Graph& g, Var x, const Linear& base, const LoraAdapter& adapter);

struct AttentionLora {
  const LoraAdapter* query = nullptr;
  const LoraAdapter* value = nullptr;
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& name, const std::string& group,
                                   std::size_t dim, std::size_t heads, Rng& rng);
  Var operator()(Graph& g, Var x_query, Var x_kv, bool causal = false, AttentionLora lora = {}) const;
};

/// Pre-norm self-attention block: x + Attn(LN(x)), then + FFN(LN(·)).
struct SelfAttentionBlock {
  LayerNorm ln_attn;
  MultiHeadAttention attn;
  LayerNorm ln_ffn;
  FeedForward ffn;

  static SelfAttentionBlock create(ParameterStore& store, const std::string& name, const std::string& group,
                                   std::size_t dim, std::size_t heads, std::size_t ffn_hidden, Rng& rng);
  Var operator()(Graph& g, Var x, bool causal = false, AttentionLora lora = {}) const;
};

/// Pre-norm cross-attention block: q + Attn(LN(q), LN(kv)), then + FFN(LN(·)).
struct CrossAttentionBlock {
  LayerNorm ln_query;
  LayerNorm ln_context;
  MultiHeadAttention attn;
  LayerNorm ln_ffn;
  FeedForward ffn;

  static CrossAttentionBlock create(ParameterStore& store, const std::string& name, const std::string& group,
                                    std::size_t dim, std::size_t heads, std::size_t ffn_hidden, Rng& rng);
  Var operator()(Graph& g, Var queries, Var context) const;
};

/// Sets every weight and bias of an attention/FFN pair to zero.
void zero_linear(Linear& l);

}  // namespace damo
