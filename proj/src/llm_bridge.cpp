#include "damo/llm_bridge.hpp"

#include <Eigen/SVD>

namespace damo {

LoraSpec LoraSpec::halved() const {
  if (rank < 2) throw ContractViolation("cannot halve a rank-" + std::to_string(rank) + " adapter");
  return LoraSpec{rank / 2, alpha / 2.0};
}

Var QFormerBlock::operator()(Graph& g, Var queries, Var fusion) const {
  Var h = ln_self(g, queries);
  Var x = add(queries, self_attn(g, h, h));
  x = add(x, cross_attn(g, ln_query(g, x), ln_context(g, fusion)));
  return add(x, ffn(g, ln_ffn(g, x)));
}

QFormerProjector QFormerProjector::create(ParameterStore& store, const std::string& name, const std::string& group,
                                          const ToyConfig& cfg, Rng& rng) {
  QFormerProjector p;
  const std::size_t d = cfg.model_dim;
  p.queries = &store.add(name + ".queries", group, rng.normal_tensor({cfg.projector_queries, d}, 0.02));
  for (std::size_t b = 0; b < cfg.projector_blocks; ++b) {
    const std::string n = name + ".block" + std::to_string(b);
    p.blocks.push_back(QFormerBlock{
        LayerNorm::create(store, n + ".ln_self", group, d),
        MultiHeadAttention::create(store, n + ".self_attn", group, d, cfg.heads, rng),
        LayerNorm::create(store, n + ".ln_query", group, d),
        LayerNorm::create(store, n + ".ln_context", group, d),
        MultiHeadAttention::create(store, n + ".cross_attn", group, d, cfg.heads, rng),
        LayerNorm::create(store, n + ".ln_ffn", group, d),
        FeedForward::create(store, n + ".ffn", group, d, cfg.ffn_mult * d, d, rng)});
  }
  p.output = Linear::create(store, name + ".output", group, d, cfg.llm_dim, rng);
  return p;
}

Var QFormerProjector::operator()(Graph& g, Var fusion) const {
  Var q = g.param(*queries);
  for (const auto& b : blocks) q = b(g, q, fusion);
  return output(g, q);
}

ToyDecoder ToyDecoder::create(ParameterStore& store, const std::string& name, const std::string& llm_group,
                              const std::string& lora_group, const ToyConfig& cfg, Rng& rng) {
  ToyDecoder dec;
  const std::size_t d = cfg.llm_dim;
  dec.embedding_ = &store.add(name + ".embedding", llm_group, rng.normal_tensor({cfg.vocab, d}, 1.0));
  dec.positions_ = &store.add(name + ".positions", llm_group, rng.normal_tensor({cfg.llm_max_positions, d}, 0.1));
  const LoraSpec spec{cfg.lora_rank, cfg.lora_alpha};
  for (std::size_t b = 0; b < cfg.llm_blocks; ++b) {
    const std::string n = name + ".block" + std::to_string(b);
    Block blk;
    blk.body = SelfAttentionBlock::create(store, n, llm_group, d, cfg.llm_heads, cfg.ffn_mult * d, rng);
    blk.lora_query = dec.adapters_.size();
    dec.adapters_.push_back(LoraAdapter::create(store, n + ".attn.q", lora_group, blk.body.attn.q, spec.rank, spec.alpha, rng));
    blk.lora_value = dec.adapters_.size();
    dec.adapters_.push_back(LoraAdapter::create(store, n + ".attn.v", lora_group, blk.body.attn.v, spec.rank, spec.alpha, rng));
    dec.blocks_.push_back(blk);
  }
  dec.ln_final_ = LayerNorm::create(store, name + ".ln_final", llm_group, d);
  dec.head_ = Linear::create(store, name + ".head", llm_group, d, cfg.vocab, rng);
  return dec;
}

Var ToyDecoder::operator()(Graph& g, Var soft_prompts, const std::vector<int>& tokens, bool use_lora) const {
  const std::size_t k = soft_prompts.dim(0), n = tokens.size();
  if (n == 0) throw ContractViolation("decoder needs at least one text token");
  if (soft_prompts.dim(1) != embedding_->value.dim(1))
    throw DimensionError("soft prompts width " + std::to_string(soft_prompts.dim(1)) + " vs decoder width " +
                         std::to_string(embedding_->value.dim(1)));
  if (k + n > positions_->value.dim(0))
    throw ContractViolation("decoder sequence of " + std::to_string(k + n) + " exceeds " +
                            std::to_string(positions_->value.dim(0)) + " positions");
  for (int t : tokens)
    if (t < 0 || static_cast<std::size_t>(t) >= vocab())
      throw ContractViolation("token id " + std::to_string(t) + " outside vocabulary of " + std::to_string(vocab()));
  Var x = concat_rows({soft_prompts, gather_rows(g.param(*embedding_), tokens)});
  x = add(x, slice_rows(g.param(*positions_), 0, k + n));
  for (const auto& blk : blocks_) {
    AttentionLora lora;
    if (use_lora) lora = AttentionLora{&adapters_[blk.lora_query], &adapters_[blk.lora_value]};
    x = blk.body(g, x, true, lora);
  }
  return head_(g, ln_final_(g, slice_rows(x, k, k + n)));
}

std::size_t numerical_rank(const Tensor& m, double tol) {
  if (m.rank() != 2) throw DimensionError("numerical_rank expects a matrix");
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> mat(
      m.ptr(), static_cast<Eigen::Index>(m.dim(0)), static_cast<Eigen::Index>(m.dim(1)));
  const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(mat).singularValues();
  return static_cast<std::size_t>((sv.array() > tol).count());
}

}  // namespace damo
