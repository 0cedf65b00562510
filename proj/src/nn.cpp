#include "damo/nn.hpp"

#include <cmath>

namespace damo {

Linear Linear::create(ParameterStore& store, const std::string& name, const std::string& group, std::size_t in,
                      std::size_t out, Rng& rng, bool with_bias) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = &store.add(name + ".weight", group, rng.normal_tensor({out, in}, 1.0 / std::sqrt(static_cast<double>(in))));
  if (with_bias) l.bias = &store.add(name + ".bias", group, Tensor({out}));
  return l;
}

Var Linear::operator()(Graph& g, Var x) const {
  Var y = matmul_nt(x, g.param(*weight));
  return bias ? add_rowwise(y, g.param(*bias)) : y;
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, const std::string& group, std::size_t dim) {
  LayerNorm ln;
  ln.gamma = &store.add(name + ".gamma", group, Tensor({dim}, 1.0));
  ln.beta = &store.add(name + ".beta", group, Tensor({dim}));
  return ln;
}

Var LayerNorm::operator()(Graph& g, Var x) const { return layer_norm(x, g.param(*gamma), g.param(*beta)); }

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, const std::string& group,
                                std::size_t dim, std::size_t hidden, std::size_t out, Rng& rng) {
  return FeedForward{Linear::create(store, name + ".fc1", group, dim, hidden, rng),
                     Linear::create(store, name + ".fc2", group, hidden, out, rng)};
}

Var FeedForward::operator()(Graph& g, Var x) const { return fc2(g, gelu(fc1(g, x))); }

LoraAdapter LoraAdapter::create(ParameterStore& store, const std::string& name, const std::string& group,
                                const Linear& base, std::size_t rank, double alpha, Rng& rng) {
  if (rank == 0 || rank >= std::min(base.in, base.out))
    throw ContractViolation("LoRA rank " + std::to_string(rank) + " must be in [1, min(out, in)) = [1, " +
                            std::to_string(std::min(base.in, base.out)) + ")");
  LoraAdapter ad;
  ad.rank = rank;
  ad.scale = alpha / static_cast<double>(rank);
  ad.a = &store.add(name + ".lora_a", group, rng.normal_tensor({rank, base.in}, 1.0 / std::sqrt(static_cast<double>(base.in))));
  ad.b = &store.add(name + ".lora_b", group, Tensor({base.out, rank}));
  return ad;
}

Tensor LoraAdapter::delta() const {
  const Tensor& A = a->value;
  const Tensor& B = b->value;
  const std::size_t out = B.dim(0), in = A.dim(1);
  Tensor d({out, in});
  for (std::size_t i = 0; i < out; ++i)
    for (std::size_t r = 0; r < rank; ++r) {
      const double bv = B.at(i, r) * scale;
      for (std::size_t j = 0; j < in; ++j) d.at(i, j) += bv * A.at(r, j);
    }
  return d;
}

Var lora_forward(Graph& g, Var x, const Linear& base, const LoraAdapter& adapter) {
  Var low = matmul_nt(matmul_nt(x, g.param(*adapter.a)), g.param(*adapter.b));
  return add(base(g, x), scale(low, adapter.scale));
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name, const std::string& group,
                                              std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0)
    throw ContractViolation("attention dim " + std::to_string(dim) + " not divisible by " + std::to_string(heads) + " heads");
  MultiHeadAttention m;
  m.heads = heads;
  m.q = Linear::create(store, name + ".q", group, dim, dim, rng);
  m.k = Linear::create(store, name + ".k", group, dim, dim, rng);
  m.v = Linear::create(store, name + ".v", group, dim, dim, rng);
  m.o = Linear::create(store, name + ".o", group, dim, dim, rng);
  return m;
}

Var MultiHeadAttention::operator()(Graph& g, Var x_query, Var x_kv, bool causal, AttentionLora lora) const {
  Var qp = lora.query ? lora_forward(g, x_query, q, *lora.query) : q(g, x_query);
  Var kp = k(g, x_kv);
  Var vp = lora.value ? lora_forward(g, x_kv, v, *lora.value) : v(g, x_kv);
  if (heads == 1) return o(g, attention(qp, kp, vp, causal));
  const std::size_t hd = q.out / heads;
  std::vector<Var> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t b = h * hd, e = b + hd;
    outs.push_back(attention(slice_cols(qp, b, e), slice_cols(kp, b, e), slice_cols(vp, b, e), causal));
  }
  return o(g, concat_cols(outs));
}

SelfAttentionBlock SelfAttentionBlock::create(ParameterStore& store, const std::string& name, const std::string& group,
                                              std::size_t dim, std::size_t heads, std::size_t ffn_hidden, Rng& rng) {
  SelfAttentionBlock b;
  b.ln_attn = LayerNorm::create(store, name + ".ln_attn", group, dim);
  b.attn = MultiHeadAttention::create(store, name + ".attn", group, dim, heads, rng);
  b.ln_ffn = LayerNorm::create(store, name + ".ln_ffn", group, dim);
  b.ffn = FeedForward::create(store, name + ".ffn", group, dim, ffn_hidden, dim, rng);
  return b;
}

Var SelfAttentionBlock::operator()(Graph& g, Var x, bool causal, AttentionLora lora) const {
  Var h = ln_attn(g, x);
  x = add(x, attn(g, h, h, causal, lora));
  return add(x, ffn(g, ln_ffn(g, x)));
}

CrossAttentionBlock CrossAttentionBlock::create(ParameterStore& store, const std::string& name,
                                                const std::string& group, std::size_t dim, std::size_t heads,
                                                std::size_t ffn_hidden, Rng& rng) {
  CrossAttentionBlock b;
  b.ln_query = LayerNorm::create(store, name + ".ln_query", group, dim);
  b.ln_context = LayerNorm::create(store, name + ".ln_context", group, dim);
  b.attn = MultiHeadAttention::create(store, name + ".attn", group, dim, heads, rng);
  b.ln_ffn = LayerNorm::create(store, name + ".ln_ffn", group, dim);
  b.ffn = FeedForward::create(store, name + ".ffn", group, dim, ffn_hidden, dim, rng);
  return b;
}

Var CrossAttentionBlock::operator()(Graph& g, Var queries, Var context) const {
  Var x = add(queries, attn(g, ln_query(g, queries), ln_context(g, context)));
  return add(x, ffn(g, ln_ffn(g, x)));
}

void zero_linear(Linear& l) {
  l.weight->value.fill(0.0);
  if (l.bias) l.bias->value.fill(0.0);
}

}  // namespace damo
